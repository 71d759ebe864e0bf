// Command-line front end: run experiment configs, verify the quadrature
// checks, and plot trace files.
//
// Exit codes: 0 success, 1 run failure, 2 invalid config or usage.

#include "tamis/experiment.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Tempered anti-truncated adaptive multiple importance sampling"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  int workers = 0;
  std::uint64_t seed = 0;
  bool dump_particles = false;
  auto* run = app.add_subcommand("run", "Run an experiment config (JSON)");
  run->add_option("config", config_path, "Experiment config file")->required();
  run->add_option("--out", out_dir, "Output directory (overrides the config)");
  run->add_option("--workers", workers, "Replicates run in parallel")->check(CLI::PositiveNumber);
  auto* seed_opt = run->add_option("--seed", seed, "Base seed (overrides the config)");
  run->add_flag("--dump-particles", dump_particles, "Write every particle with its recycled weight");

  int grid_nodes = 1 << 16;
  auto* verify = app.add_subcommand("verify", "Run the quadrature and ESS checks");
  verify->add_option("--grid-nodes", grid_nodes, "Quadrature nodes per grid")
      ->check(CLI::Range(100, 1 << 24));

  std::string trace_path;
  auto* plot = app.add_subcommand("plot", "Plot beta_t and kl_hat_t from a trace CSV");
  plot->add_option("trace", trace_path, "Trace CSV")->required();
  plot->add_option("--out", out_dir, "Output directory (default: next to the trace)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  if (*run) {
    tamis::ExperimentConfig cfg;
    try {
      cfg = tamis::load_experiment_config(config_path);
      if (!out_dir.empty()) cfg.output_dir = out_dir;
      if (workers > 0) cfg.workers = workers;
      if (seed_opt->count() > 0) cfg.seed = seed;
      if (dump_particles) cfg.dump_particles = true;
      tamis::validate(cfg);
      for (const auto& w : cfg.run.validate(cfg.init.components, cfg.target.dim))
        std::cerr << "warning: " << w << '\n';
    } catch (const tamis::ConfigError& e) {
      std::cerr << "invalid config: " << e.what() << '\n';
      return 2;
    }
    try {
      const auto report = tamis::run_experiment(cfg, &std::cerr);
      std::cout << "wrote " << cfg.output_dir << "/aggregate.csv\n";
      return report.all_ok() ? 0 : 1;
    } catch (const std::exception& e) {
      std::cerr << "run failed: " << e.what() << '\n';
      return 1;
    }
  }

  if (*verify) {
    tamis::oracle::VerifyOptions options;
    options.grid_nodes = grid_nodes;
    const auto rows = tamis::oracle::verify_all(options);
    return tamis::print_verify_table(std::cout, rows) ? 0 : 1;
  }

  if (*plot) {
    try {
      const std::filesystem::path trace(trace_path);
      const auto dir = out_dir.empty() ? trace.parent_path() : std::filesystem::path(out_dir);
      const auto written = tamis::plot_trace(trace, dir.empty() ? "." : dir);
      std::cout << "wrote " << written.string() << '\n';
      return 0;
    } catch (const std::exception& e) {
      std::cerr << "plot failed: " << e.what() << '\n';
      return 1;
    }
  }
  return 2;
}
