#include "tamis/experiment.hpp"

#include "tamis/svg.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace tamis {

namespace fs = std::filesystem;
using nlohmann::json;

const char* const kAggregateHeader =
    "replicate,seed,status,iterations,stop_reason,final_ess,mse_mean,mse_var_trace,"
    "convergence_iteration,n_target_evals,last_beta,error";

Eigen::VectorXd expand_pattern(const std::vector<double>& pattern, Index dim) {
  if (pattern.empty()) throw ConfigError("empty per-coordinate pattern");
  Eigen::VectorXd out(dim);
  for (Index j = 0; j < dim; ++j)
    out(j) = pattern[std::min<std::size_t>(static_cast<std::size_t>(j), pattern.size() - 1)];
  return out;
}

MixtureParams make_initial_proposal(const InitSpec& init, Index dim, Rng& rng) {
  const Index k = init.components;
  Eigen::MatrixXd means(k, dim);
  switch (init.mean_draw) {
    case InitSpec::MeanDraw::uniform: {
      std::uniform_real_distribution<double> unif(init.lo, init.hi);
      for (Index c = 0; c < k; ++c)
        for (Index j = 0; j < dim; ++j) means(c, j) = unif(rng);
      break;
    }
    case InitSpec::MeanDraw::normal: {
      const Eigen::VectorXd sd = expand_pattern(init.mean_variances, dim).cwiseSqrt();
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (Index c = 0; c < k; ++c)
        for (Index j = 0; j < dim; ++j) means(c, j) = sd(j) * gauss(rng);
      break;
    }
    case InitSpec::MeanDraw::fixed: {
      const Eigen::VectorXd mu = expand_pattern(init.fixed_mean, dim);
      means = mu.transpose().replicate(k, 1);
      break;
    }
  }
  const Eigen::VectorXd var = expand_pattern(init.variances, dim);
  return MixtureParams(Eigen::VectorXd::Constant(k, 1.0 / double(k)), std::move(means),
                       var.transpose().replicate(k, 1));
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items())
    if (!ok.contains(key)) throw ConfigError("unknown key '" + key + "' in " + where);
}

std::vector<double> number_or_list(const json& j, const std::string& what) {
  if (j.is_number()) return {j.get<double>()};
  if (j.is_array() && !j.empty()) return j.get<std::vector<double>>();
  throw ConfigError(what + " must be a number or a non-empty list of numbers");
}

TargetSpec parse_target(const json& j) {
  reject_unknown(j, {"kind", "dim", "mean", "variance", "sigma2", "b", "command", "timeout_seconds"},
                 "target");
  TargetSpec t;
  const auto kind = j.at("kind").get<std::string>();
  if (kind == "gaussian_iid") {
    t.kind = TargetSpec::Kind::gaussian_iid;
  } else if (kind == "rosenbrock") {
    t.kind = TargetSpec::Kind::rosenbrock;
  } else if (kind == "blackbox") {
    t.kind = TargetSpec::Kind::blackbox;
  } else {
    throw ConfigError("target.kind must be gaussian_iid, rosenbrock or blackbox");
  }
  t.dim = j.at("dim").get<Index>();
  t.mean = j.value("mean", t.mean);
  t.variance = j.value("variance", t.variance);
  t.sigma2 = j.value("sigma2", t.sigma2);
  t.b = j.value("b", t.b);
  if (j.contains("command")) t.command = j.at("command").get<std::vector<std::string>>();
  t.timeout_seconds = j.value("timeout_seconds", t.timeout_seconds);
  return t;
}

InitSpec parse_init(const json& j) {
  reject_unknown(j, {"components", "means", "variances"}, "init");
  InitSpec init;
  init.components = j.value("components", init.components);
  if (j.contains("variances")) init.variances = number_or_list(j.at("variances"), "init.variances");
  if (j.contains("means")) {
    const json& m = j.at("means");
    reject_unknown(m, {"kind", "lo", "hi", "variances", "value"}, "init.means");
    const auto kind = m.at("kind").get<std::string>();
    if (kind == "uniform") {
      init.mean_draw = InitSpec::MeanDraw::uniform;
      init.lo = m.value("lo", init.lo);
      init.hi = m.value("hi", init.hi);
    } else if (kind == "normal") {
      init.mean_draw = InitSpec::MeanDraw::normal;
      init.mean_variances = number_or_list(m.at("variances"), "init.means.variances");
    } else if (kind == "fixed") {
      init.mean_draw = InitSpec::MeanDraw::fixed;
      init.fixed_mean = number_or_list(m.at("value"), "init.means.value");
    } else {
      throw ConfigError("init.means.kind must be uniform, normal or fixed");
    }
  }
  return init;
}

}  // namespace

void validate(const ExperimentConfig& cfg) {
  try {
    validate(cfg.target);
  } catch (const ContractViolation& e) {
    throw ConfigError(e.what());
  }
  if (cfg.replicates < 1) throw ConfigError("replicates must be >= 1");
  if (cfg.workers < 1) throw ConfigError("workers must be >= 1");
  if (cfg.init.components < 1) throw ConfigError("init.components must be >= 1");
  if (cfg.init.mean_draw == InitSpec::MeanDraw::uniform && !(cfg.init.hi > cfg.init.lo))
    throw ConfigError("init.means: hi must exceed lo");
  for (double v : expand_pattern(cfg.init.variances, cfg.target.dim))
    if (!(v > 0.0)) throw ConfigError("init.variances must be > 0");
  if (cfg.init.mean_draw == InitSpec::MeanDraw::normal)
    for (double v : cfg.init.mean_variances)
      if (!(v > 0.0)) throw ConfigError("init.means.variances must be > 0");
  if (cfg.output_dir.empty()) throw ConfigError("output_dir must not be empty");
  cfg.run.validate(cfg.init.components, cfg.target.dim);
  if (cfg.algorithm == Algorithm::npmc && !(cfg.ladder >= 0.0))
    throw ConfigError("algorithm.ladder must be >= 0");
}

ExperimentConfig parse_experiment_config(const std::string& json_text) {
  ExperimentConfig cfg;
  try {
    const json j = json::parse(json_text);
    reject_unknown(j,
                   {"id", "target", "init", "algorithm", "draws", "ess_min", "tau", "stop", "em",
                    "resample", "bisection_tol", "replicates", "seed", "output_dir", "workers",
                    "dump_particles"},
                   "config");
    cfg.id = j.value("id", cfg.id);
    cfg.target = parse_target(j.at("target"));
    if (j.contains("init")) cfg.init = parse_init(j.at("init"));
    if (j.contains("algorithm")) {
      const json& a = j.at("algorithm");
      reject_unknown(a, {"name", "ladder"}, "algorithm");
      const auto name = a.at("name").get<std::string>();
      if (name == "tamis") {
        cfg.algorithm = Algorithm::tamis;
      } else if (name == "npmc") {
        cfg.algorithm = Algorithm::npmc;
      } else if (name == "amis") {
        cfg.algorithm = Algorithm::amis;
      } else {
        throw ConfigError("algorithm.name must be tamis, npmc or amis");
      }
      cfg.ladder = a.value("ladder", cfg.ladder);
    }
    if (j.contains("draws")) {
      cfg.run.draws.clear();
      for (double v : number_or_list(j.at("draws"), "draws")) {
        if (v != std::floor(v)) throw ConfigError("draws must be integers");
        cfg.run.draws.push_back(static_cast<Index>(v));
      }
    }
    cfg.run.ess_min = j.value("ess_min", cfg.run.ess_min);
    cfg.run.tau = j.value("tau", cfg.run.tau);
    if (j.contains("stop")) {
      const json& s = j.at("stop");
      reject_unknown(s, {"ess_total", "max_iterations"}, "stop");
      cfg.run.ess_predefined = s.contains("ess_total") && s.at("ess_total").is_null()
                                   ? std::numeric_limits<double>::infinity()
                                   : s.value("ess_total", cfg.run.ess_predefined);
      cfg.run.max_iterations = s.value("max_iterations", cfg.run.max_iterations);
    }
    if (j.contains("em")) {
      const json& e = j.at("em");
      reject_unknown(e, {"max_steps", "rel_tol"}, "em");
      cfg.run.em.max_steps = e.value("max_steps", cfg.run.em.max_steps);
      cfg.run.em.rel_tol = e.value("rel_tol", cfg.run.em.rel_tol);
    }
    if (j.contains("resample")) {
      const auto r = j.at("resample").get<std::string>();
      if (r == "systematic") {
        cfg.run.resample_scheme = ResampleScheme::systematic;
      } else if (r == "multinomial") {
        cfg.run.resample_scheme = ResampleScheme::multinomial;
      } else {
        throw ConfigError("resample must be systematic or multinomial");
      }
    }
    cfg.run.bisection_tol = j.value("bisection_tol", cfg.run.bisection_tol);
    cfg.replicates = j.value("replicates", cfg.replicates);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.workers = j.value("workers", cfg.workers);
    cfg.dump_particles = j.value("dump_particles", cfg.dump_particles);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(cfg);
  return cfg;
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_experiment_config(ss.str());
}

// ---------------------------------------------------------------------------
// Runs

int convergence_iteration(const RunResult& result) {
  for (const auto& r : result.records)
    if (r.kl_hat_t < 1.0) return r.t;
  return -1;
}

ReplicateSummary summarize(const RunResult& result, const TargetSpec& target) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  ReplicateSummary s;
  s.ok = result.final_log_w.has_value();
  s.iterations = static_cast<int>(result.records.size());
  s.stop_reason = s.ok ? to_string(result.stop_reason) : "aborted";
  s.final_ess = s.ok ? result.final_ess : nan;
  s.convergence_iteration = convergence_iteration(result);
  s.n_target_evals = result.target_evaluations;
  s.last_beta = nan;
  for (const auto& r : result.records)
    if (r.beta_t) s.last_beta = *r.beta_t;
  s.mse_mean = s.mse_var_trace = nan;
  if (s.ok && target.kind == TargetSpec::Kind::gaussian_iid) {
    const WeightedMoments m = recycled_moments(result);
    s.mse_mean = (m.mean.array() - target.mean).square().mean();
    const double trace_err = m.variance.sum() - double(target.dim) * target.variance;
    s.mse_var_trace = trace_err * trace_err;
  }
  return s;
}

RunResult run_replicate(const ExperimentConfig& cfg, int replicate) {
  Rng rng(cfg.seed + static_cast<std::uint64_t>(replicate));
  const MixtureParams theta_1 = make_initial_proposal(cfg.init, cfg.target.dim, rng);
  auto target = make_target(cfg.target);
  return run_algorithm(cfg.algorithm, *target, theta_1, cfg.run, rng, cfg.ladder);
}

bool ExperimentReport::all_ok() const {
  return std::all_of(replicates.begin(), replicates.end(), [](const auto& r) { return r.ok; });
}

namespace {

std::string csv_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_text(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += (c == '\n' ? ' ' : c);
  }
  return out + "\"";
}

struct Traces {
  std::vector<double> t, beta, kl;
};

Traces traces_of(const RunResult& r) {
  Traces tr;
  for (const auto& rec : r.records) {
    tr.t.push_back(rec.t);
    tr.beta.push_back(rec.beta_t.value_or(std::numeric_limits<double>::quiet_NaN()));
    tr.kl.push_back(rec.kl_hat_t);
  }
  return tr;
}

void write_file(const fs::path& p, const std::string& content) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << content;
}

void write_run_files(const ExperimentConfig& cfg, const fs::path& dir, int r, const RunResult& res) {
  const std::string suffix = "_r" + std::to_string(r);
  {
    std::ofstream out(dir / ("trace" + suffix + ".csv"), std::ios::binary | std::ios::trunc);
    write_trace_csv(out, res);
  }
  {
    std::ofstream out(dir / ("proposals" + suffix + ".jsonl"), std::ios::binary | std::ios::trunc);
    for (const auto& rec : res.records) out << to_record(rec.theta) << '\n';
  }
  if (cfg.dump_particles) {
    std::ofstream out(dir / ("particles" + suffix + ".csv"), std::ios::binary | std::ios::trunc);
    write_particles_csv(out, res);
  }
}

}  // namespace

void write_aggregate_csv(std::ostream& os, const std::vector<ReplicateSummary>& rows) {
  os << kAggregateHeader << '\n';
  for (const auto& s : rows) {
    os << s.replicate << ',' << s.seed << ',' << (s.ok ? "ok" : "failed") << ',' << s.iterations
       << ',' << s.stop_reason << ',' << csv_double(s.final_ess) << ',' << csv_double(s.mse_mean)
       << ',' << csv_double(s.mse_var_trace) << ',' << s.convergence_iteration << ','
       << s.n_target_evals << ',' << csv_double(s.last_beta) << ',' << csv_text(s.error) << '\n';
  }
}

ExperimentReport run_experiment(const ExperimentConfig& cfg, std::ostream* log) {
  validate(cfg);
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);

  ExperimentReport report;
  report.replicates.resize(static_cast<std::size_t>(cfg.replicates));
  std::vector<Traces> traces(static_cast<std::size_t>(cfg.replicates));
  std::atomic<int> next{0};
  std::mutex log_mutex;

  const auto worker = [&] {
    for (int r = next++; r < cfg.replicates; r = next++) {
      ReplicateSummary& s = report.replicates[static_cast<std::size_t>(r)];
      const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(r);
      try {
        const RunResult res = run_replicate(cfg, r);
        s = summarize(res, cfg.target);
        write_run_files(cfg, dir, r, res);
        traces[static_cast<std::size_t>(r)] = traces_of(res);
      } catch (const RunAborted& e) {
        s = summarize(e.partial(), cfg.target);
        s.ok = false;
        s.error = e.what();
        write_run_files(cfg, dir, r, e.partial());
        traces[static_cast<std::size_t>(r)] = traces_of(e.partial());
      } catch (const std::exception& e) {
        s = ReplicateSummary{};
        s.stop_reason = "aborted";
        s.final_ess = s.mse_mean = s.mse_var_trace = s.last_beta =
            std::numeric_limits<double>::quiet_NaN();
        s.error = e.what();
      }
      s.replicate = r;
      s.seed = seed;
      if (log) {
        std::lock_guard lock(log_mutex);
        *log << "[" << cfg.id << "] replicate " << r << " seed " << seed << ": "
             << (s.ok ? "ok" : "FAILED") << ", " << s.iterations << " stages, final ESS "
             << std::setprecision(6) << s.final_ess << (s.error.empty() ? "" : ", " + s.error)
             << '\n';
      }
    }
  };

  const int n_workers = std::min(cfg.workers, cfg.replicates);
  if (n_workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  {
    std::ofstream out(dir / "aggregate.csv", std::ios::binary | std::ios::trunc);
    write_aggregate_csv(out, report.replicates);
  }
  std::vector<svg::Series> beta_series, kl_series;
  for (int r = 0; r < cfg.replicates; ++r) {
    const auto& tr = traces[static_cast<std::size_t>(r)];
    const std::string label = "replicate " + std::to_string(r);
    beta_series.push_back({label, tr.t, tr.beta});
    kl_series.push_back({label, tr.t, tr.kl});
  }
  write_file(dir / "beta.svg", svg::line_chart(cfg.id + ": inverse temperature", "iteration t",
                                               "beta_t", beta_series));
  write_file(dir / "kl_hat.svg", svg::line_chart(cfg.id + ": estimated KL(pi || q_t)",
                                                 "iteration t", "kl_hat_t", kl_series));
  return report;
}

fs::path plot_trace(const fs::path& trace_csv, const fs::path& out_dir) {
  std::ifstream in(trace_csv);
  if (!in) throw std::runtime_error("cannot read " + trace_csv.string());
  std::string line;
  std::getline(in, line);
  if (line.rfind("t,ess_t,beta_t,s_log_t,kl_hat_t,n_target_evals", 0) != 0)
    throw std::runtime_error(trace_csv.string() + " is not a trace CSV");
  svg::Series beta{"beta_t", {}, {}}, kl{"kl_hat_t", {}, {}};
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> cols;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cols.push_back(std::strtod(cell.c_str(), nullptr));
    if (cols.size() < 6) throw std::runtime_error("malformed trace row: " + line);
    beta.x.push_back(cols[0]);
    beta.y.push_back(cols[2]);
    kl.x.push_back(cols[0]);
    kl.y.push_back(cols[4]);
  }
  fs::create_directories(out_dir);
  const std::string stem = trace_csv.stem().string();
  write_file(out_dir / (stem + "_beta.svg"),
             svg::line_chart(stem + ": inverse temperature", "iteration t", "beta_t", {beta}));
  const fs::path kl_path = out_dir / (stem + "_kl_hat.svg");
  write_file(kl_path, svg::line_chart(stem + ": estimated KL", "iteration t", "kl_hat_t", {kl}));
  return out_dir / (stem + "_beta.svg");
}

bool print_verify_table(std::ostream& os, const std::vector<oracle::CheckRow>& rows) {
  bool all = true;
  std::size_t width = 0;
  for (const auto& r : rows) width = std::max(width, r.name.size());
  for (const auto& r : rows) {
    all = all && r.passed;
    char margin[32];
    std::snprintf(margin, sizeof margin, "%+.3e", r.margin);
    os << (r.passed ? "PASS  " : "FAIL  ") << std::left << std::setw(static_cast<int>(width) + 2)
       << r.name << "margin " << margin << "  " << r.detail << '\n';
  }
  os << (all ? "all checks passed" : "some checks FAILED") << '\n';
  return all;
}

}  // namespace tamis
