#pragma once

#include "tamis/engine.hpp"
#include "tamis/oracle.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace tamis {

/// How the first proposal is drawn. Patterned vectors (variances,
/// mean_variances, fixed_mean) give per-coordinate values; when shorter than
/// d their last entry repeats, so [200, 50, 4] means diag(200, 50, 4, ..., 4).
struct InitSpec {
  enum class MeanDraw { uniform, normal, fixed };
  Index components = 5;
  MeanDraw mean_draw = MeanDraw::uniform;
  double lo = -4.0;                        // uniform
  double hi = 4.0;                         // uniform
  std::vector<double> mean_variances{1.0};  // normal: N(0, diag(pattern))
  std::vector<double> fixed_mean{0.0};      // fixed: every component at this mean
  std::vector<double> variances{200.0};     // diagonal of every Sigma_k
};

/// Expands a pattern to length d (last entry repeats).
Eigen::VectorXd expand_pattern(const std::vector<double>& pattern, Index dim);

/// Equal weights, one mean draw per component, shared diagonal covariance.
MixtureParams make_initial_proposal(const InitSpec& init, Index dim, Rng& rng);

struct ExperimentConfig {
  std::string id = "experiment";
  TargetSpec target;
  InitSpec init;
  Algorithm algorithm = Algorithm::tamis;
  double ladder = 5.0;  // N-PMC only
  TamisConfig run;
  int replicates = 1;
  std::uint64_t seed = 1;
  std::string output_dir = "out";
  int workers = 1;
  bool dump_particles = false;
};

/// Parses and validates a JSON config. Unknown keys and contract violations
/// raise ConfigError.
ExperimentConfig parse_experiment_config(const std::string& json_text);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void validate(const ExperimentConfig& cfg);

/// Per-replicate summary; one row of aggregate.csv.
struct ReplicateSummary {
  int replicate = 0;
  std::uint64_t seed = 0;
  bool ok = false;
  int iterations = 0;
  std::string stop_reason;
  double final_ess = 0.0;
  double mse_mean = 0.0;        // mean over coordinates of squared mean error; NaN if unknown
  double mse_var_trace = 0.0;   // squared error of the covariance-trace estimate; NaN if unknown
  int convergence_iteration = -1;  // first t with kl_hat_t < 1; -1 if never
  std::uint64_t n_target_evals = 0;
  double last_beta = 0.0;
  std::string error;
};

/// First stage t with kl_hat_t < 1, or -1.
int convergence_iteration(const RunResult& result);

/// Fills the metric fields of a summary from a finished run.
ReplicateSummary summarize(const RunResult& result, const TargetSpec& target);

/// Runs one replicate: seeds rng with cfg.seed + replicate, draws the first
/// proposal, and runs the configured algorithm.
RunResult run_replicate(const ExperimentConfig& cfg, int replicate);

struct ExperimentReport {
  std::vector<ReplicateSummary> replicates;
  bool all_ok() const;
};

/// Runs every replicate, writing under cfg.output_dir:
///   trace_r<r>.csv, proposals_r<r>.jsonl, [particles_r<r>.csv],
///   aggregate.csv, beta.svg, kl_hat.svg
ExperimentReport run_experiment(const ExperimentConfig& cfg, std::ostream* log = nullptr);

/// aggregate.csv header.
extern const char* const kAggregateHeader;
void write_aggregate_csv(std::ostream& os, const std::vector<ReplicateSummary>& rows);

/// Reads a trace CSV and writes beta_t / kl_hat_t charts; returns the written path.
std::filesystem::path plot_trace(const std::filesystem::path& trace_csv,
                                 const std::filesystem::path& out_dir);

/// Prints the verification table; returns true when every row passed.
bool print_verify_table(std::ostream& os, const std::vector<oracle::CheckRow>& rows);

}  // namespace tamis
