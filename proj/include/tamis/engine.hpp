#pragma once

#include "tamis/adapt.hpp"
#include "tamis/model.hpp"
#include "tamis/targets.hpp"
#include "tamis/weights.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tamis {

/// Bad run configuration (unreachable ESS target, tau outside [0, 1), ...).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TamisConfig {
  /// Stage sizes N_1, N_2, ...; the last entry repeats for later stages.
  std::vector<Index> draws{2000};
  double ess_min = 300.0;
  double tau = 0.4;
  /// Stop at the first t with ESS_1 + ... + ESS_t > ess_predefined.
  double ess_predefined = 10000.0;
  int max_iterations = 100;
  double bisection_tol = 1e-6;
  int bisection_max_iter = 100;
  EmSettings em{};
  ResampleScheme resample_scheme = ResampleScheme::systematic;

  Index draws_at(int t) const;

  /// Throws ConfigError on hard violations. Returns soft warnings, e.g. when
  /// 2 K d >= ESS_min or ESS_min > N_t.
  std::vector<std::string> validate(Index components, Index dim) const;
};

enum class Algorithm { tamis, npmc, amis };
std::string to_string(Algorithm a);

enum class StopReason { ess_reached, max_iterations };
std::string to_string(StopReason r);

/// One stage t. beta_t and s_log_t are empty on the stage that triggered the
/// stop: no proposal update happens there.
struct IterationRecord {
  int t = 0;
  MixtureParams theta;
  SampleBatch draws;
  Eigen::VectorXd log_pi;
  LogWeightBatch log_w;
  double ess_t = 0.0;
  std::optional<double> beta_t;
  std::optional<double> s_log_t;
  double kl_hat_t = 0.0;
  /// Cumulative target evaluations at the end of this stage.
  std::uint64_t n_target_evals = 0;
};

struct RunResult {
  Algorithm algorithm = Algorithm::tamis;
  std::vector<IterationRecord> records;
  /// Recycled weights over all sum N_t particles, stage-major.
  std::optional<LogWeightBatch> final_log_w;
  double final_ess = 0.0;
  StopReason stop_reason = StopReason::max_iterations;
  std::uint64_t target_evaluations = 0;

  /// The last proposal that was fitted (theta of the final stage).
  const MixtureParams& final_proposal() const { return records.back().theta; }
};

/// Target failure mid-run. partial() holds every stage completed before it;
/// its final_log_w is empty.
class RunAborted : public std::runtime_error {
 public:
  RunAborted(const std::string& what, RunResult partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const RunResult& partial() const { return partial_; }

 private:
  RunResult partial_;
};

/// sum_i w_i log w_i + log N with 0 log 0 = 0, clamped to [0, log N].
double kl_hat(const Eigen::Ref<const Eigen::VectorXd>& normalized_weights);

/// Logistic ladder 1 / (1 + exp(-(t - ladder))).
double npmc_beta_schedule(int t, double ladder);

RunResult run_tamis(Target& target, const MixtureParams& theta_1, const TamisConfig& cfg, Rng& rng);

/// Tempering along the fixed logistic ladder; tau forced to 0, no bisection.
RunResult run_npmc(Target& target, const MixtureParams& theta_1, const TamisConfig& cfg,
                   double ladder, Rng& rng);

/// beta = 1 and tau = 0; every stage reweights all past draws against the
/// deterministic mixture of all past proposals and fits the next proposal on
/// a resample of that pooled sample.
RunResult run_amis(Target& target, const MixtureParams& theta_1, const TamisConfig& cfg, Rng& rng);

RunResult run_algorithm(Algorithm algorithm, Target& target, const MixtureParams& theta_1,
                        const TamisConfig& cfg, Rng& rng, double ladder = 5.0);

/// Header: t,ess_t,beta_t,s_log_t,kl_hat_t,n_target_evals
void write_trace_csv(std::ostream& os, const RunResult& result);

/// stage,log_pi,log_w,x1..xd with recycled log weights (when present).
void write_particles_csv(std::ostream& os, const RunResult& result);

/// Self-normalized mean and per-coordinate variance under the recycled weights.
struct WeightedMoments {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd variance;
};
WeightedMoments recycled_moments(const RunResult& result);

}  // namespace tamis
