#pragma once

// Importance-weight arithmetic. Everything is kept in log space: with d in the
// hundreds, w^beta over- or underflows any linear-scale representation.
//
// Entries equal to -inf are zero weights. They stay zero under tempering for
// every beta (including the beta -> 0 limit), count in quantiles, and are
// lifted to the threshold by anti-truncation.

#include "tamis/model.hpp"

#include <span>

namespace tamis {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  return detail::log_sum_exp(v);
}

/// Per-particle log importance weights with cached log sum w and log sum w^2.
class LogWeightBatch {
 public:
  /// Throws ContractViolation on NaN, +inf, or when no entry is finite.
  explicit LogWeightBatch(Eigen::VectorXd log_w);

  const Eigen::VectorXd& values() const { return log_w_; }
  Index size() const { return log_w_.size(); }
  double log_sum() const { return log_sum_; }
  double log_sum_sq() const { return log_sum_sq_; }

  /// omega_i = exp(log_w_i - log sum w); sums to one.
  Eigen::VectorXd normalized() const;

 private:
  Eigen::VectorXd log_w_;
  double log_sum_;
  double log_sum_sq_;
};

/// log_w_i = log_pi_i - log_q_i.
LogWeightBatch log_weights(const Eigen::Ref<const Eigen::VectorXd>& log_pi,
                           const Eigen::Ref<const Eigen::VectorXd>& log_q);

/// (sum w)^2 / sum w^2, in [1, N].
double ess(const LogWeightBatch& batch);

/// ESS of the weights w^beta.
double ess_at_beta(const LogWeightBatch& batch, double beta);

/// Largest beta in (0, 1] keeping ESS(beta) >= ess_min.
///
/// Returns 1 when ESS(1) >= ess_min. Otherwise bisects the monotone map
/// beta -> ESS(beta) until the bracket is narrower than tol (or max_iter
/// halvings), and returns the lower end of the bracket, or the upper one if
/// the lower end is still 0.
double calibrate_beta(const LogWeightBatch& batch, double ess_min, double tol = 1e-6,
                      int max_iter = 100);

/// Lower empirical quantile: the ceil(tau N)-th smallest entry; -inf when tau = 0.
double anti_truncation_threshold(const Eigen::Ref<const Eigen::VectorXd>& tempered_log_w,
                                 double tau);

/// log of s v w^beta for a single weight.
inline double anti_truncated_log_weight(double log_w, double beta, double log_s) {
  const double tempered = log_w == -std::numeric_limits<double>::infinity() ? log_w : beta * log_w;
  return std::max(log_s, tempered);
}

struct TemperingResult {
  double beta = 1.0;
  double s_log = -std::numeric_limits<double>::infinity();
  Eigen::VectorXd log_w_hat;
};

/// Tempers by beta, then lifts every tempered weight below the tau-quantile to it.
TemperingResult anti_truncate(const LogWeightBatch& batch, double beta, double tau);

/// One past stage as seen by the recycler: draws, their proposal, and the
/// cached target log-densities of those draws.
struct StageView {
  const Eigen::MatrixXd& points;
  const MixtureParams& proposal;
  const Eigen::VectorXd& log_pi;
};

/// log Q(x) for Q = sum_t N_t q_t / sum_t N_t, evaluated at every row of points.
Eigen::VectorXd deterministic_mixture_log_density(const Eigen::MatrixXd& points,
                                                  std::span<const MixtureParams> proposals,
                                                  std::span<const Index> counts);

/// Reweights every past draw by pi / Q. Target values come from the caches
/// only; output is stage-major, length sum N_t.
LogWeightBatch recycle_weights(std::span<const StageView> stages);

}  // namespace tamis
