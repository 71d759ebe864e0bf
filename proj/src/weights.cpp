#include "tamis/weights.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace tamis {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// beta * log_w with -inf entries left at -inf (0^beta = 0, also as beta -> 0).
Eigen::VectorXd temper(const Eigen::VectorXd& log_w, double beta) {
  return log_w.unaryExpr([beta](double v) { return v == kNegInf ? v : beta * v; });
}

// Scalar exp: the vectorized one clamps very negative arguments, which would
// turn exp(-inf) into a tiny positive number instead of an exact zero.
Eigen::ArrayXd exp_exact(const Eigen::ArrayXd& v) {
  return v.unaryExpr([](double x) { return std::exp(x); });
}

// (sum w)^2 / sum w^2 after dividing by the largest weight, so the largest
// term is exactly 1 and equal weights give exactly N.
double ess_from_log(const Eigen::VectorXd& lw) {
  const double top = lw.maxCoeff();
  const Eigen::ArrayXd w = exp_exact(lw.array() - top);
  const double sum = w.sum();
  const double e = sum * sum / w.square().sum();
  return std::clamp(e, 1.0, double(lw.size()));
}

}  // namespace

LogWeightBatch::LogWeightBatch(Eigen::VectorXd log_w) : log_w_(std::move(log_w)) {
  if (log_w_.size() < 1) throw ContractViolation("LogWeightBatch: empty batch");
  bool any_finite = false;
  for (Index i = 0; i < log_w_.size(); ++i) {
    const double v = log_w_(i);
    if (std::isnan(v)) throw ContractViolation("LogWeightBatch: NaN log weight");
    if (v == std::numeric_limits<double>::infinity())
      throw ContractViolation("LogWeightBatch: +inf log weight");
    any_finite = any_finite || std::isfinite(v);
  }
  if (!any_finite) throw ContractViolation("LogWeightBatch: no finite weight");
  log_sum_ = log_sum_exp(log_w_);
  log_sum_sq_ = log_sum_exp(2.0 * log_w_);
}

Eigen::VectorXd LogWeightBatch::normalized() const {
  return exp_exact(log_w_.array() - log_sum_).matrix();
}

LogWeightBatch log_weights(const Eigen::Ref<const Eigen::VectorXd>& log_pi,
                           const Eigen::Ref<const Eigen::VectorXd>& log_q) {
  if (log_pi.size() != log_q.size()) throw ContractViolation("log_weights: length mismatch");
  if (log_pi.hasNaN() || log_q.hasNaN()) throw ContractViolation("log_weights: NaN input");
  if (!log_q.allFinite()) throw ContractViolation("log_weights: proposal density not finite");
  return LogWeightBatch(log_pi - log_q);
}

double ess(const LogWeightBatch& batch) { return ess_from_log(batch.values()); }

double ess_at_beta(const LogWeightBatch& batch, double beta) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractViolation("ess_at_beta: beta outside [0, 1]");
  if (beta == 1.0) return ess(batch);
  return ess_from_log(temper(batch.values(), beta));
}

double calibrate_beta(const LogWeightBatch& batch, double ess_min, double tol, int max_iter) {
  if (!(ess_min >= 1.0)) throw ContractViolation("calibrate_beta: ESS_min must be >= 1");
  if (ess_min > double(batch.size()))
    throw ContractViolation("calibrate_beta: ESS_min exceeds the sample size");
  if (!(tol > 0.0)) throw ContractViolation("calibrate_beta: tol must be > 0");

  // Shift once so every tempered value is <= 0; ESS is invariant to it.
  const double top = batch.values().maxCoeff();
  const Eigen::VectorXd shifted = batch.values().array() - top;
  const auto ess_of = [&](double beta) { return ess_from_log(temper(shifted, beta)); };

  if (ess_of(1.0) >= ess_min) return 1.0;
  double lo = 0.0;
  double hi = 1.0;
  for (int it = 0; it < max_iter && hi - lo > tol; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (ess_of(mid) >= ess_min)
      lo = mid;
    else
      hi = mid;
  }
  return lo > 0.0 ? lo : hi;
}

double anti_truncation_threshold(const Eigen::Ref<const Eigen::VectorXd>& tempered_log_w,
                                 double tau) {
  if (!(tau >= 0.0 && tau < 1.0)) throw ContractViolation("anti-truncation: tau outside [0, 1)");
  const Index n = tempered_log_w.size();
  if (n < 1) throw ContractViolation("anti-truncation: empty batch");
  if (tau == 0.0) return kNegInf;
  // ceil(tau N) with a guard against tau N landing a rounding error above an integer.
  const double scaled = tau * double(n);
  Index rank = static_cast<Index>(std::ceil(scaled - 1e-9 * std::max(1.0, scaled)));
  rank = std::clamp<Index>(rank, 1, n);
  std::vector<double> v(tempered_log_w.data(), tempered_log_w.data() + n);
  std::nth_element(v.begin(), v.begin() + (rank - 1), v.end());
  return v[static_cast<std::size_t>(rank - 1)];
}

TemperingResult anti_truncate(const LogWeightBatch& batch, double beta, double tau) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ContractViolation("anti_truncate: beta outside (0, 1]");
  TemperingResult out;
  out.beta = beta;
  const Eigen::VectorXd tempered = temper(batch.values(), beta);
  out.s_log = anti_truncation_threshold(tempered, tau);
  const double s_log = out.s_log;
  out.log_w_hat = tempered.unaryExpr([s_log](double v) { return std::max(s_log, v); });
  return out;
}

Eigen::VectorXd deterministic_mixture_log_density(const Eigen::MatrixXd& points,
                                                  std::span<const MixtureParams> proposals,
                                                  std::span<const Index> counts) {
  if (proposals.empty() || proposals.size() != counts.size())
    throw ContractViolation("deterministic mixture: proposals and counts disagree");
  double total = 0.0;
  for (Index c : counts) {
    if (c < 1) throw ContractViolation("deterministic mixture: stage size must be >= 1");
    total += double(c);
  }
  // Streaming log-sum-exp over stages keeps memory at O(points).
  const Index n = points.rows();
  Eigen::ArrayXd run_max = Eigen::ArrayXd::Constant(n, kNegInf);
  Eigen::ArrayXd run_sum = Eigen::ArrayXd::Zero(n);
  for (std::size_t u = 0; u < proposals.size(); ++u) {
    const Eigen::ArrayXd v =
        proposals[u].log_density_rows(points).array() + std::log(double(counts[u]) / total);
    for (Index i = 0; i < n; ++i) {
      const double x = v(i);
      if (x == kNegInf) continue;
      if (x > run_max(i)) {
        run_sum(i) = run_sum(i) * std::exp(run_max(i) - x) + 1.0;
        run_max(i) = x;
      } else {
        run_sum(i) += std::exp(x - run_max(i));
      }
    }
  }
  Eigen::VectorXd out(n);
  for (Index i = 0; i < n; ++i)
    out(i) = run_max(i) == kNegInf ? kNegInf : run_max(i) + std::log(run_sum(i));
  return out;
}

LogWeightBatch recycle_weights(std::span<const StageView> stages) {
  if (stages.empty()) throw ContractViolation("recycle_weights: no stages");
  std::vector<MixtureParams> proposals;
  std::vector<Index> counts;
  Index total = 0;
  for (const auto& st : stages) {
    if (st.log_pi.size() != st.points.rows())
      throw ContractViolation("recycle_weights: missing cached target values");
    proposals.push_back(st.proposal);
    counts.push_back(st.points.rows());
    total += st.points.rows();
  }
  Eigen::VectorXd log_w(total);
  Index offset = 0;
  for (const auto& st : stages) {
    const Index n = st.points.rows();
    const Eigen::VectorXd log_q = deterministic_mixture_log_density(st.points, proposals, counts);
    if (st.log_pi.hasNaN()) throw ContractViolation("recycle_weights: NaN cached target value");
    log_w.segment(offset, n) = st.log_pi - log_q;
    offset += n;
  }
  return LogWeightBatch(std::move(log_w));
}

}  // namespace tamis
