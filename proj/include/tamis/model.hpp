#pragma once

// Diagonal-covariance Gaussian mixtures: parameter container, log-density and
// sampling. Draws are stored one particle per row (N x d, column-major), so
// per-coordinate loops run over contiguous memory.

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace tamis {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVectorX = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;
using Rng = std::mt19937_64;

/// Raised when a caller breaks an operation's preconditions.
class ContractViolation : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

template <typename Derived>
typename Derived::Scalar log_sum_exp(const Eigen::DenseBase<Derived>& v) {
  using Scalar = typename Derived::Scalar;
  if (v.size() == 0) return -std::numeric_limits<Scalar>::infinity();
  const Scalar m = v.maxCoeff();
  if (!std::isfinite(m)) return m;
  return m + std::log((v.derived().array() - m).exp().sum());
}

}  // namespace detail

/// K-component Gaussian mixture with diagonal covariances.
///
/// Row k of means() and variances() holds mu_k and the diagonal of Sigma_k.
/// Weights are floored at kWeightFloor and renormalized; variances are floored
/// at variance_floor(), which defaults to 1e-10 times the mean initial
/// variance and is carried over by refits.
template <typename Scalar>
class GaussianMixture {
 public:
  static constexpr Scalar kWeightFloor = Scalar(1e-8);
  static constexpr Scalar kRelativeVarianceFloor = Scalar(1e-10);

  GaussianMixture(VectorX<Scalar> weights, MatrixX<Scalar> means, MatrixX<Scalar> variances,
                  Scalar variance_floor = Scalar(-1))
      : weights_(std::move(weights)), means_(std::move(means)), variances_(std::move(variances)) {
    if (weights_.size() < 1) throw ContractViolation("mixture needs at least one component");
    if (means_.rows() != weights_.size() || variances_.rows() != weights_.size())
      throw ContractViolation("mixture: weights, means and variances disagree on K");
    if (means_.cols() < 1 || variances_.cols() != means_.cols())
      throw ContractViolation("mixture: means and variances disagree on dimension");
    if (!means_.allFinite() || !variances_.allFinite() || !weights_.allFinite())
      throw ContractViolation("mixture: non-finite parameter");
    if ((weights_.array() < 0).any()) throw ContractViolation("mixture: negative weight");
    if ((variances_.array() <= 0).any()) throw ContractViolation("mixture: non-positive variance");

    variance_floor_ = variance_floor > 0 ? variance_floor
                                         : kRelativeVarianceFloor * variances_.mean();
    variances_ = variances_.cwiseMax(variance_floor_);

    const Scalar total = weights_.sum();
    if (!(total > 0)) throw ContractViolation("mixture: weights sum to zero");
    weights_ = (weights_ / total).cwiseMax(kWeightFloor);
    weights_ /= weights_.sum();

    precompute();
  }

  /// Single Gaussian N(mean, diag(variances)).
  static GaussianMixture single(const VectorX<Scalar>& mean, const VectorX<Scalar>& variances) {
    return GaussianMixture(VectorX<Scalar>::Ones(1), mean.transpose(), variances.transpose());
  }

  Index components() const { return weights_.size(); }
  Index dim() const { return means_.cols(); }
  const VectorX<Scalar>& weights() const { return weights_; }
  const MatrixX<Scalar>& means() const { return means_; }
  const MatrixX<Scalar>& variances() const { return variances_; }
  Scalar variance_floor() const { return variance_floor_; }

  /// log p_k - 0.5 * sum_j log(2 pi var_kj), per component.
  const VectorX<Scalar>& log_normalizers() const { return log_norm_; }

  /// Per-component log p_k + log phi(x_i | mu_k, Sigma_k), one row per point.
  template <typename Derived>
  MatrixX<Scalar> component_log_densities(const Eigen::MatrixBase<Derived>& points) const {
    if (points.cols() != dim()) throw ContractViolation("mixture: dimension mismatch");
    const Index n = points.rows();
    MatrixX<Scalar> out(n, components());
    Eigen::Array<Scalar, Eigen::Dynamic, 1> acc(n);
    for (Index k = 0; k < components(); ++k) {
      acc.setZero();
      for (Index j = 0; j < dim(); ++j)
        acc += (points.col(j).array() - means_(k, j)).square() * inv_var_(k, j);
      out.col(k) = (log_norm_(k) - Scalar(0.5) * acc).matrix();
    }
    return out;
  }

  /// log q(x_i | theta) for every row of points.
  template <typename Derived>
  VectorX<Scalar> log_density_rows(const Eigen::MatrixBase<Derived>& points) const {
    const MatrixX<Scalar> comp = component_log_densities(points);
    if (components() == 1) return comp.col(0);
    VectorX<Scalar> out(comp.rows());
    for (Index i = 0; i < comp.rows(); ++i) out(i) = detail::log_sum_exp(comp.row(i));
    return out;
  }

  /// Mixture mean sum_k p_k mu_k.
  RowVectorX<Scalar> mean() const { return weights_.transpose() * means_; }

  friend bool operator==(const GaussianMixture& a, const GaussianMixture& b) {
    return a.weights_ == b.weights_ && a.means_ == b.means_ && a.variances_ == b.variances_ &&
           a.variance_floor_ == b.variance_floor_;
  }

 private:
  void precompute() {
    const Scalar log2pi = std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
    inv_var_ = variances_.cwiseInverse();
    log_norm_.resize(components());
    for (Index k = 0; k < components(); ++k) {
      log_norm_(k) = std::log(weights_(k)) -
                     Scalar(0.5) * (Scalar(dim()) * log2pi + variances_.row(k).array().log().sum());
    }
  }

  VectorX<Scalar> weights_;
  MatrixX<Scalar> means_;
  MatrixX<Scalar> variances_;
  Scalar variance_floor_ = 0;
  MatrixX<Scalar> inv_var_;
  VectorX<Scalar> log_norm_;
};

using MixtureParams = GaussianMixture<double>;

/// Draws from one proposal; row i is particle x_{t,i}.
struct SampleBatch {
  Eigen::MatrixXd points;
  int source_stage = 0;

  Index size() const { return points.rows(); }
};

/// log q(x | theta) for a single point, by log-sum-exp over components.
template <typename Scalar, typename Derived>
Scalar mixture_log_density(const GaussianMixture<Scalar>& theta,
                           const Eigen::MatrixBase<Derived>& x) {
  if (x.size() != theta.dim()) throw ContractViolation("mixture_log_density: dimension mismatch");
  const RowVectorX<Scalar> row = x.derived().template cast<Scalar>().reshaped().transpose();
  return theta.log_density_rows(row)(0);
}

/// n i.i.d. draws: component ~ Categorical(p), then coordinate-wise Gaussian.
/// Consumes rng in a fixed order (one uniform, then d normals, per draw).
template <typename Scalar>
SampleBatch mixture_sample(const GaussianMixture<Scalar>& theta, Index n, Rng& rng,
                           int source_stage = 0) {
  if (n < 1) throw ContractViolation("mixture_sample: n must be >= 1");
  std::vector<Scalar> cumulative(static_cast<std::size_t>(theta.components()));
  Scalar run = 0;
  for (Index k = 0; k < theta.components(); ++k) {
    run += theta.weights()(k);
    cumulative[static_cast<std::size_t>(k)] = run;
  }
  const MatrixX<Scalar> sd = theta.variances().cwiseSqrt();

  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  SampleBatch batch;
  batch.source_stage = source_stage;
  batch.points.resize(n, theta.dim());
  for (Index i = 0; i < n; ++i) {
    const double u = unif(rng) * static_cast<double>(run);
    Index k = 0;
    while (k + 1 < theta.components() && u >= cumulative[static_cast<std::size_t>(k)]) ++k;
    for (Index j = 0; j < theta.dim(); ++j)
      batch.points(i, j) = static_cast<double>(theta.means()(k, j) + sd(k, j) * gauss(rng));
  }
  return batch;
}

/// Structured text record: {"K":..,"d":..,"weights":[..],"means":[[..]..],"variances":[[..]..]}
/// with every number written to 17 significant digits.
std::string to_record(const MixtureParams& theta);
MixtureParams mixture_from_record(const std::string& text);

}  // namespace tamis
