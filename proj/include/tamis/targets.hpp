#pragma once

#include "tamis/model.hpp"

#include <chrono>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace tamis {

/// sum_j log phi(x_j | m, v) -- the N(m, v)^{(x) d} target.
template <typename Derived>
typename Derived::Scalar gaussian_iid_log_density(double m, double v,
                                                  const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  const Scalar d = static_cast<Scalar>(x.size());
  return Scalar(-0.5) * (d * std::log(Scalar(2) * std::numbers::pi_v<Scalar> * v) +
                         (x.array() - m).square().sum() / v);
}

/// Banana-shaped target pi(x) = phi(Psi(x) | 0, diag(sigma2, 1, ..., 1)) with
/// Psi(x) = (x_1, x_2 + b (x_1^2 - sigma2), x_3, ..., x_d).
///
/// Psi is lower triangular with unit diagonal Jacobian, so |det DPsi| = 1 and
/// the change of variables leaves the Gaussian normalized: no extra term.
template <typename Derived>
typename Derived::Scalar rosenbrock_log_density(double sigma2, double b,
                                                const Eigen::MatrixBase<Derived>& x) {
  using Scalar = typename Derived::Scalar;
  if (x.size() < 2) throw ContractViolation("rosenbrock: dimension must be >= 2");
  const Scalar log2pi = std::log(Scalar(2) * std::numbers::pi_v<Scalar>);
  const Scalar x1 = x(0);
  const Scalar y2 = x(1) + b * (x1 * x1 - sigma2);
  const Scalar tail = x.size() > 2 ? x.tail(x.size() - 2).squaredNorm() : Scalar(0);
  const Scalar quad = x1 * x1 / sigma2 + y2 * y2 + tail;
  return Scalar(-0.5) * (Scalar(x.size()) * log2pi + std::log(Scalar(sigma2)) + quad);
}

/// Thrown when a target cannot produce a value; names the failing particle.
class TargetEvaluationError : public std::runtime_error {
 public:
  TargetEvaluationError(Index particle, const std::string& what)
      : std::runtime_error("target evaluation failed at particle " + std::to_string(particle) +
                           ": " + what),
        particle_(particle) {}
  Index particle() const { return particle_; }

 private:
  Index particle_;
};

/// A (possibly unnormalized) target log-density with an evaluation counter.
/// Every row passed to log_density counts as one evaluation.
class Target {
 public:
  virtual ~Target() = default;
  virtual Index dim() const = 0;

  Eigen::VectorXd log_density(const Eigen::MatrixXd& points);
  std::uint64_t evaluations() const { return evaluations_; }

 protected:
  /// Fills out(i) for each row; must call count() once per completed row.
  virtual void evaluate(const Eigen::MatrixXd& points, Eigen::VectorXd& out) = 0;
  void count(std::uint64_t n) { evaluations_ += n; }

 private:
  std::uint64_t evaluations_ = 0;
};

class GaussianIidTarget final : public Target {
 public:
  GaussianIidTarget(double mean, double variance, Index dim);
  Index dim() const override { return dim_; }
  double mean() const { return mean_; }
  double variance() const { return variance_; }

 protected:
  void evaluate(const Eigen::MatrixXd& points, Eigen::VectorXd& out) override;

 private:
  double mean_;
  double variance_;
  Index dim_;
};

class RosenbrockTarget final : public Target {
 public:
  RosenbrockTarget(double sigma2, double b, Index dim);
  Index dim() const override { return dim_; }

 protected:
  void evaluate(const Eigen::MatrixXd& points, Eigen::VectorXd& out) override;

 private:
  double sigma2_;
  double b_;
  Index dim_;
};

/// A target whose log-density is a mixture; handy for perfect-proposal tests.
class MixtureTarget final : public Target {
 public:
  explicit MixtureTarget(MixtureParams theta) : theta_(std::move(theta)) {}
  Index dim() const override { return theta_.dim(); }

 protected:
  void evaluate(const Eigen::MatrixXd& points, Eigen::VectorXd& out) override;

 private:
  MixtureParams theta_;
};

/// External process speaking newline-delimited JSON on stdin/stdout.
///
///   client -> {"hello":{"dim":d}}      server -> {"hello":{"dim":d}}
///   client -> {"x":[x_1,...,x_d]}      server -> {"logpi":v}
///
/// v may be null to signal log pi = -inf. One round trip per evaluation.
class BlackboxTarget final : public Target {
 public:
  BlackboxTarget(std::vector<std::string> argv, Index dim,
                 std::chrono::milliseconds timeout = std::chrono::seconds(30));
  ~BlackboxTarget() override;
  BlackboxTarget(const BlackboxTarget&) = delete;
  BlackboxTarget& operator=(const BlackboxTarget&) = delete;

  Index dim() const override { return dim_; }
  double evaluate_one(const Eigen::Ref<const Eigen::RowVectorXd>& x, Index particle);

 protected:
  void evaluate(const Eigen::MatrixXd& points, Eigen::VectorXd& out) override;

 private:
  void send_line(const std::string& line, Index particle);
  std::string read_line(Index particle);
  void shutdown();

  Index dim_;
  std::chrono::milliseconds timeout_;
  int pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  std::string pending_;
};

struct TargetSpec {
  enum class Kind { gaussian_iid, rosenbrock, blackbox };
  Kind kind = Kind::gaussian_iid;
  Index dim = 1;
  double mean = 0.0;       // gaussian_iid
  double variance = 1.0;   // gaussian_iid; read as a variance, not a standard deviation
  double sigma2 = 100.0;   // rosenbrock
  double b = 0.03;         // rosenbrock
  std::vector<std::string> command;  // blackbox
  double timeout_seconds = 30.0;     // blackbox
};

/// Throws ContractViolation on an invalid spec.
void validate(const TargetSpec& spec);
std::unique_ptr<Target> make_target(const TargetSpec& spec);

}  // namespace tamis
