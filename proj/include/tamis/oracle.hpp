#pragma once

// One-dimensional trapezoid quadrature for checking the tempering and
// anti-truncation identities against ground truth. Densities are passed as
// log-density callables and are normalized on the grid where needed.

#include "tamis/weights.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace tamis::oracle {

using LogDensity1D = std::function<double(double)>;

/// Maps (log w, beta, log s) to the log of the anti-truncated tempered weight.
using WeightTransform = std::function<double(double, double, double)>;

class QuadratureError : public std::runtime_error {
 public:
  QuadratureError(Index node, double x, const std::string& what)
      : std::runtime_error("non-finite " + what + " at node " + std::to_string(node) +
                           " (x = " + std::to_string(x) + ")"),
        node_(node) {}
  Index node() const { return node_; }

 private:
  Index node_;
};

/// Uniform grid with trapezoid weights.
class Grid1D {
 public:
  Grid1D(double lo, double hi, Index n);

  /// +-width standard deviations around both Gaussians, default 2^16 nodes.
  static Grid1D covering(double mean_a, double sd_a, double mean_b, double sd_b,
                         double width = 12.0, Index n = Index(1) << 16);

  double lo() const { return lo_; }
  double hi() const { return hi_; }
  Index size() const { return nodes_.size(); }
  const Eigen::VectorXd& nodes() const { return nodes_; }
  const Eigen::VectorXd& weights() const { return weights_; }
  Grid1D refined() const { return Grid1D(lo_, hi_, 2 * size() - 1); }

  /// Trapezoid rule for node values f.
  double integrate(const Eigen::Ref<const Eigen::VectorXd>& f) const { return weights_.dot(f); }

 private:
  double lo_;
  double hi_;
  Eigen::VectorXd nodes_;
  Eigen::VectorXd weights_;
};

/// log(x_i) at every node; NaN or +inf raise QuadratureError.
Eigen::VectorXd tabulate(const LogDensity1D& log_f, const Grid1D& grid, const char* what);

/// KL between the grid-normalized versions of f and g.
double quad_kl(const LogDensity1D& log_f, const LogDensity1D& log_g, const Grid1D& grid);
double quad_kl_tabulated(const Eigen::VectorXd& log_f, const Eigen::VectorXd& log_g,
                         const Grid1D& grid);

/// C(beta) = integral of pi^beta q^(1 - beta).
double tempered_constant(const LogDensity1D& log_pi, const LogDensity1D& log_q, double beta,
                         const Grid1D& grid);

/// Both sides of the mixture-weight identity for the anti-truncated target
///   hat_pi = s q 1{E} + pi^beta q^(1-beta) 1{not E},  E = {(pi/q)^beta <= s},
/// normalized by Z = integral of hat_pi, which is built pointwise through the
/// weight transform: hat_pi(x) = q(x) exp(transform(log pi - log q, beta, log s)).
struct LambdaSides {
  double left = 0.0;    // s q(E) / Z
  double right = 0.0;   // 1 - integral over not-E of pi^beta q^(1-beta) / Z
  double mass_e = 0.0;  // s q(E), unnormalized
  double normalizer = 0.0;
};
LambdaSides lambda_mixture(const LogDensity1D& log_pi, const LogDensity1D& log_q, double beta,
                           double s, const Grid1D& grid, const WeightTransform& transform = {});

/// k(beta) = KL(pi || pi_beta) for each beta.
std::vector<double> kl_beta_curve(const LogDensity1D& log_pi, const LogDensity1D& log_q,
                                  const std::vector<double>& betas, const Grid1D& grid);

struct Sandwich {
  double kl_mid = 0.0;    // KL(pi_beta || hat_pi_beta)
  double kl_right = 0.0;  // KL(pi_beta || q)
};
Sandwich kl_sandwich_check(const LogDensity1D& log_pi, const LogDensity1D& log_q, double beta,
                           double s, const Grid1D& grid, const WeightTransform& transform = {});

/// log density of N(mean, variance) as a callable.
LogDensity1D normal_log_density(double mean, double variance);

/// One row of the verification table.
struct CheckRow {
  std::string name;
  bool passed = false;
  double margin = 0.0;  // >= 0 when passed; distance to the violated bound otherwise
  std::string detail;
};

/// ESS(beta) monotonicity over seeded random log-weight batches (light,
/// heavy and one-sided tails, some with zero weights), N log-uniform in
/// [2, 1e4], slack 1e-9 N.
struct EssMonotonicityReport {
  int batches = 0;
  Index max_size = 0;
  int violations = 0;
  double worst_margin = 0.0;
};
EssMonotonicityReport ess_monotonicity_suite(int batches, int beta_points, std::uint64_t seed);

struct VerifyOptions {
  WeightTransform transform;  // empty: the library's anti-truncation
  Index grid_nodes = Index(1) << 16;
};

/// Runs every quadrature check (KL(beta) curve, sandwich, lambda identity,
/// tempered constant, ESS monotonicity on seeded random batches).
std::vector<CheckRow> verify_all(const VerifyOptions& options = {});

}  // namespace tamis::oracle
