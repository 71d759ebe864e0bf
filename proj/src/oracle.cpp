#include "tamis/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace tamis::oracle {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

WeightTransform default_transform(const WeightTransform& t) {
  return t ? t : WeightTransform(&anti_truncated_log_weight);
}

// beta * a + (1 - beta) * b without 0 * (-inf) at the endpoints.
Eigen::VectorXd geometric_mix(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double beta) {
  if (beta == 0.0) return b;
  if (beta == 1.0) return a;
  return beta * a + (1.0 - beta) * b;
}

// log of the trapezoid integral of exp(lf).
double log_integral(const Eigen::VectorXd& lf, const Grid1D& grid) {
  const double top = lf.maxCoeff();
  if (top == kNegInf) return kNegInf;
  return top + std::log(grid.integrate((lf.array() - top).exp().matrix()));
}

}  // namespace

Grid1D::Grid1D(double lo, double hi, Index n) : lo_(lo), hi_(hi) {
  if (!(hi > lo)) throw ContractViolation("Grid1D: hi must exceed lo");
  if (n < 100) throw ContractViolation("Grid1D: needs at least 100 nodes");
  nodes_ = Eigen::VectorXd::LinSpaced(n, lo, hi);
  const double h = (hi - lo) / double(n - 1);
  weights_ = Eigen::VectorXd::Constant(n, h);
  weights_(0) = weights_(n - 1) = 0.5 * h;
}

Grid1D Grid1D::covering(double mean_a, double sd_a, double mean_b, double sd_b, double width,
                        Index n) {
  const double sd = std::max(sd_a, sd_b);
  return Grid1D(std::min(mean_a, mean_b) - width * sd, std::max(mean_a, mean_b) + width * sd, n);
}

Eigen::VectorXd tabulate(const LogDensity1D& log_f, const Grid1D& grid, const char* what) {
  Eigen::VectorXd out(grid.size());
  for (Index i = 0; i < grid.size(); ++i) {
    const double x = grid.nodes()(i);
    const double v = log_f(x);
    if (std::isnan(v) || v == std::numeric_limits<double>::infinity())
      throw QuadratureError(i, x, what);
    out(i) = v;
  }
  return out;
}

double quad_kl_tabulated(const Eigen::VectorXd& log_f, const Eigen::VectorXd& log_g,
                         const Grid1D& grid) {
  const double log_zf = log_integral(log_f, grid);
  const double log_zg = log_integral(log_g, grid);
  if (!std::isfinite(log_zf) || !std::isfinite(log_zg))
    throw QuadratureError(0, grid.lo(), "normalizing constant");
  Eigen::VectorXd integrand(grid.size());
  for (Index i = 0; i < grid.size(); ++i) {
    const double lf = log_f(i) - log_zf;
    if (lf == kNegInf) {
      integrand(i) = 0.0;
      continue;
    }
    const double lg = log_g(i) - log_zg;
    if (lg == kNegInf) throw QuadratureError(i, grid.nodes()(i), "KL integrand (g = 0 < f)");
    integrand(i) = std::exp(lf) * (lf - lg);
  }
  return grid.integrate(integrand);
}

double quad_kl(const LogDensity1D& log_f, const LogDensity1D& log_g, const Grid1D& grid) {
  return quad_kl_tabulated(tabulate(log_f, grid, "log f"), tabulate(log_g, grid, "log g"), grid);
}

double tempered_constant(const LogDensity1D& log_pi, const LogDensity1D& log_q, double beta,
                         const Grid1D& grid) {
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractViolation("tempered_constant: beta outside [0, 1]");
  const Eigen::VectorXd lp = tabulate(log_pi, grid, "log pi");
  const Eigen::VectorXd lq = tabulate(log_q, grid, "log q");
  return std::exp(log_integral(geometric_mix(lp, lq, beta), grid));
}

LambdaSides lambda_mixture(const LogDensity1D& log_pi, const LogDensity1D& log_q, double beta,
                           double s, const Grid1D& grid, const WeightTransform& transform) {
  if (!(s > 0.0)) throw ContractViolation("lambda_mixture: s must be > 0");
  if (!(beta > 0.0 && beta <= 1.0)) throw ContractViolation("lambda_mixture: beta outside (0, 1]");
  const auto lift = default_transform(transform);
  const Eigen::VectorXd lp = tabulate(log_pi, grid, "log pi");
  const Eigen::VectorXd lq = tabulate(log_q, grid, "log q");
  const double log_s = std::log(s);

  Eigen::VectorXd hat(grid.size()), in_e(grid.size()), out_e(grid.size());
  for (Index i = 0; i < grid.size(); ++i) {
    const double log_ratio = lp(i) - lq(i);
    const bool member = beta * log_ratio <= log_s;
    hat(i) = std::exp(lq(i) + lift(log_ratio, beta, log_s));
    in_e(i) = member ? s * std::exp(lq(i)) : 0.0;
    out_e(i) = member ? 0.0 : std::exp(beta * lp(i) + (1.0 - beta) * lq(i));
    if (!std::isfinite(hat(i))) throw QuadratureError(i, grid.nodes()(i), "anti-truncated density");
  }
  LambdaSides sides;
  sides.normalizer = grid.integrate(hat);
  sides.mass_e = grid.integrate(in_e);
  sides.left = sides.mass_e / sides.normalizer;
  sides.right = 1.0 - grid.integrate(out_e) / sides.normalizer;
  return sides;
}

std::vector<double> kl_beta_curve(const LogDensity1D& log_pi, const LogDensity1D& log_q,
                                  const std::vector<double>& betas, const Grid1D& grid) {
  if (!std::is_sorted(betas.begin(), betas.end()))
    throw ContractViolation("kl_beta_curve: beta grid must be sorted");
  const Eigen::VectorXd lp = tabulate(log_pi, grid, "log pi");
  const Eigen::VectorXd lq = tabulate(log_q, grid, "log q");
  std::vector<double> curve;
  curve.reserve(betas.size());
  for (double b : betas) {
    if (!(b >= 0.0 && b <= 1.0)) throw ContractViolation("kl_beta_curve: beta outside [0, 1]");
    curve.push_back(quad_kl_tabulated(lp, geometric_mix(lp, lq, b), grid));
  }
  return curve;
}

Sandwich kl_sandwich_check(const LogDensity1D& log_pi, const LogDensity1D& log_q, double beta,
                           double s, const Grid1D& grid, const WeightTransform& transform) {
  if (!(s > 0.0 && s <= 1.0)) throw ContractViolation("kl_sandwich_check: s must lie in (0, 1]");
  if (!(beta >= 0.0 && beta <= 1.0)) throw ContractViolation("kl_sandwich_check: beta outside [0, 1]");
  const auto lift = default_transform(transform);
  const Eigen::VectorXd lp = tabulate(log_pi, grid, "log pi");
  const Eigen::VectorXd lq = tabulate(log_q, grid, "log q");
  const Eigen::VectorXd tempered = geometric_mix(lp, lq, beta);
  const double log_s = std::log(s);
  Eigen::VectorXd hat(grid.size());
  for (Index i = 0; i < grid.size(); ++i) hat(i) = lq(i) + lift(lp(i) - lq(i), beta, log_s);
  return {quad_kl_tabulated(tempered, hat, grid), quad_kl_tabulated(tempered, lq, grid)};
}

LogDensity1D normal_log_density(double mean, double variance) {
  if (!(variance > 0.0)) throw ContractViolation("normal_log_density: variance must be > 0");
  const double c = -0.5 * std::log(2.0 * std::numbers::pi * variance);
  return [mean, variance, c](double x) { return c - 0.5 * (x - mean) * (x - mean) / variance; };
}

// ---------------------------------------------------------------------------

namespace {

struct GaussianPair {
  const char* label;
  double pi_mean, pi_var, q_mean, q_var;
};

constexpr GaussianPair kPairs[] = {
    {"pi=N(0,1) q=N(3,1)", 0.0, 1.0, 3.0, 1.0},
    {"pi=N(0,1) q=N(0,4)", 0.0, 1.0, 0.0, 4.0},
    {"pi=N(0,1) q=N(2,4)", 0.0, 1.0, 2.0, 4.0},
};

double gaussian_kl(double m0, double v0, double m1, double v1) {
  return 0.5 * (v0 / v1 + (m1 - m0) * (m1 - m0) / v1 - 1.0 + std::log(v1 / v0));
}

Grid1D pair_grid(const GaussianPair& p, Index n) {
  return Grid1D::covering(p.pi_mean, std::sqrt(p.pi_var), p.q_mean, std::sqrt(p.q_var), 12.0, n);
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.3e", v);
  return buf;
}

CheckRow kl_beta_row(const GaussianPair& p, Index n) {
  std::vector<double> betas(21);
  for (int i = 0; i <= 20; ++i) betas[static_cast<std::size_t>(i)] = i / 20.0;
  const auto log_pi = normal_log_density(p.pi_mean, p.pi_var);
  const auto log_q = normal_log_density(p.q_mean, p.q_var);
  const auto k = kl_beta_curve(log_pi, log_q, betas, pair_grid(p, n));
  const double exact = gaussian_kl(p.pi_mean, p.pi_var, p.q_mean, p.q_var);
  double margin = std::min(1e-4 - std::abs(k.front() - exact), 1e-6 - std::abs(k.back()));
  for (std::size_t i = 1; i < k.size(); ++i) margin = std::min(margin, 1e-6 - (k[i] - k[i - 1]));
  for (std::size_t i = 2; i < k.size(); ++i)
    margin = std::min(margin, 1e-6 + (k[i] - 2.0 * k[i - 1] + k[i - 2]));
  return {std::string("kl_beta_curve ") + p.label, margin >= 0.0, margin,
          "k(0)=" + fmt(k.front()) + " KL(pi||q)=" + fmt(exact)};
}

CheckRow tempered_constant_row(const GaussianPair& p, Index n) {
  const auto log_pi = normal_log_density(p.pi_mean, p.pi_var);
  const auto log_q = normal_log_density(p.q_mean, p.q_var);
  const Grid1D grid = pair_grid(p, n);
  const double c0 = tempered_constant(log_pi, log_q, 0.0, grid);
  const double c1 = tempered_constant(log_pi, log_q, 1.0, grid);
  double margin = std::min(1e-6 - std::abs(c0 - 1.0), 1e-6 - std::abs(c1 - 1.0));
  double worst = 0.0;
  for (int i = 1; i < 20; ++i) {
    const double c = tempered_constant(log_pi, log_q, i / 20.0, grid);
    worst = std::max(worst, c);
    margin = std::min(margin, 1.0 + 1e-9 - c);
  }
  return {std::string("tempered_constant ") + p.label, margin >= 0.0, margin,
          "C(0)=" + fmt(c0) + " C(1)=" + fmt(c1) + " max C=" + fmt(worst)};
}

CheckRow sandwich_row(const GaussianPair& p, Index n, const WeightTransform& transform) {
  const auto log_pi = normal_log_density(p.pi_mean, p.pi_var);
  const auto log_q = normal_log_density(p.q_mean, p.q_var);
  const Grid1D grid = pair_grid(p, n);
  double margin = std::numeric_limits<double>::infinity();
  std::string detail;
  for (double beta : {0.3, 0.6, 0.9}) {
    for (double s : {0.1, 0.5, 1.0}) {
      const auto r = kl_sandwich_check(log_pi, log_q, beta, s, grid, transform);
      const double m = std::min(r.kl_mid + 1e-9, r.kl_right + 1e-6 - r.kl_mid);
      if (m < margin) {
        margin = m;
        detail = "tightest beta=" + fmt(beta) + " s=" + fmt(s) + " mid=" + fmt(r.kl_mid) +
                 " right=" + fmt(r.kl_right);
      }
    }
  }
  return {std::string("kl_sandwich ") + p.label, margin >= 0.0, margin, detail};
}

CheckRow lambda_row(const GaussianPair& p, Index n, const WeightTransform& transform) {
  const auto log_pi = normal_log_density(p.pi_mean, p.pi_var);
  const auto log_q = normal_log_density(p.q_mean, p.q_var);
  const Grid1D grid = pair_grid(p, n);
  double worst = 0.0;
  std::vector<std::pair<double, double>> cases;
  for (double beta : {0.3, 0.6, 0.9})
    for (double s : {0.1, 0.5, 1.0}) cases.emplace_back(beta, s);
  // s at the median tempered ratio over the grid, so E and its complement are both non-empty.
  {
    const double beta = 0.7;
    std::vector<double> ratios(static_cast<std::size_t>(grid.size()));
    for (Index i = 0; i < grid.size(); ++i) {
      const double x = grid.nodes()(i);
      ratios[static_cast<std::size_t>(i)] = std::exp(beta * (log_pi(x) - log_q(x)));
    }
    std::nth_element(ratios.begin(), ratios.begin() + ratios.size() / 2, ratios.end());
    cases.emplace_back(beta, ratios[ratios.size() / 2]);
  }
  for (const auto& [beta, s] : cases) {
    const auto sides = lambda_mixture(log_pi, log_q, beta, s, grid, transform);
    worst = std::max(worst, std::abs(sides.left - sides.right));
  }
  return {std::string("lambda_identity ") + p.label, worst < 1e-4, 1e-4 - worst,
          "max |left-right|=" + fmt(worst)};
}

CheckRow refinement_row(const GaussianPair& p, Index n) {
  const auto log_pi = normal_log_density(p.pi_mean, p.pi_var);
  const auto log_q = normal_log_density(p.q_mean, p.q_var);
  const Grid1D coarse = pair_grid(p, n);
  const double a = quad_kl(log_pi, log_q, coarse);
  const double b = quad_kl(log_pi, log_q, coarse.refined());
  const double exact = gaussian_kl(p.pi_mean, p.pi_var, p.q_mean, p.q_var);
  const double margin = std::min(2e-4 - std::abs(a - b), 1e-4 - std::abs(b - exact));
  return {std::string("grid_refinement ") + p.label, margin >= 0.0, margin,
          "n=" + std::to_string(coarse.size()) + " KL=" + fmt(a) + " 2n KL=" + fmt(b)};
}

}  // namespace

std::vector<CheckRow> verify_all(const VerifyOptions& options) {
  std::vector<CheckRow> rows;
  const Index n = options.grid_nodes;
  for (const auto& p : kPairs) rows.push_back(kl_beta_row(p, n));
  for (const auto& p : kPairs) rows.push_back(tempered_constant_row(p, n));
  for (const auto& p : kPairs) rows.push_back(sandwich_row(p, n, options.transform));
  for (const auto& p : kPairs) rows.push_back(lambda_row(p, n, options.transform));
  rows.push_back(refinement_row(kPairs[0], n));

  const EssMonotonicityReport ess = ess_monotonicity_suite(1000, 50, 20240917u);
  rows.push_back({"ess_monotonicity 1000 batches", ess.violations == 0, ess.worst_margin,
                  std::to_string(ess.batches) + " batches, max N=" + std::to_string(ess.max_size)});
  return rows;
}

EssMonotonicityReport ess_monotonicity_suite(int batches, int beta_points, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::cauchy_distribution<double> cauchy(0.0, 1.0);
  std::exponential_distribution<double> expo(1.0);

  EssMonotonicityReport report;
  report.batches = batches;
  report.worst_margin = std::numeric_limits<double>::infinity();
  for (int b = 0; b < batches; ++b) {
    // N log-uniform on [2, 1e4].
    const Index n = std::clamp<Index>(
        static_cast<Index>(std::exp(std::log(2.0) + unif(rng) * (std::log(1e4) - std::log(2.0)))), 2,
        10000);
    report.max_size = std::max(report.max_size, n);
    const double scale = std::exp(unif(rng) * std::log(1e3));  // 1 .. 1000
    const int kind = b % 4;
    Eigen::VectorXd lw(n);
    for (Index i = 0; i < n; ++i) {
      switch (kind) {
        case 0: lw(i) = scale * gauss(rng); break;                 // light tails
        case 1: lw(i) = std::clamp(cauchy(rng), -1e6, 1e6); break;  // heavy tails
        case 2: lw(i) = -scale * expo(rng); break;                 // one-sided
        default: lw(i) = unif(rng) < 0.2 ? -std::numeric_limits<double>::infinity()
                                         : scale * gauss(rng);   // with zero weights
      }
    }
    if (!lw.allFinite() && (lw.array() > -std::numeric_limits<double>::infinity()).count() == 0)
      lw(0) = 0.0;
    const LogWeightBatch batch(lw);
    double previous = std::numeric_limits<double>::infinity();
    for (int k = 0; k < beta_points; ++k) {
      const double beta = double(k) / double(beta_points - 1);
      const double e = ess_at_beta(batch, beta);
      const double margin = previous - e + 1e-9 * double(n);
      report.worst_margin = std::min(report.worst_margin, margin);
      if (margin < 0.0) ++report.violations;
      previous = e;
    }
  }
  return report;
}

}  // namespace tamis::oracle
