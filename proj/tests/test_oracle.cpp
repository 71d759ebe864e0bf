#include "tamis/oracle.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace tamis;
using namespace tamis::oracle;

namespace {

const auto std_normal = normal_log_density(0.0, 1.0);

bool row_failed(const std::vector<CheckRow>& rows, const std::string& prefix) {
  for (const auto& r : rows)
    if (r.name.rfind(prefix, 0) == 0 && !r.passed) return true;
  return false;
}

}  // namespace

TEST_CASE("grid construction") {
  const Grid1D g(-1.0, 1.0, 101);
  CHECK(g.size() == 101);
  CHECK(g.integrate(Eigen::VectorXd::Ones(101)) == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(g.refined().size() == 201);
  CHECK_THROWS(Grid1D(1.0, -1.0, 200));
  CHECK_THROWS(Grid1D(-1.0, 1.0, 99));
}

TEST_CASE("quad_kl closed forms") {
  const auto g = Grid1D::covering(0.0, 1.0, 1.0, 2.0);
  CHECK(std::abs(quad_kl(std_normal, std_normal, g)) < 1e-10);
  CHECK(quad_kl(std_normal, normal_log_density(1.0, 1.0), g) == doctest::Approx(0.5).epsilon(1e-4));
  CHECK(std::abs(quad_kl(std_normal, normal_log_density(0.0, 4.0), g) -
                 0.5 * (0.25 + std::log(4.0) - 1.0)) < 1e-4);
  CHECK(0.5 * (0.25 + std::log(4.0) - 1.0) == doctest::Approx(0.31815).epsilon(1e-5));
}

TEST_CASE("quad_kl reports the offending node") {
  const Grid1D g(-1.0, 1.0, 101);
  const LogDensity1D bad = [](double x) { return x > 0.51 ? std::nan("") : 0.0; };
  try {
    quad_kl(bad, std_normal, g);
    FAIL("expected a QuadratureError");
  } catch (const QuadratureError& e) {
    CHECK(e.node() == 76);
  }
}

TEST_CASE("tempered constant") {
  const auto q = normal_log_density(0.0, 4.0);
  const auto g = Grid1D::covering(0.0, 1.0, 0.0, 2.0);
  CHECK(std::abs(tempered_constant(std_normal, q, 0.0, g) - 1.0) < 1e-6);
  CHECK(std::abs(tempered_constant(std_normal, q, 1.0, g) - 1.0) < 1e-6);
  const double half = tempered_constant(std_normal, q, 0.5, g);
  const double reference = tempered_constant(std_normal, q, 0.5, Grid1D::covering(0.0, 1.0, 0.0, 2.0, 12.0, 1000000));
  CHECK(std::abs(half - reference) < 1e-9);
  CHECK(std::abs(half - std::sqrt(0.8)) < 1e-9);
  for (double beta = 0.0; beta <= 1.0; beta += 0.05)
    CHECK(tempered_constant(std_normal, q, beta, g) <= 1.0 + 1e-9);
}

TEST_CASE("lambda identity") {
  const auto q = normal_log_density(0.0, 4.0);
  const auto g = Grid1D::covering(0.0, 1.0, 0.0, 2.0);
  SUBCASE("empty contamination set") {
    const auto l = lambda_mixture(std_normal, q, 0.7, 1e-300, g);
    CHECK(l.left == 0.0);
    CHECK(std::abs(l.right) < 1e-12);
  }
  SUBCASE("full contamination") {
    const auto l = lambda_mixture(std_normal, q, 0.7, 1e300, g);
    CHECK(l.mass_e == doctest::Approx(1e300).epsilon(1e-6));
    CHECK(l.left == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(l.right == doctest::Approx(1.0).epsilon(1e-9));
  }
  SUBCASE("median threshold") {
    const double beta = 0.7;
    std::vector<double> ratios;
    for (Index i = 0; i < g.size(); ++i) {
      const double x = g.nodes()(i);
      ratios.push_back(beta * (std_normal(x) - q(x)));
    }
    std::nth_element(ratios.begin(), ratios.begin() + std::ptrdiff_t(ratios.size() / 2), ratios.end());
    const double s = std::exp(ratios[ratios.size() / 2]);
    const auto l = lambda_mixture(std_normal, q, beta, s, g);
    CHECK(l.left > 0.0);
    CHECK(std::abs(l.left - l.right) < 1e-4);
  }
}

TEST_CASE("KL(beta) curve") {
  const auto q = normal_log_density(3.0, 1.0);
  const auto g = Grid1D::covering(0.0, 1.0, 3.0, 1.0);
  std::vector<double> betas;
  for (int i = 0; i <= 20; ++i) betas.push_back(double(i) / 20.0);
  const auto k = kl_beta_curve(std_normal, q, betas, g);
  CHECK(std::abs(k.front() - quad_kl(std_normal, q, g)) < 1e-10);
  CHECK(std::abs(k.front() - 4.5) < 1e-4);
  CHECK(std::abs(k.back()) < 1e-6);
  for (std::size_t i = 1; i < k.size(); ++i) CHECK(k[i] - k[i - 1] <= 1e-6);
  for (std::size_t i = 2; i < k.size(); ++i) CHECK(k[i] - 2.0 * k[i - 1] + k[i - 2] >= -1e-6);
}

TEST_CASE("KL sandwich") {
  SUBCASE("worked example") {
    const auto q = normal_log_density(2.0, 4.0);
    const auto g = Grid1D::covering(0.0, 1.0, 2.0, 2.0);
    const auto s = kl_sandwich_check(std_normal, q, 0.6, 0.5, g);
    CHECK(s.kl_mid >= -1e-9);
    CHECK(s.kl_mid <= s.kl_right + 1e-6);
    CHECK(s.kl_right - s.kl_mid > 0.0);
  }
  SUBCASE("vanishing contamination") {
    const auto q = normal_log_density(2.0, 4.0);
    const auto g = Grid1D::covering(0.0, 1.0, 2.0, 2.0);
    CHECK(kl_sandwich_check(std_normal, q, 0.6, 1e-12, g).kl_mid < 1e-4);
  }
  SUBCASE("beta = 0 collapses every KL") {
    const auto q = normal_log_density(3.0, 1.0);
    const auto g = Grid1D::covering(0.0, 1.0, 3.0, 1.0);
    for (double s : {0.1, 0.5, 1.0}) {
      const auto r = kl_sandwich_check(std_normal, q, 0.0, s, g);
      CHECK(std::abs(r.kl_mid) < 1e-9);
      CHECK(std::abs(r.kl_right) < 1e-9);
    }
  }
}

TEST_CASE("ESS monotonicity suite") {
  const auto report = ess_monotonicity_suite(100, 50, 11);
  CHECK(report.batches == 100);
  CHECK(report.violations == 0);
  CHECK(report.worst_margin >= 0.0);
}

TEST_CASE("verify passes and is stable") {
  VerifyOptions options;
  options.grid_nodes = 1 << 14;
  const auto a = verify_all(options);
  const auto b = verify_all(options);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK_MESSAGE(a[i].passed, a[i].name << ": " << a[i].detail);
    CHECK(a[i].margin == b[i].margin);
    CHECK(a[i].detail == b[i].detail);
  }
}

TEST_CASE("verify catches a broken anti-truncation") {
  VerifyOptions options;
  options.grid_nodes = 1 << 14;
  SUBCASE("clipping instead of lifting") {
    options.transform = [](double log_w, double beta, double log_s) {
      return std::min(log_s, beta * log_w);
    };
    const auto rows = verify_all(options);
    CHECK((row_failed(rows, "kl_sandwich") || row_failed(rows, "lambda_identity")));
  }
  SUBCASE("threshold applied before tempering") {
    options.transform = [](double log_w, double beta, double log_s) {
      return beta * std::max(log_s, log_w);
    };
    const auto rows = verify_all(options);
    CHECK((row_failed(rows, "kl_sandwich") || row_failed(rows, "lambda_identity")));
  }
}
