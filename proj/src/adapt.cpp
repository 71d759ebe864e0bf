#include "tamis/adapt.hpp"

#include <algorithm>
#include <cmath>

namespace tamis {

std::vector<Index> resample(const Eigen::Ref<const Eigen::VectorXd>& log_w,
                            const ResampleSpec& spec, Rng& rng) {
  const Index n = log_w.size();
  if (n < 1) throw ContractViolation("resample: empty weight vector");
  if (log_w.hasNaN()) throw ContractViolation("resample: NaN weight");
  const Index m = spec.size > 0 ? spec.size : n;
  const double top = log_w.maxCoeff();
  if (!std::isfinite(top)) throw ContractViolation("resample: no finite weight");

  std::vector<double> cumulative(static_cast<std::size_t>(n));
  double run = 0.0;
  for (Index i = 0; i < n; ++i) {
    run += std::exp(log_w(i) - top);
    cumulative[static_cast<std::size_t>(i)] = run;
  }
  for (auto& c : cumulative) c /= run;
  cumulative.back() = 1.0;

  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(m));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (spec.scheme == ResampleScheme::systematic) {
    const double step = 1.0 / double(m);
    const double u0 = unif(rng) * step;
    Index i = 0;
    for (Index k = 0; k < m; ++k) {
      const double u = u0 + double(k) * step;
      while (i + 1 < n && u >= cumulative[static_cast<std::size_t>(i)]) ++i;
      out.push_back(i);
    }
  } else {
    for (Index k = 0; k < m; ++k) {
      const double u = unif(rng);
      const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
      out.push_back(std::min<Index>(it - cumulative.begin(), n - 1));
    }
  }
  return out;
}

namespace {

struct EStep {
  Eigen::MatrixXd log_resp;  // M x K, log responsibilities
  double mean_ll = 0.0;
};

EStep expectation(const MixtureParams& theta, const Eigen::MatrixXd& data) {
  EStep e;
  e.log_resp = theta.component_log_densities(data);
  double total = 0.0;
  for (Index i = 0; i < data.rows(); ++i) {
    const double lse = detail::log_sum_exp(e.log_resp.row(i));
    e.log_resp.row(i).array() -= lse;
    total += lse;
  }
  e.mean_ll = total / double(data.rows());
  return e;
}

// Rows in lexicographic order, so every sum below runs in an order that
// depends only on the multiset of rows.
Eigen::MatrixXd canonical_rows(const Eigen::MatrixXd& data) {
  std::vector<Index> order(static_cast<std::size_t>(data.rows()));
  for (Index i = 0; i < data.rows(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](Index a, Index b) {
    for (Index j = 0; j < data.cols(); ++j)
      if (data(a, j) != data(b, j)) return data(a, j) < data(b, j);
    return false;
  });
  Eigen::MatrixXd out(data.rows(), data.cols());
  for (Index i = 0; i < data.rows(); ++i) out.row(i) = data.row(order[static_cast<std::size_t>(i)]);
  return out;
}

}  // namespace

double mean_log_likelihood(const MixtureParams& theta, const Eigen::MatrixXd& data) {
  if (data.rows() < 1) throw ContractViolation("mean_log_likelihood: no data");
  return theta.log_density_rows(data).mean();
}

EmReport em_fit_report(const MixtureParams& theta_init, const Eigen::MatrixXd& raw_data,
                       const EmSettings& settings) {
  const Index m = raw_data.rows();
  const Index d = theta_init.dim();
  const Index k_count = theta_init.components();
  if (m < 2) throw ContractViolation("em_fit: needs at least two data points");
  if (raw_data.cols() != d) throw ContractViolation("em_fit: dimension mismatch");
  if (!raw_data.allFinite()) throw ContractViolation("em_fit: non-finite data");
  if (settings.max_steps < 0) throw ContractViolation("em_fit: max_steps must be >= 0");
  const Eigen::MatrixXd data = canonical_rows(raw_data);

  EmReport report{theta_init, {}, 0, {}};
  EStep e = expectation(report.params, data);
  report.mean_log_likelihood.push_back(e.mean_ll);
  const double degenerate_mass = double(k_count) * 1e-6 * double(m);

  for (int step = 0; step < settings.max_steps; ++step) {
    const MixtureParams& cur = report.params;
    const Eigen::MatrixXd resp = e.log_resp.array().exp().matrix();
    const Eigen::VectorXd mass = resp.colwise().sum().transpose();

    Eigen::VectorXd weights(k_count);
    Eigen::MatrixXd means = cur.means();
    Eigen::MatrixXd variances = cur.variances();
    std::vector<bool> frozen(static_cast<std::size_t>(k_count), false);
    double frozen_weight = 0.0;
    double live_mass = 0.0;

    for (Index k = 0; k < k_count; ++k) {
      if (mass(k) < degenerate_mass) {
        frozen[static_cast<std::size_t>(k)] = true;
        frozen_weight += cur.weights()(k);
        weights(k) = cur.weights()(k);
        if (std::find(report.frozen.begin(), report.frozen.end(), k) == report.frozen.end())
          report.frozen.push_back(k);
        continue;
      }
      live_mass += mass(k);
      const Eigen::VectorXd r = resp.col(k);
      means.row(k) = (r.transpose() * data) / mass(k);
      for (Index j = 0; j < d; ++j)
        variances(k, j) = std::max(
            (r.array() * (data.col(j).array() - means(k, j)).square()).sum() / mass(k),
            cur.variance_floor());
    }
    if (live_mass <= 0.0) break;
    for (Index k = 0; k < k_count; ++k)
      if (!frozen[static_cast<std::size_t>(k)])
        weights(k) = (1.0 - frozen_weight) * mass(k) / live_mass;

    MixtureParams next(std::move(weights), std::move(means), std::move(variances),
                       cur.variance_floor());
    EStep e_next = expectation(next, data);
    const double previous = e.mean_ll;
    report.params = std::move(next);
    e = std::move(e_next);
    report.mean_log_likelihood.push_back(e.mean_ll);
    ++report.steps;
    const double gain = e.mean_ll - previous;
    if (gain < settings.rel_tol * std::max(std::abs(previous), 1e-300)) break;
  }
  return report;
}

}  // namespace tamis
