#pragma once

#include "tamis/model.hpp"

#include <vector>

namespace tamis {

enum class ResampleScheme { multinomial, systematic };

struct ResampleSpec {
  Index size = 0;  // M; 0 means "same as the number of weights"
  ResampleScheme scheme = ResampleScheme::systematic;
};

/// Draws M indices with probabilities proportional to exp(log_w).
/// Systematic: multiplicities lie in {floor(M w_i), ceil(M w_i)}.
std::vector<Index> resample(const Eigen::Ref<const Eigen::VectorXd>& log_w,
                            const ResampleSpec& spec, Rng& rng);

struct EmSettings {
  int max_steps = 10;
  double rel_tol = 1e-6;
};

struct EmReport {
  MixtureParams params;
  /// Mean data log-likelihood before the first step and after each step.
  std::vector<double> mean_log_likelihood;
  int steps = 0;
  /// Components frozen at some step because their responsibility mass collapsed.
  std::vector<Index> frozen;
};

/// Mean log q(x_i | theta) over the rows of data.
double mean_log_likelihood(const MixtureParams& theta, const Eigen::MatrixXd& data);

/// EM for a diagonal-covariance Gaussian mixture on unweighted data, starting
/// from theta_init. Stops after max_steps or once the relative improvement of
/// the mean log-likelihood falls below rel_tol. A component whose
/// responsibility mass drops under K * 1e-6 * M keeps its previous parameters
/// (and weight) for that step instead of being refitted.
EmReport em_fit_report(const MixtureParams& theta_init, const Eigen::MatrixXd& data,
                       const EmSettings& settings = {});

inline MixtureParams em_fit(const MixtureParams& theta_init, const Eigen::MatrixXd& data,
                            const EmSettings& settings = {}) {
  return em_fit_report(theta_init, data, settings).params;
}

}  // namespace tamis
