#include "tamis/engine.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>

namespace tamis {

Index TamisConfig::draws_at(int t) const {
  if (draws.empty()) throw ConfigError("draws schedule is empty");
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(std::max(t, 1) - 1),
                                              draws.size() - 1);
  return draws[i];
}

std::vector<std::string> TamisConfig::validate(Index components, Index dim) const {
  std::vector<std::string> warnings;
  if (draws.empty()) throw ConfigError("draws schedule is empty");
  Index smallest = draws.front();
  for (Index n : draws) {
    if (n < 2) throw ConfigError("every stage must draw at least 2 particles");
    smallest = std::min(smallest, n);
  }
  if (!(tau >= 0.0 && tau < 1.0)) throw ConfigError("tau must lie in [0, 1)");
  if (!(ess_min >= 1.0)) throw ConfigError("ESS_min must be >= 1");
  if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
  if (!(bisection_tol > 0.0)) throw ConfigError("bisection tolerance must be > 0");
  if (em.max_steps < 0) throw ConfigError("EM max_steps must be >= 0");
  if (!(ess_predefined >= 0.0)) throw ConfigError("ESS_predefined must be >= 0");
  if (ess_min > double(smallest))
    warnings.push_back("ESS_min = " + std::to_string(ess_min) + " exceeds the smallest stage size " +
                       std::to_string(smallest) + "; it is capped at N_t");
  if (double(2 * components * dim) >= ess_min)
    warnings.push_back("ESS_min = " + std::to_string(ess_min) + " is not well above 2Kd = " +
                       std::to_string(2 * components * dim) + "; EM refits may be unstable");
  return warnings;
}

std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::tamis: return "tamis";
    case Algorithm::npmc: return "npmc";
    case Algorithm::amis: return "amis";
  }
  return "?";
}

std::string to_string(StopReason r) {
  return r == StopReason::ess_reached ? "ess_reached" : "max_iterations";
}

double kl_hat(const Eigen::Ref<const Eigen::VectorXd>& normalized_weights) {
  const Index n = normalized_weights.size();
  if (n < 1) throw ContractViolation("kl_hat: empty weight vector");
  double neg_entropy = 0.0;
  for (Index i = 0; i < n; ++i) {
    const double w = normalized_weights(i);
    if (w > 0.0) neg_entropy += w * std::log(w);
  }
  const double log_n = std::log(double(n));
  return std::clamp(neg_entropy + log_n, 0.0, log_n);
}

double npmc_beta_schedule(int t, double ladder) {
  return 1.0 / (1.0 + std::exp(-(double(t) - ladder)));
}

namespace {

// log q_v(x) for the draws of stage u under proposal v, filled lazily (AMIS).
using DensityCache = std::vector<std::vector<Eigen::VectorXd>>;

Eigen::VectorXd amis_log_q(const DensityCache& cache, std::size_t stage,
                           const std::vector<Index>& counts) {
  double total = 0.0;
  for (Index c : counts) total += double(c);
  const auto& row = cache[stage];
  Eigen::MatrixXd terms(row.front().size(), static_cast<Index>(row.size()));
  for (std::size_t v = 0; v < row.size(); ++v)
    terms.col(static_cast<Index>(v)) = row[v].array() + std::log(double(counts[v]) / total);
  Eigen::VectorXd out(terms.rows());
  for (Index i = 0; i < terms.rows(); ++i) out(i) = log_sum_exp(terms.row(i));
  return out;
}

RunResult run_loop(Algorithm algorithm, Target& target, const MixtureParams& theta_1,
                   const TamisConfig& cfg, Rng& rng, double ladder) {
  if (theta_1.dim() != target.dim())
    throw ContractViolation("initial proposal dimension does not match the target");
  cfg.validate(theta_1.components(), theta_1.dim());
  if (algorithm == Algorithm::npmc && !(ladder >= 0.0))
    throw ConfigError("N-PMC ladder must be >= 0");

  RunResult result;
  result.algorithm = algorithm;
  MixtureParams theta = theta_1;
  double cumulative_ess = 0.0;
  const std::uint64_t evals_at_start = target.evaluations();

  std::vector<MixtureParams> proposals;
  std::vector<Index> counts;
  DensityCache cache;

  for (int t = 1; t <= cfg.max_iterations; ++t) {
    const Index n = cfg.draws_at(t);
    SampleBatch draws = mixture_sample(theta, n, rng, t);

    Eigen::VectorXd log_pi;
    try {
      log_pi = target.log_density(draws.points);
    } catch (const TargetEvaluationError& e) {
      result.target_evaluations = target.evaluations() - evals_at_start;
      throw RunAborted("stage " + std::to_string(t) + ": " + e.what(), std::move(result));
    }

    proposals.push_back(theta);
    counts.push_back(n);
    Eigen::VectorXd log_q;
    if (algorithm == Algorithm::amis) {
      // Extend the cache: new proposal on old draws, all proposals on new draws.
      for (std::size_t u = 0; u < cache.size(); ++u)
        cache[u].push_back(theta.log_density_rows(result.records[u].draws.points));
      cache.emplace_back();
      for (const auto& p : proposals) cache.back().push_back(p.log_density_rows(draws.points));
      log_q = amis_log_q(cache, cache.size() - 1, counts);
    } else {
      log_q = theta.log_density_rows(draws.points);
    }

    LogWeightBatch log_w = log_weights(log_pi, log_q);
    const double ess_t = ess(log_w);
    const double kl = kl_hat(log_w.normalized());
    IterationRecord rec{t,
                        theta,
                        std::move(draws),
                        std::move(log_pi),
                        std::move(log_w),
                        ess_t,
                        std::nullopt,
                        std::nullopt,
                        kl,
                        target.evaluations() - evals_at_start};
    cumulative_ess += ess_t;

    const bool reached = cumulative_ess > cfg.ess_predefined;
    if (reached || t == cfg.max_iterations) {
      result.stop_reason = reached ? StopReason::ess_reached : StopReason::max_iterations;
      result.records.push_back(std::move(rec));
      break;
    }

    const double ess_min = std::min(cfg.ess_min, double(n));
    Eigen::MatrixXd data;
    if (algorithm == Algorithm::amis) {
      Index total = 0;
      for (Index c : counts) total += c;
      Eigen::VectorXd pooled(total);
      Index offset = 0;
      for (std::size_t u = 0; u < cache.size(); ++u) {
        const Eigen::VectorXd& lp = u < result.records.size() ? result.records[u].log_pi : rec.log_pi;
        const Index nu = lp.size();
        pooled.segment(offset, nu) = lp - amis_log_q(cache, u, counts);
        offset += nu;
      }
      const auto idx = resample(pooled, {n, cfg.resample_scheme}, rng);
      data.resize(n, theta.dim());
      for (Index i = 0; i < n; ++i) {
        Index flat = idx[static_cast<std::size_t>(i)];
        std::size_t u = 0;
        while (flat >= counts[u]) flat -= counts[u++];
        const Eigen::MatrixXd& src =
            u < result.records.size() ? result.records[u].draws.points : rec.draws.points;
        data.row(i) = src.row(flat);
      }
      rec.beta_t = 1.0;
      rec.s_log_t = -std::numeric_limits<double>::infinity();
    } else {
      double beta;
      double tau;
      if (algorithm == Algorithm::tamis) {
        beta = calibrate_beta(rec.log_w, ess_min, cfg.bisection_tol, cfg.bisection_max_iter);
        tau = cfg.tau;
      } else {
        beta = npmc_beta_schedule(t, ladder);
        tau = 0.0;
      }
      const TemperingResult tr = anti_truncate(rec.log_w, beta, tau);
      const auto idx = resample(tr.log_w_hat, {n, cfg.resample_scheme}, rng);
      data.resize(n, theta.dim());
      for (Index i = 0; i < n; ++i) data.row(i) = rec.draws.points.row(idx[static_cast<std::size_t>(i)]);
      rec.beta_t = beta;
      rec.s_log_t = tr.s_log;
    }

    theta = em_fit(theta, data, cfg.em);
    result.records.push_back(std::move(rec));
  }

  std::vector<StageView> views;
  views.reserve(result.records.size());
  for (const auto& r : result.records) views.push_back({r.draws.points, r.theta, r.log_pi});
  result.final_log_w = recycle_weights(views);
  result.final_ess = ess(*result.final_log_w);
  result.target_evaluations = target.evaluations() - evals_at_start;
  return result;
}

void write_double(std::ostream& os, double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  os << buf;
}

}  // namespace

RunResult run_tamis(Target& target, const MixtureParams& theta_1, const TamisConfig& cfg, Rng& rng) {
  return run_loop(Algorithm::tamis, target, theta_1, cfg, rng, 0.0);
}

RunResult run_npmc(Target& target, const MixtureParams& theta_1, const TamisConfig& cfg,
                   double ladder, Rng& rng) {
  return run_loop(Algorithm::npmc, target, theta_1, cfg, rng, ladder);
}

RunResult run_amis(Target& target, const MixtureParams& theta_1, const TamisConfig& cfg, Rng& rng) {
  return run_loop(Algorithm::amis, target, theta_1, cfg, rng, 0.0);
}

RunResult run_algorithm(Algorithm algorithm, Target& target, const MixtureParams& theta_1,
                        const TamisConfig& cfg, Rng& rng, double ladder) {
  return run_loop(algorithm, target, theta_1, cfg, rng, ladder);
}

void write_trace_csv(std::ostream& os, const RunResult& result) {
  os << "t,ess_t,beta_t,s_log_t,kl_hat_t,n_target_evals\n";
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (const auto& r : result.records) {
    os << r.t << ',';
    write_double(os, r.ess_t);
    os << ',';
    write_double(os, r.beta_t.value_or(nan));
    os << ',';
    write_double(os, r.s_log_t.value_or(nan));
    os << ',';
    write_double(os, r.kl_hat_t);
    os << ',' << r.n_target_evals << '\n';
  }
}

void write_particles_csv(std::ostream& os, const RunResult& result) {
  if (result.records.empty()) return;
  const Index d = result.records.front().draws.points.cols();
  os << "stage,log_pi,log_w";
  for (Index j = 0; j < d; ++j) os << ",x" << (j + 1);
  os << '\n';
  Index flat = 0;
  for (const auto& r : result.records) {
    for (Index i = 0; i < r.draws.size(); ++i, ++flat) {
      os << r.t << ',';
      write_double(os, r.log_pi(i));
      os << ',';
      write_double(os, result.final_log_w ? result.final_log_w->values()(flat) : r.log_w.values()(i));
      for (Index j = 0; j < d; ++j) {
        os << ',';
        write_double(os, r.draws.points(i, j));
      }
      os << '\n';
    }
  }
}

WeightedMoments recycled_moments(const RunResult& result) {
  if (!result.final_log_w) throw ContractViolation("recycled_moments: run has no recycled weights");
  const Eigen::VectorXd w = result.final_log_w->normalized();
  const Index d = result.records.front().draws.points.cols();
  WeightedMoments m{Eigen::RowVectorXd::Zero(d), Eigen::RowVectorXd::Zero(d)};
  Index offset = 0;
  for (const auto& r : result.records) {
    m.mean += w.segment(offset, r.draws.size()).transpose() * r.draws.points;
    offset += r.draws.size();
  }
  offset = 0;
  for (const auto& r : result.records) {
    const Eigen::MatrixXd centered = r.draws.points.rowwise() - m.mean;
    m.variance += w.segment(offset, r.draws.size()).transpose() * centered.array().square().matrix();
    offset += r.draws.size();
  }
  return m;
}

}  // namespace tamis
