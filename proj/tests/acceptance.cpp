// Acceptance run: one PASS/FAIL line per criterion, thresholds pinned below.
#include "tamis/adapt.hpp"
#include "tamis/engine.hpp"
#include "tamis/experiment.hpp"
#include "tamis/oracle.hpp"
#include "tamis/targets.hpp"
#include "tamis/weights.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <string>
#include <thread>
#include <vector>

using namespace tamis;

namespace {

// Property criteria.
constexpr int kEssBatches = 1000;
constexpr int kEssBetaPoints = 50;
constexpr double kEssRuntimeSeconds = 5.0;
constexpr double kBisectionTol = 1e-6;
constexpr double kVerifyRuntimeSeconds = 30.0;
constexpr int kEmFixtures = 100;
constexpr double kEmSlack = 1e-10;
constexpr double kMleTol = 1e-10;
constexpr int kRecycleSeeds = 20;
constexpr double kRecycleSe = 3.0;

// Statistical criteria.
constexpr int kE31Seeds = 20;
constexpr double kKlStartTol = 0.5;
constexpr double kBetaNearOne = 0.99;
constexpr int kBetaNearOneMinRuns = 18;
constexpr int kSweepSeeds = 60;
constexpr double kMseRatioMax = 2.0;
constexpr int kRosenSeeds = 50;
constexpr double kBeatAmisFraction = 0.90;
constexpr double kBeatNpmcFraction = 0.70;
constexpr int kHighDimIterations = 200;
constexpr int kHighDimWindow = 50;
constexpr double kBetaPlateauSpread = 0.1;

int failures = 0;

// Counter mismatches in any statistical run fail the criterion that made the run.
std::atomic<int> counter_mismatches{0};
int mismatches_reported = 0;

void report(int id, bool ok, const std::string& detail) {
  const int fresh = counter_mismatches.load() - mismatches_reported;
  mismatches_reported += fresh;
  if (fresh > 0) ok = false;
  std::printf("%s criterion %d: %s%s\n", ok ? "PASS" : "FAIL", id, detail.c_str(),
              fresh > 0 ? " [target counter mismatch]" : "");
  std::fflush(stdout);
  if (!ok) ++failures;
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

template <class T>
std::vector<T> parallel_map(int n, const std::function<T(int)>& fn) {
  std::vector<T> out(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  const int workers = std::max(1u, std::thread::hardware_concurrency());
  std::vector<std::thread> pool;
  for (int w = 0; w < std::min(workers, n); ++w)
    pool.emplace_back([&] {
      for (int i = next++; i < n; i = next++) out[static_cast<std::size_t>(i)] = fn(i);
    });
  for (auto& t : pool) t.join();
  return out;
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

std::uint64_t draws_total(const RunResult& r) {
  std::uint64_t n = 0;
  for (const auto& rec : r.records) n += std::uint64_t(rec.draws.points.rows());
  return n;
}

RunResult checked(RunResult r) {
  if (r.target_evaluations != draws_total(r) || r.records.back().n_target_evals != r.target_evaluations)
    ++counter_mismatches;
  return r;
}

ExperimentConfig gaussian_sweep(double ess_min, double tau, std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.target.kind = TargetSpec::Kind::gaussian_iid;
  cfg.target.dim = 50;
  cfg.target.mean = 50.0;
  cfg.target.variance = 5.0;
  cfg.init.components = 5;
  cfg.init.variances = {200.0};
  cfg.run.draws = {2000};
  cfg.run.ess_min = ess_min;
  cfg.run.tau = tau;
  cfg.run.ess_predefined = 10000.0;
  cfg.run.max_iterations = 300;
  cfg.seed = seed;
  return cfg;
}

// What the statistical criteria read from a finished run.
struct Digest {
  ReplicateSummary summary;
  double kl_hat_first = 0.0;
  double max_beta = 0.0;
  double cumulative_ess = 0.0;
  bool ess_stop = false;
};

std::vector<Digest> sweep(const ExperimentConfig& cfg, int seeds) {
  return parallel_map<Digest>(seeds, [&](int rep) {
    const RunResult r = checked(run_replicate(cfg, rep));
    Digest g;
    g.summary = summarize(r, cfg.target);
    g.summary.seed = cfg.seed + std::uint64_t(rep);
    g.kl_hat_first = r.records.front().kl_hat_t;
    for (const auto& rec : r.records) {
      if (rec.beta_t) g.max_beta = std::max(g.max_beta, *rec.beta_t);
      g.cumulative_ess += rec.ess_t;
    }
    g.ess_stop = r.stop_reason == StopReason::ess_reached;
    return g;
  });
}

std::vector<double> variance_mse(const std::vector<Digest>& runs) {
  std::vector<double> out;
  for (const auto& g : runs) out.push_back(g.summary.mse_var_trace);
  return out;
}

std::vector<double> convergence(const std::vector<Digest>& runs) {
  std::vector<double> out;
  for (const auto& g : runs)
    out.push_back(g.summary.convergence_iteration < 0 ? std::numeric_limits<double>::infinity()
                                                      : double(g.summary.convergence_iteration));
  return out;
}

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rep = oracle::ess_monotonicity_suite(kEssBatches, kEssBetaPoints, 1);
  const double dt = seconds_since(t0);
  report(1, rep.violations == 0 && rep.batches == kEssBatches && dt < kEssRuntimeSeconds,
         fmt("ESS(beta) non-increasing on %d batches x %d betas (max N %lld), %d violations, "
             "worst margin %.3g, %.2f s",
             rep.batches, kEssBetaPoints, (long long)rep.max_size, rep.violations, rep.worst_margin, dt));
}

void criterion_2() {
  const LogWeightBatch two(Eigen::Vector2d(0.0, -100.0));
  // ESS of (1, r) is (1 + r)^2 / (1 + r^2); ESS = 1.5 gives r = 2 - sqrt(3).
  const double exact = -std::log(2.0 - std::sqrt(3.0)) / 100.0;
  const double got = calibrate_beta(two, 1.5, kBisectionTol);
  const double exact_b = std::log(1.0 + std::sqrt(2.0)) / 100.0;
  const double got_b = calibrate_beta(two, 1.0 + 1.0 / std::sqrt(2.0), kBisectionTol);

  Rng rng(2);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  int wrong_ones = 0;
  for (int b = 0; b < 1000; ++b) {
    Eigen::VectorXd lw(2 + b % 200);
    const double scale = 0.01 + 5.0 * unif(rng);
    for (Index i = 0; i < lw.size(); ++i) lw(i) = scale * gauss(rng);
    const LogWeightBatch batch(lw);
    const double ess1 = ess(batch);
    if (calibrate_beta(batch, 1.0 + unif(rng) * (ess1 - 1.0)) != 1.0) ++wrong_ones;
  }
  const bool ok = std::abs(got - exact) < kBisectionTol && std::abs(got_b - exact_b) < kBisectionTol &&
                  wrong_ones == 0;
  report(2, ok,
         fmt("ESS_min=1.5 on (1, e^-100): beta %.9f vs closed form %.9f; ESS_min=1+1/sqrt2: %.9f vs "
             "%.9f; beta=1 when ESS(1)>=ESS_min in %d/1000 batches",
             got, exact, got_b, exact_b, 1000 - wrong_ones));
}

void criterion_3() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto rows = oracle::verify_all();
  const double dt = seconds_since(t0);
  int failed = 0;
  std::string first_failure;
  for (const auto& r : rows)
    if (!r.passed && failed++ == 0) first_failure = " first failure: " + r.name + " " + r.detail;
  report(3, failed == 0 && dt < kVerifyRuntimeSeconds,
         fmt("verify: %d/%d checks passed in %.2f s%s", int(rows.size()) - failed, int(rows.size()), dt,
             first_failure.c_str()));
}

void criterion_4() {
  Rng rng(4);
  std::uniform_int_distribution<int> kdist(1, 6), ddist(1, 6), ndist(50, 600);
  std::uniform_real_distribution<double> unif(-6.0, 6.0), vdist(0.05, 10.0), wdist(0.1, 1.0);
  double worst_drop = 0.0;
  int violations = 0;
  for (int f = 0; f < kEmFixtures; ++f) {
    const Index k = kdist(rng), d = ddist(rng);
    Eigen::MatrixXd mu(k, d), var(k, d), mu0(k, d), var0(k, d);
    Eigen::VectorXd w(k);
    for (Index i = 0; i < k; ++i) {
      w(i) = wdist(rng);
      for (Index j = 0; j < d; ++j)
        mu(i, j) = unif(rng), var(i, j) = vdist(rng), mu0(i, j) = unif(rng), var0(i, j) = vdist(rng);
    }
    const Eigen::MatrixXd x = mixture_sample(MixtureParams(w, mu, var), ndist(rng), rng).points;
    const auto fit = em_fit_report(MixtureParams(Eigen::VectorXd::Ones(k), mu0, var0), x, {30, 0.0});
    for (std::size_t s = 1; s < fit.mean_log_likelihood.size(); ++s) {
      const double drop = fit.mean_log_likelihood[s - 1] - fit.mean_log_likelihood[s];
      worst_drop = std::max(worst_drop, drop);
      if (drop > kEmSlack) ++violations;
    }
  }

  double mle_err = 0.0;
  for (int f = 0; f < 20; ++f) {
    const Index d = ddist(rng);
    Eigen::VectorXd m(d), v(d);
    for (Index j = 0; j < d; ++j) m(j) = unif(rng), v(j) = vdist(rng);
    const Eigen::MatrixXd x = mixture_sample(MixtureParams::single(m, v), ndist(rng), rng).points;
    const auto fit = em_fit(MixtureParams::single(Eigen::VectorXd::Zero(d), Eigen::VectorXd::Ones(d)), x, {1, 0.0});
    const Eigen::RowVectorXd xm = x.colwise().mean();
    const Eigen::RowVectorXd xv = (x.rowwise() - xm).array().square().colwise().mean();
    mle_err = std::max({mle_err, (fit.means().row(0) - xm).cwiseAbs().maxCoeff(),
                        (fit.variances().row(0) - xv).cwiseAbs().maxCoeff()});
  }
  report(4, violations == 0 && mle_err < kMleTol,
         fmt("EM ascent on %d fixtures: %d steps dropped more than %.0e (worst drop %.3g); K=1 MLE max "
             "error %.3g",
             kEmFixtures, violations, kEmSlack, worst_drop, mle_err));
}

void criterion_5() {
  // pi = N(0.7, 1); stage 1 from N(0, 4), stage 2 from N(1.5, 2).
  const double truth = 0.7;
  const auto pi = MixtureParams::single(Eigen::VectorXd::Constant(1, truth), Eigen::VectorXd::Ones(1));
  const auto q1 = MixtureParams::single(Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 4.0));
  const auto q2 = MixtureParams::single(Eigen::VectorXd::Constant(1, 1.5), Eigen::VectorXd::Constant(1, 2.0));
  int inside = 0;
  std::vector<double> estimates;
  double worst_z = 0.0;
  for (int seed = 0; seed < kRecycleSeeds; ++seed) {
    Rng rng(5000 + std::uint64_t(seed));
    const Eigen::MatrixXd x1 = mixture_sample(q1, 2000, rng).points;
    const Eigen::MatrixXd x2 = mixture_sample(q2, 3000, rng).points;
    const Eigen::VectorXd p1 = pi.log_density_rows(x1), p2 = pi.log_density_rows(x2);
    const std::vector<StageView> stages{{x1, q1, p1}, {x2, q2, p2}};
    const Eigen::VectorXd w = recycle_weights(stages).normalized();
    Eigen::VectorXd x(5000);
    x << x1.col(0), x2.col(0);
    const double est = w.dot(x);
    const double se = std::sqrt((w.array().square() * (x.array() - est).square()).sum());
    const double z = std::abs(est - truth) / se;
    worst_z = std::max(worst_z, z);
    if (z < kRecycleSe) ++inside;
    estimates.push_back(est);
  }
  const double m = mean(estimates);
  double sd = 0.0;
  for (double e : estimates) sd += (e - m) * (e - m);
  sd = std::sqrt(sd / double(kRecycleSeeds - 1));
  const double pooled_z = std::abs(m - truth) / (sd / std::sqrt(double(kRecycleSeeds)));
  report(5, inside == kRecycleSeeds && pooled_z < kRecycleSe,
         fmt("recycled mean within %.0f SE of truth in %d/%d seeds (worst %.2f SE); average over seeds "
             "%.5f vs %.1f, %.2f SE",
             kRecycleSe, inside, kRecycleSeeds, worst_z, m, truth, pooled_z));
}

void criterion_6_direct(int& runs, int& mismatches) {
  std::vector<TargetSpec> specs(3);
  specs[0].kind = TargetSpec::Kind::gaussian_iid, specs[0].dim = 4, specs[0].mean = 1.0, specs[0].variance = 2.0;
  specs[1].kind = TargetSpec::Kind::rosenbrock, specs[1].dim = 3;
  specs[2].kind = TargetSpec::Kind::blackbox, specs[2].dim = 2, specs[2].command = {std::string(BLACKBOX_FIXTURE)};
  for (const auto& spec : specs)
    for (Algorithm alg : {Algorithm::tamis, Algorithm::npmc, Algorithm::amis})
      for (std::uint64_t seed : {1, 2, 3}) {
        TamisConfig cfg;
        cfg.draws = {300, 150, 250};
        cfg.ess_min = 60;
        cfg.ess_predefined = seed == 3 ? std::numeric_limits<double>::infinity() : 700.0;
        cfg.max_iterations = 8;
        Rng rng(seed);
        InitSpec init;
        init.components = 2;
        init.variances = {25.0};
        const auto theta = make_initial_proposal(init, spec.dim, rng);
        auto target = make_target(spec);
        const auto r = run_algorithm(alg, *target, theta, cfg, rng);
        ++runs;
        std::uint64_t expected = 0;
        for (int t = 1; t <= int(r.records.size()); ++t) expected += std::uint64_t(cfg.draws_at(t));
        if (target->evaluations() != expected || r.target_evaluations != expected ||
            draws_total(r) != expected)
          ++mismatches;
      }
}

void criterion_7_8() {
  const auto low = sweep(gaussian_sweep(100.0, 0.0, 7000), kE31Seeds);

  int kl_ok = 0, beta_ok = 0, stop_ok = 0;
  std::string kl_misses;
  for (const auto& g : low) {
    const double dev = std::abs(g.kl_hat_first - std::log(2000.0));
    if (dev < kKlStartTol)
      ++kl_ok;
    else
      kl_misses += fmt(" seed %llu at %.3f", (unsigned long long)g.summary.seed, g.kl_hat_first);
    if (g.max_beta >= kBetaNearOne) ++beta_ok;
    if (g.ess_stop && g.cumulative_ess > 10000.0) ++stop_ok;
  }
  report(7, kl_ok == kE31Seeds && beta_ok >= kBetaNearOneMinRuns && stop_ok == kE31Seeds,
         fmt("d=50, ESS_min=100, tau=0, %d seeds: kl_hat_1 within %.1f of log 2000 in %d (outside:%s); "
             "beta>=%.2f before stop in %d (need %d); cumulative ESS stop in %d",
             kE31Seeds, kKlStartTol, kl_ok, kl_misses.empty() ? " none" : kl_misses.c_str(), kBetaNearOne, beta_ok, kBetaNearOneMinRuns, stop_ok));

  const auto a = sweep(gaussian_sweep(100.0, 0.0, 8000), kSweepSeeds);
  const auto b = sweep(gaussian_sweep(1400.0, 0.0, 8000), kSweepSeeds);
  const double conv_a = median(convergence(a)), conv_b = median(convergence(b));
  const double mse_a = mean(variance_mse(a));
  const double mse_b = mean(variance_mse(b));
  const double ratio = std::max(mse_a, mse_b) / std::min(mse_a, mse_b);
  report(8, conv_b > conv_a && ratio < kMseRatioMax,
         fmt("%d seeds each: median convergence iteration %.1f (ESS_min=1400) vs %.1f (ESS_min=100); "
             "variance-trace MSE %.4g vs %.4g, ratio %.2f (limit %.1f)",
             kSweepSeeds, conv_b, conv_a, mse_b, mse_a, ratio, kMseRatioMax));
}

void criterion_9() {
  std::vector<double> mses;
  std::string detail;
  for (double tau : {0.0, 0.4, 0.9}) {
    const auto s = sweep(gaussian_sweep(300.0, tau, 9000), kSweepSeeds);
    mses.push_back(mean(variance_mse(s)));
    detail += fmt("tau=%.1f MSE %.4g (median conv %.0f); ", tau, mses.back(), median(convergence(s)));
  }
  const double ratio = *std::max_element(mses.begin(), mses.end()) / *std::min_element(mses.begin(), mses.end());
  report(9, ratio < kMseRatioMax,
         fmt("%d seeds each, d=50, ESS_min=300: %smax/min ratio %.2f (limit %.1f)", kSweepSeeds,
             detail.c_str(), ratio, kMseRatioMax));
}

void criterion_10() {
  ExperimentConfig cfg;
  cfg.target.kind = TargetSpec::Kind::rosenbrock;
  cfg.target.dim = 20;
  cfg.init.components = 5;
  cfg.init.mean_draw = InitSpec::MeanDraw::normal;
  cfg.init.mean_variances = {200.0 / 5.0};
  cfg.init.variances = {200.0};
  cfg.run.draws = {2000};
  cfg.run.ess_min = 100.0;
  cfg.run.tau = 0.4;
  cfg.run.ess_predefined = std::numeric_limits<double>::infinity();
  cfg.run.max_iterations = 20;
  cfg.seed = 10000;
  std::vector<std::vector<double>> ess(3);
  const Algorithm algs[3] = {Algorithm::tamis, Algorithm::amis, Algorithm::npmc};
  for (int a = 0; a < 3; ++a) {
    cfg.algorithm = algs[a];
    ess[std::size_t(a)] = parallel_map<double>(kRosenSeeds, [&](int r) { return checked(run_replicate(cfg, r)).final_ess; });
  }
  int beat_amis = 0, beat_npmc = 0;
  for (int r = 0; r < kRosenSeeds; ++r) {
    if (ess[0][std::size_t(r)] > ess[1][std::size_t(r)]) ++beat_amis;
    if (ess[0][std::size_t(r)] > ess[2][std::size_t(r)]) ++beat_npmc;
  }
  const double fa = double(beat_amis) / kRosenSeeds, fn = double(beat_npmc) / kRosenSeeds;
  report(10, fa >= kBeatAmisFraction && fn >= kBeatNpmcFraction,
         fmt("Rosenbrock d=20, blind init, %d paired seeds: TAMIS ESS > AMIS in %.0f%% (need %.0f%%), > "
             "N-PMC in %.0f%% (need %.0f%%); median final ESS %.0f / %.0f / %.0f",
             kRosenSeeds, 100 * fa, 100 * kBeatAmisFraction, 100 * fn, 100 * kBeatNpmcFraction,
             median(ess[0]), median(ess[1]), median(ess[2])));
}

void criterion_11() {
  ExperimentConfig cfg;
  cfg.target.kind = TargetSpec::Kind::gaussian_iid;
  cfg.target.dim = 300;
  cfg.target.mean = 10.0;
  cfg.target.variance = 5.0;
  cfg.init.components = 1;
  cfg.init.variances = {100.0};
  cfg.run.draws = {2000};
  cfg.run.ess_min = 1000.0;
  cfg.run.tau = 0.4;
  cfg.run.ess_predefined = std::numeric_limits<double>::infinity();
  cfg.run.max_iterations = kHighDimIterations;
  cfg.seed = 11000;
  const auto r = checked(run_replicate(cfg, 0));

  // Recycled estimate of the mean at the end of each window, over every draw so far.
  const int windows = kHighDimIterations / kHighDimWindow;
  std::vector<double> win_rmse, win_beta;
  std::vector<double> beta;
  for (const auto& rec : r.records)
    if (rec.beta_t) beta.push_back(*rec.beta_t);
  for (int k = 0; k < windows && std::size_t((k + 1) * kHighDimWindow) <= r.records.size(); ++k) {
    const auto hi = std::size_t((k + 1) * kHighDimWindow);
    std::vector<StageView> stages;
    for (std::size_t t = 0; t < hi; ++t)
      stages.push_back({r.records[t].draws.points, r.records[t].theta, r.records[t].log_pi});
    const Eigen::VectorXd w = recycle_weights(stages).normalized();
    Eigen::RowVectorXd m = Eigen::RowVectorXd::Zero(cfg.target.dim);
    Index row = 0;
    for (const auto& st : stages) {
      m += w.segment(row, st.points.rows()).transpose() * st.points;
      row += st.points.rows();
    }
    win_rmse.push_back(std::sqrt((m.array() - cfg.target.mean).square().mean()));
    const auto lo = std::size_t(k * kHighDimWindow), bhi = std::min(hi, beta.size());
    win_beta.push_back(std::accumulate(beta.begin() + std::ptrdiff_t(lo), beta.begin() + std::ptrdiff_t(bhi), 0.0) /
                       double(bhi - lo));
  }
  bool decreasing = int(win_rmse.size()) == windows;
  for (std::size_t k = 1; k < win_rmse.size(); ++k) decreasing = decreasing && win_rmse[k] < win_rmse[k - 1];
  const auto tail_lo = beta.begin() + std::ptrdiff_t(beta.size() - kHighDimWindow);
  const auto [tmin, tmax] = std::minmax_element(tail_lo, beta.end());
  const bool rises = win_beta.back() > win_beta.front();
  const bool plateau = *tmax - *tmin < kBetaPlateauSpread;
  std::string rm, bt;
  for (std::size_t k = 0; k < win_rmse.size(); ++k)
    rm += fmt("%s%.4g", k ? " > " : "", win_rmse[std::size_t(k)]), bt += fmt("%s%.3f", k ? ", " : "", win_beta[std::size_t(k)]);
  report(11, decreasing && rises && plateau,
         fmt("d=300, %zu stages: recycled mean RMSE at t=50,100,150,200 %s; windowed mean beta %s; last-window beta range "
             "[%.3f, %.3f]",
             r.records.size(), rm.c_str(), bt.c_str(), *tmin, *tmax));
}

void criterion_6() {
  int runs = 0, mismatches = 0;
  criterion_6_direct(runs, mismatches);
  report(6, mismatches == 0,
         fmt("target counter equals sum of N_t in %d/%d direct runs (tamis, npmc, amis; gaussian, "
             "rosenbrock, blackbox)",
             runs - mismatches, runs));
}

}  // namespace

// With arguments, runs only the listed criteria (7 and 8 share their runs).
int main(int argc, char** argv) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto wanted = [&](int id) {
    if (argc < 2) return true;
    for (int i = 1; i < argc; ++i)
      if (std::atoi(argv[i]) == id) return true;
    return false;
  };
  if (wanted(1)) criterion_1();
  if (wanted(2)) criterion_2();
  if (wanted(3)) criterion_3();
  if (wanted(4)) criterion_4();
  if (wanted(5)) criterion_5();
  if (wanted(6)) criterion_6();
  if (wanted(7) || wanted(8)) criterion_7_8();
  if (wanted(9)) criterion_9();
  if (wanted(10)) criterion_10();
  if (wanted(11)) criterion_11();

  std::printf("%s: %d failing line(s), %.0f s total\n", failures ? "FAILED" : "ALL PASSED", failures,
              seconds_since(t0));
  return failures ? 1 : 0;
}
