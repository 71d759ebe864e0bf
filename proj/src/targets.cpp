#include "tamis/targets.hpp"

#include <json.hpp>

#include <cerrno>
#include <csignal>
#include <cstdio>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

namespace tamis {

Eigen::VectorXd Target::log_density(const Eigen::MatrixXd& points) {
  if (points.cols() != dim()) throw ContractViolation("target: dimension mismatch");
  Eigen::VectorXd out(points.rows());
  evaluate(points, out);
  return out;
}

GaussianIidTarget::GaussianIidTarget(double mean, double variance, Index dim)
    : mean_(mean), variance_(variance), dim_(dim) {
  if (!(variance > 0)) throw ContractViolation("gaussian_iid: variance must be > 0");
  if (dim < 1) throw ContractViolation("gaussian_iid: dimension must be >= 1");
}

void GaussianIidTarget::evaluate(const Eigen::MatrixXd& points, Eigen::VectorXd& out) {
  const double log_norm = -0.5 * double(dim_) * std::log(2.0 * std::numbers::pi * variance_);
  out = (log_norm - 0.5 * (points.array() - mean_).square().rowwise().sum() / variance_).matrix();
  count(static_cast<std::uint64_t>(points.rows()));
}

RosenbrockTarget::RosenbrockTarget(double sigma2, double b, Index dim)
    : sigma2_(sigma2), b_(b), dim_(dim) {
  if (!(sigma2 > 0)) throw ContractViolation("rosenbrock: sigma2 must be > 0");
  if (dim < 2) throw ContractViolation("rosenbrock: dimension must be >= 2");
}

void RosenbrockTarget::evaluate(const Eigen::MatrixXd& points, Eigen::VectorXd& out) {
  for (Index i = 0; i < points.rows(); ++i)
    out(i) = rosenbrock_log_density(sigma2_, b_, points.row(i));
  count(static_cast<std::uint64_t>(points.rows()));
}

void MixtureTarget::evaluate(const Eigen::MatrixXd& points, Eigen::VectorXd& out) {
  out = theta_.log_density_rows(points);
  count(static_cast<std::uint64_t>(points.rows()));
}

// ---------------------------------------------------------------------------
// Blackbox subprocess

namespace {

std::string format_point(const Eigen::Ref<const Eigen::RowVectorXd>& x) {
  std::string line = "{\"x\":[";
  char buf[32];
  for (Index j = 0; j < x.size(); ++j) {
    if (j) line += ',';
    std::snprintf(buf, sizeof buf, "%.17g", x(j));
    line += buf;
  }
  line += "]}\n";
  return line;
}

}  // namespace

BlackboxTarget::BlackboxTarget(std::vector<std::string> argv, Index dim,
                               std::chrono::milliseconds timeout)
    : dim_(dim), timeout_(timeout) {
  if (argv.empty()) throw ContractViolation("blackbox: empty command line");
  if (dim < 1) throw ContractViolation("blackbox: dimension must be >= 1");
  std::signal(SIGPIPE, SIG_IGN);

  int in_pipe[2];
  int out_pipe[2];
  if (pipe(in_pipe) != 0) throw std::runtime_error("blackbox: pipe() failed");
  if (pipe(out_pipe) != 0) {
    close(in_pipe[0]);
    close(in_pipe[1]);
    throw std::runtime_error("blackbox: pipe() failed");
  }

  std::vector<char*> cargv;
  for (auto& a : argv) cargv.push_back(a.data());
  cargv.push_back(nullptr);

  pid_ = fork();
  if (pid_ < 0) throw std::runtime_error("blackbox: fork() failed");
  if (pid_ == 0) {
    // Own process group, so shutdown also reaches anything the command spawns.
    setpgid(0, 0);
    dup2(in_pipe[0], STDIN_FILENO);
    dup2(out_pipe[1], STDOUT_FILENO);
    close(in_pipe[0]);
    close(in_pipe[1]);
    close(out_pipe[0]);
    close(out_pipe[1]);
    execvp(cargv[0], cargv.data());
    _exit(127);
  }
  setpgid(pid_, pid_);
  close(in_pipe[0]);
  close(out_pipe[1]);
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
  fcntl(to_child_, F_SETFD, FD_CLOEXEC);
  fcntl(from_child_, F_SETFD, FD_CLOEXEC);

  try {
    const std::string hello = "{\"hello\":{\"dim\":" + std::to_string(dim_) + "}}\n";
    send_line(hello, -1);
    const auto reply = nlohmann::json::parse(read_line(-1));
    if (!reply.contains("hello") || reply["hello"].value("dim", Index(-1)) != dim_)
      throw std::runtime_error("blackbox: handshake mismatch, got " + reply.dump());
  } catch (const nlohmann::json::exception& e) {
    shutdown();
    throw std::runtime_error(std::string("blackbox: malformed handshake: ") + e.what());
  } catch (...) {
    shutdown();
    throw;
  }
}

BlackboxTarget::~BlackboxTarget() { shutdown(); }

void BlackboxTarget::shutdown() {
  if (to_child_ >= 0) close(to_child_);
  if (from_child_ >= 0) close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    int status = 0;
    // Give the child a moment to exit on EOF before killing it.
    for (int i = 0; i < 50; ++i) {
      if (waitpid(pid_, &status, WNOHANG) == pid_) {
        kill(-pid_, SIGKILL);
        pid_ = -1;
        return;
      }
      usleep(2000);
    }
    kill(-pid_, SIGKILL);
    waitpid(pid_, &status, 0);
    pid_ = -1;
  }
}

void BlackboxTarget::send_line(const std::string& line, Index particle) {
  if (to_child_ < 0) throw TargetEvaluationError(particle, "subprocess channel closed");
  std::size_t done = 0;
  while (done < line.size()) {
    const ssize_t n = write(to_child_, line.data() + done, line.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TargetEvaluationError(particle, std::string("write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

std::string BlackboxTarget::read_line(Index particle) {
  const auto deadline = std::chrono::steady_clock::now() + timeout_;
  for (;;) {
    const auto nl = pending_.find('\n');
    if (nl != std::string::npos) {
      std::string line = pending_.substr(0, nl);
      pending_.erase(0, nl + 1);
      return line;
    }
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
        deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) throw TargetEvaluationError(particle, "timed out waiting for reply");
    pollfd pfd{from_child_, POLLIN, 0};
    const int ready = poll(&pfd, 1, static_cast<int>(left.count()));
    if (ready < 0) {
      if (errno == EINTR) continue;
      throw TargetEvaluationError(particle, "poll failed");
    }
    if (ready == 0) continue;
    char buf[4096];
    const ssize_t n = read(from_child_, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TargetEvaluationError(particle, "read failed");
    }
    if (n == 0) throw TargetEvaluationError(particle, "subprocess exited");
    pending_.append(buf, static_cast<std::size_t>(n));
  }
}

double BlackboxTarget::evaluate_one(const Eigen::Ref<const Eigen::RowVectorXd>& x,
                                    Index particle) {
  send_line(format_point(x), particle);
  const std::string line = read_line(particle);
  nlohmann::json reply;
  try {
    reply = nlohmann::json::parse(line);
  } catch (const nlohmann::json::exception&) {
    throw TargetEvaluationError(particle, "malformed response: " + line);
  }
  if (!reply.is_object() || !reply.contains("logpi"))
    throw TargetEvaluationError(particle, "response lacks logpi: " + line);
  const auto& v = reply["logpi"];
  double value;
  if (v.is_null()) {
    value = -std::numeric_limits<double>::infinity();
  } else if (v.is_number()) {
    value = v.get<double>();
  } else {
    throw TargetEvaluationError(particle, "logpi is not a number: " + line);
  }
  if (std::isnan(value) || value == std::numeric_limits<double>::infinity())
    throw TargetEvaluationError(particle, "logpi must be finite or -inf");
  count(1);
  return value;
}

void BlackboxTarget::evaluate(const Eigen::MatrixXd& points, Eigen::VectorXd& out) {
  for (Index i = 0; i < points.rows(); ++i) out(i) = evaluate_one(points.row(i), i);
}

// ---------------------------------------------------------------------------

void validate(const TargetSpec& spec) {
  switch (spec.kind) {
    case TargetSpec::Kind::gaussian_iid:
      if (!(spec.variance > 0)) throw ContractViolation("gaussian_iid: variance must be > 0");
      if (spec.dim < 1) throw ContractViolation("gaussian_iid: dimension must be >= 1");
      break;
    case TargetSpec::Kind::rosenbrock:
      if (!(spec.sigma2 > 0)) throw ContractViolation("rosenbrock: sigma2 must be > 0");
      if (spec.dim < 2) throw ContractViolation("rosenbrock: dimension must be >= 2");
      break;
    case TargetSpec::Kind::blackbox:
      if (spec.command.empty()) throw ContractViolation("blackbox: command is required");
      if (spec.dim < 1) throw ContractViolation("blackbox: dimension must be >= 1");
      if (!(spec.timeout_seconds > 0)) throw ContractViolation("blackbox: timeout must be > 0");
      break;
  }
}

std::unique_ptr<Target> make_target(const TargetSpec& spec) {
  validate(spec);
  switch (spec.kind) {
    case TargetSpec::Kind::gaussian_iid:
      return std::make_unique<GaussianIidTarget>(spec.mean, spec.variance, spec.dim);
    case TargetSpec::Kind::rosenbrock:
      return std::make_unique<RosenbrockTarget>(spec.sigma2, spec.b, spec.dim);
    case TargetSpec::Kind::blackbox:
      return std::make_unique<BlackboxTarget>(
          spec.command, spec.dim,
          std::chrono::milliseconds(static_cast<long>(spec.timeout_seconds * 1000.0)));
  }
  throw ContractViolation("unknown target kind");
}

}  // namespace tamis
