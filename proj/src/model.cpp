#include "tamis/model.hpp"

#include <json.hpp>

#include <cstdio>

namespace tamis {

namespace {

void append_number(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17e", v);
  out += buf;
}

void append_matrix(std::string& out, const Eigen::MatrixXd& m) {
  out += '[';
  for (Index k = 0; k < m.rows(); ++k) {
    if (k) out += ',';
    out += '[';
    for (Index j = 0; j < m.cols(); ++j) {
      if (j) out += ',';
      append_number(out, m(k, j));
    }
    out += ']';
  }
  out += ']';
}

}  // namespace

std::string to_record(const MixtureParams& theta) {
  std::string out = "{\"K\":" + std::to_string(theta.components()) +
                    ",\"d\":" + std::to_string(theta.dim()) + ",\"weights\":[";
  for (Index k = 0; k < theta.components(); ++k) {
    if (k) out += ',';
    append_number(out, theta.weights()(k));
  }
  out += "],\"means\":";
  append_matrix(out, theta.means());
  out += ",\"variances\":";
  append_matrix(out, theta.variances());
  out += ",\"variance_floor\":";
  append_number(out, theta.variance_floor());
  out += '}';
  return out;
}

namespace {

MixtureParams parse_record(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  const auto k = j.at("K").get<Index>();
  const auto d = j.at("d").get<Index>();
  if (k < 1 || d < 1) throw ContractViolation("mixture record: K and d must be >= 1");
  const auto& w = j.at("weights");
  const auto& mu = j.at("means");
  const auto& var = j.at("variances");
  if (Index(w.size()) != k || Index(mu.size()) != k || Index(var.size()) != k)
    throw ContractViolation("mixture record: component count mismatch");
  Eigen::VectorXd weights(k);
  Eigen::MatrixXd means(k, d), variances(k, d);
  for (Index c = 0; c < k; ++c) {
    weights(c) = w[c].get<double>();
    if (Index(mu[c].size()) != d || Index(var[c].size()) != d)
      throw ContractViolation("mixture record: dimension mismatch");
    for (Index i = 0; i < d; ++i) {
      means(c, i) = mu[c][i].get<double>();
      variances(c, i) = var[c][i].get<double>();
    }
  }
  const double floor = j.value("variance_floor", -1.0);
  return MixtureParams(std::move(weights), std::move(means), std::move(variances), floor);
}

}  // namespace

MixtureParams mixture_from_record(const std::string& text) {
  try {
    return parse_record(text);
  } catch (const nlohmann::json::exception& e) {
    throw ContractViolation(std::string("mixture record: ") + e.what());
  }
}

}  // namespace tamis
