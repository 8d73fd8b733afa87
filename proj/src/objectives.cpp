#include "kdctc/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace kdctc {

namespace {

void check_inputs(const Tensor& logits, const std::vector<int>& labels) {
  if (logits.rank() != 2) throw ShapeError("logits must be NxC, got " + logits.shape_str());
  if (static_cast<std::int64_t>(labels.size()) != logits.shape[0])
    throw ValidationError("label count " + std::to_string(labels.size()) + " does not match batch " +
                          std::to_string(logits.shape[0]));
  const int C = static_cast<int>(logits.shape[1]);
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= C)
      throw ValidationError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                            " out of range [0, " + std::to_string(C) + ")");
  for (real v : logits.data)
    if (!std::isfinite(v)) throw ValidationError("non-finite logit");
}

// log-softmax of one row, max-subtracted.
void row_log_softmax(const real* row, std::int64_t C, real* out) {
  real mx = row[0];
  for (std::int64_t j = 1; j < C; ++j) mx = std::max(mx, row[j]);
  real sum = 0;
  for (std::int64_t j = 0; j < C; ++j) sum += std::exp(row[j] - mx);
  const real lse = mx + std::log(sum);
  for (std::int64_t j = 0; j < C; ++j) out[j] = row[j] - lse;
}

}  // namespace

const char* to_string(DistVariant v) { return v == DistVariant::focal ? "focal" : "cross_entropy"; }

void LossConfig::validate() const {
  if (alpha < 0) throw ConfigError("alpha must be >= 0");
  if (n_min < 1) throw ConfigError("n_min must be >= 1");
  if (focal_gamma < 0) throw ConfigError("focal_gamma must be >= 0");
  if (main_weight < 0 || dist_weight < 0) throw ConfigError("loss weights must be >= 0");
}

real cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  check_inputs(logits, labels);
  const std::int64_t N = logits.shape[0], C = logits.shape[1];
  std::vector<real> logp(static_cast<std::size_t>(C));
  real sum = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    row_log_softmax(logits.data.data() + n * C, C, logp.data());
    sum -= logp[static_cast<std::size_t>(labels[static_cast<std::size_t>(n)])];
  }
  return sum / static_cast<real>(N);
}

Tensor cross_entropy_grad(const Tensor& logits, const std::vector<int>& labels) {
  check_inputs(logits, labels);
  const std::int64_t N = logits.shape[0], C = logits.shape[1];
  Tensor grad(logits.shape);
  std::vector<real> logp(static_cast<std::size_t>(C));
  const real inv_n = real{1} / static_cast<real>(N);
  for (std::int64_t n = 0; n < N; ++n) {
    row_log_softmax(logits.data.data() + n * C, C, logp.data());
    const int t = labels[static_cast<std::size_t>(n)];
    for (std::int64_t j = 0; j < C; ++j) grad.at(n, j) = std::exp(logp[static_cast<std::size_t>(j)]) * inv_n;
    grad.at(n, t) -= inv_n;
  }
  return grad;
}

real focal_loss(const Tensor& logits, const std::vector<int>& labels, real gamma) {
  check_inputs(logits, labels);
  if (gamma < 0) throw ValidationError("focal gamma must be >= 0");
  const std::int64_t N = logits.shape[0], C = logits.shape[1];
  std::vector<real> logp(static_cast<std::size_t>(C));
  real sum = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    row_log_softmax(logits.data.data() + n * C, C, logp.data());
    const real lp = logp[static_cast<std::size_t>(labels[static_cast<std::size_t>(n)])];
    const real p = std::exp(lp);
    const real q = std::max(real{1} - p, real{0});
    sum -= std::pow(q, gamma) * lp;
  }
  return sum / static_cast<real>(N);
}

Tensor focal_loss_grad(const Tensor& logits, const std::vector<int>& labels, real gamma) {
  check_inputs(logits, labels);
  if (gamma < 0) throw ValidationError("focal gamma must be >= 0");
  const std::int64_t N = logits.shape[0], C = logits.shape[1];
  Tensor grad(logits.shape);
  std::vector<real> logp(static_cast<std::size_t>(C));
  const real inv_n = real{1} / static_cast<real>(N);
  for (std::int64_t n = 0; n < N; ++n) {
    row_log_softmax(logits.data.data() + n * C, C, logp.data());
    const int t = labels[static_cast<std::size_t>(n)];
    const real lp = logp[static_cast<std::size_t>(t)];
    const real p = std::max(std::exp(lp), real{1e-300});
    const real q = std::max(real{1} - p, real{0});
    // L = -(1-p)^g log p; dL/dp = g (1-p)^(g-1) log p - (1-p)^g / p.
    // The g=0 case drops the first term exactly.
    const real dldp = (gamma > 0 ? gamma * std::pow(q, gamma - 1) * lp : real{0}) - std::pow(q, gamma) / p;
    for (std::int64_t j = 0; j < C; ++j) {
      const real pj = std::exp(logp[static_cast<std::size_t>(j)]);
      const real dp_dz = p * ((j == t ? real{1} : real{0}) - pj);  // dp_t/dz_j
      grad.at(n, j) = dldp * dp_dz * inv_n;
    }
  }
  return grad;
}

std::vector<int> teacher_hard_label(const Tensor& teacher_logits) {
  if (teacher_logits.rank() != 2)
    throw ShapeError("teacher logits must be NxC, got " + teacher_logits.shape_str());
  const std::int64_t N = teacher_logits.shape[0], C = teacher_logits.shape[1];
  std::vector<int> labels(static_cast<std::size_t>(N));
  for (std::int64_t n = 0; n < N; ++n) {
    int best = 0;
    for (std::int64_t j = 1; j < C; ++j)
      if (teacher_logits.at(n, j) > teacher_logits.at(n, best)) best = static_cast<int>(j);
    labels[static_cast<std::size_t>(n)] = best;
  }
  return labels;
}

std::pair<real, DistVariant> distillation_loss(const Tensor& student_logits, const std::vector<int>& teacher_labels,
                                               int images_per_class, const LossConfig& cfg) {
  if (images_per_class < 1) throw ValidationError("images_per_class must be >= 1");
  if (images_per_class <= cfg.n_min)
    return {focal_loss(student_logits, teacher_labels, cfg.focal_gamma), DistVariant::focal};
  return {cross_entropy(student_logits, teacher_labels), DistVariant::cross_entropy};
}

Tensor distillation_loss_grad(const Tensor& student_logits, const std::vector<int>& teacher_labels,
                              int images_per_class, const LossConfig& cfg) {
  if (images_per_class < 1) throw ValidationError("images_per_class must be >= 1");
  if (images_per_class <= cfg.n_min) return focal_loss_grad(student_logits, teacher_labels, cfg.focal_gamma);
  return cross_entropy_grad(student_logits, teacher_labels);
}

real total_loss(real main_loss, real dist_loss, const LossConfig& cfg) {
  return cfg.main_weight * main_loss + cfg.alpha * cfg.dist_weight * dist_loss;
}

}  // namespace kdctc
