#pragma once

#include <string>
#include <utility>
#include <vector>

#include "kdctc/tensor.hpp"

namespace kdctc {

enum class DistVariant { focal, cross_entropy };

const char* to_string(DistVariant v);

struct LossConfig {
  real alpha = 0.1;        // distillation weight
  int n_min = 20;          // per-class count at or below which focal replaces CE
  real focal_gamma = 2.0;
  real main_weight = 0.5;
  real dist_weight = 0.5;

  void validate() const;
};

// Per-step record of the loss decomposition.
struct LossReport {
  real main_loss = 0;
  real dist_loss = 0;
  real total = 0;
  DistVariant dist_variant = DistVariant::cross_entropy;
  int images_per_class = 0;
};

// Mean over the batch of -log softmax(logits)[label], max-subtracted for
// stability.
real cross_entropy(const Tensor& logits, const std::vector<int>& labels);

// Mean over the batch of -(1-p)^gamma * log(p) with p the true-class softmax
// probability. No class-balancing weight term. gamma = 0 reduces to
// cross_entropy.
real focal_loss(const Tensor& logits, const std::vector<int>& labels, real gamma);

// d(loss)/d(logits) for the two losses above, shape of `logits`.
Tensor cross_entropy_grad(const Tensor& logits, const std::vector<int>& labels);
Tensor focal_loss_grad(const Tensor& logits, const std::vector<int>& labels, real gamma);

// Per-row argmax; ties break to the lowest class id. The result is an
// integer label vector, so no gradient can flow through it.
std::vector<int> teacher_hard_label(const Tensor& teacher_logits);

// Focal when images_per_class <= n_min, cross-entropy otherwise.
std::pair<real, DistVariant> distillation_loss(const Tensor& student_logits, const std::vector<int>& teacher_labels,
                                               int images_per_class, const LossConfig& cfg);
Tensor distillation_loss_grad(const Tensor& student_logits, const std::vector<int>& teacher_labels,
                              int images_per_class, const LossConfig& cfg);

// main_weight * main + alpha * dist_weight * dist.
real total_loss(real main_loss, real dist_loss, const LossConfig& cfg);

}  // namespace kdctc
