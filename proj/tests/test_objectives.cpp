#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "kdctc/objectives.hpp"
#include "kdctc/rng.hpp"

using namespace kdctc;

namespace {

// Independent per-sample oracles: plain softmax in long double, no shared
// code with the implementation.
long double softmax_prob(const std::vector<long double>& row, int target) {
  long double denom = 0;
  for (long double z : row) denom += std::exp(z);
  return std::exp(row[static_cast<std::size_t>(target)]) / denom;
}

double ce_oracle(const Tensor& logits, const std::vector<int>& labels) {
  const std::int64_t N = logits.shape[0], C = logits.shape[1];
  long double sum = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    std::vector<long double> row;
    for (std::int64_t j = 0; j < C; ++j) row.push_back(logits.at(n, j));
    sum += -std::log(softmax_prob(row, labels[static_cast<std::size_t>(n)]));
  }
  return static_cast<double>(sum / N);
}

double focal_oracle(const Tensor& logits, const std::vector<int>& labels, double gamma) {
  const std::int64_t N = logits.shape[0], C = logits.shape[1];
  long double sum = 0;
  for (std::int64_t n = 0; n < N; ++n) {
    std::vector<long double> row;
    for (std::int64_t j = 0; j < C; ++j) row.push_back(logits.at(n, j));
    const long double p = softmax_prob(row, labels[static_cast<std::size_t>(n)]);
    sum += -std::pow(1.0L - p, static_cast<long double>(gamma)) * std::log(p);
  }
  return static_cast<double>(sum / N);
}

Tensor random_logits(Rng& rng, std::int64_t n, std::int64_t c, double scale = 4.0) {
  Tensor t({n, c});
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

std::vector<int> random_labels(Rng& rng, std::int64_t n, int c) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
  return labels;
}

}  // namespace

TEST_CASE("cross entropy on uniform logits is log C") {
  Tensor logits({4, 8});
  logits.fill(0.37);
  const std::vector<int> labels = {0, 3, 5, 7};
  CHECK(cross_entropy(logits, labels) == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy saturates to ~0 on confident correct logits") {
  Tensor logits({1, 2});
  logits.at(0, 0) = 10;
  logits.at(0, 1) = -10;
  const double loss = cross_entropy(logits, {0});
  CHECK(loss == doctest::Approx(2.0611536224385579e-9).epsilon(1e-9));
}

TEST_CASE("cross entropy matches the per-sample oracle on random batches") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(6));
    const std::int64_t c = 2 + static_cast<std::int64_t>(rng.below(7));
    Tensor logits = random_logits(rng, n, c);
    const auto labels = random_labels(rng, n, static_cast<int>(c));
    CHECK(cross_entropy(logits, labels) == doctest::Approx(ce_oracle(logits, labels)).epsilon(1e-6));
  }
}

TEST_CASE("cross entropy rejects bad labels and non-finite logits") {
  Tensor logits({2, 3});
  CHECK_THROWS_AS(cross_entropy(logits, {0, 3}), ValidationError);
  CHECK_THROWS_AS(cross_entropy(logits, {-1, 0}), ValidationError);
  CHECK_THROWS_AS(cross_entropy(logits, {0}), ValidationError);
  logits.at(0, 0) = std::numeric_limits<real>::infinity();
  CHECK_THROWS_AS(cross_entropy(logits, {0, 1}), ValidationError);
}

TEST_CASE("focal loss with gamma 0 equals cross entropy") {
  Rng rng(12);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor logits = random_logits(rng, 5, 4);
    const auto labels = random_labels(rng, 5, 4);
    CHECK(focal_loss(logits, labels, 0.0) == doctest::Approx(cross_entropy(logits, labels)).epsilon(1e-6));
  }
}

TEST_CASE("focal loss analytic point: p=0.5, gamma=2") {
  // Two equal logits give p = 0.5 for either label.
  Tensor logits({1, 2});
  logits.fill(1.3);
  CHECK(focal_loss(logits, {0}, 2.0) == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("focal loss matches the per-sample oracle on random batches") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor logits = random_logits(rng, 5, 4);
    const auto labels = random_labels(rng, 5, 4);
    CHECK(focal_loss(logits, labels, 2.0) == doctest::Approx(focal_oracle(logits, labels, 2.0)).epsilon(1e-6));
  }
}

TEST_CASE("focal loss never exceeds cross entropy") {
  Rng rng(14);
  for (double gamma : {0.0, 0.5, 2.0, 7.0}) {
    for (int trial = 0; trial < 25; ++trial) {
      Tensor logits = random_logits(rng, 6, 5);
      const auto labels = random_labels(rng, 6, 5);
      CHECK(focal_loss(logits, labels, gamma) <= cross_entropy(logits, labels) + 1e-12);
    }
  }
}

TEST_CASE("loss gradients match central finite differences") {
  Rng rng(15);
  const double h = 1e-6;
  for (int trial = 0; trial < 5; ++trial) {
    Tensor logits = random_logits(rng, 3, 4, 2.0);
    const auto labels = random_labels(rng, 3, 4);

    const Tensor ce_grad = cross_entropy_grad(logits, labels);
    const Tensor fl_grad = focal_loss_grad(logits, labels, 2.0);
    for (std::int64_t i = 0; i < logits.numel(); ++i) {
      const real saved = logits[i];
      logits[i] = saved + h;
      const double ce_p = cross_entropy(logits, labels), fl_p = focal_loss(logits, labels, 2.0);
      logits[i] = saved - h;
      const double ce_m = cross_entropy(logits, labels), fl_m = focal_loss(logits, labels, 2.0);
      logits[i] = saved;
      CHECK(ce_grad[i] == doctest::Approx((ce_p - ce_m) / (2 * h)).epsilon(1e-5));
      CHECK(fl_grad[i] == doctest::Approx((fl_p - fl_m) / (2 * h)).epsilon(1e-5));
    }
  }
}

TEST_CASE("teacher hard label takes the row argmax with lowest-index ties") {
  Tensor logits({3, 3});
  const real rows[3][3] = {{0.1, 2.0, -1.0}, {3.0, 3.0, 0.0}, {-5.0, -4.0, -4.5}};
  for (int n = 0; n < 3; ++n)
    for (int j = 0; j < 3; ++j) logits.at(n, j) = rows[n][j];
  CHECK(teacher_hard_label(logits) == std::vector<int>{1, 0, 1});
}

TEST_CASE("teacher hard label is invariant under softmax, shift and positive scale") {
  Rng rng(16);
  for (int trial = 0; trial < 1000; ++trial) {
    Tensor row = random_logits(rng, 1, 6);
    const auto base = teacher_hard_label(row);

    Tensor softmaxed({1, 6});
    real denom = 0;
    for (int j = 0; j < 6; ++j) denom += std::exp(row.at(0, j));
    for (int j = 0; j < 6; ++j) softmaxed.at(0, j) = std::exp(row.at(0, j)) / denom;
    CHECK(teacher_hard_label(softmaxed) == base);

    Tensor shifted = row;
    const real shift = rng.uniform(-10, 10), scale = rng.uniform(0.1, 5.0);
    for (auto& v : shifted.data) v = v * scale + shift;
    CHECK(teacher_hard_label(shifted) == base);
  }
}

TEST_CASE("distillation variant switches exactly at n_min") {
  Rng rng(17);
  Tensor logits = random_logits(rng, 4, 5);
  const auto labels = random_labels(rng, 4, 5);
  LossConfig cfg;  // n_min = 20

  auto variant_at = [&](int n) { return distillation_loss(logits, labels, n, cfg).second; };
  CHECK(variant_at(19) == DistVariant::focal);
  CHECK(variant_at(20) == DistVariant::focal);
  CHECK(variant_at(21) == DistVariant::cross_entropy);
  CHECK(variant_at(15) == DistVariant::focal);          // 5% split of the 312-base protocol
  CHECK(variant_at(62) == DistVariant::cross_entropy);  // 20% split
  CHECK(variant_at(3) == DistVariant::focal);           // 1% split

  CHECK(distillation_loss(logits, labels, 20, cfg).first ==
        doctest::Approx(focal_loss(logits, labels, cfg.focal_gamma)).epsilon(1e-12));
  CHECK(distillation_loss(logits, labels, 21, cfg).first ==
        doctest::Approx(cross_entropy(logits, labels)).epsilon(1e-12));
  CHECK_THROWS_AS(distillation_loss(logits, labels, 0, cfg), ValidationError);
}

TEST_CASE("total loss arithmetic") {
  LossConfig cfg;
  CHECK(total_loss(2.0, 1.0, cfg) == 1.05);

  cfg.alpha = 0;
  CHECK(total_loss(3.7, 9.9, cfg) == 0.5 * 3.7);
  CHECK(total_loss(0.0, 0.0, cfg) == 0.0);

  // Linearity in the distillation argument.
  Rng rng(18);
  LossConfig std_cfg;
  for (int trial = 0; trial < 100; ++trial) {
    const real x = rng.uniform(0, 10), y = rng.uniform(0, 10);
    CHECK(total_loss(x, y, std_cfg) - total_loss(x, 0, std_cfg) ==
          doctest::Approx(std_cfg.alpha * 0.5 * y).epsilon(1e-12));
  }
}

TEST_CASE("loss config validation") {
  LossConfig cfg;
  cfg.alpha = -0.1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = LossConfig{};
  cfg.n_min = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = LossConfig{};
  cfg.focal_gamma = -1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
