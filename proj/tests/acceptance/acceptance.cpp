// Acceptance suite: end-to-end checks of the protocol, the loss algebra, the
// gradients and the desk-scale learning behaviour. Prints one line per
// criterion; exits with the number of failures.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <vector>

#include "kdctc/experiment.hpp"
#include "kdctc/report.hpp"
#include "kdctc/synth.hpp"
#include "kdctc/trainer.hpp"

using namespace kdctc;
namespace fs = std::filesystem;

namespace {

struct CheckFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool cond, const std::string& what) {
  if (!cond) throw CheckFailure(what);
}

struct Skip : std::runtime_error {
  using std::runtime_error::runtime_error;
};

fs::path work_dir() {
  const fs::path p = fs::temp_directory_path() / "kdctc_acceptance";
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return std::string((std::istreambuf_iterator<char>(in)), {});
}

Tensor random_tensor(Rng& rng, std::vector<std::int64_t> shape, double scale) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

std::vector<int> random_labels(Rng& rng, std::int64_t n, int c) {
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(c)));
  return labels;
}

// --------------------------------------------------------------------------
// 1. Split-protocol exactness, via the prepare-splits CLI.

void criterion_split_protocol() {
  const char* cli = std::getenv("KDCTC_CLI");
  require(cli != nullptr, "KDCTC_CLI not set (path to the kdctc binary)");

  const fs::path base = work_dir() / "c1";
  fs::remove_all(base);
  generate_synthetic_texture_dataset(8, 625, 16, 0, base / "ds");

  std::ostringstream cmd;
  cmd << cli << " prepare-splits --root " << (base / "ds").string() << " --out-dir " << (base / "splits").string()
      << " --percentages 1,3,5,10,20,30,40,50,75,100 --seeds 0 > " << (base / "cli.log").string() << " 2>&1";
  require(std::system(cmd.str().c_str()) == 0, "prepare-splits CLI failed; see " + (base / "cli.log").string());

  const std::vector<std::pair<int, int>> expected = {{1, 3},   {3, 9},    {5, 15},   {10, 30},  {20, 62},
                                                     {30, 93}, {40, 124}, {50, 156}, {75, 234}, {100, 312}};
  for (const auto& [pct, count] : expected) {
    std::ostringstream name;
    name << "train_p" << (pct < 100 ? "0" : "") << (pct < 10 ? "0" : "") << pct << "_s0.manifest";
    const SplitManifest m = read_manifest(base / "splits" / name.str());
    require(m.per_class_count == count, std::to_string(pct) + "%: got " + std::to_string(m.per_class_count) +
                                            " per class, expected " + std::to_string(count));
    require(static_cast<int>(m.entries.size()) == count * 8, "entry total mismatch at " + std::to_string(pct) + "%");
  }
  const SplitManifest test = read_manifest(base / "splits" / "test.manifest");
  require(test.per_class_count == 313, "test split should hold 313 per class");
}

// --------------------------------------------------------------------------
// 2. Loss oracle equivalence on >= 100 random batches.

long double oracle_softmax_prob(const Tensor& logits, std::int64_t row, int target) {
  long double denom = 0;
  for (std::int64_t j = 0; j < logits.shape[1]; ++j) denom += std::exp(static_cast<long double>(logits.at(row, j)));
  return std::exp(static_cast<long double>(logits.at(row, target))) / denom;
}

void criterion_loss_oracles() {
  Rng rng(101);
  for (int batch = 0; batch < 120; ++batch) {
    const std::int64_t n = 1 + static_cast<std::int64_t>(rng.below(8));
    const int c = 2 + static_cast<int>(rng.below(9));
    Tensor logits = random_tensor(rng, {n, c}, 5.0);
    const auto labels = random_labels(rng, n, c);

    long double ce_expected = 0, focal_expected = 0;
    for (std::int64_t i = 0; i < n; ++i) {
      const long double p = oracle_softmax_prob(logits, i, labels[static_cast<std::size_t>(i)]);
      ce_expected += -std::log(p);
      focal_expected += -std::pow(1.0L - p, 2.0L) * std::log(p);
    }
    ce_expected /= n;
    focal_expected /= n;

    const double ce = cross_entropy(logits, labels);
    const double focal2 = focal_loss(logits, labels, 2.0);
    const double focal0 = focal_loss(logits, labels, 0.0);
    require(std::abs(ce - static_cast<double>(ce_expected)) < 1e-6, "cross_entropy vs oracle at batch " + std::to_string(batch));
    require(std::abs(focal2 - static_cast<double>(focal_expected)) < 1e-6, "focal_loss vs oracle at batch " + std::to_string(batch));
    require(std::abs(focal0 - ce) < 1e-6, "focal(gamma=0) != cross_entropy at batch " + std::to_string(batch));
    require(focal2 <= ce + 1e-12, "focal(gamma=2) exceeded cross_entropy at batch " + std::to_string(batch));
  }
}

// --------------------------------------------------------------------------
// 3. Distillation switch and combined-objective arithmetic.

void criterion_objective_conformance() {
  Rng rng(103);
  Tensor logits = random_tensor(rng, {6, 5}, 4.0);
  const auto labels = random_labels(rng, 6, 5);
  const LossConfig cfg;

  require(distillation_loss(logits, labels, 19, cfg).second == DistVariant::focal, "n=19 must select focal");
  require(distillation_loss(logits, labels, 20, cfg).second == DistVariant::focal, "n=20 must select focal");
  require(distillation_loss(logits, labels, 21, cfg).second == DistVariant::cross_entropy, "n=21 must select CE");

  require(total_loss(2.0, 1.0, cfg) == 1.05, "total_loss(2, 1, alpha=0.1) must equal 1.05 exactly");

  for (int trial = 0; trial < 1000; ++trial) {
    const real x = rng.uniform(0, 20), y = rng.uniform(0, 20);
    const real difference = total_loss(x, y, cfg) - total_loss(x, 0, cfg);
    require(std::abs(difference - cfg.alpha * 0.5 * y) < 1e-12, "total_loss linearity violated");
  }
}

// --------------------------------------------------------------------------
// 4. Full-objective gradients vs central finite differences.

void criterion_gradient_check() {
  auto model = build_model("tiny_cnn2", 8, InitRandom{7});
  Rng rng(104);
  const Tensor global = random_tensor(rng, {2, 3, 64, 64}, 1.0);
  const Tensor local = random_tensor(rng, {2, 3, 32, 32}, 1.0);
  const std::vector<int> labels = random_labels(rng, 2, 8);
  LossConfig loss_cfg;  // alpha 0.1, n_min 20, gamma 2
  const int images_per_class = 10;  // focal regime
  const FwdOpts opts{.train = true, .fp32 = false};

  // Teacher labels frozen at the unperturbed parameters; they are constants
  // of the objective.
  const std::vector<int> teacher_labels = teacher_hard_label(model->forward(global, opts, nullptr));

  auto loss_value = [&]() {
    const Tensor zt = model->forward(global, opts, nullptr);
    const Tensor zs = model->forward(local, opts, nullptr);
    const real main_loss = cross_entropy(zt, labels);
    const real dist = distillation_loss(zs, teacher_labels, images_per_class, loss_cfg).first;
    return total_loss(main_loss, dist, loss_cfg);
  };

  // Analytic gradient.
  model->zero_grads();
  {
    Tape tape_g;
    const Tensor zt = model->forward(global, opts, &tape_g);
    Tensor dzt = cross_entropy_grad(zt, labels);
    for (auto& v : dzt.data) v *= loss_cfg.main_weight;
    model->backward(dzt, opts, tape_g);

    Tape tape_l;
    const Tensor zs = model->forward(local, opts, &tape_l);
    Tensor dzs = distillation_loss_grad(zs, teacher_labels, images_per_class, loss_cfg);
    for (auto& v : dzs.data) v *= loss_cfg.alpha * loss_cfg.dist_weight;
    model->backward(dzs, opts, tape_l);
  }

  // Sample 200 coordinates across all trainable parameters.
  std::vector<std::pair<Param*, std::int64_t>> coords;
  {
    std::vector<Param*> trainable;
    for (Param* p : model->params)
      if (p->requires_grad) trainable.push_back(p);
    Rng pick(1040);
    for (int k = 0; k < 200; ++k) {
      Param* p = trainable[static_cast<std::size_t>(pick.below(trainable.size()))];
      coords.push_back({p, static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(p->value.numel())))});
    }
  }

  const double h = 1e-5;
  int good = 0;
  for (const auto& [p, i] : coords) {
    const real saved = p->value[i];
    p->value[i] = saved + h;
    const double up = loss_value();
    p->value[i] = saved - h;
    const double down = loss_value();
    p->value[i] = saved;
    const double fd = (up - down) / (2 * h);
    const double analytic = p->grad[i];
    const double rel = std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1e-8});
    if (rel < 1e-3) ++good;
  }
  require(good >= 198, "only " + std::to_string(good) + "/200 coordinates within 1e-3 relative error");
}

// --------------------------------------------------------------------------
// 5. Vanilla reduction: alpha=0 + disabled local branch, bit for bit.

void criterion_vanilla_reduction() {
  const fs::path base = work_dir() / "c5";
  fs::remove_all(base);
  generate_synthetic_texture_dataset(4, 16, 64, 3, base / "ds");
  const auto [train_m, test_m] = stratified_split(scan_dataset(base / "ds"), 0);

  PipelineConfig pipeline;
  pipeline.global_size = 64;
  pipeline.local_size = 32;
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.total_steps = 20;
  cfg.seed = 11;
  cfg.mixed_precision = false;

  auto vanilla_model = build_model("tiny_cnn2", 4, InitRandom{11});
  train(*vanilla_model, train_m, base / "ds", Method::vanilla, cfg, pipeline, false, {});

  TrainConfig kd_cfg = cfg;
  kd_cfg.loss.alpha = 0;
  auto kd_model = build_model("tiny_cnn2", 4, InitRandom{11});
  train(*kd_model, train_m, base / "ds", Method::kd_ctcnet, kd_cfg, pipeline, /*disable_local=*/true, {});

  for (std::size_t i = 0; i < vanilla_model->params.size(); ++i) {
    const auto& a = vanilla_model->params[i]->value.data;
    const auto& b = kd_model->params[i]->value.data;
    require(a == b, "parameter trajectory diverged at '" + vanilla_model->params[i]->name + "'");
  }
}

// --------------------------------------------------------------------------
// 6. Desk-scale learning on the synthetic texture dataset.

void criterion_desk_scale() {
  const fs::path base = work_dir() / "c6";
  fs::remove_all(base);
  generate_synthetic_texture_dataset(4, 30, 96, 1, base / "ds");
  const auto [train_m, test_m] = stratified_split(scan_dataset(base / "ds"), 0);
  require(train_m.per_class_count == 15, "expected 15 train images per class");

  PipelineConfig pipeline;
  pipeline.global_size = 64;
  pipeline.local_size = 32;

  TrainConfig cfg;
  cfg.batch_size = 16;
  cfg.total_steps = 1500;
  cfg.lr = 0.01;
  cfg.momentum = 0.9;

  double kd_sum = 0, vanilla_sum = 0;
  for (std::uint64_t seed : {0ULL, 1ULL, 2ULL}) {
    cfg.seed = seed;

    auto kd_model = build_model("tiny_cnn", 4, InitRandom{seed});
    const auto history = train(*kd_model, train_m, base / "ds", Method::kd_ctcnet, cfg, pipeline, false, {});
    kd_sum += evaluate(*kd_model, test_m, base / "ds", pipeline).accuracy;

    // Smoothed loss over 200-step windows is non-increasing across the
    // first 1000 steps.
    std::vector<double> window_means;
    for (std::size_t window = 0; window + 200 <= 1000; window += 200) {
      double s = 0;
      for (std::size_t i = window; i < window + 200; ++i) s += history[i].total;
      window_means.push_back(s / 200.0);
    }
    for (std::size_t w = 1; w < window_means.size(); ++w)
      require(window_means[w] <= window_means[w - 1] + 1e-6,
              "loss window " + std::to_string(w) + " rose for seed " + std::to_string(seed) + " (" +
                  std::to_string(window_means[w - 1]) + " -> " + std::to_string(window_means[w]) + ")");

    auto vanilla_model = build_model("tiny_cnn", 4, InitRandom{seed});
    train(*vanilla_model, train_m, base / "ds", Method::vanilla, cfg, pipeline, false, {});
    vanilla_sum += evaluate(*vanilla_model, test_m, base / "ds", pipeline).accuracy;
  }

  const double kd_mean = kd_sum / 3.0, vanilla_mean = vanilla_sum / 3.0;
  std::cout << "    (kd_ctcnet mean " << kd_mean * 100 << "%, vanilla mean " << vanilla_mean * 100 << "%)\n";
  require(kd_mean >= 0.80, "kd_ctcnet mean accuracy " + std::to_string(kd_mean) + " below 0.80");
  require(kd_mean >= vanilla_mean,
          "kd_ctcnet mean " + std::to_string(kd_mean) + " below vanilla " + std::to_string(vanilla_mean));
}

// --------------------------------------------------------------------------
// 7. Optional full-scale reproduction (external data + weights required).

void criterion_full_scale() {
  const char* root = std::getenv("KDCTC_KATHER2016_ROOT");
  const char* weights = std::getenv("KDCTC_RESNET50_WEIGHTS");
  if (!root || !weights)
    throw Skip("optional; set KDCTC_KATHER2016_ROOT and KDCTC_RESNET50_WEIGHTS to run the 20% protocol");

  ExperimentPlan plan;
  plan.dataset_root = root;
  plan.results_dir = work_dir() / "c7_results";
  plan.methods = {Method::vanilla, Method::kd_ctcnet};
  plan.percentages = {20};
  plan.seeds = {0, 1, 2};
  plan.config.arch = "resnet50";
  plan.config.init = "pretrained";
  plan.config.pretrained_path = weights;
  plan.config.train.total_steps = 3000;
  plan.config.train.mixed_precision = true;

  const ExperimentOutcome outcome = run_experiment(plan);
  require(outcome.failures.empty(), "runs failed: " + std::to_string(outcome.failures.size()));
  double vanilla_mean = 0, kd_mean = 0;
  for (const auto& row : outcome.aggregates) {
    if (row.method == "vanilla") vanilla_mean = row.mean_accuracy * 100;
    if (row.method == "kd_ctcnet") kd_mean = row.mean_accuracy * 100;
  }
  std::cout << "    (vanilla " << vanilla_mean << ", kd_ctcnet " << kd_mean << ")\n";
  require(std::abs(vanilla_mean - 91.82) <= 1.5, "vanilla mean outside the 91.82 +/- 1.5 band");
  require(std::abs(kd_mean - 94.13) <= 1.5, "kd_ctcnet mean outside the 94.13 +/- 1.5 band");
  require(kd_mean > vanilla_mean, "kd_ctcnet mean not above vanilla");
}

// --------------------------------------------------------------------------
// 8. Determinism and round-trips.

void criterion_determinism() {
  const fs::path base = work_dir() / "c8";
  fs::remove_all(base);

  // Synthetic images are byte-identical across regenerations.
  generate_synthetic_texture_dataset(3, 4, 32, 9, base / "ds1");
  generate_synthetic_texture_dataset(3, 4, 32, 9, base / "ds2");
  const DatasetIndex index = scan_dataset(base / "ds1");
  for (const auto& [rel, cid] : index.samples)
    require(slurp(base / "ds1" / rel) == slurp(base / "ds2" / rel), "synthetic image differs: " + rel);

  // Manifests: byte-stable regeneration and write->read->write identity.
  const auto [train1, test1] = stratified_split(index, 4);
  const auto [train2, test2] = stratified_split(scan_dataset(base / "ds2"), 4);
  write_manifest(train1, base / "a.manifest");
  {
    SplitManifest t2 = train2;
    t2.dataset_id = train1.dataset_id;  // ids come from the root folder name
    write_manifest(t2, base / "b.manifest");
  }
  require(slurp(base / "a.manifest") == slurp(base / "b.manifest"), "manifest bytes differ across regenerations");
  write_manifest(read_manifest(base / "a.manifest"), base / "c.manifest");
  require(slurp(base / "a.manifest") == slurp(base / "c.manifest"), "manifest round-trip changed bytes");

  // Checkpoints: save -> load -> save is byte-identical.
  auto model = build_model("tiny_cnn2", 3, InitRandom{21});
  model->class_names = index.classes;
  save_checkpoint(*model, base / "m1.ckpt");
  save_checkpoint(*load_checkpoint(base / "m1.ckpt"), base / "m2.ckpt");
  require(slurp(base / "m1.ckpt") == slurp(base / "m2.ckpt"), "checkpoint round-trip changed bytes");

  // Reports: byte-stable across re-renders of the same results.
  RunResult r;
  r.method = Method::kd_ctcnet;
  r.percentage = 20;
  r.seed = 0;
  r.run_id = make_run_id(r.method, r.percentage, r.seed);
  r.test_accuracy = 0.9375;
  r.per_class_accuracy = {1.0, 0.875, 0.9375};
  r.confusion = {{16, 0, 0}, {1, 14, 1}, {0, 1, 15}};
  r.classes = index.classes;
  r.n_test = 48;
  r.config_snapshot = config_to_kv(RunConfig{});
  write_run_result(r, base / "results");
  write_report(base / "results", base / "rep1");
  write_report(base / "results", base / "rep2");
  for (const char* f : {"accuracy_table.txt", "accuracy_table.csv", "confusion_kd_ctcnet_p020_s0.png"})
    require(slurp(base / "rep1" / f) == slurp(base / "rep2" / f), std::string("report file differs: ") + f);
}

struct Criterion {
  int id;
  std::string title;
  std::function<void()> body;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria = {
      {1, "split-protocol exactness (canonical per-class counts)", criterion_split_protocol},
      {2, "loss oracle equivalence (cross-entropy / focal)", criterion_loss_oracles},
      {3, "distillation switch and combined-objective arithmetic", criterion_objective_conformance},
      {4, "full-objective gradient vs finite differences", criterion_gradient_check},
      {5, "vanilla reduction (alpha=0, local branch off) bit-for-bit", criterion_vanilla_reduction},
      {6, "desk-scale learning on synthetic textures", criterion_desk_scale},
      {7, "full-scale 20% reproduction (optional)", criterion_full_scale},
      {8, "determinism and round-trips", criterion_determinism},
  };

  int failures = 0;
  for (const auto& criterion : criteria) {
    try {
      criterion.body();
      std::cout << "[PASS] criterion " << criterion.id << ": " << criterion.title << "\n";
    } catch (const Skip& s) {
      std::cout << "[SKIP] criterion " << criterion.id << ": " << criterion.title << " -- " << s.what() << "\n";
    } catch (const std::exception& e) {
      ++failures;
      std::cout << "[FAIL] criterion " << criterion.id << ": " << criterion.title << " -- " << e.what() << "\n";
    }
  }
  std::cout << (failures == 0 ? "acceptance: all criteria passed" : "acceptance: FAILURES present") << "\n";
  return failures;
}
