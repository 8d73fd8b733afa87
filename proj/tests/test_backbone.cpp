#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "kdctc/model.hpp"
#include "kdctc/rng.hpp"

using namespace kdctc;
namespace fs = std::filesystem;

namespace {

Tensor random_input(Rng& rng, std::vector<std::int64_t> shape, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.data) v = rng.uniform(-scale, scale);
  return t;
}

real dot(const Tensor& a, const Tensor& b) {
  real s = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) s += a[i] * b[i];
  return s;
}

// Finite-difference harness for a single layer: scalar loss = <forward(x), R>
// with a fixed random projection R.
void check_layer_gradients(Layer& layer, const Tensor& input, bool train, double h = 1e-6, double tol = 1e-5) {
  Rng rng(99);
  FwdOpts opts{.train = train, .fp32 = false};

  Tape tape;
  const Tensor y = layer.forward(input, opts, &tape);
  Tensor projection(y.shape);
  for (auto& v : projection.data) v = rng.uniform(-1, 1);

  std::vector<Param*> params;
  layer.collect_params(params);
  for (Param* p : params) p->zero_grad();
  const Tensor dx = layer.backward(projection, opts, tape);

  auto loss_at = [&](const Tensor& x) {
    // BN running stats drift across probe forwards; irrelevant to the value.
    return dot(layer.forward(x, opts, nullptr), projection);
  };

  // Input gradient, sampled.
  Tensor probe = input;
  Rng pick(7);
  for (int k = 0; k < 25; ++k) {
    const std::int64_t i = static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(probe.numel())));
    const real saved = probe[i];
    probe[i] = saved + h;
    const real up = loss_at(probe);
    probe[i] = saved - h;
    const real down = loss_at(probe);
    probe[i] = saved;
    const real fd = (up - down) / (2 * h);
    CHECK(dx[i] == doctest::Approx(fd).epsilon(tol).scale(1.0));
  }

  // Parameter gradients, sampled.
  for (Param* p : params) {
    if (!p->requires_grad) continue;
    for (int k = 0; k < 10; ++k) {
      const std::int64_t i = static_cast<std::int64_t>(pick.below(static_cast<std::uint64_t>(p->value.numel())));
      const real saved = p->value[i];
      p->value[i] = saved + h;
      const real up = loss_at(input);
      p->value[i] = saved - h;
      const real down = loss_at(input);
      p->value[i] = saved;
      const real fd = (up - down) / (2 * h);
      CHECK(p->grad[i] == doctest::Approx(fd).epsilon(tol).scale(1.0));
    }
  }
}

}  // namespace

TEST_CASE("conv2d forward/backward matches finite differences") {
  Rng rng(1);
  Conv2d conv("c", 2, 3, 3, 2, 1, true);
  for (auto& v : conv.weight.value.data) v = rng.uniform(-0.5, 0.5);
  for (auto& v : conv.bias->value.data) v = rng.uniform(-0.5, 0.5);
  check_layer_gradients(conv, random_input(rng, {2, 2, 7, 6}), false);
}

TEST_CASE("batchnorm2d train-mode backward matches finite differences") {
  Rng rng(2);
  BatchNorm2d bn("b", 3);
  for (auto& v : bn.gamma.value.data) v = rng.uniform(0.5, 1.5);
  for (auto& v : bn.beta.value.data) v = rng.uniform(-0.5, 0.5);
  check_layer_gradients(bn, random_input(rng, {4, 3, 5, 5}), true, 1e-6, 1e-4);
}

TEST_CASE("batchnorm2d updates running stats only in train mode") {
  BatchNorm2d bn("b", 1);
  Rng rng(3);
  Tensor x = random_input(rng, {8, 1, 4, 4}, 2.0);
  const Tensor rm_before = bn.running_mean.value;
  bn.forward(x, FwdOpts{.train = false, .fp32 = false}, nullptr);
  CHECK(bn.running_mean.value.data == rm_before.data);
  bn.forward(x, FwdOpts{.train = true, .fp32 = false}, nullptr);
  CHECK(bn.running_mean.value.data != rm_before.data);
}

TEST_CASE("linear, maxpool, gap, relu gradients match finite differences") {
  Rng rng(4);
  {
    Linear fc("f", 6, 4);
    for (auto& v : fc.weight.value.data) v = rng.uniform(-0.5, 0.5);
    check_layer_gradients(fc, random_input(rng, {3, 6}), false);
  }
  {
    MaxPool2d pool(3, 2, 1);
    check_layer_gradients(pool, random_input(rng, {2, 2, 7, 7}, 3.0), false);
  }
  {
    GlobalAvgPool gap;
    check_layer_gradients(gap, random_input(rng, {2, 3, 4, 4}), false);
  }
  {
    ReLU relu;
    check_layer_gradients(relu, random_input(rng, {2, 3, 4, 4}), false);
  }
}

TEST_CASE("bottleneck block gradients match finite differences") {
  Rng rng(5);
  Bottleneck block("blk", 4, 2, 8, 2, true);
  std::vector<Param*> params;
  block.collect_params(params);
  for (Param* p : params) {
    if (p->name.find("bn") != std::string::npos || p->name.find("downsample.1") != std::string::npos) continue;
    for (auto& v : p->value.data) v = rng.uniform(-0.4, 0.4);
  }
  check_layer_gradients(block, random_input(rng, {2, 4, 6, 6}), true, 1e-6, 1e-4);
}

TEST_CASE("build_model is seed-deterministic and validates arch ids") {
  auto a = build_model("tiny_cnn2", 8, InitRandom{0});
  auto b = build_model("tiny_cnn2", 8, InitRandom{0});
  REQUIRE(a->params.size() == b->params.size());
  for (std::size_t i = 0; i < a->params.size(); ++i)
    CHECK(a->params[i]->value.data == b->params[i]->value.data);

  auto c = build_model("tiny_cnn2", 8, InitRandom{1});
  bool any_different = false;
  for (std::size_t i = 0; i < a->params.size(); ++i)
    if (a->params[i]->value.data != c->params[i]->value.data) any_different = true;
  CHECK(any_different);

  CHECK_THROWS_AS(build_model("resnet18", 8, InitRandom{0}), ConfigError);
  CHECK_THROWS_AS(build_model("tiny_cnn2", 0, InitRandom{0}), ConfigError);
}

TEST_CASE("model forward shapes, size-agnosticism and eval determinism") {
  auto model = build_model("tiny_cnn2", 8, InitRandom{0});
  CHECK(model->downsample_factor == 16);
  Rng rng(6);
  const FwdOpts eval{.train = false, .fp32 = false};

  Tensor global = random_input(rng, {4, 3, 64, 64});
  Tensor logits = model->forward(global, eval, nullptr);
  CHECK(logits.shape == std::vector<std::int64_t>{4, 8});

  Tensor local = random_input(rng, {1, 3, 32, 32});
  CHECK(model->forward(local, eval, nullptr).shape == std::vector<std::int64_t>{1, 8});

  // Duplicate rows give identical logits.
  Tensor pair({2, 3, 32, 32});
  for (std::int64_t i = 0; i < local.numel(); ++i) {
    pair[i] = local[i];
    pair[local.numel() + i] = local[i];
  }
  const Tensor two = model->forward(pair, eval, nullptr);
  for (int j = 0; j < 8; ++j) CHECK(two.at(0, j) == two.at(1, j));

  // Same batch twice: exactly equal.
  const Tensor l1 = model->forward(global, eval, nullptr);
  const Tensor l2 = model->forward(global, eval, nullptr);
  CHECK(l1.data == l2.data);

  // Both input sizes ran through the one parameter set: the registry is a
  // single, stable set of objects.
  std::vector<Param*> first, second;
  model->net.collect_params(first);
  model->net.collect_params(second);
  CHECK(first == second);
  CHECK(first == model->params);

  CHECK_THROWS_AS(model->forward(random_input(rng, {1, 3, 48, 50}), eval, nullptr), ShapeError);
  CHECK_THROWS_AS(model->forward(random_input(rng, {1, 1, 64, 64}), eval, nullptr), ShapeError);
}

TEST_CASE("resnet50 builds with torchvision-style parameter names and runs") {
  auto model = build_model("resnet50", 4, InitRandom{0});
  CHECK(model->downsample_factor == 32);
  CHECK(model->find_param("conv1.weight") != nullptr);
  CHECK(model->find_param("layer1.0.downsample.0.weight") != nullptr);
  CHECK(model->find_param("layer4.2.bn3.running_var") != nullptr);
  CHECK(model->find_param("fc.bias") != nullptr);
  CHECK(model->find_param("fc.weight")->value.shape == std::vector<std::int64_t>{4, 2048});

  Rng rng(7);
  const Tensor x = random_input(rng, {1, 3, 64, 64});
  const Tensor logits = model->forward(x, FwdOpts{.train = false, .fp32 = false}, nullptr);
  CHECK(logits.shape == std::vector<std::int64_t>{1, 4});
  for (real v : logits.data) CHECK(std::isfinite(v));
}

TEST_CASE("mixed-precision forward stays close to the double path") {
  auto model = build_model("tiny_cnn2", 4, InitRandom{3});
  Rng rng(8);
  const Tensor x = random_input(rng, {2, 3, 32, 32});
  const Tensor full = model->forward(x, FwdOpts{.train = false, .fp32 = false}, nullptr);
  const Tensor mixed = model->forward(x, FwdOpts{.train = false, .fp32 = true}, nullptr);
  for (std::int64_t i = 0; i < full.numel(); ++i)
    CHECK(mixed[i] == doctest::Approx(full[i]).epsilon(1e-3).scale(1.0));
}

TEST_CASE("checkpoints round-trip bit-identically and verify integrity") {
  const fs::path dir = fs::temp_directory_path() / "kdctc_ckpt_test";
  fs::remove_all(dir);
  fs::create_directories(dir);

  auto model = build_model("tiny_cnn2", 5, InitRandom{11});
  model->class_names = {"a", "b", "c", "d", "e"};
  const fs::path file = dir / "m.ckpt";
  save_checkpoint(*model, file);

  auto loaded = load_checkpoint(file);
  CHECK(loaded->arch_id == "tiny_cnn2");
  CHECK(loaded->num_classes == 5);
  CHECK(loaded->class_names == model->class_names);
  REQUIRE(loaded->params.size() == model->params.size());
  for (std::size_t i = 0; i < model->params.size(); ++i) {
    CHECK(loaded->params[i]->name == model->params[i]->name);
    CHECK(loaded->params[i]->value.data == model->params[i]->value.data);
  }

  // Forward equality on a fixed batch.
  Rng rng(12);
  const Tensor x = random_input(rng, {2, 3, 32, 32});
  const FwdOpts eval{.train = false, .fp32 = false};
  CHECK(model->forward(x, eval, nullptr).data == loaded->forward(x, eval, nullptr).data);

  // Save-load-save byte stability.
  const fs::path file2 = dir / "m2.ckpt";
  save_checkpoint(*loaded, file2);
  std::ifstream f1(file, std::ios::binary), f2(file2, std::ios::binary);
  std::string b1((std::istreambuf_iterator<char>(f1)), {});
  std::string b2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(b1 == b2);

  // Corrupt one payload byte: checksum must catch it.
  std::string corrupted = b1;
  corrupted[corrupted.size() / 2] ^= 0x40;
  const fs::path bad = dir / "bad.ckpt";
  std::ofstream(bad, std::ios::binary).write(corrupted.data(), static_cast<std::streamsize>(corrupted.size()));
  CHECK_THROWS_AS(load_checkpoint(bad), IntegrityError);

  // Future format_version with a valid checksum: versioned load error.
  std::string versioned = b1;
  versioned[4] = 9;  // little-endian u32 right after the magic
  auto crc32_ref = [](const unsigned char* data, std::size_t len) {
    std::uint32_t table[256];
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      table[i] = c;
    }
    std::uint32_t crc = 0xffffffffu;
    for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
    return crc ^ 0xffffffffu;
  };
  const std::uint32_t new_crc =
      crc32_ref(reinterpret_cast<const unsigned char*>(versioned.data()), versioned.size() - 4);
  std::memcpy(versioned.data() + versioned.size() - 4, &new_crc, 4);
  const fs::path vfile = dir / "v9.ckpt";
  std::ofstream(vfile, std::ios::binary).write(versioned.data(), static_cast<std::streamsize>(versioned.size()));
  CHECK_THROWS_WITH_AS(load_checkpoint(vfile), doctest::Contains("format_version"), LoadError);

  // Wrong-arch pretrained file.
  CHECK_THROWS_AS(build_model("tiny_cnn3", 5, InitPretrained{file}), LoadError);

  // Pretrained init: backbone weights land, head is freshly seeded.
  auto pre = build_model("tiny_cnn2", 9, InitPretrained{file, 1});
  CHECK(pre->find_param("stem.weight")->value.data == model->find_param("stem.weight")->value.data);
  CHECK(pre->find_param("fc.weight")->value.shape == std::vector<std::int64_t>{9, 32});

  CHECK_THROWS_AS(load_checkpoint(dir / "nope.ckpt"), PathError);
  fs::remove_all(dir);
}
