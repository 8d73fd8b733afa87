#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "kdctc/config.hpp"
#include "kdctc/image.hpp"
#include "kdctc/manifest.hpp"
#include "kdctc/model.hpp"
#include "kdctc/objectives.hpp"

namespace kdctc {

// Mutable training-run state: the shared parameter set, one velocity buffer
// per parameter, and the per-step loss history.
struct TrainState {
  Model* model = nullptr;
  std::vector<Tensor> moments;  // aligned with model->params
  std::int64_t step = 0;
  std::vector<LossReport> history;
  // Per-class count of the active training manifest; fixes the distillation
  // variant once for the whole run.
  int images_per_class = 1;

  explicit TrainState(Model& m);
};

// Classic momentum, no dampening, no weight decay:
//   v <- momentum * v + g;  p <- p - lr * v
void sgd_momentum_update(std::span<real> params, std::span<const real> grads, std::span<real> moments, real lr,
                         real momentum);

// One optimization step: global forward (main loss + teacher label), local
// forward (student), combined backward, single SGD update of the shared
// parameters. The batch decides which branches run: no local views means the
// main loss alone drives the step.
LossReport train_step(TrainState& state, const Batch& batch, Method method, const TrainConfig& cfg);

struct TrainHooks {
  std::filesystem::path out_dir;                  // empty -> no logs/checkpoints
  const SplitManifest* eval_manifest = nullptr;   // enables periodic eval when eval_every > 0
};

// Seeded-shuffled epochs over the manifest until total_steps. Returns the
// full loss history; writes metrics/checkpoints under hooks.out_dir.
std::vector<LossReport> train(Model& model, const SplitManifest& train_manifest,
                              const std::filesystem::path& data_root, Method method, const TrainConfig& cfg,
                              const PipelineConfig& pipeline, bool disable_local = false,
                              const TrainHooks& hooks = {});

}  // namespace kdctc
