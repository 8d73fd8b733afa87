#include "kdctc/trainer.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "kdctc/evaluate.hpp"
#include "kdctc/rng.hpp"

namespace kdctc {

namespace {

void scale_in_place(Tensor& t, real s) {
  for (auto& v : t.data) v *= s;
}

std::string batch_provenance(const Batch& batch) {
  std::ostringstream os;
  os << "batch of " << batch.size() << " entries:";
  for (const auto& p : batch.paths) os << " " << p;
  return os.str();
}

void check_finite_logits(const Tensor& logits, const char* branch, std::int64_t step, const Batch& batch) {
  for (real v : logits.data)
    if (!std::isfinite(v))
      throw TrainAbort("non-finite " + std::string(branch) + " logits at step " + std::to_string(step) + "; " +
                       batch_provenance(batch));
}

}  // namespace

TrainState::TrainState(Model& m) : model(&m) {
  moments.reserve(m.params.size());
  for (const Param* p : m.params) moments.emplace_back(p->value.shape);
}

void sgd_momentum_update(std::span<real> params, std::span<const real> grads, std::span<real> moments, real lr,
                         real momentum) {
  if (params.size() != grads.size() || params.size() != moments.size())
    throw Error("sgd_momentum_update: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    moments[i] = momentum * moments[i] + grads[i];
    params[i] -= lr * moments[i];
  }
}

LossReport train_step(TrainState& state, const Batch& batch, Method method, const TrainConfig& cfg) {
  if (!batch.train_mode) throw ValidationError("train_step requires a train-mode batch");
  if (batch.size() == 0) throw ValidationError("train_step: empty batch");
  Model& model = *state.model;
  const LossConfig& loss_cfg = cfg.loss;
  const int n_im_c = state.images_per_class;
  if (n_im_c < 1) throw ValidationError("train_step: images_per_class must be set (>= 1)");

  model.zero_grads();
  const FwdOpts opts{.train = true, .fp32 = cfg.mixed_precision};

  // Global branch: one forward serves the main loss and the teacher label.
  Tape global_tape;
  Tensor teacher_logits = model.forward(batch.global, opts, &global_tape);
  check_finite_logits(teacher_logits, "global-branch", state.step + 1, batch);
  const real main_ce = cross_entropy(teacher_logits, batch.labels);

  LossReport report;
  report.images_per_class = n_im_c;
  report.dist_variant = n_im_c <= loss_cfg.n_min ? DistVariant::focal : DistVariant::cross_entropy;

  if (method == Method::vanilla_plus_sampling) {
    if (!batch.has_local())
      throw ValidationError("vanilla_plus_sampling requires local views in the batch");
    // Local crops act as extra augmentation into the same CE objective: the
    // effective batch is the 2N global+local views, so each side carries
    // half the mean.
    Tensor dglobal = cross_entropy_grad(teacher_logits, batch.labels);
    scale_in_place(dglobal, loss_cfg.main_weight * real{0.5});
    model.backward(dglobal, opts, global_tape);

    Tape local_tape;
    Tensor student_logits = model.forward(batch.local, opts, &local_tape);
    check_finite_logits(student_logits, "local-branch", state.step + 1, batch);
    const real local_ce = cross_entropy(student_logits, batch.labels);
    Tensor dlocal = cross_entropy_grad(student_logits, batch.labels);
    scale_in_place(dlocal, loss_cfg.main_weight * real{0.5});
    model.backward(dlocal, opts, local_tape);

    report.main_loss = (main_ce + local_ce) * real{0.5};
    report.dist_loss = 0;
  } else if (method == Method::kd_ctcnet && batch.has_local()) {
    // Teacher prediction is an integer label: structurally no gradient.
    const std::vector<int> teacher_labels = teacher_hard_label(teacher_logits);

    Tensor dglobal = cross_entropy_grad(teacher_logits, batch.labels);
    scale_in_place(dglobal, loss_cfg.main_weight);
    model.backward(dglobal, opts, global_tape);

    Tape local_tape;
    Tensor student_logits = model.forward(batch.local, opts, &local_tape);
    check_finite_logits(student_logits, "local-branch", state.step + 1, batch);
    auto [dist, variant] = distillation_loss(student_logits, teacher_labels, n_im_c, loss_cfg);
    Tensor dlocal = distillation_loss_grad(student_logits, teacher_labels, n_im_c, loss_cfg);
    scale_in_place(dlocal, loss_cfg.alpha * loss_cfg.dist_weight);
    model.backward(dlocal, opts, local_tape);

    report.main_loss = main_ce;
    report.dist_loss = dist;
    report.dist_variant = variant;
  } else {
    // vanilla, or kd_ctcnet with the local branch disabled: pure main loss.
    Tensor dglobal = cross_entropy_grad(teacher_logits, batch.labels);
    scale_in_place(dglobal, loss_cfg.main_weight);
    model.backward(dglobal, opts, global_tape);

    report.main_loss = main_ce;
    report.dist_loss = 0;
  }

  report.total = total_loss(report.main_loss, report.dist_loss, loss_cfg);
  if (!std::isfinite(report.total))
    throw TrainAbort("non-finite loss at step " + std::to_string(state.step + 1) + "; " + batch_provenance(batch));

  for (std::size_t i = 0; i < model.params.size(); ++i) {
    Param* p = model.params[i];
    if (!p->requires_grad) continue;
    sgd_momentum_update(p->value.data, p->grad.data, state.moments[i].data, cfg.lr, cfg.momentum);
  }

  ++state.step;
  state.history.push_back(report);
  return report;
}

std::vector<LossReport> train(Model& model, const SplitManifest& train_manifest,
                              const std::filesystem::path& data_root, Method method, const TrainConfig& cfg,
                              const PipelineConfig& pipeline, bool disable_local, const TrainHooks& hooks) {
  cfg.validate();
  if (train_manifest.entries.empty()) throw ValidationError("train: empty manifest");
  if (train_manifest.role != SplitRole::train) throw ValidationError("train: manifest role must be 'train'");
  const int C = static_cast<int>(train_manifest.classes.size());
  if (model.num_classes != C)
    throw ValidationError("model has " + std::to_string(model.num_classes) + " classes, manifest has " +
                          std::to_string(C));
  if (model.class_names.empty())
    model.class_names = train_manifest.classes;
  else if (model.class_names != train_manifest.classes)
    throw ValidationError("model class ordering does not match the training manifest");

  const bool with_local =
      (method == Method::kd_ctcnet && !disable_local) || method == Method::vanilla_plus_sampling;

  TrainState state(model);
  state.images_per_class = train_manifest.per_class_count;

  // Independent streams per concern: disabling one branch never desyncs the
  // draws of another.
  Rng shuffle_rng(cfg.seed, "train/shuffle");
  Rng global_rng(cfg.seed, "train/aug_global");
  Rng local_rng(cfg.seed, "train/aug_local");

  const bool with_files = !hooks.out_dir.empty();
  std::ofstream metrics, patches, eval_log;
  if (with_files) {
    std::filesystem::create_directories(hooks.out_dir);
    metrics.open(hooks.out_dir / "metrics.log", std::ios::binary);
    metrics << "# step\tmain_loss\tdist_loss\tvariant\ttotal\tlr\n";
    if (cfg.dump_patches) {
      patches.open(hooks.out_dir / "patches.log", std::ios::binary);
      patches << "# step\tindex\tpath\tfraction\ttop\tleft\tside\n";
    }
    if (cfg.eval_every > 0 && hooks.eval_manifest) {
      eval_log.open(hooks.out_dir / "eval.log", std::ios::binary);
      eval_log << "# step\taccuracy\n";
    }
  }

  auto save_model = [&](const std::string& filename) {
    if (with_files) save_checkpoint(model, hooks.out_dir / filename);
  };

  std::vector<std::size_t> order(train_manifest.entries.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  try {
    while (state.step < cfg.total_steps) {
      shuffle_rng.shuffle(order);
      for (std::size_t start = 0; start < order.size() && state.step < cfg.total_steps;
           start += static_cast<std::size_t>(cfg.batch_size)) {
        const std::size_t end = std::min(start + static_cast<std::size_t>(cfg.batch_size), order.size());
        std::vector<std::pair<std::string, int>> chunk;
        chunk.reserve(end - start);
        for (std::size_t i = start; i < end; ++i)
          chunk.push_back(train_manifest.entries[order[i]]);

        Batch batch = make_batch(chunk, data_root, /*train_mode=*/true, global_rng,
                                 with_local ? &local_rng : nullptr, pipeline);
        const LossReport report = train_step(state, batch, method, cfg);

        if (metrics.is_open()) {
          metrics << state.step << "\t" << std::setprecision(10) << report.main_loss << "\t" << report.dist_loss
                  << "\t" << to_string(report.dist_variant) << "\t" << report.total << "\t" << cfg.lr << "\n";
        }
        if (patches.is_open()) {
          for (std::size_t i = 0; i < batch.patch_specs.size(); ++i) {
            const auto& s = batch.patch_specs[i];
            patches << state.step << "\t" << i << "\t" << batch.paths[i] << "\t" << std::setprecision(6)
                    << s.fraction << "\t" << s.top << "\t" << s.left << "\t" << s.side << "\n";
          }
        }
        if (cfg.eval_every > 0 && hooks.eval_manifest && state.step % cfg.eval_every == 0) {
          const EvalResult ev = evaluate(model, *hooks.eval_manifest, data_root, pipeline);
          if (eval_log.is_open())
            eval_log << state.step << "\t" << std::setprecision(10) << ev.accuracy << "\n";
        }
        if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && state.step < cfg.total_steps)
          save_model("checkpoint_step" + std::to_string(state.step) + ".ckpt");
      }
    }
  } catch (const TrainAbort&) {
    save_model("model_abort.ckpt");
    throw;
  }

  save_model("model.ckpt");
  return state.history;
}

}  // namespace kdctc
