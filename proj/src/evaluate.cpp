#include "kdctc/evaluate.hpp"

#include "kdctc/objectives.hpp"

namespace kdctc {

EvalResult evaluate(Model& model, const SplitManifest& test_manifest, const std::filesystem::path& data_root,
                    const PipelineConfig& pipeline, int batch_size) {
  if (batch_size < 1) throw ValidationError("evaluate: batch_size must be >= 1");
  if (test_manifest.entries.empty()) throw ValidationError("evaluate: empty test manifest");
  const int C = static_cast<int>(test_manifest.classes.size());
  if (model.num_classes != C)
    throw ValidationError("model has " + std::to_string(model.num_classes) + " classes, manifest has " +
                          std::to_string(C));
  if (!model.class_names.empty() && model.class_names != test_manifest.classes)
    throw ValidationError("model class ordering does not match the manifest's class list");

  EvalResult res;
  res.confusion.assign(static_cast<std::size_t>(C), std::vector<std::int64_t>(static_cast<std::size_t>(C), 0));

  Rng unused(0);  // eval-mode preprocessing draws nothing
  const FwdOpts opts{.train = false, .fp32 = false};
  for (std::size_t start = 0; start < test_manifest.entries.size(); start += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(start + static_cast<std::size_t>(batch_size), test_manifest.entries.size());
    std::vector<std::pair<std::string, int>> chunk(test_manifest.entries.begin() + static_cast<std::ptrdiff_t>(start),
                                                   test_manifest.entries.begin() + static_cast<std::ptrdiff_t>(end));
    Batch batch = make_batch(chunk, data_root, /*train_mode=*/false, unused, /*local_rng=*/nullptr, pipeline);
    Tensor logits = model.forward(batch.global, opts, nullptr);
    const std::vector<int> pred = teacher_hard_label(logits);
    for (std::size_t i = 0; i < pred.size(); ++i)
      ++res.confusion[static_cast<std::size_t>(batch.labels[i])][static_cast<std::size_t>(pred[i])];
  }

  std::int64_t correct = 0;
  res.per_class_accuracy.assign(static_cast<std::size_t>(C), 0);
  for (int c = 0; c < C; ++c) {
    std::int64_t row_total = 0;
    for (int p = 0; p < C; ++p) row_total += res.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(p)];
    const std::int64_t diag = res.confusion[static_cast<std::size_t>(c)][static_cast<std::size_t>(c)];
    correct += diag;
    res.n_test += row_total;
    res.per_class_accuracy[static_cast<std::size_t>(c)] =
        row_total > 0 ? static_cast<real>(diag) / static_cast<real>(row_total) : real{0};
  }
  res.accuracy = static_cast<real>(correct) / static_cast<real>(res.n_test);
  return res;
}

}  // namespace kdctc
