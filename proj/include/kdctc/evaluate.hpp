#pragma once

#include <filesystem>
#include <vector>

#include "kdctc/image.hpp"
#include "kdctc/manifest.hpp"
#include "kdctc/model.hpp"

namespace kdctc {

struct EvalResult {
  real accuracy = 0;
  std::vector<real> per_class_accuracy;
  std::vector<std::vector<std::int64_t>> confusion;  // row = true class, col = predicted
  std::int64_t n_test = 0;
};

// Eval-mode global-branch forward only; the local branch is a training-time
// device. Validates the model's class ordering against the manifest.
EvalResult evaluate(Model& model, const SplitManifest& test_manifest, const std::filesystem::path& data_root,
                    const PipelineConfig& pipeline, int batch_size = 64);

}  // namespace kdctc
