#pragma once

#include <filesystem>
#include <memory>
#include <string>
#include <variant>
#include <vector>

#include "kdctc/nn.hpp"

namespace kdctc {

struct InitRandom {
  std::uint64_t seed = 0;
};

struct InitPretrained {
  std::filesystem::path path;
  std::uint64_t head_seed = 0;  // the classifier head is always freshly initialized
};

using ModelInit = std::variant<InitRandom, InitPretrained>;

// Shared-parameter convolutional classifier. One parameter set serves both
// the full-image and the local-patch forward; global average pooling makes
// the logits well-defined for any input whose sides are multiples of
// `downsample_factor`.
class Model {
 public:
  std::string arch_id;
  int num_classes = 0;
  int downsample_factor = 1;
  std::vector<std::string> class_names;  // filled by the trainer from the manifest

  Sequential net;
  std::vector<Param*> params;  // registry over `net`, construction order

  // N x num_classes logits. tape != nullptr records for backward.
  Tensor forward(const Tensor& images, const FwdOpts& opts, Tape* tape = nullptr);
  // Accumulates parameter gradients from dL/dlogits.
  void backward(const Tensor& dlogits, const FwdOpts& opts, Tape& tape);

  void zero_grads();
  Param* find_param(const std::string& name);
};

// Supported arch_ids: "resnet50" (reference) and "tiny_cnn" family for
// test-scale work ("tiny_cnn" = 3 pooled conv blocks after the stem,
// downsample 32; "tiny_cnn<N>" for N blocks, downsample 4*2^N).
std::unique_ptr<Model> build_model(const std::string& arch_id, int num_classes, const ModelInit& init);

void save_checkpoint(const Model& model, const std::filesystem::path& path);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path);

}  // namespace kdctc
