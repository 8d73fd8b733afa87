#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "kdctc/rng.hpp"
#include "kdctc/tensor.hpp"

namespace kdctc {

// One image as a 3xHxW float tensor (RGB, CHW). Raw images carry values in
// [0,1]; preprocessed views are per-channel standardized.
struct ImageTensor {
  Tensor data;
  std::string source_path;

  std::int64_t channels() const { return data.shape[0]; }
  std::int64_t height() const { return data.shape[1]; }
  std::int64_t width() const { return data.shape[2]; }
};

// Audit record of one local crop: a single uniform fraction of the shorter
// image side, square, fully inside the source image.
struct PatchSpec {
  double fraction = 0.0;
  int top = 0;
  int left = 0;
  int side = 0;
};

struct PipelineConfig {
  int global_size = 192;
  int local_size = 96;
  // Channel statistics of the pretrained backbone's training corpus.
  std::array<real, 3> mean{0.485, 0.456, 0.406};
  std::array<real, 3> stdev{0.229, 0.224, 0.225};
  double patch_fraction_min = 0.1;
  double patch_fraction_max = 0.5;
};

// Aligned per-sample views ready for the model. `local` is empty when the
// batch was built without the local branch; in eval mode local views may
// still be present but the trainer ignores them.
struct Batch {
  Tensor global;  // N x 3 x G x G
  Tensor local;   // N x 3 x L x L or empty
  std::vector<int> labels;
  std::vector<std::string> paths;
  std::vector<PatchSpec> patch_specs;
  bool train_mode = false;

  std::int64_t size() const { return static_cast<std::int64_t>(labels.size()); }
  bool has_local() const { return local.numel() > 0; }
};

// Decodes PNG/TIFF/JPEG/BMP to RGB floats in [0,1]; grayscale is promoted
// to 3 channels. Throws DecodeError naming the path.
ImageTensor decode_image(const std::filesystem::path& path);

// Half-pixel-center bilinear resample of a CHW tensor. Constant inputs stay
// constant (weights sum to one).
Tensor bilinear_resize(const Tensor& chw, int out_h, int out_w);

void flip_horizontal(Tensor& chw);
void flip_vertical(Tensor& chw);
void standardize(Tensor& chw, const std::array<real, 3>& mean, const std::array<real, 3>& stdev);

// Full-image view: bilinear resize to global_size, then in train mode an
// independent 50% horizontal and 50% vertical flip (drawn in that order),
// then per-channel standardization.
ImageTensor preprocess_global(const ImageTensor& raw, bool train_mode, Rng& rng, const PipelineConfig& cfg);

// Local texture view: fraction ~ U[min,max] of the shorter side, square crop
// at a uniform valid position, resized to local_size, same flip and
// standardization treatment. Draw order: fraction, top, left, flips.
std::pair<ImageTensor, PatchSpec> sample_local_patch(const ImageTensor& raw, bool train_mode, Rng& rng,
                                                     const PipelineConfig& cfg);

// Loads every entry under `root` and assembles aligned global/local views.
// `local_rng == nullptr` skips the local branch entirely (its rng stream is
// left untouched). Exactly one local patch per image.
Batch make_batch(const std::vector<std::pair<std::string, int>>& entries, const std::filesystem::path& root,
                 bool train_mode, Rng& global_rng, Rng* local_rng, const PipelineConfig& cfg);

}  // namespace kdctc
