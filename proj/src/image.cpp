#include "kdctc/image.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgcodecs.hpp>

namespace kdctc {

ImageTensor decode_image(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw DecodeError("cannot decode image: " + path.string());

  ImageTensor img;
  img.source_path = path.string();
  img.data = Tensor({3, bgr.rows, bgr.cols});
  const real scale = real{1} / real{255};
  for (int y = 0; y < bgr.rows; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(y);
    for (int x = 0; x < bgr.cols; ++x) {
      // BGR -> RGB
      img.data.data[static_cast<std::size_t>((0 * bgr.rows + y) * bgr.cols + x)] = row[x][2] * scale;
      img.data.data[static_cast<std::size_t>((1 * bgr.rows + y) * bgr.cols + x)] = row[x][1] * scale;
      img.data.data[static_cast<std::size_t>((2 * bgr.rows + y) * bgr.cols + x)] = row[x][0] * scale;
    }
  }
  return img;
}

Tensor bilinear_resize(const Tensor& chw, int out_h, int out_w) {
  if (chw.rank() != 3) throw ShapeError("bilinear_resize expects a CHW tensor, got " + chw.shape_str());
  const std::int64_t C = chw.shape[0], H = chw.shape[1], W = chw.shape[2];
  if (H < 1 || W < 1 || out_h < 1 || out_w < 1) throw ValidationError("bilinear_resize: degenerate size");

  Tensor out({C, out_h, out_w});
  const double sy = static_cast<double>(H) / out_h;
  const double sx = static_cast<double>(W) / out_w;

  for (int oy = 0; oy < out_h; ++oy) {
    double fy = (oy + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(H - 1));
    const std::int64_t y0 = static_cast<std::int64_t>(fy);
    const std::int64_t y1 = std::min(y0 + 1, H - 1);
    const real wy = static_cast<real>(fy - static_cast<double>(y0));
    for (int ox = 0; ox < out_w; ++ox) {
      double fx = (ox + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(W - 1));
      const std::int64_t x0 = static_cast<std::int64_t>(fx);
      const std::int64_t x1 = std::min(x0 + 1, W - 1);
      const real wx = static_cast<real>(fx - static_cast<double>(x0));
      for (std::int64_t c = 0; c < C; ++c) {
        const real* p = chw.data.data() + static_cast<std::size_t>(c * H * W);
        const real v00 = p[y0 * W + x0], v01 = p[y0 * W + x1];
        const real v10 = p[y1 * W + x0], v11 = p[y1 * W + x1];
        const real top = v00 + (v01 - v00) * wx;
        const real bot = v10 + (v11 - v10) * wx;
        out.data[static_cast<std::size_t>((c * out_h + oy) * out_w + ox)] = top + (bot - top) * wy;
      }
    }
  }
  return out;
}

void flip_horizontal(Tensor& chw) {
  const std::int64_t C = chw.shape[0], H = chw.shape[1], W = chw.shape[2];
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < H; ++y) {
      real* row = chw.data.data() + static_cast<std::size_t>((c * H + y) * W);
      std::reverse(row, row + W);
    }
}

void flip_vertical(Tensor& chw) {
  const std::int64_t C = chw.shape[0], H = chw.shape[1], W = chw.shape[2];
  for (std::int64_t c = 0; c < C; ++c)
    for (std::int64_t y = 0; y < H / 2; ++y) {
      real* a = chw.data.data() + static_cast<std::size_t>((c * H + y) * W);
      real* b = chw.data.data() + static_cast<std::size_t>((c * H + (H - 1 - y)) * W);
      std::swap_ranges(a, a + W, b);
    }
}

void standardize(Tensor& chw, const std::array<real, 3>& mean, const std::array<real, 3>& stdev) {
  const std::int64_t C = chw.shape[0], plane = chw.shape[1] * chw.shape[2];
  for (std::int64_t c = 0; c < C && c < 3; ++c) {
    real* p = chw.data.data() + static_cast<std::size_t>(c * plane);
    const real m = mean[static_cast<std::size_t>(c)];
    const real inv = real{1} / stdev[static_cast<std::size_t>(c)];
    for (std::int64_t i = 0; i < plane; ++i) p[i] = (p[i] - m) * inv;
  }
}

namespace {

void apply_train_flips(Tensor& chw, Rng& rng) {
  const bool h = rng.coin();
  const bool v = rng.coin();
  if (h) flip_horizontal(chw);
  if (v) flip_vertical(chw);
}

}  // namespace

ImageTensor preprocess_global(const ImageTensor& raw, bool train_mode, Rng& rng, const PipelineConfig& cfg) {
  if (raw.data.rank() != 3 || raw.channels() != 3)
    throw ValidationError("preprocess_global expects a 3-channel image, got " + raw.data.shape_str());
  ImageTensor out;
  out.source_path = raw.source_path;
  out.data = bilinear_resize(raw.data, cfg.global_size, cfg.global_size);
  if (train_mode) apply_train_flips(out.data, rng);
  standardize(out.data, cfg.mean, cfg.stdev);
  return out;
}

std::pair<ImageTensor, PatchSpec> sample_local_patch(const ImageTensor& raw, bool train_mode, Rng& rng,
                                                     const PipelineConfig& cfg) {
  if (raw.data.rank() != 3 || raw.channels() != 3)
    throw ValidationError("sample_local_patch expects a 3-channel image, got " + raw.data.shape_str());
  const std::int64_t H = raw.height(), W = raw.width();
  const std::int64_t short_side = std::min(H, W);
  if (short_side < 10)
    throw ValidationError("image too small for local sampling (min side 10): " + raw.source_path +
                          " is " + std::to_string(H) + "x" + std::to_string(W));

  PatchSpec spec;
  spec.fraction = rng.uniform(cfg.patch_fraction_min, cfg.patch_fraction_max);
  std::int64_t side = static_cast<std::int64_t>(std::llround(spec.fraction * static_cast<double>(short_side)));
  side = std::clamp<std::int64_t>(side, 1, short_side);
  spec.side = static_cast<int>(side);
  spec.top = static_cast<int>(rng.below(static_cast<std::uint64_t>(H - side + 1)));
  spec.left = static_cast<int>(rng.below(static_cast<std::uint64_t>(W - side + 1)));

  Tensor crop({3, side, side});
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < side; ++y) {
      const real* src = raw.data.data.data() + static_cast<std::size_t>((c * H + spec.top + y) * W + spec.left);
      real* dst = crop.data.data() + static_cast<std::size_t>((c * side + y) * side);
      std::copy(src, src + side, dst);
    }

  ImageTensor out;
  out.source_path = raw.source_path;
  out.data = bilinear_resize(crop, cfg.local_size, cfg.local_size);
  if (train_mode) apply_train_flips(out.data, rng);
  standardize(out.data, cfg.mean, cfg.stdev);
  return {std::move(out), spec};
}

Batch make_batch(const std::vector<std::pair<std::string, int>>& entries, const std::filesystem::path& root,
                 bool train_mode, Rng& global_rng, Rng* local_rng, const PipelineConfig& cfg) {
  if (entries.empty()) throw ValidationError("make_batch: empty entry list");

  const std::int64_t n = static_cast<std::int64_t>(entries.size());
  Batch batch;
  batch.train_mode = train_mode;
  batch.global = Tensor({n, 3, cfg.global_size, cfg.global_size});
  if (local_rng) batch.local = Tensor({n, 3, cfg.local_size, cfg.local_size});

  for (std::int64_t i = 0; i < n; ++i) {
    const auto& [rel, class_id] = entries[static_cast<std::size_t>(i)];
    ImageTensor raw = decode_image(root / rel);
    ImageTensor g = preprocess_global(raw, train_mode, global_rng, cfg);
    std::copy(g.data.data.begin(), g.data.data.end(),
              batch.global.data.begin() + static_cast<std::ptrdiff_t>(i * g.data.numel()));
    if (local_rng) {
      auto [l, spec] = sample_local_patch(raw, train_mode, *local_rng, cfg);
      std::copy(l.data.data.begin(), l.data.data.end(),
                batch.local.data.begin() + static_cast<std::ptrdiff_t>(i * l.data.numel()));
      batch.patch_specs.push_back(spec);
    }
    batch.labels.push_back(class_id);
    batch.paths.push_back(rel);
  }
  return batch;
}

}  // namespace kdctc
