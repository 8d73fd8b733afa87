#include "kdctc/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/core.hpp>

#include "kdctc/common.hpp"
#include "kdctc/rng.hpp"

namespace kdctc {

namespace fs = std::filesystem;

std::filesystem::path generate_synthetic_texture_dataset(int n_classes, int n_per_class, int image_size,
                                                         std::uint64_t seed, const fs::path& out_root) {
  if (n_classes < 2) throw ValidationError("synthetic dataset needs at least 2 classes");
  if (n_per_class < 1) throw ValidationError("n_per_class must be >= 1");
  if (image_size < 10) throw ValidationError("image_size must be >= 10");

  std::error_code ec;
  fs::create_directories(out_root, ec);
  if (ec) throw IoError("cannot create dataset root " + out_root.string() + ": " + ec.message());

  for (int c = 0; c < n_classes; ++c) {
    std::ostringstream cls;
    cls << "class_" << (c < 10 ? "0" : "") << c;
    const fs::path class_dir = out_root / cls.str();
    fs::create_directories(class_dir, ec);
    if (ec) throw IoError("cannot create class folder " + class_dir.string() + ": " + ec.message());

    // Frequency separates classes even under flips; orientation is a
    // secondary cue.
    const double theta = (std::numbers::pi / 2.0) * c / std::max(1, n_classes - 1);
    const double freq = 4.0 + 3.0 * c;
    const double base_phase = 0.7 * c;

    for (int i = 0; i < n_per_class; ++i) {
      Rng rng(seed, "synth/" + std::to_string(c) + "/" + std::to_string(i));
      const double phase = base_phase + rng.uniform(-0.3, 0.3);

      cv::Mat img(image_size, image_size, CV_8UC3);
      const double k = 2.0 * std::numbers::pi * freq / image_size;
      const double cx = std::cos(theta), sy = std::sin(theta);
      for (int y = 0; y < image_size; ++y) {
        auto* row = img.ptr<cv::Vec3b>(y);
        for (int x = 0; x < image_size; ++x) {
          double v = 0.5 + 0.35 * std::sin(k * (x * cx + y * sy) + phase);
          v += rng.uniform(-0.08, 0.08);
          const auto byte = static_cast<unsigned char>(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5);
          row[x] = {byte, byte, byte};
        }
      }

      std::ostringstream name;
      name << "img_";
      if (i < 100) name << "0";
      if (i < 10) name << "0";
      name << i << ".png";
      const fs::path file = class_dir / name.str();
      if (!cv::imwrite(file.string(), img)) throw IoError("cannot write image " + file.string());
    }
  }
  return out_root;
}

}  // namespace kdctc
