#pragma once

#include <cstdint>
#include <filesystem>

namespace kdctc {

// Writes a class-per-folder dataset of procedurally generated textures:
// each class is an oriented sinusoidal grating with a class-specific
// orientation and spatial frequency, plus per-image phase jitter and pixel
// noise. Deterministic per (seed, class, image index), so repeated runs are
// byte-identical. Returns out_root.
std::filesystem::path generate_synthetic_texture_dataset(int n_classes, int n_per_class, int image_size,
                                                         std::uint64_t seed, const std::filesystem::path& out_root);

}  // namespace kdctc
