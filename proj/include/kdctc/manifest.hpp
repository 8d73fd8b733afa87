#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "kdctc/common.hpp"

namespace kdctc {

// Immutable catalog of (relative image path, class id) pairs discovered on
// disk. Class ids index the lexicographically sorted `classes` list.
struct DatasetIndex {
  std::filesystem::path root_path;
  std::vector<std::string> classes;
  std::vector<std::pair<std::string, int>> samples;  // (relative_path, class_id)
  std::pair<int, int> image_size_hint{0, 0};         // (height, width), 0 if unknown

  int class_count(int class_id) const;
};

struct ScanReport {
  std::vector<std::string> warnings;  // skipped/unreadable files, one line each
};

enum class SplitRole { train, test };

const char* to_string(SplitRole role);
SplitRole split_role_from_string(const std::string& s);

// Seed-stamped, class-balanced list of sample references defining one train
// or test set. Byte-stable on disk for a fixed seed.
struct SplitManifest {
  std::string dataset_id;
  SplitRole role = SplitRole::train;
  int percentage = 100;
  std::uint64_t seed = 0;
  std::vector<std::string> classes;
  std::vector<std::pair<std::string, int>> entries;
  int per_class_count = 0;
};

// Walks a class-per-folder tree. Classes are the sorted subdirectory names,
// samples the sorted image files within each. Non-image or unreadable files
// go to `report` (if given) and are excluded.
DatasetIndex scan_dataset(const std::filesystem::path& root, ScanReport* report = nullptr);

// Seeded uniform draw of exactly n_per_class samples from every class,
// without replacement.
DatasetIndex subsample_balanced(const DatasetIndex& index, int n_per_class, std::uint64_t seed);

// Per class: seeded shuffle, floor(n/2) samples to train, remainder to test.
std::pair<SplitManifest, SplitManifest> stratified_split(const DatasetIndex& index, std::uint64_t seed);

// Per-class sample count for one percentage of a `base`-per-class train
// split. The ten canonical percentages follow the published lookup table for
// a 312-per-class base (the table's 10% entry is 30, not floor(31.2), so the
// table wins over the formula); other combinations floor-scale.
int low_data_count(int percentage, int base_per_class);

// Draws a low-data training subset from a full (100%) train manifest.
// Independent seeded draw per class, without replacement.
SplitManifest sample_low_data(const SplitManifest& train_full, int percentage, std::uint64_t seed);

void write_manifest(const SplitManifest& manifest, const std::filesystem::path& path);
SplitManifest read_manifest(const std::filesystem::path& path);

// Entries of one class, in manifest order.
std::vector<std::string> entries_of_class(const SplitManifest& m, int class_id);

}  // namespace kdctc
