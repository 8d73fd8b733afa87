#include "kdctc/manifest.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "kdctc/rng.hpp"

namespace kdctc {

namespace fs = std::filesystem;

namespace {

constexpr std::array<const char*, 6> kImageExtensions = {".png", ".tif", ".tiff", ".jpg", ".jpeg", ".bmp"};

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

bool is_image_extension(const fs::path& p) {
  const std::string ext = lower(p.extension().string());
  return std::find(kImageExtensions.begin(), kImageExtensions.end(), ext) != kImageExtensions.end();
}

void check_token(const std::string& s, const char* what) {
  if (s.find_first_of(",\t\n\r") != std::string::npos)
    throw ValidationError(std::string(what) + " contains a reserved character: '" + s + "'");
}

// Manifest entries are kept class-major and path-sorted within a class, so
// files are byte-stable regardless of draw order.
void canonicalize(std::vector<std::pair<std::string, int>>& entries) {
  std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
}

std::vector<std::string> class_entry_paths(const std::vector<std::pair<std::string, int>>& entries, int class_id) {
  std::vector<std::string> out;
  for (const auto& [path, cid] : entries)
    if (cid == class_id) out.push_back(path);
  return out;
}

}  // namespace

int DatasetIndex::class_count(int class_id) const {
  int n = 0;
  for (const auto& s : samples)
    if (s.second == class_id) ++n;
  return n;
}

const char* to_string(SplitRole role) { return role == SplitRole::train ? "train" : "test"; }

SplitRole split_role_from_string(const std::string& s) {
  if (s == "train") return SplitRole::train;
  if (s == "test") return SplitRole::test;
  throw ParseError("unknown split role: '" + s + "'");
}

DatasetIndex scan_dataset(const fs::path& root, ScanReport* report) {
  if (!fs::exists(root)) throw PathError("dataset root does not exist: " + root.string());
  if (!fs::is_directory(root)) throw PathError("dataset root is not a directory: " + root.string());

  DatasetIndex index;
  index.root_path = root;

  std::vector<std::string> class_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) class_dirs.push_back(entry.path().filename().string());
  }
  std::sort(class_dirs.begin(), class_dirs.end());
  if (class_dirs.empty()) throw ValidationError("dataset root has no class folders: " + root.string());

  index.classes = class_dirs;
  for (int class_id = 0; class_id < static_cast<int>(class_dirs.size()); ++class_id) {
    const fs::path class_path = root / class_dirs[static_cast<std::size_t>(class_id)];
    std::vector<std::string> files;
    for (const auto& entry : fs::directory_iterator(class_path)) {
      const fs::path& p = entry.path();
      const std::string rel = class_dirs[static_cast<std::size_t>(class_id)] + "/" + p.filename().string();
      if (!entry.is_regular_file()) {
        if (report) report->warnings.push_back("skipped (not a regular file): " + rel);
        continue;
      }
      if (!is_image_extension(p)) {
        if (report) report->warnings.push_back("skipped (not an image): " + rel);
        continue;
      }
      std::error_code ec;
      const auto size = fs::file_size(p, ec);
      if (ec || size == 0) {
        if (report) report->warnings.push_back("skipped (unreadable or empty): " + rel);
        continue;
      }
      files.push_back(rel);
    }
    if (files.empty())
      throw ValidationError("class folder is empty: '" + class_dirs[static_cast<std::size_t>(class_id)] + "'");
    std::sort(files.begin(), files.end());
    for (auto& f : files) index.samples.emplace_back(std::move(f), class_id);
  }

  // Best-effort size hint from the first decodable sample.
  if (!index.samples.empty()) {
    cv::Mat probe = cv::imread((root / index.samples.front().first).string(), cv::IMREAD_COLOR);
    if (!probe.empty()) index.image_size_hint = {probe.rows, probe.cols};
  }
  return index;
}

DatasetIndex subsample_balanced(const DatasetIndex& index, int n_per_class, std::uint64_t seed) {
  if (n_per_class < 1) throw ValidationError("n_per_class must be >= 1");
  DatasetIndex out;
  out.root_path = index.root_path;
  out.classes = index.classes;
  out.image_size_hint = index.image_size_hint;

  for (int class_id = 0; class_id < static_cast<int>(index.classes.size()); ++class_id) {
    std::vector<std::string> paths = class_entry_paths(index.samples, class_id);
    if (static_cast<int>(paths.size()) < n_per_class)
      throw ValidationError("class '" + index.classes[static_cast<std::size_t>(class_id)] + "' has " +
                            std::to_string(paths.size()) + " samples, need " + std::to_string(n_per_class));
    Rng rng(seed, "subsample/" + index.classes[static_cast<std::size_t>(class_id)]);
    rng.shuffle(paths);
    paths.resize(static_cast<std::size_t>(n_per_class));
    std::sort(paths.begin(), paths.end());
    for (auto& p : paths) out.samples.emplace_back(std::move(p), class_id);
  }
  return out;
}

std::pair<SplitManifest, SplitManifest> stratified_split(const DatasetIndex& index, std::uint64_t seed) {
  if (index.samples.empty()) throw ValidationError("cannot split an empty dataset index");

  const int first_count = index.class_count(0);
  for (int c = 1; c < static_cast<int>(index.classes.size()); ++c) {
    if (index.class_count(c) != first_count)
      throw ValidationError("stratified_split requires a class-balanced index; class '" + index.classes[static_cast<std::size_t>(c)] +
                            "' has " + std::to_string(index.class_count(c)) + " samples vs " + std::to_string(first_count));
  }

  SplitManifest train, test;
  const std::string dataset_id = index.root_path.filename().string();
  for (SplitManifest* m : {&train, &test}) {
    m->dataset_id = dataset_id.empty() ? "dataset" : dataset_id;
    m->percentage = 100;
    m->seed = seed;
    m->classes = index.classes;
  }
  train.role = SplitRole::train;
  test.role = SplitRole::test;
  train.per_class_count = first_count / 2;
  test.per_class_count = first_count - first_count / 2;

  for (int class_id = 0; class_id < static_cast<int>(index.classes.size()); ++class_id) {
    std::vector<std::string> paths = class_entry_paths(index.samples, class_id);
    Rng rng(seed, "split/" + index.classes[static_cast<std::size_t>(class_id)]);
    rng.shuffle(paths);
    for (std::size_t i = 0; i < paths.size(); ++i) {
      auto& side = (i < static_cast<std::size_t>(train.per_class_count)) ? train : test;
      side.entries.emplace_back(paths[i], class_id);
    }
  }
  canonicalize(train.entries);
  canonicalize(test.entries);
  return {train, test};
}

int low_data_count(int percentage, int base_per_class) {
  if (percentage < 1 || percentage > 100)
    throw ValidationError("percentage must be in [1, 100], got " + std::to_string(percentage));
  if (base_per_class < 1) throw ValidationError("base per-class count must be >= 1");

  static const std::map<int, int> kTable = {{1, 3},   {3, 9},   {5, 15},  {10, 30},  {20, 62},
                                            {30, 93}, {40, 124}, {50, 156}, {75, 234}, {100, 312}};
  int count;
  if (auto it = kTable.find(percentage); it != kTable.end()) {
    count = (base_per_class == 312)
                ? it->second
                : static_cast<int>(static_cast<std::int64_t>(it->second) * base_per_class / 312);
  } else {
    count = static_cast<int>(static_cast<std::int64_t>(base_per_class) * percentage / 100);
  }
  if (count < 1)
    throw ValidationError("percentage " + std::to_string(percentage) + " of a " + std::to_string(base_per_class) +
                          "-per-class split yields zero samples");
  return count;
}

SplitManifest sample_low_data(const SplitManifest& train_full, int percentage, std::uint64_t seed) {
  if (train_full.role != SplitRole::train)
    throw ValidationError("sample_low_data expects a train manifest");
  if (train_full.percentage != 100)
    throw ValidationError("sample_low_data expects a full (100%) train split, got " +
                          std::to_string(train_full.percentage) + "%");

  const int count = low_data_count(percentage, train_full.per_class_count);
  if (count > train_full.per_class_count)
    throw ValidationError("requested " + std::to_string(count) + " samples/class, only " +
                          std::to_string(train_full.per_class_count) + " available");

  SplitManifest out;
  out.dataset_id = train_full.dataset_id;
  out.role = SplitRole::train;
  out.percentage = percentage;
  out.seed = seed;
  out.classes = train_full.classes;
  out.per_class_count = count;

  for (int class_id = 0; class_id < static_cast<int>(train_full.classes.size()); ++class_id) {
    std::vector<std::string> paths = class_entry_paths(train_full.entries, class_id);
    // Stream tagged with percentage and class: draws are independent across
    // percentages (no nesting) and across classes.
    Rng rng(seed, "lowdata/" + std::to_string(percentage) + "/" + train_full.classes[static_cast<std::size_t>(class_id)]);
    rng.shuffle(paths);
    paths.resize(static_cast<std::size_t>(count));
    std::sort(paths.begin(), paths.end());
    for (auto& p : paths) out.entries.emplace_back(std::move(p), class_id);
  }
  return out;
}

void write_manifest(const SplitManifest& m, const fs::path& path) {
  check_token(m.dataset_id, "dataset_id");
  for (const auto& c : m.classes) check_token(c, "class name");
  for (const auto& [p, cid] : m.entries) {
    if (p.find_first_of("\t\n\r") != std::string::npos)
      throw ValidationError("entry path contains a reserved character: '" + p + "'");
    (void)cid;
  }

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open manifest for writing: " + path.string());
  out << "# kdctc manifest\n";
  out << "format_version: 1\n";
  out << "dataset_id: " << m.dataset_id << "\n";
  out << "role: " << to_string(m.role) << "\n";
  out << "percentage: " << m.percentage << "\n";
  out << "seed: " << m.seed << "\n";
  out << "per_class_count: " << m.per_class_count << "\n";
  out << "rng: " << kRngAlgorithmId << "\n";
  out << "classes: ";
  for (std::size_t i = 0; i < m.classes.size(); ++i) out << (i ? "," : "") << m.classes[i];
  out << "\n";
  out << "entries: " << m.entries.size() << "\n";
  for (const auto& [p, cid] : m.entries) out << p << "\t" << cid << "\n";
  if (!out) throw IoError("failed while writing manifest: " + path.string());
}

SplitManifest read_manifest(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open manifest: " + path.string());

  SplitManifest m;
  std::string line;
  int line_no = 0;
  std::map<std::string, std::string> header;
  std::size_t expected_entries = 0;

  auto fail = [&](const std::string& why) {
    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + why);
  };

  // Header block: comments, then `key: value` lines up to and including `entries:`.
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(": ");
    if (colon == std::string::npos) fail("expected 'key: value' in header, got '" + line + "'");
    const std::string key = line.substr(0, colon);
    const std::string value = line.substr(colon + 2);
    header[key] = value;
    if (key == "entries") {
      try {
        expected_entries = static_cast<std::size_t>(std::stoull(value));
      } catch (const std::exception&) {
        fail("bad entry count '" + value + "'");
      }
      break;
    }
  }

  for (const char* required : {"format_version", "dataset_id", "role", "percentage", "seed", "per_class_count", "classes", "entries"})
    if (!header.count(required)) throw ParseError(path.string() + ": missing header field '" + std::string(required) + "'");
  if (header["format_version"] != "1")
    throw ParseError(path.string() + ": unsupported format_version '" + header["format_version"] + "'");

  m.dataset_id = header["dataset_id"];
  m.role = split_role_from_string(header["role"]);
  try {
    m.percentage = std::stoi(header["percentage"]);
    m.seed = std::stoull(header["seed"]);
    m.per_class_count = std::stoi(header["per_class_count"]);
  } catch (const std::exception&) {
    throw ParseError(path.string() + ": malformed numeric header field");
  }

  std::stringstream classes(header["classes"]);
  std::string cls;
  while (std::getline(classes, cls, ',')) m.classes.push_back(cls);
  if (m.classes.empty()) throw ParseError(path.string() + ": empty class list");

  std::set<std::string> seen;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) fail("expected 'path<TAB>class_id', got '" + line + "'");
    const std::string p = line.substr(0, tab);
    int cid = -1;
    try {
      cid = std::stoi(line.substr(tab + 1));
    } catch (const std::exception&) {
      fail("bad class id in '" + line + "'");
    }
    if (cid < 0 || cid >= static_cast<int>(m.classes.size()))
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": unknown class_id " + std::to_string(cid));
    if (!seen.insert(p).second)
      throw ValidationError(path.string() + ":" + std::to_string(line_no) + ": duplicated entry '" + p + "'");
    m.entries.emplace_back(p, cid);
  }
  if (m.entries.size() != expected_entries)
    throw ParseError(path.string() + ": header announces " + std::to_string(expected_entries) + " entries, found " +
                     std::to_string(m.entries.size()));

  for (int c = 0; c < static_cast<int>(m.classes.size()); ++c) {
    int n = 0;
    for (const auto& e : m.entries)
      if (e.second == c) ++n;
    if (n != m.per_class_count)
      throw ValidationError(path.string() + ": class '" + m.classes[static_cast<std::size_t>(c)] + "' has " +
                            std::to_string(n) + " entries, header says " + std::to_string(m.per_class_count));
  }
  return m;
}

std::vector<std::string> entries_of_class(const SplitManifest& m, int class_id) {
  return class_entry_paths(m.entries, class_id);
}

}  // namespace kdctc
