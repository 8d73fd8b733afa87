#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "kdctc/image.hpp"
#include "kdctc/objectives.hpp"

namespace kdctc {

enum class Method { vanilla, vanilla_plus_sampling, kd_ctcnet };

const char* to_string(Method m);
Method method_from_string(const std::string& s);

struct TrainConfig {
  real lr = 0.01;
  real momentum = 0.9;
  int batch_size = 32;
  int total_steps = 3000;
  LossConfig loss;
  bool mixed_precision = false;
  std::uint64_t seed = 0;
  int eval_every = 0;       // 0 = no periodic eval
  int checkpoint_every = 0;  // 0 = only at completion
  bool dump_patches = false;

  void validate() const;
};

// Everything a run needs, resolvable from a flat key-value file plus CLI
// overrides; the resolved form is snapshotted into each run record.
struct RunConfig {
  std::string arch = "resnet50";
  Method method = Method::kd_ctcnet;
  std::string init = "random";  // "random" | "pretrained"
  std::string pretrained_path;
  bool disable_local = false;  // kd_ctcnet with the local branch switched off
  std::uint64_t split_seed = 0;
  TrainConfig train;
  PipelineConfig pipeline;
};

using KvMap = std::map<std::string, std::string>;

// `key = value` lines, '#' comments. Duplicate keys: last one wins.
KvMap parse_kv_text(const std::string& text, const std::string& origin);
KvMap parse_kv_file(const std::filesystem::path& path);

// Applies entries onto `cfg`. Unknown keys are config errors.
void apply_kv(RunConfig& cfg, const KvMap& kv);

// Full resolved snapshot, every field present.
KvMap config_to_kv(const RunConfig& cfg);
std::string render_kv(const KvMap& kv);

}  // namespace kdctc
