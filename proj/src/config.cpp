#include "kdctc/config.hpp"

#include <fstream>
#include <sstream>

namespace kdctc {

namespace {

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("key '" + key + "': expected a boolean, got '" + v + "'");
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected a number, got '" + v + "'");
  }
}

std::int64_t parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::int64_t x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    throw ConfigError("key '" + key + "': expected an integer, got '" + v + "'");
  }
}

std::array<real, 3> parse_triple(const std::string& key, const std::string& v) {
  std::array<real, 3> out{};
  std::stringstream ss(v);
  std::string part;
  int i = 0;
  while (std::getline(ss, part, ',')) {
    if (i >= 3) throw ConfigError("key '" + key + "': expected three comma-separated numbers");
    out[static_cast<std::size_t>(i++)] = static_cast<real>(parse_real(key, trim(part)));
  }
  if (i != 3) throw ConfigError("key '" + key + "': expected three comma-separated numbers");
  return out;
}

std::string format_real(real v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

std::string format_triple(const std::array<real, 3>& t) {
  return format_real(t[0]) + "," + format_real(t[1]) + "," + format_real(t[2]);
}

}  // namespace

const char* to_string(Method m) {
  switch (m) {
    case Method::vanilla: return "vanilla";
    case Method::vanilla_plus_sampling: return "vanilla_plus_sampling";
    case Method::kd_ctcnet: return "kd_ctcnet";
  }
  return "?";
}

Method method_from_string(const std::string& s) {
  if (s == "vanilla") return Method::vanilla;
  if (s == "vanilla_plus_sampling") return Method::vanilla_plus_sampling;
  if (s == "kd_ctcnet") return Method::kd_ctcnet;
  throw ConfigError("unknown method '" + s + "' (expected vanilla, vanilla_plus_sampling or kd_ctcnet)");
}

void TrainConfig::validate() const {
  if (lr <= 0) throw ConfigError("lr must be > 0");
  if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0, 1)");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (total_steps < 1) throw ConfigError("total_steps must be >= 1");
  if (eval_every < 0 || checkpoint_every < 0) throw ConfigError("intervals must be >= 0");
  loss.validate();
}

KvMap parse_kv_text(const std::string& text, const std::string& origin) {
  KvMap kv;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const std::string stripped = trim(line);
    if (stripped.empty() || stripped[0] == '#') continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ParseError(origin + ":" + std::to_string(line_no) + ": expected 'key = value', got '" + stripped + "'");
    const std::string key = trim(stripped.substr(0, eq));
    const std::string value = trim(stripped.substr(eq + 1));
    if (key.empty())
      throw ParseError(origin + ":" + std::to_string(line_no) + ": empty key");
    kv[key] = value;
  }
  return kv;
}

KvMap parse_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open config file: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_kv_text(ss.str(), path.string());
}

void apply_kv(RunConfig& cfg, const KvMap& kv) {
  for (const auto& [key, value] : kv) {
    if (key == "arch") cfg.arch = value;
    else if (key == "method") cfg.method = method_from_string(value);
    else if (key == "init") {
      if (value != "random" && value != "pretrained")
        throw ConfigError("init must be 'random' or 'pretrained', got '" + value + "'");
      cfg.init = value;
    } else if (key == "pretrained_path") cfg.pretrained_path = value;
    else if (key == "disable_local") cfg.disable_local = parse_bool(key, value);
    else if (key == "split_seed") cfg.split_seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "lr") cfg.train.lr = static_cast<real>(parse_real(key, value));
    else if (key == "momentum") cfg.train.momentum = static_cast<real>(parse_real(key, value));
    else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(parse_int(key, value));
    else if (key == "total_steps") cfg.train.total_steps = static_cast<int>(parse_int(key, value));
    else if (key == "mixed_precision") cfg.train.mixed_precision = parse_bool(key, value);
    else if (key == "seed") cfg.train.seed = static_cast<std::uint64_t>(parse_int(key, value));
    else if (key == "eval_every") cfg.train.eval_every = static_cast<int>(parse_int(key, value));
    else if (key == "checkpoint_every") cfg.train.checkpoint_every = static_cast<int>(parse_int(key, value));
    else if (key == "dump_patches") cfg.train.dump_patches = parse_bool(key, value);
    else if (key == "alpha") cfg.train.loss.alpha = static_cast<real>(parse_real(key, value));
    else if (key == "n_min") cfg.train.loss.n_min = static_cast<int>(parse_int(key, value));
    else if (key == "focal_gamma") cfg.train.loss.focal_gamma = static_cast<real>(parse_real(key, value));
    else if (key == "main_weight") cfg.train.loss.main_weight = static_cast<real>(parse_real(key, value));
    else if (key == "dist_weight") cfg.train.loss.dist_weight = static_cast<real>(parse_real(key, value));
    else if (key == "global_size") cfg.pipeline.global_size = static_cast<int>(parse_int(key, value));
    else if (key == "local_size") cfg.pipeline.local_size = static_cast<int>(parse_int(key, value));
    else if (key == "patch_fraction_min") cfg.pipeline.patch_fraction_min = parse_real(key, value);
    else if (key == "patch_fraction_max") cfg.pipeline.patch_fraction_max = parse_real(key, value);
    else if (key == "norm_mean") cfg.pipeline.mean = parse_triple(key, value);
    else if (key == "norm_std") cfg.pipeline.stdev = parse_triple(key, value);
    else throw ConfigError("unknown config key '" + key + "'");
  }
}

KvMap config_to_kv(const RunConfig& cfg) {
  KvMap kv;
  kv["arch"] = cfg.arch;
  kv["method"] = to_string(cfg.method);
  kv["init"] = cfg.init;
  kv["pretrained_path"] = cfg.pretrained_path;
  kv["disable_local"] = cfg.disable_local ? "true" : "false";
  kv["split_seed"] = std::to_string(cfg.split_seed);
  kv["lr"] = format_real(cfg.train.lr);
  kv["momentum"] = format_real(cfg.train.momentum);
  kv["batch_size"] = std::to_string(cfg.train.batch_size);
  kv["total_steps"] = std::to_string(cfg.train.total_steps);
  kv["mixed_precision"] = cfg.train.mixed_precision ? "true" : "false";
  kv["seed"] = std::to_string(cfg.train.seed);
  kv["eval_every"] = std::to_string(cfg.train.eval_every);
  kv["checkpoint_every"] = std::to_string(cfg.train.checkpoint_every);
  kv["dump_patches"] = cfg.train.dump_patches ? "true" : "false";
  kv["alpha"] = format_real(cfg.train.loss.alpha);
  kv["n_min"] = std::to_string(cfg.train.loss.n_min);
  kv["focal_gamma"] = format_real(cfg.train.loss.focal_gamma);
  kv["main_weight"] = format_real(cfg.train.loss.main_weight);
  kv["dist_weight"] = format_real(cfg.train.loss.dist_weight);
  kv["global_size"] = std::to_string(cfg.pipeline.global_size);
  kv["local_size"] = std::to_string(cfg.pipeline.local_size);
  kv["patch_fraction_min"] = format_real(cfg.pipeline.patch_fraction_min);
  kv["patch_fraction_max"] = format_real(cfg.pipeline.patch_fraction_max);
  kv["norm_mean"] = format_triple(cfg.pipeline.mean);
  kv["norm_std"] = format_triple(cfg.pipeline.stdev);
  return kv;
}

std::string render_kv(const KvMap& kv) {
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  return os.str();
}

}  // namespace kdctc
