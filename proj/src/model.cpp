#include "kdctc/model.hpp"

#include <array>
#include <cctype>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "kdctc/rng.hpp"

namespace kdctc {

namespace {

constexpr std::uint32_t kCheckpointVersion = 1;
constexpr std::array<char, 4> kMagic = {'K', 'D', 'C', 'K'};

std::uint32_t crc32(const unsigned char* data, std::size_t len) {
  static const auto table = [] {
    std::array<std::uint32_t, 256> t{};
    for (std::uint32_t i = 0; i < 256; ++i) {
      std::uint32_t c = i;
      for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xedb88320u ^ (c >> 1) : c >> 1;
      t[i] = c;
    }
    return t;
  }();
  std::uint32_t crc = 0xffffffffu;
  for (std::size_t i = 0; i < len; ++i) crc = table[(crc ^ data[i]) & 0xffu] ^ (crc >> 8);
  return crc ^ 0xffffffffu;
}

bool is_head_param(const std::string& name) { return name.rfind("fc.", 0) == 0; }

void init_params(Model& model, std::uint64_t seed) {
  for (Param* p : model.params) {
    if (!p->requires_grad) continue;  // BN buffers keep their constructed values
    const std::string& name = p->name;
    const bool is_weight = name.size() > 7 && name.compare(name.size() - 7, 7, ".weight") == 0;
    if (name.find(".bn") != std::string::npos || name.find("downsample.1") != std::string::npos ||
        name.rfind("bn1.", 0) == 0) {
      continue;  // batchnorm affine params keep gamma=1, beta=0
    }
    Rng rng(seed, "init/" + name);
    if (is_head_param(name)) {
      // Fresh head: zero bias, small uniform weights.
      if (is_weight) {
        for (auto& v : p->value.data) v = static_cast<real>(rng.uniform(-0.01, 0.01));
      } else {
        p->value.fill(0);
      }
      continue;
    }
    if (is_weight) {
      std::int64_t fan_in = 1;
      for (std::size_t d = 1; d < p->value.shape.size(); ++d) fan_in *= p->value.shape[d];
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
      for (auto& v : p->value.data) v = static_cast<real>(rng.uniform(-bound, bound));
    } else {
      p->value.fill(0);
    }
  }
}

std::unique_ptr<Model> make_tiny_cnn(int blocks, int num_classes) {
  if (blocks < 1 || blocks > 6) throw ConfigError("tiny_cnn supports 1..6 blocks, got " + std::to_string(blocks));
  auto model = std::make_unique<Model>();
  model->arch_id = blocks == 3 ? "tiny_cnn" : "tiny_cnn" + std::to_string(blocks);
  model->num_classes = num_classes;
  model->downsample_factor = 4 << blocks;  // stem /2, pool /2, then /2 per block

  model->net.add(std::make_unique<Conv2d>("stem", 3, 8, 3, 2, 1, true));
  model->net.add(std::make_unique<ReLU>());
  model->net.add(std::make_unique<MaxPool2d>(2, 2, 0));
  int ch = 8;
  for (int b = 1; b <= blocks; ++b) {
    const int next = std::min(ch * 2, 64);
    model->net.add(std::make_unique<Conv2d>("block" + std::to_string(b), ch, next, 3, 1, 1, true));
    model->net.add(std::make_unique<ReLU>());
    model->net.add(std::make_unique<MaxPool2d>(2, 2, 0));
    ch = next;
  }
  model->net.add(std::make_unique<GlobalAvgPool>());
  model->net.add(std::make_unique<Linear>("fc", ch, num_classes));
  model->net.collect_params(model->params);
  return model;
}

std::unique_ptr<Model> make_resnet50(int num_classes) {
  auto model = std::make_unique<Model>();
  model->arch_id = "resnet50";
  model->num_classes = num_classes;
  model->downsample_factor = 32;

  model->net.add(std::make_unique<Conv2d>("conv1", 3, 64, 7, 2, 3, false));
  model->net.add(std::make_unique<BatchNorm2d>("bn1", 64));
  model->net.add(std::make_unique<ReLU>());
  model->net.add(std::make_unique<MaxPool2d>(3, 2, 1));

  const std::array<int, 4> block_counts = {3, 4, 6, 3};
  const std::array<int, 4> mid_channels = {64, 128, 256, 512};
  int in_ch = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const int mid = mid_channels[static_cast<std::size_t>(stage)];
    const int out = mid * 4;
    for (int b = 0; b < block_counts[static_cast<std::size_t>(stage)]; ++b) {
      const int stride = (b == 0 && stage > 0) ? 2 : 1;
      const bool with_downsample = (b == 0);
      std::ostringstream name;
      name << "layer" << (stage + 1) << "." << b;
      model->net.add(std::make_unique<Bottleneck>(name.str(), in_ch, mid, out, stride, with_downsample));
      in_ch = out;
    }
  }
  model->net.add(std::make_unique<GlobalAvgPool>());
  model->net.add(std::make_unique<Linear>("fc", in_ch, num_classes));
  model->net.collect_params(model->params);
  return model;
}

std::unique_ptr<Model> make_arch(const std::string& arch_id, int num_classes) {
  if (num_classes < 1) throw ConfigError("num_classes must be >= 1");
  if (arch_id == "resnet50") return make_resnet50(num_classes);
  if (arch_id == "tiny_cnn") return make_tiny_cnn(3, num_classes);
  if (arch_id.rfind("tiny_cnn", 0) == 0 && arch_id.size() == 9 && std::isdigit(static_cast<unsigned char>(arch_id[8])))
    return make_tiny_cnn(arch_id[8] - '0', num_classes);
  throw ConfigError("unknown architecture '" + arch_id + "' (supported: resnet50, tiny_cnn, tiny_cnn<N>)");
}

struct StoredParam {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<real> data;
};

struct StoredCheckpoint {
  std::string arch_id;
  std::uint32_t num_classes = 0;
  std::vector<std::string> class_names;
  std::vector<StoredParam> params;
};

template <class T>
void put(std::string& buf, const T& v) {
  const char* p = reinterpret_cast<const char*>(&v);
  buf.append(p, sizeof(T));
}

void put_string(std::string& buf, const std::string& s) {
  put(buf, static_cast<std::uint32_t>(s.size()));
  buf.append(s);
}

class Reader {
 public:
  Reader(const std::string& buf, const std::string& path) : buf_(buf), path_(path) {}

  template <class T>
  T get() {
    if (pos_ + sizeof(T) > buf_.size()) throw LoadError("truncated checkpoint: " + path_);
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string get_string() {
    const auto n = get<std::uint32_t>();
    if (pos_ + n > buf_.size()) throw LoadError("truncated checkpoint: " + path_);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void get_raw(void* dst, std::size_t n) {
    if (pos_ + n > buf_.size()) throw LoadError("truncated checkpoint: " + path_);
    std::memcpy(dst, buf_.data() + pos_, n);
    pos_ += n;
  }

 private:
  const std::string& buf_;
  std::string path_;
  std::size_t pos_ = 0;
};

StoredCheckpoint read_checkpoint_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw PathError("cannot open checkpoint: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  std::string buf = ss.str();

  if (buf.size() < kMagic.size() + 8 || std::memcmp(buf.data(), kMagic.data(), kMagic.size()) != 0)
    throw LoadError("not a kdctc checkpoint: " + path.string());

  // Trailing CRC over everything before it.
  std::uint32_t stored_crc;
  std::memcpy(&stored_crc, buf.data() + buf.size() - 4, 4);
  const std::uint32_t actual =
      crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size() - 4);
  if (stored_crc != actual)
    throw IntegrityError("checkpoint checksum mismatch: " + path.string());

  Reader r(buf, path.string());
  std::array<char, 4> magic{};
  r.get_raw(magic.data(), magic.size());
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw LoadError("unsupported checkpoint format_version " + std::to_string(version) + " in " + path.string());

  StoredCheckpoint ck;
  ck.arch_id = r.get_string();
  ck.num_classes = r.get<std::uint32_t>();
  const auto n_names = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < n_names; ++i) ck.class_names.push_back(r.get_string());
  const auto n_params = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < n_params; ++i) {
    StoredParam p;
    p.name = r.get_string();
    const auto ndim = r.get<std::uint32_t>();
    for (std::uint32_t d = 0; d < ndim; ++d) p.shape.push_back(r.get<std::int64_t>());
    const auto count = r.get<std::uint64_t>();
    p.data.resize(count);
    r.get_raw(p.data.data(), count * sizeof(real));
    ck.params.push_back(std::move(p));
  }
  return ck;
}

}  // namespace

Tensor Model::forward(const Tensor& images, const FwdOpts& opts, Tape* tape) {
  if (images.rank() != 4 || images.shape[1] != 3)
    throw ShapeError("model input must be Nx3xHxW, got " + images.shape_str());
  if (images.shape[2] % downsample_factor != 0 || images.shape[3] % downsample_factor != 0)
    throw ShapeError("input " + images.shape_str() + " sides must be multiples of the downsample factor " +
                     std::to_string(downsample_factor));
  return net.forward(images, opts, tape);
}

void Model::backward(const Tensor& dlogits, const FwdOpts& opts, Tape& tape) {
  net.backward(dlogits, opts, tape);
}

void Model::zero_grads() {
  for (Param* p : params) p->zero_grad();
}

Param* Model::find_param(const std::string& name) {
  for (Param* p : params)
    if (p->name == name) return p;
  return nullptr;
}

std::unique_ptr<Model> build_model(const std::string& arch_id, int num_classes, const ModelInit& init) {
  auto model = make_arch(arch_id, num_classes);

  if (const auto* random = std::get_if<InitRandom>(&init)) {
    init_params(*model, random->seed);
    return model;
  }

  const auto& pre = std::get<InitPretrained>(init);
  StoredCheckpoint ck = read_checkpoint_file(pre.path);
  if (ck.arch_id != arch_id)
    throw LoadError("pretrained weights are for arch '" + ck.arch_id + "', requested '" + arch_id + "'");

  init_params(*model, pre.head_seed);  // seeds the fresh head; backbone is overwritten below

  std::map<std::string, const StoredParam*> stored;
  for (const auto& p : ck.params) stored[p.name] = &p;

  std::vector<std::string> problems;
  for (Param* p : model->params) {
    if (is_head_param(p->name)) continue;  // head stays freshly initialized
    auto it = stored.find(p->name);
    if (it == stored.end()) {
      problems.push_back("missing: " + p->name);
      continue;
    }
    if (it->second->shape != p->value.shape) {
      std::ostringstream os;
      os << "shape mismatch: " << p->name << " file " << Tensor(it->second->shape).shape_str() << " vs model "
         << p->value.shape_str();
      problems.push_back(os.str());
      continue;
    }
    p->value.data = it->second->data;
  }
  if (!problems.empty()) {
    std::ostringstream os;
    os << "pretrained weight file " << pre.path.string() << " does not match arch " << arch_id << ":";
    for (const auto& s : problems) os << "\n  " << s;
    throw LoadError(os.str());
  }
  return model;
}

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::string buf;
  buf.append(kMagic.data(), kMagic.size());
  put(buf, kCheckpointVersion);
  put_string(buf, model.arch_id);
  put(buf, static_cast<std::uint32_t>(model.num_classes));
  put(buf, static_cast<std::uint32_t>(model.class_names.size()));
  for (const auto& n : model.class_names) put_string(buf, n);
  put(buf, static_cast<std::uint64_t>(model.params.size()));
  for (const Param* p : model.params) {
    put_string(buf, p->name);
    put(buf, static_cast<std::uint32_t>(p->value.shape.size()));
    for (auto d : p->value.shape) put(buf, d);
    put(buf, static_cast<std::uint64_t>(p->value.data.size()));
    buf.append(reinterpret_cast<const char*>(p->value.data.data()), p->value.data.size() * sizeof(real));
  }
  const std::uint32_t crc = crc32(reinterpret_cast<const unsigned char*>(buf.data()), buf.size());
  put(buf, crc);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("failed while writing checkpoint: " + path.string());
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path) {
  StoredCheckpoint ck = read_checkpoint_file(path);
  auto model = make_arch(ck.arch_id, static_cast<int>(ck.num_classes));
  model->class_names = ck.class_names;

  std::map<std::string, const StoredParam*> stored;
  for (const auto& p : ck.params) stored[p.name] = &p;
  if (stored.size() != model->params.size())
    throw LoadError("checkpoint " + path.string() + " has " + std::to_string(stored.size()) +
                    " parameters, arch expects " + std::to_string(model->params.size()));
  for (Param* p : model->params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw LoadError("checkpoint missing parameter '" + p->name + "': " + path.string());
    if (it->second->shape != p->value.shape)
      throw LoadError("checkpoint parameter '" + p->name + "' has shape " + Tensor(it->second->shape).shape_str() +
                      ", expected " + p->value.shape_str());
    p->value.data = it->second->data;
  }
  return model;
}

}  // namespace kdctc
