#include "evssm/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "config_json.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint serialization assumes a little-endian host");

namespace evssm {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'E', 'V', 'S', 'S', 'M', 'C', 'K', 'P'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string* out, std::uint32_t v) {
  out->append(reinterpret_cast<const char*>(&v), sizeof v);
}

void put_u64(std::string* out, std::uint64_t v) {
  out->append(reinterpret_cast<const char*>(&v), sizeof v);
}

class Reader {
 public:
  Reader(const std::uint8_t* p, std::size_t n) : p_(p), n_(n) {}

  void bytes(void* dst, std::size_t n) {
    if (pos_ + n > n_) throw std::runtime_error("checkpoint: truncated file");
    std::memcpy(dst, p_ + pos_, n);
    pos_ += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str(std::size_t n) {
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool done() const { return pos_ == n_; }

 private:
  const std::uint8_t* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const CheckpointFile& file) {
  std::string out;
  out.append(kMagic, sizeof kMagic);
  put_u32(&out, kVersion);
  put_u64(&out, file.meta.size());
  out += file.meta;
  put_u32(&out, static_cast<std::uint32_t>(file.tensors.size()));
  for (const TensorEntry& t : file.tensors) {
    put_u32(&out, static_cast<std::uint32_t>(t.name.size()));
    out += t.name;
    put_u32(&out, t.dtype);
    put_u32(&out, static_cast<std::uint32_t>(t.shape.size()));
    for (std::uint64_t d : t.shape) put_u64(&out, d);
    put_u64(&out, t.data.size());
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size());
  }

  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("checkpoint: cannot write " + tmp.string());
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("checkpoint: short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

CheckpointFile load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("checkpoint: cannot open " + path.string());
  std::vector<std::uint8_t> raw((std::istreambuf_iterator<char>(f)),
                                std::istreambuf_iterator<char>());
  Reader r(raw.data(), raw.size());

  char magic[8];
  r.bytes(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error("checkpoint: bad header magic in " + path.string());
  }
  std::uint32_t version = r.u32();
  if (version != kVersion) {
    throw std::runtime_error("checkpoint: unsupported header version " +
                             std::to_string(version));
  }
  CheckpointFile file;
  file.meta = r.str(r.u64());
  std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry t;
    t.name = r.str(r.u32());
    t.dtype = r.u32();
    std::uint32_t ndim = r.u32();
    t.shape.resize(ndim);
    for (std::uint32_t d = 0; d < ndim; ++d) t.shape[d] = r.u64();
    t.data.resize(r.u64());
    r.bytes(t.data.data(), t.data.size());
    file.tensors.push_back(std::move(t));
  }
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes in " + path.string());
  return file;
}

namespace {

template <typename T>
constexpr std::uint32_t dtype_of() {
  return sizeof(T) == 4 ? kCkptDtypeF32 : kCkptDtypeF64;
}

template <typename T>
TensorEntry make_entry(const std::string& name, const std::vector<T>& v) {
  TensorEntry t;
  t.name = name;
  t.shape = {static_cast<std::uint64_t>(v.size())};
  t.dtype = dtype_of<T>();
  t.data.resize(v.size() * sizeof(T));
  std::memcpy(t.data.data(), v.data(), t.data.size());
  return t;
}

template <typename T>
void read_entry(const TensorEntry& t, std::vector<T>* v) {
  if (t.dtype != dtype_of<T>()) {
    throw std::runtime_error("checkpoint: tensor '" + t.name + "' has the wrong dtype");
  }
  if (t.data.size() != v->size() * sizeof(T)) {
    throw std::runtime_error("checkpoint: tensor '" + t.name + "' has " +
                             std::to_string(t.data.size() / sizeof(T)) + " values, expected " +
                             std::to_string(v->size()));
  }
  std::memcpy(v->data(), t.data.data(), t.data.size());
}

json parse_meta(const CheckpointFile& file) {
  try {
    return json::parse(file.meta);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(std::string("checkpoint: bad meta block: ") + e.what());
  }
}

template <typename T>
ModelConfig config_checked(const json& meta) {
  ModelConfig cfg;
  detail::model_from_json(meta.at("model"), &cfg);
  std::string dtype = meta.at("dtype").get<std::string>();
  const char* want = sizeof(T) == 4 ? "float" : "double";
  if (dtype != want) {
    throw std::runtime_error("checkpoint: stores " + dtype + " tensors, loader expects " + want);
  }
  return cfg;
}

}  // namespace

template <typename T>
void save_train_state(const std::filesystem::path& path, const TrainState<T>& st,
                      const CkptInfo& info) {
  CheckpointFile file;
  json meta{{"format", "train_state"},
            {"dtype", sizeof(T) == 4 ? "float" : "double"},
            {"model", detail::model_to_json(st.weights.cfg)},
            {"step", st.step},
            {"seed", st.seed},
            {"epochs_done", info.epochs_done},
            {"time_unit", info.time_unit},
            {"batch_size", info.batch_size}};
  file.meta = meta.dump(2);
  st.weights.for_each_tensor([&](const std::string& name, const std::vector<T>& v, ParamRole) {
    file.tensors.push_back(make_entry("weights." + name, v));
  });
  st.m.for_each_tensor([&](const std::string& name, const std::vector<T>& v, ParamRole) {
    file.tensors.push_back(make_entry("m." + name, v));
  });
  st.v.for_each_tensor([&](const std::string& name, const std::vector<T>& v, ParamRole) {
    file.tensors.push_back(make_entry("v." + name, v));
  });
  save_checkpoint(path, file);
}

namespace {

CkptInfo info_from_meta(const json& meta) {
  CkptInfo info;
  info.epochs_done = meta.at("epochs_done").get<int>();
  info.time_unit = meta.at("time_unit").get<double>();
  info.batch_size = meta.at("batch_size").get<int>();
  return info;
}

}  // namespace

template <typename T>
TrainState<T> load_train_state(const std::filesystem::path& path, CkptInfo* info) {
  CheckpointFile file = load_checkpoint(path);
  json meta = parse_meta(file);
  ModelConfig cfg = config_checked<T>(meta);

  TrainState<T> st;
  st.weights = init_weights<T>(cfg, 0);
  st.m = zeros_like(st.weights);
  st.v = zeros_like(st.weights);
  st.step = meta.at("step").get<std::int64_t>();
  st.seed = meta.at("seed").get<std::uint64_t>();
  if (info) *info = info_from_meta(meta);

  std::size_t idx = 0;
  auto fill = [&](const std::string& prefix, ModelWeights<T>* w) {
    w->for_each_tensor([&](const std::string& name, std::vector<T>& v, ParamRole) {
      if (idx >= file.tensors.size()) {
        throw std::runtime_error("checkpoint: missing tensor '" + prefix + name + "'");
      }
      const TensorEntry& t = file.tensors[idx++];
      if (t.name != prefix + name) {
        throw std::runtime_error("checkpoint: tensor order mismatch, found '" + t.name +
                                 "', expected '" + prefix + name + "'");
      }
      read_entry(t, &v);
    });
  };
  fill("weights.", &st.weights);
  fill("m.", &st.m);
  fill("v.", &st.v);
  if (idx != file.tensors.size()) {
    throw std::runtime_error("checkpoint: unexpected extra tensors");
  }
  return st;
}

template <typename T>
ModelWeights<T> load_weights(const std::filesystem::path& path) {
  return load_train_state<T>(path, nullptr).weights;
}

std::string checkpoint_precision(const std::filesystem::path& path) {
  CheckpointFile file = load_checkpoint(path);
  return parse_meta(file).at("dtype").get<std::string>();
}

CkptInfo checkpoint_info(const std::filesystem::path& path) {
  CheckpointFile file = load_checkpoint(path);
  return info_from_meta(parse_meta(file));
}

#define EVSSM_CHECKPOINT_INST(T)                                                          \
  template void save_train_state(const std::filesystem::path&, const TrainState<T>&,      \
                                 const CkptInfo&);                                        \
  template TrainState<T> load_train_state(const std::filesystem::path&, CkptInfo*);       \
  template ModelWeights<T> load_weights(const std::filesystem::path&);
EVSSM_CHECKPOINT_INST(float)
EVSSM_CHECKPOINT_INST(double)
#undef EVSSM_CHECKPOINT_INST

}  // namespace evssm
