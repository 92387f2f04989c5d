#include "olab/checkpoint.hpp"

#include <cstdio>
#include <cstring>

#include "olab/errors.hpp"

namespace olab::models {

namespace {

constexpr char kMagic[8] = {'O', 'L', 'A', 'B', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

struct Writer {
  std::FILE* f;
  void bytes(const void* p, size_t n) {
    if (std::fwrite(p, 1, n, f) != n) throw DataError("checkpoint write failed");
  }
  void u32(uint32_t v) { bytes(&v, 4); }
  void u64(uint64_t v) { bytes(&v, 8); }
  void i32(int32_t v) { bytes(&v, 4); }
  void f64(double v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u32(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
};

struct Reader {
  std::FILE* f;
  void bytes(void* p, size_t n) {
    if (std::fread(p, 1, n, f) != n) throw CorruptCheckpointError("checkpoint truncated");
  }
  uint32_t u32() {
    uint32_t v;
    bytes(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    bytes(&v, 8);
    return v;
  }
  int32_t i32() {
    int32_t v;
    bytes(&v, 4);
    return v;
  }
  double f64() {
    double v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    uint32_t n = u32();
    if (n > (1u << 20)) throw CorruptCheckpointError("unreasonable string length in checkpoint");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
};

}  // namespace

void save_checkpoint(const std::string& path, const std::string& kind, const ModelConfig& config,
                     const TrainMeta& meta, const ParamMap& params) {
  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw DataError("cannot open " + path + " for writing");
  Writer w{f};
  w.bytes(kMagic, 8);
  w.u32(kVersion);
  w.str(kind);
  w.str(config.canonical_text());
  w.i32(meta.epoch);
  w.f64(meta.best_metric);
  w.u64(meta.seed);
  w.u32(static_cast<uint32_t>(params.size()));
  for (const auto& [name, t] : params) {
    w.str(name);
    w.u32(1);  // dtype: f64 little-endian
    w.u32(static_cast<uint32_t>(t.ndim()));
    for (int d = 0; d < t.ndim(); ++d) w.u32(static_cast<uint32_t>(t.dim(d)));
    w.bytes(t.values().data(), t.size() * sizeof(double));
  }
  std::fclose(f);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::FILE* f = std::fopen(path.c_str(), "rb");
  if (!f) throw DataError("cannot open " + path);
  Reader r{f};
  CheckpointData data;
  try {
    char magic[8];
    r.bytes(magic, 8);
    if (std::memcmp(magic, kMagic, 8) != 0) {
      throw CorruptCheckpointError(path + ": not a checkpoint file");
    }
    const uint32_t version = r.u32();
    if (version != kVersion) {
      throw VersionMismatchError(path + ": checkpoint version " + std::to_string(version) +
                                 ", expected " + std::to_string(kVersion));
    }
    data.kind = r.str();
    data.config = ModelConfig::from_canonical_text(r.str());
    data.meta.epoch = r.i32();
    data.meta.best_metric = r.f64();
    data.meta.seed = r.u64();
    const uint32_t count = r.u32();
    for (uint32_t i = 0; i < count; ++i) {
      std::string name = r.str();
      const uint32_t dtype = r.u32();
      if (dtype != 1) throw CorruptCheckpointError(path + ": unknown dtype");
      const uint32_t ndim = r.u32();
      if (ndim > 8) throw CorruptCheckpointError(path + ": unreasonable tensor rank");
      nn::Shape shape(ndim);
      size_t n = 1;
      for (uint32_t d = 0; d < ndim; ++d) {
        shape[d] = static_cast<int>(r.u32());
        n *= static_cast<size_t>(shape[d]);
      }
      std::vector<double> values(n);
      r.bytes(values.data(), n * sizeof(double));
      data.tensors.emplace_back(std::move(name), nn::Tensor(std::move(shape), std::move(values)));
    }
  } catch (...) {
    std::fclose(f);
    throw;
  }
  std::fclose(f);
  return data;
}

void ensure_matches(const CheckpointData& data, const std::string& kind,
                    const ModelConfig& config) {
  if (data.kind != kind) {
    throw ConfigMismatchError("checkpoint holds a '" + data.kind + "' model, expected '" + kind +
                              "'");
  }
  if (!(data.config == config)) {
    throw ConfigMismatchError("checkpoint config does not match the requested model config");
  }
}

void load_state(const ParamMap& model_params, const CheckpointData& data) {
  if (model_params.size() != data.tensors.size()) {
    throw ConfigMismatchError("checkpoint tensor count mismatch");
  }
  for (size_t i = 0; i < model_params.size(); ++i) {
    const auto& [name, dst] = model_params[i];
    const auto& [sname, src] = data.tensors[i];
    if (name != sname || dst.shape() != src.shape()) {
      throw ConfigMismatchError("checkpoint tensor '" + sname + "' does not match model tensor '" +
                                name + "'");
    }
    const_cast<nn::Tensor&>(dst).mutable_values() = src.values();
  }
}

}  // namespace olab::models
