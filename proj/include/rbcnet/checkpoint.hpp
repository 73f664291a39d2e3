#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rbcnet/errors.hpp"
#include "rbcnet/model.hpp"
#include "rbcnet/optim.hpp"
#include "rbcnet/tensor.hpp"

namespace rbcnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint payloads are written as native little-endian");

// Checkpoint layout, all integers little-endian, no padding:
//   "PSGT" | u32 version | u8 kind | str topology | u32 nparams |
//   nparams x record | u8 has_opt [| u32 nstate | nstate x record] |
//   i32 epoch | f64 val_acc
// record = str name | u8 dtype(0=f32) | u8 rank | u32 dims[rank] | f32 data[]
// str    = u32 length | bytes
inline constexpr char kCheckpointMagic[4] = {'P', 'S', 'G', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;
inline constexpr uint8_t kKindModel = 0;
inline constexpr uint8_t kKindSvm = 1;

struct CheckpointMeta {
  int epoch = 0;
  double val_acc = 0.0;
};

namespace ckpt {

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw FormatError("truncated checkpoint");
}

template <typename V>
void write_pod(std::ostream& os, V v) {
  write_bytes(os, &v, sizeof(V));
}

template <typename V>
V read_pod(std::istream& is) {
  V v;
  read_bytes(is, &v, sizeof(V));
  return v;
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
  write_bytes(os, s.data(), s.size());
}

inline std::string read_str(std::istream& is) {
  const uint32_t n = read_pod<uint32_t>(is);
  if (n > (1u << 20)) throw FormatError("implausible string length");
  std::string s(n, '\0');
  read_bytes(is, s.data(), n);
  return s;
}

struct Record {
  std::string name;
  std::vector<int> shape;
  std::vector<float> data;
};

template <typename T>
void write_record(std::ostream& os, const std::string& name,
                  const Tensor<T>& t) {
  write_str(os, name);
  write_pod<uint8_t>(os, 0);  // f32
  write_pod<uint8_t>(os, static_cast<uint8_t>(t.rank()));
  for (int d = 0; d < t.rank(); ++d)
    write_pod<uint32_t>(os, static_cast<uint32_t>(t.dim(d)));
  if constexpr (std::is_same_v<T, float>) {
    write_bytes(os, t.data(), t.size() * sizeof(float));
  } else {
    std::vector<float> buf(t.size());
    for (size_t i = 0; i < t.size(); ++i)
      buf[i] = static_cast<float>(t.data()[i]);
    write_bytes(os, buf.data(), buf.size() * sizeof(float));
  }
}

inline Record read_record(std::istream& is) {
  Record rec;
  rec.name = read_str(is);
  if (read_pod<uint8_t>(is) != 0)
    throw FormatError("unknown dtype tag in checkpoint");
  const uint8_t rank = read_pod<uint8_t>(is);
  size_t count = 1;
  for (uint8_t d = 0; d < rank; ++d) {
    const uint32_t dim = read_pod<uint32_t>(is);
    if (dim == 0 || dim > (1u << 28)) throw FormatError("bad dimension");
    rec.shape.push_back(static_cast<int>(dim));
    count *= dim;
  }
  rec.data.resize(count);
  read_bytes(is, rec.data.data(), count * sizeof(float));
  return rec;
}

inline void check_header(std::istream& is, uint8_t expect_kind) {
  char magic[4];
  read_bytes(is, magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
    throw FormatError("bad checkpoint magic");
  const uint32_t version = read_pod<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  const uint8_t kind = read_pod<uint8_t>(is);
  if (kind != expect_kind)
    throw LoadError("checkpoint holds a different artifact kind");
}

inline void write_header(std::ostream& os, uint8_t kind) {
  write_bytes(os, kCheckpointMagic, 4);
  write_pod<uint32_t>(os, kCheckpointVersion);
  write_pod<uint8_t>(os, kind);
}

}  // namespace ckpt

template <typename T>
void save_checkpoint(const std::string& path, const ModelGraph<T>& model,
                     const CheckpointMeta& meta,
                     const AdadeltaOptimizer<T>* opt = nullptr) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw LoadError("cannot write checkpoint: " + path);
  ckpt::write_header(os, kKindModel);
  ckpt::write_str(os, model.topology());
  std::vector<std::pair<std::string, const Tensor<T>*>> params;
  for (int i = 0; i < model.layer_count(); ++i) {
    const auto& l = model.layer(i);
    if (!l.has_params()) continue;
    params.emplace_back(l.name + ".weight", &l.w);
    params.emplace_back(l.name + ".bias", &l.b);
  }
  ckpt::write_pod<uint32_t>(os, static_cast<uint32_t>(params.size()));
  for (const auto& [name, tensor] : params)
    ckpt::write_record(os, name, *tensor);
  const auto state = opt ? opt->state_tensors(model)
                         : std::vector<std::pair<std::string, const Tensor<T>*>>{};
  ckpt::write_pod<uint8_t>(os, state.empty() ? 0 : 1);
  if (!state.empty()) {
    ckpt::write_pod<uint32_t>(os, static_cast<uint32_t>(state.size()));
    for (const auto& [name, tensor] : state)
      ckpt::write_record(os, name, *tensor);
  }
  ckpt::write_pod<int32_t>(os, meta.epoch);
  ckpt::write_pod<double>(os, meta.val_acc);
  if (!os) throw LoadError("write failure: " + path);
}

// Loads parameters into `model`, which must already have the file's
// topology. Restores optimizer accumulators when both the file and the
// caller provide them.
template <typename T>
CheckpointMeta load_checkpoint(const std::string& path, ModelGraph<T>& model,
                               AdadeltaOptimizer<T>* opt = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw LoadError("cannot read checkpoint: " + path);
  ckpt::check_header(is, kKindModel);
  const std::string topo = ckpt::read_str(is);
  if (topo != model.topology()) {
    // Name the first differing entry so the caller sees which layer is off.
    auto split = [](const std::string& s) {
      std::vector<std::string> parts;
      std::istringstream ss(s);
      for (std::string tok; std::getline(ss, tok, ';');) parts.push_back(tok);
      return parts;
    };
    const auto a = split(topo), b = split(model.topology());
    std::string where = "layer count";
    for (size_t i = 0; i < std::min(a.size(), b.size()); ++i)
      if (a[i] != b[i]) {
        where = "'" + a[i] + "' vs model '" + b[i] + "'";
        break;
      }
    throw LoadError("topology mismatch at " + where);
  }
  const uint32_t nparams = ckpt::read_pod<uint32_t>(is);
  std::map<std::string, ckpt::Record> recs;
  for (uint32_t i = 0; i < nparams; ++i) {
    ckpt::Record rec = ckpt::read_record(is);
    recs[rec.name] = std::move(rec);
  }
  for (int i = 0; i < model.layer_count(); ++i) {
    auto& l = model.layer(i);
    if (!l.has_params()) continue;
    for (auto [suffix, tensor] :
         {std::pair<const char*, Tensor<T>*>{".weight", &l.w},
          std::pair<const char*, Tensor<T>*>{".bias", &l.b}}) {
      const std::string name = l.name + suffix;
      auto it = recs.find(name);
      if (it == recs.end()) throw LoadError("missing parameter " + name);
      if (it->second.shape != tensor->shape())
        throw LoadError("shape mismatch for parameter " + name);
      for (size_t j = 0; j < tensor->size(); ++j)
        tensor->data()[j] = static_cast<T>(it->second.data[j]);
      recs.erase(it);
    }
  }
  if (!recs.empty())
    throw LoadError("unexpected parameter " + recs.begin()->first);
  const uint8_t has_opt = ckpt::read_pod<uint8_t>(is);
  if (has_opt) {
    const uint32_t nstate = ckpt::read_pod<uint32_t>(is);
    std::map<std::string, ckpt::Record> state;
    for (uint32_t i = 0; i < nstate; ++i) {
      ckpt::Record rec = ckpt::read_record(is);
      state[rec.name] = std::move(rec);
    }
    if (opt) {
      opt->slots().assign(static_cast<size_t>(2 * model.layer_count()), {});
      for (int i = 0; i < model.layer_count(); ++i) {
        const auto& l = model.layer(i);
        if (!l.has_params()) continue;
        auto restore = [&](const std::string& name, Tensor<T>& dst,
                           const Tensor<T>& like) {
          auto it = state.find(name);
          if (it == state.end())
            throw LoadError("missing optimizer state " + name);
          if (it->second.shape != like.shape())
            throw LoadError("shape mismatch for optimizer state " + name);
          dst = Tensor<T>(like.shape());
          for (size_t j = 0; j < dst.size(); ++j)
            dst.data()[j] = static_cast<T>(it->second.data[j]);
        };
        auto& ws = opt->slots()[static_cast<size_t>(2 * i)];
        auto& bs = opt->slots()[static_cast<size_t>(2 * i + 1)];
        restore(l.name + ".weight.eg2", ws.eg2, l.w);
        restore(l.name + ".weight.edx2", ws.edx2, l.w);
        restore(l.name + ".bias.eg2", bs.eg2, l.b);
        restore(l.name + ".bias.edx2", bs.edx2, l.b);
      }
    }
  }
  CheckpointMeta meta;
  meta.epoch = ckpt::read_pod<int32_t>(is);
  meta.val_acc = ckpt::read_pod<double>(is);
  return meta;
}

}  // namespace rbcnet
