#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "scan2num/network.hpp"
#include "scan2num/tensor.hpp"

// Checkpoint container, little-endian throughout:
//   magic "S2N1" | u32 version | u32 tensor count
//   per tensor: u16 name length, name bytes (UTF-8), u8 rank, u32 dims, f32 data
// Momentum buffers ride along under "<param>.momentum" so optimizer state
// survives a save/load round trip bit-for-bit. A sidecar text file
// "<checkpoint>.cfg" holds the network layout and run bookkeeping as sorted
// key=value lines.

namespace scan2num {

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

namespace detail {

inline void write_bytes(std::ofstream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  if (!os) throw IoError("checkpoint: write failed");
}

inline void read_bytes(std::ifstream& is, void* p, size_t n) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (is.gcount() != static_cast<std::streamsize>(n))
    throw IoError("checkpoint: unexpected end of file");
}

template <typename U>
void write_scalar(std::ofstream& os, U v) {
  write_bytes(os, &v, sizeof(v));
}

template <typename U>
U read_scalar(std::ifstream& is) {
  U v;
  read_bytes(is, &v, sizeof(v));
  return v;
}

}  // namespace detail

constexpr uint32_t kCheckpointVersion = 1;

inline void save_tensors(const std::filesystem::path& path,
                         const std::vector<std::pair<std::string, const Tensor<float>*>>& tensors) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open " + path.string() + " for writing");
  detail::write_bytes(os, "S2N1", 4);
  detail::write_scalar<uint32_t>(os, kCheckpointVersion);
  detail::write_scalar<uint32_t>(os, static_cast<uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    if (name.size() > UINT16_MAX) throw DataError("checkpoint: tensor name too long");
    detail::write_scalar<uint16_t>(os, static_cast<uint16_t>(name.size()));
    detail::write_bytes(os, name.data(), name.size());
    detail::write_scalar<uint8_t>(os, static_cast<uint8_t>(t->rank()));
    for (int d : t->shape) detail::write_scalar<uint32_t>(os, static_cast<uint32_t>(d));
    detail::write_bytes(os, t->ptr(), sizeof(float) * static_cast<size_t>(t->numel()));
  }
  os.flush();
  if (!os) throw IoError("checkpoint: flush failed for " + path.string());
}

inline std::vector<std::pair<std::string, Tensor<float>>> load_tensors(
    const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("checkpoint: cannot open " + path.string());
  char magic[4];
  detail::read_bytes(is, magic, 4);
  if (std::memcmp(magic, "S2N1", 4) != 0)
    throw IoError("checkpoint: bad magic in " + path.string());
  const auto version = detail::read_scalar<uint32_t>(is);
  if (version != kCheckpointVersion)
    throw IoError("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::read_scalar<uint32_t>(is);
  std::vector<std::pair<std::string, Tensor<float>>> out;
  out.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    const auto name_len = detail::read_scalar<uint16_t>(is);
    std::string name(name_len, '\0');
    detail::read_bytes(is, name.data(), name_len);
    const auto rank = detail::read_scalar<uint8_t>(is);
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(detail::read_scalar<uint32_t>(is));
    Tensor<float> t(shape);
    detail::read_bytes(is, t.ptr(), sizeof(float) * static_cast<size_t>(t.numel()));
    out.emplace_back(std::move(name), std::move(t));
  }
  return out;
}

inline void write_sidecar(const std::filesystem::path& ckpt_path,
                          const std::map<std::string, std::string>& kv) {
  const auto path = ckpt_path.string() + ".cfg";
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("checkpoint: cannot open " + path + " for writing");
  for (const auto& [k, v] : kv) os << k << "=" << v << "\n";
  os.flush();
  if (!os) throw IoError("checkpoint: flush failed for " + path);
}

inline std::map<std::string, std::string> read_sidecar(const std::filesystem::path& ckpt_path) {
  const auto path = ckpt_path.string() + ".cfg";
  std::ifstream is(path);
  if (!is) throw IoError("checkpoint: missing sidecar " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint sidecar: malformed line '" + line + "'");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

struct ModelCheckpoint {
  NetworkConfig config;
  NetworkParams<float> params;
  std::map<std::string, std::string> extra;  // target, iter, seed, best_* ...
};

inline void save_model_checkpoint(const std::filesystem::path& path, const NetworkConfig& cfg,
                                  NetworkParams<float>& params,
                                  const std::map<std::string, std::string>& extra) {
  std::vector<std::pair<std::string, const Tensor<float>*>> tensors;
  for (const auto& np : params.named()) {
    tensors.emplace_back(np.name, &np.param->value);
    tensors.emplace_back(np.name + ".momentum", &np.param->momentum);
  }
  save_tensors(path, tensors);
  auto kv = cfg.to_kv();
  for (const auto& [k, v] : extra) kv[k] = v;
  write_sidecar(path, kv);
}

inline ModelCheckpoint load_model_checkpoint(const std::filesystem::path& path) {
  ModelCheckpoint mc;
  auto kv = read_sidecar(path);
  mc.config = NetworkConfig::from_kv(kv);
  for (auto& [k, v] : kv)
    if (k.rfind("network.", 0) != 0) mc.extra[k] = v;
  mc.params = NetworkParams<float>::allocate(mc.config);
  std::map<std::string, Tensor<float>*> by_name;
  for (auto& np : mc.params.named()) {
    by_name[np.name] = &np.param->value;
    by_name[np.name + ".momentum"] = &np.param->momentum;
  }
  std::map<std::string, bool> seen;
  for (auto& [name, tensor] : load_tensors(path)) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw DataError("checkpoint: unexpected tensor '" + name + "' in " + path.string());
    if (it->second->shape != tensor.shape)
      throw DataError("checkpoint: shape mismatch for tensor '" + name + "'");
    *it->second = std::move(tensor);
    seen[name] = true;
  }
  for (auto& np : mc.params.named())
    if (!seen.count(np.name))
      throw DataError("checkpoint: missing tensor '" + np.name + "' in " + path.string());
  return mc;
}

}  // namespace scan2num
