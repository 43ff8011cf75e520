#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "scan2num/common.hpp"

// Volumes live as a JSON header next to two raw payloads: int16 little-endian
// HU voxels and a one-byte-per-voxel lung mask, both z-major (z, then y, then
// x fastest).

namespace scan2num {

struct Volume {
  std::array<int, 3> dims{0, 0, 0};  // z, y, x
  std::array<double, 3> spacing_mm{1.0, 1.0, 1.0};
  std::vector<int16_t> voxels;
  std::vector<uint8_t> mask;

  int64_t numel() const {
    return static_cast<int64_t>(dims[0]) * dims[1] * dims[2];
  }
  int64_t index(int z, int y, int x) const {
    return (static_cast<int64_t>(z) * dims[1] + y) * dims[2] + x;
  }
  int16_t& hu(int z, int y, int x) { return voxels[static_cast<size_t>(index(z, y, x))]; }
  int16_t hu(int z, int y, int x) const { return voxels[static_cast<size_t>(index(z, y, x))]; }
  uint8_t& mask_at(int z, int y, int x) { return mask[static_cast<size_t>(index(z, y, x))]; }
  uint8_t mask_at(int z, int y, int x) const { return mask[static_cast<size_t>(index(z, y, x))]; }
};

inline Volume make_volume(int z, int y, int x) {
  if (z < 1 || y < 1 || x < 1) throw DataError("volume: dims must be positive");
  Volume v;
  v.dims = {z, y, x};
  v.voxels.assign(static_cast<size_t>(v.numel()), 0);
  v.mask.assign(static_cast<size_t>(v.numel()), 0);
  return v;
}

struct Bbox {
  std::array<int, 3> lo{0, 0, 0};
  std::array<int, 3> hi{0, 0, 0};  // exclusive
  int extent(int axis) const { return hi[static_cast<size_t>(axis)] - lo[static_cast<size_t>(axis)]; }
};

inline Bbox mask_bbox(const Volume& v) {
  Bbox b;
  b.lo = {v.dims[0], v.dims[1], v.dims[2]};
  b.hi = {0, 0, 0};
  bool any = false;
  for (int z = 0; z < v.dims[0]; ++z)
    for (int y = 0; y < v.dims[1]; ++y)
      for (int x = 0; x < v.dims[2]; ++x)
        if (v.mask_at(z, y, x)) {
          any = true;
          b.lo[0] = std::min(b.lo[0], z);
          b.lo[1] = std::min(b.lo[1], y);
          b.lo[2] = std::min(b.lo[2], x);
          b.hi[0] = std::max(b.hi[0], z + 1);
          b.hi[1] = std::max(b.hi[1], y + 1);
          b.hi[2] = std::max(b.hi[2], x + 1);
        }
  if (!any) throw DataError("volume: mask has no foreground voxels");
  return b;
}

// Tight crop to the mask's bounding box; voxels and mask are cut together.
inline Volume crop_to_mask_bbox(const Volume& v, Bbox* bbox_out = nullptr) {
  const Bbox b = mask_bbox(v);
  if (bbox_out) *bbox_out = b;
  Volume out = make_volume(b.extent(0), b.extent(1), b.extent(2));
  out.spacing_mm = v.spacing_mm;
  for (int z = 0; z < out.dims[0]; ++z)
    for (int y = 0; y < out.dims[1]; ++y) {
      const int64_t src = v.index(b.lo[0] + z, b.lo[1] + y, b.lo[2]);
      const int64_t dst = out.index(z, y, 0);
      std::copy_n(v.voxels.begin() + src, out.dims[2], out.voxels.begin() + dst);
      std::copy_n(v.mask.begin() + src, out.dims[2], out.mask.begin() + dst);
    }
  return out;
}

// HU window [-1100, 300] mapped affinely onto [-1, 1].
inline float normalize_hu(float hu) {
  const float clamped = std::min(300.0f, std::max(-1100.0f, hu));
  return (clamped + 1100.0f) / 700.0f - 1.0f;
}

namespace detail {

inline void write_raw(const std::filesystem::path& path, const void* data, size_t bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("volume: cannot open " + path.string() + " for writing");
  os.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
  os.flush();
  if (!os) throw IoError("volume: write failed for " + path.string());
}

inline void read_raw(const std::filesystem::path& path, void* data, size_t bytes) {
  std::error_code ec;
  const auto size = std::filesystem::file_size(path, ec);
  if (ec) throw IoError("volume: cannot stat " + path.string());
  if (size != bytes)
    throw IoError("volume: payload " + path.string() + " holds " + std::to_string(size) +
                  " bytes, header implies " + std::to_string(bytes));
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("volume: cannot open " + path.string());
  is.read(static_cast<char*>(data), static_cast<std::streamsize>(bytes));
  if (is.gcount() != static_cast<std::streamsize>(bytes))
    throw IoError("volume: short read from " + path.string());
}

}  // namespace detail

// Writes <stem>.json, <stem>.raw, <stem>.mask into dir; returns the header path.
inline std::filesystem::path save_volume(const Volume& v, const std::filesystem::path& dir,
                                         const std::string& stem) {
  if (v.voxels.size() != static_cast<size_t>(v.numel()) ||
      v.mask.size() != static_cast<size_t>(v.numel()))
    throw DataError("volume: payload sizes do not match dims");
  std::filesystem::create_directories(dir);
  detail::write_raw(dir / (stem + ".raw"), v.voxels.data(), v.voxels.size() * sizeof(int16_t));
  detail::write_raw(dir / (stem + ".mask"), v.mask.data(), v.mask.size());
  nlohmann::ordered_json j;
  j["dims"] = v.dims;
  j["spacing_mm"] = v.spacing_mm;
  j["dtype"] = "int16le";
  j["voxels"] = stem + ".raw";
  j["mask"] = stem + ".mask";
  const auto header = dir / (stem + ".json");
  std::ofstream os(header, std::ios::trunc);
  if (!os) throw IoError("volume: cannot open " + header.string() + " for writing");
  os << j.dump(2) << "\n";
  os.flush();
  if (!os) throw IoError("volume: write failed for " + header.string());
  return header;
}

inline Volume load_volume(const std::filesystem::path& header) {
  std::ifstream is(header);
  if (!is) throw IoError("volume: cannot open header " + header.string());
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("volume: malformed header " + header.string() + ": " + e.what());
  }
  Volume v;
  try {
    auto dims = j.at("dims").get<std::array<int, 3>>();
    v = make_volume(dims[0], dims[1], dims[2]);
    v.spacing_mm = j.at("spacing_mm").get<std::array<double, 3>>();
    if (j.at("dtype").get<std::string>() != "int16le")
      throw IoError("volume: unsupported dtype in " + header.string());
    const auto dir = header.parent_path();
    detail::read_raw(dir / j.at("voxels").get<std::string>(), v.voxels.data(),
                     v.voxels.size() * sizeof(int16_t));
    detail::read_raw(dir / j.at("mask").get<std::string>(), v.mask.data(), v.mask.size());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("volume: bad header field in " + header.string() + ": " + e.what());
  }
  for (uint8_t m : v.mask)
    if (m > 1) throw DataError("volume: mask byte outside {0,1} in " + header.string());
  return v;
}

}  // namespace scan2num
