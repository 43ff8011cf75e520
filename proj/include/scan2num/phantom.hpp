#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "scan2num/manifest.hpp"
#include "scan2num/rng.hpp"
#include "scan2num/volume.hpp"

// Synthetic lung phantoms: an ellipsoidal "lung" of noisy parenchyma into
// which constant low-attenuation spherical lesions are stamped until a target
// share of mask voxels is destroyed. The planted fraction drives all three
// labels, so phantom datasets have a known, recoverable structure-to-label
// relationship at any scale.

namespace scan2num {

struct PhantomSpec {
  std::array<int, 3> dims{64, 64, 64};          // z, y, x
  std::array<double, 3> semi_axes{24.0, 26.0, 28.0};
  std::array<double, 3> spacing_mm{0.7, 0.7, 0.7};
  double parenchyma_hu = -850.0;
  double parenchyma_noise_sd = 40.0;
  double lesion_hu = -980.0;
  std::array<double, 2> lesion_radius{2.0, 6.0};
  double severity = 0.0;  // lesion share target = severity * 0.5
  uint64_t seed = 0;

  void validate() const {
    for (int i = 0; i < 3; ++i) {
      if (dims[static_cast<size_t>(i)] < 3) throw DataError("phantom: dims too small");
      const double center = (dims[static_cast<size_t>(i)] - 1) / 2.0;
      if (semi_axes[static_cast<size_t>(i)] <= 0.0 ||
          semi_axes[static_cast<size_t>(i)] > center + 0.5)
        throw DataError("phantom: ellipsoid does not fit inside dims");
    }
    if (!(severity >= 0.0 && severity <= 1.0))
      throw DataError("phantom: severity must be in [0,1]");
    if (lesion_radius[0] <= 0.0 || lesion_radius[1] < lesion_radius[0])
      throw DataError("phantom: bad lesion radius range");
    if (!(lesion_hu < parenchyma_hu))
      throw DataError("phantom: lesion must attenuate less than parenchyma");
  }
};

struct PhantomCase {
  Volume volume;
  ScanLabels labels;
  double planted_fraction = 0.0;
};

namespace detail {

inline void fill_parenchyma(Volume& v, const PhantomSpec& spec, Rng& rng,
                            std::vector<int64_t>& mask_indices) {
  const std::array<double, 3> center{(spec.dims[0] - 1) / 2.0, (spec.dims[1] - 1) / 2.0,
                                     (spec.dims[2] - 1) / 2.0};
  mask_indices.clear();
  for (int z = 0; z < v.dims[0]; ++z)
    for (int y = 0; y < v.dims[1]; ++y)
      for (int x = 0; x < v.dims[2]; ++x) {
        const double dz = (z - center[0]) / spec.semi_axes[0];
        const double dy = (y - center[1]) / spec.semi_axes[1];
        const double dx = (x - center[2]) / spec.semi_axes[2];
        if (dz * dz + dy * dy + dx * dx <= 1.0) {
          const int64_t idx = v.index(z, y, x);
          v.mask[static_cast<size_t>(idx)] = 1;
          const double hu = spec.parenchyma_hu + spec.parenchyma_noise_sd * rng.normal();
          v.voxels[static_cast<size_t>(idx)] =
              static_cast<int16_t>(std::llround(std::min(300.0, std::max(-1100.0, hu))));
          mask_indices.push_back(idx);
        }
      }
}

// Stamps one sphere; returns how many previously healthy mask voxels it took.
inline int64_t stamp_lesion(Volume& v, std::vector<uint8_t>& lesioned,
                            const std::array<int, 3>& c, double radius, double lesion_hu) {
  const int r = static_cast<int>(std::ceil(radius));
  const double r2 = radius * radius;
  int64_t converted = 0;
  for (int z = std::max(0, c[0] - r); z <= std::min(v.dims[0] - 1, c[0] + r); ++z)
    for (int y = std::max(0, c[1] - r); y <= std::min(v.dims[1] - 1, c[1] + r); ++y)
      for (int x = std::max(0, c[2] - r); x <= std::min(v.dims[2] - 1, c[2] + r); ++x) {
        const double dz = z - c[0], dy = y - c[1], dx = x - c[2];
        if (dz * dz + dy * dy + dx * dx > r2) continue;
        const int64_t idx = v.index(z, y, x);
        if (!v.mask[static_cast<size_t>(idx)]) continue;
        v.voxels[static_cast<size_t>(idx)] = static_cast<int16_t>(std::llround(lesion_hu));
        if (!lesioned[static_cast<size_t>(idx)]) {
          lesioned[static_cast<size_t>(idx)] = 1;
          ++converted;
        }
      }
  return converted;
}

inline ScanLabels labels_from_fraction(double pf, Rng& rng) {
  ScanLabels l;
  l.ve = 5.0 * std::min(1.0, pf / 0.4);
  const double eps1 = rng.normal(0.0, 0.02);
  const double eps2 = rng.normal(0.0, 4.0);
  l.fev1_fvc = std::min(0.95, std::max(0.2, 0.85 - 0.55 * pf / 0.5 + eps1));
  l.fev1pct = std::min(130.0, std::max(15.0, 105.0 - 140.0 * pf / 0.5 + eps2));
  return l;
}

}  // namespace detail

// Draw order (fixed): per-mask-voxel noise in z-major order, then lesion
// (center, radius) pairs until the share is reached, then the two label
// noise terms.
inline PhantomCase generate_phantom(const PhantomSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  PhantomCase pc;
  pc.volume = make_volume(spec.dims[0], spec.dims[1], spec.dims[2]);
  pc.volume.spacing_mm = spec.spacing_mm;
  std::vector<int64_t> mask_indices;
  detail::fill_parenchyma(pc.volume, spec, rng, mask_indices);
  const auto mask_count = static_cast<int64_t>(mask_indices.size());
  if (mask_count == 0) throw DataError("phantom: ellipsoid produced an empty mask");
  const double target_share = spec.severity * 0.5;
  const auto target_voxels = static_cast<int64_t>(std::floor(target_share * static_cast<double>(mask_count)));
  std::vector<uint8_t> lesioned(pc.volume.voxels.size(), 0);
  int64_t converted = 0;
  int64_t stalled = 0;
  while (converted < target_voxels) {
    const auto pick = mask_indices[static_cast<size_t>(rng.below(static_cast<uint64_t>(mask_count)))];
    const int z = static_cast<int>(pick / (spec.dims[1] * spec.dims[2]));
    const int y = static_cast<int>(pick / spec.dims[2] % spec.dims[1]);
    const int x = static_cast<int>(pick % spec.dims[2]);
    const double radius = rng.uniform(spec.lesion_radius[0], spec.lesion_radius[1]);
    const int64_t got =
        detail::stamp_lesion(pc.volume, lesioned, {z, y, x}, radius, spec.lesion_hu);
    converted += got;
    stalled = got == 0 ? stalled + 1 : 0;
    if (stalled > 10000)
      throw DataError("phantom: lesion share " + format_double(target_share) +
                      " unreachable, no progress after 10000 placements");
  }
  pc.planted_fraction = static_cast<double>(converted) / static_cast<double>(mask_count);
  pc.labels = detail::labels_from_fraction(pc.planted_fraction, rng);
  return pc;
}

// One sphere of the given radius at a uniformly drawn mask voxel. Used by the
// attribution study, where the lesion's z extent must be known exactly.
struct SingleLesionCase {
  PhantomCase phantom;
  std::array<int, 3> center{0, 0, 0};
  double radius = 0.0;
};

inline SingleLesionCase single_lesion_phantom(const PhantomSpec& spec, double radius) {
  spec.validate();
  if (radius <= 0.0) throw DataError("phantom: lesion radius must be positive");
  Rng rng(spec.seed);
  SingleLesionCase sc;
  sc.radius = radius;
  sc.phantom.volume = make_volume(spec.dims[0], spec.dims[1], spec.dims[2]);
  sc.phantom.volume.spacing_mm = spec.spacing_mm;
  std::vector<int64_t> mask_indices;
  detail::fill_parenchyma(sc.phantom.volume, spec, rng, mask_indices);
  if (mask_indices.empty()) throw DataError("phantom: ellipsoid produced an empty mask");
  const auto pick =
      mask_indices[static_cast<size_t>(rng.below(static_cast<uint64_t>(mask_indices.size())))];
  sc.center = {static_cast<int>(pick / (spec.dims[1] * spec.dims[2])),
               static_cast<int>(pick / spec.dims[2] % spec.dims[1]),
               static_cast<int>(pick % spec.dims[2])};
  std::vector<uint8_t> lesioned(sc.phantom.volume.voxels.size(), 0);
  const int64_t converted =
      detail::stamp_lesion(sc.phantom.volume, lesioned, sc.center, radius, spec.lesion_hu);
  sc.phantom.planted_fraction =
      static_cast<double>(converted) / static_cast<double>(mask_indices.size());
  sc.phantom.labels = detail::labels_from_fraction(sc.phantom.planted_fraction, rng);
  return sc;
}

// Writes count cases plus manifest.csv into out_dir. Severities are uniform
// in [0,1]; each case generates from its own derived seed, so any subset of
// cases reproduces independently of generation order. Splits are stratified
// over rounded ve bins.
inline std::vector<ManifestEntry> generate_dataset(const std::filesystem::path& out_dir, int count,
                                                   uint64_t seed, const PhantomSpec& base,
                                                   const std::array<double, 3>& fractions = {
                                                       0.75, 0.10, 0.15}) {
  if (count < 1) throw DataError("phantom: dataset needs at least one case");
  std::filesystem::create_directories(out_dir);
  Rng severity_rng(derive_seed(seed, "severities"));
  std::vector<double> severities(static_cast<size_t>(count));
  for (auto& s : severities) s = severity_rng.uniform();
  std::vector<ManifestEntry> entries;
  entries.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    PhantomSpec spec = base;
    spec.severity = severities[static_cast<size_t>(i)];
    spec.seed = derive_seed(seed, "phantom", static_cast<uint64_t>(i));
    PhantomCase pc = generate_phantom(spec);
    char stem[32];
    std::snprintf(stem, sizeof(stem), "case_%04d", i);
    save_volume(pc.volume, out_dir, stem);
    ManifestEntry e;
    e.volume_path = std::string(stem) + ".json";
    e.mask_path = std::string(stem) + ".mask";
    e.labels = pc.labels;
    e.split = "train";
    entries.push_back(std::move(e));
  }
  Rng split_rng(derive_seed(seed, "split"));
  stratified_split(
      entries, fractions,
      [](const ManifestEntry& e) {
        return std::min(5, std::max(0, static_cast<int>(std::llround(e.labels.ve))));
      },
      split_rng);
  write_manifest(out_dir / "manifest.csv", entries);
  // hand back the resolved view, exactly as a consumer of the CSV sees it
  return read_manifest(out_dir / "manifest.csv");
}

}  // namespace scan2num
