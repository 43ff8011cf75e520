#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "scan2num/common.hpp"
#include "scan2num/rng.hpp"

// Dataset manifest: one CSV row per scan with its label triple and split tag.
//   path,mask,ve,fev1_fvc,fev1pct,split
// Relative paths resolve against the manifest's directory.

namespace scan2num {

struct ScanLabels {
  double ve = 0.0;
  double fev1_fvc = 0.0;
  double fev1pct = 0.0;
};

struct ManifestEntry {
  std::string volume_path;
  std::string mask_path;
  ScanLabels labels;
  std::string split;  // train | valid | test
};

inline const std::string kManifestHeader = "path,mask,ve,fev1_fvc,fev1pct,split";

inline bool valid_split_tag(const std::string& s) {
  return s == "train" || s == "valid" || s == "test";
}

inline void write_manifest(const std::filesystem::path& path,
                           const std::vector<ManifestEntry>& entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("manifest: cannot open " + path.string() + " for writing");
  os << kManifestHeader << "\n";
  for (const auto& e : entries) {
    if (!valid_split_tag(e.split)) throw DataError("manifest: bad split tag '" + e.split + "'");
    os << e.volume_path << "," << e.mask_path << "," << format_double(e.labels.ve) << ","
       << format_double(e.labels.fev1_fvc) << "," << format_double(e.labels.fev1pct) << ","
       << e.split << "\n";
  }
  os.flush();
  if (!os) throw IoError("manifest: write failed for " + path.string());
}

inline std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("manifest: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line)) throw DataError("manifest: empty file " + path.string());
  if (line == kManifestHeader + "\r") line.pop_back();
  if (line != kManifestHeader)
    throw DataError("manifest: unexpected header '" + line + "' in " + path.string());
  const auto dir = path.parent_path();
  auto resolve = [&dir](const std::string& p) {
    if (p.empty()) throw DataError("manifest: empty path field");
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp.string() : (dir / fp).string();
  };
  std::vector<ManifestEntry> entries;
  size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (fields.size() != 6)
      throw DataError("manifest: line " + std::to_string(lineno) + " has " +
                      std::to_string(fields.size()) + " fields, expected 6");
    ManifestEntry e;
    e.volume_path = resolve(fields[0]);
    e.mask_path = resolve(fields[1]);
    e.labels.ve = parse_double(fields[2], "ve");
    e.labels.fev1_fvc = parse_double(fields[3], "fev1_fvc");
    e.labels.fev1pct = parse_double(fields[4], "fev1pct");
    e.split = fields[5];
    if (!valid_split_tag(e.split))
      throw DataError("manifest: line " + std::to_string(lineno) + " has bad split tag '" +
                      e.split + "'");
    entries.push_back(std::move(e));
  }
  return entries;
}

// Assigns split tags in place. Within each stratum the cases are shuffled
// (Fisher-Yates on the rng) and apportioned by largest remainder, so overall
// fractions hold as exactly as integer counts allow per stratum; remainder
// ties go to the earlier split (train before valid before test). Entry order
// in the manifest itself is left untouched. An empty stratum only warns since
// sparse outer bins are expected.
inline void stratified_split(std::vector<ManifestEntry>& entries,
                             const std::array<double, 3>& fractions,
                             const std::function<int(const ManifestEntry&)>& stratum_of,
                             Rng& rng) {
  double total = 0.0;
  for (double f : fractions) {
    if (f < 0.0) throw DataError("stratified_split: negative fraction");
    total += f;
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError("stratified_split: fractions must sum to 1");
  std::map<int, std::vector<size_t>> strata;
  for (size_t i = 0; i < entries.size(); ++i) strata[stratum_of(entries[i])].push_back(i);
  static const char* kTags[3] = {"train", "valid", "test"};
  for (auto& [key, idx] : strata) {
    if (idx.empty()) {
      std::cerr << "stratified_split: stratum " << key << " is empty\n";
      continue;
    }
    for (size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[static_cast<size_t>(rng.below(i))]);
    const auto m = idx.size();
    std::array<size_t, 3> take{};
    std::array<double, 3> frac_part{};
    size_t assigned = 0;
    for (int s = 0; s < 3; ++s) {
      const double quota = static_cast<double>(m) * fractions[static_cast<size_t>(s)];
      take[static_cast<size_t>(s)] = static_cast<size_t>(std::floor(quota));
      frac_part[static_cast<size_t>(s)] = quota - std::floor(quota);
      assigned += take[static_cast<size_t>(s)];
    }
    for (size_t left = m - assigned; left > 0; --left) {
      int best = 0;
      for (int s = 1; s < 3; ++s)
        if (frac_part[static_cast<size_t>(s)] > frac_part[static_cast<size_t>(best)]) best = s;
      take[static_cast<size_t>(best)] += 1;
      frac_part[static_cast<size_t>(best)] = -1.0;
    }
    size_t pos = 0;
    for (int s = 0; s < 3; ++s)
      for (size_t k = 0; k < take[static_cast<size_t>(s)]; ++k)
        entries[idx[pos++]].split = kTags[s];
  }
}

inline std::vector<ManifestEntry> filter_split(const std::vector<ManifestEntry>& entries,
                                               const std::string& split) {
  std::vector<ManifestEntry> out;
  for (const auto& e : entries)
    if (e.split == split) out.push_back(e);
  return out;
}

}  // namespace scan2num
