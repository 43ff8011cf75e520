#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "scan2num/common.hpp"
#include "scan2num/eval.hpp"
#include "scan2num/network.hpp"
#include "scan2num/phantom.hpp"
#include "scan2num/train.hpp"

// Run configuration files: ini-style [section] headers with key=value lines,
// '#' comments. The schema is closed; an unknown section or key is a usage
// error rather than a silent ignore.

namespace scan2num {

using ConfigSections = std::map<std::string, std::map<std::string, std::string>>;

inline ConfigSections parse_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("config: cannot open " + path.string());
  ConfigSections sections;
  std::string line, section;
  size_t lineno = 0;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw UsageError("config: malformed section header at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty())
        throw UsageError("config: empty section name at line " + std::to_string(lineno));
      sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw UsageError("config: expected key=value at line " + std::to_string(lineno));
    if (section.empty())
      throw UsageError("config: key outside any section at line " + std::to_string(lineno));
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty())
      throw UsageError("config: empty key at line " + std::to_string(lineno));
    sections[section][key] = value;
  }
  return sections;
}

struct RunConfig {
  PhantomSpec phantom;
  int phantom_count = 100;
  std::array<double, 3> split_fractions{0.75, 0.10, 0.15};
  double width_factor = 1.0;
  TrainConfig train;
  int eval_resamples = 10000;
  std::string eval_split = "test";
};

inline RunConfig default_run_config() {
  RunConfig rc;
  rc.train.network = scaled_config(rc.train.network.input_size, rc.train.network.num_slices, 1.0);
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  const ConfigSections sections = parse_config_file(path);
  RunConfig rc;
  int input_size = rc.train.network.input_size;
  int num_slices = rc.train.network.num_slices;
  double width_factor = 1.0;

  static const std::map<std::string, std::set<std::string>> kSchema = {
      {"phantom",
       {"count", "dim", "semi_axis_z", "semi_axis_y", "semi_axis_x", "parenchyma_hu",
        "parenchyma_noise_sd", "lesion_hu", "lesion_radius_min", "lesion_radius_max",
        "spacing_mm"}},
      {"data", {"train_frac", "valid_frac", "test_frac"}},
      {"network", {"input_size", "num_slices", "width_factor"}},
      {"train",
       {"target", "batch_size", "base_lr", "max_iter", "momentum", "weight_decay", "dropout",
        "val_every", "seed"}},
      {"eval", {"resamples", "split"}},
  };
  for (const auto& [section, kv] : sections) {
    const auto schema_it = kSchema.find(section);
    if (schema_it == kSchema.end()) throw UsageError("config: unknown section [" + section + "]");
    for (const auto& [key, value] : kv) {
      if (!schema_it->second.count(key))
        throw UsageError("config: unknown key '" + key + "' in section [" + section + "]");
      (void)value;
    }
  }
  auto lookup = [&sections](const std::string& section, const std::string& key) {
    auto s = sections.find(section);
    if (s == sections.end()) return std::string();
    auto k = s->second.find(key);
    return k == s->second.end() ? std::string() : k->second;
  };
  auto set_int = [&](const std::string& sec, const std::string& key, auto& out) {
    const auto v = lookup(sec, key);
    if (!v.empty()) out = static_cast<std::remove_reference_t<decltype(out)>>(parse_int(v, key));
  };
  auto set_double = [&](const std::string& sec, const std::string& key, double& out) {
    const auto v = lookup(sec, key);
    if (!v.empty()) out = parse_double(v, key);
  };

  set_int("phantom", "count", rc.phantom_count);
  {
    int dim = 0;
    set_int("phantom", "dim", dim);
    if (dim > 0) rc.phantom.dims = {dim, dim, dim};
  }
  set_double("phantom", "semi_axis_z", rc.phantom.semi_axes[0]);
  set_double("phantom", "semi_axis_y", rc.phantom.semi_axes[1]);
  set_double("phantom", "semi_axis_x", rc.phantom.semi_axes[2]);
  set_double("phantom", "parenchyma_hu", rc.phantom.parenchyma_hu);
  set_double("phantom", "parenchyma_noise_sd", rc.phantom.parenchyma_noise_sd);
  set_double("phantom", "lesion_hu", rc.phantom.lesion_hu);
  set_double("phantom", "lesion_radius_min", rc.phantom.lesion_radius[0]);
  set_double("phantom", "lesion_radius_max", rc.phantom.lesion_radius[1]);
  {
    double sp = 0.0;
    set_double("phantom", "spacing_mm", sp);
    if (sp > 0.0) rc.phantom.spacing_mm = {sp, sp, sp};
  }
  set_double("data", "train_frac", rc.split_fractions[0]);
  set_double("data", "valid_frac", rc.split_fractions[1]);
  set_double("data", "test_frac", rc.split_fractions[2]);

  set_int("network", "input_size", input_size);
  set_int("network", "num_slices", num_slices);
  set_double("network", "width_factor", width_factor);
  rc.width_factor = width_factor;
  rc.train.network = scaled_config(input_size, num_slices, width_factor);

  {
    const auto v = lookup("train", "target");
    if (!v.empty()) {
      try {
        rc.train.target = parse_target(v);
      } catch (const DataError& e) {
        throw UsageError(e.what());
      }
    }
  }
  set_int("train", "batch_size", rc.train.batch_size);
  set_double("train", "base_lr", rc.train.base_lr);
  set_int("train", "max_iter", rc.train.max_iter);
  set_double("train", "momentum", rc.train.momentum);
  set_double("train", "weight_decay", rc.train.weight_decay);
  set_double("train", "dropout", rc.train.dropout);
  set_int("train", "val_every", rc.train.val_every);
  {
    const auto v = lookup("train", "seed");
    if (!v.empty()) {
      try {
        rc.train.seed = std::stoull(v);
      } catch (const std::exception&) {
        throw UsageError("config: bad seed '" + v + "'");
      }
    }
  }
  set_int("eval", "resamples", rc.eval_resamples);
  {
    const auto v = lookup("eval", "split");
    if (!v.empty()) {
      if (!valid_split_tag(v)) throw UsageError("config: bad eval split '" + v + "'");
      rc.eval_split = v;
    }
  }
  rc.train.validate();
  if (rc.phantom_count < 1) throw UsageError("config: phantom count must be >= 1");
  if (rc.eval_resamples < 1) throw UsageError("config: eval resamples must be >= 1");
  return rc;
}

}  // namespace scan2num
