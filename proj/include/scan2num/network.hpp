#pragma once

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "scan2num/kernels.hpp"
#include "scan2num/rng.hpp"
#include "scan2num/tensor.hpp"

namespace scan2num {

enum class LayerKind { Conv, Relu, MaxPool };

struct LayerSpec {
  LayerKind kind;
  int channels_out = 0;  // conv only
  int kernel = 0;
  int stride = 0;
  int conv_index = -1;  // which parameter block a conv stage uses
};

// The slice column: a stack of strided valid convolutions, each followed by
// relu, with 2x2 stride-2 max pooling after the convs listed in pool_after.
// The chain must reduce the input plane to 1x1 so the column emits one
// feature vector per slice; fc6 then maps the fused vector to the score.
struct NetworkConfig {
  int num_slices = 16;
  int input_size = 512;
  std::vector<int> conv_channels{32, 128, 256, 512, 1024};
  std::vector<int> kernels{5, 5, 3, 3, 3};
  std::vector<int> strides{2, 2, 2, 2, 1};
  std::set<int> pool_after{1, 2, 3};  // 1-based conv indices
  int pool_kernel = 2;
  int pool_stride = 2;
  int feature_dim = 1024;
  double dropout_rate = 0.5;

  int conv_count() const { return static_cast<int>(conv_channels.size()); }

  std::vector<LayerSpec> column_plan() const {
    std::vector<LayerSpec> plan;
    for (int i = 0; i < conv_count(); ++i) {
      plan.push_back({LayerKind::Conv, conv_channels[static_cast<size_t>(i)],
                      kernels[static_cast<size_t>(i)], strides[static_cast<size_t>(i)], i});
      plan.push_back({LayerKind::Relu, 0, 0, 0, -1});
      if (pool_after.count(i + 1))
        plan.push_back({LayerKind::MaxPool, 0, pool_kernel, pool_stride, -1});
    }
    return plan;
  }

  struct Stage {
    std::string name;
    int channels;
    int spatial;
  };

  // Spatial/channel sizes after every stage, starting from the input plane.
  std::vector<Stage> shape_chain() const {
    std::vector<Stage> chain;
    chain.push_back({"input", 1, input_size});
    int cur = input_size;
    int ch = 1;
    int conv_i = 0, pool_i = 0;
    for (const auto& ls : column_plan()) {
      if (ls.kind == LayerKind::Conv) {
        ++conv_i;
        ch = ls.channels_out;
        cur = conv_out_size(cur, ls.kernel, ls.stride);
        chain.push_back({"conv" + std::to_string(conv_i), ch, cur});
      } else if (ls.kind == LayerKind::MaxPool) {
        ++pool_i;
        cur = pool_out_size(cur, ls.kernel, ls.stride);
        chain.push_back({"pool" + std::to_string(pool_i), ch, cur});
      }
    }
    return chain;
  }

  std::string fc_name() const { return "fc" + std::to_string(conv_count() + 1); }

  void validate() const {
    if (num_slices < 1) throw DataError("network: num_slices must be >= 1");
    if (input_size < 1) throw DataError("network: input_size must be >= 1");
    if (conv_channels.empty()) throw DataError("network: need at least one conv");
    if (kernels.size() != conv_channels.size() || strides.size() != conv_channels.size())
      throw DataError("network: conv_channels/kernels/strides lengths differ");
    for (size_t i = 0; i < conv_channels.size(); ++i) {
      if (conv_channels[i] < 1 || kernels[i] < 1 || strides[i] < 1)
        throw DataError("network: conv" + std::to_string(i + 1) +
                        " has non-positive channels/kernel/stride");
    }
    for (int p : pool_after)
      if (p < 1 || p > conv_count())
        throw DataError("network: pool_after index " + std::to_string(p) + " out of range");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0))
      throw DataError("network: dropout_rate must be in [0,1)");
    if (feature_dim != conv_channels.back())
      throw DataError("network: feature_dim must equal the last conv's channels");
    // walk the chain; conv_out_size/pool_out_size throw if a stage underflows
    const auto chain = shape_chain();
    const auto& last = chain.back();
    if (last.spatial != 1)
      throw DataError("network: column ends at spatial " + std::to_string(last.spatial) +
                      " after " + last.name + ", expected 1x1");
  }

  std::map<std::string, std::string> to_kv() const {
    auto join = [](const auto& c) {
      std::ostringstream os;
      bool first = true;
      for (auto v : c) {
        if (!first) os << ",";
        os << v;
        first = false;
      }
      return os.str();
    };
    std::map<std::string, std::string> kv;
    kv["network.num_slices"] = std::to_string(num_slices);
    kv["network.input_size"] = std::to_string(input_size);
    kv["network.conv_channels"] = join(conv_channels);
    kv["network.kernels"] = join(kernels);
    kv["network.strides"] = join(strides);
    kv["network.pool_after"] = join(pool_after);
    kv["network.pool_kernel"] = std::to_string(pool_kernel);
    kv["network.pool_stride"] = std::to_string(pool_stride);
    kv["network.feature_dim"] = std::to_string(feature_dim);
    kv["network.dropout_rate"] = format_double(dropout_rate);
    return kv;
  }

  static NetworkConfig from_kv(const std::map<std::string, std::string>& kv) {
    auto get = [&kv](const std::string& key) -> const std::string& {
      auto it = kv.find(key);
      if (it == kv.end()) throw DataError("network config: missing key " + key);
      return it->second;
    };
    auto split_ints = [](const std::string& s, const std::string& what) {
      std::vector<int> out;
      std::stringstream ss(s);
      std::string item;
      while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(static_cast<int>(parse_int(item, what)));
      return out;
    };
    NetworkConfig c;
    c.num_slices = static_cast<int>(parse_int(get("network.num_slices"), "num_slices"));
    c.input_size = static_cast<int>(parse_int(get("network.input_size"), "input_size"));
    c.conv_channels = split_ints(get("network.conv_channels"), "conv_channels");
    c.kernels = split_ints(get("network.kernels"), "kernels");
    c.strides = split_ints(get("network.strides"), "strides");
    auto pools = split_ints(get("network.pool_after"), "pool_after");
    c.pool_after = std::set<int>(pools.begin(), pools.end());
    c.pool_kernel = static_cast<int>(parse_int(get("network.pool_kernel"), "pool_kernel"));
    c.pool_stride = static_cast<int>(parse_int(get("network.pool_stride"), "pool_stride"));
    c.feature_dim = static_cast<int>(parse_int(get("network.feature_dim"), "feature_dim"));
    c.dropout_rate = parse_double(get("network.dropout_rate"), "dropout_rate");
    return c;
  }
};

// Desk-scale variant of the reference column. Channel widths scale by
// width_factor; the kernel template is clamped to the shrinking plane (a
// clamped conv covers the full extent and lands on 1x1), strides and pools
// are kept. width_factor 1 at input 512 reproduces the reference net.
inline NetworkConfig scaled_config(int input_size, int num_slices, double width_factor) {
  if (width_factor <= 0.0) throw DataError("scaled_config: width_factor must be positive");
  const NetworkConfig ref;
  NetworkConfig c;
  c.num_slices = num_slices;
  c.input_size = input_size;
  c.conv_channels.clear();
  c.kernels.clear();
  c.strides.clear();
  c.dropout_rate = ref.dropout_rate;
  int cur = input_size;
  for (size_t i = 0; i < ref.conv_channels.size(); ++i) {
    const int ch = std::max(1, static_cast<int>(std::llround(width_factor * ref.conv_channels[i])));
    const int k = std::min(ref.kernels[i], cur);
    const int s = ref.strides[i];
    c.conv_channels.push_back(ch);
    c.kernels.push_back(k);
    c.strides.push_back(s);
    cur = conv_out_size(cur, k, s);
    if (ref.pool_after.count(static_cast<int>(i) + 1))
      cur = pool_out_size(cur, ref.pool_kernel, ref.pool_stride);
  }
  c.pool_after = ref.pool_after;
  c.feature_dim = c.conv_channels.back();
  c.validate();
  return c;
}

// Parameter blocks in forward order: conv1..convN then the scoring head.
// Weight layout: conv [c_out, c_in, k, k], head [feature_dim, 1].
template <typename T>
struct NetworkParams {
  struct Block {
    std::string name;
    Param<T> weight;
    Param<T> bias;
  };
  std::vector<Block> convs;
  Block fc;

  static NetworkParams allocate(const NetworkConfig& cfg) {
    cfg.validate();
    NetworkParams p;
    int c_in = 1;
    for (int i = 0; i < cfg.conv_count(); ++i) {
      const int c_out = cfg.conv_channels[static_cast<size_t>(i)];
      const int k = cfg.kernels[static_cast<size_t>(i)];
      Block b;
      b.name = "conv" + std::to_string(i + 1);
      b.weight = Param<T>({c_out, c_in, k, k});
      b.bias = Param<T>({c_out});
      p.convs.push_back(std::move(b));
      c_in = c_out;
    }
    p.fc.name = cfg.fc_name();
    p.fc.weight = Param<T>({cfg.feature_dim, 1});
    p.fc.bias = Param<T>({1});
    return p;
  }

  // Xavier-uniform weights (fan_in scaled), zero biases. Each block draws
  // from its own derived stream so layer order never shifts another layer's
  // values.
  static NetworkParams init(const NetworkConfig& cfg, uint64_t seed) {
    NetworkParams p = allocate(cfg);
    for (size_t i = 0; i < p.convs.size(); ++i) {
      auto& b = p.convs[i];
      const int fan_in = b.weight.value.dim(1) * b.weight.value.dim(2) * b.weight.value.dim(3);
      Rng rng(derive_seed(seed, "xavier", i));
      fill_xavier(b.weight.value, fan_in, rng);
    }
    Rng rng(derive_seed(seed, "xavier", p.convs.size()));
    fill_xavier(p.fc.weight.value, p.fc.weight.value.dim(0), rng);
    return p;
  }

  std::vector<NamedParam<T>> named() {
    std::vector<NamedParam<T>> out;
    for (auto& b : convs) {
      out.push_back({b.name + ".weight", &b.weight});
      out.push_back({b.name + ".bias", &b.bias});
    }
    out.push_back({fc.name + ".weight", &fc.weight});
    out.push_back({fc.name + ".bias", &fc.bias});
    return out;
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& b : convs) n += b.weight.value.numel() + b.bias.value.numel();
    return n + fc.weight.value.numel() + fc.bias.value.numel();
  }
};

}  // namespace scan2num
