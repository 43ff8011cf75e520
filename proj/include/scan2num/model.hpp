#pragma once

#include <cstdint>
#include <vector>

#include "scan2num/kernels.hpp"
#include "scan2num/network.hpp"
#include "scan2num/rng.hpp"
#include "scan2num/tensor.hpp"

namespace scan2num {

// Late fusion: the same column weights score every slice, per-slice features
// are mean-pooled into one vector, and the head maps that to a scalar. The
// per-slice readout runs the head on each unfused feature row; with a linear
// head and no dropout their mean equals the scan score exactly (in exact
// arithmetic), which is what makes the readout usable for attribution.
struct ScanPrediction {
  double score = 0.0;
  std::vector<double> per_slice;
};

template <typename T>
struct ForwardCache {
  std::vector<Tensor<T>> acts;          // acts[0]=input stack, acts[i+1]=stage i output
  std::vector<Tensor<T>> cols;          // conv stages: unfolded inputs
  std::vector<Tensor<int32_t>> argmax;  // pool stages
  Tensor<T> features;                   // [n, feature_dim]
  Tensor<T> per_slice;                  // [n, 1]
  Tensor<T> fused;                      // [1, feature_dim]
  Tensor<T> mask;                       // dropout factors, [1, feature_dim]
  Tensor<T> fc_in;                      // [1, feature_dim]
  Tensor<T> score;                      // [1, 1]
  bool training = false;
  // backward scratch
  Tensor<T> d_a, d_b, dfused, dfeat, dscore_t;
};

namespace detail {

template <typename T>
void run_stage(const LayerSpec& ls, const NetworkParams<T>& params, const Tensor<T>& in,
               Tensor<T>& out, Tensor<T>& col, Tensor<int32_t>& argmax) {
  switch (ls.kind) {
    case LayerKind::Conv: {
      const auto& b = params.convs[static_cast<size_t>(ls.conv_index)];
      conv2d_forward(in, b.weight.value, b.bias.value, ls.stride, col, out);
      break;
    }
    case LayerKind::Relu:
      relu_forward(in, out);
      break;
    case LayerKind::MaxPool:
      maxpool_forward(in, ls.kernel, ls.stride, out, argmax);
      break;
  }
}

template <typename T>
void check_stack(const Tensor<T>& stack, const NetworkConfig& cfg) {
  if (!stack.same_shape({cfg.num_slices, 1, cfg.input_size, cfg.input_size}))
    throw DataError("model: stack shape does not match config (want [" +
                    std::to_string(cfg.num_slices) + ",1," + std::to_string(cfg.input_size) +
                    "," + std::to_string(cfg.input_size) + "])");
}

// head + fusion shared by both forward paths; features is [n, feature_dim]
template <typename T>
ScanPrediction finish_forward(const NetworkConfig& cfg, const NetworkParams<T>& params,
                              bool training, Rng* rng, ForwardCache<T>& c) {
  affine_forward(c.features, params.fc.weight.value, params.fc.bias.value, c.per_slice);
  mean_fuse_forward(c.features, c.fused);
  if (training && cfg.dropout_rate > 0.0) {
    if (!rng) throw DataError("model: training forward with dropout needs an rng");
    dropout_forward(c.fused, cfg.dropout_rate, true, *rng, c.mask, c.fc_in);
  } else {
    ensure_shape(c.mask, c.fused.shape);
    std::fill(c.mask.data.begin(), c.mask.data.end(), T(1));
    ensure_shape(c.fc_in, c.fused.shape);
    c.fc_in.data = c.fused.data;
  }
  affine_forward(c.fc_in, params.fc.weight.value, params.fc.bias.value, c.score);
  c.training = training;
  ScanPrediction pred;
  pred.score = static_cast<double>(c.score.data[0]);
  pred.per_slice.resize(static_cast<size_t>(cfg.num_slices));
  for (int i = 0; i < cfg.num_slices; ++i)
    pred.per_slice[static_cast<size_t>(i)] = static_cast<double>(c.per_slice.data[static_cast<size_t>(i)]);
  return pred;
}

}  // namespace detail

// Training-style forward: the whole stack runs batched through the column and
// every intermediate needed by model_backward lands in the cache.
template <typename T>
ScanPrediction model_forward(const Tensor<T>& stack, const NetworkConfig& cfg,
                             const NetworkParams<T>& params, bool training, Rng* rng,
                             ForwardCache<T>& cache) {
  detail::check_stack(stack, cfg);
  const auto plan = cfg.column_plan();
  cache.acts.resize(plan.size() + 1);
  cache.cols.resize(plan.size());
  cache.argmax.resize(plan.size());
  ensure_shape(cache.acts[0], stack.shape);
  cache.acts[0].data = stack.data;
  for (size_t i = 0; i < plan.size(); ++i)
    detail::run_stage(plan[i], params, cache.acts[i], cache.acts[i + 1], cache.cols[i],
                      cache.argmax[i]);
  const auto& last = cache.acts.back();
  ensure_shape(cache.features, {cfg.num_slices, cfg.feature_dim});
  cache.features.data = last.data;  // [n,f,1,1] and [n,f] share the layout
  return detail::finish_forward(cfg, params, training, rng, cache);
}

// Inference: slices stream through the column one at a time so peak memory
// stays at two activation planes regardless of slice count.
template <typename T>
ScanPrediction predict(const Tensor<T>& stack, const NetworkConfig& cfg,
                       const NetworkParams<T>& params) {
  detail::check_stack(stack, cfg);
  const auto plan = cfg.column_plan();
  ForwardCache<T> c;
  ensure_shape(c.features, {cfg.num_slices, cfg.feature_dim});
  Tensor<T> a, b, col;
  Tensor<int32_t> argmax;
  const int64_t plane = static_cast<int64_t>(cfg.input_size) * cfg.input_size;
  for (int s = 0; s < cfg.num_slices; ++s) {
    ensure_shape(a, {1, 1, cfg.input_size, cfg.input_size});
    std::copy(stack.ptr() + s * plane, stack.ptr() + (s + 1) * plane, a.ptr());
    for (const auto& ls : plan) {
      detail::run_stage(ls, params, a, b, col, argmax);
      std::swap(a, b);
    }
    if (a.numel() != cfg.feature_dim)
      throw DataError("model: column emitted " + std::to_string(a.numel()) +
                      " values per slice, expected feature_dim");
    std::copy(a.ptr(), a.ptr() + cfg.feature_dim,
              c.features.ptr() + static_cast<int64_t>(s) * cfg.feature_dim);
  }
  return detail::finish_forward(cfg, params, false, nullptr, c);
}

// Accumulates parameter gradients for d(loss)/d(score) = dscore. Reuses the
// cache's col buffers as scratch, so one backward per forward.
template <typename T>
void model_backward(T dscore, const NetworkConfig& cfg, NetworkParams<T>& params,
                    ForwardCache<T>& cache) {
  const auto plan = cfg.column_plan();
  if (cache.acts.size() != plan.size() + 1)
    throw DataError("model_backward: cache does not match config");
  ensure_shape(cache.dscore_t, {1, 1});
  cache.dscore_t.data[0] = dscore;
  Tensor<T>& dfc_in = cache.d_a;
  affine_backward(cache.fc_in, params.fc.weight.value, cache.dscore_t, params.fc.weight.grad,
                  params.fc.bias.grad, dfc_in);
  dropout_backward(cache.mask, dfc_in, cache.dfused);
  mean_fuse_backward(cache.dfused, cfg.num_slices, cache.dfeat);
  ensure_shape(cache.d_a, cache.acts.back().shape);
  cache.d_a.data = cache.dfeat.data;
  for (size_t ri = plan.size(); ri-- > 0;) {
    const auto& ls = plan[ri];
    const Tensor<T>& in = cache.acts[ri];
    const Tensor<T>& out = cache.acts[ri + 1];
    switch (ls.kind) {
      case LayerKind::Conv: {
        auto& b = params.convs[static_cast<size_t>(ls.conv_index)];
        conv2d_backward(in, b.weight.value, b.bias.value, ls.stride, cache.cols[ri], cache.d_a,
                        b.weight.grad, b.bias.grad, cache.d_b);
        break;
      }
      case LayerKind::Relu:
        relu_backward(out, cache.d_a, cache.d_b);
        break;
      case LayerKind::MaxPool:
        maxpool_backward(cache.d_a, cache.argmax[ri], in.dim(2), in.dim(3), cache.d_b);
        break;
    }
    std::swap(cache.d_a, cache.d_b);
  }
}

}  // namespace scan2num
