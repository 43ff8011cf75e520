#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "scan2num/common.hpp"

namespace scan2num {

// Dense row-major tensor. Plain struct on purpose: kernels index raw pointers.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)), data(checked_numel(shape), T(0)) {}

  static int64_t checked_numel(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d <= 0) throw DataError("Tensor: non-positive dimension " + std::to_string(d));
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  void zero() { std::fill(data.begin(), data.end(), T(0)); }

  bool same_shape(const std::vector<int>& s) const { return shape == s; }
};

// Reshape to a target shape if needed; contents are left unspecified, callers
// overwrite. Keeps vector capacity across training iterations.
template <typename T>
void ensure_shape(Tensor<T>& t, const std::vector<int>& shape) {
  if (t.shape == shape) return;
  int64_t n = Tensor<T>::checked_numel(shape);
  t.shape = shape;
  t.data.resize(static_cast<size_t>(n));
}

template <typename To, typename From>
Tensor<To> cast_tensor(const Tensor<From>& src) {
  Tensor<To> out;
  out.shape = src.shape;
  out.data.resize(src.data.size());
  for (size_t i = 0; i < src.data.size(); ++i) out.data[i] = static_cast<To>(src.data[i]);
  return out;
}

// Learnable parameter with its gradient and SGD momentum buffer.
template <typename T>
struct Param {
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> momentum;

  Param() = default;
  explicit Param(const std::vector<int>& shape) : value(shape), grad(shape), momentum(shape) {}
};

template <typename T>
struct NamedParam {
  std::string name;
  Param<T>* param;
};

}  // namespace scan2num
