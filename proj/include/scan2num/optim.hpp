#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "scan2num/tensor.hpp"

namespace scan2num {

// Linear decay from base_lr at iter 0 to 0 at max_iter.
inline double lr_schedule(int64_t iter, double base_lr, int64_t max_iter) {
  if (max_iter < 1) throw DataError("lr_schedule: max_iter must be >= 1");
  if (iter < 0 || iter > max_iter)
    throw DataError("lr_schedule: iter " + std::to_string(iter) + " outside [0, " +
                    std::to_string(max_iter) + "]");
  return base_lr * (1.0 - static_cast<double>(iter) / static_cast<double>(max_iter));
}

// SGD with momentum and coupled weight decay, all arithmetic in T:
//   g   <- grad + wd * value
//   buf <- momentum * buf - lr * g
//   value < - value + buf
// Decay applies to weights and biases alike. Gradients are cleared after the
// update. A non-finite gradient aborts and names the parameter.
template <typename T>
void sgd_step(const std::vector<NamedParam<T>>& params, double lr, double momentum,
              double weight_decay) {
  const T lr_t = static_cast<T>(lr);
  const T mom_t = static_cast<T>(momentum);
  const T wd_t = static_cast<T>(weight_decay);
  for (const auto& np : params) {
    Param<T>& p = *np.param;
    const int64_t n = p.value.numel();
    T* v = p.value.ptr();
    T* g = p.grad.ptr();
    T* buf = p.momentum.ptr();
    for (int64_t i = 0; i < n; ++i) {
      if (!std::isfinite(static_cast<double>(g[i])))
        throw NumericError("sgd_step: non-finite gradient in " + np.name + " at index " +
                           std::to_string(i));
      const T adj = g[i] + wd_t * v[i];
      buf[i] = mom_t * buf[i] - lr_t * adj;
      v[i] += buf[i];
      g[i] = T(0);
    }
  }
}

}  // namespace scan2num
