#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "scan2num/model.hpp"
#include "scan2num/network.hpp"
#include "scan2num/tensor.hpp"

namespace scan2num {

inline double gradcheck_rel_error(double analytic, double numeric) {
  const double denom =
      std::max({std::fabs(analytic), std::fabs(numeric), 1e-8});
  return std::fabs(analytic - numeric) / denom;
}

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  int64_t worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

// Central differences against already-populated analytic gradients. The
// objective re-evaluates the scalar loss from the current parameter values;
// runs in double throughout, so callers build a double-typed network.
inline GradCheckResult check_gradients(const std::vector<NamedParam<double>>& params,
                                       const std::function<double()>& objective, double eps) {
  if (eps <= 0.0) throw DataError("check_gradients: eps must be positive");
  GradCheckResult r;
  for (const auto& np : params) {
    Param<double>& p = *np.param;
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      double& v = p.value.data[static_cast<size_t>(i)];
      const double saved = v;
      v = saved + eps;
      const double f_plus = objective();
      v = saved - eps;
      const double f_minus = objective();
      v = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * eps);
      const double analytic = p.grad.data[static_cast<size_t>(i)];
      const double err = gradcheck_rel_error(analytic, numeric);
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst_param = np.name;
        r.worst_index = i;
        r.worst_analytic = analytic;
        r.worst_numeric = numeric;
      }
    }
  }
  return r;
}

// Whole-network shadow check: the same forward/backward code instantiated in
// double, random input stack and target, L2 objective with N=1. Dropout is
// forced off so the objective is a deterministic function of the parameters.
inline GradCheckResult check_network_gradients(const NetworkConfig& cfg, uint64_t seed,
                                               double eps = 1e-5) {
  NetworkConfig c = cfg;
  c.dropout_rate = 0.0;
  auto params = NetworkParams<double>::init(c, derive_seed(seed, "gradcheck-params"));
  Rng data_rng(derive_seed(seed, "gradcheck-data"));
  Tensor<double> stack({c.num_slices, 1, c.input_size, c.input_size});
  for (auto& v : stack.data) v = data_rng.uniform(-1.0, 1.0);
  const double target = data_rng.uniform(0.0, 5.0);
  ForwardCache<double> cache;
  const ScanPrediction p = model_forward(stack, c, params, true, nullptr, cache);
  model_backward(p.score - target, c, params, cache);
  auto objective = [&]() {
    ForwardCache<double> scratch;
    const ScanPrediction q = model_forward(stack, c, params, true, nullptr, scratch);
    const double d = q.score - target;
    return 0.5 * d * d;
  };
  return check_gradients(params.named(), objective, eps);
}

}  // namespace scan2num
