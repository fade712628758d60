#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prism/tensor.hpp"

namespace prism {

struct NamedParam {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedParam>;

struct AdamState {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step_count = 0;
  // Lazily sized on the first step, parallel to the parameter list.
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::vector<double> lr_scale;  // optional per-parameter multiplier, default 1
};

// Global-norm gradient clipping followed by one Adam update with bias
// correction; zeroes all grads afterwards. Returns the pre-clip global
// gradient norm. Errors on NaN grads, naming the offending parameter.
double adam_step(ParamList& params, AdamState& state, double clip_norm);

// Sets requires_grad = false on construction and restores it on destruction.
class FreezeGuard {
public:
  explicit FreezeGuard(const ParamList& params);
  ~FreezeGuard();
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

private:
  std::vector<Tensor> frozen_;
  std::vector<bool> previous_;
};

}  // namespace prism
