#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "prism/tensor.hpp"

namespace prism::testing {

// Central finite differences over the entries of `inputs`, compared against
// tape gradients of the scalar produced by `fn`. `fn` must be a pure function
// of the input values. Returns the worst relative error.
inline double gradcheck(const std::function<Tensor()>& fn, std::vector<Tensor> inputs, double h = 1e-6) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    Tensor loss = fn();
    tape.backward(loss);
  }
  for (auto& t : inputs) {
    analytic.emplace_back(t.grad().begin(), t.grad().end());
    t.zero_grad();
  }

  double worst = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    auto data = inputs[ti].raw_data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const double saved = data[j];
      data[j] = saved + h;
      const double fp = fn().item();
      data[j] = saved - h;
      const double fm = fn().item();
      data[j] = saved;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[ti][j];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace prism::testing
