#include "prism/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace prism {

double adam_step(ParamList& params, AdamState& state, double clip_norm) {
  if (clip_norm <= 0.0) throw std::invalid_argument("adam_step: clip_norm must be positive");
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].tensor.numel(), 0.0);
      state.v[i].assign(params[i].tensor.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw std::invalid_argument("adam_step: state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                                std::to_string(params.size()));
  }

  double sq = 0.0;
  for (auto& p : params) {
    for (double g : p.tensor.grad()) {
      if (std::isnan(g)) throw std::runtime_error("adam_step: NaN gradient in parameter '" + p.name + "'");
      sq += g * g;
    }
  }
  const double global_norm = std::sqrt(sq);
  const double rescale = global_norm > clip_norm ? clip_norm / global_norm : 1.0;

  state.step_count += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step_count));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step_count));

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].tensor;
    if (state.m[i].size() != p.numel()) {
      throw std::invalid_argument("adam_step: moment shape mismatch for parameter '" + params[i].name + "'");
    }
    const double lr = state.learning_rate * (i < state.lr_scale.size() ? state.lr_scale[i] : 1.0);
    auto value = p.raw_data();
    auto grad = p.raw_grad();
    auto& m = state.m[i];
    auto& v = state.v[i];
    for (std::size_t j = 0; j < value.size(); ++j) {
      const double g = grad[j] * rescale;
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * g;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * g * g;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      value[j] -= lr * mhat / (std::sqrt(vhat) + state.eps);
      grad[j] = 0.0;
    }
  }
  return global_norm;
}

FreezeGuard::FreezeGuard(const ParamList& params) {
  frozen_.reserve(params.size());
  previous_.reserve(params.size());
  for (const auto& p : params) {
    frozen_.push_back(p.tensor);
    previous_.push_back(p.tensor.requires_grad());
    frozen_.back().set_requires_grad(false);
  }
}

FreezeGuard::~FreezeGuard() {
  for (std::size_t i = 0; i < frozen_.size(); ++i) frozen_[i].set_requires_grad(previous_[i]);
}

}  // namespace prism
