#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prism/adam.hpp"
#include "prism/rng.hpp"
#include "prism/tensor.hpp"

namespace prism {

enum class Activation { none, mish, simnorm };

Activation activation_from_string(const std::string& name);
std::string activation_name(Activation act);

// Simplicial normalization: the last axis is split into contiguous groups of
// `group_size` entries, each passed through a temperature softmax.
struct SimNorm {
  std::size_t group_size = 8;
  double temperature = 1.0;

  Tensor forward(const Tensor& x) const { return simnorm(x, group_size, temperature); }
};

// Linear -> LayerNorm -> dropout (training only) -> activation.
class NormedLinear {
public:
  NormedLinear() = default;
  NormedLinear(std::size_t in_features, std::size_t out_features, Activation act, double dropout_rate = 0.0,
               SimNorm simnorm = {});

  void init(Rng& rng);
  Tensor forward(const Tensor& x, bool training = false, Rng* dropout_rng = nullptr) const;
  void collect_params(const std::string& prefix, ParamList& out) const;

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  std::size_t num_params() const { return out_ * in_ + 3 * out_; }

  Tensor weight, bias, ln_gain, ln_shift;
  Activation activation = Activation::none;
  double dropout_rate = 0.0;
  SimNorm simnorm_cfg;

private:
  std::size_t in_ = 0, out_ = 0;
};

// Plain affine layer (used as the final projection of policy and Q heads).
class Linear {
public:
  Linear() = default;
  Linear(std::size_t in_features, std::size_t out_features);

  void init(Rng& rng);
  Tensor forward(const Tensor& x) const { return linear(x, weight, bias); }
  void collect_params(const std::string& prefix, ParamList& out) const;
  std::size_t num_params() const { return out_ * in_ + out_; }

  Tensor weight, bias;

private:
  std::size_t in_ = 0, out_ = 0;
};

struct MLPSpec {
  std::vector<std::size_t> widths;       // in, hidden..., out
  std::vector<Activation> activations;   // one per layer (widths.size() - 1)
  std::vector<double> dropouts;          // one per layer; empty means all zero
  bool final_plain_linear = false;       // last layer is a bare Linear
  SimNorm simnorm;
};

class MLP {
public:
  MLP() = default;
  explicit MLP(const MLPSpec& spec);

  void init(Rng& rng);
  Tensor forward(const Tensor& x, bool training = false, Rng* dropout_rng = nullptr) const;
  void collect_params(const std::string& prefix, ParamList& out) const;
  std::size_t num_params() const;

  std::vector<NormedLinear> layers;
  std::optional<Linear> head;
};

// Builds an MLP with all parameters drawn from `seed`; weights are uniform in
// [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero, layer-norm affine identity.
MLP init_parameters(const MLPSpec& spec, std::uint64_t seed);

}  // namespace prism
