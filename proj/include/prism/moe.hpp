#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "prism/nn.hpp"
#include "prism/tensor.hpp"

namespace prism {

enum class OrthoMode { gram_schmidt, soft_penalty, none };

OrthoMode ortho_mode_from_string(const std::string& name);
std::string ortho_mode_name(OrthoMode mode);

struct GateOutput {
  Tensor weights;  // [B,K], rows on the simplex
  Tensor logits;   // [B,K], pre-temperature
  Tensor entropy;  // [B], in [0, ln K]

  double mean_entropy() const;
};

// Sequential projection-and-normalize over the expert stack, applied per
// sample. Columns arrive as K tensors of shape [B,d]; every normalization is
// guarded by epsilon so linearly dependent columns collapse toward zero
// instead of producing NaNs. Differentiable end to end.
std::vector<Tensor> gram_schmidt(const std::vector<Tensor>& columns, double epsilon);

// Mean over the batch of ||U^T U - I||_F^2 with L2-normalized columns.
// The caller applies the lambda_ortho coefficient.
Tensor ortho_penalty(const std::vector<Tensor>& columns, double epsilon = 1e-8);

// Switch-style f*P product: K * sum_k f_k P_k where f_k is the argmax
// fraction (ties to the lowest index) and P_k the mean gate weight.
// Equals 1 at perfectly uniform routing. The caller applies alpha_lb.
Tensor load_balance_loss(const Tensor& weights);

struct TemperatureController {
  double tau = 1.8;
  double tau_init = 1.8;
  double tau_min = 0.5;
  double tau_max = 2.0;
  double beta = 0.02;
  double freeze_fraction = 0.05;
  double target_entropy = 0.0;  // 0 -> defaults to 0.5 * ln K
  std::int64_t total_steps = 0;

  // Frozen at tau_init for the first freeze_fraction * total_steps steps,
  // then tau <- clip(tau - beta * (observed - target), tau_min, tau_max).
  double update(double observed_entropy, std::int64_t step, std::size_t num_experts);
};

struct MoEConfig {
  std::size_t context_dim = 0;
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 0;   // expert trunk hidden width
  std::size_t feature_dim = 0;  // d, the orthogonalized feature space
  std::size_t out_dim = 0;
  std::size_t num_experts = 4;
  OrthoMode ortho_mode = OrthoMode::gram_schmidt;
  Activation head_activation = Activation::simnorm;
  bool residual = true;      // dynamics variant: head input is z + mixture
  bool use_head = true;      // false -> bare-residual ablation, output = z + mixture
  double epsilon = 1e-8;
  bool gumbel_noise = false;  // optional stochastic routing on the logits
  SimNorm simnorm;
};

// Context-gated expert stack with orthogonalized residual composition.
class MoEBlock {
public:
  MoEBlock() = default;
  MoEBlock(const MoEConfig& config, Rng& rng);

  // softmax(gate(context) / tau) per row; rng only consulted when
  // gumbel_noise is configured.
  GateOutput gate_weights(const Tensor& context, double tau, Rng* rng = nullptr) const;

  // Column k is trunk_k(x); every column is an independent function of x.
  std::vector<Tensor> expert_stack(const Tensor& x) const;

  struct ForwardResult {
    Tensor output;
    GateOutput gate;
    std::vector<Tensor> stack;  // pre-orthogonalization U columns
  };

  // Mixture of (orthogonalized) expert features, residual composition for
  // the dynamics variant, then the head.
  ForwardResult forward(const Tensor& z, const Tensor& context, const Tensor& x, double tau, Rng* rng = nullptr) const;

  void collect_params(const std::string& prefix, ParamList& out) const;
  std::size_t num_params() const;
  std::size_t num_experts() const { return config_.num_experts; }
  const MoEConfig& config() const { return config_; }
  bool has_gate() const { return gate_weight.defined(); }

  Tensor gate_weight;  // [K, context_dim], bias-free
  std::vector<NormedLinear> trunk_l0, trunk_l1;
  NormedLinear head;

private:
  MoEConfig config_;
};

}  // namespace prism
