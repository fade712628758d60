#pragma once

#include <cstddef>
#include <vector>

#include "prism/adam.hpp"
#include "prism/nn.hpp"
#include "prism/rng.hpp"
#include "prism/tensor.hpp"

namespace prism {

// Differentiable model surface for backpropagation through imagined
// rollouts. Gradients flow through the returned tensors into the action
// inputs; implementations expose their own parameters via
// frozen_parameters() so the policy step can exclude them.
class ImaginationModel {
public:
  virtual ~ImaginationModel() = default;
  virtual std::size_t latent_dim() const = 0;
  virtual std::size_t action_dim() const = 0;
  virtual Tensor dynamics_step(const Tensor& z, const Tensor& a) = 0;         // [B,z],[B,a] -> [B,z]
  virtual Tensor reward_scalar(const Tensor& z, const Tensor& a) = 0;         // -> [B]
  virtual Tensor q_min_two(const Tensor& z, const Tensor& a, Rng& rng) = 0;   // online ensemble -> [B]
  virtual Tensor target_min_two(const Tensor& z, const Tensor& a, Rng& rng) = 0;  // target ensemble -> [B]
  virtual Tensor policy_input(const Tensor& z) { return z; }                  // task conditioning hook
  virtual ParamList frozen_parameters() { return {}; }
};

struct PolicySample {
  Tensor action;    // [B,A], tanh-squashed
  Tensor log_prob;  // [B]
  Tensor entropy;   // [B]
};

// Tanh-squashed Gaussian with soft-clamped log-std, reparameterized so BPTT
// gradients reach the mean and std heads.
class GaussianPolicy {
public:
  GaussianPolicy() = default;
  GaussianPolicy(std::size_t input_dim, std::size_t hidden_dim, std::size_t action_dim, Rng& rng,
                 double log_std_min = -10.0, double log_std_max = 2.0);

  PolicySample sample(const Tensor& input, Rng& rng, bool deterministic = false) const;
  void collect_params(const std::string& prefix, ParamList& out) const;
  std::size_t action_dim() const { return action_dim_; }
  std::size_t num_params() const { return net.num_params(); }

  MLP net;
  double log_std_min = -10.0;
  double log_std_max = 2.0;

private:
  std::size_t action_dim_ = 0;
};

enum class PolicyObjective { q_value, imagined_return };

struct PolicyTrainConfig {
  std::size_t horizon = 3;
  double entropy_coef = 1e-4;
  double grad_clip = 20.0;
  double discount = 0.99;
  PolicyObjective objective = PolicyObjective::q_value;
};

struct PolicyRollout {
  std::vector<Tensor> latents;    // H+1
  std::vector<Tensor> actions;    // H
  std::vector<Tensor> entropies;  // H
};

// Rolls the policy through the model for H steps. Latent NaN mid-rollout
// raises with the step index.
PolicyRollout imagine_rollout(const Tensor& z0, std::size_t horizon, ImaginationModel& model,
                              const GaussianPolicy& policy, Rng& rng, bool deterministic = false);

// Q-based objective: -(1/H) sum_j [minQ(z_j,a_j) + coef * H(pi(.|z_j))].
// The imagined_return variant scores sum_j gamma^j r_j + gamma^H V(z_H)
// plus the same entropy bonus.
Tensor policy_loss(const PolicyRollout& rollout, ImaginationModel& model, const GaussianPolicy& policy,
                   const PolicyTrainConfig& config, Rng& rng);

struct PolicyStepDiag {
  double loss = 0.0;
  double mean_entropy = 0.0;
  double grad_norm = 0.0;  // post-clip
};

// One Adam update on the policy parameters; model and Q parameters are
// frozen for the duration of the step.
PolicyStepDiag policy_step(const Tensor& z_batch, ImaginationModel& model, GaussianPolicy& policy, AdamState& adam,
                           const PolicyTrainConfig& config, Rng& rng);

}  // namespace prism
