#include "prism/policy_trainer.hpp"

#include <cmath>
#include <stdexcept>

namespace prism {

GaussianPolicy::GaussianPolicy(std::size_t input_dim, std::size_t hidden_dim, std::size_t action_dim, Rng& rng,
                               double log_std_min, double log_std_max)
    : log_std_min(log_std_min), log_std_max(log_std_max), action_dim_(action_dim) {
  MLPSpec spec;
  spec.widths = {input_dim, hidden_dim, hidden_dim, 2 * action_dim};
  spec.activations = {Activation::mish, Activation::mish, Activation::none};
  spec.final_plain_linear = true;
  net = MLP(spec);
  net.init(rng);
}

PolicySample GaussianPolicy::sample(const Tensor& input, Rng& rng, bool deterministic) const {
  const std::size_t batch = input.dim(0);
  Tensor out = net.forward(input);
  Tensor mean_pre = slice_last(out, 0, action_dim_);
  Tensor raw_log_std = slice_last(out, action_dim_, action_dim_);
  // soft clamp keeps log-std inside [min, max] while staying differentiable
  Tensor log_std = add_scalar(scale(add_scalar(tanh(raw_log_std), 1.0), 0.5 * (log_std_max - log_std_min)),
                              log_std_min);
  Tensor std_dev = exp(log_std);

  std::vector<double> noise(batch * action_dim_, 0.0);
  if (!deterministic) {
    for (double& v : noise) v = rng.normal();
  }
  Tensor xi = Tensor::from_data({batch, action_dim_}, std::move(noise));
  Tensor pre_squash = add(mean_pre, mul(std_dev, xi));
  Tensor action = tanh(pre_squash);

  Tensor ones = Tensor::full({batch, action_dim_}, 1.0);
  // log|d tanh / dx| summed over action dims
  Tensor squash_logdet = dot_rows(ones, log(add_scalar(sub(ones, mul(action, action)), 1e-6)));

  constexpr double kLogTwoPi = 1.8378770664093453;  // log(2*pi)
  Tensor gauss_logp = negate(add_scalar(
      add(scale(dot_rows(xi, xi), 0.5), dot_rows(ones, log_std)),
      0.5 * kLogTwoPi * static_cast<double>(action_dim_)));
  Tensor log_prob = sub(gauss_logp, squash_logdet);

  // change of variables: H(tanh(X)) = H(X) + E[log(1 - tanh^2 X)]
  constexpr double kGaussEntropyConst = 1.4189385332046727;  // 0.5 * log(2*pi*e)
  Tensor entropy = add(add_scalar(dot_rows(ones, log_std), kGaussEntropyConst * static_cast<double>(action_dim_)),
                       squash_logdet);
  return {action, log_prob, entropy};
}

void GaussianPolicy::collect_params(const std::string& prefix, ParamList& out) const {
  net.collect_params(prefix, out);
}

PolicyRollout imagine_rollout(const Tensor& z0, std::size_t horizon, ImaginationModel& model,
                              const GaussianPolicy& policy, Rng& rng, bool deterministic) {
  if (horizon == 0) throw std::invalid_argument("imagine_rollout: horizon must be >= 1");
  PolicyRollout rollout;
  rollout.latents.push_back(z0);
  Tensor z = z0;
  for (std::size_t j = 0; j < horizon; ++j) {
    PolicySample s = policy.sample(model.policy_input(z), rng, deterministic);
    z = model.dynamics_step(z, s.action);
    if (!all_finite(z)) {
      throw std::runtime_error("imagine_rollout: non-finite latent at step " + std::to_string(j));
    }
    rollout.latents.push_back(z);
    rollout.actions.push_back(s.action);
    rollout.entropies.push_back(s.entropy);
  }
  return rollout;
}

Tensor policy_loss(const PolicyRollout& rollout, ImaginationModel& model, const GaussianPolicy& policy,
                   const PolicyTrainConfig& config, Rng& rng) {
  const std::size_t horizon = rollout.actions.size();
  if (horizon == 0) throw std::invalid_argument("policy_loss: empty rollout");

  Tensor objective = Tensor::zeros({1});
  if (config.objective == PolicyObjective::q_value) {
    for (std::size_t j = 0; j < horizon; ++j) {
      Tensor q = model.q_min_two(rollout.latents[j], rollout.actions[j], rng);
      objective = add(objective, add(mean(q), scale(mean(rollout.entropies[j]), config.entropy_coef)));
    }
    return scale(objective, -1.0 / static_cast<double>(horizon));
  }

  // imagined_return: Eq.-2-style discounted reward sum with terminal value
  double discount = 1.0;
  Tensor entropy_acc = Tensor::zeros({1});
  for (std::size_t j = 0; j < horizon; ++j) {
    Tensor r = model.reward_scalar(rollout.latents[j], rollout.actions[j]);
    objective = add(objective, scale(mean(r), discount));
    entropy_acc = add(entropy_acc, mean(rollout.entropies[j]));
    discount *= config.discount;
  }
  const Tensor& terminal_z = rollout.latents[horizon];
  Rng terminal_rng(0);
  PolicySample terminal = policy.sample(model.policy_input(terminal_z), terminal_rng, true);
  objective = add(objective, scale(mean(model.target_min_two(terminal_z, terminal.action, rng)), discount));
  objective = add(objective, scale(entropy_acc, config.entropy_coef / static_cast<double>(horizon)));
  return negate(objective);
}

PolicyStepDiag policy_step(const Tensor& z_batch, ImaginationModel& model, GaussianPolicy& policy, AdamState& adam,
                           const PolicyTrainConfig& config, Rng& rng) {
  FreezeGuard freeze(model.frozen_parameters());
  ParamList params;
  policy.collect_params("policy", params);

  PolicyStepDiag diag;
  {
    Tape tape;
    PolicyRollout rollout = imagine_rollout(stopgrad(z_batch), config.horizon, model, policy, rng);
    Tensor loss = policy_loss(rollout, model, policy, config, rng);
    diag.loss = loss.item();
    double entropy_sum = 0.0;
    for (const auto& e : rollout.entropies) entropy_sum += mean(e).item();
    diag.mean_entropy = entropy_sum / static_cast<double>(rollout.entropies.size());
    tape.backward(loss);
  }
  const double raw_norm = adam_step(params, adam, config.grad_clip);
  diag.grad_norm = std::min(raw_norm, config.grad_clip);
  return diag;
}

}  // namespace prism
