#include "prism/moe.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prism {

OrthoMode ortho_mode_from_string(const std::string& name) {
  if (name == "gram_schmidt") return OrthoMode::gram_schmidt;
  if (name == "soft_penalty") return OrthoMode::soft_penalty;
  if (name == "none") return OrthoMode::none;
  throw std::invalid_argument("unknown ortho mode '" + name + "'");
}

std::string ortho_mode_name(OrthoMode mode) {
  switch (mode) {
    case OrthoMode::gram_schmidt: return "gram_schmidt";
    case OrthoMode::soft_penalty: return "soft_penalty";
    case OrthoMode::none: return "none";
  }
  return "none";
}

double GateOutput::mean_entropy() const {
  double s = 0.0;
  for (double v : entropy.data()) s += v;
  return s / static_cast<double>(entropy.numel());
}

std::vector<Tensor> gram_schmidt(const std::vector<Tensor>& columns, double epsilon) {
  if (columns.empty()) throw std::invalid_argument("gram_schmidt: empty stack");
  const std::size_t d = columns[0].shape().back();
  if (d < columns.size()) {
    throw std::invalid_argument("gram_schmidt: feature dim " + std::to_string(d) + " < expert count " +
                                std::to_string(columns.size()));
  }
  std::vector<Tensor> v;
  v.reserve(columns.size());
  for (const Tensor& u : columns) {
    Tensor residual = u;
    // Full projection quotient <v_i,u>/<v_i,v_i>. The epsilon-guarded
    // normalization leaves |v_i| slightly below 1; dividing by <v_i,v_i>
    // cancels that exactly, so a dependent column collapses to the
    // floating-point floor instead of an O(1) artifact. The epsilon^2 term
    // only guards 0/0 for columns that already collapsed.
    for (const Tensor& vi : v) {
      Tensor coef = divide(dot_rows(vi, u), add_scalar(dot_rows(vi, vi), epsilon * epsilon));
      residual = sub(residual, scale_rows(vi, coef));
    }
    Tensor inv_norm = reciprocal(add_scalar(norm_rows(residual), epsilon));
    v.push_back(scale_rows(residual, inv_norm));
  }
  return v;
}

Tensor ortho_penalty(const std::vector<Tensor>& columns, double epsilon) {
  if (columns.empty()) throw std::invalid_argument("ortho_penalty: empty stack");
  const std::size_t batch = columns[0].numel() / columns[0].shape().back();
  std::vector<Tensor> unit;
  unit.reserve(columns.size());
  for (const Tensor& u : columns) {
    unit.push_back(scale_rows(u, reciprocal(add_scalar(norm_rows(u), epsilon))));
  }
  Tensor acc = Tensor::zeros({1});
  for (std::size_t i = 0; i < unit.size(); ++i) {
    for (std::size_t j = 0; j < unit.size(); ++j) {
      Tensor gram = dot_rows(unit[i], unit[j]);  // [B]
      if (i == j) gram = add_scalar(gram, -1.0);
      acc = add(acc, sum(mul(gram, gram)));
    }
  }
  return scale(acc, 1.0 / static_cast<double>(batch));
}

Tensor load_balance_loss(const Tensor& weights) {
  if (weights.ndim() != 2) {
    throw std::invalid_argument("load_balance_loss: expected [B,K], got " + shape_str(weights.shape()));
  }
  const std::size_t batch = weights.dim(0), k = weights.dim(1);
  const auto hard = argmax_rows(weights);
  std::vector<double> fractions(k, 0.0);
  for (std::size_t pick : hard) fractions[pick] += 1.0 / static_cast<double>(batch);
  // f is treated as a constant; gradient flows through the mean weights P.
  Tensor f = Tensor::from_data({k}, std::move(fractions));
  Tensor p = mean_axis0(weights);
  return scale(sum(mul(f, p)), static_cast<double>(k));
}

double TemperatureController::update(double observed_entropy, std::int64_t step, std::size_t num_experts) {
  const double target =
      target_entropy > 0.0 ? target_entropy : 0.5 * std::log(static_cast<double>(std::max<std::size_t>(num_experts, 2)));
  const double freeze_until = freeze_fraction * static_cast<double>(total_steps);
  if (static_cast<double>(step) < freeze_until) {
    tau = tau_init;
    return tau;
  }
  tau = std::clamp(tau - beta * (observed_entropy - target), tau_min, tau_max);
  return tau;
}

MoEBlock::MoEBlock(const MoEConfig& config, Rng& rng) : config_(config) {
  if (config.num_experts == 0) throw std::invalid_argument("MoEBlock: need at least one expert");
  if (config.ortho_mode == OrthoMode::gram_schmidt && config.feature_dim < config.num_experts) {
    throw std::invalid_argument("MoEBlock: feature dim " + std::to_string(config.feature_dim) +
                                " < expert count " + std::to_string(config.num_experts) +
                                "; columns cannot be independent");
  }
  if (config.num_experts > 1) {
    // stored [context_dim, K] so the bias-free gate is a single matmul
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.context_dim));
    std::vector<double> gw(config.context_dim * config.num_experts);
    for (double& v : gw) v = rng.uniform(-bound, bound);
    gate_weight = Tensor::from_data({config.context_dim, config.num_experts}, std::move(gw), true);
  }
  for (std::size_t k = 0; k < config.num_experts; ++k) {
    trunk_l0.emplace_back(config.input_dim, config.hidden_dim, Activation::mish);
    trunk_l0.back().init(rng);
    trunk_l1.emplace_back(config.hidden_dim, config.feature_dim, Activation::mish);
    trunk_l1.back().init(rng);
  }
  if (config.use_head) {
    head = NormedLinear(config.feature_dim, config.out_dim, config.head_activation, 0.0, config.simnorm);
    head.init(rng);
  }
}

GateOutput MoEBlock::gate_weights(const Tensor& context, double tau, Rng* rng) const {
  if (tau <= 0.0) throw std::invalid_argument("gate_weights: tau must be positive, got " + std::to_string(tau));
  const std::size_t batch = context.dim(0);
  GateOutput out;
  if (!gate_weight.defined()) {
    // single-expert block: weight 1 on the sole expert
    out.logits = Tensor::zeros({batch, 1});
    out.weights = Tensor::full({batch, 1}, 1.0);
    out.entropy = Tensor::zeros({batch});
    return out;
  }
  out.logits = matmul(context, gate_weight);
  Tensor scaled = scale(out.logits, 1.0 / tau);
  if (config_.gumbel_noise) {
    if (rng == nullptr) throw std::invalid_argument("gate_weights: gumbel routing needs an rng");
    std::vector<double> noise(scaled.numel());
    for (double& v : noise) {
      double u;
      do {
        u = rng->uniform();
      } while (u <= 0.0);
      v = -std::log(-std::log(u));
    }
    scaled = add(scaled, Tensor::from_data(scaled.shape(), std::move(noise)));
  }
  out.weights = softmax_last(scaled);
  out.entropy = negate(dot_rows(out.weights, log_softmax_last(scaled)));
  return out;
}

std::vector<Tensor> MoEBlock::expert_stack(const Tensor& x) const {
  std::vector<Tensor> columns;
  columns.reserve(config_.num_experts);
  for (std::size_t k = 0; k < config_.num_experts; ++k) {
    columns.push_back(trunk_l1[k].forward(trunk_l0[k].forward(x)));
  }
  return columns;
}

MoEBlock::ForwardResult MoEBlock::forward(const Tensor& z, const Tensor& context, const Tensor& x, double tau,
                                          Rng* rng) const {
  ForwardResult result;
  result.gate = gate_weights(context, tau, rng);
  result.stack = expert_stack(x);
  const std::vector<Tensor>& mix_source =
      config_.ortho_mode == OrthoMode::gram_schmidt ? gram_schmidt(result.stack, config_.epsilon) : result.stack;

  Tensor mixture;
  for (std::size_t k = 0; k < config_.num_experts; ++k) {
    Tensor term = scale_rows(mix_source[k], slice_last(result.gate.weights, k, 1));
    mixture = k == 0 ? term : add(mixture, term);
  }

  Tensor pre_head = config_.residual ? add(z, mixture) : mixture;
  result.output = config_.use_head ? head.forward(pre_head) : pre_head;
  return result;
}

void MoEBlock::collect_params(const std::string& prefix, ParamList& out) const {
  if (gate_weight.defined()) out.push_back({prefix + ".gate", gate_weight});
  for (std::size_t k = 0; k < config_.num_experts; ++k) {
    trunk_l0[k].collect_params(prefix + ".expert" + std::to_string(k) + ".l0", out);
    trunk_l1[k].collect_params(prefix + ".expert" + std::to_string(k) + ".l1", out);
  }
  if (config_.use_head) head.collect_params(prefix + ".head", out);
}

std::size_t MoEBlock::num_params() const {
  std::size_t n = gate_weight.defined() ? gate_weight.numel() : 0;
  for (std::size_t k = 0; k < config_.num_experts; ++k) n += trunk_l0[k].num_params() + trunk_l1[k].num_params();
  if (config_.use_head) n += head.num_params();
  return n;
}

}  // namespace prism
