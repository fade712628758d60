#include "prism/world_model.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace prism {

namespace {

MLPSpec q_head_spec(const WorldModelConfig& cfg, std::size_t input_dim) {
  MLPSpec spec;
  spec.widths = {input_dim, cfg.mlp_dim, cfg.mlp_dim, cfg.num_bins};
  spec.activations = {Activation::mish, Activation::mish, Activation::none};
  spec.dropouts = {cfg.q_dropout, 0.0, 0.0};
  spec.final_plain_linear = true;
  return spec;
}

}  // namespace

WorldModel::WorldModel(const WorldModelConfig& config)
    : codec(config.num_bins, config.bin_support), config_(config) {
  if (config.obs_dim == 0 || config.act_dim == 0) {
    throw std::invalid_argument("WorldModel: obs_dim and act_dim must be positive");
  }
  if (config.latent_dim % config.simnorm_group != 0) {
    throw std::invalid_argument("WorldModel: latent dim " + std::to_string(config.latent_dim) +
                                " not divisible by SimNorm group " + std::to_string(config.simnorm_group));
  }
  Rng rng(config.seed);
  const std::size_t emb = multi_task() ? config.task_emb_dim : 0;
  const SimNorm sn{config.simnorm_group, config.simnorm_temp};

  MLPSpec enc_spec;
  enc_spec.widths = {config.obs_dim + emb, config.encoder_dim, config.latent_dim};
  enc_spec.activations = {Activation::mish, Activation::simnorm};
  enc_spec.simnorm = sn;
  encoder = MLP(enc_spec);
  Rng enc_rng = rng.fork("encoder");
  encoder.init(enc_rng);

  const std::size_t dyn_in = config.latent_dim + config.act_dim + emb;
  const std::size_t experts = config.monolithic ? 1 : config.num_experts;
  const std::size_t hidden = config.monolithic && config.monolithic_hidden > 0 ? config.monolithic_hidden
                                                                               : config.mlp_dim;

  MoEConfig dyn_cfg;
  dyn_cfg.context_dim = dyn_in;
  dyn_cfg.input_dim = dyn_in;
  dyn_cfg.hidden_dim = hidden;
  dyn_cfg.feature_dim = config.latent_dim;
  dyn_cfg.out_dim = config.latent_dim;
  dyn_cfg.num_experts = experts;
  dyn_cfg.ortho_mode = config.monolithic ? OrthoMode::none : config.ortho_mode;
  dyn_cfg.head_activation = Activation::simnorm;
  dyn_cfg.residual = true;
  dyn_cfg.use_head = config.dynamics_head;
  dyn_cfg.gumbel_noise = config.gumbel_noise;
  dyn_cfg.simnorm = sn;
  Rng dyn_rng = rng.fork("dynamics");
  dynamics = MoEBlock(dyn_cfg, dyn_rng);

  MoEConfig rew_cfg = dyn_cfg;
  rew_cfg.feature_dim = config.monolithic ? config.latent_dim : config.mlp_dim;
  rew_cfg.out_dim = config.num_bins;
  rew_cfg.head_activation = Activation::mish;
  rew_cfg.residual = false;
  rew_cfg.use_head = true;
  Rng rew_rng = rng.fork("reward");
  reward = MoEBlock(rew_cfg, rew_rng);

  const std::size_t q_in = config.latent_dim + config.act_dim + emb;
  Rng q_rng = rng.fork("q_ensemble");
  for (std::size_t i = 0; i < config.num_q; ++i) {
    qs.emplace_back(q_head_spec(config, q_in));
    qs.back().init(q_rng);
  }
  for (std::size_t i = 0; i < config.num_q; ++i) {
    target_qs.emplace_back(q_head_spec(config, q_in));
    Rng scratch(0);
    target_qs.back().init(scratch);
    ParamList online, target;
    qs[i].collect_params("q", online);
    target_qs[i].collect_params("t", target);
    for (std::size_t p = 0; p < online.size(); ++p) {
      auto dst = target[p].tensor.raw_data();
      auto src = online[p].tensor.data();
      std::copy(src.begin(), src.end(), dst.begin());
      target[p].tensor.set_requires_grad(false);
    }
  }

  Rng pi_rng = rng.fork("policy");
  policy = GaussianPolicy(config.latent_dim + emb, config.mlp_dim, config.act_dim, pi_rng, config.log_std_min,
                          config.log_std_max);

  if (multi_task()) {
    Rng emb_rng = rng.fork("task_embeddings");
    std::vector<double> data(config.num_tasks * config.task_emb_dim);
    const double bound = 1.0 / std::sqrt(static_cast<double>(config.task_emb_dim));
    for (double& v : data) v = emb_rng.uniform(-bound, bound);
    task_embeddings = Tensor::from_data({config.num_tasks, config.task_emb_dim}, std::move(data), true);
    clip_task_embeddings();
  }
}

Tensor WorldModel::with_task(const Tensor& base, const std::vector<std::size_t>& task_ids) const {
  if (!multi_task()) return base;
  if (task_ids.size() != base.dim(0)) {
    throw std::invalid_argument("WorldModel: expected " + std::to_string(base.dim(0)) + " task ids, got " +
                                std::to_string(task_ids.size()));
  }
  return concat_last({base, embedding_lookup(task_embeddings, task_ids)});
}

Tensor WorldModel::encode(const Tensor& obs, const std::vector<std::size_t>& task_ids) const {
  if (obs.shape().back() != config_.obs_dim) {
    throw std::invalid_argument("encode: observation dim " + std::to_string(obs.shape().back()) + " != " +
                                std::to_string(config_.obs_dim));
  }
  return encoder.forward(with_task(obs, task_ids));
}

DynamicsOutput WorldModel::predict_next(const Tensor& z, const Tensor& a, const std::vector<std::size_t>& task_ids,
                                        double tau, Rng* gumbel_rng) const {
  if (a.shape().back() != config_.act_dim) {
    throw std::invalid_argument("predict_next: action dim " + std::to_string(a.shape().back()) + " != " +
                                std::to_string(config_.act_dim));
  }
  const Tensor context = with_task(concat_last({z, a}), task_ids);
  auto res = dynamics.forward(z, context, context, tau > 0.0 ? tau : gate_tau, gumbel_rng);
  return {res.output, res.gate, res.stack};
}

RewardOutput WorldModel::predict_reward(const Tensor& z, const Tensor& a, const std::vector<std::size_t>& task_ids,
                                        double tau, Rng* gumbel_rng) const {
  if (a.shape().back() != config_.act_dim) {
    throw std::invalid_argument("predict_reward: action dim mismatch");
  }
  const Tensor context = with_task(concat_last({z, a}), task_ids);
  auto res = reward.forward(z, context, context, tau > 0.0 ? tau : gate_tau, gumbel_rng);
  return {res.output, codec.decode_logits(res.output), res.gate, res.stack};
}

std::vector<Tensor> WorldModel::q_logits(const Tensor& z, const Tensor& a, const std::vector<std::size_t>& task_ids,
                                         bool training, Rng* dropout_rng) const {
  const Tensor input = with_task(concat_last({z, a}), task_ids);
  std::vector<Tensor> out;
  out.reserve(qs.size());
  for (const auto& head : qs) out.push_back(head.forward(input, training, dropout_rng));
  return out;
}

std::vector<Tensor> WorldModel::q_values(const Tensor& z, const Tensor& a,
                                         const std::vector<std::size_t>& task_ids) const {
  std::vector<Tensor> out;
  for (const auto& logits : q_logits(z, a, task_ids, false, nullptr)) out.push_back(codec.decode_logits(logits));
  return out;
}

Tensor WorldModel::min_two(const std::vector<MLP>& heads, const Tensor& z, const Tensor& a,
                           const std::vector<std::size_t>& task_ids, Rng& rng) const {
  const std::size_t n = heads.size();
  std::size_t i = static_cast<std::size_t>(rng.integer(n));
  std::size_t j = static_cast<std::size_t>(rng.integer(n - 1));
  if (j >= i) ++j;
  const Tensor input = with_task(concat_last({z, a}), task_ids);
  Tensor qi = codec.decode_logits(heads[i].forward(input));
  Tensor qj = codec.decode_logits(heads[j].forward(input));
  return minimum(qi, qj);
}

Tensor WorldModel::target_value(const Tensor& z, const Tensor& a, Rng& rng,
                                const std::vector<std::size_t>& task_ids) const {
  return min_two(target_qs, z, a, task_ids, rng);
}

PolicySample WorldModel::policy_sample(const Tensor& z, Rng& rng, bool deterministic,
                                       const std::vector<std::size_t>& task_ids) const {
  return policy.sample(with_task(z, task_ids), rng, deterministic);
}

Tensor WorldModel::model_loss(const ModelBatch& batch, double tau, Rng& rng, LossDiagnostics* diag, bool training,
                              const ModelLossTargets* pinned, ModelLossTargets* capture) {
  const std::size_t horizon = batch.horizon();
  if (horizon == 0) throw std::invalid_argument("model_loss: horizon must be >= 1");
  const std::size_t batch_size = batch.batch_size();
  const double inv_b = 1.0 / static_cast<double>(batch_size);
  const auto& ids = batch.task_ids;

  // Consistency targets: online encoder under stop-gradient.
  std::vector<Tensor> encoded_next;
  if (pinned != nullptr) {
    encoded_next = pinned->encoded_next;
  } else {
    NoGradGuard no_grad;
    for (std::size_t t = 0; t < horizon; ++t) encoded_next.push_back(encode(batch.obs[t + 1], ids));
  }

  Tensor z = encode(batch.obs[0], ids);
  Tensor total = Tensor::zeros({1});
  Tensor lb_acc = Tensor::zeros({1});
  Tensor ortho_acc = Tensor::zeros({1});
  double consistency_v = 0.0, reward_v = 0.0, value_v = 0.0, entropy_v = 0.0;
  std::vector<double> usage(dynamics.num_experts(), 0.0);
  double weight = 1.0;
  ModelLossTargets computed;

  for (std::size_t t = 0; t < horizon; ++t) {
    auto dyn = predict_next(z, batch.actions[t], ids, tau);
    auto rew = predict_reward(z, batch.actions[t], ids, tau);

    Tensor diff = sub(dyn.z_next, encoded_next[t]);
    Tensor consistency = scale(sum(mul(diff, diff)), inv_b);

    std::vector<double> reward_values(batch.rewards[t].data().begin(), batch.rewards[t].data().end());
    Tensor reward_target = codec.two_hot_rows(reward_values);
    Tensor reward_ce = codec.cross_entropy(rew.logits, reward_target);

    Tensor td_target;
    if (pinned != nullptr) {
      td_target = pinned->td_two_hot[t];
    } else {
      NoGradGuard no_grad;
      Tensor zn = stopgrad(dyn.z_next);
      Tensor next_action = policy_sample(zn, rng, true, ids).action;
      Tensor bootstrap = target_value(zn, next_action, rng, ids);
      std::vector<double> td(batch_size);
      for (std::size_t b = 0; b < batch_size; ++b) {
        td[b] = batch.rewards[t].at(b) +
                config_.discount * batch.not_done[t][b] * bootstrap.at(b);
      }
      td_target = codec.two_hot_rows(td);
    }
    if (capture != nullptr) {
      computed.encoded_next.push_back(encoded_next[t]);
      computed.td_two_hot.push_back(td_target);
    }

    Tensor value_ce = Tensor::zeros({1});
    auto heads = q_logits(z, batch.actions[t], ids, training, &rng);
    for (const auto& logits : heads) value_ce = add(value_ce, codec.cross_entropy(logits, td_target));
    value_ce = scale(value_ce, 1.0 / static_cast<double>(heads.size()));

    Tensor step_loss = add(add(scale(consistency, config_.joint_coef), scale(reward_ce, config_.reward_coef)),
                           scale(value_ce, config_.value_coef));
    total = add(total, scale(step_loss, weight));

    consistency_v += weight * config_.joint_coef * consistency.item();
    reward_v += weight * config_.reward_coef * reward_ce.item();
    value_v += weight * config_.value_coef * value_ce.item();

    if (dynamics.has_gate()) {
      lb_acc = add(lb_acc, scale(add(load_balance_loss(dyn.gate.weights), load_balance_loss(rew.gate.weights)), 0.5));
      entropy_v += dyn.gate.mean_entropy();
      const auto hard = argmax_rows(dyn.gate.weights);
      for (std::size_t pick : hard) usage[pick] += 1.0 / static_cast<double>(batch_size * horizon);
    }
    if (config_.ortho_mode == OrthoMode::soft_penalty && !config_.monolithic) {
      ortho_acc = add(ortho_acc, scale(add(ortho_penalty(dyn.stack), ortho_penalty(rew.stack)), 0.5));
    }

    z = dyn.z_next;
    weight *= config_.temporal_lambda;
  }

  double lb_v = 0.0, ortho_v = 0.0;
  if (dynamics.has_gate()) {
    Tensor lb_mean = scale(lb_acc, 1.0 / static_cast<double>(horizon));
    total = add(total, scale(lb_mean, config_.alpha_lb));
    lb_v = config_.alpha_lb * lb_mean.item();
  }
  if (config_.ortho_mode == OrthoMode::soft_penalty && !config_.monolithic) {
    Tensor ortho_mean = scale(ortho_acc, 1.0 / static_cast<double>(horizon));
    total = add(total, scale(ortho_mean, config_.lambda_ortho));
    ortho_v = config_.lambda_ortho * ortho_mean.item();
  }

  if (diag != nullptr) {
    diag->total = total.item();
    diag->consistency = consistency_v;
    diag->reward_ce = reward_v;
    diag->value_ce = value_v;
    diag->load_balance = lb_v;
    diag->ortho = ortho_v;
    diag->gate_entropy = dynamics.has_gate() ? entropy_v / static_cast<double>(horizon) : 0.0;
    diag->expert_usage = usage;
  }
  if (capture != nullptr) *capture = std::move(computed);

  if (!std::isfinite(total.item())) {
    std::ostringstream os;
    os << "model_loss: non-finite objective (consistency=" << consistency_v << ", reward_ce=" << reward_v
       << ", value_ce=" << value_v << ", load_balance=" << lb_v << ", ortho=" << ortho_v << ")";
    throw std::runtime_error(os.str());
  }
  return total;
}

void WorldModel::soft_update_targets() {
  const double m = config_.q_target_momentum;
  for (std::size_t i = 0; i < qs.size(); ++i) {
    ParamList online, target;
    qs[i].collect_params("q", online);
    target_qs[i].collect_params("t", target);
    for (std::size_t p = 0; p < online.size(); ++p) {
      auto dst = target[p].tensor.raw_data();
      auto src = online[p].tensor.data();
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] = m * dst[j] + (1.0 - m) * src[j];
    }
  }
}

void WorldModel::clip_task_embeddings() {
  if (!multi_task()) return;
  auto data = task_embeddings.raw_data();
  const std::size_t width = config_.task_emb_dim;
  for (std::size_t row = 0; row < config_.num_tasks; ++row) {
    double sq = 0.0;
    for (std::size_t i = 0; i < width; ++i) sq += data[row * width + i] * data[row * width + i];
    const double norm = std::sqrt(sq);
    if (norm > 1.0) {
      for (std::size_t i = 0; i < width; ++i) data[row * width + i] /= norm;
    }
  }
}

ParamList WorldModel::model_parameters() const {
  ParamList out;
  encoder.collect_params("encoder", out);
  dynamics.collect_params("dynamics", out);
  reward.collect_params("reward", out);
  for (std::size_t i = 0; i < qs.size(); ++i) qs[i].collect_params("q" + std::to_string(i), out);
  if (multi_task()) out.push_back({"task_embeddings", task_embeddings});
  return out;
}

ParamList WorldModel::policy_parameters() const {
  ParamList out;
  policy.collect_params("policy", out);
  return out;
}

ParamList WorldModel::all_parameters() const {
  ParamList out = model_parameters();
  ParamList pol = policy_parameters();
  out.insert(out.end(), pol.begin(), pol.end());
  for (std::size_t i = 0; i < target_qs.size(); ++i) {
    target_qs[i].collect_params("target_q" + std::to_string(i), out);
  }
  return out;
}

std::vector<double> WorldModel::encoder_lr_scales(double encoder_lr, double base_lr) const {
  ParamList params = model_parameters();
  std::vector<double> scales(params.size(), 1.0);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].name.rfind("encoder", 0) == 0) scales[i] = encoder_lr / base_lr;
  }
  return scales;
}

Tensor WorldModel::dynamics_step(const Tensor& z, const Tensor& a) {
  return predict_next(z, a, imagination_tasks_).z_next;
}

Tensor WorldModel::reward_scalar(const Tensor& z, const Tensor& a) {
  return predict_reward(z, a, imagination_tasks_).value;
}

Tensor WorldModel::q_min_two(const Tensor& z, const Tensor& a, Rng& rng) {
  return min_two(qs, z, a, imagination_tasks_, rng);
}

Tensor WorldModel::target_min_two(const Tensor& z, const Tensor& a, Rng& rng) {
  return min_two(target_qs, z, a, imagination_tasks_, rng);
}

Tensor WorldModel::policy_input(const Tensor& z) { return with_task(z, imagination_tasks_); }

WorldModelPlanner::WorldModelPlanner(const WorldModel& model, std::uint64_t value_seed, std::size_t task_id)
    : model_(model), task_id_(task_id) {
  Rng rng(value_seed);
  const std::size_t n = model.config().num_q;
  head_a_ = static_cast<std::size_t>(rng.integer(n));
  head_b_ = static_cast<std::size_t>(rng.integer(n - 1));
  if (head_b_ >= head_a_) ++head_b_;
}

std::vector<std::size_t> WorldModelPlanner::tasks_for(std::size_t batch) const {
  if (!model_.multi_task()) return {};
  return std::vector<std::size_t>(batch, task_id_);
}

void WorldModelPlanner::step(const std::vector<double>& z, const std::vector<double>& a, std::size_t batch,
                             std::vector<double>& z_next, std::vector<double>& reward) {
  NoGradGuard no_grad;
  Tensor zt = Tensor::from_data({batch, model_.latent_dim()}, std::vector<double>(z.begin(), z.begin() + batch * model_.latent_dim()));
  Tensor at = Tensor::from_data({batch, model_.action_dim()}, std::vector<double>(a.begin(), a.begin() + batch * model_.action_dim()));
  const auto ids = tasks_for(batch);
  Tensor zn = model_.predict_next(zt, at, ids).z_next;
  Tensor r = model_.predict_reward(zt, at, ids).value;
  z_next.assign(zn.data().begin(), zn.data().end());
  reward.assign(r.data().begin(), r.data().end());
}

void WorldModelPlanner::terminal_value(const std::vector<double>& z, std::size_t batch, std::vector<double>& value) {
  NoGradGuard no_grad;
  Tensor zt = Tensor::from_data({batch, model_.latent_dim()}, std::vector<double>(z.begin(), z.begin() + batch * model_.latent_dim()));
  const auto ids = tasks_for(batch);
  Rng unused(0);
  Tensor action = model_.policy_sample(zt, unused, true, ids).action;
  Tensor qa = model_.codec.decode_logits(model_.target_qs[head_a_].forward(
      model_.multi_task() ? concat_last({zt, action, embedding_lookup(model_.task_embeddings, ids)})
                          : concat_last({zt, action})));
  Tensor qb = model_.codec.decode_logits(model_.target_qs[head_b_].forward(
      model_.multi_task() ? concat_last({zt, action, embedding_lookup(model_.task_embeddings, ids)})
                          : concat_last({zt, action})));
  Tensor v = minimum(qa, qb);
  value.assign(v.data().begin(), v.data().end());
}

void WorldModelPlanner::prior_sample(const std::vector<double>& z, std::size_t batch, Rng& rng,
                                     std::vector<double>& action) {
  NoGradGuard no_grad;
  Tensor zt = Tensor::from_data({batch, model_.latent_dim()}, std::vector<double>(z.begin(), z.begin() + batch * model_.latent_dim()));
  Tensor a = model_.policy_sample(zt, rng, false, tasks_for(batch)).action;
  action.assign(a.data().begin(), a.data().end());
}

}  // namespace prism
