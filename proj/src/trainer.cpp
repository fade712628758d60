#include "prism/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "prism/metrics.hpp"

namespace prism {

namespace {

struct ParamCounter {
  // NormedLinear: weight + bias + layer-norm affine
  static std::size_t normed(std::size_t in, std::size_t out) { return out * in + 3 * out; }
  static std::size_t trunk(std::size_t in, std::size_t hidden, std::size_t feat) {
    return normed(in, hidden) + normed(hidden, feat);
  }
};

std::vector<double> encode_single(const WorldModel& model, const std::vector<double>& obs, std::size_t task,
                                  std::size_t obs_dim) {
  NoGradGuard no_grad;
  Tensor o = Tensor::from_data({1, obs_dim}, std::vector<double>(obs));
  std::vector<std::size_t> ids;
  if (model.multi_task()) ids.assign(1, task);
  Tensor z = model.encode(o, ids);
  return {z.data().begin(), z.data().end()};
}

double exploration_std(const RunConfig& cfg, std::int64_t step) {
  const double half = 0.5 * static_cast<double>(cfg.total_steps);
  if (half <= 0.0 || static_cast<double>(step) >= half) return cfg.explore_std_final;
  const double frac = static_cast<double>(step) / half;
  return cfg.explore_std_init + frac * (cfg.explore_std_final - cfg.explore_std_init);
}

std::uint64_t planner_value_seed(std::uint64_t seed, std::uint64_t tag) {
  return Rng::splitmix(seed ^ (0x9e3779b97f4a7c15ULL * (tag + 1)));
}

}  // namespace

WorldModelConfig model_config_from(const RunConfig& cfg, std::size_t obs_dim, std::size_t act_dim) {
  WorldModelConfig mc;
  mc.obs_dim = obs_dim;
  mc.act_dim = act_dim;
  mc.num_tasks = static_cast<std::size_t>(cfg.num_tasks);
  mc.latent_dim = static_cast<std::size_t>(cfg.latent_dim);
  mc.encoder_dim = static_cast<std::size_t>(cfg.encoder_dim);
  mc.mlp_dim = static_cast<std::size_t>(cfg.mlp_dim);
  mc.task_emb_dim = static_cast<std::size_t>(cfg.task_emb_dim);
  mc.num_experts = static_cast<std::size_t>(cfg.experts);
  mc.num_bins = static_cast<std::size_t>(cfg.num_bins);
  mc.num_q = static_cast<std::size_t>(cfg.num_q);
  mc.q_dropout = cfg.q_dropout;
  mc.simnorm_group = static_cast<std::size_t>(cfg.simnorm_group);
  mc.simnorm_temp = cfg.simnorm_temp;
  mc.log_std_min = cfg.log_std_min;
  mc.log_std_max = cfg.log_std_max;
  mc.discount = cfg.discount;
  mc.joint_coef = cfg.joint_coef;
  mc.reward_coef = cfg.reward_coef;
  mc.value_coef = cfg.value_coef;
  mc.temporal_lambda = cfg.temporal_lambda;
  mc.alpha_lb = cfg.alpha_lb;
  mc.lambda_ortho = cfg.lambda_ortho;
  mc.q_target_momentum = cfg.q_momentum;
  mc.dynamics_head = cfg.dynamics_head;
  mc.gumbel_noise = cfg.gumbel_noise;
  mc.seed = cfg.seed;

  if (cfg.variant == "mlp_monolithic") {
    mc.monolithic = true;
    mc.monolithic_hidden = resolve_monolithic_width(cfg, obs_dim, act_dim);
    mc.ortho_mode = OrthoMode::none;
  } else if (cfg.variant == "moe_gs") {
    mc.ortho_mode = OrthoMode::gram_schmidt;
  } else if (cfg.variant == "moe_soft_penalty") {
    mc.ortho_mode = OrthoMode::soft_penalty;
  } else if (cfg.variant == "moe_plain") {
    mc.ortho_mode = OrthoMode::none;
  } else {
    throw ConfigError("config: unknown variant '" + cfg.variant + "'");
  }
  return mc;
}

std::size_t resolve_monolithic_width(const RunConfig& cfg, std::size_t obs_dim, std::size_t act_dim) {
  (void)obs_dim;
  const std::size_t latent = static_cast<std::size_t>(cfg.latent_dim);
  const std::size_t mlp = static_cast<std::size_t>(cfg.mlp_dim);
  const std::size_t bins = static_cast<std::size_t>(cfg.num_bins);
  const std::size_t k = static_cast<std::size_t>(cfg.experts);
  const std::size_t emb = cfg.num_tasks > 0 ? static_cast<std::size_t>(cfg.task_emb_dim) : 0;
  const std::size_t in = latent + act_dim + emb;

  const std::size_t dyn_head = cfg.dynamics_head ? ParamCounter::normed(latent, latent) : 0;
  const std::size_t rew_head_moe = ParamCounter::normed(mlp, bins);
  const std::size_t rew_head_mono = ParamCounter::normed(latent, bins);
  const std::size_t gate = k > 1 ? in * k : 0;
  const std::size_t moe_total =
      k * ParamCounter::trunk(in, mlp, latent) + gate + dyn_head +  // dynamics
      k * ParamCounter::trunk(in, mlp, mlp) + gate + rew_head_moe;  // reward

  auto mono_total = [&](std::size_t w) {
    return ParamCounter::trunk(in, w, latent) + dyn_head + ParamCounter::trunk(in, w, latent) + rew_head_mono;
  };

  std::size_t lo = 1, hi = 1;
  while (mono_total(hi) < moe_total && hi < (1u << 22)) hi *= 2;
  while (lo + 1 < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (mono_total(mid) < moe_total) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  const std::size_t width = (moe_total - mono_total(lo) <= mono_total(hi) - moe_total) ? lo : hi;
  const double rel = std::abs(static_cast<double>(mono_total(width)) - static_cast<double>(moe_total)) /
                     static_cast<double>(moe_total);
  if (rel > 0.05) {
    throw ConfigError("config: cannot parameter-match monolithic baseline within 5% (best width " +
                      std::to_string(width) + ", mismatch " + std::to_string(rel) + ")");
  }
  return width;
}

PlanConfig plan_config_from(const RunConfig& cfg) {
  PlanConfig pc;
  pc.horizon = static_cast<std::size_t>(cfg.plan_horizon);
  pc.iterations = static_cast<std::size_t>(cfg.plan_iterations);
  pc.population = static_cast<std::size_t>(cfg.plan_population);
  pc.elites = static_cast<std::size_t>(cfg.plan_elites);
  pc.policy_prior_samples = static_cast<std::size_t>(cfg.plan_prior_samples);
  pc.std_min = cfg.plan_std_min;
  pc.std_max = cfg.plan_std_max;
  pc.temperature = cfg.plan_temperature;
  pc.discount = cfg.discount;
  return pc;
}

std::vector<std::unique_ptr<Env>> make_task_envs(const RunConfig& cfg) {
  std::vector<std::unique_ptr<Env>> envs;
  if (cfg.num_tasks > 0) {
    if (cfg.env != "bouncing_ball") {
      throw ConfigError("config: multi-task mode is defined over the bouncing_ball family");
    }
    MultiTaskSet set = make_bouncing_ball_tasks();
    if (static_cast<std::size_t>(cfg.num_tasks) != set.envs.size()) {
      throw ConfigError("config: num_tasks must be " + std::to_string(set.envs.size()) +
                        " for the bouncing_ball family");
    }
    envs = std::move(set.envs);
  } else {
    envs.push_back(make_env(cfg.env));
  }
  return envs;
}

std::size_t episode_limit(const RunConfig& cfg, const Env& env) {
  return cfg.episode_length > 0 ? static_cast<std::size_t>(cfg.episode_length) : env.spec().max_steps;
}

double measure_random_return(const RunConfig& cfg, Rng& rng) {
  auto envs = make_task_envs(cfg);
  double total = 0.0;
  std::size_t episodes = 0;
  for (auto& env : envs) {
    for (std::int64_t e = 0; e < cfg.eval_episodes; ++e) {
      env->reset(rng);
      double ret = 0.0;
      const std::size_t limit = episode_limit(cfg, *env);
      for (std::size_t t = 0; t < limit; ++t) {
        std::vector<double> action(env->spec().act_dim);
        for (double& a : action) a = rng.uniform(-1.0, 1.0);
        StepResult sr = env->step(action);
        ret += sr.reward;
        if (sr.done) break;
      }
      total += ret;
      ++episodes;
    }
  }
  return total / static_cast<double>(episodes);
}

double evaluate_policy(WorldModel& model, const RunConfig& cfg, Rng& rng) {
  auto envs = make_task_envs(cfg);
  const PlanConfig pc = plan_config_from(cfg);
  double total = 0.0;
  std::size_t episodes = 0;
  for (std::size_t task = 0; task < envs.size(); ++task) {
    Env& env = *envs[task];
    for (std::int64_t e = 0; e < cfg.eval_episodes; ++e) {
      std::vector<double> obs = env.reset(rng);
      Rng plan_rng = rng.fork(1000 + episodes);
      double ret = 0.0;
      std::vector<std::vector<double>> prev;
      bool has_prev = false;
      const std::size_t limit = episode_limit(cfg, env);
      for (std::size_t t = 0; t < limit; ++t) {
        const std::vector<double> z = encode_single(model, obs, task, env.spec().obs_dim);
        WorldModelPlanner adapter(model, planner_value_seed(cfg.seed, 7777 + t), task);
        PlanResult res = plan(z, adapter, pc, plan_rng, has_prev ? &prev : nullptr);
        prev = res.mean;
        has_prev = true;
        StepResult sr = env.step(res.action);
        ret += sr.reward;
        obs = sr.obs;
        if (sr.done) break;
      }
      total += ret;
      ++episodes;
    }
  }
  return total / static_cast<double>(episodes);
}

std::vector<std::string> model_module_names(const WorldModel& model) {
  std::vector<std::string> names = {"encoder", "dynamics", "reward", "q_ensemble", "target_q_ensemble", "policy"};
  if (model.multi_task()) names.push_back("task_embeddings");
  return names;
}

void save_model_checkpoint(const std::string& path, const WorldModel& model, const RunConfig& cfg,
                           std::int64_t train_steps) {
  ParamList params = model.all_parameters();
  CheckpointData data =
      checkpoint_from_params(params, model_module_names(model), cfg.dump(), model.gate_tau, train_steps);
  save_checkpoint(path, data);
}

std::unique_ptr<WorldModel> model_from_checkpoint(const std::string& path, RunConfig* config_out,
                                                  CheckpointData* raw_out) {
  CheckpointData data = load_checkpoint(path);
  RunConfig cfg = RunConfig::parse_text(data.config_text);
  auto envs = make_task_envs(cfg);
  WorldModelConfig mc = model_config_from(cfg, envs[0]->spec().obs_dim, envs[0]->spec().act_dim);
  auto model = std::make_unique<WorldModel>(mc);
  ParamList params = model->all_parameters();
  apply_checkpoint(data, params);
  model->gate_tau = data.gate_tau;
  if (config_out != nullptr) *config_out = cfg;
  if (raw_out != nullptr) *raw_out = std::move(data);
  return model;
}

TrainResult cmd_train(const RunConfig& cfg) {
  cfg.validate();
  std::filesystem::create_directories(cfg.out_dir);

  auto envs = make_task_envs(cfg);
  const std::size_t obs_dim = envs[0]->spec().obs_dim;
  const std::size_t act_dim = envs[0]->spec().act_dim;
  WorldModelConfig mc = model_config_from(cfg, obs_dim, act_dim);
  WorldModel model(mc);

  AdamState model_adam;
  model_adam.learning_rate = cfg.lr;
  model_adam.lr_scale = model.encoder_lr_scales(cfg.encoder_lr, cfg.lr);
  AdamState policy_adam;
  policy_adam.learning_rate = cfg.policy_lr;

  TemperatureController controller;
  controller.tau = cfg.tau_init;
  controller.tau_init = cfg.tau_init;
  controller.tau_min = cfg.tau_min;
  controller.tau_max = cfg.tau_max;
  controller.beta = cfg.tau_beta;
  controller.freeze_fraction = cfg.freeze_fraction;
  controller.target_entropy = cfg.target_entropy;
  controller.total_steps = cfg.total_steps;
  model.gate_tau = controller.tau;

  PolicyTrainConfig pcfg;
  pcfg.horizon = static_cast<std::size_t>(cfg.policy_horizon);
  pcfg.entropy_coef = cfg.entropy_coef;
  pcfg.grad_clip = cfg.grad_clip;
  pcfg.discount = cfg.discount;
  pcfg.objective = cfg.policy_objective == "q_value" ? PolicyObjective::q_value : PolicyObjective::imagined_return;

  const PlanConfig pc = plan_config_from(cfg);
  ReplayBuffer buffer(static_cast<std::size_t>(cfg.buffer_capacity));

  Rng root(cfg.seed);
  Rng reset_rng = root.fork("env_reset");
  Rng explore_rng = root.fork("explore");
  Rng sample_rng = root.fork("buffer_sample");
  Rng plan_rng = root.fork("plan");
  Rng loss_rng = root.fork("model_loss");
  Rng policy_rng = root.fork("policy_train");
  Rng random_rng = root.fork("random_baseline");
  Rng eval_rng = root.fork("eval");

  const double random_return = measure_random_return(cfg, random_rng);

  MetricsLog metrics(cfg.out_dir + "/metrics.csv", model.dynamics.num_experts());
  std::ofstream latency(cfg.out_dir + "/latency.csv");
  latency << "step,plan_ms\n";

  std::size_t task = 0;
  Env* env = envs[task].get();
  std::vector<double> obs = env->reset(reset_rng);
  buffer.begin_episode(task);
  double episode_return = 0.0;
  std::size_t episode_steps = 0;
  double last_episode_return = 0.0;
  bool has_episode = false;
  std::vector<std::vector<double>> prev_plan;
  bool has_prev_plan = false;
  std::int64_t update_count = 0;
  double final_eval = 0.0;

  for (std::int64_t step = 0; step < cfg.total_steps; ++step) {
    std::vector<double> action(act_dim);
    double plan_ms = 0.0;
    if (step < cfg.seed_steps) {
      for (double& a : action) a = explore_rng.uniform(-1.0, 1.0);
    } else {
      const std::vector<double> z = encode_single(model, obs, task, obs_dim);
      WorldModelPlanner adapter(model, planner_value_seed(cfg.seed, static_cast<std::uint64_t>(step)), task);
      const auto t0 = std::chrono::steady_clock::now();
      PlanResult res = plan(z, adapter, pc, plan_rng, has_prev_plan ? &prev_plan : nullptr);
      plan_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      prev_plan = res.mean;
      has_prev_plan = true;
      const double noise_std = exploration_std(cfg, step);
      for (std::size_t a = 0; a < act_dim; ++a) {
        action[a] = std::clamp(res.action[a] + noise_std * explore_rng.normal(), -1.0, 1.0);
      }
    }

    StepResult sr = env->step(action);
    episode_return += sr.reward;
    episode_steps += 1;
    buffer.add_step(obs, action, sr.reward, sr.done, sr.mode_label);
    obs = sr.obs;
    const bool truncated = episode_steps >= episode_limit(cfg, *env);
    if (sr.done || truncated) {
      buffer.end_episode(obs);
      last_episode_return = episode_return;
      has_episode = true;
      task = (task + 1) % envs.size();
      env = envs[task].get();
      obs = env->reset(reset_rng);
      buffer.begin_episode(task);
      episode_return = 0.0;
      episode_steps = 0;
      has_prev_plan = false;
    }

    LossDiagnostics diag;
    double grad_norm = 0.0;
    PolicyStepDiag pd;
    if (step >= cfg.seed_steps && buffer.num_valid_starts(static_cast<std::size_t>(cfg.horizon)) > 0) {
      for (std::int64_t u = 0; u < cfg.utd_ratio; ++u) {
        ModelBatch batch =
            buffer.sample(static_cast<std::size_t>(cfg.batch_size), static_cast<std::size_t>(cfg.horizon), sample_rng);
        try {
          {
            Tape tape;
            Tensor loss = model.model_loss(batch, controller.tau, loss_rng, &diag, true);
            tape.backward(loss);
          }
          ParamList params = model.model_parameters();
          grad_norm = adam_step(params, model_adam, cfg.grad_clip);
        } catch (const std::runtime_error& err) {
          std::ofstream snap(cfg.out_dir + "/divergence.txt");
          snap << "step " << step << "\n" << err.what() << "\n";
          throw DivergenceError(err.what());
        }
        model.clip_task_embeddings();
        model.soft_update_targets();
        update_count += 1;
        if (model.dynamics.has_gate()) {
          controller.update(diag.gate_entropy, update_count, model.dynamics.num_experts());
          model.gate_tau = controller.tau;
        }

        Tensor z0;
        {
          NoGradGuard no_grad;
          z0 = model.encode(batch.obs[0], batch.task_ids);
        }
        model.bind_imagination_tasks(batch.task_ids);
        try {
          pd = policy_step(z0, model, model.policy, policy_adam, pcfg, policy_rng);
        } catch (const std::runtime_error& err) {
          std::ofstream snap(cfg.out_dir + "/divergence.txt");
          snap << "policy step " << step << "\n" << err.what() << "\n";
          throw DivergenceError(err.what());
        }
      }
    }

    double eval_return = 0.0;
    bool has_eval = false;
    if (cfg.eval_interval > 0 && (step + 1) % cfg.eval_interval == 0) {
      eval_return = evaluate_policy(model, cfg, eval_rng);
      has_eval = true;
      final_eval = eval_return;
    }

    metrics.log_step(step, last_episode_return, has_episode, eval_return, has_eval, diag.total, diag.consistency,
                     diag.reward_ce, diag.value_ce, diag.load_balance, diag.ortho, diag.gate_entropy, controller.tau,
                     grad_norm, pd.loss, pd.mean_entropy, pd.grad_norm, diag.expert_usage);
    latency << step << "," << plan_ms << "\n";
  }

  if (cfg.eval_interval <= 0 || cfg.total_steps % cfg.eval_interval != 0) {
    final_eval = evaluate_policy(model, cfg, eval_rng);
  }

  TrainResult result;
  result.checkpoint_path = cfg.out_dir + "/model.ckpt";
  result.metrics_path = metrics.path();
  result.final_eval_return = final_eval;
  result.random_policy_return = random_return;
  result.trained_steps = cfg.total_steps;
  save_model_checkpoint(result.checkpoint_path, model, cfg, cfg.total_steps);
  return result;
}

}  // namespace prism
