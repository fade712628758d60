#include "prism/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "prism/fast_model.hpp"

namespace prism {

namespace {

struct HeldOutSet {
  std::vector<std::vector<double>> obs;      // T+1 x [N * obs_dim], column n is trajectory n
  std::vector<std::vector<double>> actions;  // T x [N * act_dim]
  std::vector<std::vector<double>> rewards;  // T x [N]
  std::size_t count = 0;
};

// Random-action trajectories shared by every checkpoint under comparison.
HeldOutSet collect_heldout(const RunConfig& cfg, std::size_t num_trajectories, std::size_t length, Rng& rng) {
  auto env = make_env(cfg.env);
  const std::size_t obs_dim = env->spec().obs_dim;
  const std::size_t act_dim = env->spec().act_dim;
  HeldOutSet set;
  set.count = num_trajectories;
  set.obs.assign(length + 1, std::vector<double>(num_trajectories * obs_dim));
  set.actions.assign(length, std::vector<double>(num_trajectories * act_dim));
  set.rewards.assign(length, std::vector<double>(num_trajectories));
  for (std::size_t n = 0; n < num_trajectories; ++n) {
    std::vector<double> obs = env->reset(rng);
    for (std::size_t t = 0; t < length; ++t) {
      std::copy(obs.begin(), obs.end(), set.obs[t].begin() + static_cast<std::ptrdiff_t>(n * obs_dim));
      std::vector<double> action(act_dim);
      for (double& a : action) a = rng.uniform(-1.0, 1.0);
      std::copy(action.begin(), action.end(), set.actions[t].begin() + static_cast<std::ptrdiff_t>(n * act_dim));
      StepResult sr = env->step(action);
      set.rewards[t][n] = sr.reward;
      obs = sr.obs;
    }
    std::copy(obs.begin(), obs.end(), set.obs[length].begin() + static_cast<std::ptrdiff_t>(n * obs_dim));
  }
  return set;
}

double median(std::vector<double> values) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

double mean_of(const std::vector<double>& values) {
  double s = 0.0;
  for (double v : values) s += v;
  return values.empty() ? 0.0 : s / static_cast<double>(values.size());
}

}  // namespace

std::vector<HorizonRow> cmd_ablate_horizon(const RunConfig& cfg, const std::vector<std::string>& checkpoints,
                                           std::size_t max_horizon, const std::string& out_csv) {
  if (checkpoints.empty()) throw ConfigError("ablate-horizon: need at least one checkpoint");
  auto probe_env = make_env(cfg.env);
  const std::size_t obs_dim = probe_env->spec().obs_dim;
  const std::size_t act_dim = probe_env->spec().act_dim;

  std::size_t length = max_horizon + 30;
  const std::size_t limit = cfg.episode_length > 0 ? static_cast<std::size_t>(cfg.episode_length)
                                                   : probe_env->spec().max_steps;
  if (length > limit) {
    std::cerr << "ablate-horizon: horizon window " << length << " exceeds episode length " << limit
              << ", truncating\n";
    length = limit;
    if (max_horizon >= length) max_horizon = length - 1;
  }
  Rng heldout_rng = Rng(cfg.seed).fork("heldout");
  const std::size_t trajectories = (200 + (length - max_horizon) - 1) / (length - max_horizon) + 2;
  HeldOutSet set = collect_heldout(cfg, trajectories, length, heldout_rng);

  // start states: every index s with s + max_horizon <= length
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + max_horizon <= length - 1; ++s) starts.push_back(s);
  const std::size_t num_starts = starts.size() * set.count;

  std::vector<HorizonRow> rows;
  for (const auto& path : checkpoints) {
    RunConfig model_cfg;
    auto model = model_from_checkpoint(path, &model_cfg);
    NoGradGuard no_grad;

    // batch all (trajectory, start) pairs: row index = n * starts + s
    std::vector<double> z0(num_starts * obs_dim);
    std::size_t row = 0;
    for (std::size_t n = 0; n < set.count; ++n) {
      for (std::size_t s : starts) {
        for (std::size_t i = 0; i < obs_dim; ++i) z0[row * obs_dim + i] = set.obs[s][n * obs_dim + i];
        ++row;
      }
    }
    Tensor z = model->encode(Tensor::from_data({num_starts, obs_dim}, std::move(z0)));
    rows.push_back({model_cfg.variant, model_cfg.experts, model_cfg.seed, 0, 0.0, 0.0, num_starts});

    for (std::size_t h = 1; h <= max_horizon; ++h) {
      // actions and targets at offset h-1 / h for each start
      std::vector<double> a(num_starts * act_dim), target_obs(num_starts * obs_dim), true_r(num_starts);
      row = 0;
      for (std::size_t n = 0; n < set.count; ++n) {
        for (std::size_t s : starts) {
          const std::size_t t = s + h - 1;
          for (std::size_t i = 0; i < act_dim; ++i) a[row * act_dim + i] = set.actions[t][n * act_dim + i];
          for (std::size_t i = 0; i < obs_dim; ++i) target_obs[row * obs_dim + i] = set.obs[t + 1][n * obs_dim + i];
          true_r[row] = set.rewards[t][n];
          ++row;
        }
      }
      Tensor actions = Tensor::from_data({num_starts, act_dim}, std::move(a));
      Tensor reward_pred = model->predict_reward(z, actions).value;
      z = model->predict_next(z, actions).z_next;
      Tensor target = model->encode(Tensor::from_data({num_starts, obs_dim}, std::move(target_obs)));

      double latent_mse = 0.0, reward_mse = 0.0;
      const std::size_t latent = model->latent_dim();
      for (std::size_t r = 0; r < num_starts; ++r) {
        double sq = 0.0;
        for (std::size_t i = 0; i < latent; ++i) {
          const double d = z.at(r * latent + i) - target.at(r * latent + i);
          sq += d * d;
        }
        latent_mse += sq;
        const double dr = reward_pred.at(r) - true_r[r];
        reward_mse += dr * dr;
      }
      rows.push_back({model_cfg.variant, model_cfg.experts, model_cfg.seed, h,
                      latent_mse / static_cast<double>(num_starts), reward_mse / static_cast<double>(num_starts),
                      num_starts});
    }
  }

  if (!out_csv.empty()) {
    std::ofstream out(out_csv);
    out.precision(12);
    out << "variant,experts,seed,horizon,latent_mse,reward_mse,num_starts\n";
    for (const auto& r : rows) {
      out << r.variant << "," << r.experts << "," << r.seed << "," << r.horizon << "," << r.latent_mse << ","
          << r.reward_mse << "," << r.num_starts << "\n";
    }
  }
  return rows;
}

GateProbeResult cmd_gate_probe(const RunConfig& cfg, const std::string& checkpoint, std::size_t impulse_step,
                               double impulse_magnitude, const std::string& out_csv) {
  RunConfig model_cfg;
  auto model = model_from_checkpoint(checkpoint, &model_cfg);
  if (!model->dynamics.has_gate()) {
    throw std::runtime_error("gate-probe: no gate to probe (monolithic checkpoint)");
  }
  const std::size_t k = model->dynamics.num_experts();

  auto env = make_env(model_cfg.env);
  Rng root(cfg.seed);
  Rng reset_rng = root.fork("probe_reset");
  Rng plan_rng = root.fork("probe_plan");
  std::vector<double> obs = env->reset(reset_rng);
  const std::size_t obs_dim = env->spec().obs_dim;
  const PlanConfig pc = plan_config_from(model_cfg);

  const std::size_t steps = cfg.episode_length > 0 ? static_cast<std::size_t>(cfg.episode_length)
                                                   : std::min<std::size_t>(env->spec().max_steps, 200);

  std::ofstream out(out_csv);
  out.precision(10);
  out << "step";
  for (std::size_t i = 0; i < k; ++i) out << ",w" << i;
  out << ",gate_entropy,gate_argmax,mode_label,impulse\n";

  std::vector<std::vector<double>> prev;
  bool has_prev = false;
  std::size_t match_identity = 0, match_swapped = 0;
  GateProbeResult result;
  for (std::size_t t = 0; t < steps; ++t) {
    const bool impulse = t == impulse_step;
    if (impulse) env->perturb(impulse_magnitude);
    NoGradGuard no_grad;
    Tensor o = Tensor::from_data({1, obs_dim}, std::vector<double>(obs));
    Tensor z = model->encode(o);
    std::vector<double> zv(z.data().begin(), z.data().end());

    PlanResult plan_res = [&] {
      WorldModelPlanner adapter(*model, Rng::splitmix(cfg.seed + t));
      return plan(zv, adapter, pc, plan_rng, has_prev ? &prev : nullptr);
    }();
    prev = plan_res.mean;
    has_prev = true;

    Tensor a = Tensor::from_data({1, env->spec().act_dim}, std::vector<double>(plan_res.action));
    auto dyn = model->predict_next(z, a);
    const int mode_before = env->current_mode();
    StepResult sr = env->step(plan_res.action);

    const auto hard = argmax_rows(dyn.gate.weights);
    out << t;
    for (std::size_t i = 0; i < k; ++i) out << "," << dyn.gate.weights.at(i);
    out << "," << dyn.gate.entropy.at(0) << "," << hard[0] << "," << sr.mode_label << "," << (impulse ? 1 : 0) << "\n";
    (void)mode_before;
    if (static_cast<int>(hard[0]) == sr.mode_label) ++match_identity;
    if (k == 2 && static_cast<int>(1 - hard[0]) == sr.mode_label) ++match_swapped;
    result.steps = t + 1;
    obs = sr.obs;
    if (sr.done) break;
  }
  result.agreement_identity = static_cast<double>(match_identity) / static_cast<double>(result.steps);
  result.agreement_swapped = static_cast<double>(match_swapped) / static_cast<double>(result.steps);
  result.agreement_best = std::max(result.agreement_identity, k == 2 ? result.agreement_swapped : 0.0);
  result.csv_path = out_csv;
  out << "# agreement_identity=" << result.agreement_identity << " agreement_swapped=" << result.agreement_swapped
      << " agreement_best=" << result.agreement_best << "\n";
  return result;
}

double gate_mode_agreement(WorldModel& model, const RunConfig& cfg, std::size_t episodes, std::size_t episode_len,
                           Rng& rng) {
  auto env = make_env(cfg.env);
  const std::size_t obs_dim = env->spec().obs_dim;
  const std::size_t act_dim = env->spec().act_dim;
  NoGradGuard no_grad;
  std::size_t match_identity = 0, match_swapped = 0, total = 0;
  const std::size_t k = model.dynamics.num_experts();
  for (std::size_t e = 0; e < episodes; ++e) {
    std::vector<double> obs = env->reset(rng);
    for (std::size_t t = 0; t < episode_len; ++t) {
      std::vector<double> action(act_dim);
      for (double& a : action) a = rng.uniform(-1.0, 1.0);
      Tensor z = model.encode(Tensor::from_data({1, obs_dim}, std::vector<double>(obs)));
      Tensor at = Tensor::from_data({1, act_dim}, std::vector<double>(action));
      auto dyn = model.predict_next(z, at);
      const auto hard = argmax_rows(dyn.gate.weights);
      StepResult sr = env->step(action);
      if (static_cast<int>(hard[0]) == sr.mode_label) ++match_identity;
      if (k == 2 && static_cast<int>(1 - hard[0]) == sr.mode_label) ++match_swapped;
      ++total;
      obs = sr.obs;
      if (sr.done) break;
    }
  }
  const double identity = static_cast<double>(match_identity) / static_cast<double>(total);
  const double swapped = static_cast<double>(match_swapped) / static_cast<double>(total);
  return std::max(identity, k == 2 ? swapped : 0.0);
}

std::vector<BenchRow> cmd_bench(const RunConfig& cfg, const std::string& out_csv) {
  auto env = make_env(cfg.env);
  const std::size_t obs_dim = env->spec().obs_dim;
  const std::size_t act_dim = env->spec().act_dim;
  const std::size_t batch = static_cast<std::size_t>(cfg.bench_batch);

  struct VariantSpec {
    std::string variant;
    std::int64_t experts;
  };
  const std::vector<VariantSpec> variants = {
      {"mlp_monolithic", cfg.experts}, {"moe_gs", 2}, {"moe_gs", 4}, {"moe_gs", 6}};

  std::vector<BenchRow> rows;
  double mlp_plan_median = 0.0;
  for (const auto& v : variants) {
    RunConfig vcfg = cfg;
    vcfg.variant = v.variant;
    vcfg.experts = v.experts;
    WorldModelConfig mc = model_config_from(vcfg, obs_dim, act_dim);
    WorldModel model(mc);
    FastWorldModel fast(model);

    Rng rng(cfg.seed + 17);
    std::vector<float> z(batch * mc.latent_dim), a(batch * act_dim), zn(batch * mc.latent_dim);
    std::vector<float> r(batch);
    for (auto& x : z) x = static_cast<float>(rng.uniform(0.0, 0.25));
    for (auto& x : a) x = static_cast<float>(rng.uniform(-1.0, 1.0));

    for (std::int64_t i = 0; i < cfg.bench_warmup; ++i) fast.step_f32(z.data(), a.data(), batch, zn.data(), r.data());
    std::vector<double> forward_ms;
    forward_ms.reserve(static_cast<std::size_t>(cfg.bench_forward_iters));
    for (std::int64_t i = 0; i < cfg.bench_forward_iters; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      fast.step_f32(z.data(), a.data(), batch, zn.data(), r.data());
      forward_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }

    const PlanConfig pc = plan_config_from(vcfg);
    std::vector<double> z0(mc.latent_dim, 1.0 / static_cast<double>(mc.simnorm_group));
    Rng plan_rng(cfg.seed + 31);
    const std::int64_t plan_warmup = std::min<std::int64_t>(cfg.bench_warmup, 10);
    for (std::int64_t i = 0; i < plan_warmup; ++i) plan(z0, fast, pc, plan_rng);
    std::vector<double> plan_ms;
    plan_ms.reserve(static_cast<std::size_t>(cfg.bench_plan_iters));
    for (std::int64_t i = 0; i < cfg.bench_plan_iters; ++i) {
      const auto t0 = std::chrono::steady_clock::now();
      plan(z0, fast, pc, plan_rng);
      plan_ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
    }

    BenchRow row;
    row.variant = v.variant;
    row.experts = v.variant == "mlp_monolithic" ? 1 : v.experts;
    row.forward_ms_median = median(forward_ms);
    row.forward_ms_mean = mean_of(forward_ms);
    row.throughput_per_s = static_cast<double>(batch) / (row.forward_ms_median / 1000.0);
    row.plan_ms_median = median(plan_ms);
    row.plan_ms_mean = mean_of(plan_ms);
    if (v.variant == "mlp_monolithic") mlp_plan_median = row.plan_ms_median;
    rows.push_back(row);
  }
  for (auto& row : rows) {
    row.rel_plan_vs_mlp = mlp_plan_median > 0.0 ? row.plan_ms_median / mlp_plan_median : 1.0;
  }

  if (!out_csv.empty()) {
    std::ofstream out(out_csv);
    out.precision(8);
    out << "variant,experts,forward_ms_median,forward_ms_mean,throughput_per_s,plan_ms_median,plan_ms_mean,"
           "rel_plan_vs_mlp\n";
    for (const auto& row : rows) {
      out << row.variant << "," << row.experts << "," << row.forward_ms_median << "," << row.forward_ms_mean << ","
          << row.throughput_per_s << "," << row.plan_ms_median << "," << row.plan_ms_mean << ","
          << row.rel_plan_vs_mlp << "\n";
    }
  }
  return rows;
}

std::vector<GateExportRow> cmd_export_gates(const RunConfig& cfg, const std::string& checkpoint,
                                            const std::string& out_csv) {
  RunConfig model_cfg;
  auto model = model_from_checkpoint(checkpoint, &model_cfg);
  const std::size_t k = model->dynamics.num_experts();
  auto envs = make_task_envs(model_cfg);
  if (!model->multi_task()) {
    std::cerr << "export-gates: single-task checkpoint, exporting one row\n";
  }

  Rng rng = Rng(cfg.seed).fork("export_gates");
  const std::size_t states_per_task = 512;
  NoGradGuard no_grad;
  std::vector<GateExportRow> rows;
  for (std::size_t task = 0; task < envs.size(); ++task) {
    Env& env = *envs[task];
    const std::size_t obs_dim = env.spec().obs_dim;
    const std::size_t act_dim = env.spec().act_dim;
    std::vector<double> mean_w(k, 0.0);
    std::size_t seen = 0;
    std::vector<double> obs = env.reset(rng);
    while (seen < states_per_task) {
      std::vector<std::size_t> ids;
      if (model->multi_task()) ids.assign(1, task);
      Tensor z = model->encode(Tensor::from_data({1, obs_dim}, std::vector<double>(obs)), ids);
      Rng det(0);
      Tensor a = model->policy_sample(z, det, true, ids).action;
      auto dyn = model->predict_next(z, a, ids);
      for (std::size_t i = 0; i < k; ++i) mean_w[i] += dyn.gate.weights.at(i);
      ++seen;
      std::vector<double> action(act_dim);
      for (double& x : action) x = rng.uniform(-1.0, 1.0);
      StepResult sr = env.step(action);
      obs = sr.obs;
      if (sr.done || seen % 128 == 0) obs = env.reset(rng);
    }
    for (double& v : mean_w) v /= static_cast<double>(states_per_task);
    rows.push_back({task, mean_w});
  }

  if (!out_csv.empty()) {
    std::ofstream out(out_csv);
    out.precision(10);
    out << "task_id";
    for (std::size_t i = 0; i < k; ++i) out << ",w" << i;
    out << "\n";
    for (const auto& row : rows) {
      out << row.task_id;
      for (double v : row.mean_weights) out << "," << v;
      out << "\n";
    }
  }
  return rows;
}

}  // namespace prism
