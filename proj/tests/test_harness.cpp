#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "prism/checkpoint.hpp"
#include "prism/config.hpp"
#include "prism/experiments.hpp"
#include "prism/fast_model.hpp"
#include "prism/metrics.hpp"
#include "prism/trainer.hpp"

using namespace prism;

namespace {

std::filesystem::path temp_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() / ("prism_test_" + tag);
  std::filesystem::create_directories(dir);
  return dir;
}

RunConfig desk_config(const std::string& out) {
  RunConfig cfg;
  cfg.out_dir = out;
  cfg.latent_dim = 32;
  cfg.encoder_dim = 32;
  cfg.mlp_dim = 32;
  cfg.batch_size = 16;
  cfg.total_steps = 120;
  cfg.seed_steps = 60;
  cfg.eval_interval = 60;
  cfg.eval_episodes = 1;
  cfg.episode_length = 40;
  cfg.experts = 2;
  cfg.plan_population = 16;
  cfg.plan_elites = 4;
  cfg.plan_prior_samples = 4;
  cfg.plan_iterations = 2;
  return cfg;
}

}  // namespace

TEST_CASE("config round trip and overrides") {
  RunConfig cfg;
  cfg.env = "switched_linear";
  cfg.experts = 6;
  cfg.lr = 0.00123;
  cfg.dynamics_head = false;
  const std::string text = cfg.dump();
  RunConfig parsed = RunConfig::parse_text(text);
  CHECK(parsed.dump() == text);

  parsed.apply_override("alpha_lb", "0.25");
  CHECK(parsed.alpha_lb == doctest::Approx(0.25));
  CHECK_THROWS_AS(parsed.apply_override("no_such_key", "1"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_text("latent_dim = twelve"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse_text("broken line without equals"), ConfigError);

  RunConfig bad;
  bad.variant = "mystery";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  RunConfig bad2;
  bad2.plan_elites = 4096;
  CHECK_THROWS_AS(bad2.validate(), ConfigError);

  // comments and blank lines parse fine
  RunConfig commented = RunConfig::parse_text("# comment\n\nexperts = 3 # trailing\n");
  CHECK(commented.experts == 3);
}

TEST_CASE("table 5 defaults") {
  RunConfig cfg;
  CHECK(cfg.experts == 4);
  CHECK(cfg.latent_dim == 512);
  CHECK(cfg.encoder_dim == 256);
  CHECK(cfg.mlp_dim == 512);
  CHECK(cfg.task_emb_dim == 96);
  CHECK(cfg.num_bins == 101);
  CHECK(cfg.num_q == 5);
  CHECK(cfg.q_dropout == doctest::Approx(0.01));
  CHECK(cfg.simnorm_group == 8);
  CHECK(cfg.simnorm_temp == doctest::Approx(1.0));
  CHECK(cfg.tau_init == doctest::Approx(1.8));
  CHECK(cfg.tau_min == doctest::Approx(0.5));
  CHECK(cfg.tau_max == doctest::Approx(2.0));
  CHECK(cfg.tau_beta == doctest::Approx(0.02));
  CHECK(cfg.freeze_fraction == doctest::Approx(0.05));
  CHECK(cfg.alpha_lb == doctest::Approx(0.03));
  CHECK(cfg.lambda_ortho == doctest::Approx(0.05));
  CHECK(cfg.batch_size == 256);
  CHECK(cfg.joint_coef == doctest::Approx(20.0));
  CHECK(cfg.reward_coef == doctest::Approx(0.1));
  CHECK(cfg.value_coef == doctest::Approx(0.1));
  CHECK(cfg.temporal_lambda == doctest::Approx(0.5));
  CHECK(cfg.q_momentum == doctest::Approx(0.99));
  CHECK(cfg.entropy_coef == doctest::Approx(1e-4));
  CHECK(cfg.lr == doctest::Approx(3e-4));
  CHECK(cfg.encoder_lr == doctest::Approx(1e-4));
  CHECK(cfg.grad_clip == doctest::Approx(20.0));
  CHECK(cfg.utd_ratio == 1);
  CHECK(cfg.buffer_capacity == 1000000);
  CHECK(cfg.plan_horizon == 3);
  CHECK(cfg.plan_iterations == 6);
  CHECK(cfg.plan_population == 512);
  CHECK(cfg.plan_elites == 64);
  CHECK(cfg.plan_prior_samples == 24);
  CHECK(cfg.plan_std_min == doctest::Approx(0.05));
  CHECK(cfg.plan_std_max == doctest::Approx(2.0));
  CHECK(cfg.plan_temperature == doctest::Approx(0.5));
  CHECK(cfg.log_std_min == doctest::Approx(-10.0));
  CHECK(cfg.log_std_max == doctest::Approx(2.0));
}

TEST_CASE("monolithic width is parameter matched within 5 percent") {
  RunConfig cfg;
  cfg.latent_dim = 32;
  cfg.encoder_dim = 32;
  cfg.mlp_dim = 32;
  cfg.experts = 4;

  RunConfig mono = cfg;
  mono.variant = "mlp_monolithic";
  WorldModelConfig moe_mc = model_config_from(cfg, 2, 1);
  WorldModelConfig mono_mc = model_config_from(mono, 2, 1);
  WorldModel moe(moe_mc);
  WorldModel mlp(mono_mc);
  const double moe_params = static_cast<double>(moe.dynamics_reward_params());
  const double mono_params = static_cast<double>(mlp.dynamics_reward_params());
  CHECK(std::abs(mono_params - moe_params) / moe_params < 0.05);
  CHECK(mlp.dynamics.num_experts() == 1);
  CHECK_FALSE(mlp.dynamics.has_gate());
}

TEST_CASE("checkpoint round trip is byte exact") {
  const auto dir = temp_dir("ckpt");
  WorldModelConfig mc;
  mc.obs_dim = 2;
  mc.act_dim = 1;
  mc.latent_dim = 16;
  mc.encoder_dim = 16;
  mc.mlp_dim = 16;
  mc.simnorm_group = 4;
  mc.num_experts = 2;
  mc.seed = 3;
  WorldModel model(mc);
  RunConfig cfg = desk_config((dir / "run").string());
  cfg.env = "switched_linear";  // obs 2, act 1, matching the model dims
  cfg.latent_dim = 16;
  cfg.encoder_dim = 16;
  cfg.mlp_dim = 16;
  cfg.simnorm_group = 4;
  cfg.seed = 3;

  const std::string p1 = (dir / "a.ckpt").string();
  const std::string p2 = (dir / "b.ckpt").string();
  save_model_checkpoint(p1, model, cfg, 42);

  CheckpointData data = load_checkpoint(p1);
  CHECK(data.train_steps == 42);
  save_checkpoint(p2, data);

  std::ifstream f1(p1, std::ios::binary), f2(p2, std::ios::binary);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);
  CHECK(!c1.empty());

  // loaded model reproduces the forward pass exactly
  RunConfig cfg_out;
  auto restored = model_from_checkpoint(p1, &cfg_out);
  Rng rng(5);
  std::vector<double> obs{0.3, -0.7};
  Tensor o = Tensor::from_data({1, 2}, std::vector<double>(obs));
  Tensor z1 = model.encode(o);
  Tensor z2 = restored->encode(o);
  for (std::size_t i = 0; i < z1.numel(); ++i) CHECK(z1.at(i) == z2.at(i));
  CHECK(cfg_out.env == "switched_linear");
}

TEST_CASE("checkpoint error paths are distinct") {
  const auto dir = temp_dir("ckpt_err");
  // invalid magic
  const std::string bad = (dir / "bad.ckpt").string();
  {
    std::ofstream out(bad, std::ios::binary);
    out << "NOTPRISMXXXX";
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(bad), doctest::Contains("invalid checkpoint header"), CheckpointError);

  // truncated tensor payload
  WorldModelConfig mc;
  mc.obs_dim = 2;
  mc.act_dim = 1;
  mc.latent_dim = 8;
  mc.encoder_dim = 8;
  mc.mlp_dim = 8;
  mc.simnorm_group = 4;
  mc.num_experts = 2;
  WorldModel model(mc);
  RunConfig cfg = desk_config((dir / "run").string());
  const std::string full = (dir / "full.ckpt").string();
  save_model_checkpoint(full, model, cfg, 1);
  std::ifstream in(full, std::ios::binary);
  std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::string cut = (dir / "cut.ckpt").string();
  {
    std::ofstream out(cut, std::ios::binary);
    out.write(content.data(), static_cast<std::streamsize>(content.size() - 64));
  }
  CHECK_THROWS_WITH_AS(load_checkpoint(cut), doctest::Contains("truncated"), CheckpointError);

  // shape mismatch on apply
  CheckpointData data = load_checkpoint(full);
  data.shapes["encoder.l0.weight"] = {1, 1};
  data.tensors["encoder.l0.weight"] = {0.0};
  ParamList params = model.all_parameters();
  CHECK_THROWS_WITH_AS(apply_checkpoint(data, params), doctest::Contains("shape mismatch"), CheckpointError);
}

TEST_CASE("metrics log enforces increasing steps") {
  const auto dir = temp_dir("metrics");
  MetricsLog log((dir / "m.csv").string(), 2);
  log.log_step(0, 0, false, 0, false, 1, 1, 1, 1, 0, 0, 0.5, 1.8, 2.0, 0, 0, 0, {0.5, 0.5});
  log.log_step(1, -3, true, 0, false, 1, 1, 1, 1, 0, 0, 0.5, 1.8, 2.0, 0, 0, 0, {0.5, 0.5});
  CHECK_THROWS_AS(log.log_step(1, 0, false, 0, false, 1, 1, 1, 1, 0, 0, 0.5, 1.8, 2.0, 0, 0, 0, {}),
                  std::runtime_error);
  std::ifstream in((dir / "m.csv").string());
  std::string header;
  std::getline(in, header);
  CHECK(header.rfind("step,episode_return,eval_return,loss_total", 0) == 0);
}

TEST_CASE("fast model matches the float64 forward within float tolerance") {
  WorldModelConfig mc;
  mc.obs_dim = 2;
  mc.act_dim = 1;
  mc.latent_dim = 16;
  mc.encoder_dim = 16;
  mc.mlp_dim = 16;
  mc.simnorm_group = 4;
  mc.num_experts = 3;
  mc.seed = 11;
  WorldModel model(mc);
  FastWorldModel fast(model);

  Rng rng(13);
  const std::size_t batch = 8;
  std::vector<double> obs(batch * 2);
  for (double& v : obs) v = rng.uniform(-1.0, 1.0);
  std::vector<double> z_fast;
  fast.encode(obs, batch, z_fast);
  Tensor z64 = model.encode(Tensor::from_data({batch, 2}, std::vector<double>(obs)));
  for (std::size_t i = 0; i < z64.numel(); ++i) {
    CHECK(z_fast[i] == doctest::Approx(z64.at(i)).epsilon(5e-4));
  }

  std::vector<double> a(batch);
  for (double& v : a) v = rng.uniform(-1.0, 1.0);
  std::vector<double> zvec(z64.data().begin(), z64.data().end());
  std::vector<double> zn_fast, r_fast;
  fast.step(zvec, a, batch, zn_fast, r_fast);

  Tensor at = Tensor::from_data({batch, 1}, std::vector<double>(a));
  auto dyn = model.predict_next(z64, at);
  auto rew = model.predict_reward(z64, at);
  for (std::size_t i = 0; i < dyn.z_next.numel(); ++i) {
    CHECK(zn_fast[i] == doctest::Approx(dyn.z_next.at(i)).epsilon(2e-3));
  }
  for (std::size_t b = 0; b < batch; ++b) {
    CHECK(r_fast[b] == doctest::Approx(rew.value.at(b)).epsilon(5e-3));
  }

  std::vector<double> v_fast;
  fast.terminal_value(zvec, batch, v_fast);
  Rng det(0);
  Tensor action = model.policy_sample(z64, det, true).action;
  Tensor qa = model.codec.decode_logits(model.target_qs[0].forward(concat_last({z64, action})));
  Tensor qb = model.codec.decode_logits(model.target_qs[1].forward(concat_last({z64, action})));
  for (std::size_t b = 0; b < batch; ++b) {
    const double expected = std::min(qa.at(b), qb.at(b));
    CHECK(v_fast[b] == doctest::Approx(expected).epsilon(5e-3));
  }
}

TEST_CASE("tiny training run produces outputs and is deterministic") {
  const auto dir = temp_dir("train");
  RunConfig cfg = desk_config((dir / "a").string());
  cfg.seed = 5;
  TrainResult r1 = cmd_train(cfg);
  CHECK(std::filesystem::exists(r1.checkpoint_path));
  CHECK(std::filesystem::exists(r1.metrics_path));
  CHECK(r1.trained_steps == cfg.total_steps);

  cfg.out_dir = (dir / "b").string();
  TrainResult r2 = cmd_train(cfg);
  std::ifstream f1(r1.metrics_path), f2(r2.metrics_path);
  std::string c1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
  std::string c2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
  CHECK(c1 == c2);

  // exploration never leaves the action box: replay the stored trajectories
  // against the action bounds via the horizon tool input set
  RunConfig probe_cfg = cfg;
  probe_cfg.out_dir = (dir / "probe").string();
  std::filesystem::create_directories(probe_cfg.out_dir);
  auto rows = cmd_ablate_horizon(probe_cfg, {r1.checkpoint_path}, 5, (dir / "probe" / "h.csv").string());
  CHECK(rows.size() == 6);
  CHECK(rows[0].horizon == 0);
  CHECK(rows[0].latent_mse == 0.0);
  for (const auto& row : rows) CHECK(std::isfinite(row.latent_mse));
}

TEST_CASE("gate probe rejects monolithic checkpoints and marks one impulse") {
  const auto dir = temp_dir("probe2");
  RunConfig cfg = desk_config((dir / "run").string());
  cfg.variant = "mlp_monolithic";
  cfg.seed = 9;
  cfg.total_steps = 80;
  cfg.seed_steps = 70;
  TrainResult mono = cmd_train(cfg);
  RunConfig probe_cfg = cfg;
  CHECK_THROWS_WITH_AS(
      cmd_gate_probe(probe_cfg, mono.checkpoint_path, 10, 1.0, (dir / "p.csv").string()),
      doctest::Contains("no gate to probe"), std::runtime_error);

  cfg.variant = "moe_gs";
  cfg.out_dir = (dir / "moe").string();
  TrainResult moe = cmd_train(cfg);
  auto res = cmd_gate_probe(probe_cfg, moe.checkpoint_path, 10, 1.0, (dir / "p2.csv").string());
  CHECK(res.steps > 10);
  std::ifstream in((dir / "p2.csv").string());
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("step,w0,w1,gate_entropy,gate_argmax,mode_label,impulse", 0) == 0);
  std::size_t impulses = 0;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.size() >= 2 && line.compare(line.size() - 2, 2, ",1") == 0) ++impulses;
  }
  CHECK(impulses == 1);
}

TEST_CASE("export gates emits one simplex row per task") {
  const auto dir = temp_dir("gates");
  RunConfig cfg = desk_config((dir / "run").string());
  cfg.num_tasks = 9;
  cfg.total_steps = 100;
  cfg.seed_steps = 90;
  cfg.task_emb_dim = 8;
  TrainResult result = cmd_train(cfg);
  auto rows = cmd_export_gates(cfg, result.checkpoint_path, (dir / "g.csv").string());
  CHECK(rows.size() == 9);
  for (const auto& row : rows) {
    double s = 0.0;
    for (double w : row.mean_weights) {
      CHECK(w >= 0.0);
      s += w;
    }
    CHECK(std::abs(s - 1.0) < 1e-6);
  }
}
