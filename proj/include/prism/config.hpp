#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace prism {

// Flat key=value run configuration. Every field round-trips through the
// config file; unknown keys are a usage error.
struct RunConfig {
  std::string env = "bouncing_ball";
  std::string variant = "moe_gs";  // mlp_monolithic | moe_gs | moe_soft_penalty | moe_plain
  std::int64_t experts = 4;
  std::uint64_t seed = 0;
  std::int64_t total_steps = 20000;
  std::int64_t eval_interval = 2000;
  std::int64_t eval_episodes = 3;
  std::int64_t seed_steps = 500;
  std::int64_t episode_length = 0;  // 0 -> environment default
  std::string out_dir = "out";

  // architecture
  std::int64_t latent_dim = 512;
  std::int64_t encoder_dim = 256;
  std::int64_t mlp_dim = 512;
  std::int64_t task_emb_dim = 96;
  std::int64_t num_bins = 101;
  std::int64_t num_q = 5;
  double q_dropout = 0.01;
  std::int64_t simnorm_group = 8;
  double simnorm_temp = 1.0;
  bool dynamics_head = true;
  bool gumbel_noise = false;
  std::int64_t num_tasks = 0;

  // gating temperature controller
  double tau_init = 1.8;
  double tau_min = 0.5;
  double tau_max = 2.0;
  double tau_beta = 0.02;
  double freeze_fraction = 0.05;
  double target_entropy = 0.0;  // 0 -> 0.5 ln K

  // optimization
  std::int64_t batch_size = 256;
  double lr = 3e-4;
  double encoder_lr = 1e-4;
  double grad_clip = 20.0;
  std::int64_t horizon = 3;
  double joint_coef = 20.0;
  double reward_coef = 0.1;
  double value_coef = 0.1;
  double temporal_lambda = 0.5;
  double alpha_lb = 0.03;
  double lambda_ortho = 0.05;
  double q_momentum = 0.99;
  double discount = 0.99;
  std::int64_t utd_ratio = 1;
  std::int64_t buffer_capacity = 1000000;

  // policy prior training
  std::int64_t policy_horizon = 3;
  double entropy_coef = 1e-4;
  double policy_lr = 3e-4;
  std::string policy_objective = "q_value";  // q_value | imagined_return
  double log_std_min = -10.0;
  double log_std_max = 2.0;

  // planning
  std::int64_t plan_horizon = 3;
  std::int64_t plan_iterations = 6;
  std::int64_t plan_population = 512;
  std::int64_t plan_elites = 64;
  std::int64_t plan_prior_samples = 24;
  double plan_std_min = 0.05;
  double plan_std_max = 2.0;
  double plan_temperature = 0.5;

  // exploration noise annealed over the first half of training
  double explore_std_init = 0.5;
  double explore_std_final = 0.05;

  // benchmark
  std::int64_t bench_batch = 512;
  std::int64_t bench_forward_iters = 1000;
  std::int64_t bench_plan_iters = 1000;
  std::int64_t bench_warmup = 100;

  void validate() const;  // throws ConfigError on bad values
  std::string dump() const;
  void save(const std::string& path) const;

  static RunConfig parse_file(const std::string& path);
  static RunConfig parse_text(const std::string& text);
  void apply_override(const std::string& key, const std::string& value);
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace prism
