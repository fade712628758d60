#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "prism/bins.hpp"
#include "prism/moe.hpp"
#include "prism/nn.hpp"
#include "prism/planner.hpp"
#include "prism/policy_trainer.hpp"

namespace prism {

struct WorldModelConfig {
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  std::size_t num_tasks = 0;  // 0 -> single-task, no embedding

  std::size_t latent_dim = 512;
  std::size_t encoder_dim = 256;
  std::size_t mlp_dim = 512;
  std::size_t task_emb_dim = 96;
  std::size_t num_experts = 4;
  OrthoMode ortho_mode = OrthoMode::gram_schmidt;
  bool monolithic = false;          // single expert, no gate
  std::size_t monolithic_hidden = 0;  // trunk hidden width when monolithic
  bool dynamics_head = true;        // false -> bare-residual ablation
  bool gumbel_noise = false;

  std::size_t num_bins = 101;
  double bin_support = 10.0;  // symlog-space half-range
  std::size_t num_q = 5;
  double q_dropout = 0.01;
  std::size_t simnorm_group = 8;
  double simnorm_temp = 1.0;
  double log_std_min = -10.0;
  double log_std_max = 2.0;

  double discount = 0.99;
  double joint_coef = 20.0;
  double reward_coef = 0.1;
  double value_coef = 0.1;
  double temporal_lambda = 0.5;
  double alpha_lb = 0.03;
  double lambda_ortho = 0.05;
  double q_target_momentum = 0.99;

  std::uint64_t seed = 0;
};

struct ModelBatch {
  std::vector<Tensor> obs;      // H+1 tensors [B, obs_dim]
  std::vector<Tensor> actions;  // H tensors [B, act_dim]
  std::vector<Tensor> rewards;  // H tensors [B]
  std::vector<std::vector<double>> not_done;  // H x B, 0 where the step terminated
  std::vector<std::size_t> task_ids;          // B (empty in single-task mode)
  std::vector<std::vector<int>> mode_labels;  // H x B, diagnostics only

  std::size_t horizon() const { return actions.size(); }
  std::size_t batch_size() const { return obs.empty() ? 0 : obs[0].dim(0); }
};

struct DynamicsOutput {
  Tensor z_next;
  GateOutput gate;
  std::vector<Tensor> stack;
};

struct RewardOutput {
  Tensor logits;  // [B, num_bins]
  Tensor value;   // [B], symexp expectation
  GateOutput gate;
  std::vector<Tensor> stack;
};

struct LossDiagnostics {
  double total = 0.0;
  double consistency = 0.0;
  double reward_ce = 0.0;
  double value_ce = 0.0;
  double load_balance = 0.0;
  double ortho = 0.0;
  double gate_entropy = 0.0;            // dynamics gate, mean over batch and steps
  std::vector<double> expert_usage;     // argmax fractions of the dynamics gate
};

// Pinned targets for gradient checks: without them the finite-difference
// probe would differentiate through the stop-gradient terms.
struct ModelLossTargets {
  std::vector<Tensor> encoded_next;   // H tensors [B, latent]
  std::vector<Tensor> td_two_hot;     // H tensors [B, num_bins]
};

// Encoder + MoE dynamics + binned MoE reward + Q ensemble + policy prior +
// task embeddings, with the model objective and target-network updates.
class WorldModel : public ImaginationModel {
public:
  explicit WorldModel(const WorldModelConfig& config);

  const WorldModelConfig& config() const { return config_; }
  std::size_t latent_dim() const override { return config_.latent_dim; }
  std::size_t action_dim() const override { return config_.act_dim; }
  bool multi_task() const { return config_.num_tasks > 0; }

  // Deterministic latent on the SimNorm simplex. Multi-task mode prepends
  // the task embedding to the observation.
  Tensor encode(const Tensor& obs, const std::vector<std::size_t>& task_ids = {}) const;

  DynamicsOutput predict_next(const Tensor& z, const Tensor& a, const std::vector<std::size_t>& task_ids = {},
                              double tau = 0.0, Rng* gumbel_rng = nullptr) const;
  RewardOutput predict_reward(const Tensor& z, const Tensor& a, const std::vector<std::size_t>& task_ids = {},
                              double tau = 0.0, Rng* gumbel_rng = nullptr) const;

  // Per-head decoded values; eval mode (no dropout).
  std::vector<Tensor> q_values(const Tensor& z, const Tensor& a, const std::vector<std::size_t>& task_ids = {}) const;
  std::vector<Tensor> q_logits(const Tensor& z, const Tensor& a, const std::vector<std::size_t>& task_ids,
                               bool training, Rng* dropout_rng) const;
  // Min of two target heads drawn by `rng` (pair shared across the batch).
  Tensor target_value(const Tensor& z, const Tensor& a, Rng& rng,
                      const std::vector<std::size_t>& task_ids = {}) const;

  PolicySample policy_sample(const Tensor& z, Rng& rng, bool deterministic = false,
                             const std::vector<std::size_t>& task_ids = {}) const;

  Tensor model_loss(const ModelBatch& batch, double tau, Rng& rng, LossDiagnostics* diag = nullptr,
                    bool training = true, const ModelLossTargets* pinned = nullptr,
                    ModelLossTargets* capture = nullptr);

  void soft_update_targets();
  void clip_task_embeddings();

  // Parameter groups. model_parameters excludes the policy; lr scales align
  // with model_parameters and apply the reduced encoder learning rate.
  ParamList model_parameters() const;
  ParamList policy_parameters() const;
  ParamList all_parameters() const;  // includes target heads, for checkpoints
  std::vector<double> encoder_lr_scales(double encoder_lr, double base_lr) const;
  std::size_t dynamics_reward_params() const { return dynamics.num_params() + reward.num_params(); }

  // ImaginationModel surface (single-task binding unless imagination_tasks set)
  Tensor dynamics_step(const Tensor& z, const Tensor& a) override;
  Tensor reward_scalar(const Tensor& z, const Tensor& a) override;
  Tensor q_min_two(const Tensor& z, const Tensor& a, Rng& rng) override;
  Tensor target_min_two(const Tensor& z, const Tensor& a, Rng& rng) override;
  Tensor policy_input(const Tensor& z) override;
  ParamList frozen_parameters() override { return model_parameters(); }
  void bind_imagination_tasks(std::vector<std::size_t> task_ids) { imagination_tasks_ = std::move(task_ids); }

  MLP encoder;
  MoEBlock dynamics;
  MoEBlock reward;
  std::vector<MLP> qs;
  std::vector<MLP> target_qs;
  GaussianPolicy policy;
  Tensor task_embeddings;  // [num_tasks, task_emb_dim]
  BinCodec codec;
  double gate_tau = 1.8;  // gating temperature used at inference time

private:
  Tensor with_task(const Tensor& base, const std::vector<std::size_t>& task_ids) const;
  Tensor min_two(const std::vector<MLP>& heads, const Tensor& z, const Tensor& a,
                 const std::vector<std::size_t>& task_ids, Rng& rng) const;

  WorldModelConfig config_;
  std::vector<std::size_t> imagination_tasks_;
};

// Planner adapter over a frozen WorldModel: pure batched rollouts, no tape.
class WorldModelPlanner : public PlanningModel {
public:
  WorldModelPlanner(const WorldModel& model, std::uint64_t value_seed, std::size_t task_id = 0);

  std::size_t latent_dim() const override { return model_.latent_dim(); }
  std::size_t action_dim() const override { return model_.action_dim(); }
  void step(const std::vector<double>& z, const std::vector<double>& a, std::size_t batch,
            std::vector<double>& z_next, std::vector<double>& reward) override;
  void terminal_value(const std::vector<double>& z, std::size_t batch, std::vector<double>& value) override;
  void prior_sample(const std::vector<double>& z, std::size_t batch, Rng& rng, std::vector<double>& action) override;

private:
  std::vector<std::size_t> tasks_for(std::size_t batch) const;

  const WorldModel& model_;
  std::size_t task_id_;
  std::size_t head_a_, head_b_;  // target-head pair for this planner instance
};

}  // namespace prism
