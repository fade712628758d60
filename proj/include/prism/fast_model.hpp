#pragma once

#include <vector>

#include "prism/planner.hpp"
#include "prism/world_model.hpp"

namespace prism {

namespace fast {

enum class Act { none, mish, simnorm };

// float32 snapshot of a NormedLinear (or plain Linear when has_norm=false).
struct Layer {
  std::size_t in = 0, out = 0;
  std::vector<float> w;  // [out, in]
  std::vector<float> b;
  std::vector<float> gain, shift;
  bool has_norm = true;
  Act act = Act::none;
  std::size_t group = 8;
  float inv_temp = 1.0f;

  void forward(const float* x, std::size_t batch, float* y) const;
};

}  // namespace fast

// Inference-only float32 copy of a WorldModel for the latency benchmark.
// Forward math mirrors the float64 path (gate softmax, Gram-Schmidt,
// residual head, two-hot decode) on packed float buffers.
class FastWorldModel : public PlanningModel {
public:
  explicit FastWorldModel(const WorldModel& model);

  std::size_t latent_dim() const override { return latent_; }
  std::size_t action_dim() const override { return act_; }

  void step(const std::vector<double>& z, const std::vector<double>& a, std::size_t batch,
            std::vector<double>& z_next, std::vector<double>& reward) override;
  void terminal_value(const std::vector<double>& z, std::size_t batch, std::vector<double>& value) override;
  void prior_sample(const std::vector<double>& z, std::size_t batch, Rng& rng, std::vector<double>& action) override;

  // Timing entry for the benchmark: one dynamics+reward step on float
  // buffers, no double conversion.
  void step_f32(const float* z, const float* a, std::size_t batch, float* z_next, float* reward);

  void encode(const std::vector<double>& obs, std::size_t batch, std::vector<double>& z);

private:
  struct Block {
    std::vector<float> gate;  // [in, K], empty for a single expert
    std::vector<fast::Layer> trunk_l0, trunk_l1;
    fast::Layer head;
    bool use_head = true;
    bool residual = true;
    bool gram_schmidt = true;
    std::size_t experts = 1;
    std::size_t feature = 0;
  };

  void block_forward(const Block& block, const float* z, const float* input, std::size_t batch, std::size_t in_dim,
                     float* out);
  void policy_forward(const float* z, std::size_t batch);

  std::size_t latent_ = 0, act_ = 0, obs_dim_ = 0, bins_ = 0;
  float tau_ = 1.0f;
  float epsilon_ = 1e-8f;
  std::vector<fast::Layer> encoder_;
  Block dynamics_, reward_;
  std::vector<fast::Layer> policy_;  // shared trunk + final linear to 2A
  fast::Layer q_head_a_0_, q_head_a_1_, q_head_a_2_;  // target head A layers
  fast::Layer q_head_b_0_, q_head_b_1_, q_head_b_2_;  // target head B layers
  std::vector<float> centers_;
  double log_std_min_ = -10.0, log_std_max_ = 2.0;

  // scratch
  std::vector<float> s_in_, s_logits_, s_weights_, s_feat_, s_mix_, s_scratch_, s_out_, s_rlogits_, s_policy_out_,
      s_q_in_, s_q_tmp_, s_qa_, s_qb_, s_z_, s_a_, s_zn_, s_r_, s_enc_;
};

}  // namespace prism
