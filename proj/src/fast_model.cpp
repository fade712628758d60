#include "prism/fast_model.hpp"

#include <cblas.h>

#include <cmath>
#include <cstring>
#include <stdexcept>

namespace prism {

namespace fast {

namespace {

inline float mishf(float x) {
  const float sp = x > 0.0f ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return x * std::tanh(sp);
}

}  // namespace

void Layer::forward(const float* x, std::size_t batch, float* y) const {
  for (std::size_t r = 0; r < batch; ++r) std::memcpy(y + r * out, b.data(), out * sizeof(float));
  cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(batch), static_cast<int>(out),
              static_cast<int>(in), 1.0f, x, static_cast<int>(in), w.data(), static_cast<int>(in), 1.0f, y,
              static_cast<int>(out));
  if (has_norm) {
    const float inv_d = 1.0f / static_cast<float>(out);
    for (std::size_t r = 0; r < batch; ++r) {
      float* row = y + r * out;
      float mu = 0.0f;
      for (std::size_t i = 0; i < out; ++i) mu += row[i];
      mu *= inv_d;
      float var = 0.0f;
      for (std::size_t i = 0; i < out; ++i) {
        const float c = row[i] - mu;
        var += c * c;
      }
      var *= inv_d;
      const float inv = 1.0f / std::sqrt(var + 1e-8f);
      for (std::size_t i = 0; i < out; ++i) row[i] = gain[i] * ((row[i] - mu) * inv) + shift[i];
    }
  }
  switch (act) {
    case Act::none:
      break;
    case Act::mish:
      for (std::size_t i = 0; i < batch * out; ++i) y[i] = mishf(y[i]);
      break;
    case Act::simnorm: {
      const std::size_t groups = (batch * out) / group;
      for (std::size_t g = 0; g < groups; ++g) {
        float* seg = y + g * group;
        float m = seg[0] * inv_temp;
        for (std::size_t i = 1; i < group; ++i) m = std::max(m, seg[i] * inv_temp);
        float s = 0.0f;
        for (std::size_t i = 0; i < group; ++i) {
          seg[i] = std::exp(seg[i] * inv_temp - m);
          s += seg[i];
        }
        const float inv = 1.0f / s;
        for (std::size_t i = 0; i < group; ++i) seg[i] *= inv;
      }
      break;
    }
  }
}

}  // namespace fast

namespace {

fast::Layer convert(const NormedLinear& src) {
  fast::Layer layer;
  layer.in = src.in_features();
  layer.out = src.out_features();
  layer.w.assign(src.weight.data().begin(), src.weight.data().end());
  layer.b.assign(src.bias.data().begin(), src.bias.data().end());
  layer.gain.assign(src.ln_gain.data().begin(), src.ln_gain.data().end());
  layer.shift.assign(src.ln_shift.data().begin(), src.ln_shift.data().end());
  layer.has_norm = true;
  switch (src.activation) {
    case Activation::none: layer.act = fast::Act::none; break;
    case Activation::mish: layer.act = fast::Act::mish; break;
    case Activation::simnorm: layer.act = fast::Act::simnorm; break;
  }
  layer.group = src.simnorm_cfg.group_size;
  layer.inv_temp = static_cast<float>(1.0 / src.simnorm_cfg.temperature);
  return layer;
}

fast::Layer convert(const Linear& src) {
  fast::Layer layer;
  layer.in = src.weight.dim(1);
  layer.out = src.weight.dim(0);
  layer.w.assign(src.weight.data().begin(), src.weight.data().end());
  layer.b.assign(src.bias.data().begin(), src.bias.data().end());
  layer.has_norm = false;
  layer.act = fast::Act::none;
  return layer;
}

}  // namespace

FastWorldModel::FastWorldModel(const WorldModel& model) {
  if (model.multi_task()) {
    throw std::invalid_argument("FastWorldModel: single-task only");
  }
  const auto& cfg = model.config();
  latent_ = cfg.latent_dim;
  act_ = cfg.act_dim;
  obs_dim_ = cfg.obs_dim;
  bins_ = cfg.num_bins;
  tau_ = static_cast<float>(model.gate_tau);
  log_std_min_ = cfg.log_std_min;
  log_std_max_ = cfg.log_std_max;
  centers_.assign(model.codec.centers().begin(), model.codec.centers().end());

  for (const auto& layer : model.encoder.layers) encoder_.push_back(convert(layer));

  auto build_block = [&](const MoEBlock& src, Block& dst) {
    dst.experts = src.num_experts();
    dst.feature = src.config().feature_dim;
    dst.use_head = src.config().use_head;
    dst.residual = src.config().residual;
    dst.gram_schmidt = src.config().ortho_mode == OrthoMode::gram_schmidt;
    if (src.has_gate()) dst.gate.assign(src.gate_weight.data().begin(), src.gate_weight.data().end());
    for (std::size_t k = 0; k < dst.experts; ++k) {
      dst.trunk_l0.push_back(convert(src.trunk_l0[k]));
      dst.trunk_l1.push_back(convert(src.trunk_l1[k]));
    }
    if (dst.use_head) dst.head = convert(src.head);
  };
  build_block(model.dynamics, dynamics_);
  build_block(model.reward, reward_);

  for (const auto& layer : model.policy.net.layers) policy_.push_back(convert(layer));
  policy_.push_back(convert(*model.policy.net.head));

  // planner bootstrap uses the first two target heads
  q_head_a_0_ = convert(model.target_qs[0].layers[0]);
  q_head_a_1_ = convert(model.target_qs[0].layers[1]);
  q_head_a_2_ = convert(*model.target_qs[0].head);
  q_head_b_0_ = convert(model.target_qs[1].layers[0]);
  q_head_b_1_ = convert(model.target_qs[1].layers[1]);
  q_head_b_2_ = convert(*model.target_qs[1].head);
}

void FastWorldModel::block_forward(const Block& block, const float* z, const float* input, std::size_t batch,
                                   std::size_t in_dim, float* out) {
  const std::size_t k = block.experts;
  const std::size_t d = block.feature;

  // gate weights
  s_weights_.resize(batch * k);
  if (block.gate.empty()) {
    std::fill(s_weights_.begin(), s_weights_.end(), 1.0f);
  } else {
    s_logits_.resize(batch * k);
    cblas_sgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(batch), static_cast<int>(k),
                static_cast<int>(in_dim), 1.0f, input, static_cast<int>(in_dim), block.gate.data(),
                static_cast<int>(k), 0.0f, s_logits_.data(), static_cast<int>(k));
    const float inv_tau = 1.0f / tau_;
    for (std::size_t r = 0; r < batch; ++r) {
      float* row = s_logits_.data() + r * k;
      float m = row[0] * inv_tau;
      for (std::size_t i = 1; i < k; ++i) m = std::max(m, row[i] * inv_tau);
      float s = 0.0f;
      for (std::size_t i = 0; i < k; ++i) {
        s_weights_[r * k + i] = std::exp(row[i] * inv_tau - m);
        s += s_weights_[r * k + i];
      }
      const float inv = 1.0f / s;
      for (std::size_t i = 0; i < k; ++i) s_weights_[r * k + i] *= inv;
    }
  }

  // expert stack: s_feat_ holds K contiguous [batch, d] planes
  s_feat_.resize(k * batch * d);
  const std::size_t hidden = block.trunk_l0[0].out;
  s_scratch_.resize(batch * hidden);
  for (std::size_t e = 0; e < k; ++e) {
    block.trunk_l0[e].forward(input, batch, s_scratch_.data());
    block.trunk_l1[e].forward(s_scratch_.data(), batch, s_feat_.data() + e * batch * d);
  }

  if (block.gram_schmidt && k > 1) {
    // per-sample modified Gram-Schmidt with the epsilon-guarded projection
    for (std::size_t r = 0; r < batch; ++r) {
      for (std::size_t e = 0; e < k; ++e) {
        float* u = s_feat_.data() + e * batch * d + r * d;
        for (std::size_t p = 0; p < e; ++p) {
          const float* v = s_feat_.data() + p * batch * d + r * d;
          float dot_vu = 0.0f, dot_vv = 0.0f;
          for (std::size_t i = 0; i < d; ++i) {
            dot_vu += v[i] * u[i];
            dot_vv += v[i] * v[i];
          }
          const float coef = dot_vu / (dot_vv + epsilon_ * epsilon_);
          for (std::size_t i = 0; i < d; ++i) u[i] -= coef * v[i];
        }
        float norm = 0.0f;
        for (std::size_t i = 0; i < d; ++i) norm += u[i] * u[i];
        const float inv = 1.0f / (std::sqrt(norm) + epsilon_);
        for (std::size_t i = 0; i < d; ++i) u[i] *= inv;
      }
    }
  }

  // weighted mixture (+ residual for the dynamics block)
  s_mix_.resize(batch * d);
  std::fill(s_mix_.begin(), s_mix_.end(), 0.0f);
  for (std::size_t e = 0; e < k; ++e) {
    const float* plane = s_feat_.data() + e * batch * d;
    for (std::size_t r = 0; r < batch; ++r) {
      const float w = s_weights_[r * k + e];
      float* dst = s_mix_.data() + r * d;
      const float* src = plane + r * d;
      for (std::size_t i = 0; i < d; ++i) dst[i] += w * src[i];
    }
  }
  if (block.residual) {
    for (std::size_t i = 0; i < batch * d; ++i) s_mix_[i] += z[i];
  }
  if (block.use_head) {
    block.head.forward(s_mix_.data(), batch, out);
  } else {
    std::memcpy(out, s_mix_.data(), batch * d * sizeof(float));
  }
}

void FastWorldModel::step_f32(const float* z, const float* a, std::size_t batch, float* z_next, float* reward) {
  const std::size_t in_dim = latent_ + act_;
  s_in_.resize(batch * in_dim);
  for (std::size_t r = 0; r < batch; ++r) {
    std::memcpy(s_in_.data() + r * in_dim, z + r * latent_, latent_ * sizeof(float));
    std::memcpy(s_in_.data() + r * in_dim + latent_, a + r * act_, act_ * sizeof(float));
  }
  block_forward(dynamics_, z, s_in_.data(), batch, in_dim, z_next);

  s_rlogits_.resize(batch * bins_);
  block_forward(reward_, z, s_in_.data(), batch, in_dim, s_rlogits_.data());
  for (std::size_t r = 0; r < batch; ++r) {
    const float* row = s_rlogits_.data() + r * bins_;
    float m = row[0];
    for (std::size_t i = 1; i < bins_; ++i) m = std::max(m, row[i]);
    float s = 0.0f, acc = 0.0f;
    for (std::size_t i = 0; i < bins_; ++i) {
      const float p = std::exp(row[i] - m);
      s += p;
      acc += p * centers_[i];
    }
    const float y = acc / s;
    reward[r] = y >= 0.0f ? std::exp(y) - 1.0f : 1.0f - std::exp(-y);
  }
}

void FastWorldModel::step(const std::vector<double>& z, const std::vector<double>& a, std::size_t batch,
                          std::vector<double>& z_next, std::vector<double>& reward) {
  s_z_.resize(batch * latent_);
  s_a_.resize(batch * act_);
  for (std::size_t i = 0; i < batch * latent_; ++i) s_z_[i] = static_cast<float>(z[i]);
  for (std::size_t i = 0; i < batch * act_; ++i) s_a_[i] = static_cast<float>(a[i]);
  s_zn_.resize(batch * latent_);
  s_r_.resize(batch);
  step_f32(s_z_.data(), s_a_.data(), batch, s_zn_.data(), s_r_.data());
  z_next.assign(s_zn_.begin(), s_zn_.begin() + static_cast<std::ptrdiff_t>(batch * latent_));
  reward.assign(s_r_.begin(), s_r_.begin() + static_cast<std::ptrdiff_t>(batch));
}

void FastWorldModel::policy_forward(const float* z, std::size_t batch) {
  const std::size_t width0 = policy_[0].out;
  s_scratch_.resize(batch * std::max(width0, policy_.back().out));
  s_policy_out_.resize(batch * policy_.back().out);
  std::vector<float>* cur = &s_policy_out_;
  // ping-pong through the trunk layers
  std::vector<float> tmp(batch * width0);
  policy_[0].forward(z, batch, tmp.data());
  std::vector<float> tmp2(batch * policy_[1].out);
  policy_[1].forward(tmp.data(), batch, tmp2.data());
  policy_[2].forward(tmp2.data(), batch, cur->data());
}

void FastWorldModel::terminal_value(const std::vector<double>& z, std::size_t batch, std::vector<double>& value) {
  s_z_.resize(batch * latent_);
  for (std::size_t i = 0; i < batch * latent_; ++i) s_z_[i] = static_cast<float>(z[i]);
  policy_forward(s_z_.data(), batch);
  const std::size_t two_a = policy_.back().out;

  const std::size_t q_in = latent_ + act_;
  s_q_in_.resize(batch * q_in);
  for (std::size_t r = 0; r < batch; ++r) {
    std::memcpy(s_q_in_.data() + r * q_in, s_z_.data() + r * latent_, latent_ * sizeof(float));
    for (std::size_t i = 0; i < act_; ++i) {
      s_q_in_[r * q_in + latent_ + i] = std::tanh(s_policy_out_[r * two_a + i]);
    }
  }

  auto decode_head = [&](const fast::Layer& l0, const fast::Layer& l1, const fast::Layer& l2, std::vector<float>& out) {
    std::vector<float> h0(batch * l0.out), h1(batch * l1.out), logits(batch * l2.out);
    l0.forward(s_q_in_.data(), batch, h0.data());
    l1.forward(h0.data(), batch, h1.data());
    l2.forward(h1.data(), batch, logits.data());
    out.resize(batch);
    for (std::size_t r = 0; r < batch; ++r) {
      const float* row = logits.data() + r * bins_;
      float m = row[0];
      for (std::size_t i = 1; i < bins_; ++i) m = std::max(m, row[i]);
      float s = 0.0f, acc = 0.0f;
      for (std::size_t i = 0; i < bins_; ++i) {
        const float p = std::exp(row[i] - m);
        s += p;
        acc += p * centers_[i];
      }
      const float y = acc / s;
      out[r] = y >= 0.0f ? std::exp(y) - 1.0f : 1.0f - std::exp(-y);
    }
  };
  decode_head(q_head_a_0_, q_head_a_1_, q_head_a_2_, s_qa_);
  decode_head(q_head_b_0_, q_head_b_1_, q_head_b_2_, s_qb_);
  value.resize(batch);
  for (std::size_t r = 0; r < batch; ++r) value[r] = std::min(s_qa_[r], s_qb_[r]);
}

void FastWorldModel::prior_sample(const std::vector<double>& z, std::size_t batch, Rng& rng,
                                  std::vector<double>& action) {
  s_z_.resize(batch * latent_);
  for (std::size_t i = 0; i < batch * latent_; ++i) s_z_[i] = static_cast<float>(z[i]);
  policy_forward(s_z_.data(), batch);
  const std::size_t two_a = policy_.back().out;
  action.resize(batch * act_);
  const double half_range = 0.5 * (log_std_max_ - log_std_min_);
  for (std::size_t r = 0; r < batch; ++r) {
    for (std::size_t i = 0; i < act_; ++i) {
      const double mean = s_policy_out_[r * two_a + i];
      const double raw = s_policy_out_[r * two_a + act_ + i];
      const double log_std = log_std_min_ + half_range * (std::tanh(raw) + 1.0);
      action[r * act_ + i] = std::tanh(mean + std::exp(log_std) * rng.normal());
    }
  }
}

void FastWorldModel::encode(const std::vector<double>& obs, std::size_t batch, std::vector<double>& z) {
  s_enc_.resize(batch * obs_dim_);
  for (std::size_t i = 0; i < batch * obs_dim_; ++i) s_enc_[i] = static_cast<float>(obs[i]);
  std::vector<float> h(batch * encoder_[0].out);
  encoder_[0].forward(s_enc_.data(), batch, h.data());
  std::vector<float> out(batch * encoder_[1].out);
  encoder_[1].forward(h.data(), batch, out.data());
  z.assign(out.begin(), out.end());
}

}  // namespace prism
