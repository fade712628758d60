#include "prism/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace prism {

Activation activation_from_string(const std::string& name) {
  if (name == "none") return Activation::none;
  if (name == "mish") return Activation::mish;
  if (name == "simnorm") return Activation::simnorm;
  throw std::invalid_argument("unknown activation '" + name + "'");
}

std::string activation_name(Activation act) {
  switch (act) {
    case Activation::none: return "none";
    case Activation::mish: return "mish";
    case Activation::simnorm: return "simnorm";
  }
  return "none";
}

namespace {

Tensor uniform_fanin_weight(std::size_t out, std::size_t in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::vector<double> data(out * in);
  for (double& v : data) v = rng.uniform(-bound, bound);
  return Tensor::from_data({out, in}, std::move(data), true);
}

}  // namespace

NormedLinear::NormedLinear(std::size_t in_features, std::size_t out_features, Activation act, double dropout_rate,
                           SimNorm simnorm)
    : activation(act), dropout_rate(dropout_rate), simnorm_cfg(simnorm), in_(in_features), out_(out_features) {
  if (act == Activation::simnorm && out_features % simnorm.group_size != 0) {
    throw std::invalid_argument("NormedLinear: out_features " + std::to_string(out_features) +
                                " not divisible by simnorm group " + std::to_string(simnorm.group_size));
  }
}

void NormedLinear::init(Rng& rng) {
  weight = uniform_fanin_weight(out_, in_, rng);
  bias = Tensor::zeros({out_}, true);
  ln_gain = Tensor::full({out_}, 1.0, true);
  ln_shift = Tensor::zeros({out_}, true);
}

Tensor NormedLinear::forward(const Tensor& x, bool training, Rng* dropout_rng) const {
  Tensor h = linear(x, weight, bias);
  h = layer_norm_last(h, ln_gain, ln_shift);
  if (training && dropout_rate > 0.0) {
    if (dropout_rng == nullptr) throw std::invalid_argument("NormedLinear: dropout in training mode needs an rng");
    h = dropout(h, dropout_rate, *dropout_rng);
  }
  switch (activation) {
    case Activation::none: return h;
    case Activation::mish: return mish(h);
    case Activation::simnorm: return simnorm_cfg.forward(h);
  }
  return h;
}

void NormedLinear::collect_params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
  out.push_back({prefix + ".ln_gain", ln_gain});
  out.push_back({prefix + ".ln_shift", ln_shift});
}

Linear::Linear(std::size_t in_features, std::size_t out_features) : in_(in_features), out_(out_features) {}

void Linear::init(Rng& rng) {
  weight = uniform_fanin_weight(out_, in_, rng);
  bias = Tensor::zeros({out_}, true);
}

void Linear::collect_params(const std::string& prefix, ParamList& out) const {
  out.push_back({prefix + ".weight", weight});
  out.push_back({prefix + ".bias", bias});
}

MLP::MLP(const MLPSpec& spec) {
  if (spec.widths.size() < 2) throw std::invalid_argument("MLPSpec: need at least two widths");
  const std::size_t n_layers = spec.widths.size() - 1;
  if (spec.activations.size() != n_layers) {
    throw std::invalid_argument("MLPSpec: " + std::to_string(n_layers) + " layers but " +
                                std::to_string(spec.activations.size()) + " activations");
  }
  if (!spec.dropouts.empty() && spec.dropouts.size() != n_layers) {
    throw std::invalid_argument("MLPSpec: dropout list length mismatch");
  }
  for (std::size_t i = 0; i < n_layers; ++i) {
    const double rate = spec.dropouts.empty() ? 0.0 : spec.dropouts[i];
    if (spec.final_plain_linear && i + 1 == n_layers) {
      head.emplace(spec.widths[i], spec.widths[i + 1]);
    } else {
      layers.emplace_back(spec.widths[i], spec.widths[i + 1], spec.activations[i], rate, spec.simnorm);
    }
  }
}

void MLP::init(Rng& rng) {
  for (auto& layer : layers) layer.init(rng);
  if (head) head->init(rng);
}

Tensor MLP::forward(const Tensor& x, bool training, Rng* dropout_rng) const {
  Tensor h = x;
  for (const auto& layer : layers) h = layer.forward(h, training, dropout_rng);
  if (head) h = head->forward(h);
  return h;
}

void MLP::collect_params(const std::string& prefix, ParamList& out) const {
  for (std::size_t i = 0; i < layers.size(); ++i) layers[i].collect_params(prefix + ".l" + std::to_string(i), out);
  if (head) head->collect_params(prefix + ".head", out);
}

std::size_t MLP::num_params() const {
  std::size_t n = 0;
  for (const auto& layer : layers) n += layer.num_params();
  if (head) n += head->num_params();
  return n;
}

MLP init_parameters(const MLPSpec& spec, std::uint64_t seed) {
  MLP net(spec);
  Rng rng(seed);
  net.init(rng);
  return net;
}

}  // namespace prism
