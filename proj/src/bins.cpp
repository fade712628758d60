#include "prism/bins.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace prism {

double symlog(double x) { return x >= 0.0 ? std::log1p(x) : -std::log1p(-x); }

double symexp_scalar(double x) { return x >= 0.0 ? std::expm1(x) : -std::expm1(-x); }

BinCodec::BinCodec(std::size_t num_bins, double support) : num_bins_(num_bins), support_(support) {
  if (num_bins < 2) throw std::invalid_argument("BinCodec: need at least two bins");
  if (support <= 0.0) throw std::invalid_argument("BinCodec: support must be positive");
  centers_.resize(num_bins);
  const double step = 2.0 * support / static_cast<double>(num_bins - 1);
  for (std::size_t i = 0; i < num_bins; ++i) centers_[i] = -support + step * static_cast<double>(i);
}

std::vector<double> BinCodec::two_hot(double value) const {
  std::vector<double> out(num_bins_, 0.0);
  const double y = std::clamp(symlog(value), -support_, support_);
  const double step = 2.0 * support_ / static_cast<double>(num_bins_ - 1);
  const double pos = (y + support_) / step;
  const std::size_t lo = std::min(static_cast<std::size_t>(pos), num_bins_ - 2);
  const double frac = pos - static_cast<double>(lo);
  out[lo] = 1.0 - frac;
  out[lo + 1] = frac;
  return out;
}

Tensor BinCodec::two_hot_rows(const std::vector<double>& values) const {
  std::vector<double> data(values.size() * num_bins_, 0.0);
  for (std::size_t b = 0; b < values.size(); ++b) {
    auto row = two_hot(values[b]);
    std::copy(row.begin(), row.end(), data.begin() + static_cast<std::ptrdiff_t>(b * num_bins_));
  }
  return Tensor::from_data({values.size(), num_bins_}, std::move(data));
}

double BinCodec::decode_probs(const std::vector<double>& probs) const {
  if (probs.size() != num_bins_) throw std::invalid_argument("BinCodec: probability vector size mismatch");
  double acc = 0.0;
  for (std::size_t i = 0; i < num_bins_; ++i) acc += probs[i] * centers_[i];
  return symexp_scalar(acc);
}

Tensor BinCodec::decode_logits(const Tensor& logits) const {
  if (logits.shape().back() != num_bins_) {
    throw std::invalid_argument("BinCodec: logits last axis " + std::to_string(logits.shape().back()) +
                                " != num_bins " + std::to_string(num_bins_));
  }
  Tensor probs = softmax_last(logits);
  Tensor grid = Tensor::from_data({num_bins_}, std::vector<double>(centers_));
  return symexp(dot_rows(probs, mul(Tensor::full(logits.shape(), 1.0), grid)));
}

Tensor BinCodec::cross_entropy(const Tensor& logits, const Tensor& two_hot_target) const {
  if (logits.shape() != two_hot_target.shape()) {
    throw std::invalid_argument("BinCodec: logits " + shape_str(logits.shape()) + " vs target " +
                                shape_str(two_hot_target.shape()));
  }
  return negate(mean(dot_rows(two_hot_target, log_softmax_last(logits))));
}

}  // namespace prism
