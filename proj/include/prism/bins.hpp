#pragma once

#include <cstddef>
#include <vector>

#include "prism/tensor.hpp"

namespace prism {

double symlog(double x);
double symexp_scalar(double x);

// Discrete regression codec: scalars are encoded as two-hot vectors over a
// uniform grid in symlog space and decoded as symexp of the expected grid
// value under softmax(logits).
class BinCodec {
public:
  explicit BinCodec(std::size_t num_bins = 101, double support = 10.0);

  std::size_t num_bins() const { return num_bins_; }
  double support() const { return support_; }
  const std::vector<double>& centers() const { return centers_; }  // symlog space

  // Two-hot target; at most two adjacent nonzero entries summing to 1.
  // Values outside the covered range clamp to the boundary bin.
  std::vector<double> two_hot(double value) const;
  Tensor two_hot_rows(const std::vector<double>& values) const;  // [B, num_bins]

  // Expectation decode of an explicit probability vector.
  double decode_probs(const std::vector<double>& probs) const;

  // Differentiable decode: symexp(sum softmax(logits) * centers) per row.
  Tensor decode_logits(const Tensor& logits) const;  // [B, num_bins] -> [B]

  // Mean over rows of -sum(target * log_softmax(logits)).
  Tensor cross_entropy(const Tensor& logits, const Tensor& two_hot_target) const;

private:
  std::size_t num_bins_;
  double support_;
  std::vector<double> centers_;
};

}  // namespace prism
