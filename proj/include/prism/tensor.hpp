#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prism/rng.hpp"

namespace prism {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorNode {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // same size as value iff requires_grad
  bool requires_grad = false;
};

}  // namespace detail

// Dense float64 tensor with optional participation in the active gradient
// tape. Copying a Tensor copies the handle, not the storage; values are
// treated as immutable once the tensor has entered a graph.
class Tensor {
public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const { return shape().at(axis); }
  std::size_t numel() const;

  double item() const;                  // requires numel() == 1
  double at(std::size_t flat) const;

  std::span<const double> data() const;
  std::span<double> raw_data();         // direct mutation; leaf tensors only

  bool requires_grad() const;
  void set_requires_grad(bool on);
  std::span<const double> grad() const;
  std::span<double> raw_grad();
  void zero_grad();

  detail::TensorNode* node() const { return node_.get(); }
  const std::shared_ptr<detail::TensorNode>& handle() const { return node_; }

  static Tensor wrap(std::shared_ptr<detail::TensorNode> node) { return Tensor(std::move(node)); }

private:
  explicit Tensor(std::shared_ptr<detail::TensorNode> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::TensorNode> node_;
};

// Reverse-mode tape. Constructing a Tape makes it the recording target for
// the current thread; destruction restores the previous one (stack
// discipline). Single-threaded by contract.
class Tape {
public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // Seeds d(loss)/d(loss) = 1 and replays all recorded ops in reverse.
  // Errors on non-scalar loss, unrecorded loss, or a second call.
  void backward(const Tensor& loss);

  std::size_t num_nodes() const { return entries_.size(); }
  void push(std::function<void()> fn) { entries_.push_back(std::move(fn)); }

  static Tape* active();

private:
  std::vector<std::function<void()>> entries_;
  bool consumed_ = false;
  Tape* prev_ = nullptr;
};

// Temporarily disables recording (used for target computation).
class NoGradGuard {
public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
  Tape* saved_;
};

// ---- elementwise (same shape, scalar, or trailing-suffix broadcast) ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor divide(const Tensor& a, const Tensor& b);   // errors on zero denominator
Tensor minimum(const Tensor& a, const Tensor& b);  // subgradient to the smaller branch; ties go to a

Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);  // errors on nonpositive input
Tensor tanh(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor negate(const Tensor& x);
Tensor reciprocal(const Tensor& x);  // errors on zero input
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);
Tensor symexp(const Tensor& x);  // sign(x) * (exp(|x|) - 1)
Tensor mish(const Tensor& x);    // x * tanh(softplus(x)), composed

// ---- matrix ----
Tensor matmul(const Tensor& a, const Tensor& b);                       // [m,k]x[k,n]
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b);      // x [B,in], w [out,in], b [out]

// ---- reductions and structured ops ----
Tensor sum(const Tensor& x);        // -> [1]
Tensor mean(const Tensor& x);       // -> [1]
Tensor l2_norm(const Tensor& x);    // -> [1], sqrt(sum x^2); subgradient 0 at the origin
Tensor frobenius(const Tensor& x);  // alias of l2_norm for matrices
Tensor softmax_last(const Tensor& x);
Tensor log_softmax_last(const Tensor& x);
Tensor layer_norm_last(const Tensor& x, const Tensor& gain, const Tensor& shift);
Tensor simnorm(const Tensor& x, std::size_t group_size, double temperature);

Tensor dot_rows(const Tensor& a, const Tensor& b);   // [B,d],[B,d] -> [B]
Tensor norm_rows(const Tensor& x);                   // [B,d] -> [B]
Tensor scale_rows(const Tensor& x, const Tensor& s); // [B,d],[B] -> [B,d]
Tensor mean_axis0(const Tensor& x);                  // [B,K] -> [K]

Tensor concat_last(const std::vector<Tensor>& parts);
Tensor slice_last(const Tensor& x, std::size_t start, std::size_t len);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor stopgrad(const Tensor& x);
Tensor dropout(const Tensor& x, double rate, Rng& rng);  // inverted scaling; call only in training
Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids);

// ---- non-differentiable helpers ----
std::vector<std::size_t> argmax_rows(const Tensor& x);  // ties -> lowest index
bool all_finite(const Tensor& x);

}  // namespace prism
