#include "prism/tensor.hpp"

#include <cblas.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace prism {

namespace {

thread_local Tape* g_active_tape = nullptr;

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

double stable_softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

[[noreturn]] void fail(const std::string& msg) { throw std::invalid_argument(msg); }

void check_same_numel(const char* name, const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel()) {
    fail(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

std::shared_ptr<detail::TensorNode> make_node(Shape shape, std::vector<double> value) {
  auto n = std::make_shared<detail::TensorNode>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  return n;
}

// Marks the result as a recorded graph node and allocates its grad buffer.
void mark_recorded(const std::shared_ptr<detail::TensorNode>& n) {
  n->requires_grad = true;
  n->grad.assign(n->value.size(), 0.0);
}

bool should_record(std::initializer_list<const Tensor*> inputs) {
  if (g_active_tape == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

// ---------------------------------------------------------------- Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto node = make_node(std::move(shape), std::vector<double>(n, value));
  if (requires_grad) {
    node->requires_grad = true;
    node->grad.assign(n, 0.0);
  }
  return Tensor(std::move(node));
}

Tensor Tensor::from_data(Shape shape, std::vector<double> data, bool requires_grad) {
  if (shape_numel(shape) != data.size()) {
    fail("Tensor::from_data: shape " + shape_str(shape) + " does not match data length " + std::to_string(data.size()));
  }
  auto node = make_node(std::move(shape), std::move(data));
  if (requires_grad) {
    node->requires_grad = true;
    node->grad.assign(node->value.size(), 0.0);
  }
  return Tensor(std::move(node));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from_data({1}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
  if (!node_) fail("Tensor: undefined");
  return node_->shape;
}

std::size_t Tensor::numel() const { return node_ ? node_->value.size() : 0; }

double Tensor::item() const {
  if (numel() != 1) fail("Tensor::item: tensor has shape " + shape_str(shape()) + ", expected a scalar");
  return node_->value[0];
}

double Tensor::at(std::size_t flat) const {
  if (!node_ || flat >= node_->value.size()) fail("Tensor::at: index out of range");
  return node_->value[flat];
}

std::span<const double> Tensor::data() const {
  if (!node_) fail("Tensor: undefined");
  return node_->value;
}

std::span<double> Tensor::raw_data() {
  if (!node_) fail("Tensor: undefined");
  return node_->value;
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

void Tensor::set_requires_grad(bool on) {
  if (!node_) fail("Tensor: undefined");
  node_->requires_grad = on;
  if (on && node_->grad.size() != node_->value.size()) {
    node_->grad.assign(node_->value.size(), 0.0);
  }
}

std::span<const double> Tensor::grad() const {
  if (!node_ || node_->grad.size() != node_->value.size()) fail("Tensor::grad: no gradient buffer");
  return node_->grad;
}

std::span<double> Tensor::raw_grad() {
  if (!node_ || node_->grad.size() != node_->value.size()) fail("Tensor::raw_grad: no gradient buffer");
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_ && !node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

// ------------------------------------------------------------------ Tape

Tape::Tape() : prev_(g_active_tape) { g_active_tape = this; }

Tape::~Tape() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

void Tape::backward(const Tensor& loss) {
  if (!loss.defined() || loss.numel() != 1) {
    throw std::invalid_argument("backward: loss must be a scalar, got " +
                                (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw std::runtime_error("backward: loss is not on the active tape");
  }
  if (consumed_) {
    throw std::runtime_error("backward: tape already consumed; run a new forward pass first");
  }
  consumed_ = true;
  loss.node()->grad[0] = 1.0;
  for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
}

NoGradGuard::NoGradGuard() : saved_(g_active_tape) { g_active_tape = nullptr; }

NoGradGuard::~NoGradGuard() { g_active_tape = saved_; }

// --------------------------------------------------------------- helpers

namespace {

using NodePtr = std::shared_ptr<detail::TensorNode>;

// Generic binary elementwise op with the supported broadcast cases: same
// shape, scalar, or the smaller operand matching a trailing suffix of the
// larger (e.g. [B,d] op [d]).
template <class F, class DA, class DB>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, F f, DA dfa, DB dfb) {
  if (!a.defined() || !b.defined()) fail(std::string(name) + ": undefined operand");
  const bool a_big = a.numel() >= b.numel();
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  if (!(small.numel() == 1 || small.shape() == big.shape() || is_suffix(small.shape(), big.shape()))) {
    fail(std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }

  const std::size_t n = big.numel();
  const std::size_t sn = std::max<std::size_t>(small.numel(), 1);
  std::vector<double> out(n);
  const auto av = a.data();
  const auto bv = b.data();
  if (a_big) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i], bv[i % sn]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(av[i % sn], bv[i]);
  }
  auto node = make_node(big.shape(), std::move(out));

  if (should_record({&a, &b})) {
    mark_recorded(node);
    NodePtr an = a.handle(), bn = b.handle(), on = node;
    g_active_tape->push([an, bn, on, a_big, sn, dfa, dfb]() {
      const std::size_t n = on->value.size();
      const auto& g = on->grad;
      const auto& av = an->value;
      const auto& bv = bn->value;
      if (an->requires_grad) {
        auto& ga = an->grad;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t ia = a_big ? i : i % sn;
          const std::size_t ib = a_big ? i % sn : i;
          ga[ia] += g[i] * dfa(av[ia], bv[ib]);
        }
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad;
        for (std::size_t i = 0; i < n; ++i) {
          const std::size_t ia = a_big ? i : i % sn;
          const std::size_t ib = a_big ? i % sn : i;
          gb[ib] += g[i] * dfb(av[ia], bv[ib]);
        }
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

// Generic unary elementwise op; df receives (x, y).
template <class F, class DF>
Tensor unary_op(const Tensor& x, F f, DF df) {
  if (!x.defined()) fail("unary op: undefined operand");
  const std::size_t n = x.numel();
  std::vector<double> out(n);
  const auto xv = x.data();
  for (std::size_t i = 0; i < n; ++i) out[i] = f(xv[i]);
  auto node = make_node(x.shape(), std::move(out));
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    g_active_tape->push([xn, on, df]() {
      if (!xn->requires_grad) return;
      const auto& g = on->grad;
      auto& gx = xn->grad;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xn->value[i], on->value[i]);
    });
  }
  return Tensor::wrap(std::move(node));
}

// Splits [..., d] into rows for last-axis ops.
std::pair<std::size_t, std::size_t> rows_cols(const Tensor& x, const char* name) {
  if (x.ndim() == 0 || x.numel() == 0) fail(std::string(name) + ": empty tensor");
  const std::size_t d = x.shape().back();
  if (d == 0) fail(std::string(name) + ": empty last axis");
  return {x.numel() / d, d};
}

}  // namespace

// ------------------------------------------------------------ elementwise

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor divide(const Tensor& a, const Tensor& b) {
  for (double v : b.data()) {
    if (v == 0.0) fail("divide: zero denominator");
  }
  return binary_op(
      "divide", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      "minimum", a, b, [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor exp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  for (double v : x.data()) {
    if (v <= 0.0) fail("log: nonpositive input " + std::to_string(v));
  }
  return unary_op(
      x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor tanh(const Tensor& x) {
  return unary_op(
      x, [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      x, [](double v) { return stable_softplus(v); }, [](double v, double) { return sigmoid(v); });
}

Tensor negate(const Tensor& x) {
  return unary_op(
      x, [](double v) { return -v; }, [](double, double) { return -1.0; });
}

Tensor reciprocal(const Tensor& x) {
  for (double v : x.data()) {
    if (v == 0.0) fail("reciprocal: zero input");
  }
  return unary_op(
      x, [](double v) { return 1.0 / v; }, [](double, double y) { return -y * y; });
}

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

Tensor symexp(const Tensor& x) {
  return unary_op(
      x, [](double v) { return v >= 0.0 ? std::exp(v) - 1.0 : 1.0 - std::exp(-v); },
      [](double v, double) { return std::exp(std::abs(v)); });
}

Tensor mish(const Tensor& x) { return mul(x, tanh(softplus(x))); }

// ----------------------------------------------------------------- matrix

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    fail("matmul: expected 2-D operands, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    fail("matmul: inner dimension mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(m), static_cast<int>(n),
              static_cast<int>(k), 1.0, a.data().data(), static_cast<int>(k), b.data().data(), static_cast<int>(n),
              0.0, out.data(), static_cast<int>(n));
  auto node = make_node({m, n}, std::move(out));
  if (should_record({&a, &b})) {
    mark_recorded(node);
    NodePtr an = a.handle(), bn = b.handle(), on = node;
    g_active_tape->push([an, bn, on, m, k, n]() {
      if (an->requires_grad) {
        // dA += G * B^T
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(m), static_cast<int>(k),
                    static_cast<int>(n), 1.0, on->grad.data(), static_cast<int>(n), bn->value.data(),
                    static_cast<int>(n), 1.0, an->grad.data(), static_cast<int>(k));
      }
      if (bn->requires_grad) {
        // dB += A^T * G
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(k), static_cast<int>(n),
                    static_cast<int>(m), 1.0, an->value.data(), static_cast<int>(k), on->grad.data(),
                    static_cast<int>(n), 1.0, bn->grad.data(), static_cast<int>(n));
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.ndim() != 2 || w.ndim() != 2 || b.ndim() != 1) {
    fail("linear: expected x [B,in], w [out,in], b [out]; got " + shape_str(x.shape()) + ", " + shape_str(w.shape()) +
         ", " + shape_str(b.shape()));
  }
  const std::size_t B = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in || b.dim(0) != out) {
    fail("linear: shape mismatch x " + shape_str(x.shape()) + ", w " + shape_str(w.shape()) + ", b " +
         shape_str(b.shape()));
  }
  std::vector<double> y(B * out);
  const auto bv = b.data();
  for (std::size_t r = 0; r < B; ++r) {
    std::copy(bv.begin(), bv.end(), y.begin() + static_cast<std::ptrdiff_t>(r * out));
  }
  cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasTrans, static_cast<int>(B), static_cast<int>(out),
              static_cast<int>(in), 1.0, x.data().data(), static_cast<int>(in), w.data().data(),
              static_cast<int>(in), 1.0, y.data(), static_cast<int>(out));
  auto node = make_node({B, out}, std::move(y));
  if (should_record({&x, &w, &b})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), wn = w.handle(), bn = b.handle(), on = node;
    g_active_tape->push([xn, wn, bn, on, B, in, out]() {
      const auto& g = on->grad;
      if (xn->requires_grad) {
        // dX += G * W
        cblas_dgemm(CblasRowMajor, CblasNoTrans, CblasNoTrans, static_cast<int>(B), static_cast<int>(in),
                    static_cast<int>(out), 1.0, g.data(), static_cast<int>(out), wn->value.data(),
                    static_cast<int>(in), 1.0, xn->grad.data(), static_cast<int>(in));
      }
      if (wn->requires_grad) {
        // dW += G^T * X
        cblas_dgemm(CblasRowMajor, CblasTrans, CblasNoTrans, static_cast<int>(out), static_cast<int>(in),
                    static_cast<int>(B), 1.0, g.data(), static_cast<int>(out), xn->value.data(),
                    static_cast<int>(in), 1.0, wn->grad.data(), static_cast<int>(in));
      }
      if (bn->requires_grad) {
        auto& gb = bn->grad;
        for (std::size_t r = 0; r < B; ++r) {
          for (std::size_t c = 0; c < out; ++c) gb[c] += g[r * out + c];
        }
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

// ------------------------------------------------------------- reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto node = make_node({1}, {s});
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    g_active_tape->push([xn, on]() {
      if (!xn->requires_grad) return;
      const double g = on->grad[0];
      for (double& gv : xn->grad) gv += g;
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) fail("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(x.numel());
  double s = 0.0;
  for (double v : x.data()) s += v;
  auto node = make_node({1}, {s * inv});
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    g_active_tape->push([xn, on, inv]() {
      if (!xn->requires_grad) return;
      const double g = on->grad[0] * inv;
      for (double& gv : xn->grad) gv += g;
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor l2_norm(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v * v;
  const double norm = std::sqrt(s);
  auto node = make_node({1}, {norm});
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    g_active_tape->push([xn, on]() {
      if (!xn->requires_grad) return;
      const double norm = on->value[0];
      if (norm <= 0.0) return;  // subgradient 0 at the origin
      const double g = on->grad[0] / norm;
      for (std::size_t i = 0; i < xn->value.size(); ++i) xn->grad[i] += g * xn->value[i];
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor frobenius(const Tensor& x) { return l2_norm(x); }

Tensor softmax_last(const Tensor& x) {
  auto [rows, d] = rows_cols(x, "softmax");
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * d;
    double m = xv[base];
    for (std::size_t i = 1; i < d; ++i) m = std::max(m, xv[base + i]);
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      out[base + i] = std::exp(xv[base + i] - m);
      s += out[base + i];
    }
    const double inv = 1.0 / s;
    for (std::size_t i = 0; i < d; ++i) out[base + i] *= inv;
  }
  auto node = make_node(x.shape(), std::move(out));
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    const std::size_t rows_c = rows, d_c = d;
    g_active_tape->push([xn, on, rows_c, d_c]() {
      if (!xn->requires_grad) return;
      const auto& y = on->value;
      const auto& g = on->grad;
      for (std::size_t r = 0; r < rows_c; ++r) {
        const std::size_t base = r * d_c;
        double dot = 0.0;
        for (std::size_t i = 0; i < d_c; ++i) dot += g[base + i] * y[base + i];
        for (std::size_t i = 0; i < d_c; ++i) xn->grad[base + i] += y[base + i] * (g[base + i] - dot);
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor log_softmax_last(const Tensor& x) {
  auto [rows, d] = rows_cols(x, "log_softmax");
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * d;
    double m = xv[base];
    for (std::size_t i = 1; i < d; ++i) m = std::max(m, xv[base + i]);
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += std::exp(xv[base + i] - m);
    const double lse = m + std::log(s);
    for (std::size_t i = 0; i < d; ++i) out[base + i] = xv[base + i] - lse;
  }
  auto node = make_node(x.shape(), std::move(out));
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    const std::size_t rows_c = rows, d_c = d;
    g_active_tape->push([xn, on, rows_c, d_c]() {
      if (!xn->requires_grad) return;
      const auto& y = on->value;
      const auto& g = on->grad;
      for (std::size_t r = 0; r < rows_c; ++r) {
        const std::size_t base = r * d_c;
        double gsum = 0.0;
        for (std::size_t i = 0; i < d_c; ++i) gsum += g[base + i];
        for (std::size_t i = 0; i < d_c; ++i) {
          xn->grad[base + i] += g[base + i] - std::exp(y[base + i]) * gsum;
        }
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor layer_norm_last(const Tensor& x, const Tensor& gain, const Tensor& shift) {
  auto [rows, d] = rows_cols(x, "layer_norm");
  if (gain.numel() != d || shift.numel() != d) {
    fail("layer_norm: affine shape " + shape_str(gain.shape()) + "/" + shape_str(shift.shape()) +
         " does not match last axis " + std::to_string(d));
  }
  constexpr double kEps = 1e-8;
  std::vector<double> out(x.numel());
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto inv_sigma = std::make_shared<std::vector<double>>(rows);
  const auto xv = x.data();
  const auto gv = gain.data();
  const auto sv = shift.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += xv[base + i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) {
      const double c = xv[base + i] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + kEps);
    (*inv_sigma)[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const double h = (xv[base + i] - mu) * inv;
      (*xhat)[base + i] = h;
      out[base + i] = gv[i] * h + sv[i];
    }
  }
  auto node = make_node(x.shape(), std::move(out));
  if (should_record({&x, &gain, &shift})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), gn = gain.handle(), sn = shift.handle(), on = node;
    const std::size_t rows_c = rows, d_c = d;
    g_active_tape->push([xn, gn, sn, on, xhat, inv_sigma, rows_c, d_c]() {
      const auto& g = on->grad;
      const double inv_d = 1.0 / static_cast<double>(d_c);
      for (std::size_t r = 0; r < rows_c; ++r) {
        const std::size_t base = r * d_c;
        if (xn->requires_grad) {
          double mean_h = 0.0, mean_hx = 0.0;
          for (std::size_t i = 0; i < d_c; ++i) {
            const double h = g[base + i] * gn->value[i];
            mean_h += h;
            mean_hx += h * (*xhat)[base + i];
          }
          mean_h *= inv_d;
          mean_hx *= inv_d;
          const double inv = (*inv_sigma)[r];
          for (std::size_t i = 0; i < d_c; ++i) {
            const double h = g[base + i] * gn->value[i];
            xn->grad[base + i] += inv * (h - mean_h - (*xhat)[base + i] * mean_hx);
          }
        }
        if (gn->requires_grad) {
          for (std::size_t i = 0; i < d_c; ++i) gn->grad[i] += g[base + i] * (*xhat)[base + i];
        }
        if (sn->requires_grad) {
          for (std::size_t i = 0; i < d_c; ++i) sn->grad[i] += g[base + i];
        }
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor simnorm(const Tensor& x, std::size_t group_size, double temperature) {
  auto [rows, d] = rows_cols(x, "simnorm");
  if (group_size == 0 || d % group_size != 0) {
    fail("simnorm: last axis " + std::to_string(d) + " not divisible by group size " + std::to_string(group_size));
  }
  if (temperature <= 0.0) fail("simnorm: temperature must be positive");
  const std::size_t groups = (rows * d) / group_size;
  const double inv_t = 1.0 / temperature;
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t gidx = 0; gidx < groups; ++gidx) {
    const std::size_t base = gidx * group_size;
    double m = xv[base] * inv_t;
    for (std::size_t i = 1; i < group_size; ++i) m = std::max(m, xv[base + i] * inv_t);
    double s = 0.0;
    for (std::size_t i = 0; i < group_size; ++i) {
      out[base + i] = std::exp(xv[base + i] * inv_t - m);
      s += out[base + i];
    }
    const double inv = 1.0 / s;
    for (std::size_t i = 0; i < group_size; ++i) out[base + i] *= inv;
  }
  auto node = make_node(x.shape(), std::move(out));
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    g_active_tape->push([xn, on, groups, group_size, inv_t]() {
      if (!xn->requires_grad) return;
      const auto& y = on->value;
      const auto& g = on->grad;
      for (std::size_t gidx = 0; gidx < groups; ++gidx) {
        const std::size_t base = gidx * group_size;
        double dot = 0.0;
        for (std::size_t i = 0; i < group_size; ++i) dot += g[base + i] * y[base + i];
        for (std::size_t i = 0; i < group_size; ++i) {
          xn->grad[base + i] += inv_t * y[base + i] * (g[base + i] - dot);
        }
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

// ------------------------------------------------------------- row-wise

Tensor dot_rows(const Tensor& a, const Tensor& b) {
  check_same_numel("dot_rows", a, b);
  auto [rows, d] = rows_cols(a, "dot_rows");
  std::vector<double> out(rows, 0.0);
  const auto av = a.data();
  const auto bv = b.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += av[r * d + i] * bv[r * d + i];
    out[r] = s;
  }
  auto node = make_node({rows}, std::move(out));
  if (should_record({&a, &b})) {
    mark_recorded(node);
    NodePtr an = a.handle(), bn = b.handle(), on = node;
    const std::size_t rows_c = rows, d_c = d;
    g_active_tape->push([an, bn, on, rows_c, d_c]() {
      const auto& g = on->grad;
      for (std::size_t r = 0; r < rows_c; ++r) {
        const double gr = g[r];
        if (an->requires_grad) {
          for (std::size_t i = 0; i < d_c; ++i) an->grad[r * d_c + i] += gr * bn->value[r * d_c + i];
        }
        if (bn->requires_grad) {
          for (std::size_t i = 0; i < d_c; ++i) bn->grad[r * d_c + i] += gr * an->value[r * d_c + i];
        }
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor norm_rows(const Tensor& x) {
  auto [rows, d] = rows_cols(x, "norm_rows");
  std::vector<double> out(rows);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += xv[r * d + i] * xv[r * d + i];
    out[r] = std::sqrt(s);
  }
  auto node = make_node({rows}, std::move(out));
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    const std::size_t rows_c = rows, d_c = d;
    g_active_tape->push([xn, on, rows_c, d_c]() {
      if (!xn->requires_grad) return;
      for (std::size_t r = 0; r < rows_c; ++r) {
        const double norm = on->value[r];
        if (norm <= 0.0) continue;
        const double g = on->grad[r] / norm;
        for (std::size_t i = 0; i < d_c; ++i) xn->grad[r * d_c + i] += g * xn->value[r * d_c + i];
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor scale_rows(const Tensor& x, const Tensor& s) {
  auto [rows, d] = rows_cols(x, "scale_rows");
  if (s.numel() != rows) {
    fail("scale_rows: scale shape " + shape_str(s.shape()) + " does not match rows of " + shape_str(x.shape()));
  }
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  const auto sv = s.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = xv[r * d + i] * sv[r];
  }
  auto node = make_node(x.shape(), std::move(out));
  if (should_record({&x, &s})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), sn = s.handle(), on = node;
    const std::size_t rows_c = rows, d_c = d;
    g_active_tape->push([xn, sn, on, rows_c, d_c]() {
      const auto& g = on->grad;
      for (std::size_t r = 0; r < rows_c; ++r) {
        if (xn->requires_grad) {
          for (std::size_t i = 0; i < d_c; ++i) xn->grad[r * d_c + i] += g[r * d_c + i] * sn->value[r];
        }
        if (sn->requires_grad) {
          double acc = 0.0;
          for (std::size_t i = 0; i < d_c; ++i) acc += g[r * d_c + i] * xn->value[r * d_c + i];
          sn->grad[r] += acc;
        }
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor mean_axis0(const Tensor& x) {
  if (x.ndim() != 2) fail("mean_axis0: expected 2-D tensor, got " + shape_str(x.shape()));
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  if (rows == 0) fail("mean_axis0: empty axis");
  std::vector<double> out(cols, 0.0);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out[c] += xv[r * cols + c];
  }
  const double inv = 1.0 / static_cast<double>(rows);
  for (double& v : out) v *= inv;
  auto node = make_node({cols}, std::move(out));
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    g_active_tape->push([xn, on, rows, cols, inv]() {
      if (!xn->requires_grad) return;
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < cols; ++c) xn->grad[r * cols + c] += on->grad[c] * inv;
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

// ------------------------------------------------------------- structure

Tensor concat_last(const std::vector<Tensor>& parts) {
  if (parts.empty()) fail("concat_last: no parts");
  Shape lead(parts[0].shape().begin(), parts[0].shape().end() - 1);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.ndim() != lead.size() + 1 || !std::equal(lead.begin(), lead.end(), p.shape().begin())) {
      fail("concat_last: leading shape mismatch " + shape_str(parts[0].shape()) + " vs " + shape_str(p.shape()));
    }
    total += p.shape().back();
  }
  const std::size_t rows = shape_numel(lead);
  Shape out_shape = lead;
  out_shape.push_back(total);
  std::vector<double> out(rows * total);
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t d = p.shape().back();
    const auto pv = p.data();
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy(pv.begin() + static_cast<std::ptrdiff_t>(r * d), pv.begin() + static_cast<std::ptrdiff_t>((r + 1) * d),
                out.begin() + static_cast<std::ptrdiff_t>(r * total + offset));
    }
    offset += d;
  }
  auto node = make_node(std::move(out_shape), std::move(out));
  bool record = false;
  if (g_active_tape != nullptr) {
    for (const Tensor& p : parts) record = record || p.requires_grad();
  }
  if (record) {
    mark_recorded(node);
    std::vector<NodePtr> srcs;
    std::vector<std::size_t> widths;
    for (const Tensor& p : parts) {
      srcs.push_back(p.handle());
      widths.push_back(p.shape().back());
    }
    NodePtr on = node;
    g_active_tape->push([srcs, widths, on, rows, total]() {
      std::size_t offset = 0;
      for (std::size_t pi = 0; pi < srcs.size(); ++pi) {
        const std::size_t d = widths[pi];
        if (srcs[pi]->requires_grad) {
          for (std::size_t r = 0; r < rows; ++r) {
            for (std::size_t i = 0; i < d; ++i) srcs[pi]->grad[r * d + i] += on->grad[r * total + offset + i];
          }
        }
        offset += d;
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor slice_last(const Tensor& x, std::size_t start, std::size_t len) {
  auto [rows, d] = rows_cols(x, "slice_last");
  if (start + len > d) {
    fail("slice_last: range [" + std::to_string(start) + ", " + std::to_string(start + len) + ") exceeds axis " +
         std::to_string(d));
  }
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  out_shape.push_back(len);
  std::vector<double> out(rows * len);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t i = 0; i < len; ++i) out[r * len + i] = xv[r * d + start + i];
  }
  auto node = make_node(std::move(out_shape), std::move(out));
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    const std::size_t rows_c = rows, d_c = d;
    g_active_tape->push([xn, on, rows_c, d_c, start, len]() {
      if (!xn->requires_grad) return;
      for (std::size_t r = 0; r < rows_c; ++r) {
        for (std::size_t i = 0; i < len; ++i) xn->grad[r * d_c + start + i] += on->grad[r * len + i];
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel()) {
    fail("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(new_shape));
  }
  auto node = make_node(std::move(new_shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    g_active_tape->push([xn, on]() {
      if (!xn->requires_grad) return;
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i];
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor stopgrad(const Tensor& x) {
  return Tensor::from_data(x.shape(), std::vector<double>(x.data().begin(), x.data().end()), false);
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) fail("dropout: rate must be in [0, 1)");
  if (rate == 0.0) return x;
  const double keep_inv = 1.0 / (1.0 - rate);
  auto mask = std::make_shared<std::vector<double>>(x.numel());
  std::vector<double> out(x.numel());
  const auto xv = x.data();
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double m = rng.uniform() < rate ? 0.0 : keep_inv;
    (*mask)[i] = m;
    out[i] = xv[i] * m;
  }
  auto node = make_node(x.shape(), std::move(out));
  if (should_record({&x})) {
    mark_recorded(node);
    NodePtr xn = x.handle(), on = node;
    g_active_tape->push([xn, on, mask]() {
      if (!xn->requires_grad) return;
      for (std::size_t i = 0; i < on->grad.size(); ++i) xn->grad[i] += on->grad[i] * (*mask)[i];
    });
  }
  return Tensor::wrap(std::move(node));
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
  if (table.ndim() != 2) fail("embedding_lookup: table must be 2-D, got " + shape_str(table.shape()));
  const std::size_t rows = table.dim(0), width = table.dim(1);
  std::vector<double> out(ids.size() * width);
  const auto tv = table.data();
  for (std::size_t b = 0; b < ids.size(); ++b) {
    if (ids[b] >= rows) {
      fail("embedding_lookup: id " + std::to_string(ids[b]) + " out of range [0, " + std::to_string(rows) + ")");
    }
    std::copy(tv.begin() + static_cast<std::ptrdiff_t>(ids[b] * width),
              tv.begin() + static_cast<std::ptrdiff_t>((ids[b] + 1) * width),
              out.begin() + static_cast<std::ptrdiff_t>(b * width));
  }
  auto node = make_node({ids.size(), width}, std::move(out));
  if (should_record({&table})) {
    mark_recorded(node);
    NodePtr tn = table.handle(), on = node;
    auto ids_copy = std::make_shared<std::vector<std::size_t>>(ids);
    g_active_tape->push([tn, on, ids_copy, width]() {
      if (!tn->requires_grad) return;
      for (std::size_t b = 0; b < ids_copy->size(); ++b) {
        for (std::size_t i = 0; i < width; ++i) {
          tn->grad[(*ids_copy)[b] * width + i] += on->grad[b * width + i];
        }
      }
    });
  }
  return Tensor::wrap(std::move(node));
}

std::vector<std::size_t> argmax_rows(const Tensor& x) {
  auto [rows, d] = rows_cols(x, "argmax_rows");
  std::vector<std::size_t> out(rows, 0);
  const auto xv = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < d; ++i) {
      if (xv[r * d + i] > xv[r * d + best]) best = i;
    }
    out[r] = best;
  }
  return out;
}

bool all_finite(const Tensor& x) {
  for (double v : x.data()) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace prism
