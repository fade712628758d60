#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "prism/adam.hpp"
#include "prism/rng.hpp"
#include "prism/tensor.hpp"

using namespace prism;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data));
}

}  // namespace

TEST_CASE("elementwise basics") {
  Tensor a = Tensor::from_data({2}, {1, 2});
  Tensor b = Tensor::from_data({2}, {3, 4});
  Tensor c = add(a, b);
  CHECK(c.at(0) == 4.0);
  CHECK(c.at(1) == 6.0);

  CHECK(softplus(Tensor::scalar(0.0)).item() == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  CHECK(mish(Tensor::scalar(0.0)).item() == 0.0);

  CHECK(sub(a, b).at(0) == -2.0);
  CHECK(mul(a, b).at(1) == 8.0);
  CHECK(divide(b, a).at(1) == 2.0);
  CHECK(negate(a).at(0) == -1.0);
  CHECK(scale(a, 3.0).at(1) == 6.0);
}

TEST_CASE("elementwise error paths") {
  Tensor a = Tensor::from_data({2}, {1, 2});
  Tensor bad = Tensor::from_data({3}, {1, 2, 3});
  CHECK_THROWS_WITH_AS(add(a, bad), doctest::Contains("[2]"), std::invalid_argument);
  CHECK_THROWS_WITH_AS(add(a, bad), doctest::Contains("[3]"), std::invalid_argument);
  CHECK_THROWS_AS(log(Tensor::scalar(0.0)), std::invalid_argument);
  CHECK_THROWS_AS(log(Tensor::scalar(-1.0)), std::invalid_argument);
  CHECK_THROWS_AS(divide(a, Tensor::from_data({2}, {1, 0})), std::invalid_argument);
  CHECK_THROWS_AS(reciprocal(Tensor::scalar(0.0)), std::invalid_argument);
}

TEST_CASE("broadcast cases") {
  // scalar
  Tensor x = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor s = Tensor::scalar(10.0);
  Tensor y = add(x, s);
  CHECK(y.at(3) == 14.0);
  // trailing suffix [B,d] + [d]
  Tensor row = Tensor::from_data({2}, {100, 200});
  Tensor z = add(x, row);
  CHECK(z.at(0) == 101.0);
  CHECK(z.at(3) == 204.0);
  // symmetric order
  Tensor z2 = sub(row, x);
  CHECK(z2.at(2) == 97.0);
}

TEST_CASE("matmul examples") {
  Tensor eye = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor p = matmul(eye, m);
  for (std::size_t i = 0; i < 4; ++i) CHECK(p.at(i) == m.at(i));

  Tensor a = Tensor::from_data({1, 2}, {1, 1});
  Tensor b = Tensor::from_data({2, 1}, {2, 3});
  CHECK(matmul(a, b).item() == 5.0);

  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("matmul gradient matches hand value and finite differences") {
  Tensor a = Tensor::from_data({2, 2}, {1, 0, 0, 1});
  Tensor b = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  a.set_requires_grad(true);
  {
    Tape tape;
    Tensor loss = sum(matmul(a, b));
    tape.backward(loss);
  }
  CHECK(a.grad()[0] == doctest::Approx(3.0));
  CHECK(a.grad()[1] == doctest::Approx(7.0));
  CHECK(a.grad()[2] == doctest::Approx(3.0));
  CHECK(a.grad()[3] == doctest::Approx(7.0));
  a.set_requires_grad(false);

  Rng rng(7);
  Tensor ra = random_tensor({3, 4}, rng);
  Tensor rb = random_tensor({4, 2}, rng);
  double err = testing::gradcheck([&]() { return sum(matmul(ra, rb)); }, {ra, rb});
  CHECK(err < 1e-5);
}

TEST_CASE("reductions and norms") {
  Tensor u = softmax_last(Tensor::from_data({3}, {0, 0, 0}));
  for (std::size_t i = 0; i < 3; ++i) CHECK(u.at(i) == doctest::Approx(1.0 / 3).epsilon(1e-12));

  CHECK(l2_norm(Tensor::from_data({2}, {3, 4})).item() == doctest::Approx(5.0).epsilon(1e-15));

  Tensor sm = softmax_last(Tensor::from_data({2}, {2, 0}));
  CHECK(sm.at(0) == doctest::Approx(0.8807970779778823).epsilon(1e-12));
  CHECK(sm.at(1) == doctest::Approx(0.11920292202211755).epsilon(1e-12));
}

TEST_CASE("softmax rows are a distribution") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor({4, 6}, rng, -30.0, 30.0);
    Tensor y = softmax_last(x);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0.0;
      for (std::size_t i = 0; i < 6; ++i) {
        CHECK(y.at(r * 6 + i) >= 0.0);
        s += y.at(r * 6 + i);
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("backward basics") {
  Tensor x = Tensor::from_data({3}, {1, 2, 3}, true);
  {
    Tape tape;
    Tensor loss = sum(x);
    tape.backward(loss);
  }
  for (std::size_t i = 0; i < 3; ++i) CHECK(x.grad()[i] == 1.0);
  x.zero_grad();

  Tensor x2 = Tensor::from_data({2}, {1, 2}, true);
  {
    Tape tape;
    Tensor loss = sum(mul(x2, x2));
    tape.backward(loss);
  }
  CHECK(x2.grad()[0] == doctest::Approx(2.0));
  CHECK(x2.grad()[1] == doctest::Approx(4.0));

  Tensor m = Tensor::scalar(1.0);
  double err = testing::gradcheck([&]() { return mish(m); }, {m});
  CHECK(err < 1e-6);
}

TEST_CASE("backward error paths") {
  Tensor x = Tensor::from_data({2}, {1, 2}, true);
  Tape tape;
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(tape.backward(y), std::invalid_argument);  // non-scalar
  Tensor loss = sum(y);
  tape.backward(loss);
  CHECK_THROWS_WITH_AS(tape.backward(loss), doctest::Contains("already consumed"), std::runtime_error);
}

TEST_CASE("grad accumulates across uses; unreached leaves stay zero") {
  Tensor x = Tensor::scalar(3.0, true);
  Tensor unused = Tensor::scalar(5.0, true);
  {
    Tape tape;
    Tensor loss = sum(add(x, x));
    tape.backward(loss);
  }
  CHECK(x.grad()[0] == 2.0);
  CHECK(unused.grad()[0] == 0.0);
}

TEST_CASE("no recording without a tape") {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = mul(x, x);
  CHECK_FALSE(y.requires_grad());
  Tape tape;
  {
    NoGradGuard guard;
    Tensor z = mul(x, x);
    CHECK_FALSE(z.requires_grad());
  }
  Tensor w = mul(x, x);
  CHECK(w.requires_grad());
}

TEST_CASE("forward determinism") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tensor a = random_tensor({4, 4}, rng);
    Tensor b = random_tensor({4, 4}, rng);
    Tensor y = softmax_last(matmul(tanh(a), b));
    return std::vector<double>(y.data().begin(), y.data().end());
  };
  auto r1 = run(123), r2 = run(123);
  CHECK(r1 == r2);
}

TEST_CASE("gradcheck sweep over primitives") {
  Rng rng(42);
  const double tol = 1e-5;

  Tensor a = random_tensor({3, 5}, rng);
  Tensor b = random_tensor({3, 5}, rng);
  CHECK(testing::gradcheck([&]() { return sum(mul(a, b)); }, {a, b}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(divide(a, add_scalar(mul(b, b), 1.0))); }, {a, b}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(tanh(a)); }, {a}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(softplus(a)); }, {a}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(exp(a)); }, {a}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(mish(a)); }, {a}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(symexp(a)); }, {a}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(minimum(a, b)); }, {a, b}) < tol);
  CHECK(testing::gradcheck([&]() { return l2_norm(a); }, {a}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(mul(b, softmax_last(a))); }, {a}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(mul(a, log_softmax_last(b))); }, {a, b}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(dot_rows(a, b)); }, {a, b}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(norm_rows(a)); }, {a}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(mean_axis0(mul(a, b))); }, {a, b}) < tol);

  Tensor spos = random_tensor({3}, rng, 0.5, 2.0);
  CHECK(testing::gradcheck([&]() { return sum(scale_rows(a, spos)); }, {a, spos}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(log(spos)); }, {spos}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(reciprocal(spos)); }, {spos}) < tol);

  Tensor gain = random_tensor({5}, rng, 0.5, 1.5);
  Tensor shift = random_tensor({5}, rng);
  CHECK(testing::gradcheck([&]() { return sum(mul(b, layer_norm_last(a, gain, shift))); }, {a, gain, shift}) < 1e-4);

  Tensor sx = random_tensor({2, 8}, rng);
  Tensor weights = random_tensor({2, 8}, rng);
  CHECK(testing::gradcheck([&]() { return sum(mul(weights, simnorm(sx, 4, 1.3))); }, {sx}) < tol);

  // structure ops
  Tensor p1 = random_tensor({3, 2}, rng);
  Tensor p2 = random_tensor({3, 3}, rng);
  CHECK(testing::gradcheck([&]() { return sum(mul(concat_last({p1, p2}), concat_last({p1, p2}))); }, {p1, p2}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(slice_last(p2, 1, 2)); }, {p2}) < tol);
  CHECK(testing::gradcheck([&]() { return sum(mul(reshape(p2, {9}), reshape(p2, {9}))); }, {p2}) < tol);

  Tensor table = random_tensor({4, 3}, rng);
  CHECK(testing::gradcheck([&]() { return sum(mul(embedding_lookup(table, {1, 3, 1}),
                                                  embedding_lookup(table, {1, 3, 1}))); },
                           {table}) < tol);

  Tensor lx = random_tensor({4, 6}, rng);
  Tensor lw = random_tensor({3, 6}, rng);
  Tensor lb = random_tensor({3}, rng);
  CHECK(testing::gradcheck([&]() { return sum(mul(linear(lx, lw, lb), linear(lx, lw, lb))); }, {lx, lw, lb}) < tol);
}

TEST_CASE("layer_norm normalizes before affine") {
  Rng rng(5);
  Tensor x = random_tensor({6, 8}, rng, -3.0, 3.0);
  Tensor gain = Tensor::full({8}, 1.0);
  Tensor shift = Tensor::zeros({8});
  Tensor y = layer_norm_last(x, gain, shift);
  for (std::size_t r = 0; r < 6; ++r) {
    double mu = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 8; ++i) mu += y.at(r * 8 + i);
    mu /= 8.0;
    for (std::size_t i = 0; i < 8; ++i) {
      const double c = y.at(r * 8 + i) - mu;
      var += c * c;
    }
    var /= 8.0;
    CHECK(std::abs(mu) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-6);
  }
}

TEST_CASE("stopgrad detaches") {
  Tensor x = Tensor::scalar(2.0, true);
  {
    Tape tape;
    Tensor y = mul(x, stopgrad(mul(x, x)));  // d/dx = x^2 treated constant = 4
    tape.backward(sum(y));
  }
  CHECK(x.grad()[0] == doctest::Approx(4.0));
}

TEST_CASE("adam clipping and update") {
  // global norm 40 with clip 20: gradients halved before the update
  Tensor p = Tensor::zeros({1}, true);
  p.raw_grad()[0] = 40.0;
  ParamList params{{"p", p}};
  AdamState state;
  adam_step(params, state, 20.0);
  CHECK(state.m[0][0] == doctest::Approx(0.1 * 20.0).epsilon(1e-12));

  // below threshold: unchanged
  Tensor q = Tensor::zeros({1}, true);
  q.raw_grad()[0] = 1.0;
  ParamList params2{{"q", q}};
  AdamState state2;
  adam_step(params2, state2, 20.0);
  CHECK(state2.m[0][0] == doctest::Approx(0.1).epsilon(1e-12));

  // one hand-computed step on f(theta) = theta^2 at theta0 = 1, lr = 0.1
  Tensor theta = Tensor::from_data({1}, {1.0}, true);
  {
    Tape tape;
    Tensor loss = sum(mul(theta, theta));
    tape.backward(loss);
  }
  ParamList params3{{"theta", theta}};
  AdamState state3;
  state3.learning_rate = 0.1;
  adam_step(params3, state3, 20.0);
  const double expected = 1.0 - 0.1 * (2.0 / (2.0 + 1e-8));
  CHECK(theta.at(0) == doctest::Approx(expected).epsilon(1e-12));
  CHECK(theta.at(0) < 1.0);
  CHECK(theta.grad()[0] == 0.0);  // grads zeroed after the step

  // NaN grad names the parameter
  Tensor r = Tensor::zeros({1}, true);
  r.raw_grad()[0] = std::nan("");
  ParamList params4{{"layer.weight", r}};
  AdamState state4;
  CHECK_THROWS_WITH_AS(adam_step(params4, state4, 20.0), doctest::Contains("layer.weight"), std::runtime_error);
}

TEST_CASE("rng determinism and fork independence") {
  Rng a(99), b(99);
  for (int i = 0; i < 100; ++i) CHECK(a.normal() == b.normal());
  Rng c = Rng(99).fork("stream-a");
  Rng d = Rng(99).fork("stream-b");
  CHECK(c.bits() != d.bits());
}
