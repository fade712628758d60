#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "prism/bins.hpp"

using namespace prism;

TEST_CASE("symlog pair") {
  CHECK(symlog(0.0) == 0.0);
  CHECK(symlog(1.0) == doctest::Approx(std::log(2.0)).epsilon(1e-15));
  CHECK(symlog(-1.0) == doctest::Approx(-std::log(2.0)).epsilon(1e-15));
  for (double x : {-5.0, -0.3, 0.0, 0.7, 12.0}) {
    CHECK(symexp_scalar(symlog(x)) == doctest::Approx(x).epsilon(1e-12));
  }
}

TEST_CASE("two hot structure and round trip") {
  BinCodec codec;
  CHECK(codec.num_bins() == 101);

  for (double x : {-20.0, -3.0, -1.0, -0.25, 0.0, 0.5, 1.0, 4.0, 100.0}) {
    auto t = codec.two_hot(x);
    std::size_t nonzero = 0;
    double mass = 0.0;
    for (double v : t) {
      if (v != 0.0) ++nonzero;
      mass += v;
    }
    CHECK(nonzero <= 2);
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(codec.decode_probs(t) == doctest::Approx(x).epsilon(1e-6));
  }

  // decode(two_hot(x)) is monotone in x
  double prev = -1e9;
  for (double x = -8.0; x <= 8.0; x += 0.37) {
    const double d = codec.decode_probs(codec.two_hot(x));
    CHECK(d >= prev);
    prev = d;
  }
}

TEST_CASE("two hot for r = 1 brackets symlog(1)") {
  BinCodec codec;
  auto t = codec.two_hot(1.0);
  // grid spacing 0.2; ln 2 lies between centers 0.6 (bin 53) and 0.8 (bin 54)
  const double frac = (std::log(2.0) - 0.6) / 0.2;
  CHECK(t[53] == doctest::Approx(1.0 - frac).epsilon(1e-12));
  CHECK(t[54] == doctest::Approx(frac).epsilon(1e-12));
  for (std::size_t i = 0; i < 101; ++i) {
    if (i != 53 && i != 54) CHECK(t[i] == 0.0);
  }
}

TEST_CASE("decode symmetry gives zero") {
  BinCodec codec;
  // uniform logits: symmetric support, expectation 0
  Tensor uniform = Tensor::zeros({2, 101});
  Tensor d = codec.decode_logits(uniform);
  CHECK(std::abs(d.at(0)) < 1e-12);

  // one-hot logit at the center bin is symmetric about 0 as well
  std::vector<double> spike(101, 0.0);
  spike[50] = 1.0;
  Tensor d2 = codec.decode_logits(Tensor::from_data({1, 101}, std::move(spike)));
  CHECK(std::abs(d2.at(0)) < 1e-12);

  // probability mass entirely at the center decodes to exactly 0
  std::vector<double> probs(101, 0.0);
  probs[50] = 1.0;
  CHECK(codec.decode_probs(probs) == 0.0);
}

TEST_CASE("cross entropy and decode are differentiable") {
  BinCodec codec(11, 5.0);
  Rng rng(4);
  std::vector<double> raw(2 * 11);
  for (double& v : raw) v = rng.uniform(-1.0, 1.0);
  Tensor logits = Tensor::from_data({2, 11}, std::move(raw));
  Tensor target = codec.two_hot_rows({0.7, -2.0});

  const double ce_err = prism::testing::gradcheck([&]() { return codec.cross_entropy(logits, target); }, {logits});
  CHECK(ce_err < 1e-5);

  const double dec_err = prism::testing::gradcheck([&]() { return sum(codec.decode_logits(logits)); }, {logits});
  CHECK(dec_err < 1e-5);
}

TEST_CASE("cross entropy minimized at the target") {
  BinCodec codec(21, 5.0);
  Tensor target = codec.two_hot_rows({1.3});
  // logits proportional to log target probabilities minimize CE; compare
  // against a perturbed vector
  std::vector<double> ideal(21, -30.0);
  for (std::size_t i = 0; i < 21; ++i) {
    if (target.at(i) > 0.0) ideal[i] = std::log(target.at(i));
  }
  Tensor best = Tensor::from_data({1, 21}, std::vector<double>(ideal));
  ideal[3] += 5.0;
  Tensor worse = Tensor::from_data({1, 21}, std::move(ideal));
  CHECK(codec.cross_entropy(best, target).item() < codec.cross_entropy(worse, target).item());
}
