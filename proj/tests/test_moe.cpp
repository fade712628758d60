#include <doctest.h>

#include <cmath>

#include "gradcheck.hpp"
#include "prism/moe.hpp"

using namespace prism;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = rng.uniform(lo, hi);
  return Tensor::from_data(std::move(shape), std::move(data));
}

MoEConfig small_config(std::size_t k, OrthoMode mode) {
  MoEConfig cfg;
  cfg.context_dim = 6;
  cfg.input_dim = 6;
  cfg.hidden_dim = 8;
  cfg.feature_dim = 8;
  cfg.out_dim = 8;
  cfg.num_experts = k;
  cfg.ortho_mode = mode;
  cfg.head_activation = Activation::simnorm;
  cfg.simnorm.group_size = 4;
  return cfg;
}

double gram_offdiag_error(const std::vector<Tensor>& v, std::size_t batch) {
  double worst = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      for (std::size_t j = 0; j < v.size(); ++j) {
        const std::size_t d = v[0].shape().back();
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += v[i].at(b * d + c) * v[j].at(b * d + c);
        const double want = i == j ? 1.0 : 0.0;
        worst = std::max(worst, std::abs(dot - want));
      }
    }
  }
  return worst;
}

}  // namespace

TEST_CASE("gate weights examples") {
  Rng rng(1);
  MoEConfig cfg = small_config(4, OrthoMode::gram_schmidt);
  MoEBlock block(cfg, rng);
  std::fill(block.gate_weight.raw_data().begin(), block.gate_weight.raw_data().end(), 0.0);

  Tensor ctx = random_tensor({3, 6}, rng);
  GateOutput g = block.gate_weights(ctx, 1.0);
  for (std::size_t i = 0; i < g.weights.numel(); ++i) CHECK(g.weights.at(i) == doctest::Approx(0.25).epsilon(1e-12));
  for (std::size_t b = 0; b < 3; ++b) CHECK(g.entropy.at(b) == doctest::Approx(std::log(4.0)).epsilon(1e-12));

  CHECK_THROWS_AS(block.gate_weights(ctx, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(block.gate_weights(ctx, -1.0), std::invalid_argument);
}

TEST_CASE("temperature softmax sharpens logits") {
  // logits [2,0] at tau=0.5 -> softmax([4,0])
  Tensor logits = Tensor::from_data({1, 2}, {2, 0});
  Tensor w = softmax_last(scale(logits, 1.0 / 0.5));
  CHECK(w.at(0) == doctest::Approx(0.9820137900379085).epsilon(1e-12));
  CHECK(w.at(1) == doctest::Approx(0.017986209962091562).epsilon(1e-10));
}

TEST_CASE("monotone sharpening in tau") {
  Rng rng(5);
  MoEConfig cfg = small_config(4, OrthoMode::none);
  MoEBlock block(cfg, rng);
  Tensor ctx = random_tensor({4, 6}, rng, -2.0, 2.0);
  double prev = -1.0;
  for (double tau : {2.0, 1.5, 1.0, 0.7, 0.5}) {
    const double h = block.gate_weights(ctx, tau).mean_entropy();
    if (prev >= 0.0) CHECK(h <= prev + 1e-12);
    prev = h;
  }
}

TEST_CASE("gate entropy bounds and simplex") {
  Rng rng(6);
  MoEConfig cfg = small_config(6, OrthoMode::none);
  cfg.feature_dim = 8;
  MoEBlock block(cfg, rng);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor ctx = random_tensor({5, 6}, rng, -5.0, 5.0);
    GateOutput g = block.gate_weights(ctx, 0.8);
    for (std::size_t r = 0; r < 5; ++r) {
      double s = 0.0;
      for (std::size_t k = 0; k < 6; ++k) {
        CHECK(g.weights.at(r * 6 + k) >= 0.0);
        s += g.weights.at(r * 6 + k);
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
      CHECK(g.entropy.at(r) >= -1e-12);
      CHECK(g.entropy.at(r) <= std::log(6.0) + 1e-12);
    }
  }
}

TEST_CASE("expert stack structure") {
  Rng rng(2);
  MoEConfig cfg1 = small_config(1, OrthoMode::none);
  MoEBlock single(cfg1, rng);
  Tensor x = random_tensor({2, 6}, rng);
  auto cols = single.expert_stack(x);
  CHECK(cols.size() == 1);
  Tensor direct = single.trunk_l1[0].forward(single.trunk_l0[0].forward(x));
  for (std::size_t i = 0; i < direct.numel(); ++i) CHECK(cols[0].at(i) == direct.at(i));

  // parameter tying: identical trunks give identical columns
  MoEConfig cfg2 = small_config(2, OrthoMode::none);
  MoEBlock tied(cfg2, rng);
  for (auto [dst, src] : {std::pair{1, 0}}) {
    std::copy(tied.trunk_l0[src].weight.data().begin(), tied.trunk_l0[src].weight.data().end(),
              tied.trunk_l0[dst].weight.raw_data().begin());
    std::copy(tied.trunk_l1[src].weight.data().begin(), tied.trunk_l1[src].weight.data().end(),
              tied.trunk_l1[dst].weight.raw_data().begin());
  }
  auto tied_cols = tied.expert_stack(x);
  for (std::size_t i = 0; i < tied_cols[0].numel(); ++i) CHECK(tied_cols[0].at(i) == tied_cols[1].at(i));

  // paper-scale shape: d=512, K=4 gives a B x 512 x 4 stack
  MoEConfig big = small_config(4, OrthoMode::none);
  big.hidden_dim = 512;
  big.feature_dim = 512;
  big.out_dim = 512;
  big.simnorm.group_size = 8;
  MoEBlock wide(big, rng);
  auto wide_cols = wide.expert_stack(x);
  CHECK(wide_cols.size() == 4);
  CHECK(wide_cols[0].shape() == Shape{2, 512});
}

TEST_CASE("gram schmidt hand examples") {
  // orthonormal input is a fixed point up to the epsilon guard
  Tensor u1 = Tensor::from_data({1, 3}, {1, 0, 0});
  Tensor u2 = Tensor::from_data({1, 3}, {0, 1, 0});
  auto v = gram_schmidt({u1, u2}, 1e-8);
  CHECK(std::abs(v[0].at(0) - 1.0) < 1e-7);
  CHECK(std::abs(v[1].at(1) - 1.0) < 1e-7);
  CHECK(std::abs(v[0].at(1)) < 1e-12);

  // classical two-vector case
  Tensor a1 = Tensor::from_data({1, 2}, {1, 0});
  Tensor a2 = Tensor::from_data({1, 2}, {1, 1});
  auto w = gram_schmidt({a1, a2}, 1e-8);
  CHECK(w[0].at(0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(std::abs(w[0].at(1)) < 1e-12);
  CHECK(std::abs(w[1].at(0)) < 1e-6);
  CHECK(w[1].at(1) == doctest::Approx(1.0).epsilon(1e-7));

  // degenerate second column collapses without NaN
  Tensor b2 = Tensor::from_data({1, 2}, {2, 0});
  auto z = gram_schmidt({a1, b2}, 1e-8);
  CHECK(all_finite(z[1]));
  double n2 = std::hypot(z[1].at(0), z[1].at(1));
  CHECK(n2 < 1e-4);
}

TEST_CASE("gram schmidt orthonormality on random stacks") {
  Rng rng(77);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Tensor> u;
    for (int k = 0; k < 3; ++k) u.push_back(random_tensor({4, 8}, rng, -2.0, 2.0));
    auto v = gram_schmidt(u, 1e-8);
    CHECK(gram_offdiag_error(v, 4) < 1e-6);
  }
}

TEST_CASE("gram schmidt errors when d < K") {
  std::vector<Tensor> u;
  Rng rng(3);
  for (int k = 0; k < 3; ++k) u.push_back(random_tensor({2, 2}, rng));
  CHECK_THROWS_AS(gram_schmidt(u, 1e-8), std::invalid_argument);

  MoEConfig cfg = small_config(4, OrthoMode::gram_schmidt);
  cfg.feature_dim = 3;
  Rng r2(4);
  CHECK_THROWS_AS(MoEBlock(cfg, r2), std::invalid_argument);
}

TEST_CASE("gram schmidt gradients match finite differences") {
  Rng rng(15);
  std::vector<Tensor> u;
  for (int k = 0; k < 3; ++k) u.push_back(random_tensor({8, 8}, rng, -1.5, 1.5));
  std::vector<Tensor> weights;
  for (int k = 0; k < 3; ++k) weights.push_back(random_tensor({8, 8}, rng));
  const double err = testing::gradcheck(
      [&]() {
        auto v = gram_schmidt(u, 1e-8);
        Tensor acc = sum(mul(weights[0], v[0]));
        for (int k = 1; k < 3; ++k) acc = add(acc, sum(mul(weights[k], v[k])));
        return acc;
      },
      u);
  CHECK(err < 1e-4);
}

TEST_CASE("ortho penalty examples and iff property") {
  // orthonormal columns -> 0
  Tensor e1 = Tensor::from_data({1, 3}, {1, 0, 0});
  Tensor e2 = Tensor::from_data({1, 3}, {0, 1, 0});
  CHECK(ortho_penalty({e1, e2}).item() < 1e-12);

  // two identical unit columns -> ||[[1,1],[1,1]] - I||_F^2 = 2
  Tensor c = Tensor::from_data({1, 3}, {0, 0, 1});
  CHECK(ortho_penalty({c, c}).item() == doctest::Approx(2.0).epsilon(1e-6));

  // non-orthogonal columns -> strictly positive
  Tensor m = Tensor::from_data({1, 2}, {1, 1});
  Tensor n = Tensor::from_data({1, 2}, {1, 0});
  CHECK(ortho_penalty({m, n}).item() > 0.1);

  // scale invariance of the normalized-column penalty: orthogonal but not
  // unit-norm columns still score ~0
  Tensor s1 = Tensor::from_data({1, 2}, {3, 0});
  Tensor s2 = Tensor::from_data({1, 2}, {0, 0.5});
  CHECK(ortho_penalty({s1, s2}).item() < 1e-12);
}

TEST_CASE("load balance loss examples") {
  // uniform rows, argmax ties to index 0: f = (1,0,0,0), P = 1/4 -> loss 1
  Tensor uniform = Tensor::full({6, 4}, 0.25);
  CHECK(load_balance_loss(uniform).item() == doctest::Approx(1.0).epsilon(1e-12));

  // all rows one-hot on expert 0 with K = 4 -> loss 4
  std::vector<double> onehot(8 * 4, 0.0);
  for (int r = 0; r < 8; ++r) onehot[r * 4] = 1.0;
  CHECK(load_balance_loss(Tensor::from_data({8, 4}, std::move(onehot))).item() == doctest::Approx(4.0).epsilon(1e-12));

  // balanced hard routing achieves the minimum value 1
  std::vector<double> spread(4 * 4, 0.0);
  for (int r = 0; r < 4; ++r) spread[r * 4 + r] = 1.0;
  CHECK(load_balance_loss(Tensor::from_data({4, 4}, std::move(spread))).item() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("moe forward composition") {
  Rng rng(8);
  MoEConfig cfg = small_config(2, OrthoMode::gram_schmidt);
  cfg.use_head = false;  // bare residual mode isolates Alg. 1 line 13
  MoEBlock block(cfg, rng);

  Tensor z = random_tensor({3, 8}, rng);
  Tensor ctx = random_tensor({3, 6}, rng);
  Tensor x = random_tensor({3, 6}, rng);

  // zero trunks: mixture 0, output = z exactly
  for (auto* layers : {&block.trunk_l1}) {
    for (auto& l : *layers) {
      std::fill(l.weight.raw_data().begin(), l.weight.raw_data().end(), 0.0);
      std::fill(l.ln_gain.raw_data().begin(), l.ln_gain.raw_data().end(), 0.0);
    }
  }
  auto res = block.forward(z, ctx, x, 1.0);
  for (std::size_t i = 0; i < z.numel(); ++i) CHECK(res.output.at(i) == z.at(i));
}

TEST_CASE("moe mixture convex combination") {
  // w one-hot on expert j -> mixture = v_j; w = [0.5, 0.5] on orthogonal
  // unit columns -> componentwise average
  Tensor v1 = Tensor::from_data({1, 2}, {1, 0});
  Tensor v2 = Tensor::from_data({1, 2}, {0, 1});
  Tensor w = Tensor::from_data({1, 2}, {0.5, 0.5});
  Tensor m = add(scale_rows(v1, slice_last(w, 0, 1)), scale_rows(v2, slice_last(w, 1, 1)));
  CHECK(m.at(0) == doctest::Approx(0.5));
  CHECK(m.at(1) == doctest::Approx(0.5));

  Tensor one_hot = Tensor::from_data({1, 2}, {0.0, 1.0});
  Tensor m2 = add(scale_rows(v1, slice_last(one_hot, 0, 1)), scale_rows(v2, slice_last(one_hot, 1, 1)));
  CHECK(m2.at(0) == 0.0);
  CHECK(m2.at(1) == 1.0);
}

TEST_CASE("temperature controller") {
  TemperatureController ctl;
  ctl.total_steps = 1000;  // freeze window = first 50 steps

  // inside the freeze window tau stays at tau_init regardless of entropy
  CHECK(ctl.update(5.0, 0, 4) == doctest::Approx(1.8));
  CHECK(ctl.update(0.0, 49, 4) == doctest::Approx(1.8));

  // observed == target leaves tau unchanged
  const double target = 0.5 * std::log(4.0);
  const double before = ctl.tau;
  CHECK(ctl.update(target, 100, 4) == doctest::Approx(before));

  // above-target entropy sharpens (tau decreases)
  const double sharper = ctl.update(target + 1.0, 101, 4);
  CHECK(sharper == doctest::Approx(before - 0.02));

  // clamping at tau_min
  ctl.tau = 0.51;
  CHECK(ctl.update(target + 100.0, 200, 4) == doctest::Approx(0.5));
  // and at tau_max
  ctl.tau = 1.99;
  CHECK(ctl.update(target - 100.0, 300, 4) == doctest::Approx(2.0));
}

TEST_CASE("moe forward differentiable end to end") {
  Rng rng(23);
  MoEConfig cfg = small_config(3, OrthoMode::gram_schmidt);
  MoEBlock block(cfg, rng);
  Tensor z = random_tensor({2, 8}, rng);
  Tensor x = random_tensor({2, 6}, rng);
  Tensor target = random_tensor({2, 8}, rng);

  ParamList params;
  block.collect_params("moe", params);
  for (auto& p : params) p.tensor.set_requires_grad(true);

  {
    Tape tape;
    auto res = block.forward(z, x, x, 1.3);
    Tensor diff = sub(res.output, target);
    tape.backward(sum(mul(diff, diff)));
  }
  double gate_grad_norm = 0.0;
  for (double g : block.gate_weight.grad()) gate_grad_norm += g * g;
  CHECK(gate_grad_norm > 0.0);
  for (auto& p : params) {
    p.tensor.zero_grad();
    p.tensor.set_requires_grad(false);
  }
}
