#include <doctest.h>

#include <cmath>
#include <functional>
#include <limits>
#include <string>

#include "vqg/grad_check.hpp"
#include "vqg/ops.hpp"
#include "vqg/optim.hpp"
#include "vqg/rng.hpp"

using namespace vqg;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), true);
}

// Values bounded away from zero so relu/abs-style kinks are never crossed by +-h.
Tensor random_away_from_zero(Shape shape, Rng& rng) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) {
    x = rng.uniform(0.1, 1.0);
    if (rng.uniform() < 0.5) x = -x;
  }
  return Tensor(std::move(shape), std::move(v), true);
}

// A fixed random projection makes a scalar out of any tensor without
// symmetries that could hide gradient bugs.
Tensor weighted_sum(const Tensor& x, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(x.numel());
  for (double& v : w) v = rng.uniform(-1.0, 1.0);
  return sum(mul(x, Tensor(x.shape(), std::move(w))));
}

}  // namespace

TEST_CASE("matmul: identity and hand-computed products") {
  Tensor id({2, 2}, {1, 0, 0, 1});
  Tensor b({2, 2}, {3, 4, 5, 6});
  Tensor c = matmul(id, b);
  CHECK(std::vector<double>(c.data().begin(), c.data().end()) == std::vector<double>{3, 4, 5, 6});

  Tensor row({1, 2}, {1, 2});
  Tensor col({2, 1}, {3, 4});
  CHECK(matmul(row, col).item() == 11.0);
}

TEST_CASE("matmul: shape mismatch names both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({2, 2});
  try {
    matmul(a, b);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("[2x2]") != std::string::npos);
  }
}

TEST_CASE("matmul: gradient of sum(AB) wrt A is the broadcast row sums of B") {
  Rng rng(11);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 5}, rng);
  sum(matmul(a, b)).backward();
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 4; ++k) {
      double row_sum = 0.0;
      for (std::size_t n = 0; n < 5; ++n) row_sum += b.data()[k * 5 + n];
      CHECK(a.grad()[i * 4 + k] == doctest::Approx(row_sum).epsilon(1e-12));
    }
  const double err = grad_check([&] { return sum(matmul(a, b)); }, {a, b}).max_rel_error;
  CHECK(err < 1e-6);
}

TEST_CASE("softmax: examples and invariants") {
  Tensor z({3}, {0, 0, 0});
  const Tensor zs = softmax(z, 0);
  for (double v : zs.data()) CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  Tensor big({2}, {1000, 0});
  Tensor s = softmax(big, 0);
  CHECK(s.data()[0] == doctest::Approx(1.0));
  CHECK(s.data()[1] < 1e-300);

  Tensor x({3}, {1, 2, 3});
  Tensor y = softmax(x, 0);
  // e^k / (e + e^2 + e^3)
  const double zsum = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(y.data()[0] == doctest::Approx(std::exp(1.0) / zsum).epsilon(1e-14));
  CHECK(y.data()[0] == doctest::Approx(0.09003057).epsilon(1e-7));
  CHECK(y.data()[1] == doctest::Approx(0.24472847).epsilon(1e-7));
  CHECK(y.data()[2] == doctest::Approx(0.66524096).epsilon(1e-7));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor t = random_tensor({4, 7}, rng, -5, 5);
    const double shift = rng.uniform(-50, 50);
    std::vector<double> shifted(t.data().begin(), t.data().end());
    for (double& v : shifted) v += shift;
    Tensor a = softmax(t, 1);
    Tensor b = softmax(Tensor({4, 7}, shifted), 1);
    for (std::size_t r = 0; r < 4; ++r) {
      double total = 0.0;
      for (std::size_t c = 0; c < 7; ++c) total += a.data()[r * 7 + c];
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) <= 1e-12);
  }
}

TEST_CASE("softmax: non-last axis") {
  Tensor x({2, 2}, {0, 1, 0, 1});
  Tensor y = softmax(x, 0);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.5));
}

TEST_CASE("layer_norm: examples") {
  Tensor gain = Tensor::full({4}, 1.0);
  Tensor bias = Tensor::zeros({4});
  Tensor constant({4}, {2, 2, 2, 2});
  const Tensor normed = layer_norm(constant, gain, bias, 1e-5);
  for (double v : normed.data()) CHECK(v == 0.0);

  Tensor x({2}, {1, 3});
  Tensor y = layer_norm(x, Tensor::full({2}, 1.0), Tensor::zeros({2}), 0.0);
  CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-15));

  Rng rng(5);
  Tensor in = random_tensor({3, 6}, rng);
  Tensor g = random_tensor({6}, rng);
  Tensor b = random_tensor({6}, rng);
  const double err =
      grad_check([&] { return weighted_sum(layer_norm(in, g, b, 1e-5), 1); }, {in, g, b}).max_rel_error;
  CHECK(err < 1e-5);
}

TEST_CASE("batch_norm_1d: train, eval, degenerate batch") {
  Tensor x({2, 1}, {1, 3});
  Tensor gain = Tensor::full({1}, 1.0);
  Tensor bias = Tensor::zeros({1});
  BatchNormState state(1);
  Tensor y = batch_norm_1d(x, gain, bias, state, NormMode::Train, 0.0);
  CHECK(y.data()[0] == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK(y.data()[1] == doctest::Approx(1.0).epsilon(1e-15));
  // running stats moved toward the batch statistics (mean 2, unbiased var 2)
  CHECK(state.running_mean[0] == doctest::Approx(0.2));
  CHECK(state.running_var[0] == doctest::Approx(0.9 + 0.1 * 2.0));

  BatchNormState unit(3);
  Tensor g3({3}, {2, 2, 2});
  Tensor b3({3}, {1, 1, 1});
  Tensor e({1, 3}, {0.5, -1, 4});
  Tensor ye = batch_norm_1d(e, g3, b3, unit, NormMode::Eval, 0.0);
  CHECK(ye.data()[0] == doctest::Approx(2.0));
  CHECK(ye.data()[1] == doctest::Approx(-1.0));
  CHECK(ye.data()[2] == doctest::Approx(9.0));

  BatchNormState s1(2);
  CHECK_THROWS_AS(batch_norm_1d(Tensor::zeros({1, 2}), Tensor::full({2}, 1.0), Tensor::zeros({2}),
                                s1, NormMode::Train),
                  DimensionError);

  Rng rng(9);
  Tensor in = random_tensor({5, 4}, rng);
  Tensor g = random_tensor({4}, rng);
  Tensor b = random_tensor({4}, rng);
  BatchNormState st(4);
  const double err = grad_check(
      [&] { return weighted_sum(batch_norm_1d(in, g, b, st, NormMode::Train), 2); }, {in, g, b})
                         .max_rel_error;
  CHECK(err < 1e-5);
}

TEST_CASE("cross_entropy: examples, masking and errors") {
  Tensor uniform = Tensor::zeros({1, 1, 4});
  const std::vector<int> t0{2};
  CHECK(cross_entropy(uniform, t0, -1).item() == doctest::Approx(std::log(4.0)).epsilon(1e-15));
  CHECK(cross_entropy(uniform, t0, -1).item() == doctest::Approx(1.386294).epsilon(1e-6));

  double previous = std::numeric_limits<double>::infinity();
  for (double margin : {1.0, 10.0, 100.0}) {
    Tensor l({1, 3}, {0.0, margin, 0.0});
    const std::vector<int> t{1};
    const double loss = cross_entropy(l, t, -1).item();
    CHECK(loss < previous);
    previous = loss;
  }
  CHECK(previous < 1e-40);

  Tensor two({1, 2}, {0.0, std::log(3.0)});
  const std::vector<int> t1{1};
  CHECK(cross_entropy(two, t1, -1).item() == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-15));
  CHECK(cross_entropy(two, t1, -1).item() == doctest::Approx(0.287682).epsilon(1e-6));

  const std::vector<int> all_ignored{0, 0};
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({2, 3}), all_ignored, 0), Error);
  const std::vector<int> out_of_range{5};
  CHECK_THROWS_AS(cross_entropy(Tensor::zeros({1, 3}), out_of_range, 0), DimensionError);
}

TEST_CASE("cross_entropy: ignored positions never change the loss") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    Tensor base = random_tensor({1, 3, 5}, rng, -3, 3);
    const std::vector<int> targets{1, 4, 2};
    const double l0 = cross_entropy(base, targets, 0).item();

    std::vector<double> extended(base.data().begin(), base.data().end());
    for (int k = 0; k < 10; ++k) extended.push_back(rng.uniform(-10, 10));
    Tensor more({1, 5, 5}, extended, true);
    const std::vector<int> t2{1, 4, 2, 0, 0};
    CHECK(cross_entropy(more, t2, 0).item() == l0);

    cross_entropy(more, t2, 0).backward();
    for (std::size_t i = 15; i < 25; ++i) CHECK(more.grad()[i] == 0.0);
  }
}

TEST_CASE("mse_l2: examples and gradient") {
  Tensor a({2}, {0, 0}, true);
  Tensor b({2}, {3, 4});
  CHECK(mse_l2(b, b).item() == 0.0);
  CHECK(mse_l2(a, b).item() == 12.5);
  mse_l2(a, b).backward();
  CHECK(a.grad()[0] == doctest::Approx(2.0 * (0 - 3) / 2));
  CHECK(a.grad()[1] == doctest::Approx(2.0 * (0 - 4) / 2));
  CHECK_THROWS_AS(mse_l2(a, Tensor::zeros({3})), DimensionError);
  Rng rng(3);
  Tensor p = random_tensor({3, 2}, rng);
  Tensor q = random_tensor({3, 2}, rng);
  CHECK(grad_check([&] { return mse_l2(p, q); }, {p, q}).max_rel_error < 1e-6);
}

TEST_CASE("backward: basics") {
  Tensor x = Tensor::scalar(2.0, true);
  Tensor y = Tensor::scalar(3.0, true);
  mul(x, y).backward();
  CHECK(x.grad()[0] == 3.0);
  CHECK(y.grad()[0] == 2.0);

  Tensor frozen = Tensor::scalar(4.0, false);
  Tensor w = Tensor::scalar(1.5, true);
  mul(frozen, w).backward();
  CHECK_FALSE(frozen.has_grad());
  CHECK(w.has_grad());

  CHECK_THROWS_AS(Tensor::zeros({2}, true).backward(), DimensionError);
}

TEST_CASE("backward: softmax followed by cross entropy matches finite differences") {
  Rng rng(21);
  Tensor logits = random_tensor({2, 3, 6}, rng, -2, 2);
  const std::vector<int> targets{1, 0, 5, 2, 3, 0};
  const double err = grad_check(
      [&](const Tensor& l) {
        // log of a softmax probability routed through the generic softmax op
        Tensor p = softmax(l, 2);
        return cross_entropy(p, targets, 0);
      },
      logits);
  CHECK(err < 1e-4);
}

TEST_CASE("backward: a second sweep without zeroing doubles every gradient exactly") {
  Rng rng(4);
  Tensor a = random_tensor({3, 4}, rng);
  Tensor b = random_tensor({4, 2}, rng);
  Tensor g = random_tensor({2}, rng);
  Tensor bias = random_tensor({2}, rng);
  Tensor loss = mean(layer_norm(relu(matmul(a, b)), g, bias));
  loss.backward();
  std::vector<double> first(a.grad().begin(), a.grad().end());
  std::vector<double> first_g(g.grad().begin(), g.grad().end());
  loss.backward();
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(a.grad()[i] == 2.0 * first[i]);
  for (std::size_t i = 0; i < first_g.size(); ++i) CHECK(g.grad()[i] == 2.0 * first_g[i]);
}

TEST_CASE("forward ops reject non-finite results") {
  Tensor x({2}, {std::numeric_limits<double>::max(), std::numeric_limits<double>::max()});
  CHECK_THROWS_AS(add(x, x), NumericError);
  Tensor nan({1}, {std::nan("")});
  CHECK_THROWS_AS(scale(nan, 1.0), NumericError);
}

TEST_CASE("grad_check: linear functions are exact; relu checked away from its kink") {
  Rng rng(8);
  Tensor x = random_tensor({5}, rng);
  Tensor w({5}, {1, -2, 3, 0.5, 4});
  CHECK(grad_check([&](const Tensor& t) { return sum(mul(t, w)); }, x) < 1e-9);

  Tensor r = random_away_from_zero({10}, rng);
  CHECK(grad_check([&](const Tensor& t) { return weighted_sum(relu(t), 5); }, r) < 1e-9);
}

TEST_CASE("property: every differentiable op passes finite differences over 10 seeds") {
  using Fn = std::function<GradCheckReport(Rng&)>;
  const std::vector<std::pair<std::string, Fn>> cases = {
      {"matmul",
       [](Rng& g) {
         Tensor a = random_tensor({2, 3, 4}, g), b = random_tensor({4, 3}, g);
         return grad_check([&] { return weighted_sum(matmul(a, b), 1); }, {a, b});
       }},
      {"bmm",
       [](Rng& g) {
         Tensor a = random_tensor({2, 3, 4}, g), b = random_tensor({2, 4, 5}, g);
         return grad_check([&] { return weighted_sum(bmm(a, b), 1); }, {a, b});
       }},
      {"bmm_t",
       [](Rng& g) {
         Tensor a = random_tensor({2, 3, 4}, g), b = random_tensor({2, 5, 4}, g);
         return grad_check([&] { return weighted_sum(bmm(a, b, true), 1); }, {a, b});
       }},
      {"add_sub_mul_scale",
       [](Rng& g) {
         Tensor a = random_tensor({3, 2}, g), b = random_tensor({3, 2}, g);
         return grad_check(
             [&] { return weighted_sum(scale(mul(add(a, b), sub(a, b)), 0.7), 1); }, {a, b});
       }},
      {"add_bias",
       [](Rng& g) {
         Tensor a = random_tensor({2, 3, 4}, g), b = random_tensor({4}, g);
         return grad_check([&] { return weighted_sum(add_bias(a, b), 1); }, {a, b});
       }},
      {"relu",
       [](Rng& g) {
         Tensor a = random_away_from_zero({4, 5}, g);
         return grad_check([&] { return weighted_sum(relu(a), 1); }, {a});
       }},
      {"softmax",
       [](Rng& g) {
         Tensor a = random_tensor({3, 4, 5}, g, -3, 3);
         return grad_check([&] { return weighted_sum(softmax(a, 1), 1); }, {a});
       }},
      {"masked_softmax",
       [](Rng& g) {
         Tensor a = random_tensor({4, 3, 3}, g, -3, 3);
         const std::vector<std::uint8_t> keys{1, 1, 0, 1, 0, 1};
         const AttentionMask m = AttentionMask::causal(keys, 2, 3);
         return grad_check([&] { return weighted_sum(masked_softmax(a, m, 2), 1); }, {a});
       }},
      {"layer_norm",
       [](Rng& g) {
         Tensor a = random_tensor({3, 6}, g), w = random_tensor({6}, g), b = random_tensor({6}, g);
         return grad_check([&] { return weighted_sum(layer_norm(a, w, b), 1); }, {a, w, b});
       }},
      {"batch_norm_1d",
       [](Rng& g) {
         Tensor a = random_tensor({4, 3}, g), w = random_tensor({3}, g), b = random_tensor({3}, g);
         BatchNormState st(3);
         return grad_check(
             [&] { return weighted_sum(batch_norm_1d(a, w, b, st, NormMode::Train), 1); }, {a, w, b});
       }},
      {"cross_entropy",
       [](Rng& g) {
         Tensor a = random_tensor({2, 3, 5}, g, -2, 2);
         const std::vector<int> t{1, 0, 4, 2, 0, 3};
         return grad_check([&] { return cross_entropy(a, t, 0); }, {a});
       }},
      {"mse_l2",
       [](Rng& g) {
         Tensor a = random_tensor({3, 3}, g), b = random_tensor({3, 3}, g);
         return grad_check([&] { return mse_l2(a, b); }, {a, b});
       }},
      {"embedding",
       [](Rng& g) {
         Tensor table = random_tensor({5, 3}, g);
         const std::vector<int> ids{0, 4, 4, 2};
         return grad_check([&] { return weighted_sum(embedding(table, ids, {2, 2}), 1); }, {table});
       }},
      {"concat_slice_reshape",
       [](Rng& g) {
         Tensor a = random_tensor({2, 2, 3}, g), b = random_tensor({2, 1, 3}, g);
         return grad_check(
             [&] {
               Tensor c = concat({a, b}, 1);
               return weighted_sum(reshape(slice(c, 1, 1, 2), {4, 3}), 1);
             },
             {a, b});
       }},
      {"split_merge_heads",
       [](Rng& g) {
         Tensor a = random_tensor({2, 3, 4}, g);
         return grad_check(
             [&] { return weighted_sum(merge_heads(scale(split_heads(a, 2), 1.5), 2), 1); }, {a});
       }},
      {"masked_mean_pool",
       [](Rng& g) {
         Tensor a = random_tensor({2, 3, 2}, g);
         const std::vector<std::uint8_t> m{1, 0, 1, 0, 0, 1};
         return grad_check([&] { return weighted_sum(masked_mean_pool(a, m), 1); }, {a});
       }},
      {"conv2d",
       [](Rng& g) {
         Tensor x = random_tensor({2, 2, 4, 4}, g), w = random_tensor({3, 2, 3, 3}, g),
                b = random_tensor({3}, g);
         return grad_check([&] { return weighted_sum(conv2d(x, w, b, 1), 1); }, {x, w, b});
       }},
      {"avg_pool2d",
       [](Rng& g) {
         Tensor x = random_tensor({1, 2, 4, 4}, g);
         return grad_check([&] { return weighted_sum(avg_pool2d(x, 2), 1); }, {x});
       }},
  };
  for (const auto& [name, fn] : cases) {
    double worst = 0.0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(1000 + seed);
      worst = std::max(worst, fn(rng).max_rel_error);
    }
    INFO(name);
    CHECK(worst <= 1e-4);
  }
}

TEST_CASE("masked_softmax: disallowed keys get exactly zero weight") {
  Tensor s({1, 2, 3}, {5, 1, 9, 2, 2, 2});
  const std::vector<std::uint8_t> keys{1, 1, 0};
  Tensor y = masked_softmax(s, AttentionMask::from_keys(keys, 1, 2, 3), 1);
  CHECK(y.data()[2] == 0.0);
  CHECK(y.data()[5] == 0.0);
  CHECK(y.data()[3] == doctest::Approx(0.5));
  const std::vector<std::uint8_t> none{0, 0, 0};
  Tensor z = masked_softmax(s, AttentionMask::from_keys(none, 1, 2, 3), 1);
  for (double v : z.data()) CHECK(v == 0.0);
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
  Tensor w({3}, {1, 2, 3}, true);
  Adam opt({{"w", w}}, {});
  opt.zero_grad();
  for (int i = 0; i < 5; ++i) opt.step();
  CHECK(std::vector<double>(w.data().begin(), w.data().end()) == std::vector<double>{1, 2, 3});
  CHECK(opt.step_count() == 5);
}

TEST_CASE("adam: first step magnitude equals the learning rate") {
  Tensor w = Tensor::scalar(0.0, true);
  Adam opt({{"w", w}}, {.lr = 0.003});
  w.zero_grad();
  w.grad_mut()[0] = 1.0;
  opt.step();
  // m_hat = 1, v_hat = 1 -> update = lr * 1 / (1 + eps)
  CHECK(w.item() == doctest::Approx(-0.003 / (1.0 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: missing gradient is an error") {
  Tensor w = Tensor::scalar(0.0, true);
  Adam opt({{"w", w}}, {});
  CHECK_THROWS_AS(opt.step(), Error);
}

TEST_CASE("adam: quadratic bowl converges within 2000 steps") {
  // Starts one unit from the minimum; from w=0 the constant-lr run is still
  // ~0.8 away after 2000 steps because the second moment keeps early gradients.
  Tensor w = Tensor::scalar(4.0, true);
  Adam opt({{"w", w}}, {.lr = 0.003});
  const Tensor five = Tensor::scalar(5.0);
  for (int step = 0; step < 2000; ++step) {
    opt.zero_grad();
    Tensor d = sub(w, five);
    mul(d, d).backward();
    opt.step();
  }
  CHECK(std::abs(w.item() - 5.0) < 1e-3);
}

TEST_CASE("clip_grad_norm rescales to the threshold") {
  Tensor a({2}, {0, 0}, true);
  a.zero_grad();
  a.grad_mut()[0] = 3.0;
  a.grad_mut()[1] = 4.0;
  std::vector<NamedTensor> ps{{"a", a}};
  CHECK(clip_grad_norm(ps, 1.0) == doctest::Approx(5.0));
  CHECK(grad_norm(ps) == doctest::Approx(1.0));
}
