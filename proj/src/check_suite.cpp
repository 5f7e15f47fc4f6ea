#include "vqg/check_suite.hpp"

#include <algorithm>
#include <functional>

#include "vqg/grad_check.hpp"
#include "vqg/model.hpp"
#include "vqg/ops.hpp"
#include "vqg/rng.hpp"

namespace vqg {

namespace {

Tensor random(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), true);
}

// Values bounded away from zero, so relu kinks stay outside the stencil.
Tensor off_zero(Rng& rng, Shape shape) {
  std::vector<double> v(shape_numel(shape));
  for (double& x : v) x = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 1.0);
  return Tensor(std::move(shape), std::move(v), true);
}

// Random linear functional of y, so that no output direction is missed.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> w(y.numel());
  for (double& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(mul(y, Tensor(y.shape(), std::move(w))));
}

using Case = std::function<GradCheckReport(Rng&, std::uint64_t)>;

std::vector<std::pair<std::string, Case>> op_cases() {
  std::vector<std::pair<std::string, Case>> c;
  c.emplace_back("matmul", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {3, 4}), b = random(r, {4, 5});
    return grad_check([&] { return probe(matmul(a, b), s); }, {a, b});
  });
  c.emplace_back("bmm", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {2, 3, 4}), b = random(r, {2, 5, 4});
    return grad_check([&] { return probe(bmm(a, b, true), s); }, {a, b});
  });
  c.emplace_back("add", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {3, 4}), b = random(r, {3, 4});
    return grad_check([&] { return probe(add(a, b), s); }, {a, b});
  });
  c.emplace_back("sub", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {3, 4}), b = random(r, {3, 4});
    return grad_check([&] { return probe(sub(a, b), s); }, {a, b});
  });
  c.emplace_back("mul", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {3, 4}), b = random(r, {3, 4});
    return grad_check([&] { return probe(mul(a, b), s); }, {a, b});
  });
  c.emplace_back("scale", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {3, 4});
    return grad_check([&] { return probe(scale(a, -1.7), s); }, {a});
  });
  c.emplace_back("add_bias", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {2, 3, 4}), b = random(r, {4});
    return grad_check([&] { return probe(add_bias(a, b), s); }, {a, b});
  });
  c.emplace_back("relu", [](Rng& r, std::uint64_t s) {
    Tensor a = off_zero(r, {3, 4});
    return grad_check([&] { return probe(relu(a), s); }, {a});
  });
  c.emplace_back("sum", [](Rng& r, std::uint64_t) {
    Tensor a = random(r, {3, 4});
    return grad_check([&] { return sum(mul(a, a)); }, {a});
  });
  c.emplace_back("mean", [](Rng& r, std::uint64_t) {
    Tensor a = random(r, {3, 4});
    return grad_check([&] { return mean(mul(a, a)); }, {a});
  });
  c.emplace_back("reshape", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {3, 4});
    return grad_check([&] { return probe(reshape(a, {2, 6}), s); }, {a});
  });
  c.emplace_back("concat", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {2, 3, 4}), b = random(r, {2, 1, 4});
    return grad_check([&] { return probe(concat({a, b}, 1), s); }, {a, b});
  });
  c.emplace_back("slice", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {2, 5, 3});
    return grad_check([&] { return probe(slice(a, 1, 1, 3), s); }, {a});
  });
  c.emplace_back("split_heads", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {2, 3, 4});
    return grad_check([&] { return probe(split_heads(a, 2), s); }, {a});
  });
  c.emplace_back("merge_heads", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {4, 3, 2});
    return grad_check([&] { return probe(merge_heads(a, 2), s); }, {a});
  });
  c.emplace_back("softmax", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {3, 5}, -3.0, 3.0);
    return grad_check([&] { return probe(softmax(a, 1), s); }, {a});
  });
  c.emplace_back("masked_softmax", [](Rng& r, std::uint64_t s) {
    Tensor a = random(r, {4, 3, 3}, -3.0, 3.0);
    const std::vector<std::uint8_t> keys{1, 1, 0, 1, 0, 1};
    const AttentionMask m = AttentionMask::causal(keys, 2, 3);
    return grad_check([&] { return probe(masked_softmax(a, m, 2), s); }, {a});
  });
  c.emplace_back("layer_norm", [](Rng& r, std::uint64_t s) {
    Tensor x = random(r, {3, 6}, -2.0, 2.0), g = random(r, {6}, 0.5, 1.5), b = random(r, {6});
    return grad_check([&] { return probe(layer_norm(x, g, b), s); }, {x, g, b});
  });
  c.emplace_back("batch_norm_1d", [](Rng& r, std::uint64_t s) {
    Tensor x = random(r, {5, 4}, -2.0, 2.0), g = random(r, {4}, 0.5, 1.5), b = random(r, {4});
    BatchNormState st(4);
    return grad_check([&] { return probe(batch_norm_1d(x, g, b, st, NormMode::Train), s); }, {x, g, b});
  });
  c.emplace_back("cross_entropy", [](Rng& r, std::uint64_t) {
    Tensor x = random(r, {2, 3, 5}, -2.0, 2.0);
    std::vector<int> t(6);
    for (int& v : t) v = static_cast<int>(r.below(5));
    t[4] = 0;
    return grad_check([&] { return cross_entropy(x, t, 0); }, {x});
  });
  c.emplace_back("mse_l2", [](Rng& r, std::uint64_t) {
    Tensor a = random(r, {3, 4}), b = random(r, {3, 4});
    return grad_check([&] { return mse_l2(a, b); }, {a, b});
  });
  c.emplace_back("embedding", [](Rng& r, std::uint64_t s) {
    Tensor t = random(r, {6, 3});
    const std::vector<int> ids{1, 4, 4, 0, 5, 2};
    return grad_check([&] { return probe(embedding(t, ids, {2, 3}), s); }, {t});
  });
  c.emplace_back("masked_mean_pool", [](Rng& r, std::uint64_t s) {
    Tensor x = random(r, {2, 4, 3});
    const std::vector<std::uint8_t> m{1, 0, 1, 1, 0, 0, 1, 0};
    return grad_check([&] { return probe(masked_mean_pool(x, m), s); }, {x});
  });
  c.emplace_back("conv2d", [](Rng& r, std::uint64_t s) {
    Tensor x = random(r, {2, 2, 5, 5}), w = random(r, {3, 2, 3, 3}), b = random(r, {3});
    return grad_check([&] { return probe(conv2d(x, w, b, 1), s); }, {x, w, b});
  });
  c.emplace_back("avg_pool2d", [](Rng& r, std::uint64_t s) {
    Tensor x = random(r, {2, 3, 4, 4});
    return grad_check([&] { return probe(avg_pool2d(x, 2), s); }, {x});
  });
  return c;
}

ModelConfig tiny_config(Variant v) {
  ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 1;
  c.d_model = 8;
  c.d_ff = 8;
  c.vocab_size = 11;
  c.feature_width = 6;
  c.question_len = 6;
  c.answer_len = 3;
  c.variant = v;
  c.reconstruct_image = v != Variant::TextOnly;
  c.seed = 3;
  return c;
}

GradCheckReport model_check(Variant v, std::size_t batch, NormMode mode, std::uint64_t seed) {
  const ModelConfig c = tiny_config(v);
  std::array<int, kNumCategories> cats{};
  for (std::size_t k = 0; k < cats.size(); ++k) cats[k] = static_cast<int>(4 + k % 7);
  Model model(c, cats);
  Rng rng(seed);
  const auto token = [&] { return static_cast<int>(4 + rng.below(7)); };
  ModelInputs in;
  in.batch = batch;
  std::vector<double> img(batch * c.feature_width);
  for (double& x : img) x = rng.uniform(-1.0, 1.0);
  in.images = Tensor({batch, c.feature_width}, img);
  std::vector<int> targets;
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t ans = 1 + rng.below(c.answer_len);
    for (std::size_t i = 0; i < c.answer_len; ++i) in.answers.push_back(i < ans ? token() : Vocabulary::kPad);
    in.categories.push_back(static_cast<int>(rng.below(kNumCategories)));
    const std::size_t q = 2 + rng.below(c.question_len - 2);
    for (std::size_t i = 0; i < c.question_len; ++i) {
      targets.push_back(i < q ? token() : (i == q ? Vocabulary::kEnd : Vocabulary::kPad));
    }
  }
  std::vector<Tensor> params;
  for (const auto& p : model.parameters()) params.push_back(p.tensor);
  return grad_check([&] { return model.loss(in, targets, mode).total; }, params);
}

}  // namespace

std::vector<OpCheck> run_check_suite(std::size_t seeds) {
  std::vector<OpCheck> out;
  for (const auto& [name, fn] : op_cases()) {
    OpCheck oc{name, 0.0, 0};
    for (std::size_t s = 0; s < seeds; ++s) {
      Rng rng = Rng::derive(s + 1, "check/" + name);
      const GradCheckReport r = fn(rng, 1000 + s);
      oc.max_rel_error = std::max(oc.max_rel_error, r.max_rel_error);
      oc.coordinates += r.checked;
    }
    out.push_back(oc);
  }
  // Two samples under batch statistics leave the image head with gradients
  // at the scale of the variance epsilon, so that path is checked at B = 4.
  for (Variant v : {Variant::ImageOnly, Variant::ImageCat, Variant::ImageAnsCat, Variant::TextOnly}) {
    for (auto [batch, mode] : {std::pair{std::size_t{2}, NormMode::Eval}, std::pair{std::size_t{4}, NormMode::Train}}) {
      const GradCheckReport r = model_check(v, batch, mode, 51);
      out.push_back({"model/" + variant_name(v) + "/B" + std::to_string(batch) +
                         (mode == NormMode::Train ? "-train" : ""),
                     r.max_rel_error, r.checked});
    }
  }
  return out;
}

}  // namespace vqg
