#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "vqg/dataset.hpp"
#include "vqg/feature_store.hpp"
#include "vqg/model.hpp"
#include "vqg/synthetic.hpp"
#include "vqg/rng.hpp"

namespace testing_util {

inline std::array<int, vqg::kNumCategories> folded_categories(std::size_t vocab_size) {
  std::array<int, vqg::kNumCategories> ids{};
  const std::size_t usable = vocab_size - vqg::Vocabulary::kNumSpecials;
  for (std::size_t c = 0; c < ids.size(); ++c) ids[c] = static_cast<int>(vqg::Vocabulary::kNumSpecials + c % usable);
  return ids;
}

/// 1 layer, 1 head, d = 8, V = 11, F = 6.
inline vqg::ModelConfig check_config(vqg::Variant v = vqg::Variant::ImageAnsCat) {
  vqg::ModelConfig c;
  c.n_layers = 1;
  c.n_heads = 1;
  c.d_model = 8;
  c.d_ff = 8;
  c.vocab_size = 11;
  c.feature_width = 6;
  c.question_len = 6;
  c.answer_len = 3;
  c.variant = v;
  c.reconstruct_image = v != vqg::Variant::TextOnly;
  c.seed = 3;
  return c;
}

struct ToyBatch {
  vqg::ModelInputs inputs;
  std::vector<int> targets;
};

/// Random inputs for `config`; every row has a few non-pad tokens then pads.
inline ToyBatch toy_batch(const vqg::ModelConfig& config, std::size_t batch, std::uint64_t seed) {
  vqg::Rng rng(seed);
  ToyBatch t;
  t.inputs.batch = batch;
  const auto token = [&] { return static_cast<int>(4 + rng.below(config.vocab_size - 4)); };
  std::vector<double> img(batch * config.input_width());
  for (double& x : img) x = rng.uniform(-1.0, 1.0);
  t.inputs.images = vqg::Tensor({batch, config.input_width()}, img);
  for (std::size_t b = 0; b < batch; ++b) {
    const std::size_t ans = 1 + rng.below(config.answer_len);
    for (std::size_t i = 0; i < config.answer_len; ++i) t.inputs.answers.push_back(i < ans ? token() : 0);
    t.inputs.categories.push_back(static_cast<int>(rng.below(vqg::kNumCategories)));
    const std::size_t q = 2 + rng.below(config.question_len - 2);
    for (std::size_t i = 0; i < config.question_len; ++i) {
      t.targets.push_back(i < q ? token() : (i == q ? vqg::Vocabulary::kEnd : vqg::Vocabulary::kPad));
    }
  }
  return t;
}

/// Synthetic questions paired with random feature vectors of width 6.
struct ToyCorpus {
  vqg::Vocabulary vocab;
  std::vector<vqg::Sample> samples;
  vqg::FeatureStore store{6};
};

inline ToyCorpus toy_corpus(std::size_t n_images, std::uint64_t seed = 11) {
  const vqg::SyntheticCorpus syn = vqg::make_synthetic({n_images, 4, seed});
  ToyCorpus t;
  t.vocab = vqg::build_corpus_vocab(syn.samples);
  t.samples = vqg::encode_samples(syn.samples, t.vocab, 6, 3);
  vqg::Rng rng(seed);
  for (std::uint64_t id : syn.store.ids()) {
    std::vector<double> f(6);
    for (double& x : f) x = rng.uniform(-1.0, 1.0);
    t.store.add(id, f);
  }
  return t;
}

/// check_config sized to a corpus vocabulary.
inline vqg::ModelConfig corpus_config(const ToyCorpus& corpus, vqg::Variant v = vqg::Variant::ImageAnsCat) {
  vqg::ModelConfig c = check_config(v);
  c.vocab_size = corpus.vocab.size();
  return c;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("vqg_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace testing_util
