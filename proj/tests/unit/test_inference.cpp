#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "helpers.hpp"
#include "vqg/errors.hpp"
#include "vqg/inference.hpp"
#include "vqg/training.hpp"

using namespace vqg;
using testing_util::corpus_config;
using testing_util::toy_corpus;

namespace {

struct Fixture {
  testing_util::ToyCorpus corpus = toy_corpus(6);
  std::unique_ptr<Model> model;

  explicit Fixture(Variant v, std::size_t steps = 40) {
    ModelConfig mc = corpus_config(corpus, v);
    model = std::make_unique<Model>(mc, category_token_ids(corpus.vocab));
    TrainConfig tc;
    tc.batch_size = 6;
    tc.seed = 2;
    Trainer t(*model, tc, corpus.samples, v == Variant::TextOnly ? nullptr : &corpus.store);
    for (std::size_t i = 0; i < steps; ++i) t.step();
  }

  GenRequest request(std::uint64_t image, const std::string& category, DecodeMode mode = DecodeMode::Greedy,
                     std::size_t beam = 1) const {
    GenRequest r;
    r.image_id = image;
    r.category = category;
    r.max_len = 6;
    r.mode = mode;
    r.beam_width = beam;
    return r;
  }
};

const std::vector<std::string> kCats{"color", "count", "location", "attribute"};

}  // namespace

TEST_CASE("greedy equals beam search of width one") {
  for (Variant v : {Variant::ImageCat, Variant::ImageAnsCat, Variant::ImageOnly, Variant::TextOnly}) {
    Fixture f(v);
    for (std::uint64_t img = 0; img < 6; ++img) {
      for (const auto& cat : kCats) {
        const GenResult g = generate(f.request(img, cat), *f.model, f.corpus.vocab, &f.corpus.store);
        const GenResult b =
            generate(f.request(img, cat, DecodeMode::Beam, 1), *f.model, f.corpus.vocab, &f.corpus.store);
        CHECK(g.ids == b.ids);
        CHECK(g.text == b.text);
        for (std::size_t i = 0; i < g.log_probs.size(); ++i) CHECK(g.log_probs[i] == doctest::Approx(b.log_probs[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("generation output contract") {
  Fixture f(Variant::ImageCat);
  for (std::uint64_t img = 0; img < 6; ++img) {
    for (const auto& cat : kCats) {
      for (std::size_t beam : {1u, 3u, 5u}) {
        const GenResult r = generate(f.request(img, cat, beam == 1 ? DecodeMode::Greedy : DecodeMode::Beam, beam),
                                     *f.model, f.corpus.vocab, &f.corpus.store);
        CHECK(r.ids.size() <= 6);
        CHECK(r.ids.size() == r.log_probs.size());
        CHECK(std::count(r.ids.begin(), r.ids.end(), Vocabulary::kPad) == 0);
        CHECK(std::count(r.ids.begin(), r.ids.end(), Vocabulary::kStart) == 0);
        for (double lp : r.log_probs) CHECK(lp <= 0.0);
        if (r.stop == StopReason::EndToken) {
          CHECK(r.ids.back() == Vocabulary::kEnd);
          CHECK(r.tokens.size() + 1 == r.ids.size());
        } else {
          CHECK(r.ids.size() == 6);
          CHECK(std::count(r.ids.begin(), r.ids.end(), Vocabulary::kEnd) == 0);
        }
        CHECK(r.to_json()["stop_reason"] == (r.stop == StopReason::EndToken ? "end-token" : "length"));
      }
    }
  }
}

TEST_CASE("log-probabilities agree with teacher-forced likelihood") {
  for (Variant v : {Variant::ImageCat, Variant::TextOnly}) {
    Fixture f(v);
    for (std::uint64_t img = 0; img < 6; ++img) {
      for (const auto& cat : kCats) {
        for (auto [mode, beam] : {std::pair{DecodeMode::Greedy, std::size_t{1}}, std::pair{DecodeMode::Beam, std::size_t{4}}}) {
          const GenRequest req = f.request(img, cat, mode, beam);
          const GenResult r = generate(req, *f.model, f.corpus.vocab, &f.corpus.store);
          double sum = 0.0;
          for (double lp : r.log_probs) sum += lp;
          CHECK(std::abs(sum - sequence_log_likelihood(req, r.ids, *f.model, f.corpus.vocab, &f.corpus.store)) <= 1e-9);
        }
      }
    }
  }
}

TEST_CASE("batched generation matches one-at-a-time generation") {
  Fixture f(Variant::ImageCat);
  std::vector<GenRequest> reqs;
  for (std::uint64_t img = 0; img < 6; ++img) reqs.push_back(f.request(img, kCats[img % 4]));
  std::vector<GenResult> single;
  for (const auto& r : reqs) single.push_back(generate(r, *f.model, f.corpus.vocab, &f.corpus.store));

  const auto batched = generate_batch(reqs, *f.model, f.corpus.vocab, &f.corpus.store);
  REQUIRE(batched.size() == reqs.size());
  for (std::size_t i = 0; i < reqs.size(); ++i) {
    CHECK(batched[i].ids == single[i].ids);
    CHECK(batched[i].log_probs == single[i].log_probs);  // bitwise
  }

  std::vector<GenRequest> permuted(reqs.rbegin(), reqs.rend());
  const auto back = generate_batch(permuted, *f.model, f.corpus.vocab, &f.corpus.store);
  for (std::size_t i = 0; i < reqs.size(); ++i) CHECK(back[reqs.size() - 1 - i].ids == single[i].ids);

  const std::vector<GenRequest> one{reqs[3]};
  CHECK(generate_batch(one, *f.model, f.corpus.vocab, &f.corpus.store)[0].ids == single[3].ids);

  // raw feature rows behave like stored ones
  GenRequest raw = reqs[2];
  raw.image_id.reset();
  const auto row = f.corpus.store.get(2);
  raw.features.assign(row.begin(), row.end());
  CHECK(generate(raw, *f.model, f.corpus.vocab, nullptr).ids == single[2].ids);
}

TEST_CASE("generation is read-only") {
  Fixture f(Variant::ImageCat);
  const std::vector<double> before(f.model->buffers()[0].second->begin(), f.model->buffers()[0].second->end());
  const auto w = f.model->parameter("out.w");
  const std::vector<double> wb(w.data().begin(), w.data().end());
  generate(f.request(0, "color", DecodeMode::Beam, 3), *f.model, f.corpus.vocab, &f.corpus.store);
  CHECK(*f.model->buffers()[0].second == before);
  CHECK(std::equal(wb.begin(), wb.end(), f.model->parameter("out.w").data().begin()));
}

TEST_CASE("a model trained on one question always asks it") {
  auto corpus = toy_corpus(4);
  const Sample proto = corpus.samples.front();
  for (auto& s : corpus.samples) s.question = proto.question;
  ModelConfig mc = corpus_config(corpus, Variant::ImageCat);
  Model m(mc, category_token_ids(corpus.vocab));
  TrainConfig tc;
  tc.batch_size = 8;
  Trainer t(m, tc, corpus.samples, &corpus.store);
  for (int i = 0; i < 150; ++i) t.step();
  const std::vector<int> want(proto.question.ids.begin(), proto.question.ids.begin() + static_cast<long>(proto.question.true_len));
  for (std::uint64_t img = 0; img < 4; ++img) {
    for (const auto& cat : kCats) {
      GenRequest r;
      r.image_id = img;
      r.category = cat;
      r.max_len = 6;
      CHECK(generate(r, m, corpus.vocab, &corpus.store).ids == want);
    }
  }
}

TEST_CASE("generation errors") {
  Fixture f(Variant::ImageCat, 0);
  GenRequest r = f.request(0, "colour");
  CHECK_THROWS_WITH_AS(generate(r, *f.model, f.corpus.vocab, &f.corpus.store), doctest::Contains("colour"), Error);
  r = f.request(0, "color");
  r.max_len = 0;
  CHECK_THROWS_AS(generate(r, *f.model, f.corpus.vocab, &f.corpus.store), Error);
  r.max_len = 7;
  CHECK_THROWS_AS(generate(r, *f.model, f.corpus.vocab, &f.corpus.store), Error);
  r = f.request(0, "color", DecodeMode::Beam, 6);
  CHECK_THROWS_AS(generate(r, *f.model, f.corpus.vocab, &f.corpus.store), Error);
  r = f.request(0, "color");
  CHECK_THROWS_AS(generate(r, *f.model, f.corpus.vocab, nullptr), Error);
  r = f.request(999, "color");
  CHECK_THROWS_AS(generate(r, *f.model, f.corpus.vocab, &f.corpus.store), Error);
  r.image_id.reset();
  r.features = {1.0, 2.0};
  CHECK_THROWS_AS(generate(r, *f.model, f.corpus.vocab, &f.corpus.store), DimensionError);
  // max_len 1 stops on length unless the first token ends the question
  r = f.request(0, "color");
  r.max_len = 1;
  CHECK(generate(r, *f.model, f.corpus.vocab, &f.corpus.store).ids.size() == 1);
}
