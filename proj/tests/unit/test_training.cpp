#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "helpers.hpp"
#include "vqg/ablation.hpp"
#include "vqg/checkpoint.hpp"
#include "vqg/errors.hpp"
#include "vqg/training.hpp"

using namespace vqg;
using testing_util::corpus_config;
using testing_util::temp_dir;
using testing_util::toy_corpus;

namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::vector<std::string> lines(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

nlohmann::json run_config(const ModelConfig& m, const TrainConfig& t) {
  return {{"model", m.to_json()}, {"train", t.to_json()}};
}

void require_same_params(Model& a, Model& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  REQUIRE(pa.size() == pb.size());
  for (std::size_t i = 0; i < pa.size(); ++i) {
    REQUIRE(pa[i].name == pb[i].name);
    const auto x = pa[i].tensor.data();
    const auto y = pb[i].tensor.data();
    CHECK(std::equal(x.begin(), x.end(), y.begin()));
  }
}

TrainRequest request_for(const testing_util::ToyCorpus& corpus, const ModelConfig& m, const TrainConfig& t,
                         const std::filesystem::path& dir) {
  TrainRequest r;
  r.config = t;
  r.run_config = run_config(m, t);
  r.output_dir = dir;
  r.samples = corpus.samples;
  r.store = &corpus.store;
  r.vocab = &corpus.vocab;
  return r;
}

}  // namespace

TEST_CASE("train config: defaults, validation and JSON") {
  const TrainConfig d;
  CHECK(d.steps == 13000);
  CHECK(d.batch_size == 64);
  CHECK(d.lr == 0.003);
  CHECK(TrainConfig::from_json(d.to_json()) == d);
  TrainConfig bad;
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(true), ConfigError);
  bad = TrainConfig{};
  bad.batch_size = 1;
  CHECK_THROWS_WITH_AS(bad.validate(true), doctest::Contains("batch_size"), ConfigError);
  CHECK_NOTHROW(bad.validate(false));
  CHECK_THROWS_AS(TrainConfig::from_json({{"stepz", 1}}), ConfigError);
  CHECK_THROWS_AS(TrainConfig::from_json({{"steps", "many"}}), ConfigError);
}

TEST_CASE("config hash is stable and content-sensitive") {
  const nlohmann::json a = {{"b", 1}, {"a", {1, 2}}};
  const nlohmann::json b = nlohmann::json::parse(R"({"a":[1,2],"b":1})");
  CHECK(config_hash(a) == config_hash(b));
  CHECK(config_hash(a).size() == 16);
  CHECK(config_hash(a) != config_hash({{"b", 2}, {"a", {1, 2}}}));
}

TEST_CASE("checkpoint round trip restores weights, buffers and training state") {
  const auto corpus = toy_corpus(6);
  const ModelConfig mc = corpus_config(corpus);
  Model model(mc, category_token_ids(corpus.vocab));
  TrainConfig tc;
  tc.batch_size = 4;
  tc.seed = 5;
  Trainer trainer(model, tc, corpus.samples, &corpus.store);
  for (int i = 0; i < 3; ++i) trainer.step();

  const auto dir = temp_dir("ckpt");
  const TrainingState state = trainer.state();
  save_checkpoint(dir / "a.vqgm", run_config(mc, tc), corpus.vocab, model, &state);
  const Checkpoint ck = read_checkpoint(dir / "a.vqgm");
  CHECK(ck.vocab == corpus.vocab);
  CHECK(ck.config == run_config(mc, tc));
  REQUIRE(ck.training.has_value());
  CHECK(ck.training->step == 3);
  CHECK(ck.training->optimizer_steps == 3);
  CHECK(ck.training->loader == state.loader);

  auto restored = restore_model(ck);
  require_same_params(model, *restored);
  CHECK(restored->buffers().size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(*restored->buffers()[i].second == *model.buffers()[i].second);

  // same state, same bytes
  save_checkpoint(dir / "b.vqgm", run_config(mc, tc), corpus.vocab, *restored, &*ck.training);
  CHECK(slurp(dir / "a.vqgm") == slurp(dir / "b.vqgm"));

  // corruption is reported, not misread
  std::string bytes = slurp(dir / "a.vqgm");
  std::ofstream(dir / "bad.vqgm", std::ios::binary) << "VQGX" << bytes.substr(4);
  CHECK_THROWS_AS(read_checkpoint(dir / "bad.vqgm"), ParseError);
  std::ofstream(dir / "short.vqgm", std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  CHECK_THROWS_AS(read_checkpoint(dir / "short.vqgm"), ParseError);

  // architecture mismatch is caught by name/shape checks
  Checkpoint wrong = ck;
  wrong.config["model"]["d_ff"] = 16;
  CHECK_THROWS_AS(restore_model(wrong), Error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training is deterministic and resumes bit-exactly") {
  const auto corpus = toy_corpus(6);
  const ModelConfig mc = corpus_config(corpus);
  TrainConfig tc;
  tc.steps = 8;
  tc.batch_size = 5;  // 24 samples: epochs end mid-run
  tc.seed = 9;
  tc.checkpoint_every = 4;

  const auto full = temp_dir("run_full");
  const auto again = temp_dir("run_again");
  Model a(mc, category_token_ids(corpus.vocab));
  const auto out_a = train(a, request_for(corpus, mc, tc, full));
  Model b(mc, category_token_ids(corpus.vocab));
  train(b, request_for(corpus, mc, tc, again));
  CHECK(slurp(full / "model.vqgm") == slurp(again / "model.vqgm"));
  CHECK(slurp(full / "checkpoint-000004.vqgm") == slurp(again / "checkpoint-000004.vqgm"));
  CHECK_FALSE(std::filesystem::exists(full / "checkpoint-000008.vqgm"));

  // resume from step 4 in a fresh directory holding only the checkpoint
  const auto resumed = temp_dir("run_resumed");
  std::filesystem::copy_file(full / "checkpoint-000004.vqgm", resumed / "checkpoint-000004.vqgm");
  const Checkpoint ck = read_checkpoint(resumed / "checkpoint-000004.vqgm");
  auto c = restore_model(ck);
  TrainRequest r = request_for(corpus, mc, tc, resumed);
  r.resume = &ck;
  const auto out_c = train(*c, r);
  CHECK(out_c.records.size() == 4);
  CHECK(out_c.records.front().step == 5);
  require_same_params(a, *c);
  CHECK(slurp(full / "model.vqgm") == slurp(resumed / "model.vqgm"));
  for (std::size_t i = 0; i < 4; ++i) CHECK(out_c.records[i].total == out_a.records[4 + i].total);

  const auto rows = lines(full / "loss.csv");
  REQUIRE(rows.size() == 9);
  CHECK(rows[0] == "step,L_q,L_i,total,seconds");
  CHECK(rows[1].rfind("1,", 0) == 0);
  CHECK(rows[8].rfind("8,", 0) == 0);
  std::filesystem::remove_all(full);
  std::filesystem::remove_all(again);
  std::filesystem::remove_all(resumed);
}

TEST_CASE("step records: additivity and optional reconstruction loss") {
  const auto corpus = toy_corpus(4);
  ModelConfig mc = corpus_config(corpus, Variant::ImageCat);
  mc.lambda_recon = 0.25;
  TrainConfig tc;
  tc.batch_size = 4;
  {
    Model m(mc, category_token_ids(corpus.vocab));
    Trainer t(m, tc, corpus.samples, &corpus.store);
    for (int i = 0; i < 4; ++i) {
      const StepRecord r = t.step();
      REQUIRE(r.l_i.has_value());
      CHECK(r.total == r.l_q + 0.25 * *r.l_i);
      CHECK(r.step == i + 1);
    }
  }
  {
    ModelConfig off = mc;
    off.reconstruct_image = false;
    Model m(off, category_token_ids(corpus.vocab));
    Trainer t(m, tc, corpus.samples, &corpus.store);
    const StepRecord r = t.step();
    CHECK_FALSE(r.l_i.has_value());
    CHECK(r.total == r.l_q);
  }
  {
    const auto dir = temp_dir("textonly");
    const ModelConfig text = corpus_config(corpus, Variant::TextOnly);
    Model m(text, category_token_ids(corpus.vocab));
    TrainConfig one = tc;
    one.steps = 3;
    one.batch_size = 1;  // no batch norm, so single rows are fine
    TrainRequest r = request_for(corpus, text, one, dir);
    r.store = nullptr;
    const auto out = train(m, r);
    CHECK(out.records.size() == 3);
    const auto rows = lines(dir / "loss.csv");
    REQUIRE(rows.size() == 4);
    CHECK(rows[1].find(",,") != std::string::npos);  // empty L_i column
    std::filesystem::remove_all(dir);
  }
}

TEST_CASE("image variants need a store and skip single-row batches") {
  const auto corpus = toy_corpus(4);  // 16 samples
  const ModelConfig mc = corpus_config(corpus, Variant::ImageCat);
  Model m(mc, category_token_ids(corpus.vocab));
  TrainConfig tc;
  tc.batch_size = 5;  // epoch: 5, 5, 5, 1
  CHECK_THROWS_AS(Trainer(m, tc, corpus.samples, nullptr), Error);
  Trainer t(m, tc, corpus.samples, &corpus.store);
  for (int i = 0; i < 3; ++i) t.step();
  t.step();  // the single leftover row is skipped, the next epoch starts
  CHECK(t.state().loader.epoch == 1);
  CHECK(t.state().loader.cursor == 5);
}

TEST_CASE("loss decreases on a fixed batch") {
  const auto corpus = toy_corpus(2);
  const ModelConfig mc = corpus_config(corpus, Variant::ImageCat);
  Model m(mc, category_token_ids(corpus.vocab));
  Adam adam(m.trainable_parameters(), AdamConfig{0.003});
  const Batch b = batches(corpus.samples, 8, 0, false, &corpus.store).front();
  const double first = train_step(b, m, adam, 1).l_q;
  double last = first;
  for (int s = 2; s <= 200; ++s) last = train_step(b, m, adam, s).l_q;
  CHECK(last < 0.5 * first);
  const double val = evaluate_cross_entropy(m, corpus.samples, &corpus.store, 3);
  CHECK(std::isfinite(val));
}

TEST_CASE("validation cross-entropy is recorded on schedule") {
  const auto corpus = toy_corpus(4);
  const ModelConfig mc = corpus_config(corpus, Variant::ImageCat);
  Model m(mc, category_token_ids(corpus.vocab));
  TrainConfig tc;
  tc.steps = 6;
  tc.batch_size = 4;
  tc.eval_every = 3;
  const auto dir = temp_dir("validation");
  TrainRequest r = request_for(corpus, mc, tc, dir);
  const std::span<const Sample> all(corpus.samples);
  r.samples = all.subspan(0, 12);
  r.validation = all.subspan(12);
  const auto out = train(m, r);
  REQUIRE(out.validation.size() == 2);
  CHECK(out.validation[0].step == 3);
  CHECK(out.validation[1].step == 6);
  std::filesystem::remove_all(dir);
}

TEST_CASE("a non-finite loss aborts with the step and question ids") {
  const auto corpus = toy_corpus(2);
  const ModelConfig mc = corpus_config(corpus, Variant::ImageCat);
  Model m(mc, category_token_ids(corpus.vocab));
  Adam adam(m.trainable_parameters(), AdamConfig{0.003});
  m.parameter("out.w").data_mut()[0] = 1e308;
  const Batch b = batches(corpus.samples, 2, 0, false, &corpus.store).front();
  try {
    train_step(b, m, adam, 7);
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("step 7") != std::string::npos);
    CHECK(msg.find(std::to_string(b.question_ids[0]) + "," + std::to_string(b.question_ids[1])) != std::string::npos);
  }
}

TEST_CASE("ablation matrix: five rows, six metrics, isolated failures") {
  const auto corpus = toy_corpus(4);
  const SyntheticCorpus syn = make_synthetic({4, 4, 11});
  ModelConfig base = corpus_config(corpus);
  TrainConfig tc;
  tc.steps = 3;
  tc.batch_size = 4;
  const auto dir = temp_dir("ablation");
  AblationRequest req;
  req.base = base;
  req.train = tc;
  req.output_dir = dir;
  req.train_samples = corpus.samples;
  req.test_samples = syn.samples;
  req.store = &corpus.store;
  req.vocab = &corpus.vocab;
  const AblationResult res = run_ablation_matrix(req);
  REQUIRE(res.rows.size() == 5);
  const auto j = res.to_json();
  for (const char* name : {"image-only", "text-only", "without-image-recon", "image-cat", "image-ans-cat"}) {
    INFO(name);
    REQUIRE(j.contains(name));
    CHECK_FALSE(j[name].contains("error"));
    for (const char* m : {"bleu1", "bleu2", "bleu3", "cider", "meteor", "rouge_l"}) CHECK(j[name][m].is_number());
    CHECK(j[name]["bleu_monotone"] == true);
    CHECK(std::filesystem::exists(dir / name / "model.vqgm"));
    CHECK(std::filesystem::exists(dir / name / "report.json"));
  }
  CHECK(j["without-image-recon"]["l_i_logged"] == false);
  CHECK(j["text-only"]["l_i_logged"] == false);
  CHECK(j["image-cat"]["l_i_logged"] == true);
  CHECK(lines(dir / "without-image-recon" / "loss.csv")[1].find(",,") != std::string::npos);

  // a row that cannot run is reported and the rest still complete
  req.store = nullptr;
  const auto broken = run_ablation_matrix(req).to_json();
  CHECK(broken["image-cat"].contains("error"));
  CHECK(broken["text-only"]["bleu1"].is_number());
  std::filesystem::remove_all(dir);
}
