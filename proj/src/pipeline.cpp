#include "vqg/pipeline.hpp"

#include <cstdio>
#include <fstream>

#include "vqg/checkpoint.hpp"
#include "vqg/dataset.hpp"
#include "vqg/errors.hpp"
#include "vqg/synthetic.hpp"
#include "vqg/vectors.hpp"

namespace fs = std::filesystem;

namespace vqg {

nlohmann::json DataPaths::to_json() const {
  return {{"questions", questions.string()},
          {"annotations", annotations.string()},
          {"category_map", category_map.string()},
          {"features", features.string()},
          {"vectors", vectors.string()},
          {"test_fraction", test_fraction}};
}

void DataPaths::merge_defaults(const nlohmann::json& j) {
  const auto fill = [&](fs::path& field, const char* key) {
    if (field.empty() && j.contains(key)) field = j[key].get<std::string>();
  };
  fill(questions, "questions");
  fill(annotations, "annotations");
  fill(category_map, "category_map");
  fill(features, "features");
  fill(vectors, "vectors");
}

DataPaths DataPaths::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("data: expected an object");
  DataPaths d;
  for (const auto& [key, value] : j.items()) {
    if (key == "test_fraction") {
      if (!value.is_number()) throw ConfigError("test_fraction: expected a number");
      d.test_fraction = value.get<double>();
    } else if (key != "questions" && key != "annotations" && key != "category_map" && key != "features" &&
               key != "vectors") {
      throw ConfigError("data: unknown key '" + key + "'");
    } else if (!value.is_string()) {
      throw ConfigError(key + ": expected a path string");
    }
  }
  d.merge_defaults(j);
  return d;
}

RunConfig RunConfig::from_json(const nlohmann::json& j, std::filesystem::path output_dir) {
  if (!j.is_object()) throw ConfigError("run config: expected an object");
  RunConfig rc;
  for (const auto& [key, value] : j.items()) {
    if (key == "model") rc.model = ModelConfig::from_json(value);
    else if (key == "train") rc.train = TrainConfig::from_json(value);
    else if (key == "data") rc.data = DataPaths::from_json(value);
    else if (key == "seed") {
      if (!value.is_number_unsigned()) throw ConfigError("seed: expected a non-negative integer");
      rc.seed = value.get<std::uint64_t>();
    } else {
      throw ConfigError("run config: unknown key '" + key + "'");
    }
  }
  rc.output_dir = std::move(output_dir);
  return rc;
}

nlohmann::json RunConfig::to_json() const {
  return {{"model", model.to_json()}, {"train", train.to_json()}, {"data", data.to_json()}, {"seed", seed}};
}

namespace {

void require_file(const std::string& key, const fs::path& path) {
  if (path.empty()) throw ConfigError(key + ": a path is required");
  if (!fs::is_regular_file(path)) throw ConfigError(key + ": file not found: " + path.string());
}

void require_dataset(const DataPaths& d) {
  require_file("questions", d.questions);
  require_file("annotations", d.annotations);
  require_file("category_map", d.category_map);
}

IngestResult ingest_dataset(const DataPaths& d) {
  return ingest_files(d.questions, d.annotations, load_category_map(d.category_map));
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error("cannot write " + path.string());
}

struct LoadedData {
  IngestResult ingest;
  std::vector<RawSample> train_raw, test_raw;
  Vocabulary vocab;
  std::vector<Sample> train, test;
  std::optional<FeatureStore> store;
  std::optional<EmbeddingTable> embeddings;
};

// Resolves the data-dependent model fields (vocabulary size, feature width)
// as a side effect, so the returned config is the one that gets embedded.
LoadedData load_training_data(RunConfig& rc, bool needs_store) {
  require_dataset(rc.data);
  if (needs_store) require_file("features", rc.data.features);
  if (!rc.data.vectors.empty()) require_file("vectors", rc.data.vectors);
  if (rc.output_dir.empty()) throw ConfigError("output_dir: a directory is required");
  rc.model.seed = rc.seed;
  rc.train.seed = rc.seed;
  rc.train.validate(rc.model.uses_image());

  LoadedData d;
  d.ingest = ingest_dataset(rc.data);
  const auto held = held_out_images(d.ingest.samples, rc.data.test_fraction);
  std::tie(d.train_raw, d.test_raw) = split_by_image(d.ingest.samples, held);
  if (d.train_raw.empty()) throw Error("the training split is empty");
  d.vocab = build_corpus_vocab(d.train_raw);
  d.train = encode_samples(d.train_raw, d.vocab, rc.model.question_len, rc.model.answer_len);
  d.test = encode_samples(d.test_raw, d.vocab, rc.model.question_len, rc.model.answer_len);
  rc.model.vocab_size = d.vocab.size();
  if (needs_store) {
    d.store = FeatureStore::load(rc.data.features);
    if (rc.model.image_input == ImageInput::Pixels) {
      if (d.store->width() != kSyntheticPixels) {
        throw ConfigError("image_input: pixel mode needs 3x32x32 images, the store holds rows of " +
                          std::to_string(d.store->width()));
      }
      rc.model.feature_width = kConvFeatureWidth;
    } else {
      rc.model.feature_width = d.store->width();
    }
  }
  rc.model.validate();
  if (!rc.data.vectors.empty()) {
    Rng rng = Rng::derive(rc.seed, "vectors");
    d.embeddings = load_pretrained_vectors(rc.data.vectors, d.vocab, rc.model.d_model, rng);
  }
  return d;
}

struct LoadedCheckpoint {
  Checkpoint checkpoint;
  std::unique_ptr<Model> model;
  DataPaths data;
};

LoadedCheckpoint load_checkpoint_checked(const CheckpointRequest& where) {
  require_file("checkpoint", where.checkpoint);
  LoadedCheckpoint l{read_checkpoint(where.checkpoint), nullptr, where.data};
  if (!where.vocab.empty()) {
    require_file("vocab", where.vocab);
    if (!(Vocabulary::load(where.vocab) == l.checkpoint.vocab)) {
      throw ConfigError("vocab: " + where.vocab.string() + " does not match the vocabulary stored in " +
                        where.checkpoint.string());
    }
  }
  if (l.checkpoint.config.contains("data")) l.data.merge_defaults(l.checkpoint.config["data"]);
  l.model = restore_model(l.checkpoint);
  return l;
}

}  // namespace

nlohmann::json dataset_stats(const DataPaths& data) {
  require_dataset(data);
  const IngestResult r = ingest_dataset(data);
  nlohmann::json j = r.stats.to_json();
  j["dropped"] = r.dropped;
  j["config_hash"] = config_hash({{"data", data.to_json()}});
  return j;
}

nlohmann::json build_vocab_file(const DataPaths& data, const fs::path& out) {
  require_dataset(data);
  if (out.empty()) throw ConfigError("out: a vocabulary path is required");
  const IngestResult r = ingest_dataset(data);
  const auto held = held_out_images(r.samples, data.test_fraction);
  const Vocabulary v = build_corpus_vocab(split_by_image(r.samples, held).first);
  v.save(out);
  return {{"size", v.size()}, {"fingerprint", hex64(v.fingerprint())}, {"config_hash", config_hash({{"data", data.to_json()}})}};
}

nlohmann::json make_synthetic_files(const fs::path& dir, std::size_t n_images, std::size_t n_categories,
                                    std::uint64_t seed) {
  if (dir.empty()) throw ConfigError("output_dir: a directory is required");
  if (n_images < 1) throw ConfigError("n_images: must be at least 1");
  const SyntheticCorpus c = make_synthetic({n_images, n_categories, seed});
  write_synthetic(c, dir);
  return {{"n_images", n_images}, {"n_samples", c.samples.size()}, {"output_dir", dir.string()}};
}

nlohmann::json run_training(const RunConfig& config, const fs::path& resume,
                            const std::function<void(const StepRecord&)>& on_step) {
  RunConfig rc = config;
  if (!resume.empty()) require_file("resume", resume);
  LoadedData d = load_training_data(rc, rc.model.uses_image());
  const nlohmann::json embedded = rc.to_json();

  std::optional<Checkpoint> from;
  std::unique_ptr<Model> model;
  if (!resume.empty()) {
    from = read_checkpoint(resume);
    nlohmann::json then = from->config, now = embedded;
    if (then.contains("train")) then["train"].erase("steps");
    now["train"].erase("steps");
    if (config_hash(then) != config_hash(now)) {
      throw ConfigError("resume: checkpoint was written under a different configuration (hash " +
                        config_hash(from->config) + ", current " + config_hash(embedded) + ")");
    }
    if (!(from->vocab == d.vocab)) throw ConfigError("resume: checkpoint vocabulary differs from the data");
    model = restore_model(*from);
  } else {
    model = std::make_unique<Model>(rc.model, category_token_ids(d.vocab), d.embeddings ? &*d.embeddings : nullptr);
  }

  TrainRequest req;
  req.config = rc.train;
  req.run_config = embedded;
  req.output_dir = rc.output_dir;
  req.samples = d.train;
  req.validation = d.test;
  req.store = d.store ? &*d.store : nullptr;
  req.vocab = &d.vocab;
  req.resume = from ? &*from : nullptr;
  req.on_step = on_step;
  const TrainOutputs out = train(*model, req);
  d.vocab.save(rc.output_dir / "vocab.txt");

  nlohmann::json j = {{"checkpoint", out.final_checkpoint.string()},
                      {"loss_csv", out.loss_csv.string()},
                      {"steps", rc.train.steps},
                      {"parameter_count", model->parameter_count()},
                      {"config_hash", config_hash(embedded)}};
  if (!out.records.empty()) j["final_L_q"] = out.records.back().l_q;
  for (const auto& v : out.validation) j["validation"].push_back({{"step", v.step}, {"cross_entropy", v.cross_entropy}});
  return j;
}

AblationResult run_ablation(const RunConfig& config, DecodeMode mode, std::size_t beam,
                            const std::function<void(const std::string&, const StepRecord&)>& on_step) {
  RunConfig rc = config;
  LoadedData d = load_training_data(rc, true);
  if (d.test_raw.empty()) throw ConfigError("test_fraction: the ablation matrix needs a held-out split");
  AblationRequest req;
  req.base = rc.model;
  req.train = rc.train;
  req.run_config = rc.to_json();
  req.output_dir = rc.output_dir;
  req.train_samples = d.train;
  req.test_samples = d.test_raw;
  req.store = &*d.store;
  req.vocab = &d.vocab;
  req.embeddings = d.embeddings ? &*d.embeddings : nullptr;
  req.mode = mode;
  req.beam_width = beam;
  req.on_step = on_step;
  AblationResult res = run_ablation_matrix(req);
  write_text(rc.output_dir / "ablation.json", res.to_json().dump(2) + "\n");
  return res;
}

nlohmann::json generate_from_checkpoint(const CheckpointRequest& where, const GenRequest& request) {
  if (!category_id(request.category)) {
    std::string names;
    for (const auto& n : category_names()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError("category: unknown category '" + request.category + "' (expected one of " + names + ")");
  }
  LoadedCheckpoint l = load_checkpoint_checked(where);
  std::optional<FeatureStore> store;
  if (l.model->config().uses_image() && request.image_id) {
    require_file("features", l.data.features);
    store = FeatureStore::load(l.data.features);
  } else if (l.model->config().uses_image() && request.features.empty()) {
    throw ConfigError("image_id: required for this model variant");
  }
  const GenResult g = generate(request, *l.model, l.checkpoint.vocab, store ? &*store : nullptr);
  nlohmann::json j = g.to_json();
  j["category"] = request.category;
  if (request.image_id) j["image_id"] = *request.image_id;
  j["config_hash"] = config_hash(l.checkpoint.config);
  return j;
}

nlohmann::json evaluate_checkpoint(const CheckpointRequest& where, const EvaluateOptions& options) {
  LoadedCheckpoint l = load_checkpoint_checked(where);
  double fraction = 0.0;
  if (l.checkpoint.config.contains("data")) fraction = l.checkpoint.config["data"].value("test_fraction", 0.0);
  if (options.test_fraction) fraction = *options.test_fraction;
  require_dataset(l.data);
  const bool needs_store = l.model->config().uses_image();
  if (needs_store) require_file("features", l.data.features);

  const IngestResult r = ingest_dataset(l.data);
  const auto held = held_out_images(r.samples, fraction);
  const auto [train_raw, test_raw] = split_by_image(r.samples, held);
  const std::vector<RawSample>* split = nullptr;
  if (options.split == "test") split = &test_raw;
  else if (options.split == "train") split = &train_raw;
  else if (options.split == "all") split = &r.samples;
  else throw ConfigError("split: expected test, train or all, got '" + options.split + "'");
  if (split->empty()) throw ConfigError("split: the '" + options.split + "' split is empty");

  std::optional<FeatureStore> store;
  if (needs_store) store = FeatureStore::load(l.data.features);
  EvaluationRun run = evaluate(*l.model, l.checkpoint.vocab, *split, store ? &*store : nullptr, options.mode,
                               options.beam);
  run.report.metadata["config_hash"] = config_hash(l.checkpoint.config);
  run.report.metadata["split"] = options.split;
  run.report.metadata["variant"] = variant_name(l.model->config().variant);
  return run.report.to_json();
}

}  // namespace vqg
