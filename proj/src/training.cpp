#include "vqg/training.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "vqg/errors.hpp"

namespace vqg {

void TrainConfig::validate(bool bn_trains) const {
  if (steps < 1) throw ConfigError("steps: must be at least 1");
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("lr: must be positive");
  if (batch_size < 1) throw ConfigError("batch_size: must be at least 1");
  if (bn_trains && batch_size < 2) throw ConfigError("batch_size: batch norm needs at least 2 rows per batch");
  if (clip_norm < 0.0 || !std::isfinite(clip_norm)) throw ConfigError("clip_norm: must be >= 0");
}

nlohmann::json TrainConfig::to_json() const {
  return {{"steps", steps},
          {"batch_size", batch_size},
          {"lr", lr},
          {"seed", seed},
          {"checkpoint_every", checkpoint_every},
          {"eval_every", eval_every},
          {"shuffle", shuffle},
          {"clip_norm", clip_norm}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("train config: expected an object");
  TrainConfig c;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "steps") c.steps = value.get<std::size_t>();
      else if (key == "batch_size") c.batch_size = value.get<std::size_t>();
      else if (key == "lr") c.lr = value.get<double>();
      else if (key == "seed") c.seed = value.get<std::uint64_t>();
      else if (key == "checkpoint_every") c.checkpoint_every = value.get<std::size_t>();
      else if (key == "eval_every") c.eval_every = value.get<std::size_t>();
      else if (key == "shuffle") c.shuffle = value.get<bool>();
      else if (key == "clip_norm") c.clip_norm = value.get<double>();
      else throw ConfigError("train config: unknown key '" + key + "'");
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(key + ": wrong type in train config");
    }
  }
  return c;
}

namespace {

std::string id_list(const Batch& batch) {
  std::string s;
  for (std::size_t i = 0; i < batch.question_ids.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(batch.question_ids[i]);
  }
  return s;
}

}  // namespace

StepRecord train_step(const Batch& batch, Model& model, Adam& optimizer, std::int64_t step, double clip_norm) {
  const auto start = std::chrono::steady_clock::now();
  StepRecord rec;
  rec.step = step;
  optimizer.zero_grad();
  try {
    const LossResult loss = model.loss(make_inputs(batch), batch.questions, NormMode::Train);
    if (!std::isfinite(loss.total_value)) throw NumericError("loss is not finite");
    loss.total.backward();
    rec.l_q = loss.l_q;
    rec.l_i = loss.l_i;
    rec.total = loss.total_value;
  } catch (const NumericError& e) {
    throw NumericError("training aborted at step " + std::to_string(step) + " (question ids " + id_list(batch) +
                       "): " + e.what());
  }
  if (clip_norm > 0.0) {
    std::vector<NamedTensor> params = optimizer.params();
    clip_grad_norm(params, clip_norm);
  }
  optimizer.step();
  optimizer.zero_grad();
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rec;
}

double evaluate_cross_entropy(Model& model, std::span<const Sample> samples, const FeatureStore* store,
                              std::size_t batch_size) {
  if (samples.empty()) throw Error("validation set is empty");
  NoGradGuard no_grad;
  double weighted = 0.0;
  std::size_t tokens = 0;
  for (const Batch& b : batches(samples, batch_size, 0, false, store)) {
    const ForwardResult r = model.forward(make_inputs(b), b.questions, NormMode::Eval);
    std::size_t n = 0;
    for (int id : b.questions) n += id == Vocabulary::kPad ? 0 : 1;
    if (n == 0) continue;
    weighted += cross_entropy(r.logits, b.questions, Vocabulary::kPad).item() * static_cast<double>(n);
    tokens += n;
  }
  return weighted / static_cast<double>(tokens);
}

// ---------------------------------------------------------------------------

Trainer::Trainer(Model& model, TrainConfig config, std::span<const Sample> samples, const FeatureStore* store)
    : model_(model),
      config_(config),
      optimizer_(model.trainable_parameters(), AdamConfig{config.lr}),
      stream_(samples, config.batch_size, config.seed, config.shuffle, store) {
  config_.validate(model.config().uses_image());
  if (model.config().uses_image() && !store) throw Error("this variant needs image features but no store was given");
}

StepRecord Trainer::step() {
  Batch batch = stream_.next();
  if (model_.config().uses_image() && batch.size < 2) batch = stream_.next();
  const StepRecord rec = train_step(batch, model_, optimizer_, step_ + 1, config_.clip_norm);
  ++step_;
  return rec;
}

TrainingState Trainer::state() const {
  TrainingState s;
  s.step = step_;
  s.optimizer_steps = optimizer_.step_count();
  for (const auto& p : optimizer_.params()) s.moment_names.push_back(p.name);
  s.moments = optimizer_.moments();
  s.loader = stream_.position();
  s.rng = model_.dropout_rng().state();
  return s;
}

void Trainer::restore(const TrainingState& state) {
  const auto& params = optimizer_.params();
  if (state.moment_names.size() != params.size()) throw Error("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.moment_names[i] != params[i].name) {
      throw Error("optimizer state for '" + state.moment_names[i] + "' found where '" + params[i].name +
                  "' was expected");
    }
  }
  optimizer_.restore(state.optimizer_steps, state.moments);
  stream_.set_position(state.loader);
  model_.dropout_rng().set_state(state.rng);
  step_ = state.step;
}

// ---------------------------------------------------------------------------

namespace {

std::string csv_row(const StepRecord& r) {
  char buf[160];
  if (r.l_i) {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g,%.17g,%.6f\n", static_cast<long long>(r.step), r.l_q, *r.l_i,
                  r.total, r.seconds);
  } else {
    std::snprintf(buf, sizeof buf, "%lld,%.17g,,%.17g,%.6f\n", static_cast<long long>(r.step), r.l_q, r.total,
                  r.seconds);
  }
  return buf;
}

constexpr const char* kCsvHeader = "step,L_q,L_i,total,seconds\n";

}  // namespace

void write_loss_csv(const std::filesystem::path& path, std::span<const StepRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << kCsvHeader;
  for (const auto& r : records) out << csv_row(r);
  if (!out) throw Error("failed writing " + path.string());
}

TrainOutputs train(Model& model, const TrainRequest& request) {
  if (request.samples.empty()) throw Error("training set is empty");
  if (!request.vocab) throw Error("train: a vocabulary is required for checkpoints");
  if (!request.run_config.contains("model")) throw Error("train: run config lacks a 'model' section");
  std::error_code ec;
  std::filesystem::create_directories(request.output_dir, ec);
  if (ec) throw Error("cannot create output directory " + request.output_dir.string() + ": " + ec.message());

  Trainer trainer(model, request.config, request.samples, request.store);
  if (request.resume) {
    if (!request.resume->training) throw Error("checkpoint holds no training state to resume from");
    trainer.restore(*request.resume->training);
  }

  TrainOutputs outputs;
  outputs.loss_csv = request.output_dir / "loss.csv";
  const bool append = request.resume && std::filesystem::exists(outputs.loss_csv);
  std::ofstream csv(outputs.loss_csv, append ? std::ios::binary | std::ios::app : std::ios::binary);
  if (!csv) throw Error("cannot write " + outputs.loss_csv.string());
  if (!append) csv << kCsvHeader;

  const auto save = [&](const std::filesystem::path& path) {
    const TrainingState state = trainer.state();
    save_checkpoint(path, request.run_config, *request.vocab, model, &state);
  };

  const auto total = static_cast<std::int64_t>(request.config.steps);
  while (trainer.steps_done() < total) {
    const StepRecord rec = trainer.step();
    outputs.records.push_back(rec);
    csv << csv_row(rec);
    csv.flush();
    if (request.on_step) request.on_step(rec);
    const auto done = static_cast<std::size_t>(rec.step);
    if (request.config.eval_every && done % request.config.eval_every == 0 && !request.validation.empty()) {
      outputs.validation.push_back(
          {rec.step, evaluate_cross_entropy(model, request.validation, request.store, request.config.batch_size)});
    }
    if (request.config.checkpoint_every && done % request.config.checkpoint_every == 0 &&
        rec.step != total) {
      char name[48];
      std::snprintf(name, sizeof name, "checkpoint-%06lld.vqgm", static_cast<long long>(rec.step));
      save(request.output_dir / name);
    }
  }
  if (!csv) throw Error("failed writing " + outputs.loss_csv.string());
  outputs.final_checkpoint = request.output_dir / "model.vqgm";
  save(outputs.final_checkpoint);
  return outputs;
}

}  // namespace vqg
