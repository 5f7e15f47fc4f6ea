#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqg/batching.hpp"
#include "vqg/checkpoint.hpp"
#include "vqg/model.hpp"
#include "vqg/optim.hpp"

namespace vqg {

struct TrainConfig {
  std::size_t steps = 13000;  // optimizer updates
  std::size_t batch_size = 64;
  double lr = 0.003;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::size_t eval_every = 0;        // 0: no validation pass
  bool shuffle = true;
  double clip_norm = 0.0;  // 0: no clipping

  /// `bn_trains`: the model has a batch-norm layer, so batches must hold 2+ rows.
  void validate(bool bn_trains) const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
  bool operator==(const TrainConfig&) const = default;
};

struct StepRecord {
  std::int64_t step = 0;  // 1-based optimizer update index
  double l_q = 0.0;
  std::optional<double> l_i;
  double total = 0.0;
  double seconds = 0.0;  // wall time of this step
};

struct ValidationRecord {
  std::int64_t step = 0;
  double cross_entropy = 0.0;
};

/// One forward/backward/update on `batch`. Gradients are zeroed before and
/// after. A non-finite value raises NumericError naming the step and the
/// batch's question ids.
StepRecord train_step(const Batch& batch, Model& model, Adam& optimizer, std::int64_t step, double clip_norm = 0.0);

/// Mean teacher-forced CE over `samples` in eval mode (batches of `batch_size`).
double evaluate_cross_entropy(Model& model, std::span<const Sample> samples, const FeatureStore* store,
                              std::size_t batch_size);

/// Owns the optimizer and batch stream for one model; checkpoints capture
/// its whole state so a resumed run continues bit-exactly.
class Trainer {
 public:
  Trainer(Model& model, TrainConfig config, std::span<const Sample> samples, const FeatureStore* store);

  /// Trains one optimizer update; batches of one row are skipped while batch
  /// norm is in the graph.
  StepRecord step();
  std::int64_t steps_done() const { return step_; }
  Adam& optimizer() { return optimizer_; }

  TrainingState state() const;
  void restore(const TrainingState& state);

 private:
  Model& model_;
  TrainConfig config_;
  Adam optimizer_;
  BatchStream stream_;
  std::int64_t step_ = 0;
};

struct TrainOutputs {
  std::vector<StepRecord> records;
  std::vector<ValidationRecord> validation;
  std::filesystem::path final_checkpoint;
  std::filesystem::path loss_csv;
};

struct TrainRequest {
  TrainConfig config;
  nlohmann::json run_config;  // embedded in every checkpoint; must hold "model"
  std::filesystem::path output_dir;
  std::span<const Sample> samples;
  std::span<const Sample> validation;
  const FeatureStore* store = nullptr;
  const Vocabulary* vocab = nullptr;
  const Checkpoint* resume = nullptr;  // continue from this state
  std::function<void(const StepRecord&)> on_step;
};

/// Runs until config.steps updates, writing `loss.csv`, periodic
/// `checkpoint-<step>.vqgm` files and `model.vqgm`.
TrainOutputs train(Model& model, const TrainRequest& request);

/// CSV `step,L_q,L_i,total,seconds`; L_i is empty when absent.
void write_loss_csv(const std::filesystem::path& path, std::span<const StepRecord> records);

}  // namespace vqg
