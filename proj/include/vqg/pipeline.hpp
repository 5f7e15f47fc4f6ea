#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "vqg/ablation.hpp"
#include "vqg/inference.hpp"
#include "vqg/model.hpp"
#include "vqg/training.hpp"

namespace vqg {

struct DataPaths {
  std::filesystem::path questions, annotations, category_map, features, vectors;
  double test_fraction = 0.0;  // share of image ids held out, highest ids first

  nlohmann::json to_json() const;
  /// Fills empty paths from a to_json() object.
  void merge_defaults(const nlohmann::json& j);
  static DataPaths from_json(const nlohmann::json& j);
};

/// Everything a training or ablation run depends on. The output directory is
/// kept out of to_json(), so the same run written elsewhere hashes the same.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  DataPaths data;
  std::uint64_t seed = 0;  // drives model init, shuffling and every other stream
  std::filesystem::path output_dir;

  nlohmann::json to_json() const;
  /// Sections "model", "train", "data" and key "seed", each optional.
  static RunConfig from_json(const nlohmann::json& j, std::filesystem::path output_dir);
};

/// Ingests the dataset files and returns the statistics plus the drop count.
nlohmann::json dataset_stats(const DataPaths& data);

/// Writes the training-split vocabulary to `out`; returns size and fingerprint.
nlohmann::json build_vocab_file(const DataPaths& data, const std::filesystem::path& out);

/// Writes a synthetic corpus (questions, annotations, category map, pixels).
nlohmann::json make_synthetic_files(const std::filesystem::path& dir, std::size_t n_images,
                                    std::size_t n_categories, std::uint64_t seed);

/// Validates every path, loads the data, trains, and writes the checkpoints,
/// loss.csv and vocab.txt into config.output_dir. `resume` continues from a
/// checkpoint written under the same configuration (the step budget may differ).
nlohmann::json run_training(const RunConfig& config, const std::filesystem::path& resume = {},
                            const std::function<void(const StepRecord&)>& on_step = {});

/// The five-row matrix on the held-out split; writes ablation.json.
AblationResult run_ablation(const RunConfig& config, DecodeMode mode = DecodeMode::Greedy, std::size_t beam = 1,
                            const std::function<void(const std::string&, const StepRecord&)>& on_step = {});

struct CheckpointRequest {
  std::filesystem::path checkpoint;
  std::filesystem::path vocab;  // optional: must equal the checkpoint's vocabulary
  DataPaths data;               // empty fields default to the paths used in training
};

nlohmann::json generate_from_checkpoint(const CheckpointRequest& where, const GenRequest& request);

struct EvaluateOptions {
  std::string split = "test";  // test | train | all
  std::optional<double> test_fraction;  // defaults to the training value
  DecodeMode mode = DecodeMode::Greedy;
  std::size_t beam = 1;
};

nlohmann::json evaluate_checkpoint(const CheckpointRequest& where, const EvaluateOptions& options);

}  // namespace vqg
