#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqg/dataset.hpp"
#include "vqg/feature_store.hpp"
#include "vqg/inference.hpp"
#include "vqg/metrics.hpp"
#include "vqg/model.hpp"
#include "vqg/training.hpp"
#include "vqg/vectors.hpp"

namespace vqg {

/// The five rows: image-only, text-only, without-image-recon (image-cat
/// with reconstruction off), image-cat, image-ans-cat.
std::vector<std::pair<std::string, ModelConfig>> ablation_rows(const ModelConfig& base);

struct AblationRequest {
  ModelConfig base;
  TrainConfig train;
  nlohmann::json run_config = nlohmann::json::object();  // each row's checkpoints get a copy with its model section
  std::filesystem::path output_dir;                      // one subdirectory per row
  std::span<const Sample> train_samples;
  std::span<const RawSample> test_samples;
  const FeatureStore* store = nullptr;
  const Vocabulary* vocab = nullptr;
  const EmbeddingTable* embeddings = nullptr;
  DecodeMode mode = DecodeMode::Greedy;
  std::size_t beam_width = 1;
  std::function<void(const std::string& row, const StepRecord&)> on_step;
};

struct AblationRow {
  std::string name;
  ModelConfig config;
  std::optional<std::string> error;  // set when the row failed
  EvalReport report;
  std::size_t parameter_count = 0;
  bool logged_l_i = false;  // any StepRecord carried L_i
  std::optional<double> final_l_q;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  /// Keyed by row name: the six metrics, or {"error": ...} for failed rows.
  nlohmann::json to_json() const;
};

/// Trains and evaluates each row in turn; a failing row is recorded and the
/// remaining rows still run.
AblationResult run_ablation_matrix(const AblationRequest& request);

}  // namespace vqg
