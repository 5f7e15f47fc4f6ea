#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqg/batching.hpp"
#include "vqg/model.hpp"
#include "vqg/optim.hpp"
#include "vqg/rng.hpp"
#include "vqg/text.hpp"

namespace vqg {

/// 16 hex digits of FNV-1a over the compact JSON dump (keys sorted).
std::string config_hash(const nlohmann::json& config);

/// Everything besides the weights needed to continue training bit-exactly.
struct TrainingState {
  std::int64_t step = 0;
  std::int64_t optimizer_steps = 0;
  std::vector<std::string> moment_names;  // trainable parameters, optimizer order
  std::vector<Adam::Moments> moments;
  BatchStream::Position loader;
  Rng::State rng{};
};

/// Binary layout, all little-endian:
///   "VQGM", u32 version, config JSON (u32 length + bytes),
///   vocabulary (u32 count + non-special tokens),
///   u32 parameter count, each: name, u32 rank, u64 extents, f64 values,
///   u32 buffer count, each: name, u64 length, f64 values,
///   u8 has_training; if set: i64 step, i64 optimizer steps, u32 count of
///   (name, first moments, second moments), 4 x u64 RNG state,
///   u64 epoch, u64 cursor.
/// Nothing time-dependent is stored, so equal states give equal files.
struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json config;  // run configuration; config["model"] is the ModelConfig
  Vocabulary vocab;
  std::vector<std::pair<std::string, Tensor>> params;
  std::vector<std::pair<std::string, std::vector<double>>> buffers;
  std::optional<TrainingState> training;
};

void save_checkpoint(const std::filesystem::path& path, const nlohmann::json& config, const Vocabulary& vocab,
                     Model& model, const TrainingState* training = nullptr);
Checkpoint read_checkpoint(const std::filesystem::path& path);

/// Rebuilds the model from config["model"] and loads weights and buffers by name.
std::unique_ptr<Model> restore_model(const Checkpoint& checkpoint);

}  // namespace vqg
