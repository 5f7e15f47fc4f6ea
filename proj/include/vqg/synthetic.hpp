#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vqg/dataset.hpp"
#include "vqg/feature_store.hpp"

namespace vqg {

inline constexpr std::size_t kSyntheticChannels = 3;
inline constexpr std::size_t kSyntheticSide = 32;
inline constexpr std::size_t kSyntheticPixels = kSyntheticChannels * kSyntheticSide * kSyntheticSide;

/// What the generator planted in one image. Blobs are axis-aligned squares
/// of side 6 (big) or 3 (small), all in the top or bottom half, at distinct
/// slots among four columns eight pixels apart, so they never touch. Blob
/// pixels are bright in the dominant channel only.
struct PlantedPattern {
  int color = 0;  // 0 red, 1 green, 2 blue
  int count = 1;  // 1..4
  bool top = true;
  bool big = true;
  bool operator==(const PlantedPattern&) const = default;
};

struct SyntheticConfig {
  std::size_t n_images = 0;
  std::size_t n_categories = 4;
  std::uint64_t seed = 0;
};

struct SyntheticCorpus {
  FeatureStore store{kSyntheticPixels};  // CHW pixels in [0, 1]
  std::vector<RawSample> samples;        // one per (image, category)
  std::vector<PlantedPattern> patterns;  // indexed by image id
};

/// Categories used for the first `n` slots: color, count, location,
/// attribute, then the rest.
std::vector<int> synthetic_categories(std::size_t n);

std::string synthetic_question(int category, const PlantedPattern& p);
std::string synthetic_answer(int category, const PlantedPattern& p);

/// True when `tokens` instantiate the question template of `category` with
/// any legal slot filler.
bool matches_template_family(int category, std::span<const std::string> tokens);

SyntheticCorpus make_synthetic(const SyntheticConfig& config);

/// Writes the corpus in the same on-disk form as a real dataset:
/// questions.json, annotations.json, category_map.tsv and features.vqgf.
/// Every synthetic answer belongs to exactly one category, so ingesting
/// these files gives back `corpus.samples`.
void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir);

}  // namespace vqg
