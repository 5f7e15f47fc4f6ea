#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "vqg/text.hpp"

namespace vqg {

inline constexpr std::size_t kNumCategories = 16;

/// Canonical category names; a category id is an index into this list.
const std::array<std::string, kNumCategories>& category_names();
std::optional<int> category_id(std::string_view name);
const std::string& category_name(int id);

/// Lowercases, NFC-normalizes, trims and collapses internal whitespace runs
/// to one ASCII space. Used for answer lookup.
std::string normalize_key(std::string_view text);

/// Number of whitespace-separated words in `text`, before any truncation.
std::size_t count_words(std::string_view text);

/// answer -> category id.
class CategoryMap {
 public:
  /// Later duplicates must agree with the first mapping.
  void add(std::string_view answer, int category);
  std::optional<int> lookup(std::string_view answer) const;
  std::size_t size() const { return entries_.size(); }
  /// Number of distinct categories used.
  std::size_t distinct_categories() const;

 private:
  std::unordered_map<std::string, int> entries_;
};

/// Reads a TSV of `answer<TAB>category`. Blank lines are skipped; a row with
/// an unknown category or no tab raises ParseError naming the row.
CategoryMap load_category_map(const std::filesystem::path& path);

/// A retained question before tokenization.
struct RawSample {
  std::uint64_t image_id = 0;
  std::uint64_t question_id = 0;
  std::string question;
  std::string answer;
  int category_id = 0;

  bool operator==(const RawSample&) const = default;
};

struct DatasetStats {
  std::size_t n_questions = 0;
  std::size_t n_images = 0;
  std::size_t max_words = 0;
  std::size_t min_words = 0;
  double avg_words = 0.0;

  nlohmann::json to_json() const;
  bool operator==(const DatasetStats&) const = default;
};

DatasetStats compute_stats(std::span<const RawSample> samples);

struct IngestResult {
  std::vector<RawSample> samples;
  DatasetStats stats;
  std::size_t dropped = 0;  // annotated questions whose answer had no category
};

/// Joins annotations to questions on question_id, keeps those whose
/// `multiple_choice_answer` maps to a category, in annotation order.
/// Throws ParseError for malformed records (with the record index), a
/// duplicate question id, or an annotation whose question is missing.
IngestResult ingest(const nlohmann::json& questions, const nlohmann::json& annotations,
                    const CategoryMap& map);
IngestResult ingest_files(const std::filesystem::path& questions_file,
                          const std::filesystem::path& annotations_file, const CategoryMap& map);

/// Question, answer and category names in corpus order, categories last, so
/// every category is a single token even if absent from the corpus.
Vocabulary build_corpus_vocab(std::span<const RawSample> samples);

struct Sample {
  std::uint64_t image_id = 0;
  std::uint64_t question_id = 0;
  TokenSeq question;  // ends with <end> when it fits
  TokenSeq answer;    // no <end>
  int category_id = 0;
};

inline constexpr std::size_t kQuestionLen = 20;
inline constexpr std::size_t kAnswerLen = 5;

std::vector<Sample> encode_samples(std::span<const RawSample> raw, const Vocabulary& vocab,
                                   std::size_t question_len = kQuestionLen,
                                   std::size_t answer_len = kAnswerLen);

/// Splits by image so no image appears on both sides: images whose id is in
/// `held_out` go to the second list.
std::pair<std::vector<RawSample>, std::vector<RawSample>> split_by_image(
    std::span<const RawSample> samples, std::span<const std::uint64_t> held_out);

/// The highest ceil(fraction * n) of the n distinct image ids, ascending.
std::vector<std::uint64_t> held_out_images(std::span<const RawSample> samples, double fraction);

}  // namespace vqg
