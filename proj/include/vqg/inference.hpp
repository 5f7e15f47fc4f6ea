#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqg/feature_store.hpp"
#include "vqg/model.hpp"
#include "vqg/text.hpp"

namespace vqg {

enum class DecodeMode { Greedy, Beam };

struct GenRequest {
  std::optional<std::uint64_t> image_id;  // looked up in the feature store
  std::vector<double> features;           // used when image_id is absent
  std::string category;
  std::size_t max_len = kQuestionLen;
  DecodeMode mode = DecodeMode::Greedy;
  std::size_t beam_width = 1;  // 1..5, beam mode only
};

enum class StopReason { EndToken, Length };

struct GenResult {
  std::vector<int> ids;  // emitted ids, including a final <end> when one was produced
  std::vector<std::string> tokens;  // words before <end>
  std::string text;
  std::vector<double> log_probs;  // one per emitted id
  StopReason stop = StopReason::Length;

  nlohmann::json to_json() const;
  bool operator==(const GenResult&) const = default;
};

/// Realistic setting: only the image and the category reach the model; the
/// answer slots of image-ans-cat are all padding and masked out. Greedy
/// takes the arg-max (lowest id on ties) over every token except <pad> and
/// <start>; generation stops at <end> or `max_len`.
GenResult generate(const GenRequest& request, Model& model, const Vocabulary& vocab,
                   const FeatureStore* store = nullptr);

/// Same results as calling generate() on each request in turn.
std::vector<GenResult> generate_batch(std::span<const GenRequest> requests, Model& model, const Vocabulary& vocab,
                                      const FeatureStore* store = nullptr);

/// Teacher-forced sum of log-probabilities of `ids` under the request's conditioning.
double sequence_log_likelihood(const GenRequest& request, std::span<const int> ids, Model& model,
                               const Vocabulary& vocab, const FeatureStore* store = nullptr);

}  // namespace vqg
