#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqg/dataset.hpp"
#include "vqg/feature_store.hpp"
#include "vqg/inference.hpp"
#include "vqg/model.hpp"

namespace vqg {

using Tokens = std::vector<std::string>;

struct EvalPair {
  Tokens hypothesis;
  std::vector<Tokens> references;  // at least one non-empty
  std::string key;                 // image key; CIDEr document frequencies are per key
};

/// Corpus BLEU with uniform weights over 1..n-grams, clipped counts and the
/// brevity penalty against the closest reference length (shorter on ties).
/// Returns 0 when any precision is 0. Scale 0-100.
double bleu_n(std::span<const EvalPair> pairs, int n);

/// Mean over pairs of the best LCS F-measure against any reference.
/// beta = 1 gives the harmonic mean. Scale 0-100.
double rouge_l(std::span<const EvalPair> pairs, double beta = 1.0);

/// CIDEr over 1..4-grams: tf-idf cosine with idf = log(|I| / max(df, 1))
/// computed over per-key reference sets, averaged over references and n,
/// times 10. Corpus mean times 100, so the range is 0-1000.
double cider(std::span<const EvalPair> pairs);

/// Exact-match METEOR: alignment with most matches then fewest chunks,
/// F = 10PR / (R + 9P), penalty 0.5 (chunks / matches)^3, best reference.
/// Scale 0-100.
double meteor_lite(std::span<const EvalPair> pairs);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};
MeteorAlignment meteor_align(const Tokens& hypothesis, const Tokens& reference);
std::size_t lcs_length(const Tokens& a, const Tokens& b);

struct EvalReport {
  double bleu1 = 0.0, bleu2 = 0.0, bleu3 = 0.0;
  double cider = 0.0, meteor = 0.0, rouge_l = 0.0;
  nlohmann::json metadata = nlohmann::json::object();

  bool bleu_monotone() const { return bleu1 >= bleu2 && bleu2 >= bleu3; }
  nlohmann::json to_json() const;
};

/// All six metrics; metadata records the metric variants and corpus size.
EvalReport score_pairs(std::span<const EvalPair> pairs, double rouge_beta = 1.0);

struct EvaluationRun {
  EvalReport report;
  std::vector<EvalPair> pairs;  // one per (image, category) group, in first-seen order
  std::vector<std::uint64_t> image_ids;
  std::vector<int> categories;
};

/// Generates one question per (image_id, category) group of `split` from
/// the image and category alone, scoring it against every ground-truth
/// question of that group.
EvaluationRun evaluate(Model& model, const Vocabulary& vocab, std::span<const RawSample> split,
                       const FeatureStore* store, DecodeMode mode = DecodeMode::Greedy, std::size_t beam_width = 1);

}  // namespace vqg
