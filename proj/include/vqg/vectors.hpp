#pragma once

#include <filesystem>
#include <vector>

#include "vqg/rng.hpp"
#include "vqg/text.hpp"

namespace vqg {

/// Word-vector matrix aligned with a vocabulary: row i embeds token id i.
struct EmbeddingTable {
  std::size_t rows = 0;
  std::size_t width = 0;
  std::vector<double> matrix;  // rows x width, row-major
  bool trainable = true;
};

struct VectorLoadReport {
  std::size_t lines = 0;     // non-empty lines read
  std::size_t matched = 0;   // vocabulary rows filled from the file
  double coverage = 0.0;     // matched / vocabulary size
};

/// Standard deviation of the random fallback for rows without a pretrained vector.
inline constexpr double kEmbeddingFallbackStd = 0.02;

/// Every row drawn from N(0, 0.02).
EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t width, Rng& rng);

/// Reads a GloVe-style text file (token followed by `width` floats per line).
/// Rows for vocabulary tokens found in the file take the file vector; the
/// rest fall back to N(0, 0.02). Throws ParseError naming the line on a
/// malformed record.
EmbeddingTable load_pretrained_vectors(const std::filesystem::path& path, const Vocabulary& vocab,
                                       std::size_t width, Rng& rng,
                                       VectorLoadReport* report = nullptr);

}  // namespace vqg
