#include "vqg/vectors.hpp"

#include <charconv>
#include <fstream>
#include <optional>
#include <string>

#include "vqg/errors.hpp"

namespace vqg {

EmbeddingTable random_embeddings(const Vocabulary& vocab, std::size_t width, Rng& rng) {
  EmbeddingTable table{vocab.size(), width, std::vector<double>(vocab.size() * width), true};
  for (double& v : table.matrix) v = rng.normal(0.0, kEmbeddingFallbackStd);
  return table;
}

EmbeddingTable load_pretrained_vectors(const std::filesystem::path& path, const Vocabulary& vocab,
                                       std::size_t width, Rng& rng, VectorLoadReport* report) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read word-vector file " + path.string());

  std::vector<std::optional<std::vector<double>>> found(vocab.size());
  VectorLoadReport rep;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(' ') == std::string::npos) continue;
    ++rep.lines;

    const std::size_t word_end = line.find(' ');
    if (word_end == std::string::npos) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(width) + " values after the token, found 0");
    }
    const std::string word = line.substr(0, word_end);
    std::vector<double> values;
    values.reserve(width);
    const char* p = line.data() + word_end;
    const char* end = line.data() + line.size();
    while (p < end) {
      while (p < end && *p == ' ') ++p;
      if (p == end) break;
      double v = 0.0;
      auto [next, ec] = std::from_chars(p, end, v);
      if (ec != std::errc() || (next < end && *next != ' ')) {
        throw ParseError(path.string() + ":" + std::to_string(line_no) +
                         ": malformed number in vector for '" + word + "'");
      }
      values.push_back(v);
      p = next;
    }
    if (values.size() != width) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(width) + " values after the token, found " +
                       std::to_string(values.size()));
    }
    if (auto id = vocab.find(word); id && !found[static_cast<std::size_t>(*id)]) {
      found[static_cast<std::size_t>(*id)] = std::move(values);
    }
  }

  EmbeddingTable table{vocab.size(), width, std::vector<double>(vocab.size() * width), true};
  for (std::size_t r = 0; r < vocab.size(); ++r) {
    double* row = &table.matrix[r * width];
    if (found[r]) {
      std::copy(found[r]->begin(), found[r]->end(), row);
      ++rep.matched;
    } else {
      for (std::size_t c = 0; c < width; ++c) row[c] = rng.normal(0.0, kEmbeddingFallbackStd);
    }
  }
  rep.coverage = vocab.size() ? static_cast<double>(rep.matched) / static_cast<double>(vocab.size()) : 0.0;
  if (report) *report = rep;
  return table;
}

}  // namespace vqg
