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

namespace vqg {

/// Word-level tokenizer: NFC-normalizes, splits on Unicode whitespace and
/// peels leading/trailing punctuation (e.g. "?" or the danda "।") off each
/// word as separate single-character tokens.
std::vector<std::string> tokenize(std::string_view text);

/// Joins tokens with single spaces; a "?" token attaches to the previous word.
std::string detokenize(std::span<const std::string> tokens);

/// Frozen bidirectional token <-> id map. Ids 0..3 are reserved for
/// <pad>, <start>, <end>, <unk>.
class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kStart = 1;
  static constexpr int kEnd = 2;
  static constexpr int kUnk = 3;
  static constexpr std::size_t kNumSpecials = 4;
  static const std::array<std::string, kNumSpecials>& specials();

  /// Specials only.
  Vocabulary();
  /// Specials followed by `tokens` in order; duplicates and specials are rejected.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return id_to_token_.size(); }
  std::optional<int> find(std::string_view token) const;
  /// Id of `token`, or kUnk.
  int id(std::string_view token) const;
  const std::string& token(int id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }
  /// Stable 64-bit hash of the id assignment.
  std::uint64_t fingerprint() const;

  /// One non-special token per line; line i (0-based) holds id i + 4.
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& other) const { return id_to_token_ == other.id_to_token_; }

 private:
  struct Hash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int, Hash, std::equal_to<>> token_to_id_;
};

/// Accumulates tokens in first-occurrence order.
class VocabularyBuilder {
 public:
  /// Tokenizes `text` and records each token.
  void add_text(std::string_view text);
  /// Records `token` as-is (category names are control codes, never split).
  void add_atomic(std::string_view token);
  Vocabulary build() const { return Vocabulary(order_); }

 private:
  void add(std::string token);
  std::vector<std::string> order_;
  std::unordered_map<std::string, bool> seen_;
};

/// Documents are tokenized in order, then atomic tokens appended.
Vocabulary build_vocab(std::span<const std::string> documents,
                       std::span<const std::string> atomic_tokens = {});

struct TokenSeq {
  std::vector<int> ids;
  std::size_t true_len = 0;  // non-pad prefix length
};

enum class EndToken { None, Append };

/// Maps tokens to ids (unknown -> <unk>), optionally appends <end>, then
/// truncates from the right or pads with <pad> to exactly `fixed_len`.
TokenSeq encode(std::span<const std::string> tokens, const Vocabulary& vocab,
                std::size_t fixed_len, EndToken end = EndToken::None);

/// Tokens up to the first <end> or <pad>; <start> is skipped.
std::vector<std::string> decode(std::span<const int> ids, const Vocabulary& vocab);

/// Boolean [B, 1, T] padding mask, stored as [B, T]; true means "attend".
struct PadMask {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> mask;

  bool at(std::size_t b, std::size_t t) const { return mask[b * length + t] != 0; }
};

PadMask make_pad_mask(std::span<const TokenSeq> batch);
/// Mask over a flat [B, T] id buffer.
PadMask make_pad_mask(std::span<const int> ids, std::size_t batch, std::size_t length);

}  // namespace vqg
