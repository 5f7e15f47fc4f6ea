#include "vqg/text.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <fstream>

#include "vqg/errors.hpp"
#include "vqg/rng.hpp"

namespace vqg {

namespace {

std::string to_utf8(const icu::UnicodeString& s) {
  std::string out;
  s.toUTF8String(out);
  return out;
}

std::string code_point_utf8(UChar32 c) { return to_utf8(icu::UnicodeString(c)); }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  if (text.empty()) return tokens;

  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("tokenize: ICU NFC normalizer unavailable");
  const icu::UnicodeString raw =
      icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  const icu::UnicodeString norm = nfc->normalize(raw, status);
  if (U_FAILURE(status)) throw Error("tokenize: NFC normalization failed");

  std::vector<UChar32> word;
  const auto flush = [&] {
    if (word.empty()) return;
    std::size_t lo = 0, hi = word.size();
    while (lo < hi && u_ispunct(word[lo])) ++lo;
    while (hi > lo && u_ispunct(word[hi - 1])) --hi;
    for (std::size_t i = 0; i < lo; ++i) tokens.push_back(code_point_utf8(word[i]));
    if (lo < hi) {
      icu::UnicodeString core;
      for (std::size_t i = lo; i < hi; ++i) core.append(word[i]);
      tokens.push_back(to_utf8(core));
    }
    for (std::size_t i = hi; i < word.size(); ++i) tokens.push_back(code_point_utf8(word[i]));
    word.clear();
  };

  for (int32_t i = 0; i < norm.length(); i = norm.moveIndex32(i, 1)) {
    const UChar32 c = norm.char32At(i);
    if (u_isUWhiteSpace(c)) {
      flush();
    } else {
      word.push_back(c);
    }
  }
  flush();
  return tokens;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (const std::string& t : tokens) {
    if (!out.empty() && t != "?") out += ' ';
    out += t;
  }
  return out;
}

// ---------------------------------------------------------------------------

const std::array<std::string, Vocabulary::kNumSpecials>& Vocabulary::specials() {
  static const std::array<std::string, kNumSpecials> names{"<pad>", "<start>", "<end>", "<unk>"};
  return names;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  id_to_token_.reserve(kNumSpecials + tokens.size());
  for (const auto& s : specials()) {
    token_to_id_.emplace(s, static_cast<int>(id_to_token_.size()));
    id_to_token_.push_back(s);
  }
  for (const auto& t : tokens) {
    if (t.empty()) throw Error("vocabulary: empty token");
    if (!token_to_id_.emplace(t, static_cast<int>(id_to_token_.size())).second) {
      throw Error("vocabulary: duplicate token '" + t + "'");
    }
    id_to_token_.push_back(t);
  }
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = token_to_id_.find(token);
  if (it == token_to_id_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
    throw Error("vocabulary: id " + std::to_string(id) + " out of range");
  }
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::uint64_t Vocabulary::fingerprint() const {
  std::string joined;
  for (const auto& t : id_to_token_) {
    joined += t;
    joined += '\n';
  }
  return fnv1a64(joined);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write vocabulary file " + path.string());
  for (std::size_t i = kNumSpecials; i < id_to_token_.size(); ++i) out << id_to_token_[i] << '\n';
  if (!out) throw Error("failed writing vocabulary file " + path.string());
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read vocabulary file " + path.string());
  std::vector<std::string> tokens;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) throw ParseError(path.string() + ":" + std::to_string(line_no) + ": empty token");
    tokens.push_back(line);
  }
  try {
    return Vocabulary(tokens);
  } catch (const Error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

void VocabularyBuilder::add(std::string token) {
  for (const auto& s : Vocabulary::specials()) {
    if (token == s) return;
  }
  if (seen_.emplace(token, true).second) order_.push_back(std::move(token));
}

void VocabularyBuilder::add_text(std::string_view text) {
  for (auto& t : tokenize(text)) add(std::move(t));
}

void VocabularyBuilder::add_atomic(std::string_view token) {
  if (!token.empty()) add(std::string(token));
}

Vocabulary build_vocab(std::span<const std::string> documents,
                       std::span<const std::string> atomic_tokens) {
  VocabularyBuilder builder;
  for (const auto& d : documents) builder.add_text(d);
  for (const auto& t : atomic_tokens) builder.add_atomic(t);
  return builder.build();
}

// ---------------------------------------------------------------------------

TokenSeq encode(std::span<const std::string> tokens, const Vocabulary& vocab, std::size_t fixed_len,
                EndToken end) {
  if (fixed_len == 0) throw Error("encode: fixed_len must be at least 1");
  TokenSeq seq;
  seq.ids.reserve(fixed_len);
  for (const auto& t : tokens) {
    if (seq.ids.size() == fixed_len) break;
    seq.ids.push_back(vocab.id(t));
  }
  if (end == EndToken::Append && seq.ids.size() < fixed_len) seq.ids.push_back(Vocabulary::kEnd);
  seq.true_len = seq.ids.size();
  seq.ids.resize(fixed_len, Vocabulary::kPad);
  return seq;
}

std::vector<std::string> decode(std::span<const int> ids, const Vocabulary& vocab) {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == Vocabulary::kEnd || id == Vocabulary::kPad) break;
    if (id == Vocabulary::kStart) continue;
    out.push_back(vocab.token(id));
  }
  return out;
}

PadMask make_pad_mask(std::span<const TokenSeq> batch) {
  PadMask m;
  m.batch = batch.size();
  if (batch.empty()) return m;
  m.length = batch.front().ids.size();
  m.mask.reserve(m.batch * m.length);
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].ids.size() != m.length) {
      throw Error("make_pad_mask: ragged batch (row 0 has " + std::to_string(m.length) +
                  " ids, row " + std::to_string(b) + " has " + std::to_string(batch[b].ids.size()) +
                  ")");
    }
    for (int id : batch[b].ids) m.mask.push_back(id == Vocabulary::kPad ? 0 : 1);
  }
  return m;
}

PadMask make_pad_mask(std::span<const int> ids, std::size_t batch, std::size_t length) {
  if (ids.size() != batch * length) throw Error("make_pad_mask: id buffer does not match [B, T]");
  PadMask m{batch, length, {}};
  m.mask.reserve(ids.size());
  for (int id : ids) m.mask.push_back(id == Vocabulary::kPad ? 0 : 1);
  return m;
}

}  // namespace vqg
