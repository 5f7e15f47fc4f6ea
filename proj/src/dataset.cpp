#include "vqg/dataset.hpp"

#include <unicode/locid.h>
#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include "vqg/errors.hpp"

namespace vqg {

const std::array<std::string, kNumCategories>& category_names() {
  static const std::array<std::string, kNumCategories> names{
      "activity", "animal", "attribute", "binary", "color", "count",  "food",    "location",
      "material", "object", "other",     "predicate", "shape", "spatial", "stuff", "time"};
  return names;
}

std::optional<int> category_id(std::string_view name) {
  const auto& names = category_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (names[i] == name) return static_cast<int>(i);
  }
  return std::nullopt;
}

const std::string& category_name(int id) {
  if (id < 0 || static_cast<std::size_t>(id) >= kNumCategories) {
    throw Error("category id " + std::to_string(id) + " out of range");
  }
  return category_names()[static_cast<std::size_t>(id)];
}

namespace {

icu::UnicodeString nfc_unicode(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  const icu::UnicodeString raw =
      icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  icu::UnicodeString out = nfc->normalize(raw, status);
  if (U_FAILURE(status)) throw Error("NFC normalization failed");
  return out;
}

}  // namespace

std::string normalize_key(std::string_view text) {
  icu::UnicodeString s = nfc_unicode(text);
  s.toLower(icu::Locale::getRoot());
  icu::UnicodeString out;
  bool pending_space = false;
  for (int32_t i = 0; i < s.length(); i = s.moveIndex32(i, 1)) {
    const UChar32 c = s.char32At(i);
    if (u_isUWhiteSpace(c)) {
      pending_space = !out.isEmpty();
      continue;
    }
    if (pending_space) out.append(static_cast<UChar>(' '));
    pending_space = false;
    out.append(c);
  }
  std::string utf8;
  out.toUTF8String(utf8);
  return utf8;
}

std::size_t count_words(std::string_view text) {
  const icu::UnicodeString s = nfc_unicode(text);
  std::size_t words = 0;
  bool in_word = false;
  for (int32_t i = 0; i < s.length(); i = s.moveIndex32(i, 1)) {
    const bool space = u_isUWhiteSpace(s.char32At(i));
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return words;
}

// ---------------------------------------------------------------------------

void CategoryMap::add(std::string_view answer, int category) {
  category_name(category);
  std::string key = normalize_key(answer);
  if (key.empty()) throw Error("category map: empty answer");
  auto [it, inserted] = entries_.emplace(std::move(key), category);
  if (!inserted && it->second != category) {
    throw Error("category map: answer '" + it->first + "' mapped to both " +
                category_name(it->second) + " and " + category_name(category));
  }
}

std::optional<int> CategoryMap::lookup(std::string_view answer) const {
  auto it = entries_.find(normalize_key(answer));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

std::size_t CategoryMap::distinct_categories() const {
  std::set<int> used;
  for (const auto& [_, c] : entries_) used.insert(c);
  return used.size();
}

CategoryMap load_category_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read category map " + path.string());
  CategoryMap map;
  std::string line;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    ++row;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (normalize_key(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(row) + ": ";
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError(where + "expected answer<TAB>category, got '" + line + "'");
    const std::string answer = line.substr(0, tab);
    const std::string category = normalize_key(line.substr(tab + 1));
    const auto id = category_id(category);
    if (!id) throw ParseError(where + "unknown category '" + category + "' in row '" + line + "'");
    try {
      map.add(answer, *id);
    } catch (const Error& e) {
      throw ParseError(where + e.what());
    }
  }
  return map;
}

// ---------------------------------------------------------------------------

nlohmann::json DatasetStats::to_json() const {
  return {{"n_questions", n_questions}, {"n_images", n_images},   {"max_words", max_words},
          {"min_words", min_words},     {"avg_words", avg_words}};
}

DatasetStats compute_stats(std::span<const RawSample> samples) {
  DatasetStats s;
  if (samples.empty()) return s;
  std::unordered_set<std::uint64_t> images;
  std::size_t total = 0;
  s.min_words = std::numeric_limits<std::size_t>::max();
  for (const auto& r : samples) {
    images.insert(r.image_id);
    const std::size_t w = count_words(r.question);
    total += w;
    s.max_words = std::max(s.max_words, w);
    s.min_words = std::min(s.min_words, w);
  }
  s.n_questions = samples.size();
  s.n_images = images.size();
  s.avg_words = static_cast<double>(total) / static_cast<double>(samples.size());
  return s;
}

namespace {

const nlohmann::json& record_list(const nlohmann::json& doc, const char* key, const char* what) {
  if (doc.is_array()) return doc;
  if (doc.is_object() && doc.contains(key) && doc.at(key).is_array()) return doc.at(key);
  throw ParseError(std::string(what) + ": expected a list of records or an object with '" + key + "'");
}

std::uint64_t field_u64(const nlohmann::json& rec, const char* key, const std::string& where) {
  if (!rec.is_object() || !rec.contains(key) || !rec.at(key).is_number_integer() ||
      rec.at(key).get<std::int64_t>() < 0) {
    throw ParseError(where + ": missing or invalid integer field '" + key + "'");
  }
  return rec.at(key).get<std::uint64_t>();
}

std::string field_str(const nlohmann::json& rec, const char* key, const std::string& where) {
  if (!rec.is_object() || !rec.contains(key) || !rec.at(key).is_string()) {
    throw ParseError(where + ": missing or invalid string field '" + key + "'");
  }
  return rec.at(key).get<std::string>();
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace

IngestResult ingest(const nlohmann::json& questions, const nlohmann::json& annotations,
                    const CategoryMap& map) {
  struct Question {
    std::uint64_t image_id;
    std::string text;
  };
  std::unordered_map<std::uint64_t, Question> by_id;
  const auto& qs = record_list(questions, "questions", "questions file");
  for (std::size_t i = 0; i < qs.size(); ++i) {
    const std::string where = "questions record " + std::to_string(i);
    const auto qid = field_u64(qs[i], "question_id", where);
    Question q{field_u64(qs[i], "image_id", where), field_str(qs[i], "question", where)};
    if (!by_id.emplace(qid, std::move(q)).second) {
      throw ParseError(where + ": duplicate question_id " + std::to_string(qid));
    }
  }

  IngestResult result;
  std::unordered_set<std::uint64_t> annotated;
  const auto& as = record_list(annotations, "annotations", "annotations file");
  for (std::size_t i = 0; i < as.size(); ++i) {
    const std::string where = "annotations record " + std::to_string(i);
    const auto qid = field_u64(as[i], "question_id", where);
    std::string answer = field_str(as[i], "multiple_choice_answer", where);
    if (!annotated.insert(qid).second) {
      throw ParseError(where + ": duplicate question_id " + std::to_string(qid));
    }
    auto q = by_id.find(qid);
    if (q == by_id.end()) {
      throw ParseError(where + ": question_id " + std::to_string(qid) + " not in questions file");
    }
    const auto cat = map.lookup(answer);
    if (!cat) {
      ++result.dropped;
      continue;
    }
    result.samples.push_back({q->second.image_id, qid, q->second.text, std::move(answer), *cat});
  }
  result.stats = compute_stats(result.samples);
  return result;
}

IngestResult ingest_files(const std::filesystem::path& questions_file,
                          const std::filesystem::path& annotations_file, const CategoryMap& map) {
  return ingest(read_json(questions_file), read_json(annotations_file), map);
}

Vocabulary build_corpus_vocab(std::span<const RawSample> samples) {
  VocabularyBuilder builder;
  for (const auto& s : samples) builder.add_text(s.question);
  for (const auto& s : samples) builder.add_text(s.answer);
  for (const auto& name : category_names()) builder.add_atomic(name);
  return builder.build();
}

std::vector<Sample> encode_samples(std::span<const RawSample> raw, const Vocabulary& vocab,
                                   std::size_t question_len, std::size_t answer_len) {
  std::vector<Sample> out;
  out.reserve(raw.size());
  for (const auto& r : raw) {
    category_name(r.category_id);
    Sample s;
    s.image_id = r.image_id;
    s.question_id = r.question_id;
    s.question = encode(tokenize(r.question), vocab, question_len, EndToken::Append);
    s.answer = encode(tokenize(r.answer), vocab, answer_len, EndToken::None);
    s.category_id = r.category_id;
    out.push_back(std::move(s));
  }
  return out;
}

std::pair<std::vector<RawSample>, std::vector<RawSample>> split_by_image(
    std::span<const RawSample> samples, std::span<const std::uint64_t> held_out) {
  const std::unordered_set<std::uint64_t> held(held_out.begin(), held_out.end());
  std::pair<std::vector<RawSample>, std::vector<RawSample>> out;
  for (const auto& s : samples) (held.count(s.image_id) ? out.second : out.first).push_back(s);
  return out;
}

std::vector<std::uint64_t> held_out_images(std::span<const RawSample> samples, double fraction) {
  if (!(fraction >= 0.0 && fraction < 1.0)) throw ConfigError("test_fraction: must be in [0, 1)");
  std::set<std::uint64_t> ids;
  for (const auto& s : samples) ids.insert(s.image_id);
  const auto n = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(ids.size())));
  return {std::prev(ids.end(), static_cast<std::ptrdiff_t>(n)), ids.end()};
}

}  // namespace vqg
