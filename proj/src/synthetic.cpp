#include "vqg/synthetic.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "vqg/errors.hpp"
#include "vqg/rng.hpp"

namespace vqg {

namespace {

const std::vector<std::string> kColors{"red", "green", "blue"};
const std::vector<std::string> kCounts{"one", "two", "three", "four"};
const std::vector<std::string> kPlaces{"top", "bottom"};
const std::vector<std::string> kSizes{"big", "small"};

enum class Slot { Color, Place };

struct Template {
  const char* category;
  Slot slot;
  const char* text;  // "@" marks the slot
  std::string (*answer)(const PlantedPattern&);
};

std::string constant(const char* s) { return s; }

const std::vector<Template>& templates() {
  static const std::vector<Template> t{
      {"color", Slot::Place, "what color are the blobs at the @ ?",
       [](const PlantedPattern& p) { return kColors[static_cast<std::size_t>(p.color)]; }},
      {"count", Slot::Color, "how many @ blobs are there ?",
       [](const PlantedPattern& p) { return kCounts[static_cast<std::size_t>(p.count - 1)]; }},
      {"location", Slot::Color, "where are the @ blobs ?",
       [](const PlantedPattern& p) { return kPlaces[p.top ? 0 : 1]; }},
      {"attribute", Slot::Color, "are the @ blobs big or small ?",
       [](const PlantedPattern& p) { return kSizes[p.big ? 0 : 1]; }},
      {"binary", Slot::Color, "is there more than one @ blob ?",
       [](const PlantedPattern& p) { return std::string(p.count > 1 ? "yes" : "no"); }},
      {"shape", Slot::Color, "what shape are the @ blobs ?",
       [](const PlantedPattern&) { return constant("square"); }},
      {"spatial", Slot::Color, "what is next to the @ blob ?",
       [](const PlantedPattern& p) { return std::string(p.count > 1 ? "blob" : "nothing"); }},
      {"object", Slot::Color, "which object is @ ?", [](const PlantedPattern&) { return constant("thing"); }},
      {"material", Slot::Color, "what are the @ blobs made of ?",
       [](const PlantedPattern&) { return constant("paint"); }},
      {"activity", Slot::Color, "what are the @ blobs doing ?",
       [](const PlantedPattern&) { return constant("resting"); }},
      {"animal", Slot::Color, "which animal hides behind the @ blob ?",
       [](const PlantedPattern&) { return constant("none"); }},
      {"food", Slot::Color, "what food looks like the @ blob ?",
       [](const PlantedPattern&) { return constant("candy"); }},
      {"predicate", Slot::Color, "what is the @ blob sitting on ?",
       [](const PlantedPattern&) { return constant("canvas"); }},
      {"stuff", Slot::Color, "what is behind the @ blobs ?",
       [](const PlantedPattern&) { return constant("background"); }},
      {"time", Slot::Color, "when was the @ picture taken ?", [](const PlantedPattern&) { return constant("noon"); }},
      {"other", Slot::Color, "what is special about the @ blobs ?",
       [](const PlantedPattern&) { return constant("plain"); }},
  };
  return t;
}

const Template& template_for(int category) {
  const std::string& name = category_name(category);
  for (const auto& t : templates()) {
    if (name == t.category) return t;
  }
  throw Error("no synthetic template for category " + name);
}

const std::vector<std::string>& fillers(Slot slot) { return slot == Slot::Color ? kColors : kPlaces; }

std::string fill(const Template& t, const PlantedPattern& p) {
  std::string text = t.text;
  const std::string& word =
      t.slot == Slot::Color ? kColors[static_cast<std::size_t>(p.color)] : kPlaces[p.top ? 0 : 1];
  text.replace(text.find('@'), 1, word);
  return text;
}

}  // namespace

std::vector<int> synthetic_categories(std::size_t n) {
  if (n > kNumCategories) throw ConfigError("n_categories must be at most 16");
  std::vector<int> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(*category_id(templates()[i].category));
  return out;
}

std::string synthetic_question(int category, const PlantedPattern& p) { return fill(template_for(category), p); }

std::string synthetic_answer(int category, const PlantedPattern& p) { return template_for(category).answer(p); }

bool matches_template_family(int category, std::span<const std::string> tokens) {
  const Template& t = template_for(category);
  const auto pattern = tokenize(t.text);
  if (pattern.size() != tokens.size()) return false;
  const auto& legal = fillers(t.slot);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (pattern[i] == "@") {
      if (std::find(legal.begin(), legal.end(), tokens[i]) == legal.end()) return false;
    } else if (pattern[i] != tokens[i]) {
      return false;
    }
  }
  return true;
}

SyntheticCorpus make_synthetic(const SyntheticConfig& config) {
  const auto categories = synthetic_categories(config.n_categories);
  SyntheticCorpus corpus;
  Rng rng = Rng::derive(config.seed, "synthetic");
  constexpr std::size_t side = kSyntheticSide;
  constexpr std::size_t plane = side * side;
  constexpr std::size_t half = side / 2;

  for (std::size_t img = 0; img < config.n_images; ++img) {
    PlantedPattern p;
    p.color = static_cast<int>(rng.below(3));
    p.count = 1 + static_cast<int>(rng.below(4));
    p.top = rng.below(2) == 0;
    p.big = rng.below(2) == 0;
    const std::size_t size = p.big ? 6 : 3;

    std::vector<std::size_t> slots{0, 1, 2, 3};
    rng.shuffle(std::span<std::size_t>(slots));
    slots.resize(static_cast<std::size_t>(p.count));
    std::sort(slots.begin(), slots.end());

    std::vector<double> pixels(kSyntheticPixels);
    for (double& v : pixels) v = rng.uniform(0.0, 0.2);
    for (std::size_t slot : slots) {
      const std::size_t x0 = 1 + 8 * slot;
      // rows [1, half - size - 1] in the top half, mirrored below
      const std::size_t span = half - size - 1;
      const std::size_t y0 = (p.top ? 1 : half + 1) + static_cast<std::size_t>(rng.below(span));
      for (std::size_t y = y0; y < y0 + size; ++y) {
        for (std::size_t x = x0; x < x0 + size; ++x) {
          for (std::size_t c = 0; c < kSyntheticChannels; ++c) {
            pixels[c * plane + y * side + x] =
                static_cast<int>(c) == p.color ? rng.uniform(0.7, 1.0) : rng.uniform(0.0, 0.3);
          }
        }
      }
    }
    const auto image_id = static_cast<std::uint64_t>(img);
    corpus.store.add(image_id, std::move(pixels));
    corpus.patterns.push_back(p);
    for (int cat : categories) {
      corpus.samples.push_back({image_id, image_id * kNumCategories + static_cast<std::uint64_t>(cat),
                                synthetic_question(cat, p), synthetic_answer(cat, p), cat});
    }
  }
  return corpus;
}

void write_synthetic(const SyntheticCorpus& corpus, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error("cannot create " + dir.string() + ": " + ec.message());
  nlohmann::json questions = nlohmann::json::array();
  nlohmann::json annotations = nlohmann::json::array();
  std::map<std::string, std::string> answer_category;
  for (const auto& s : corpus.samples) {
    questions.push_back({{"image_id", s.image_id}, {"question_id", s.question_id}, {"question", s.question}});
    annotations.push_back(
        {{"image_id", s.image_id}, {"question_id", s.question_id}, {"multiple_choice_answer", s.answer}});
    answer_category.emplace(s.answer, category_name(s.category_id));
  }
  const auto write = [&](const std::string& name, const std::string& text) {
    std::ofstream out(dir / name, std::ios::binary);
    out << text;
    if (!out) throw Error("cannot write " + (dir / name).string());
  };
  write("questions.json", nlohmann::json{{"questions", questions}}.dump(1) + "\n");
  write("annotations.json", nlohmann::json{{"annotations", annotations}}.dump(1) + "\n");
  std::string tsv;
  for (const auto& [answer, category] : answer_category) tsv += answer + "\t" + category + "\n";
  write("category_map.tsv", tsv);
  corpus.store.save(dir / "features.vqgf");
}

}  // namespace vqg
