#include "vqg/inference.hpp"

#include <algorithm>
#include <cmath>

#include "vqg/errors.hpp"

namespace vqg {

nlohmann::json GenResult::to_json() const {
  return {{"ids", ids},
          {"tokens", tokens},
          {"text", text},
          {"log_probs", log_probs},
          {"stop_reason", stop == StopReason::EndToken ? "end-token" : "length"}};
}

namespace {

void validate(const GenRequest& r, const Model& model) {
  if (!category_id(r.category)) throw Error("unknown category '" + r.category + "'");
  if (r.max_len < 1 || r.max_len > model.config().question_len) {
    throw Error("max_len must be between 1 and " + std::to_string(model.config().question_len));
  }
  if (r.mode == DecodeMode::Beam && (r.beam_width < 1 || r.beam_width > 5)) {
    throw Error("beam width must be between 1 and 5");
  }
}

// Rows of the model input for `requests`, each repeated `copies` times.
ModelInputs request_inputs(std::span<const GenRequest> requests, std::size_t copies, const Model& model,
                           const FeatureStore* store) {
  const ModelConfig& c = model.config();
  ModelInputs in;
  in.batch = requests.size() * copies;
  std::vector<double> pixels;
  for (const auto& r : requests) {
    std::vector<double> row;
    if (c.uses_image()) {
      if (r.image_id) {
        if (!store) throw Error("image id given but no feature store loaded");
        const auto v = store->get(*r.image_id);
        row.assign(v.begin(), v.end());
      } else {
        row = r.features;
      }
      if (row.size() != c.input_width()) {
        throw DimensionError("image input has " + std::to_string(row.size()) + " values, model expects " +
                             std::to_string(c.input_width()));
      }
    }
    for (std::size_t k = 0; k < copies; ++k) {
      pixels.insert(pixels.end(), row.begin(), row.end());
      in.answers.insert(in.answers.end(), c.answer_len, Vocabulary::kPad);
      in.categories.push_back(*category_id(r.category));
    }
  }
  if (c.uses_image()) in.images = Tensor({in.batch, c.input_width()}, std::move(pixels));
  return in;
}

std::vector<double> log_softmax_row(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

bool selectable(int id) { return id != Vocabulary::kPad && id != Vocabulary::kStart; }

// Decoder log-probabilities at the last position for each row of `prefixes`.
std::vector<std::vector<double>> next_log_probs(Model& model, const Fused& x, const Tensor& image,
                                                const std::vector<std::vector<int>>& prefixes) {
  const std::size_t rows = prefixes.size();
  const std::size_t len = prefixes.front().size() + 1;
  std::vector<int> inputs;
  inputs.reserve(rows * len);
  for (const auto& p : prefixes) {
    inputs.push_back(Vocabulary::kStart);
    inputs.insert(inputs.end(), p.begin(), p.end());
  }
  const Tensor logits = model.decode_inputs(x, inputs, len, image, NormMode::Eval);
  const std::size_t V = logits.dim(2);
  std::vector<std::vector<double>> out;
  for (std::size_t r = 0; r < rows; ++r) {
    out.push_back(log_softmax_row(logits.data().subspan((r * len + len - 1) * V, V)));
  }
  return out;
}

GenResult finish(std::vector<int> ids, std::vector<double> log_probs, const Vocabulary& vocab) {
  GenResult g;
  g.stop = !ids.empty() && ids.back() == Vocabulary::kEnd ? StopReason::EndToken : StopReason::Length;
  g.tokens = decode(ids, vocab);
  g.text = detokenize(g.tokens);
  g.ids = std::move(ids);
  g.log_probs = std::move(log_probs);
  return g;
}

// Rows of a fused memory picked by `rows`.
Fused take_rows(const Fused& x, const Tensor& image, const std::vector<std::size_t>& rows, Tensor* image_out) {
  std::vector<Tensor> xs, is;
  Fused f;
  f.length = x.length;
  for (std::size_t r : rows) {
    xs.push_back(slice(x.x, 0, r, 1));
    if (image.defined()) is.push_back(slice(image, 0, r, 1));
    f.mask.insert(f.mask.end(), x.mask.begin() + static_cast<long>(r * x.length),
                  x.mask.begin() + static_cast<long>((r + 1) * x.length));
  }
  f.x = xs.size() == 1 ? xs.front() : concat(xs, 0);
  if (image.defined()) *image_out = is.size() == 1 ? is.front() : concat(is, 0);
  return f;
}

std::vector<GenResult> greedy(std::span<const GenRequest> requests, Model& model, const Vocabulary& vocab,
                              const FeatureStore* store) {
  const ModelInputs in = request_inputs(requests, 1, model, store);
  Tensor image;
  const Fused x = model.encode(in, NormMode::Eval, nullptr, &image);
  const std::size_t B = requests.size();
  std::size_t longest = 0;
  for (const auto& r : requests) longest = std::max(longest, r.max_len);

  std::vector<std::vector<int>> seqs(B);
  std::vector<std::vector<double>> lps(B);
  std::vector<bool> done(B, false);
  for (std::size_t step = 0; step < longest; ++step) {
    std::vector<std::size_t> active;
    for (std::size_t b = 0; b < B; ++b) {
      if (!done[b]) active.push_back(b);
    }
    if (active.empty()) break;
    std::vector<std::vector<int>> prefixes;
    for (std::size_t b : active) prefixes.push_back(seqs[b]);
    Tensor sub_image;
    const Fused sub = active.size() == B ? x : take_rows(x, image, active, &sub_image);
    const auto lp = next_log_probs(model, sub, active.size() == B ? image : sub_image, prefixes);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t b = active[a];
      int best = -1;
      for (std::size_t id = 0; id < lp[a].size(); ++id) {
        if (!selectable(static_cast<int>(id))) continue;
        if (best < 0 || lp[a][id] > lp[a][static_cast<std::size_t>(best)]) best = static_cast<int>(id);
      }
      seqs[b].push_back(best);
      lps[b].push_back(lp[a][static_cast<std::size_t>(best)]);
      if (best == Vocabulary::kEnd || seqs[b].size() >= requests[b].max_len) done[b] = true;
    }
  }
  std::vector<GenResult> out;
  for (std::size_t b = 0; b < B; ++b) out.push_back(finish(std::move(seqs[b]), std::move(lps[b]), vocab));
  return out;
}

GenResult beam(const GenRequest& request, Model& model, const Vocabulary& vocab, const FeatureStore* store) {
  const std::size_t k = request.beam_width;
  const ModelInputs in = request_inputs(std::span<const GenRequest>(&request, 1), k, model, store);
  Tensor image;
  const Fused x = model.encode(in, NormMode::Eval, nullptr, &image);

  struct Hyp {
    std::vector<int> ids;
    std::vector<double> lps;
    double score = 0.0;
  };
  std::vector<Hyp> active{Hyp{}};
  std::vector<Hyp> finished;
  for (std::size_t step = 0; step < request.max_len && !active.empty(); ++step) {
    std::vector<std::vector<int>> prefixes;
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < active.size(); ++i) {
      prefixes.push_back(active[i].ids);
      rows.push_back(i);
    }
    Tensor sub_image;
    const Fused sub = take_rows(x, image, rows, &sub_image);
    const auto lp = next_log_probs(model, sub, sub_image, prefixes);

    struct Cand {
      double score;
      std::size_t beam;
      int id;
    };
    std::vector<Cand> cands;
    for (std::size_t i = 0; i < active.size(); ++i) {
      for (std::size_t id = 0; id < lp[i].size(); ++id) {
        if (selectable(static_cast<int>(id))) cands.push_back({active[i].score + lp[i][id], i, static_cast<int>(id)});
      }
    }
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      if (a.beam != b.beam) return a.beam < b.beam;
      return a.id < b.id;
    });
    std::vector<Hyp> next;
    for (std::size_t c = 0; c < std::min(k, cands.size()); ++c) {
      Hyp h = active[cands[c].beam];
      h.ids.push_back(cands[c].id);
      h.lps.push_back(lp[cands[c].beam][static_cast<std::size_t>(cands[c].id)]);
      h.score = cands[c].score;
      (cands[c].id == Vocabulary::kEnd ? finished : next).push_back(std::move(h));
    }
    active = std::move(next);
  }
  for (auto& h : active) finished.push_back(std::move(h));
  const auto best = std::max_element(finished.begin(), finished.end(),
                                     [](const Hyp& a, const Hyp& b) { return a.score < b.score; });
  return finish(std::move(best->ids), std::move(best->lps), vocab);
}

}  // namespace

std::vector<GenResult> generate_batch(std::span<const GenRequest> requests, Model& model, const Vocabulary& vocab,
                                      const FeatureStore* store) {
  if (requests.empty()) return {};
  for (const auto& r : requests) {
    validate(r, model);
    if (r.mode != requests.front().mode) throw Error("generate_batch: requests must share one decode mode");
  }
  NoGradGuard no_grad;
  if (requests.front().mode == DecodeMode::Greedy) return greedy(requests, model, vocab, store);
  std::vector<GenResult> out;
  for (const auto& r : requests) out.push_back(beam(r, model, vocab, store));
  return out;
}

GenResult generate(const GenRequest& request, Model& model, const Vocabulary& vocab, const FeatureStore* store) {
  return generate_batch(std::span<const GenRequest>(&request, 1), model, vocab, store).front();
}

double sequence_log_likelihood(const GenRequest& request, std::span<const int> ids, Model& model,
                               const Vocabulary& vocab, const FeatureStore* store) {
  (void)vocab;
  validate(request, model);
  if (ids.empty()) return 0.0;
  NoGradGuard no_grad;
  const ModelInputs in = request_inputs(std::span<const GenRequest>(&request, 1), 1, model, store);
  Tensor image;
  const Fused x = model.encode(in, NormMode::Eval, nullptr, &image);
  std::vector<int> inputs{Vocabulary::kStart};
  inputs.insert(inputs.end(), ids.begin(), ids.end() - 1);
  const Tensor logits = model.decode_inputs(x, inputs, inputs.size(), image, NormMode::Eval);
  const std::size_t V = logits.dim(2);
  double total = 0.0;
  for (std::size_t t = 0; t < ids.size(); ++t) {
    total += log_softmax_row(logits.data().subspan(t * V, V))[static_cast<std::size_t>(ids[t])];
  }
  return total;
}

}  // namespace vqg
