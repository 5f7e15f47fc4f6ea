#include "vqg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <unordered_map>

#include "vqg/errors.hpp"

namespace vqg {

namespace {

using NgramCounts = std::map<Tokens, std::size_t>;

NgramCounts ngrams(const Tokens& s, std::size_t n) {
  NgramCounts c;
  if (s.size() < n) return c;
  for (std::size_t i = 0; i + n <= s.size(); ++i) ++c[Tokens(s.begin() + static_cast<long>(i), s.begin() + static_cast<long>(i + n))];
  return c;
}

void check_corpus(std::span<const EvalPair> pairs, const char* metric) {
  if (pairs.empty()) throw Error(std::string(metric) + ": empty corpus");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    bool any = false;
    for (const auto& r : pairs[i].references) any = any || !r.empty();
    if (!any) throw Error(std::string(metric) + ": pair " + std::to_string(i) + " has no non-empty reference");
  }
}

}  // namespace

double bleu_n(std::span<const EvalPair> pairs, int n) {
  if (n < 1 || n > 3) throw Error("bleu_n: n must be 1, 2 or 3");
  check_corpus(pairs, "bleu");
  std::vector<double> matched(static_cast<std::size_t>(n), 0.0), total(static_cast<std::size_t>(n), 0.0);
  double hyp_len = 0.0, ref_len = 0.0;
  for (const auto& p : pairs) {
    const auto c = static_cast<double>(p.hypothesis.size());
    hyp_len += c;
    std::size_t best = 0;
    double best_gap = -1.0;
    for (const auto& r : p.references) {
      const double gap = std::abs(static_cast<double>(r.size()) - c);
      if (best_gap < 0.0 || gap < best_gap || (gap == best_gap && r.size() < best)) {
        best_gap = gap;
        best = r.size();
      }
    }
    ref_len += static_cast<double>(best);
    for (int k = 1; k <= n; ++k) {
      const auto idx = static_cast<std::size_t>(k - 1);
      const NgramCounts h = ngrams(p.hypothesis, static_cast<std::size_t>(k));
      NgramCounts max_ref;
      for (const auto& r : p.references) {
        for (const auto& [g, cnt] : ngrams(r, static_cast<std::size_t>(k))) max_ref[g] = std::max(max_ref[g], cnt);
      }
      for (const auto& [g, cnt] : h) {
        total[idx] += static_cast<double>(cnt);
        auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[idx] += static_cast<double>(std::min(cnt, it->second));
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    const auto idx = static_cast<std::size_t>(k);
    if (matched[idx] == 0.0) return 0.0;
    log_sum += std::log(matched[idx] / total[idx]);
  }
  const double bp = hyp_len < ref_len ? std::exp(1.0 - ref_len / hyp_len) : 1.0;
  return 100.0 * bp * std::exp(log_sum / n);
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(std::span<const EvalPair> pairs, double beta) {
  check_corpus(pairs, "rouge_l");
  if (!(beta > 0.0)) throw Error("rouge_l: beta must be positive");
  double sum = 0.0;
  const double b2 = beta * beta;
  for (const auto& p : pairs) {
    double best = 0.0;
    if (!p.hypothesis.empty()) {
      for (const auto& r : p.references) {
        if (r.empty()) continue;
        const auto lcs = static_cast<double>(lcs_length(p.hypothesis, r));
        if (lcs == 0.0) continue;
        const double prec = lcs / static_cast<double>(p.hypothesis.size());
        const double rec = lcs / static_cast<double>(r.size());
        best = std::max(best, (1.0 + b2) * prec * rec / (rec + b2 * prec));
      }
    }
    sum += best;
  }
  return 100.0 * sum / static_cast<double>(pairs.size());
}

double cider(std::span<const EvalPair> pairs) {
  check_corpus(pairs, "cider");
  constexpr std::size_t kMaxN = 4;
  std::vector<std::string> keys;
  std::unordered_map<std::string, std::size_t> key_index;
  for (const auto& p : pairs) {
    if (key_index.emplace(p.key, keys.size()).second) keys.push_back(p.key);
  }
  // document frequency: number of keys whose reference set contains the n-gram
  std::vector<std::map<Tokens, std::size_t>> df(kMaxN + 1);
  {
    std::vector<std::set<Tokens>> seen(keys.size());
    for (const auto& p : pairs) {
      auto& s = seen[key_index.at(p.key)];
      for (const auto& r : p.references) {
        for (std::size_t n = 1; n <= kMaxN; ++n) {
          for (const auto& [g, _] : ngrams(r, n)) s.insert(g);
        }
      }
    }
    for (const auto& s : seen) {
      for (const auto& g : s) ++df[g.size()][g];
    }
  }
  const double n_docs = static_cast<double>(keys.size());
  const auto vec = [&](const Tokens& s, std::size_t n) {
    std::map<Tokens, double> v;
    const NgramCounts c = ngrams(s, n);
    double total = 0.0;
    for (const auto& [_, cnt] : c) total += static_cast<double>(cnt);
    for (const auto& [g, cnt] : c) {
      auto it = df[n].find(g);
      const double d = it == df[n].end() ? 1.0 : std::max<double>(1.0, static_cast<double>(it->second));
      v[g] = static_cast<double>(cnt) / total * std::log(n_docs / d);
    }
    return v;
  };
  const auto cosine = [](const std::map<Tokens, double>& a, const std::map<Tokens, double>& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [g, x] : a) {
      na += x * x;
      auto it = b.find(g);
      if (it != b.end()) dot += x * it->second;
    }
    for (const auto& [_, y] : b) nb += y * y;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  double corpus = 0.0;
  for (const auto& p : pairs) {
    double over_n = 0.0;
    for (std::size_t n = 1; n <= kMaxN; ++n) {
      const auto h = vec(p.hypothesis, n);
      double over_refs = 0.0;
      for (const auto& r : p.references) over_refs += cosine(h, vec(r, n));
      over_n += over_refs / static_cast<double>(p.references.size());
    }
    corpus += 10.0 * over_n / static_cast<double>(kMaxN);
  }
  return 100.0 * corpus / static_cast<double>(pairs.size());
}

MeteorAlignment meteor_align(const Tokens& hyp, const Tokens& ref) {
  // best[(i, used, prev)] = (matches, -chunks) for hypothesis suffix i..
  struct Key {
    std::size_t i;
    std::uint64_t used;
    long prev;
    bool operator==(const Key&) const = default;
  };
  struct KeyHash {
    std::size_t operator()(const Key& k) const {
      return std::hash<std::uint64_t>{}(k.used * 1000003u ^ (k.i << 40) ^ static_cast<std::uint64_t>(k.prev + 1));
    }
  };
  if (ref.size() > 64) throw Error("meteor: references longer than 64 tokens are not supported");
  std::unordered_map<Key, std::pair<std::size_t, std::size_t>, KeyHash> memo;
  // returns (matches, chunks) maximizing matches then minimizing chunks
  std::function<std::pair<std::size_t, std::size_t>(std::size_t, std::uint64_t, long)> solve =
      [&](std::size_t i, std::uint64_t used, long prev) -> std::pair<std::size_t, std::size_t> {
    if (i == hyp.size()) return {0, 0};
    const Key key{i, used, prev};
    if (auto it = memo.find(key); it != memo.end()) return it->second;
    auto best = solve(i + 1, used, -1);
    for (std::size_t j = 0; j < ref.size(); ++j) {
      if ((used >> j & 1u) || ref[j] != hyp[i]) continue;
      auto sub = solve(i + 1, used | (std::uint64_t{1} << j), static_cast<long>(j));
      sub.first += 1;
      sub.second += prev >= 0 && static_cast<long>(j) == prev + 1 ? 0 : 1;
      if (sub.first > best.first || (sub.first == best.first && sub.second < best.second)) best = sub;
    }
    memo.emplace(key, best);
    return best;
  };
  const auto [m, ch] = solve(0, 0, -1);
  return {m, ch};
}

double meteor_lite(std::span<const EvalPair> pairs) {
  check_corpus(pairs, "meteor");
  double sum = 0.0;
  for (const auto& p : pairs) {
    double best = 0.0;
    for (const auto& r : p.references) {
      if (r.empty() || p.hypothesis.empty()) continue;
      const MeteorAlignment a = meteor_align(p.hypothesis, r);
      if (a.matches == 0) continue;
      const double m = static_cast<double>(a.matches);
      const double prec = m / static_cast<double>(p.hypothesis.size());
      const double rec = m / static_cast<double>(r.size());
      const double fmean = 10.0 * prec * rec / (rec + 9.0 * prec);
      const double frag = static_cast<double>(a.chunks) / m;
      best = std::max(best, fmean * (1.0 - 0.5 * frag * frag * frag));
    }
    sum += best;
  }
  return 100.0 * sum / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------

nlohmann::json EvalReport::to_json() const {
  nlohmann::json meta = metadata;
  meta["bleu_monotone"] = bleu_monotone();
  return {{"bleu1", bleu1}, {"bleu2", bleu2}, {"bleu3", bleu3}, {"cider", cider},
          {"meteor", meteor}, {"rouge_l", rouge_l}, {"metadata", meta}};
}

EvalReport score_pairs(std::span<const EvalPair> pairs, double rouge_beta) {
  EvalReport r;
  r.bleu1 = bleu_n(pairs, 1);
  r.bleu2 = bleu_n(pairs, 2);
  r.bleu3 = bleu_n(pairs, 3);
  r.cider = vqg::cider(pairs);
  r.meteor = meteor_lite(pairs);
  r.rouge_l = vqg::rouge_l(pairs, rouge_beta);
  std::size_t refs = 0;
  for (const auto& p : pairs) refs += p.references.size();
  r.metadata = {{"n_pairs", pairs.size()},
                {"n_references", refs},
                {"metric_variants",
                 {{"bleu", "corpus-level, clipped counts, closest reference length, uniform weights"},
                  {"rouge_l", "LCS F-measure, beta = " + std::to_string(rouge_beta) + ", best reference"},
                  {"cider", "CIDEr without length penalty, n = 1..4, x10, reported x100 (0-1000)"},
                  {"meteor", "exact-match stage only (no stemming or synonyms), standard fragmentation penalty"}}}};
  return r;
}

EvaluationRun evaluate(Model& model, const Vocabulary& vocab, std::span<const RawSample> split,
                       const FeatureStore* store, DecodeMode mode, std::size_t beam_width) {
  if (split.empty()) throw Error("evaluate: split is empty");
  EvaluationRun run;
  std::map<std::pair<std::uint64_t, int>, std::size_t> group;
  std::vector<GenRequest> requests;
  for (const auto& s : split) {
    const auto key = std::make_pair(s.image_id, s.category_id);
    auto [it, inserted] = group.emplace(key, run.pairs.size());
    if (inserted) {
      run.pairs.push_back({{}, {}, std::to_string(s.image_id)});
      run.image_ids.push_back(s.image_id);
      run.categories.push_back(s.category_id);
      GenRequest r;
      r.image_id = s.image_id;
      r.category = category_name(s.category_id);
      r.max_len = model.config().question_len;
      r.mode = mode;
      r.beam_width = beam_width;
      requests.push_back(std::move(r));
    }
    run.pairs[it->second].references.push_back(tokenize(s.question));
  }
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < requests.size(); start += kChunk) {
    const auto chunk = std::span<const GenRequest>(requests).subspan(start, std::min(kChunk, requests.size() - start));
    const auto results = generate_batch(chunk, model, vocab, store);
    for (std::size_t i = 0; i < results.size(); ++i) run.pairs[start + i].hypothesis = results[i].tokens;
  }
  run.report = score_pairs(run.pairs);
  run.report.metadata["n_samples"] = split.size();
  run.report.metadata["decode"] = mode == DecodeMode::Greedy ? "greedy" : "beam-" + std::to_string(beam_width);
  return run;
}

}  // namespace vqg
