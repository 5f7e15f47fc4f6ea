#pragma once
// Naive reference implementations used only by tests. They share no code
// with the library metrics.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

namespace oracle {

using Sent = std::vector<std::string>;

struct Pair {
  Sent hyp;
  std::vector<Sent> refs;
  std::string key;
};

inline std::vector<std::string> grams(const Sent& s, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string g;
    for (std::size_t k = 0; k < n; ++k) g += s[i + k] + "\x1f";
    out.push_back(g);
  }
  return out;
}

inline std::size_t count_of(const std::vector<std::string>& v, const std::string& g) {
  std::size_t c = 0;
  for (const auto& x : v) c += x == g;
  return c;
}

inline double bleu(const std::vector<Pair>& pairs, int n) {
  double c = 0, r = 0;
  std::vector<double> num(n, 0), den(n, 0);
  for (const auto& p : pairs) {
    c += p.hyp.size();
    std::vector<std::size_t> lens;
    for (const auto& ref : p.refs) lens.push_back(ref.size());
    std::sort(lens.begin(), lens.end());
    std::size_t best = lens[0];
    for (std::size_t L : lens) {
      const double d = std::fabs(double(L) - double(p.hyp.size()));
      const double db = std::fabs(double(best) - double(p.hyp.size()));
      if (d < db) best = L;
    }
    r += best;
    for (int k = 1; k <= n; ++k) {
      const auto hg = grams(p.hyp, k);
      std::vector<std::string> distinct;
      for (const auto& g : hg)
        if (std::find(distinct.begin(), distinct.end(), g) == distinct.end()) distinct.push_back(g);
      for (const auto& g : distinct) {
        std::size_t mx = 0;
        for (const auto& ref : p.refs) mx = std::max(mx, count_of(grams(ref, k), g));
        num[k - 1] += std::min(count_of(hg, g), mx);
      }
      den[k - 1] += hg.size();
    }
  }
  if (c == 0) return 0;
  double prod = 1;
  for (int k = 0; k < n; ++k) {
    if (num[k] == 0) return 0;
    prod *= num[k] / den[k];
  }
  const double bp = c < r ? std::exp(1 - r / c) : 1.0;
  return 100 * bp * std::pow(prod, 1.0 / n);
}

inline std::size_t lcs(const Sent& a, const Sent& b) {
  std::vector<std::vector<std::size_t>> t(a.size() + 1, std::vector<std::size_t>(b.size() + 1, 0));
  for (std::size_t i = a.size(); i-- > 0;)
    for (std::size_t j = b.size(); j-- > 0;)
      t[i][j] = a[i] == b[j] ? 1 + t[i + 1][j + 1] : std::max(t[i + 1][j], t[i][j + 1]);
  return t[0][0];
}

inline double rouge_l(const std::vector<Pair>& pairs) {
  double s = 0;
  for (const auto& p : pairs) {
    double best = 0;
    for (const auto& ref : p.refs) {
      const double l = lcs(p.hyp, ref);
      if (l == 0) continue;
      const double P = l / p.hyp.size(), R = l / ref.size();
      best = std::max(best, 2 * P * R / (P + R));
    }
    s += best;
  }
  return 100 * s / pairs.size();
}

inline double cider(const std::vector<Pair>& pairs) {
  std::vector<std::string> keys;
  for (const auto& p : pairs)
    if (std::find(keys.begin(), keys.end(), p.key) == keys.end()) keys.push_back(p.key);
  double total = 0;
  std::vector<double> per_pair(pairs.size(), 0);
  for (std::size_t n = 1; n <= 4; ++n) {
    // dense n-gram index over every sentence in the corpus
    std::vector<std::string> vocab;
    auto add = [&](const Sent& s) {
      for (const auto& g : grams(s, n))
        if (std::find(vocab.begin(), vocab.end(), g) == vocab.end()) vocab.push_back(g);
    };
    for (const auto& p : pairs) {
      add(p.hyp);
      for (const auto& r : p.refs) add(r);
    }
    std::vector<double> idf(vocab.size());
    for (std::size_t v = 0; v < vocab.size(); ++v) {
      double df = 0;
      for (const auto& k : keys) {
        bool in = false;
        for (const auto& p : pairs)
          if (p.key == k)
            for (const auto& r : p.refs) in = in || count_of(grams(r, n), vocab[v]) > 0;
        df += in;
      }
      idf[v] = std::log(keys.size() / std::max(1.0, df));
    }
    auto dense = [&](const Sent& s) {
      const auto g = grams(s, n);
      std::vector<double> x(vocab.size(), 0);
      for (std::size_t v = 0; v < vocab.size(); ++v)
        if (!g.empty()) x[v] = double(count_of(g, vocab[v])) / g.size() * idf[v];
      return x;
    };
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto h = dense(pairs[i].hyp);
      double acc = 0;
      for (const auto& r : pairs[i].refs) {
        const auto y = dense(r);
        double dot = 0, a = 0, b = 0;
        for (std::size_t v = 0; v < vocab.size(); ++v) {
          dot += h[v] * y[v];
          a += h[v] * h[v];
          b += y[v] * y[v];
        }
        acc += (a > 0 && b > 0) ? dot / std::sqrt(a * b) : 0;
      }
      per_pair[i] += acc / pairs[i].refs.size();
    }
  }
  for (double v : per_pair) total += 10 * v / 4;
  return 100 * total / pairs.size();
}

// Exhaustive alignment search: every hypothesis token either stays unaligned
// or takes any unused equal reference token.
inline void enumerate(const Sent& h, const Sent& r, std::size_t i, std::vector<int>& map, std::vector<bool>& used,
                      std::size_t& best_m, std::size_t& best_ch) {
  if (i == h.size()) {
    std::size_t m = 0, ch = 0;
    for (std::size_t k = 0; k < map.size(); ++k) {
      if (map[k] < 0) continue;
      ++m;
      if (!(k > 0 && map[k - 1] >= 0 && map[k] == map[k - 1] + 1)) ++ch;
    }
    if (m > best_m || (m == best_m && ch < best_ch)) {
      best_m = m;
      best_ch = ch;
    }
    return;
  }
  map[i] = -1;
  enumerate(h, r, i + 1, map, used, best_m, best_ch);
  for (std::size_t j = 0; j < r.size(); ++j) {
    if (used[j] || r[j] != h[i]) continue;
    used[j] = true;
    map[i] = int(j);
    enumerate(h, r, i + 1, map, used, best_m, best_ch);
    used[j] = false;
    map[i] = -1;
  }
}

inline double meteor(const std::vector<Pair>& pairs) {
  double s = 0;
  for (const auto& p : pairs) {
    double best = 0;
    for (const auto& r : p.refs) {
      std::vector<int> map(p.hyp.size(), -1);
      std::vector<bool> used(r.size(), false);
      std::size_t m = 0, ch = 0;
      enumerate(p.hyp, r, 0, map, used, m, ch);
      if (m == 0) continue;
      const double P = double(m) / p.hyp.size(), R = double(m) / r.size();
      const double f = 10 * P * R / (R + 9 * P);
      best = std::max(best, f * (1 - 0.5 * std::pow(double(ch) / m, 3)));
    }
    s += best;
  }
  return 100 * s / pairs.size();
}

}  // namespace oracle
