#pragma once

// Reference implementations used only by tests. Each one is written
// differently from the library code it checks (exact integer arithmetic,
// brute force, direct summation) so that agreement means something.

#include "evidexr/random.hpp"
#include "evidexr/types.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace oracle {

// ---------------------------------------------------------------------------
// Segmentation

// Window count by enumeration rather than the closed form.
inline std::size_t count_windows(std::size_t T, std::size_t W, std::size_t S) {
  std::size_t n = 0;
  for (std::size_t start = 0; start + W <= T; start += S) ++n;
  return n;
}

// Times on a 1/64 s grid: exact in binary floating point, so interval
// arithmetic on the doubles matches the integer arithmetic here.
constexpr double kTick = 1.0 / 64.0;

struct TickInterval {
  std::int64_t a = 0, b = 0;  // [a, b) in ticks
};

inline int tick_label(TickInterval w, const std::vector<TickInterval>& events, std::int64_t min_overlap_ticks) {
  for (const auto& e : events) {
    const std::int64_t lo = std::max(w.a, e.a), hi = std::min(w.b, e.b);
    if (hi - lo > min_overlap_ticks) return 1;
  }
  return 0;
}

struct Layout {
  TickInterval window;
  std::vector<TickInterval> events;
  std::int64_t min_overlap = 0;
};

// Random layouts biased toward touching and nested boundaries.
inline Layout random_layout(evidexr::Rng& rng) {
  Layout l;
  const std::int64_t w0 = static_cast<std::int64_t>(rng.index(640));
  l.window = {w0, w0 + 1 + static_cast<std::int64_t>(rng.index(640))};
  const std::size_t n = rng.index(6);
  for (std::size_t i = 0; i < n; ++i) {
    std::int64_t a;
    switch (rng.index(4)) {
      case 0: a = l.window.b; break;                       // starts where the window ends
      case 1: a = l.window.a - 1 - static_cast<std::int64_t>(rng.index(20)); break;
      default: a = static_cast<std::int64_t>(rng.index(1400)); break;
    }
    a = std::max<std::int64_t>(a, 0);
    const std::int64_t b = rng.index(5) == 0 ? std::max(a + 1, l.window.a) : a + 1 + static_cast<std::int64_t>(rng.index(60));
    l.events.push_back({a, b});
  }
  l.min_overlap = rng.index(3) == 0 ? static_cast<std::int64_t>(rng.index(8)) : 0;
  return l;
}

inline std::vector<evidexr::EventAnnotation> to_events(const Layout& l, const std::string& subject) {
  std::vector<evidexr::EventAnnotation> out;
  for (const auto& e : l.events) {
    out.push_back(evidexr::EventAnnotation{subject, e.a * kTick, e.b * kTick, "IED", "", ""});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Nearest neighbours

struct ScoredId {
  double score;
  std::size_t row;
};

// Full stable sort of long-double inner products; equal scores keep row order.
inline std::vector<ScoredId> brute_force_topk(const std::vector<std::vector<float>>& db,
                                              const std::vector<float>& q, std::size_t k) {
  std::vector<std::pair<long double, std::size_t>> all;
  for (std::size_t i = 0; i < db.size(); ++i) {
    long double dot = 0;
    for (std::size_t j = 0; j < q.size(); ++j) dot += static_cast<long double>(db[i][j]) * q[j];
    all.emplace_back(dot, i);
  }
  std::stable_sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return x.first > y.first; });
  std::vector<ScoredId> out;
  for (std::size_t i = 0; i < std::min(k, all.size()); ++i) {
    out.push_back({static_cast<double>(all[i].first), all[i].second});
  }
  return out;
}

// Random unit vector.
inline std::vector<float> unit_vector(std::size_t d, evidexr::Rng& rng) {
  std::vector<double> x(d);
  double s = 0;
  for (auto& v : x) {
    v = rng.normal();
    s += v * v;
  }
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) out[i] = static_cast<float>(x[i] / std::sqrt(s));
  return out;
}

// Unit vectors drawn around `clusters` random unit centres with per-coordinate
// noise `spread`, renormalized. Rows are interleaved across clusters.
inline std::vector<std::vector<float>> clustered_set(std::size_t n, std::size_t d, std::size_t clusters, double spread,
                                                     evidexr::Rng& rng, std::vector<std::size_t>* membership = nullptr) {
  std::vector<std::vector<float>> centres;
  for (std::size_t c = 0; c < clusters; ++c) centres.push_back(unit_vector(d, rng));
  std::vector<std::vector<float>> out;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % clusters;
    std::vector<double> x(d);
    double s = 0;
    for (std::size_t j = 0; j < d; ++j) {
      x[j] = centres[c][j] + spread * rng.normal();
      s += x[j] * x[j];
    }
    std::vector<float> v(d);
    for (std::size_t j = 0; j < d; ++j) v[j] = static_cast<float>(x[j] / std::sqrt(s));
    out.push_back(std::move(v));
    if (membership) membership->push_back(c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Contrastive loss

// Symmetric InfoNCE by direct summation in long double.
inline double info_nce(const std::vector<double>& Z, const std::vector<double>& U, std::size_t n, std::size_t d,
                       double tau) {
  auto s = [&](std::size_t i, std::size_t j) {
    long double dot = 0;
    for (std::size_t k = 0; k < d; ++k) dot += static_cast<long double>(Z[i * d + k]) * U[j * d + k];
    return dot / tau;
  };
  long double total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    long double row = 0, col = 0;
    for (std::size_t j = 0; j < n; ++j) {
      row += std::exp(s(i, j) - s(i, i));
      col += std::exp(s(j, i) - s(i, i));
    }
    total += std::log(row) + std::log(col);
  }
  return static_cast<double>(total / (2.0L * n));
}

// ---------------------------------------------------------------------------
// Metrics

inline double balanced_accuracy(const std::vector<int>& pred, const std::vector<int>& label) {
  double pos = 0, neg = 0, tp = 0, tn = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (label[i] == 1) {
      pos += 1;
      tp += pred[i] == 1;
    } else {
      neg += 1;
      tn += pred[i] == 0;
    }
  }
  const double tpr = pos == 0 ? 0.0 : tp / pos;
  const double tnr = neg == 0 ? 0.0 : tn / neg;
  return (tpr + tnr) / 2.0;
}

// Support-weighted mean over classes of per-class precision, recall and F1;
// undefined ratios count as 0.
struct Prf {
  double precision, recall, f1;
};
inline Prf weighted_prf(const std::vector<int>& pred, const std::vector<int>& label) {
  Prf out{0, 0, 0};
  const double n = static_cast<double>(label.size());
  for (int c = 0; c <= 1; ++c) {
    double tp = 0, predicted = 0, actual = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
      predicted += pred[i] == c;
      actual += label[i] == c;
      tp += pred[i] == c && label[i] == c;
    }
    const double p = predicted == 0 ? 0 : tp / predicted;
    const double r = actual == 0 ? 0 : tp / actual;
    const double f = p + r == 0 ? 0 : 2 * p * r / (p + r);
    const double w = n == 0 ? 0 : actual / n;
    out.precision += w * p;
    out.recall += w * r;
    out.f1 += w * f;
  }
  return out;
}

inline double precision_at(const std::vector<int>& rel, std::size_t k) {
  double s = 0;
  for (std::size_t i = 0; i < k; ++i) s += rel[i];
  return s / static_cast<double>(k);
}

inline int hit_at(const std::vector<int>& rel, std::size_t k) {
  return std::any_of(rel.begin(), rel.begin() + static_cast<std::ptrdiff_t>(k), [](int r) { return r == 1; });
}

// AP normalized by the relevant items within the depth.
inline double average_precision(const std::vector<int>& rel, std::size_t depth) {
  double sum = 0;
  int found = 0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (rel[i]) {
      ++found;
      sum += precision_at(rel, i + 1);
    }
  }
  return found == 0 ? 0.0 : sum / found;
}

inline double reciprocal_rank(const std::vector<int>& rel, std::size_t depth) {
  for (std::size_t i = 0; i < depth; ++i) {
    if (rel[i]) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

using Tokens = std::vector<std::string>;

inline std::map<Tokens, int> ngram_counts(const Tokens& t, std::size_t n) {
  std::map<Tokens, int> m;
  for (std::size_t i = 0; i + n <= t.size(); ++i) ++m[Tokens(t.begin() + static_cast<std::ptrdiff_t>(i),
                                                             t.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return m;
}

// Sentence BLEU-4, uniform weights, no smoothing. Orders the candidate is
// too short to contain are dropped and the weights renormalized; any kept
// order with zero clipped matches gives 0.
inline double bleu(const Tokens& cand, const Tokens& ref) {
  if (cand.empty()) return 0.0;
  const std::size_t max_n = std::min<std::size_t>(4, cand.size());
  double log_sum = 0;
  for (std::size_t n = 1; n <= max_n; ++n) {
    const auto c = ngram_counts(cand, n), r = ngram_counts(ref, n);
    double clipped = 0, total = 0;
    for (const auto& [g, cnt] : c) {
      total += cnt;
      auto it = r.find(g);
      clipped += std::min(cnt, it == r.end() ? 0 : it->second);
    }
    if (clipped == 0) return 0.0;
    log_sum += std::log(clipped / total);
  }
  const double c = static_cast<double>(cand.size()), r = static_cast<double>(ref.size());
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / static_cast<double>(max_n));
}

// ROUGE-N recall with clipped n-gram overlap.
inline double rouge_n(const Tokens& cand, const Tokens& ref, std::size_t n) {
  const auto c = ngram_counts(cand, n), r = ngram_counts(ref, n);
  double overlap = 0, nr = 0;
  for (const auto& [g, k] : r) {
    nr += k;
    auto it = c.find(g);
    if (it != c.end()) overlap += std::min(k, it->second);
  }
  return overlap / nr;
}

// LCS by memoized recursion.
inline std::size_t lcs(const Tokens& a, const Tokens& b, std::size_t i, std::size_t j,
                       std::vector<std::vector<int>>& memo) {
  if (i == a.size() || j == b.size()) return 0;
  int& m = memo[i][j];
  if (m >= 0) return static_cast<std::size_t>(m);
  const std::size_t v = a[i] == b[j] ? 1 + lcs(a, b, i + 1, j + 1, memo)
                                     : std::max(lcs(a, b, i + 1, j, memo), lcs(a, b, i, j + 1, memo));
  m = static_cast<int>(v);
  return v;
}

inline double rouge_l(const Tokens& cand, const Tokens& ref) {
  std::vector<std::vector<int>> memo(cand.size(), std::vector<int>(ref.size(), -1));
  return static_cast<double>(lcs(cand, ref, 0, 0, memo)) / static_cast<double>(ref.size());
}

}  // namespace oracle
