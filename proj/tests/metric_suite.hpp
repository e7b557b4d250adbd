#pragma once

// Metric fixtures checked against the oracles: hand-worked cases plus seeded
// random ones. Shared by the eval unit tests and the acceptance binary.

#include "evidexr/eval.hpp"
#include "evidexr/io.hpp"
#include "oracles.hpp"

#include <cmath>
#include <functional>
#include <string>
#include <vector>

namespace metric_suite {

struct Result {
  std::string metric;
  std::size_t cases = 0;
  double max_error = 0.0;
  std::vector<std::string> failures;  // case descriptions off by more than the tolerance

  void check(const std::string& what, double got, double expect, double tol = 1e-9) {
    ++cases;
    const double err = std::abs(got - expect);
    if (!(err <= tol)) failures.push_back(what + ": got " + std::to_string(got) + " want " + std::to_string(expect));
    if (err > max_error || std::isnan(err)) max_error = std::isnan(err) ? INFINITY : err;
  }
};

inline oracle::Tokens words(const std::string& s) { return evidexr::eval::tokenize(s); }

inline oracle::Tokens random_tokens(evidexr::Rng& rng, std::size_t min_len, std::size_t max_len, std::size_t vocab) {
  const std::size_t n = min_len + rng.index(max_len - min_len + 1);
  oracle::Tokens t;
  for (std::size_t i = 0; i < n; ++i) t.push_back(std::string(1, static_cast<char>('a' + rng.index(vocab))));
  return t;
}

// Candidate that shares runs with the reference, so higher-order n-grams match.
inline oracle::Tokens perturbed(const oracle::Tokens& ref, evidexr::Rng& rng, std::size_t vocab) {
  oracle::Tokens c;
  for (const auto& tok : ref) {
    const double u = rng.uniform();
    if (u < 0.1) continue;
    c.push_back(u < 0.25 ? std::string(1, static_cast<char>('a' + rng.index(vocab))) : tok);
    if (rng.uniform() < 0.05) c.push_back(tok);
  }
  if (c.empty()) c.push_back(ref.front());
  return c;
}

inline std::vector<int> random_labels(evidexr::Rng& rng, std::size_t n, double p) {
  std::vector<int> v(n);
  for (auto& x : v) x = rng.uniform() < p ? 1 : 0;
  return v;
}

inline std::vector<evidexr::Label> as_labels(const std::vector<int>& v) { return {v.begin(), v.end()}; }

inline evidexr::eval::RankedRelevance ranking_of(const std::vector<int>& rel, evidexr::Label query) {
  evidexr::eval::RankedRelevance r;
  r.query_label = query;
  for (int x : rel) r.neighbor_labels.push_back(static_cast<evidexr::Label>(x ? query : 1 - query));
  return r;
}

inline std::vector<Result> run(std::uint64_t seed = 2024, std::size_t random_cases = 40) {
  namespace ev = evidexr::eval;
  evidexr::Rng rng(seed);
  Result ba{"balanced_accuracy"}, wp{"weighted_prf"}, pk{"precision_at_k"}, hk{"hit_at_k"}, ap{"average_precision"},
      rr{"reciprocal_rank"}, bl{"bleu"}, r1{"rouge_1"}, r2{"rouge_2"}, rl{"rouge_l"};

  // Hand-worked values.
  {
    ev::ConfusionCounts c;
    c.tp = 8, c.fn = 2, c.tn = 6, c.fp = 4;
    ba.check("tp8 fn2 tn6 fp4", ev::balanced_accuracy(c), 0.7);
    c = {};
    c.tp = 5, c.tn = 5;
    ba.check("perfect", ev::balanced_accuracy(c), 1.0);
    c = {};
    c.fp = 3, c.fn = 4;
    ba.check("all wrong", ev::balanced_accuracy(c), 0.0);
    c = {};
    c.tp = 9, c.fp = 1;
    ba.check("always positive", ev::balanced_accuracy(c), 0.5);
  }
  {
    const std::vector<int> rel{1, 0, 1};
    pk.check("[1,0,1]@3", ev::precision_at_k(ranking_of(rel, 1), 3), 2.0 / 3.0);
    hk.check("[1,0,1]@3", ev::hit_at_k(ranking_of(rel, 1), 3), 1);
    hk.check("[0,0,1]@2", ev::hit_at_k(ranking_of({0, 0, 1}, 0), 2), 0);
    pk.check("[0,0,0]@1", ev::precision_at_k(ranking_of({0, 0, 0}, 1), 1), 0);
    const std::vector<int> alt{0, 1, 0, 1};
    ap.check("[0,1,0,1]@4", ev::average_precision(ranking_of(alt, 1), 4), 0.5);
    rr.check("[0,1,0,1]@4", ev::reciprocal_rank(ranking_of(alt, 1), 4), 0.5);
    ap.check("no relevant", ev::average_precision(ranking_of({0, 0, 0}, 1), 3), 0.0);
    rr.check("no relevant", ev::reciprocal_rank(ranking_of({0, 0, 0}, 1), 3), 0.0);
    rr.check("beyond depth", ev::reciprocal_rank(ranking_of({0, 0, 1}, 0), 2), 0.0);
    ap.check("[1,1,0,1]@4", ev::average_precision(ranking_of({1, 1, 0, 1}, 0), 4), (1.0 + 1.0 + 0.75) / 3.0);
  }
  {
    bl.check("'a b c' vs 'a b c d'", ev::bleu(words("a b c"), words("a b c d")).score, std::exp(1.0 - 4.0 / 3.0));
    bl.check("0.716531 rounding", std::round(ev::bleu(words("a b c"), words("a b c d")).score * 1e6) / 1e6, 0.716531);
    bl.check("identical", ev::bleu(words("the cat sat on the mat"), words("the cat sat on the mat")).score, 1.0);
    bl.check("disjoint", ev::bleu(words("x y z w"), words("a b c d")).score, 0.0);
    bl.check("empty candidate", ev::bleu({}, words("a b")).score, 0.0);
    r1.check("'a a' vs 'a a a'", ev::rouge_n(words("a a"), words("a a a"), 1), 2.0 / 3.0);
    r1.check("identical", ev::rouge_n(words("a b c"), words("a b c"), 1), 1.0);
    r2.check("'a b c' vs 'a b d'", ev::rouge_n(words("a b c"), words("a b d"), 2), 0.5);
    r2.check("empty candidate", ev::rouge_n({}, words("a b"), 2), 0.0);
    rl.check("'a x b' vs 'a b c'", ev::rouge_l(words("a x b"), words("a b c")), 2.0 / 3.0);
    rl.check("identical", ev::rouge_l(words("p q r s"), words("p q r s")), 1.0);
    rl.check("reversed", ev::rouge_l(words("c b a"), words("a b c")), 1.0 / 3.0);
  }
  {
    const std::vector<int> pred{1, 1, 0, 0, 1}, label{1, 0, 0, 1, 1};
    const auto w = ev::weighted_prf(as_labels(pred), as_labels(label));
    // class 1: p 2/3 r 2/3; class 0: p 1/2 r 1/2; weights 3/5, 2/5
    wp.check("precision", w.precision, 0.6 * 2.0 / 3.0 + 0.4 * 0.5);
    wp.check("recall", w.recall, 0.6 * 2.0 / 3.0 + 0.4 * 0.5);
    wp.check("f1", w.f1, 0.6 * 2.0 / 3.0 + 0.4 * 0.5);
    const auto z = ev::weighted_prf(as_labels({0, 0, 0}), as_labels({1, 1, 0}));
    wp.check("never positive precision", z.precision, 1.0 / 3.0 * 1.0 / 3.0);
    wp.check("never positive recall", z.recall, 1.0 / 3.0);
  }

  // Seeded random fixtures.
  for (std::size_t t = 0; t < random_cases; ++t) {
    const std::string tag = "random " + std::to_string(t);
    const std::size_t n = 2 + rng.index(60);
    auto label = random_labels(rng, n, 0.2 + 0.6 * rng.uniform());
    label[0] = 0, label[1] = 1;
    rng.shuffle(label);
    const auto pred = random_labels(rng, n, rng.uniform());
    ba.check(tag, ev::balanced_accuracy(ev::confusion(as_labels(pred), as_labels(label))),
             oracle::balanced_accuracy(pred, label));
    const auto w = ev::weighted_prf(as_labels(pred), as_labels(label));
    const auto o = oracle::weighted_prf(pred, label);
    wp.check(tag + " p", w.precision, o.precision);
    wp.check(tag + " r", w.recall, o.recall);
    wp.check(tag + " f", w.f1, o.f1);

    const std::size_t len = 1 + rng.index(30);
    const auto rel = random_labels(rng, len, rng.uniform());
    const auto ranking = ranking_of(rel, static_cast<evidexr::Label>(rng.index(2)));
    const std::size_t k = 1 + rng.index(len);
    pk.check(tag, ev::precision_at_k(ranking, k), oracle::precision_at(rel, k));
    hk.check(tag, ev::hit_at_k(ranking, k), oracle::hit_at(rel, k));
    ap.check(tag, ev::average_precision(ranking, k), oracle::average_precision(rel, k));
    rr.check(tag, ev::reciprocal_rank(ranking, k), oracle::reciprocal_rank(rel, k));

    const std::size_t vocab = 2 + rng.index(8);
    const auto ref = random_tokens(rng, 2, 25, vocab);
    const auto cand = t % 2 ? perturbed(ref, rng, vocab) : random_tokens(rng, 1, 25, vocab);
    bl.check(tag, ev::bleu(cand, ref).score, oracle::bleu(cand, ref));
    r1.check(tag, ev::rouge_n(cand, ref, 1), oracle::rouge_n(cand, ref, 1));
    r2.check(tag, ev::rouge_n(cand, ref, 2), oracle::rouge_n(cand, ref, 2));
    rl.check(tag, ev::rouge_l(cand, ref), oracle::rouge_l(cand, ref));
  }
  return {ba, wp, pk, hk, ap, rr, bl, r1, r2, rl};
}

}  // namespace metric_suite
