#include "evidexr/eval.hpp"

#include "evidexr/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>

namespace evidexr::eval {

ConfusionCounts confusion(std::span<const Label> preds, std::span<const Label> labels) {
  if (preds.size() != labels.size()) {
    throw Error("confusion: " + std::to_string(preds.size()) + " predictions vs " + std::to_string(labels.size()) +
                " labels");
  }
  if (preds.empty()) throw Error("confusion: empty input");
  ConfusionCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if ((preds[i] != 0 && preds[i] != 1) || (labels[i] != 0 && labels[i] != 1)) {
      throw Error("confusion: label outside {0,1}");
    }
    if (labels[i] == 1) {
      preds[i] == 1 ? ++c.tp : ++c.fn;
    } else {
      preds[i] == 1 ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

double balanced_accuracy(const ConfusionCounts& c) {
  if (c.tp + c.fn == 0 || c.tn + c.fp == 0) {
    throw Error("balanced_accuracy: degenerate input, one class is absent from the labels");
  }
  const double tpr = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  const double tnr = static_cast<double>(c.tn) / static_cast<double>(c.tn + c.fp);
  return 0.5 * (tpr + tnr);
}

WeightedPrf weighted_prf(std::span<const Label> preds, std::span<const Label> labels) {
  const ConfusionCounts c = confusion(preds, labels);
  auto ratio = [](std::size_t a, std::size_t b) { return b == 0 ? 0.0 : static_cast<double>(a) / static_cast<double>(b); };
  auto f1 = [](double p, double r) { return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r); };
  // class 1: TP over predicted/actual positives; class 0 mirrors with TN.
  const double p1 = ratio(c.tp, c.tp + c.fp), r1 = ratio(c.tp, c.tp + c.fn);
  const double p0 = ratio(c.tn, c.tn + c.fn), r0 = ratio(c.tn, c.tn + c.fp);
  const double n = static_cast<double>(c.total());
  const double w1 = static_cast<double>(c.tp + c.fn) / n;
  const double w0 = static_cast<double>(c.tn + c.fp) / n;
  return WeightedPrf{w0 * p0 + w1 * p1, w0 * r0 + w1 * r1, w0 * f1(p0, r0) + w1 * f1(p1, r1)};
}

double precision_at_k(const RankedRelevance& r, std::size_t k) {
  if (k == 0 || k > r.neighbor_labels.size()) {
    throw Error("precision_at_k: K=" + std::to_string(k) + " exceeds ranking depth " +
                std::to_string(r.neighbor_labels.size()));
  }
  std::size_t rel = 0;
  for (std::size_t i = 0; i < k; ++i) rel += r.relevant(i) ? 1 : 0;
  return static_cast<double>(rel) / static_cast<double>(k);
}

int hit_at_k(const RankedRelevance& r, std::size_t k) {
  if (k == 0 || k > r.neighbor_labels.size()) {
    throw Error("hit_at_k: K=" + std::to_string(k) + " exceeds ranking depth " + std::to_string(r.neighbor_labels.size()));
  }
  for (std::size_t i = 0; i < k; ++i) {
    if (r.relevant(i)) return 1;
  }
  return 0;
}

double average_precision(const RankedRelevance& r, std::size_t depth) {
  if (depth > r.neighbor_labels.size()) throw Error("average_precision: ranking shorter than depth");
  double sum = 0.0;
  std::size_t rel = 0;
  for (std::size_t i = 0; i < depth; ++i) {
    if (!r.relevant(i)) continue;
    ++rel;
    sum += static_cast<double>(rel) / static_cast<double>(i + 1);
  }
  return rel == 0 ? 0.0 : sum / static_cast<double>(rel);
}

double reciprocal_rank(const RankedRelevance& r, std::size_t depth) {
  if (depth > r.neighbor_labels.size()) throw Error("reciprocal_rank: ranking shorter than depth");
  for (std::size_t i = 0; i < depth; ++i) {
    if (r.relevant(i)) return 1.0 / static_cast<double>(i + 1);
  }
  return 0.0;
}

MapMrr map_mrr(const std::vector<RankedRelevance>& rankings, std::size_t depth) {
  if (rankings.empty()) throw Error("map_mrr: no rankings");
  MapMrr out;
  for (const auto& r : rankings) {
    out.map += average_precision(r, depth);
    out.mrr += reciprocal_rank(r, depth);
  }
  out.map /= static_cast<double>(rankings.size());
  out.mrr /= static_cast<double>(rankings.size());
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (u < 0x80 && std::isspace(u)) {
      flush();
    } else if (u < 0x80 && std::ispunct(u)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(u < 0x80 ? static_cast<char>(std::tolower(u)) : ch);
    }
  }
  flush();
  return out;
}

namespace {

using NgramCounts = std::map<std::vector<std::string>, std::size_t>;

NgramCounts ngrams(const std::vector<std::string>& toks, std::size_t n) {
  NgramCounts out;
  if (toks.size() < n) return out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++out[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                   toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return out;
}

std::size_t clipped_matches(const NgramCounts& cand, const NgramCounts& ref) {
  std::size_t m = 0;
  for (const auto& [g, c] : cand) {
    auto it = ref.find(g);
    if (it != ref.end()) m += std::min(c, it->second);
  }
  return m;
}

}  // namespace

BleuBreakdown bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                   const std::array<double, 4>& weights) {
  if (reference.empty()) throw Error("bleu: empty reference");
  BleuBreakdown b;
  b.weights = weights;
  b.candidate_len = candidate.size();
  b.reference_len = reference.size();
  if (candidate.empty()) return b;  // BP and score are reported as 0

  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  b.brevity_penalty = candidate.size() > reference.size() ? 1.0 : std::exp(1.0 - r / c);

  double wsum = 0.0, logsum = 0.0;
  bool zero = false;
  for (std::size_t n = 1; n <= 4; ++n) {
    if (candidate.size() < n) continue;
    const auto cg = ngrams(candidate, n);
    const auto rg = ngrams(reference, n);
    const std::size_t total = candidate.size() - n + 1;
    b.included[n - 1] = true;
    b.precision[n - 1] = static_cast<double>(clipped_matches(cg, rg)) / static_cast<double>(total);
    wsum += weights[n - 1];
    if (b.precision[n - 1] == 0.0) {
      zero = true;
    } else {
      logsum += weights[n - 1] * std::log(b.precision[n - 1]);
    }
  }
  if (zero || wsum <= 0.0) {
    b.score = 0.0;
  } else {
    b.score = b.brevity_penalty * std::exp(logsum / wsum);
  }
  return b;
}

double rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, std::size_t n) {
  if (n == 0) throw Error("rouge_n: n must be >= 1");
  if (reference.size() < n) throw Error("rouge_n: reference has no " + std::to_string(n) + "-grams");
  const auto rg = ngrams(reference, n);
  const auto cg = ngrams(candidate, n);
  return static_cast<double>(clipped_matches(cg, rg)) / static_cast<double>(reference.size() - n + 1);
}

double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  if (reference.empty()) throw Error("rouge_l: empty reference");
  // Two-row LCS table.
  std::vector<std::size_t> prev(reference.size() + 1, 0), cur(reference.size() + 1, 0);
  for (const auto& tok : candidate) {
    for (std::size_t j = 1; j <= reference.size(); ++j) {
      cur[j] = tok == reference[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return static_cast<double>(prev[reference.size()]) / static_cast<double>(reference.size());
}

MetricBundle evaluate(const std::vector<QueryOutcome>& outcomes, std::size_t depth, const std::vector<std::size_t>& ks) {
  if (outcomes.empty()) throw Error("evaluate: no queries");
  MetricBundle b;
  b.queries = outcomes.size();
  b.depth = depth;
  b.ks = ks;
  std::vector<Label> preds, labels;
  std::vector<RankedRelevance> rankings;
  for (const auto& q : outcomes) {
    preds.push_back(q.predicted);
    labels.push_back(q.label);
    rankings.push_back(RankedRelevance{q.label, q.neighbor_labels});
  }
  b.counts = confusion(preds, labels);
  b.balanced_accuracy = balanced_accuracy(b.counts);
  b.weighted = weighted_prf(preds, labels);
  const auto mm = map_mrr(rankings, depth);
  b.map = mm.map;
  b.mrr = mm.mrr;
  for (std::size_t k : ks) {
    double p = 0.0, h = 0.0;
    for (const auto& r : rankings) {
      p += precision_at_k(r, k);
      h += hit_at_k(r, k);
    }
    b.precision_at.push_back(p / static_cast<double>(rankings.size()));
    b.hit_at.push_back(h / static_cast<double>(rankings.size()));
  }
  for (const auto& q : outcomes) {
    const auto cand = tokenize(q.generated);
    const auto ref = tokenize(q.gold);
    b.bleu += bleu(cand, ref).score;
    b.rouge1 += rouge_n(cand, ref, 1);
    b.rouge2 += ref.size() >= 2 ? rouge_n(cand, ref, 2) : (cand == ref ? 1.0 : 0.0);
    b.rougeL += rouge_l(cand, ref);
  }
  const double n = static_cast<double>(outcomes.size());
  b.bleu /= n;
  b.rouge1 /= n;
  b.rouge2 /= n;
  b.rougeL /= n;
  return b;
}

std::string to_json(const MetricBundle& b) {
  using nlohmann::json;
  json retrieval{{"depth", b.depth}, {"MAP", b.map}, {"MRR", b.mrr}};
  for (std::size_t i = 0; i < b.ks.size(); ++i) {
    retrieval["P@" + std::to_string(b.ks[i])] = b.precision_at[i];
    retrieval["HR@" + std::to_string(b.ks[i])] = b.hit_at[i];
  }
  json j{{"schema", kMetricSchema},
         {"mode", b.mode},
         {"seed", b.seed},
         {"queries", b.queries},
         {"detection",
          {{"BA", b.balanced_accuracy},
           {"WP", b.weighted.precision},
           {"WR", b.weighted.recall},
           {"WF1", b.weighted.f1},
           {"TP", b.counts.tp},
           {"TN", b.counts.tn},
           {"FP", b.counts.fp},
           {"FN", b.counts.fn}}},
         {"retrieval", retrieval},
         {"generation", {{"BLEU", b.bleu}, {"ROUGE-1", b.rouge1}, {"ROUGE-2", b.rouge2}, {"ROUGE-L", b.rougeL}}}};
  return j.dump(2) + "\n";
}

}  // namespace evidexr::eval
