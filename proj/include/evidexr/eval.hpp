#pragma once

#include "evidexr/types.hpp"

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace evidexr::eval {

// ---------------------------------------------------------------------------
// Detection

struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t total() const { return tp + tn + fp + fn; }
  bool operator==(const ConfusionCounts&) const = default;
};

ConfusionCounts confusion(std::span<const Label> preds, std::span<const Label> labels);

/// (TP/(TP+FN) + TN/(TN+FP)) / 2. Throws when either class is absent from the truth.
double balanced_accuracy(const ConfusionCounts& c);

struct WeightedPrf {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

/// Per-class precision/recall/F1 averaged with true-label support weights.
/// A zero denominator makes that per-class value 0.
WeightedPrf weighted_prf(std::span<const Label> preds, std::span<const Label> labels);

// ---------------------------------------------------------------------------
// Retrieval ranking

struct RankedRelevance {
  Label query_label = 0;
  std::vector<Label> neighbor_labels;  // rank order

  bool relevant(std::size_t rank0) const { return neighbor_labels[rank0] == query_label; }
};

double precision_at_k(const RankedRelevance& r, std::size_t k);
int hit_at_k(const RankedRelevance& r, std::size_t k);

/// Mean of P@r over relevant ranks r <= depth; 0 if none.
double average_precision(const RankedRelevance& r, std::size_t depth);
/// 1 / first relevant rank within depth; 0 if none.
double reciprocal_rank(const RankedRelevance& r, std::size_t depth);

struct MapMrr {
  double map = 0.0, mrr = 0.0;
};

MapMrr map_mrr(const std::vector<RankedRelevance>& rankings, std::size_t depth);

// ---------------------------------------------------------------------------
// Text overlap

/// Lowercases ASCII, splits on whitespace, and emits each ASCII punctuation
/// character as its own token. Bytes >= 0x80 are kept inside words.
std::vector<std::string> tokenize(std::string_view text);

struct BleuBreakdown {
  std::array<double, 4> precision{};  // modified p_1..p_4 (0 for excluded orders)
  std::array<bool, 4> included{};     // false when the candidate has no n-grams of that order
  std::array<double, 4> weights{0.25, 0.25, 0.25, 0.25};
  double brevity_penalty = 0.0;
  double score = 0.0;
  std::size_t candidate_len = 0, reference_len = 0;
};

/// Sentence BLEU, orders 1..4, clipped counts, no smoothing. Orders with no
/// candidate n-grams are dropped and the remaining weights renormalized; any
/// remaining zero precision makes the score 0. An empty candidate scores 0.
BleuBreakdown bleu(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                   const std::array<double, 4>& weights = {0.25, 0.25, 0.25, 0.25});

/// n-gram recall with clipped counts. Throws if the reference has no n-grams.
double rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference, std::size_t n);

/// LCS length / reference length.
double rouge_l(const std::vector<std::string>& candidate, const std::vector<std::string>& reference);

// ---------------------------------------------------------------------------
// Bundles

/// Everything known about one evaluated query.
struct QueryOutcome {
  std::string query_id;
  Label label = 0;
  Label predicted = 0;
  std::vector<Label> neighbor_labels;  // retrieval ranking, best first
  std::string generated;
  std::string gold;
};

struct MetricBundle {
  std::string mode = "semantic";
  std::uint64_t seed = 0;
  std::size_t queries = 0;
  // detection
  ConfusionCounts counts;
  double balanced_accuracy = 0.0;
  WeightedPrf weighted;
  // retrieval
  std::size_t depth = 10;
  double map = 0.0, mrr = 0.0;
  std::vector<std::size_t> ks;
  std::vector<double> precision_at, hit_at;
  // generation
  double bleu = 0.0, rouge1 = 0.0, rouge2 = 0.0, rougeL = 0.0;
};

inline constexpr const char* kMetricSchema = "evidexr.metrics/1";

/// Retrieval and text metrics are per-query means.
MetricBundle evaluate(const std::vector<QueryOutcome>& outcomes, std::size_t depth, const std::vector<std::size_t>& ks);

/// JSON with "detection", "retrieval" and "generation" sections.
std::string to_json(const MetricBundle& b);

}  // namespace evidexr::eval
