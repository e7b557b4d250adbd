#include "evidexr/detect.hpp"

#include "evidexr/io.hpp"

#include <algorithm>

namespace evidexr::detect {

void DetectorConfig::validate() const {
  if (k < 1) throw Error("detector: K must be >= 1");
  if (!(gamma > 0.0 && gamma <= 1.0)) throw Error("detector: gamma must be in (0, 1]");
}

double evidence_score(const index::NeighborList& neighbors, std::size_t k) {
  if (k == 0) throw Error("evidence_score: K must be >= 1");
  if (neighbors.hits.size() < k) {
    throw Error("evidence_score: need " + std::to_string(k) + " neighbors, have " +
                std::to_string(neighbors.hits.size()));
  }
  std::size_t pos = 0;
  for (std::size_t i = 0; i < k; ++i) pos += neighbors.hits[i].label == 1 ? 1 : 0;
  return static_cast<double>(pos) / static_cast<double>(k);
}

Label classify(double evidence, const DetectorConfig& cfg) { return evidence >= cfg.gamma ? 1 : 0; }

Prediction predict(const index::VectorIndex& idx, const Embedding& query, const std::string& query_id,
                   const DetectorConfig& cfg, const std::string& exclude_id) {
  cfg.validate();
  const auto nl = exclude_id.empty() ? index::search(idx, query, cfg.k)
                                     : index::search_excluding(idx, query, cfg.k, exclude_id);
  Prediction p;
  p.query_id = query_id;
  p.evidence = evidence_score(nl, cfg.k);
  p.label_hat = classify(p.evidence, cfg);
  return p;
}

std::vector<std::size_t> default_k_grid() { return {1, 3, 5, 7, 9, 15, 25}; }

std::vector<double> default_gamma_grid() {
  std::vector<double> g;
  for (int i = 1; i <= 10; ++i) g.push_back(static_cast<double>(i) / 10.0);
  return g;
}

DetectorConfig tune(const std::vector<ValidationQuery>& validation, const index::VectorIndex& idx,
                    const std::vector<std::size_t>& k_grid, const std::vector<double>& gamma_grid,
                    const TuneOptions& opts) {
  if (k_grid.empty() || gamma_grid.empty()) throw Error("tune: empty grid");
  if (validation.empty()) throw Error("tune: empty validation set");
  bool has[2] = {false, false};
  for (const auto& q : validation) has[q.label == 1] = true;
  if (!has[0] || !has[1]) throw Error("tune: validation set contains a single class");
  for (double g : gamma_grid) DetectorConfig{1, g}.validate();

  const std::size_t available = idx.size();
  std::vector<std::size_t> ks;
  for (std::size_t k : k_grid) {
    if (k == 0) throw Error("tune: K must be >= 1");
    if (k <= available) ks.push_back(k);
  }
  if (ks.empty()) throw Error("tune: no K in the grid fits an index of " + std::to_string(available) + " entries");
  const std::size_t kmax = *std::max_element(ks.begin(), ks.end());

  // One search per query; positives among the first r hits, r = 0..kmax.
  std::vector<std::vector<std::size_t>> prefix(validation.size());
  std::vector<bool> usable(ks.size(), true);
  std::vector<Label> labels;
  for (std::size_t qi = 0; qi < validation.size(); ++qi) {
    const auto& q = validation[qi];
    const auto nl = opts.exclude_self ? index::search_excluding(idx, q.embedding, kmax, q.id)
                                      : index::search(idx, q.embedding, kmax);
    auto& pre = prefix[qi];
    pre.assign(nl.hits.size() + 1, 0);
    for (std::size_t i = 0; i < nl.hits.size(); ++i) pre[i + 1] = pre[i] + (nl.hits[i].label == 1 ? 1 : 0);
    for (std::size_t ki = 0; ki < ks.size(); ++ki) {
      if (nl.hits.size() < ks[ki]) usable[ki] = false;
    }
    labels.push_back(q.label);
  }

  // BA = (tp/P + tn/N) / 2, so with P and N fixed tp*N + tn*P orders configs
  // exactly; comparing doubles could split ties between equal rationals.
  std::size_t P = 0;
  for (Label l : labels) P += l == 1;
  const std::size_t N = labels.size() - P;
  bool found = false;
  DetectorConfig best;
  std::size_t best_key = 0;
  for (std::size_t ki = 0; ki < ks.size(); ++ki) {
    if (!usable[ki]) continue;
    for (double g : gamma_grid) {
      const DetectorConfig cfg{ks[ki], g};
      std::size_t tp = 0, tn = 0;
      for (std::size_t qi = 0; qi < validation.size(); ++qi) {
        const double e = static_cast<double>(prefix[qi][cfg.k]) / static_cast<double>(cfg.k);
        const Label pred = classify(e, cfg);
        tp += pred == 1 && labels[qi] == 1;
        tn += pred == 0 && labels[qi] == 0;
      }
      const std::size_t key = tp * N + tn * P;
      const bool better = !found || key > best_key ||
                          (key == best_key && (cfg.k < best.k || (cfg.k == best.k && g > best.gamma)));
      if (better) {
        found = true;
        best = cfg;
        best_key = key;
      }
    }
  }
  if (!found) throw Error("tune: no usable K after excluding self-matches");
  return best;
}

}  // namespace evidexr::detect
