#pragma once

#include "evidexr/index.hpp"
#include "evidexr/types.hpp"

#include <string>
#include <vector>

namespace evidexr::detect {

struct DetectorConfig {
  std::size_t k = 3;
  double gamma = 0.5;

  void validate() const;
  bool operator==(const DetectorConfig&) const = default;
};

struct Prediction {
  std::string query_id;
  double evidence = 0.0;  // E_q
  Label label_hat = 0;
};

/// Fraction of IED labels among the top-K hits. Throws if fewer than K hits.
double evidence_score(const index::NeighborList& neighbors, std::size_t k);

/// 1 iff evidence >= gamma.
Label classify(double evidence, const DetectorConfig& cfg);

/// search + evidence_score + classify. When exclude_id is non-empty, a hit
/// with that case_id is dropped first.
Prediction predict(const index::VectorIndex& idx, const Embedding& query, const std::string& query_id,
                   const DetectorConfig& cfg, const std::string& exclude_id = {});

struct ValidationQuery {
  std::string id;
  Embedding embedding;
  Label label = 0;
};

std::vector<std::size_t> default_k_grid();
/// 0.1, 0.2, ..., 1.0 computed as i/10.
std::vector<double> default_gamma_grid();

struct TuneOptions {
  bool exclude_self = true;  // drop hits whose case_id equals the query id
};

/// Grid search maximizing balanced accuracy on the validation set. Ties go
/// to the smaller K, then the larger gamma. K values larger than the index
/// are skipped. Throws on empty grids, empty validation, a single-class
/// validation set, or when no K in the grid fits the index.
DetectorConfig tune(const std::vector<ValidationQuery>& validation, const index::VectorIndex& idx,
                    const std::vector<std::size_t>& k_grid, const std::vector<double>& gamma_grid,
                    const TuneOptions& opts = {});

}  // namespace evidexr::detect
