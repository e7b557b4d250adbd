#pragma once

#include "evidexr/types.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace evidexr::index {

enum class Mode : std::uint32_t { flat = 0, partitioned = 1 };

struct Hit {
  std::string case_id;
  double score = 0.0;  // inner product == cosine for unit vectors
  Label label = 0;
  std::size_t position = 0;  // insertion order in the index

  bool operator==(const Hit&) const = default;
};

struct NeighborList {
  std::string query_id;
  std::vector<Hit> hits;  // best first

  bool operator==(const NeighborList&) const = default;
};

/// Immutable store of unit vectors with exact inner-product search.
/// Vectors are packed row-major as float32; scores accumulate in double.
class VectorIndex {
 public:
  VectorIndex() = default;

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return ids_.size(); }
  Mode mode() const { return mode_; }
  std::size_t nlist() const { return centroids_.size() / (dim_ == 0 ? 1 : dim_); }
  std::uint64_t seed() const { return seed_; }

  std::span<const float> vector(std::size_t i) const { return {vectors_.data() + i * dim_, dim_}; }
  const std::string& id(std::size_t i) const { return ids_[i]; }
  Label label(std::size_t i) const { return labels_[i]; }
  std::span<const std::uint32_t> assignment() const { return assign_; }
  std::span<const float> centroid(std::size_t c) const { return {centroids_.data() + c * dim_, dim_}; }
  const std::vector<std::vector<std::uint32_t>>& lists() const { return lists_; }

  friend VectorIndex build(const std::vector<CaseRecord>& records);
  friend VectorIndex build_partitioned(const std::vector<CaseRecord>& records, std::size_t nlist,
                                       std::uint64_t seed);
  friend void save(const VectorIndex& idx, const std::filesystem::path& path);
  friend VectorIndex load(const std::filesystem::path& path);

 private:
  std::size_t dim_ = 0;
  Mode mode_ = Mode::flat;
  std::uint64_t seed_ = 0;
  std::vector<float> vectors_;
  std::vector<std::string> ids_;
  std::vector<Label> labels_;
  std::vector<float> centroids_;               // nlist x dim
  std::vector<std::uint32_t> assign_;          // entry -> partition
  std::vector<std::vector<std::uint32_t>> lists_;  // partition -> entries, ascending
};

/// Unit-norm tolerance accepted at build time.
inline constexpr double kUnitTolerance = 1e-4;

/// Flat index in record order. Every record needs an embedding of the same
/// dimension, unit-norm within kUnitTolerance, and a unique case_id.
VectorIndex build(const std::vector<CaseRecord>& records);

/// Exact top-K by inner product. Ties: smaller insertion position first (ids
/// are unique, so this is total).
NeighborList search(const VectorIndex& idx, std::span<const float> query, std::size_t k);

/// Flat index plus a k-means partitioning: 25 Lloyd iterations from nlist
/// distinct entries drawn with the seed, then a final assignment against the
/// final centroids so every entry sits in its nearest partition.
VectorIndex build_partitioned(const std::vector<CaseRecord>& records, std::size_t nlist, std::uint64_t seed);

inline constexpr int kKmeansIterations = 25;

/// Exact top-K over the nprobe partitions with the nearest centroids.
NeighborList search_partitioned(const VectorIndex& idx, std::span<const float> query, std::size_t k,
                                std::size_t nprobe);

/// Search that drops hits whose case_id equals `exclude_id` (self-matches).
NeighborList search_excluding(const VectorIndex& idx, std::span<const float> query, std::size_t k,
                              const std::string& exclude_id);

/// Binary layout: 16-byte header ("EVXIDX", version 1); u32 dim, u64 M,
/// u32 mode, u32 nlist, u64 seed; M*dim float32; M ids (u32 len + bytes);
/// M u8 labels; if partitioned, nlist*dim float32 centroids and M u32 assignments.
void save(const VectorIndex& idx, const std::filesystem::path& path);
VectorIndex load(const std::filesystem::path& path);

}  // namespace evidexr::index
