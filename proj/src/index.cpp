#include "evidexr/index.hpp"

#include "evidexr/io.hpp"
#include "evidexr/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <queue>
#include <unordered_set>

namespace evidexr::index {

namespace {

constexpr std::uint32_t kIndexVersion = 1;

double dot(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

double sq_dist(std::span<const float> a, std::span<const float> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    s += d * d;
  }
  return s;
}

struct Candidate {
  double score;
  std::size_t pos;
};

// True when a ranks ahead of b.
bool ahead(const Candidate& a, const Candidate& b) {
  return a.score > b.score || (a.score == b.score && a.pos < b.pos);
}

// Max-heap on "worst kept": top is the candidate that would be evicted first.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}

  void offer(double score, std::size_t pos) {
    const Candidate c{score, pos};
    if (heap_.size() < k_) {
      heap_.push(c);
    } else if (ahead(c, heap_.top())) {
      heap_.pop();
      heap_.push(c);
    }
  }

  std::vector<Candidate> sorted() {
    std::vector<Candidate> out;
    out.reserve(heap_.size());
    while (!heap_.empty()) {
      out.push_back(heap_.top());
      heap_.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  struct Worse {
    bool operator()(const Candidate& a, const Candidate& b) const { return ahead(a, b); }
  };
  std::size_t k_;
  std::priority_queue<Candidate, std::vector<Candidate>, Worse> heap_;
};

void check_query(const VectorIndex& idx, std::span<const float> query, std::size_t k) {
  if (k == 0) throw Error("search: K must be >= 1");
  if (idx.size() > 0 && query.size() != idx.dim()) {
    throw Error("search: query dimension " + std::to_string(query.size()) + " != index dimension " +
                std::to_string(idx.dim()));
  }
}

NeighborList to_list(const VectorIndex& idx, const std::vector<Candidate>& cands) {
  NeighborList out;
  out.hits.reserve(cands.size());
  for (const auto& c : cands) out.hits.push_back(Hit{idx.id(c.pos), c.score, idx.label(c.pos), c.pos});
  return out;
}

std::size_t nearest_centroid(std::span<const float> v, const std::vector<float>& centroids, std::size_t d) {
  const std::size_t n = centroids.size() / d;
  std::size_t best = 0;
  double best_d = sq_dist(v, {centroids.data(), d});
  for (std::size_t c = 1; c < n; ++c) {
    const double dd = sq_dist(v, {centroids.data() + c * d, d});
    if (dd < best_d) {
      best_d = dd;
      best = c;
    }
  }
  return best;
}

}  // namespace

VectorIndex build(const std::vector<CaseRecord>& records) {
  VectorIndex idx;
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (!r.embedding) throw Error("index build: case " + r.case_id + " has no embedding");
    const auto& e = *r.embedding;
    if (idx.ids_.empty()) {
      if (e.empty()) throw Error("index build: case " + r.case_id + " has an empty embedding");
      idx.dim_ = e.size();
    } else if (e.size() != idx.dim_) {
      throw Error("index build: case " + r.case_id + " has dimension " + std::to_string(e.size()) +
                  ", expected " + std::to_string(idx.dim_));
    }
    const double norm = std::sqrt(dot(e, e));
    if (!(std::abs(norm - 1.0) <= kUnitTolerance)) {
      throw Error("index build: case " + r.case_id + " is not unit-norm (|v| = " + std::to_string(norm) + ")");
    }
    if (r.label != 0 && r.label != 1) throw Error("index build: case " + r.case_id + " label outside {0,1}");
    if (!seen.insert(r.case_id).second) throw Error("index build: duplicate case_id " + r.case_id);
    idx.vectors_.insert(idx.vectors_.end(), e.begin(), e.end());
    idx.ids_.push_back(r.case_id);
    idx.labels_.push_back(r.label);
  }
  return idx;
}

NeighborList search(const VectorIndex& idx, std::span<const float> query, std::size_t k) {
  check_query(idx, query, k);
  TopK top(k);
  for (std::size_t i = 0; i < idx.size(); ++i) top.offer(dot(query, idx.vector(i)), i);
  return to_list(idx, top.sorted());
}

NeighborList search_excluding(const VectorIndex& idx, std::span<const float> query, std::size_t k,
                              const std::string& exclude_id) {
  check_query(idx, query, k);
  TopK top(k);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx.id(i) == exclude_id) continue;
    top.offer(dot(query, idx.vector(i)), i);
  }
  return to_list(idx, top.sorted());
}

VectorIndex build_partitioned(const std::vector<CaseRecord>& records, std::size_t nlist, std::uint64_t seed) {
  VectorIndex idx = build(records);
  const std::size_t M = idx.size(), d = idx.dim_;
  if (nlist == 0) throw Error("build_partitioned: nlist must be >= 1");
  if (nlist > M) {
    throw Error("build_partitioned: nlist " + std::to_string(nlist) + " exceeds entry count " + std::to_string(M));
  }
  idx.mode_ = Mode::partitioned;
  idx.seed_ = seed;

  Rng rng(seed);
  std::vector<std::size_t> perm(M);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::size_t i = 0; i < nlist; ++i) std::swap(perm[i], perm[i + rng.index(M - i)]);
  std::vector<float> centroids(nlist * d);
  for (std::size_t c = 0; c < nlist; ++c) {
    const auto v = idx.vector(perm[c]);
    std::copy(v.begin(), v.end(), centroids.begin() + static_cast<std::ptrdiff_t>(c * d));
  }

  std::vector<std::uint32_t> assign(M, 0);
  std::vector<double> sums(nlist * d);
  std::vector<std::size_t> counts(nlist);
  for (int it = 0; it < kKmeansIterations; ++it) {
    for (std::size_t i = 0; i < M; ++i) assign[i] = static_cast<std::uint32_t>(nearest_centroid(idx.vector(i), centroids, d));
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < M; ++i) {
      const auto v = idx.vector(i);
      ++counts[assign[i]];
      for (std::size_t j = 0; j < d; ++j) sums[assign[i] * d + j] += v[j];
    }
    for (std::size_t c = 0; c < nlist; ++c) {
      if (counts[c] == 0) continue;  // empty partition keeps its previous centroid
      for (std::size_t j = 0; j < d; ++j) {
        centroids[c * d + j] = static_cast<float>(sums[c * d + j] / static_cast<double>(counts[c]));
      }
    }
  }
  for (std::size_t i = 0; i < M; ++i) assign[i] = static_cast<std::uint32_t>(nearest_centroid(idx.vector(i), centroids, d));

  idx.centroids_ = std::move(centroids);
  idx.assign_ = std::move(assign);
  idx.lists_.assign(nlist, {});
  for (std::size_t i = 0; i < M; ++i) idx.lists_[idx.assign_[i]].push_back(static_cast<std::uint32_t>(i));
  return idx;
}

NeighborList search_partitioned(const VectorIndex& idx, std::span<const float> query, std::size_t k,
                                std::size_t nprobe) {
  if (idx.mode() != Mode::partitioned) throw Error("search_partitioned: index is not partitioned");
  check_query(idx, query, k);
  const std::size_t nlist = idx.nlist();
  if (nprobe < 1 || nprobe > nlist) {
    throw Error("search_partitioned: nprobe " + std::to_string(nprobe) + " outside [1, " + std::to_string(nlist) + "]");
  }
  std::vector<std::pair<double, std::size_t>> order(nlist);
  for (std::size_t c = 0; c < nlist; ++c) order[c] = {sq_dist(query, idx.centroid(c)), c};
  std::sort(order.begin(), order.end());
  TopK top(k);
  for (std::size_t p = 0; p < nprobe; ++p) {
    for (std::uint32_t i : idx.lists()[order[p].second]) top.offer(dot(query, idx.vector(i)), i);
  }
  return to_list(idx, top.sorted());
}

void save(const VectorIndex& idx, const std::filesystem::path& path) {
  io::Writer w;
  w.header(io::kIndexMagic, kIndexVersion);
  w.u32(static_cast<std::uint32_t>(idx.dim_));
  w.u64(idx.size());
  w.u32(static_cast<std::uint32_t>(idx.mode_));
  w.u32(static_cast<std::uint32_t>(idx.mode_ == Mode::partitioned ? idx.nlist() : 0));
  w.u64(idx.seed_);
  w.f32s(idx.vectors_);
  for (const auto& id : idx.ids_) w.str(id);
  for (Label l : idx.labels_) w.u8(static_cast<std::uint8_t>(l));
  if (idx.mode_ == Mode::partitioned) {
    w.f32s(idx.centroids_);
    for (auto a : idx.assign_) w.u32(a);
  }
  io::write_atomic(path, w.bytes());
}

VectorIndex load(const std::filesystem::path& path) {
  io::Reader r(io::read_file(path), path.string());
  if (r.header(io::kIndexMagic) != kIndexVersion) throw Error(path.string() + ": unsupported index version");
  VectorIndex idx;
  idx.dim_ = r.u32();
  const std::uint64_t M = r.u64();
  const std::uint32_t mode = r.u32();
  if (mode > 1) throw Error(path.string() + ": unknown index mode");
  idx.mode_ = static_cast<Mode>(mode);
  const std::uint32_t nlist = r.u32();
  idx.seed_ = r.u64();
  if (M * idx.dim_ * 4 > r.remaining()) throw Error(path.string() + ": truncated vectors");
  idx.vectors_.resize(M * idx.dim_);
  r.f32s(idx.vectors_);
  idx.ids_.resize(M);
  for (auto& id : idx.ids_) id = r.str();
  idx.labels_.resize(M);
  for (auto& l : idx.labels_) {
    l = r.u8();
    if (l > 1) throw Error(path.string() + ": label outside {0,1}");
  }
  if (idx.mode_ == Mode::partitioned) {
    idx.centroids_.resize(static_cast<std::size_t>(nlist) * idx.dim_);
    r.f32s(idx.centroids_);
    idx.assign_.resize(M);
    idx.lists_.assign(nlist, {});
    for (std::size_t i = 0; i < M; ++i) {
      idx.assign_[i] = r.u32();
      if (idx.assign_[i] >= nlist) throw Error(path.string() + ": partition id out of range");
      idx.lists_[idx.assign_[i]].push_back(static_cast<std::uint32_t>(i));
    }
  }
  if (!r.done()) throw Error(path.string() + ": trailing bytes");
  return idx;
}

}  // namespace evidexr::index
