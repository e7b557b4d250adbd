#pragma once

#include "evidexr/align.hpp"
#include "evidexr/corpus.hpp"
#include "evidexr/detect.hpp"
#include "evidexr/eval.hpp"
#include "evidexr/report.hpp"
#include "evidexr/signal.hpp"
#include "evidexr/synth.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace evidexr::pipeline {

// ---------------------------------------------------------------------------
// Segmentation

struct SegmentOptions {
  double band_lo = 0.5;
  double band_hi = 50.0;
  double fs_out = 500.0;
  signal::SegmentationConfig seg;
  std::size_t per_class = 0;  // 0 keeps every window
  std::uint64_t seed = 0;

  void validate() const;
};

/// Events that apply to a recording: same recording_id, or no recording_id
/// and a matching (or empty) subject_id.
std::vector<EventAnnotation> events_for(const Recording& rec, const std::vector<EventAnnotation>& events);

/// Preprocesses every recording, plans windows, labels them, optionally draws
/// a balanced subsample across the whole dataset, and materializes only the
/// selected windows. Positive windows are paired with their dominant event's
/// report, negatives with the dataset's normal report; a normal-template
/// record is appended.
corpus::SegmentSet build_segment_set(const corpus::Dataset& ds, const SegmentOptions& opts);

// ---------------------------------------------------------------------------
// Embedding and training

/// Training pairs: each segment with its record's report.
align::TrainResult train_encoder(const corpus::SegmentSet& set, const align::EncoderConfig& enc,
                                 const align::TrainConfig& cfg, const align::LossLogger& log = {});

/// Copies of the set's records with EEG embeddings attached. Records without a
/// segment (the normal template) pass through unchanged.
std::vector<CaseRecord> embed_records(const align::EncoderParams& p, const corpus::SegmentSet& set);

struct QueryItem {
  std::string id;
  Label label = 0;
  Embedding embedding;
  std::string gold;
};

/// Embedded records become queries; records without embeddings are skipped.
std::vector<QueryItem> to_queries(const std::vector<CaseRecord>& embedded);

// ---------------------------------------------------------------------------
// Harness

enum class EvidenceMode { semantic, random_A, random_B, no_text };

const char* to_string(EvidenceMode m);
EvidenceMode parse_mode(const std::string& s);

/// Inputs embedded by one encoder: the case base (with the normal template)
/// and the validation/test queries.
struct HarnessInputs {
  std::vector<CaseRecord> cases;
  std::vector<QueryItem> validation;
  std::vector<QueryItem> test;
};

struct HarnessOptions {
  std::vector<std::size_t> k_grid = detect::default_k_grid();
  std::vector<double> gamma_grid = detect::default_gamma_grid();
  std::size_t depth = 10;
  std::vector<std::size_t> ks = {1, 2, 3};
  std::uint64_t seed = 0;
  std::optional<detect::DetectorConfig> detector;  // skips tuning when set
  report::GenerateOptions generate;
};

struct HarnessRun {
  EvidenceMode mode = EvidenceMode::semantic;
  detect::DetectorConfig detector;
  std::vector<report::GeneratedReport> reports;
  std::vector<eval::QueryOutcome> outcomes;
  eval::MetricBundle metrics;
};

/// Full detect + report + evaluate loop. Semantic: classification and
/// references from the aligned index. random_A / random_B: classification and
/// ranking still come from the aligned index, but the K injected references
/// are drawn from the whole case base or from the predicted class. no_text:
/// semantic loop over `supervised` inputs (throws when absent).
HarnessRun run_harness(const HarnessInputs& semantic, const HarnessInputs* supervised, EvidenceMode mode,
                       const HarnessOptions& opts);

// ---------------------------------------------------------------------------
// Benchmark

/// Benchmark defaults: eight single-focus subjects (one per location) with
/// white background noise and frequent events.
synth::SynthConfig bench_synth();
/// Wider temporal kernels and coarser pooling than the library defaults, so a
/// 5 s window trains in under a minute.
align::EncoderConfig bench_encoder();
align::TrainConfig bench_training();

struct BenchConfig {
  synth::SynthConfig synth = bench_synth();  // seed and minutes are replaced per split
  double train_minutes = 5.0;                // per recording
  double validation_minutes = 2.0;
  double test_minutes = 3.0;
  std::size_t train_per_class = 500;
  std::size_t validation_per_class = 100;
  std::size_t test_per_class = 250;
  SegmentOptions segmentation;
  align::EncoderConfig encoder = bench_encoder();
  align::TrainConfig training = bench_training();
  HarnessOptions harness;
  std::uint64_t seed = 0;
  std::vector<EvidenceMode> modes = {EvidenceMode::semantic};
};

struct BenchResult {
  std::map<EvidenceMode, HarnessRun> runs;
  align::TrainResult semantic_training;
  std::optional<align::TrainResult> supervised_training;
  corpus::SegmentSet train_set;
  std::map<std::string, double> seconds;  // stage timings
};

using StageLogger = std::function<void(const std::string& message)>;

/// Synthesizes train/validation/test from seeds seed, seed+1, seed+2, trains
/// the encoder(s), and runs the requested harness modes.
BenchResult run_bench(const BenchConfig& cfg, const StageLogger& log = {});

}  // namespace evidexr::pipeline
