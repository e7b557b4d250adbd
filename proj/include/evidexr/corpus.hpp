#pragma once

#include "evidexr/types.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace evidexr::corpus {

// Validation. Each throws evidexr::Error describing the first violation.
void validate(const Segment& seg);
void validate(const CaseRecord& rec);
void validate(const EventAnnotation& ev);

/// Reads a JSON Lines corpus: one CaseRecord per line with keys
/// case_id, segment_id, label, report and an optional embedding array.
/// Blank lines are skipped. Errors name the 1-based line number.
std::vector<CaseRecord> load_corpus(const std::filesystem::path& path);

/// Writes records in order, one per line. Written atomically.
void save_corpus(const std::vector<CaseRecord>& records, const std::filesystem::path& path);

/// Returns the record with the given id, or nullptr.
const CaseRecord* find(const std::vector<CaseRecord>& records, const std::string& case_id);

std::vector<EventAnnotation> load_events(const std::filesystem::path& path);
void save_events(const std::vector<EventAnnotation>& events, const std::filesystem::path& path);

// Binary signal container: 16-byte header ("EVXSIG", version 1), then
// little-endian float32 samples in channel-major order. Shape lives in a JSON
// sidecar next to it (<file>.json) so the payload stays trivially parseable.
struct SignalMeta {
  std::size_t count = 1;  // number of blocks (1 for a recording, n for segment sets)
  std::size_t channels = 0;
  std::size_t samples = 0;
  double fs = 0.0;
  std::uint64_t seed = 0;
  std::string subject_id;
};

void write_signal(const std::filesystem::path& path, const SignalMeta& meta,
                  const std::vector<float>& data);
std::vector<float> read_signal(const std::filesystem::path& path, SignalMeta& meta);

std::filesystem::path sidecar_path(const std::filesystem::path& signal_path);

void save_recording(const Recording& rec, const std::filesystem::path& path, std::uint64_t seed);
Recording load_recording(const std::filesystem::path& path);

/// Ingestion layout for raw data:
///   <dir>/manifest.json   {"version":1,"seed":S,"normal_report":"...","recordings":[...]}
///   <dir>/<id>.f32 (+ .json sidecar) per recording
///   <dir>/events.jsonl
struct Dataset {
  std::vector<Recording> recordings;
  std::vector<EventAnnotation> events;
  std::string normal_report;
  std::uint64_t seed = 0;
};

void save_dataset(const Dataset& ds, const std::filesystem::path& dir);
Dataset load_dataset(const std::filesystem::path& dir);

/// Materialized segment set:
///   <dir>/segments.jsonl  per-segment metadata in block order
///   <dir>/segments.f32    all blocks back to back (+ sidecar)
///   <dir>/corpus.jsonl    paired CaseRecords (plus the normal-template record)
struct SegmentSet {
  std::vector<Segment> segments;
  std::vector<CaseRecord> records;
  double fs = 500.0;
  std::uint64_t seed = 0;
};

void save_segment_set(const SegmentSet& set, const std::filesystem::path& dir);
SegmentSet load_segment_set(const std::filesystem::path& dir);

}  // namespace evidexr::corpus
