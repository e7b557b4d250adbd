#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace evidexr {

/// Unit-norm vector in the shared EEG/text space.
using Embedding = std::vector<float>;

using Label = int;  // 0 = non-IED, 1 = IED

inline constexpr std::size_t kDefaultChannels = 19;
inline constexpr std::size_t kDefaultSamples = 2500;

/// Id of the distinguished corpus record holding the standard non-IED report.
inline constexpr const char* kNormalTemplateId = "normal-template";

/// Fixed-shape multichannel window. `data` is channel-major:
/// data[c * samples + t].
struct Segment {
  std::string id;
  std::string subject_id;
  double start_s = 0.0;
  std::size_t channels = kDefaultChannels;
  std::size_t samples = kDefaultSamples;
  std::vector<float> data;
  Label label = 0;

  double duration_s(double fs) const { return static_cast<double>(samples) / fs; }
  const float* channel(std::size_t c) const { return data.data() + c * samples; }
};

/// One indexed historical case.
struct CaseRecord {
  std::string case_id;
  std::string segment_id;
  std::optional<Embedding> embedding;
  Label label = 0;
  std::string report;

  bool operator==(const CaseRecord&) const = default;
};

/// Annotated event on a subject's recording timeline. `recording_id` and
/// `report` are optional ingestion extras: the former disambiguates subjects
/// with several recordings, the latter carries the clinical description that
/// segments overlapping this event are paired with.
struct EventAnnotation {
  std::string subject_id;
  double onset_s = 0.0;
  double offset_s = 0.0;
  std::string kind;
  std::string recording_id;
  std::string report;
};

/// Continuous multichannel recording, channel-major like Segment.
struct Recording {
  std::string id;
  std::string subject_id;
  double fs = 500.0;
  std::size_t channels = kDefaultChannels;
  std::vector<float> data;

  std::size_t samples() const { return channels == 0 ? 0 : data.size() / channels; }
  float* channel(std::size_t c) { return data.data() + c * samples(); }
  const float* channel(std::size_t c) const { return data.data() + c * samples(); }
};

}  // namespace evidexr
