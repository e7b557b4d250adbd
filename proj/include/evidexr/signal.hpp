#pragma once

#include "evidexr/random.hpp"
#include "evidexr/types.hpp"

#include <algorithm>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace evidexr::signal {

struct SegmentationConfig {
  double window_s = 5.0;
  double stride_s = 0.05;
  // Overlap with an event must strictly exceed this to label a window positive.
  double min_overlap_s = 0.0;

  void validate() const;
};

/// Linear-phase windowed-sinc band-pass taps (Hamming window). Length is
/// 4*fs/lo rounded to the nearest odd integer; gain is normalized to 1 at the
/// band centre.
std::vector<double> design_bandpass(double fs, double lo, double hi);

/// Zero-phase FIR band-pass with edge-value padding. Requires 0 < lo < hi < fs/2.
Recording bandpass(const Recording& rec, double lo, double hi);

/// Linear-interpolation resampler; output length is round(T * fs_out / fs).
/// Does not filter: callers band-limit first when downsampling.
Recording resample(const Recording& rec, double fs_out);

/// Artifact-removal stage. Pass-through: ICA is not part of this pipeline, the
/// stage only keeps the processing chain's shape.
Recording remove_artifacts(const Recording& rec);

/// band-pass -> artifact stage -> resample.
Recording preprocess(const Recording& rec, double lo, double hi, double fs_out);

/// One sliding-window position on a recording.
struct WindowSpan {
  std::size_t start_sample = 0;
  double start_s = 0.0;
  double end_s = 0.0;  // exclusive
};

/// Window k covers samples [k*S, k*S + W) with W = round(window_s*fs) and
/// S = round(stride_s*fs); there are floor((T - W)/S) + 1 of them.
/// Throws when the recording is shorter than one window.
std::vector<WindowSpan> plan_windows(std::size_t total_samples, double fs,
                                     const SegmentationConfig& cfg);

/// Copies one window out of a recording into an unlabeled Segment.
Segment extract(const Recording& rec, const WindowSpan& span, std::size_t window_samples,
                std::string id);

/// Dense segmentation. Ids are "<recording id>:<start sample>".
std::vector<Segment> segment(const Recording& rec, const SegmentationConfig& cfg);

/// Length of the intersection of half-open intervals [a0, a1) and [b0, b1).
inline double overlap_s(double a0, double a1, double b0, double b1) {
  return std::max(0.0, std::min(a1, b1) - std::max(a0, b0));
}

/// 1 iff [start, end) overlaps some event by more than min_overlap_s.
Label interval_label(double start_s, double end_s, std::span<const EventAnnotation> events,
                     double min_overlap_s);

/// The event with the largest overlap (earliest onset on ties), or nullptr
/// when nothing overlaps by more than min_overlap_s.
const EventAnnotation* dominant_event(double start_s, double end_s,
                                      std::span<const EventAnnotation> events,
                                      double min_overlap_s);

/// Labels each segment against the events of its own subject. Window
/// duration is samples / fs.
std::vector<Segment> label_segments(std::vector<Segment> segments,
                                    std::span<const EventAnnotation> events,
                                    const SegmentationConfig& cfg, double fs);

/// Draws exactly `per_class` items of each label without replacement.
/// Output keeps the input order of the selected items, so the result is a
/// deterministic function of (items, per_class, seed).
template <typename T>
std::vector<T> balanced_subsample(const std::vector<T>& items, std::size_t per_class,
                                  std::uint64_t seed);

/// Index-only form of balanced_subsample, for callers that defer copying.
std::vector<std::size_t> balanced_subsample_indices(std::span<const Label> labels,
                                                    std::size_t per_class, std::uint64_t seed);

template <typename T>
std::vector<T> balanced_subsample(const std::vector<T>& items, std::size_t per_class,
                                  std::uint64_t seed) {
  std::vector<Label> labels;
  labels.reserve(items.size());
  for (const auto& it : items) labels.push_back(it.label);
  std::vector<T> out;
  for (std::size_t i : balanced_subsample_indices(labels, per_class, seed)) out.push_back(items[i]);
  return out;
}

}  // namespace evidexr::signal
