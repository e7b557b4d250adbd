#pragma once

#include "evidexr/corpus.hpp"
#include "evidexr/types.hpp"

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace evidexr::synth {

enum class NoiseModel { white, ar1 };

/// per_recording: one focus per recording, rotating through locations() from a
/// seeded offset. per_event: each event draws its own location.
enum class FocusModel { per_recording, per_event };

/// Standard 10-20 montage order used for 19-channel recordings.
inline constexpr std::array<const char*, 19> kMontage = {"Fp1", "Fp2", "F7", "F3", "Fz", "F4", "F8",
                                                         "T3",  "C3",  "Cz", "C4", "T4", "T5", "P3",
                                                         "Pz",  "P4",  "T6", "O1", "O2"};

/// A discharge focus: montage channels plus the words that fill a report
/// template's {side}, {region} and {morphology} slots.
struct Location {
  std::string side;
  std::string region;
  std::string morphology;
  std::vector<std::size_t> channels;
};

/// Eight foci: left/right x frontal, centrotemporal, parietal, occipital.
const std::vector<Location>& locations();

/// Eight report templates, one per location, with {side}/{region}/{morphology} slots.
std::vector<std::string> default_templates();
std::string default_normal_report();

std::string fill_template(const std::string& tmpl, const Location& loc);

struct SynthConfig {
  std::size_t n_subjects = 1;
  std::size_t n_recordings = 1;  // per subject
  double minutes = 1.0;          // per recording
  double fs = 500.0;
  std::size_t channels = kDefaultChannels;
  double ied_rate = 4.0;  // events per minute
  double spike_amp = 50.0;
  double noise_rms = 10.0;
  NoiseModel noise_model = NoiseModel::ar1;
  double ar1_phi = 0.9;
  FocusModel focus = FocusModel::per_recording;
  std::vector<std::string> report_templates = default_templates();
  std::string normal_report = default_normal_report();
  std::uint64_t seed = 0;

  void validate() const;
};

/// Event morphology: a triangular spike followed by a half-sine slow wave of
/// the same polarity.
inline constexpr double kSpikeS = 0.070;
inline constexpr double kSlowWaveS = 0.300;
inline constexpr double kSlowWaveRatio = 0.6;
inline constexpr double kEventS = kSpikeS + kSlowWaveS;

/// Event waveform sampled at fs with peak magnitude `amp` (negative polarity).
std::vector<float> event_waveform(double fs, double amp);

struct SynthCorpus {
  corpus::Dataset dataset;  // recordings, events (with reports), normal report
  /// One record per injected event (case_id "<recording>:e<k>", segment_id
  /// "<recording>:<onset sample>") plus the normal-template record.
  std::vector<CaseRecord> records;
  /// Location index of every event, aligned with dataset.events.
  std::vector<std::size_t> event_locations;
};

/// Ids: subject "syn<seed>-s<i>", recording "syn<seed>-s<i>-r<j>". Each event
/// picks a location uniformly and is added to that location's channels.
/// Templates are assigned to locations in order; with fewer than eight
/// templates they are reused cyclically.
SynthCorpus gen_corpus(const SynthConfig& cfg);

}  // namespace evidexr::synth
