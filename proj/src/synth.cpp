#include "evidexr/synth.hpp"

#include "evidexr/io.hpp"
#include "evidexr/random.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace evidexr::synth {

const std::vector<Location>& locations() {
  // Montage indices: Fp1 0, Fp2 1, F7 2, F3 3, Fz 4, F4 5, F8 6, T3 7, C3 8, Cz 9,
  // C4 10, T4 11, T5 12, P3 13, Pz 14, P4 15, T6 16, O1 17, O2 18.
  static const std::vector<Location> locs = {
      {"left", "frontal", "spike-and-slow-wave complexes", {0, 3, 2}},
      {"right", "frontal", "spike-and-slow-wave complexes", {1, 5, 6}},
      {"left", "centrotemporal", "sharp waves", {8, 7}},
      {"right", "centrotemporal", "sharp waves", {10, 11}},
      {"left", "parietal", "polyspike discharges", {13, 12}},
      {"right", "parietal", "polyspike discharges", {15, 16}},
      {"left", "occipital", "spike discharges", {17}},
      {"right", "occipital", "spike discharges", {18}},
  };
  return locs;
}

std::vector<std::string> default_templates() {
  return {
      "Interictal {morphology} are seen over the {side} {region} leads, most prominent in drowsiness.",
      "Frequent {morphology} arise from the {side} {region} region with a stable field.",
      "Focal {morphology} are recorded at the {side} {region} electrodes; the background is otherwise normal.",
      "Intermittent {morphology} are localized to the {side} {region} area and increase during sleep.",
      "Epileptiform {morphology} show a {side} {region} maximum and occur in brief runs.",
      "Sporadic {morphology} appear over the {side} {region} derivations without clinical correlate.",
      "Recurrent {morphology} are centred on the {side} {region} leads with a consistent phase reversal.",
      "Isolated {morphology} emerge from the {side} {region} cortex and are activated by hyperventilation.",
  };
}

std::string default_normal_report() {
  return "No epileptiform discharges are seen. Background activity is well organized and normal for age.";
}

std::string fill_template(const std::string& tmpl, const Location& loc) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i);
      if (close != std::string::npos) {
        const std::string key = tmpl.substr(i + 1, close - i - 1);
        const std::string* val = key == "side" ? &loc.side : key == "region" ? &loc.region
                                : key == "morphology"                        ? &loc.morphology
                                                                             : nullptr;
        if (val) {
          out += *val;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

void SynthConfig::validate() const {
  if (n_subjects < 1 || n_recordings < 1) throw Error("synth: subject and recording counts must be >= 1");
  if (!(fs > 100.0)) throw Error("synth: fs must exceed 100 Hz");
  if (channels != kMontage.size()) throw Error("synth: the montage has 19 channels, got " + std::to_string(channels));
  if (!(minutes > 0.0)) throw Error("synth: minutes must be positive");
  if (!(ied_rate >= 0.0)) throw Error("synth: ied_rate must be >= 0");
  if (!(spike_amp > 0.0) || !(noise_rms >= 0.0)) throw Error("synth: amplitudes must be positive");
  if (!(ar1_phi > -1.0 && ar1_phi < 1.0)) throw Error("synth: ar1_phi must lie in (-1, 1)");
  if (report_templates.empty()) throw Error("synth: no report templates");
  for (const auto& t : report_templates) {
    if (t.empty()) throw Error("synth: empty report template");
  }
  if (normal_report.empty()) throw Error("synth: empty normal report");
  const double total = minutes * 60.0 * fs;
  if (total < kEventS * fs + 1.0) throw Error("synth: recording shorter than one event");
}

std::vector<float> event_waveform(double fs, double amp) {
  const auto spike_n = static_cast<std::size_t>(std::lround(kSpikeS * fs));
  const auto slow_n = static_cast<std::size_t>(std::lround(kSlowWaveS * fs));
  std::vector<float> w(spike_n + slow_n);
  for (std::size_t i = 0; i < spike_n; ++i) {
    const double x = (static_cast<double>(i) + 0.5) / static_cast<double>(spike_n);  // (0,1)
    w[i] = static_cast<float>(-amp * (1.0 - std::abs(2.0 * x - 1.0)));
  }
  for (std::size_t i = 0; i < slow_n; ++i) {
    const double x = (static_cast<double>(i) + 0.5) / static_cast<double>(slow_n);
    w[spike_n + i] = static_cast<float>(-kSlowWaveRatio * amp * std::sin(std::numbers::pi * x));
  }
  return w;
}

SynthCorpus gen_corpus(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  const auto& locs = locations();
  const auto samples = static_cast<std::size_t>(std::llround(cfg.minutes * 60.0 * cfg.fs));
  const double duration = static_cast<double>(samples) / cfg.fs;
  const auto wave = event_waveform(cfg.fs, cfg.spike_amp);
  const std::string prefix = "syn" + std::to_string(cfg.seed);
  const std::size_t focus_offset = rng.index(locs.size());

  SynthCorpus out;
  out.dataset.seed = cfg.seed;
  out.dataset.normal_report = cfg.normal_report;
  for (std::size_t s = 0; s < cfg.n_subjects; ++s) {
    const std::string subject = prefix + "-s" + std::to_string(s);
    for (std::size_t r = 0; r < cfg.n_recordings; ++r) {
      Recording rec;
      rec.id = subject + "-r" + std::to_string(r);
      rec.subject_id = subject;
      rec.fs = cfg.fs;
      rec.channels = cfg.channels;
      rec.data.resize(cfg.channels * samples);
      const std::size_t focus = (focus_offset + s * cfg.n_recordings + r) % locs.size();

      // Background, channel by channel. The AR(1) innovation is scaled so the
      // stationary RMS equals noise_rms.
      const double innov = cfg.noise_model == NoiseModel::ar1 ? std::sqrt(1.0 - cfg.ar1_phi * cfg.ar1_phi) : 1.0;
      for (std::size_t c = 0; c < cfg.channels; ++c) {
        float* x = rec.channel(c);
        double prev = cfg.noise_model == NoiseModel::ar1 ? cfg.noise_rms * rng.normal() : 0.0;
        for (std::size_t t = 0; t < samples; ++t) {
          const double e = cfg.noise_rms * rng.normal();
          prev = cfg.noise_model == NoiseModel::ar1 ? cfg.ar1_phi * prev + innov * e : e;
          x[t] = static_cast<float>(prev);
        }
      }

      const std::size_t n_events = cfg.ied_rate > 0.0 ? rng.poisson(cfg.ied_rate * cfg.minutes) : 0;
      std::vector<std::pair<double, std::size_t>> events;  // (onset, location)
      for (std::size_t e = 0; e < n_events; ++e) {
        const double onset = rng.uniform(0.0, duration - kEventS);
        events.emplace_back(onset, cfg.focus == FocusModel::per_recording ? focus : rng.index(locs.size()));
      }
      std::sort(events.begin(), events.end());

      for (std::size_t e = 0; e < events.size(); ++e) {
        const auto [onset, li] = events[e];
        const Location& loc = locs[li];
        const auto start = static_cast<std::size_t>(std::llround(onset * cfg.fs));
        for (std::size_t c : loc.channels) {
          float* x = rec.channel(c);
          for (std::size_t i = 0; i < wave.size() && start + i < samples; ++i) x[start + i] += wave[i];
        }
        const std::string report = fill_template(cfg.report_templates[li % cfg.report_templates.size()], loc);
        out.dataset.events.push_back(EventAnnotation{subject, onset, onset + kEventS, "IED", rec.id, report});
        out.event_locations.push_back(li);
        out.records.push_back(CaseRecord{rec.id + ":e" + std::to_string(e), rec.id + ":" + std::to_string(start),
                                         std::nullopt, 1, report});
      }
      out.dataset.recordings.push_back(std::move(rec));
    }
  }
  out.records.push_back(CaseRecord{kNormalTemplateId, "", std::nullopt, 0, cfg.normal_report});
  return out;
}

}  // namespace evidexr::synth
