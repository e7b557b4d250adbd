#include "evidexr/signal.hpp"

#include "evidexr/corpus.hpp"
#include "evidexr/io.hpp"

#include <fftw3.h>

#include <cmath>
#include <complex>
#include <memory>
#include <numbers>

namespace evidexr::signal {

namespace {

void check_finite(const Recording& rec, const char* what) {
  for (float v : rec.data) {
    if (!std::isfinite(v)) throw Error(std::string(what) + ": non-finite input sample");
  }
}

double sinc(double x) {
  if (x == 0.0) return 1.0;
  const double px = std::numbers::pi * x;
  return std::sin(px) / px;
}

// Smallest 2^a 3^b 5^c >= n.
std::size_t fast_fft_size(std::size_t n) {
  std::size_t best = 1;
  while (best < n) best <<= 1;
  for (std::size_t p5 = 1; p5 < best; p5 *= 5) {
    for (std::size_t p35 = p5; p35 < best; p35 *= 3) {
      std::size_t v = p35;
      while (v < n) v <<= 1;
      best = std::min(best, v);
    }
  }
  return best;
}

struct FftwFree {
  void operator()(void* p) const { fftw_free(p); }
};
struct PlanFree {
  void operator()(fftw_plan_s* p) const { fftw_destroy_plan(p); }
};
using PlanPtr = std::unique_ptr<fftw_plan_s, PlanFree>;

// FFT-based "same" correlation of each channel with a symmetric kernel,
// with edge-value padding of (taps-1)/2 on both sides.
void filter_channels(Recording& rec, const std::vector<double>& taps) {
  const std::size_t T = rec.samples();
  const std::size_t half = (taps.size() - 1) / 2;
  const std::size_t padded = T + 2 * half;
  const std::size_t n = fast_fft_size(padded + taps.size() - 1);
  const std::size_t nc = n / 2 + 1;

  std::unique_ptr<double, FftwFree> time(static_cast<double*>(fftw_malloc(sizeof(double) * n)));
  std::unique_ptr<fftw_complex, FftwFree> kernel_f(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * nc)));
  std::unique_ptr<fftw_complex, FftwFree> sig_f(
      static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * nc)));
  // FFTW_ESTIMATE never times candidate plans, so the chosen algorithm (and
  // therefore the rounding) is the same on every run.
  PlanPtr fwd_k(fftw_plan_dft_r2c_1d(static_cast<int>(n), time.get(), kernel_f.get(), FFTW_ESTIMATE));
  PlanPtr fwd(fftw_plan_dft_r2c_1d(static_cast<int>(n), time.get(), sig_f.get(), FFTW_ESTIMATE));
  PlanPtr inv(fftw_plan_dft_c2r_1d(static_cast<int>(n), sig_f.get(), time.get(), FFTW_ESTIMATE));

  std::fill(time.get(), time.get() + n, 0.0);
  std::copy(taps.begin(), taps.end(), time.get());
  fftw_execute(fwd_k.get());

  for (std::size_t c = 0; c < rec.channels; ++c) {
    float* x = rec.channel(c);
    double* buf = time.get();
    std::fill(buf, buf + n, 0.0);
    for (std::size_t i = 0; i < half; ++i) buf[i] = x[0];
    for (std::size_t t = 0; t < T; ++t) buf[half + t] = x[t];
    for (std::size_t i = 0; i < half; ++i) buf[half + T + i] = x[T - 1];
    fftw_execute(fwd.get());
    for (std::size_t k = 0; k < nc; ++k) {
      const std::complex<double> a(sig_f.get()[k][0], sig_f.get()[k][1]);
      const std::complex<double> b(kernel_f.get()[k][0], kernel_f.get()[k][1]);
      const auto p = a * b;
      sig_f.get()[k][0] = p.real();
      sig_f.get()[k][1] = p.imag();
    }
    fftw_execute(inv.get());
    // Full linear convolution index j = t + 2*half aligns output t with input t.
    const double scale = 1.0 / static_cast<double>(n);
    for (std::size_t t = 0; t < T; ++t) x[t] = static_cast<float>(buf[t + 2 * half] * scale);
  }
}

}  // namespace

void SegmentationConfig::validate() const {
  if (!(window_s > 0.0)) throw Error("window_s must be > 0");
  if (!(stride_s > 0.0) || stride_s > window_s) throw Error("stride_s must be in (0, window_s]");
  if (!(min_overlap_s >= 0.0)) throw Error("min_overlap_s must be >= 0");
}

std::vector<double> design_bandpass(double fs, double lo, double hi) {
  if (!(fs > 0.0) || !(lo > 0.0) || !(lo < hi) || !(hi < fs / 2.0)) {
    throw Error("band edges must satisfy 0 < lo < hi < fs/2");
  }
  auto taps_n = static_cast<std::size_t>(std::llround(4.0 * fs / lo));
  if (taps_n % 2 == 0) ++taps_n;
  const double m = static_cast<double>(taps_n - 1) / 2.0;
  const double f_lo = lo / fs;
  const double f_hi = hi / fs;
  std::vector<double> h(taps_n);
  for (std::size_t i = 0; i < taps_n; ++i) {
    const double k = static_cast<double>(i) - m;
    const double ideal = 2.0 * f_hi * sinc(2.0 * f_hi * k) - 2.0 * f_lo * sinc(2.0 * f_lo * k);
    const double w = taps_n == 1 ? 1.0
                                 : 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                                          static_cast<double>(taps_n - 1));
    h[i] = ideal * w;
  }
  // Unit gain at the band centre.
  const double w0 = 2.0 * std::numbers::pi * (f_lo + f_hi) / 2.0;
  std::complex<double> resp = 0.0;
  for (std::size_t i = 0; i < taps_n; ++i) {
    resp += h[i] * std::polar(1.0, -w0 * (static_cast<double>(i) - m));
  }
  const double g = std::abs(resp);
  for (double& v : h) v /= g;
  return h;
}

Recording bandpass(const Recording& rec, double lo, double hi) {
  const auto taps = design_bandpass(rec.fs, lo, hi);
  check_finite(rec, "bandpass");
  Recording out = rec;
  if (out.samples() == 0) return out;
  filter_channels(out, taps);
  return out;
}

Recording resample(const Recording& rec, double fs_out) {
  if (!(fs_out > 0.0)) throw Error("resample: fs_out must be > 0");
  if (fs_out == rec.fs) return rec;
  check_finite(rec, "resample");
  const std::size_t T = rec.samples();
  const auto T_out = static_cast<std::size_t>(std::llround(static_cast<double>(T) * fs_out / rec.fs));
  Recording out;
  out.id = rec.id;
  out.subject_id = rec.subject_id;
  out.fs = fs_out;
  out.channels = rec.channels;
  out.data.resize(rec.channels * T_out);
  const double step = rec.fs / fs_out;
  for (std::size_t c = 0; c < rec.channels; ++c) {
    const float* x = rec.channel(c);
    float* y = out.data.data() + c * T_out;
    for (std::size_t j = 0; j < T_out; ++j) {
      const double pos = static_cast<double>(j) * step;
      const auto i0 = static_cast<std::size_t>(pos);
      if (i0 + 1 >= T) {
        y[j] = x[T - 1];
        continue;
      }
      const double frac = pos - static_cast<double>(i0);
      y[j] = static_cast<float>(static_cast<double>(x[i0]) * (1.0 - frac) +
                                static_cast<double>(x[i0 + 1]) * frac);
    }
  }
  return out;
}

Recording remove_artifacts(const Recording& rec) { return rec; }

Recording preprocess(const Recording& rec, double lo, double hi, double fs_out) {
  return resample(remove_artifacts(bandpass(rec, lo, hi)), fs_out);
}

std::vector<WindowSpan> plan_windows(std::size_t total_samples, double fs,
                                     const SegmentationConfig& cfg) {
  cfg.validate();
  if (!(fs > 0.0)) throw Error("sampling rate must be > 0");
  const auto W = static_cast<std::size_t>(std::llround(cfg.window_s * fs));
  const auto S = static_cast<std::size_t>(std::llround(cfg.stride_s * fs));
  if (W == 0 || S == 0) throw Error("window or stride shorter than one sample");
  if (total_samples < W) {
    throw Error("recording shorter than one window (" + std::to_string(total_samples) + " < " +
                std::to_string(W) + " samples)");
  }
  const std::size_t count = (total_samples - W) / S + 1;
  std::vector<WindowSpan> spans(count);
  for (std::size_t k = 0; k < count; ++k) {
    spans[k].start_sample = k * S;
    spans[k].start_s = static_cast<double>(k * S) / fs;
    spans[k].end_s = static_cast<double>(k * S + W) / fs;
  }
  return spans;
}

Segment extract(const Recording& rec, const WindowSpan& span, std::size_t window_samples,
                std::string id) {
  const std::size_t T = rec.samples();
  if (span.start_sample + window_samples > T) throw Error("window extends past the recording");
  Segment s;
  s.id = std::move(id);
  s.subject_id = rec.subject_id;
  s.start_s = span.start_s;
  s.channels = rec.channels;
  s.samples = window_samples;
  s.data.resize(rec.channels * window_samples);
  for (std::size_t c = 0; c < rec.channels; ++c) {
    const float* src = rec.channel(c) + span.start_sample;
    std::copy(src, src + window_samples, s.data.begin() + static_cast<std::ptrdiff_t>(c * window_samples));
  }
  return s;
}

std::vector<Segment> segment(const Recording& rec, const SegmentationConfig& cfg) {
  const auto spans = plan_windows(rec.samples(), rec.fs, cfg);
  const auto W = static_cast<std::size_t>(std::llround(cfg.window_s * rec.fs));
  std::vector<Segment> out;
  out.reserve(spans.size());
  for (const auto& sp : spans) {
    out.push_back(extract(rec, sp, W, rec.id + ":" + std::to_string(sp.start_sample)));
  }
  return out;
}

Label interval_label(double start_s, double end_s, std::span<const EventAnnotation> events,
                     double min_overlap_s) {
  for (const auto& ev : events) {
    if (overlap_s(start_s, end_s, ev.onset_s, ev.offset_s) > min_overlap_s) return 1;
  }
  return 0;
}

const EventAnnotation* dominant_event(double start_s, double end_s,
                                      std::span<const EventAnnotation> events,
                                      double min_overlap_s) {
  const EventAnnotation* best = nullptr;
  double best_ov = 0.0;
  for (const auto& ev : events) {
    const double ov = overlap_s(start_s, end_s, ev.onset_s, ev.offset_s);
    if (ov <= min_overlap_s) continue;
    if (best == nullptr || ov > best_ov || (ov == best_ov && ev.onset_s < best->onset_s)) {
      best = &ev;
      best_ov = ov;
    }
  }
  return best;
}

std::vector<Segment> label_segments(std::vector<Segment> segments,
                                    std::span<const EventAnnotation> events,
                                    const SegmentationConfig& cfg, double fs) {
  cfg.validate();
  for (const auto& ev : events) corpus::validate(ev);
  std::vector<EventAnnotation> mine;
  for (auto& s : segments) {
    mine.clear();
    for (const auto& ev : events) {
      if (ev.subject_id.empty() || ev.subject_id == s.subject_id) mine.push_back(ev);
    }
    s.label = interval_label(s.start_s, s.start_s + s.duration_s(fs), mine, cfg.min_overlap_s);
  }
  return segments;
}

std::vector<std::size_t> balanced_subsample_indices(std::span<const Label> labels,
                                                    std::size_t per_class, std::uint64_t seed) {
  std::vector<std::size_t> by_class[2];
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0 && labels[i] != 1) throw Error("balanced_subsample: label outside {0,1}");
    by_class[labels[i]].push_back(i);
  }
  Rng rng(seed);
  std::vector<std::size_t> picked;
  for (int c = 0; c < 2; ++c) {
    auto& pool = by_class[c];
    if (pool.size() < per_class) {
      throw Error("balanced_subsample: class " + std::to_string(c) + " has " +
                  std::to_string(pool.size()) + " members, need " + std::to_string(per_class));
    }
    // Partial Fisher-Yates: the first per_class slots become the sample.
    for (std::size_t i = 0; i < per_class; ++i) {
      std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
    }
    picked.insert(picked.end(), pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(per_class));
  }
  std::sort(picked.begin(), picked.end());
  return picked;
}

}  // namespace evidexr::signal
