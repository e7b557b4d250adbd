#include "evidexr/pipeline.hpp"

#include "evidexr/io.hpp"
#include "evidexr/random.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace evidexr::pipeline {

void SegmentOptions::validate() const {
  seg.validate();
  if (!(band_lo > 0.0 && band_lo < band_hi)) throw Error("segment: band must satisfy 0 < lo < hi");
  if (!(fs_out > 2.0 * band_hi)) throw Error("segment: fs_out must exceed twice the upper band edge");
}

std::vector<EventAnnotation> events_for(const Recording& rec, const std::vector<EventAnnotation>& events) {
  std::vector<EventAnnotation> out;
  for (const auto& ev : events) {
    const bool match = ev.recording_id.empty() ? (ev.subject_id.empty() || ev.subject_id == rec.subject_id)
                                               : ev.recording_id == rec.id;
    if (match) out.push_back(ev);
  }
  return out;
}

corpus::SegmentSet build_segment_set(const corpus::Dataset& ds, const SegmentOptions& opts) {
  opts.validate();
  if (ds.normal_report.empty()) throw Error("segment: dataset has no normal report");
  for (const auto& ev : ds.events) corpus::validate(ev);

  struct Planned {
    std::size_t rec = 0;
    signal::WindowSpan span;
    Label label = 0;
    std::string report;
  };
  std::vector<Recording> processed;
  std::vector<Planned> plan;
  std::size_t window_samples = 0;
  for (std::size_t ri = 0; ri < ds.recordings.size(); ++ri) {
    processed.push_back(signal::preprocess(ds.recordings[ri], opts.band_lo, opts.band_hi, opts.fs_out));
    const Recording& rec = processed.back();
    const auto mine = events_for(rec, ds.events);
    const auto W = static_cast<std::size_t>(std::llround(opts.seg.window_s * rec.fs));
    window_samples = W;
    for (const auto& span : signal::plan_windows(rec.samples(), rec.fs, opts.seg)) {
      Planned p{ri, span, 0, ds.normal_report};
      if (const EventAnnotation* ev = signal::dominant_event(span.start_s, span.end_s, mine, opts.seg.min_overlap_s)) {
        if (ev->report.empty()) {
          throw Error("segment: event at " + std::to_string(ev->onset_s) + " s on " + rec.id + " has no report");
        }
        p.label = 1;
        p.report = ev->report;
      }
      plan.push_back(std::move(p));
    }
  }

  std::vector<std::size_t> keep;
  if (opts.per_class > 0) {
    std::vector<Label> labels;
    labels.reserve(plan.size());
    for (const auto& p : plan) labels.push_back(p.label);
    keep = signal::balanced_subsample_indices(labels, opts.per_class, opts.seed);
  } else {
    keep.resize(plan.size());
    std::iota(keep.begin(), keep.end(), 0);
  }

  corpus::SegmentSet set;
  set.fs = opts.fs_out;
  set.seed = opts.seed;
  set.segments.reserve(keep.size());
  for (std::size_t i : keep) {
    const Planned& p = plan[i];
    const Recording& rec = processed[p.rec];
    Segment s = signal::extract(rec, p.span, window_samples, rec.id + ":" + std::to_string(p.span.start_sample));
    s.label = p.label;
    set.records.push_back(CaseRecord{s.id, s.id, std::nullopt, s.label, p.report});
    set.segments.push_back(std::move(s));
  }
  set.records.push_back(CaseRecord{kNormalTemplateId, "", std::nullopt, 0, ds.normal_report});
  return set;
}

align::TrainResult train_encoder(const corpus::SegmentSet& set, const align::EncoderConfig& enc,
                                 const align::TrainConfig& cfg, const align::LossLogger& log) {
  std::unordered_map<std::string, const CaseRecord*> by_segment;
  for (const auto& r : set.records) {
    if (!r.segment_id.empty()) by_segment.emplace(r.segment_id, &r);
  }
  std::vector<const Segment*> segs;
  std::vector<std::string> reports;
  for (const auto& s : set.segments) {
    auto it = by_segment.find(s.id);
    if (it == by_segment.end()) throw Error("train: segment " + s.id + " has no paired record");
    segs.push_back(&s);
    reports.push_back(it->second->report);
  }
  return align::train(segs, reports, enc, cfg, log);
}

std::vector<CaseRecord> embed_records(const align::EncoderParams& p, const corpus::SegmentSet& set) {
  std::unordered_map<std::string, const Segment*> by_id;
  for (const auto& s : set.segments) by_id.emplace(s.id, &s);
  std::vector<CaseRecord> out = set.records;
  for (auto& r : out) {
    if (r.segment_id.empty()) continue;
    auto it = by_id.find(r.segment_id);
    if (it == by_id.end()) throw Error("embed: record " + r.case_id + " references unknown segment " + r.segment_id);
    r.embedding = align::encode_eeg(p, *it->second);
  }
  return out;
}

std::vector<QueryItem> to_queries(const std::vector<CaseRecord>& embedded) {
  std::vector<QueryItem> out;
  for (const auto& r : embedded) {
    if (r.embedding) out.push_back(QueryItem{r.case_id, r.label, *r.embedding, r.report});
  }
  return out;
}

const char* to_string(EvidenceMode m) {
  switch (m) {
    case EvidenceMode::semantic: return "semantic";
    case EvidenceMode::random_A: return "random_A";
    case EvidenceMode::random_B: return "random_B";
    case EvidenceMode::no_text: return "no_text";
  }
  return "semantic";
}

EvidenceMode parse_mode(const std::string& s) {
  for (auto m : {EvidenceMode::semantic, EvidenceMode::random_A, EvidenceMode::random_B, EvidenceMode::no_text}) {
    if (s == to_string(m)) return m;
  }
  throw Error("unknown harness mode '" + s + "'");
}

namespace {

// K distinct draws from pool (all of it when smaller), partial Fisher-Yates.
std::vector<const CaseRecord*> draw(std::vector<const CaseRecord*> pool, std::size_t k, Rng& rng) {
  const std::size_t n = std::min(k, pool.size());
  for (std::size_t i = 0; i < n; ++i) std::swap(pool[i], pool[i + rng.index(pool.size() - i)]);
  pool.resize(n);
  return pool;
}

}  // namespace

HarnessRun run_harness(const HarnessInputs& semantic, const HarnessInputs* supervised, EvidenceMode mode,
                       const HarnessOptions& opts) {
  if (mode == EvidenceMode::no_text && !supervised) throw Error("harness: no_text mode needs a supervised encoder");
  const HarnessInputs& in = mode == EvidenceMode::no_text ? *supervised : semantic;
  if (in.test.empty()) throw Error("harness: no test queries");

  std::vector<CaseRecord> indexed;
  for (const auto& r : in.cases) {
    if (r.case_id != kNormalTemplateId) indexed.push_back(r);
  }
  const index::VectorIndex idx = index::build(indexed);
  const report::CaseStore store(in.cases);

  HarnessRun run;
  run.mode = mode;
  if (opts.detector) {
    run.detector = *opts.detector;
  } else {
    std::vector<detect::ValidationQuery> val;
    for (const auto& q : in.validation) val.push_back(detect::ValidationQuery{q.id, q.embedding, q.label});
    run.detector = detect::tune(val, idx, opts.k_grid, opts.gamma_grid, detect::TuneOptions{true});
  }
  std::size_t depth = std::max({opts.depth, run.detector.k, opts.generate.references});
  for (std::size_t k : opts.ks) depth = std::max(depth, k);
  if (depth > idx.size()) throw Error("harness: ranking depth " + std::to_string(depth) + " exceeds the index size");

  std::vector<const CaseRecord*> pools[3];  // all, label 0, label 1
  for (const auto& r : store.records()) {
    if (r.case_id == kNormalTemplateId) continue;
    pools[0].push_back(&r);
    pools[1 + r.label].push_back(&r);
  }
  Rng rng(opts.seed);

  for (const auto& q : in.test) {
    auto nl = index::search_excluding(idx, q.embedding, depth, q.id);
    nl.query_id = q.id;
    report::GeneratedReport gen;
    if (mode == EvidenceMode::random_A || mode == EvidenceMode::random_B) {
      const double e = detect::evidence_score(nl, run.detector.k);
      const Label pred = detect::classify(e, run.detector);
      const auto& pool = mode == EvidenceMode::random_A ? pools[0] : pools[1 + pred];
      if (pool.empty()) throw Error("harness: no cases to sample references from");
      gen = report::generate_with_references(q.id, pred, draw(pool, opts.generate.references, rng), opts.generate);
      gen.evidence_score = e;
    } else {
      gen = report::generate_from_evidence(nl, store, run.detector, opts.generate);
    }
    eval::QueryOutcome o;
    o.query_id = q.id;
    o.label = q.label;
    o.predicted = gen.predicted;
    for (const auto& h : nl.hits) o.neighbor_labels.push_back(h.label);
    o.generated = gen.text;
    o.gold = q.gold;
    run.outcomes.push_back(std::move(o));
    run.reports.push_back(std::move(gen));
  }
  run.metrics = eval::evaluate(run.outcomes, opts.depth, opts.ks);
  run.metrics.mode = to_string(mode);
  run.metrics.seed = opts.seed;
  return run;
}

synth::SynthConfig bench_synth() {
  synth::SynthConfig c;
  c.n_subjects = synth::locations().size();
  c.noise_model = synth::NoiseModel::white;
  c.ied_rate = 12.0;
  return c;
}

align::EncoderConfig bench_encoder() {
  align::EncoderConfig c;
  c.filters = 16;
  c.kernel = 35;
  c.pool = 25;
  return c;
}

align::TrainConfig bench_training() {
  align::TrainConfig c;
  c.learning_rate = 3e-3;
  return c;
}

BenchResult run_bench(const BenchConfig& cfg, const StageLogger& log) {
  using clock = std::chrono::steady_clock;
  auto say = [&](const std::string& m) {
    if (log) log(m);
  };
  BenchResult res;
  auto timed = [&](const std::string& stage, auto&& fn) {
    const auto t0 = clock::now();
    fn();
    res.seconds[stage] = std::chrono::duration<double>(clock::now() - t0).count();
    say(stage + " done in " + std::to_string(res.seconds[stage]) + " s");
  };

  auto make_split = [&](std::uint64_t seed, double minutes, std::size_t per_class) {
    synth::SynthConfig sc = cfg.synth;
    sc.seed = seed;
    sc.minutes = minutes;
    const auto corpus = synth::gen_corpus(sc);
    SegmentOptions so = cfg.segmentation;
    so.per_class = per_class;
    so.seed = seed;
    return build_segment_set(corpus.dataset, so);
  };

  corpus::SegmentSet val_set, test_set;
  timed("synth+segment", [&] {
    res.train_set = make_split(cfg.seed, cfg.train_minutes, cfg.train_per_class);
    val_set = make_split(cfg.seed + 1, cfg.validation_minutes, cfg.validation_per_class);
    test_set = make_split(cfg.seed + 2, cfg.test_minutes, cfg.test_per_class);
  });

  auto embed_all = [&](const align::EncoderParams& p) {
    HarnessInputs in;
    in.cases = embed_records(p, res.train_set);
    in.validation = to_queries(embed_records(p, val_set));
    in.test = to_queries(embed_records(p, test_set));
    return in;
  };

  align::TrainConfig tc = cfg.training;
  tc.objective = align::Objective::contrastive;
  timed("train", [&] { res.semantic_training = train_encoder(res.train_set, cfg.encoder, tc); });
  HarnessInputs semantic;
  timed("embed", [&] { semantic = embed_all(res.semantic_training.params); });

  const bool need_supervised =
      std::find(cfg.modes.begin(), cfg.modes.end(), EvidenceMode::no_text) != cfg.modes.end();
  HarnessInputs supervised;
  if (need_supervised) {
    align::TrainConfig sc = cfg.training;
    sc.objective = align::Objective::supervised;
    timed("train_supervised", [&] { res.supervised_training = train_encoder(res.train_set, cfg.encoder, sc); });
    timed("embed_supervised", [&] { supervised = embed_all(res.supervised_training->params); });
  }

  for (EvidenceMode m : cfg.modes) {
    HarnessOptions ho = cfg.harness;
    ho.seed = cfg.seed;
    timed(std::string("harness_") + to_string(m), [&] {
      res.runs.emplace(m, run_harness(semantic, need_supervised ? &supervised : nullptr, m, ho));
    });
  }
  return res;
}

}  // namespace evidexr::pipeline
