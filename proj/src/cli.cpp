#include "evidexr/cli.hpp"

#include "evidexr/align.hpp"
#include "evidexr/corpus.hpp"
#include "evidexr/detect.hpp"
#include "evidexr/eval.hpp"
#include "evidexr/index.hpp"
#include "evidexr/io.hpp"
#include "evidexr/pipeline.hpp"
#include "evidexr/report.hpp"
#include "evidexr/synth.hpp"
#include "json_util.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <ostream>
#include <sstream>
#include <unordered_map>

namespace evidexr::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

enum class Level { error = 0, info = 1, debug = 2 };

struct Ctx {
  std::ostream& out;
  std::ostream& err;
  Level level = Level::info;

  void info(const std::string& m) const {
    if (level >= Level::info) err << "info: " << m << "\n";
  }
  void debug(const std::string& m) const {
    if (level >= Level::debug) err << "debug: " << m << "\n";
  }
};

void require_exists(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw Error(std::string(what) + " not found: " + p.string());
}

std::string jsonl(const std::vector<json>& rows) {
  std::string s;
  for (const auto& r : rows) s += r.dump() + "\n";
  return s;
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::istringstream in(io::read_text(path));
  std::vector<json> rows;
  std::size_t n = 0;
  for (std::string line; std::getline(in, line);) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      rows.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return rows;
}

std::pair<double, double> parse_band(const std::string& s) {
  const auto colon = s.find(':');
  if (colon == std::string::npos) throw Error("--band expects lo:hi, got '" + s + "'");
  try {
    return {std::stod(s.substr(0, colon)), std::stod(s.substr(colon + 1))};
  } catch (const std::exception&) {
    throw Error("--band expects numbers, got '" + s + "'");
  }
}

align::Objective parse_objective(const std::string& s) {
  if (s == "contrastive") return align::Objective::contrastive;
  if (s == "supervised") return align::Objective::supervised;
  throw Error("unknown objective '" + s + "'");
}

// Query or case records: either a JSONL corpus already carrying embeddings, or
// a segment set embedded on the fly with an encoder.
struct RecordSource {
  std::string corpus;
  std::string segments;
  std::string params;

  void add(CLI::App* app, const std::string& corpus_flag, const std::string& what) {
    app->add_option(corpus_flag, corpus, what + " as JSONL with embeddings");
    app->add_option("--segments", segments, what + " as a segment-set directory (needs --params)");
    app->add_option("--params", params, "encoder params used to embed --segments");
  }

  std::vector<CaseRecord> load(const Ctx& ctx, bool require_embeddings) const {
    if (!segments.empty()) {
      if (params.empty()) throw Error("--segments needs --params");
      require_exists(segments, "segment set");
      require_exists(params, "params file");
      const auto set = corpus::load_segment_set(segments);
      const auto p = align::load_params(params);
      ctx.info("embedding " + std::to_string(set.segments.size()) + " segments");
      return pipeline::embed_records(p, set);
    }
    if (corpus.empty()) throw Error("no input records given");
    require_exists(corpus, "corpus");
    auto records = corpus::load_corpus(corpus);
    if (require_embeddings) {
      for (const auto& r : records) {
        if (!r.embedding && r.case_id != kNormalTemplateId) {
          throw Error("case " + r.case_id + " has no embedding; pass --segments and --params");
        }
      }
    }
    return records;
  }
};

std::vector<CaseRecord> without_normal(std::vector<CaseRecord> rs) {
  std::erase_if(rs, [](const CaseRecord& r) { return r.case_id == kNormalTemplateId; });
  return rs;
}

detect::DetectorConfig read_detector(const fs::path& path) {
  const json j = json::parse(io::read_text(path));
  detect::DetectorConfig c{j.at("k").get<std::size_t>(), j.at("gamma").get<double>()};
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  synth::SynthConfig cfg;
  std::string noise = "ar1";
  std::string focus = "per_recording";
  std::string out;
};

void run_synth(const Ctx& ctx, SynthArgs a) {
  a.cfg.noise_model = a.noise == "white" ? synth::NoiseModel::white
                      : a.noise == "ar1" ? synth::NoiseModel::ar1
                                         : throw Error("unknown noise model '" + a.noise + "'");
  a.cfg.focus = a.focus == "per_recording" ? synth::FocusModel::per_recording
                : a.focus == "per_event"   ? synth::FocusModel::per_event
                                           : throw Error("unknown focus model '" + a.focus + "'");
  const auto sc = synth::gen_corpus(a.cfg);
  corpus::save_dataset(sc.dataset, a.out);
  corpus::save_corpus(sc.records, fs::path(a.out) / "corpus.jsonl");
  ctx.info("wrote " + std::to_string(sc.dataset.recordings.size()) + " recordings, " +
           std::to_string(sc.dataset.events.size()) + " events to " + a.out);
}

struct SegmentArgs {
  std::string in, out, band = "0.5:50";
  pipeline::SegmentOptions opts;
};

void run_segment(const Ctx& ctx, SegmentArgs a) {
  require_exists(a.in, "dataset directory");
  std::tie(a.opts.band_lo, a.opts.band_hi) = parse_band(a.band);
  const auto ds = corpus::load_dataset(a.in);
  const auto set = pipeline::build_segment_set(ds, a.opts);
  corpus::save_segment_set(set, a.out);
  std::size_t pos = 0;
  for (const auto& s : set.segments) pos += s.label == 1;
  ctx.info("wrote " + std::to_string(set.segments.size()) + " segments (" + std::to_string(pos) + " positive) to " + a.out);
}

struct TrainArgs {
  std::string segments, out, objective = "contrastive", loss_log;
  align::TrainConfig cfg;
  std::size_t dim = 64;
};

void run_train(const Ctx& ctx, TrainArgs a) {
  require_exists(a.segments, "segment set");
  a.cfg.objective = parse_objective(a.objective);
  const auto set = corpus::load_segment_set(a.segments);
  align::EncoderConfig enc;
  enc.dim = a.dim;
  std::vector<json> rows;
  auto logger = [&](std::size_t epoch, std::size_t batch, double loss) {
    rows.push_back({{"epoch", epoch}, {"batch", batch}, {"loss", loss}});
    ctx.debug("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch) + " loss " + std::to_string(loss));
  };
  const auto res = pipeline::train_encoder(set, enc, a.cfg, logger);
  align::save_params(res.params, a.out);
  if (!a.loss_log.empty()) io::write_atomic(a.loss_log, jsonl(rows));
  ctx.info("trained on " + std::to_string(res.train_pairs) + " pairs; final batch loss " +
           std::to_string(res.batch_losses.empty() ? 0.0 : res.batch_losses.back()));
}

struct IndexBuildArgs {
  RecordSource src;
  std::string out;
  std::size_t nlist = 0;
  std::uint64_t seed = 0;
};

void run_index_build(const Ctx& ctx, const IndexBuildArgs& a) {
  const auto records = without_normal(a.src.load(ctx, true));
  const auto idx = a.nlist > 0 ? index::build_partitioned(records, a.nlist, a.seed) : index::build(records);
  index::save(idx, a.out);
  ctx.info("indexed " + std::to_string(idx.size()) + " cases of dimension " + std::to_string(idx.dim()));
}

struct IndexQueryArgs {
  RecordSource src;
  std::string index, out;
  std::size_t k = 3, nprobe = 0;
  bool exclude_self = false;
};

void run_index_query(const Ctx& ctx, const IndexQueryArgs& a) {
  require_exists(a.index, "index");
  const auto idx = index::load(a.index);
  std::vector<json> rows;
  for (const auto& q : without_normal(a.src.load(ctx, true))) {
    index::NeighborList nl;
    if (a.nprobe > 0) {
      nl = index::search_partitioned(idx, *q.embedding, a.k, a.nprobe);
    } else {
      nl = a.exclude_self ? index::search_excluding(idx, *q.embedding, a.k, q.case_id) : index::search(idx, *q.embedding, a.k);
    }
    rows.push_back({{"query_id", q.case_id}, {"hits", jsonutil::hits_to_json(nl)}});
  }
  if (a.out.empty()) {
    ctx.out << jsonl(rows);
  } else {
    io::write_atomic(a.out, jsonl(rows));
  }
}

struct DetectArgs {
  RecordSource src;
  std::string index, out, config;
  std::size_t k = 3, depth = 10;
  double gamma = 0.5;
  bool exclude_self = false;
};

void run_detect(const Ctx& ctx, const DetectArgs& a, bool k_set, bool gamma_set) {
  require_exists(a.index, "index");
  const auto idx = index::load(a.index);
  detect::DetectorConfig cfg{a.k, a.gamma};
  if (!a.config.empty()) {
    require_exists(a.config, "detector config");
    cfg = read_detector(a.config);
    if (k_set) cfg.k = a.k;  // flags win over the file
    if (gamma_set) cfg.gamma = a.gamma;
  }
  cfg.validate();
  const std::size_t depth = std::max(a.depth, cfg.k);
  std::vector<json> rows;
  for (const auto& q : without_normal(a.src.load(ctx, true))) {
    auto nl = a.exclude_self ? index::search_excluding(idx, *q.embedding, depth, q.case_id)
                             : index::search(idx, *q.embedding, depth);
    const double e = detect::evidence_score(nl, cfg.k);
    rows.push_back({{"query_id", q.case_id},
                    {"label", q.label},
                    {"predicted", detect::classify(e, cfg)},
                    {"evidence", e},
                    {"k", cfg.k},
                    {"gamma", cfg.gamma},
                    {"neighbors", jsonutil::hits_to_json(nl)}});
  }
  io::write_atomic(a.out, jsonl(rows));
  ctx.info("wrote " + std::to_string(rows.size()) + " predictions (K=" + std::to_string(cfg.k) +
           ", gamma=" + std::to_string(cfg.gamma) + ")");
}

struct TuneArgs {
  RecordSource src;
  std::string index, out;
  std::vector<std::size_t> k_grid = detect::default_k_grid();
  std::vector<double> gamma_grid = detect::default_gamma_grid();
  bool keep_self = false;
};

void run_tune(const Ctx& ctx, const TuneArgs& a) {
  require_exists(a.index, "index");
  const auto idx = index::load(a.index);
  std::vector<detect::ValidationQuery> val;
  for (const auto& r : without_normal(a.src.load(ctx, true))) val.push_back({r.case_id, *r.embedding, r.label});
  const auto cfg = detect::tune(val, idx, a.k_grid, a.gamma_grid, detect::TuneOptions{!a.keep_self});
  const json j{{"k", cfg.k}, {"gamma", cfg.gamma}, {"seed", idx.seed()}, {"validation_queries", val.size()}};
  const std::string text = j.dump(2) + "\n";
  if (a.out.empty()) {
    ctx.out << text;
  } else {
    io::write_atomic(a.out, text);
  }
  ctx.info("tuned K=" + std::to_string(cfg.k) + " gamma=" + std::to_string(cfg.gamma));
}

struct ReportArgs {
  std::string preds, corpus, out, mode = "local", endpoint, template_path, model = "selector";
  std::size_t k = 3, max_in_flight = 4;
  double timeout = 30.0;
};

void run_report(const Ctx& ctx, const ReportArgs& a) {
  require_exists(a.preds, "predictions");
  require_exists(a.corpus, "corpus");
  const report::CaseStore store(corpus::load_corpus(a.corpus));
  report::PromptTemplate tmpl = report::PromptTemplate::defaults();
  if (!a.template_path.empty()) {
    require_exists(a.template_path, "template");
    tmpl = report::load_template(a.template_path);
  }
  report::GenerateOptions opts;
  opts.prompt_template = &tmpl;
  opts.references = a.k;
  std::unique_ptr<report::RemoteClient> client;
  if (a.mode == "remote") {
    if (a.endpoint.empty()) throw Error("--mode remote needs --endpoint");
    report::RemoteConfig rc;
    rc.endpoint = a.endpoint;
    rc.timeout_s = a.timeout;
    rc.model = a.model;
    rc.max_in_flight = a.max_in_flight;
    if (const char* key = std::getenv(report::kApiKeyEnv)) rc.api_key = key;
    client = std::make_unique<report::RemoteClient>(rc);
    opts.mode = report::Mode::remote;
    opts.client = client.get();
  } else if (a.mode != "local") {
    throw Error("unknown report mode '" + a.mode + "'");
  }

  std::vector<report::GeneratedReport> out;
  for (const auto& row : read_jsonl(a.preds)) {
    const std::string qid = row.at("query_id").get<std::string>();
    const auto nl = jsonutil::hits_from_json(row.at("neighbors"), qid);
    const detect::DetectorConfig cfg{row.at("k").get<std::size_t>(), row.at("gamma").get<double>()};
    out.push_back(report::generate_from_evidence(nl, store, cfg, opts));
  }
  report::save_reports(out, a.out);
  ctx.info("wrote " + std::to_string(out.size()) + " reports to " + a.out);
  if (client) {
    const auto& c = client->counters();
    ctx.err << "remote: requests=" << c.requests << " accepted=" << c.accepted << " violations=" << c.violations
            << " failures=" << c.failures << "\n";
  }
}

struct EvaluateArgs {
  std::string preds, reports, gold, out;
  std::size_t depth = 10;
  std::vector<std::size_t> ks = {1, 2, 3};
  std::uint64_t seed = 0;
};

void run_evaluate(const Ctx& ctx, const EvaluateArgs& a) {
  require_exists(a.preds, "predictions");
  require_exists(a.reports, "reports");
  require_exists(a.gold, "gold corpus");
  const report::CaseStore gold(corpus::load_corpus(a.gold));
  std::unordered_map<std::string, report::GeneratedReport> gens;
  for (auto& r : report::load_reports(a.reports)) gens.emplace(r.query_id, std::move(r));

  std::vector<eval::QueryOutcome> outcomes;
  for (const auto& row : read_jsonl(a.preds)) {
    eval::QueryOutcome o;
    o.query_id = row.at("query_id").get<std::string>();
    const CaseRecord& g = gold.at(o.query_id);
    o.label = g.label;
    o.gold = g.report;
    auto it = gens.find(o.query_id);
    if (it == gens.end()) throw Error("no generated report for query " + o.query_id);
    o.predicted = it->second.predicted;
    o.generated = it->second.text;
    for (const auto& h : row.at("neighbors")) o.neighbor_labels.push_back(h.at("label").get<Label>());
    outcomes.push_back(std::move(o));
  }
  auto bundle = eval::evaluate(outcomes, a.depth, a.ks);
  bundle.seed = a.seed;
  const std::string text = eval::to_json(bundle);
  if (a.out.empty()) {
    ctx.out << text;
  } else {
    io::write_atomic(a.out, text);
    ctx.info("wrote metrics to " + a.out);
  }
}

struct BenchArgs {
  pipeline::BenchConfig cfg;
  std::string out, modes = "semantic,random_A,random_B,no_text";
};

void run_bench(const Ctx& ctx, BenchArgs a) {
  a.cfg.modes.clear();
  std::stringstream ss(a.modes);
  for (std::string m; std::getline(ss, m, ',');) a.cfg.modes.push_back(pipeline::parse_mode(m));
  if (a.cfg.modes.empty()) throw Error("--modes is empty");
  a.cfg.harness.seed = a.cfg.seed;
  const auto res = pipeline::run_bench(a.cfg, [&](const std::string& m) { ctx.info(m); });
  fs::create_directories(a.out);
  json summary = json::object();
  for (const auto& [mode, run] : res.runs) {
    const std::string name = pipeline::to_string(mode);
    io::write_atomic(fs::path(a.out) / ("metrics_" + name + ".json"), eval::to_json(run.metrics));
    report::save_reports(run.reports, fs::path(a.out) / ("reports_" + name + ".jsonl"));
    summary[name] = {{"BA", run.metrics.balanced_accuracy},
                     {"MAP", run.metrics.map},
                     {"BLEU", run.metrics.bleu},
                     {"k", run.detector.k},
                     {"gamma", run.detector.gamma}};
  }
  summary["seed"] = a.cfg.seed;
  summary["seconds"] = res.seconds;
  io::write_atomic(fs::path(a.out) / "summary.json", summary.dump(2) + "\n");
  ctx.out << summary.dump(2) << "\n";
}

}  // namespace

int dispatch(const std::vector<std::string>& argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Retrieval-augmented IED detection and report generation", "evidexr"};
  app.require_subcommand(1);
  app.set_config("--config", "", "key=value config file with one [section] per subcommand; flags win");
  std::string level = "info";
  app.add_option("--log-level", level, "error | info | debug")->check(CLI::IsMember({"error", "info", "debug"}));

  SynthArgs synth_a;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--minutes", synth_a.cfg.minutes, "minutes per recording")->capture_default_str();
  synth->add_option("--ied-rate", synth_a.cfg.ied_rate, "events per minute")->capture_default_str();
  synth->add_option("--seed", synth_a.cfg.seed, "generator seed")->capture_default_str();
  synth->add_option("--subjects", synth_a.cfg.n_subjects, "number of subjects")->capture_default_str();
  synth->add_option("--recordings", synth_a.cfg.n_recordings, "recordings per subject")->capture_default_str();
  synth->add_option("--fs", synth_a.cfg.fs, "sampling rate (Hz)")->capture_default_str();
  synth->add_option("--spike-amp", synth_a.cfg.spike_amp, "event peak amplitude (uV)")->capture_default_str();
  synth->add_option("--noise-rms", synth_a.cfg.noise_rms, "background RMS (uV)")->capture_default_str();
  synth->add_option("--noise", synth_a.noise, "white | ar1")->capture_default_str();
  synth->add_option("--focus", synth_a.focus, "per_recording | per_event")->capture_default_str();
  synth->add_option("--out", synth_a.out, "output directory")->default_val("synth");

  SegmentArgs seg_a;
  auto* segment = app.add_subcommand("segment", "preprocess, window and label a dataset");
  segment->add_option("--in", seg_a.in, "dataset directory")->required();
  segment->add_option("--out", seg_a.out, "segment-set directory")->required();
  segment->add_option("--window", seg_a.opts.seg.window_s, "window length (s)")->capture_default_str();
  segment->add_option("--stride", seg_a.opts.seg.stride_s, "window stride (s)")->capture_default_str();
  segment->add_option("--min-overlap", seg_a.opts.seg.min_overlap_s, "event overlap needed for a positive (s)")
      ->capture_default_str();
  segment->add_option("--band", seg_a.band, "band-pass edges lo:hi (Hz)")->capture_default_str();
  segment->add_option("--fs", seg_a.opts.fs_out, "output sampling rate (Hz)")->capture_default_str();
  segment->add_option("--per-class", seg_a.opts.per_class, "balanced subsample size per class (0 keeps all)")
      ->capture_default_str();
  segment->add_option("--seed", seg_a.opts.seed, "subsampling seed")->capture_default_str();

  TrainArgs train_a;
  auto* train = app.add_subcommand("train", "train the dual encoder on a segment set");
  train->add_option("--segments", train_a.segments, "segment-set directory")->required();
  train->add_option("--out", train_a.out, "params file")->required();
  train->add_option("--epochs", train_a.cfg.epochs, "epochs")->capture_default_str();
  train->add_option("--batch", train_a.cfg.batch_size, "batch size")->capture_default_str();
  train->add_option("--lr", train_a.cfg.learning_rate, "AdamW learning rate")->capture_default_str();
  train->add_option("--weight-decay", train_a.cfg.weight_decay, "AdamW decoupled weight decay")->capture_default_str();
  train->add_option("--dim", train_a.dim, "embedding dimension")->capture_default_str();
  train->add_option("--seed", train_a.cfg.seed, "init and shuffling seed")->capture_default_str();
  train->add_option("--val-fraction", train_a.cfg.validation_fraction, "held-out fraction")->capture_default_str();
  train->add_option("--objective", train_a.objective, "contrastive | supervised")->capture_default_str();
  train->add_option("--loss-log", train_a.loss_log, "write per-batch losses as JSONL");

  auto* index_cmd = app.add_subcommand("index", "build or query a vector index");
  index_cmd->require_subcommand(1);
  IndexBuildArgs ib_a;
  auto* ib = index_cmd->add_subcommand("build", "build an index from embedded cases");
  ib_a.src.add(ib, "--in", "cases");
  ib->add_option("--out", ib_a.out, "index file")->required();
  ib->add_option("--nlist", ib_a.nlist, "k-means partitions (0 = flat)")->capture_default_str();
  ib->add_option("--seed", ib_a.seed, "k-means seed")->capture_default_str();
  IndexQueryArgs iq_a;
  auto* iq = index_cmd->add_subcommand("query", "top-K search");
  iq_a.src.add(iq, "--queries", "queries");
  iq->add_option("--index", iq_a.index, "index file")->required();
  iq->add_option("--k", iq_a.k, "neighbors per query")->capture_default_str();
  iq->add_option("--nprobe", iq_a.nprobe, "partitions to probe (0 = exact flat search)")->capture_default_str();
  iq->add_flag("--exclude-self", iq_a.exclude_self, "skip hits with the query's own id");
  iq->add_option("--out", iq_a.out, "output JSONL (default stdout)");

  DetectArgs det_a;
  auto* det = app.add_subcommand("detect", "evidence-vote detection");
  det_a.src.add(det, "--queries", "queries");
  det->add_option("--index", det_a.index, "index file");
  auto* k_opt = det->add_option("--k", det_a.k, "neighbors voting")->capture_default_str();
  auto* g_opt = det->add_option("--gamma", det_a.gamma, "voting threshold")->capture_default_str();
  det->add_option("--config", det_a.config, "detector JSON written by 'detect tune'");
  det->add_option("--depth", det_a.depth, "neighbors kept per query for ranking metrics")->capture_default_str();
  det->add_flag("--exclude-self", det_a.exclude_self, "skip hits with the query's own id");
  det->add_option("--out", det_a.out, "predictions JSONL")->default_val("preds.jsonl");
  TuneArgs tune_a;
  auto* tune = det->add_subcommand("tune", "grid-search K and gamma on a validation set");
  tune_a.src.add(tune, "--val", "validation cases");
  tune->add_option("--index", tune_a.index, "index file")->required();
  tune->add_option("--k-grid", tune_a.k_grid, "K values")->delimiter(',');
  tune->add_option("--gamma-grid", tune_a.gamma_grid, "gamma values")->delimiter(',');
  tune->add_flag("--keep-self", tune_a.keep_self, "do not drop hits with the query's own id");
  tune->add_option("--out", tune_a.out, "detector JSON (default stdout)");

  ReportArgs rep_a;
  auto* rep = app.add_subcommand("report", "reference-guided report generation");
  rep->add_option("--preds", rep_a.preds, "predictions JSONL from 'detect'")->required();
  rep->add_option("--corpus", rep_a.corpus, "case corpus with reports and the normal template")->required();
  rep->add_option("--out", rep_a.out, "generated reports JSONL")->default_val("gen.jsonl");
  rep->add_option("--mode", rep_a.mode, "local | remote")->capture_default_str();
  rep->add_option("--endpoint", rep_a.endpoint, "chat-completion URL for remote mode");
  rep->add_option("--model", rep_a.model, "model name sent to the endpoint")->capture_default_str();
  rep->add_option("--timeout", rep_a.timeout, "remote timeout (s)")->capture_default_str();
  rep->add_option("--max-in-flight", rep_a.max_in_flight, "concurrent remote requests")->capture_default_str();
  rep->add_option("--k", rep_a.k, "references injected into the prompt")->capture_default_str();
  rep->add_option("--template", rep_a.template_path, "prompt template file");

  EvaluateArgs ev_a;
  auto* ev = app.add_subcommand("evaluate", "compute the metric bundle");
  ev->add_option("--preds", ev_a.preds, "predictions JSONL")->required();
  ev->add_option("--reports", ev_a.reports, "generated reports JSONL")->required();
  ev->add_option("--gold", ev_a.gold, "query corpus with gold labels and reports")->required();
  ev->add_option("--depth", ev_a.depth, "MAP/MRR depth")->capture_default_str();
  ev->add_option("--k", ev_a.ks, "P@K / HR@K cutoffs")->delimiter(',');
  ev->add_option("--seed", ev_a.seed, "seed recorded in the bundle")->capture_default_str();
  ev->add_option("--out", ev_a.out, "metrics JSON (default stdout)");

  BenchArgs bench_a;
  auto* bench = app.add_subcommand("bench", "synthetic end-to-end benchmark with baselines");
  bench->add_option("--seed", bench_a.cfg.seed, "base seed")->capture_default_str();
  bench->add_option("--epochs", bench_a.cfg.training.epochs, "training epochs")->capture_default_str();
  bench->add_option("--lr", bench_a.cfg.training.learning_rate, "learning rate")->capture_default_str();
  bench->add_option("--batch", bench_a.cfg.training.batch_size, "batch size")->capture_default_str();
  bench->add_option("--train-minutes", bench_a.cfg.train_minutes, "training minutes per recording")->capture_default_str();
  bench->add_option("--val-minutes", bench_a.cfg.validation_minutes, "validation minutes per recording")->capture_default_str();
  bench->add_option("--test-minutes", bench_a.cfg.test_minutes, "test minutes per recording")->capture_default_str();
  bench->add_option("--train-per-class", bench_a.cfg.train_per_class, "train windows per class")->capture_default_str();
  bench->add_option("--val-per-class", bench_a.cfg.validation_per_class, "validation windows per class")->capture_default_str();
  bench->add_option("--test-per-class", bench_a.cfg.test_per_class, "test windows per class")->capture_default_str();
  bench->add_option("--ied-rate", bench_a.cfg.synth.ied_rate, "events per minute")->capture_default_str();
  bench->add_option("--spike-amp", bench_a.cfg.synth.spike_amp, "event amplitude (uV)")->capture_default_str();
  bench->add_option("--noise-rms", bench_a.cfg.synth.noise_rms, "background RMS (uV)")->capture_default_str();
  bench->add_option("--modes", bench_a.modes, "comma-separated harness modes")->capture_default_str();
  bench->add_option("--out", bench_a.out, "output directory")->default_val("bench");

  for (std::size_t i = 1; i < argv.size(); ++i) {
    if (argv[i].empty() || argv[i][0] == '-') {
      if (argv[i] == "--config" || argv[i] == "--log-level") ++i;  // skip the value
      continue;
    }
    if (!app.get_subcommand_no_throw(argv[i])) {
      err << "error: usage: unknown subcommand '" << argv[i] << "'\n" << app.help();
      return kUsage;
    }
    break;
  }

  std::vector<std::string> args(argv.rbegin(), argv.rend());
  if (!args.empty()) args.pop_back();  // program name
  try {
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: usage: " << e.what() << "\n";
    err << app.help();
    return kUsage;
  }

  Ctx ctx{out, err, level == "error" ? Level::error : level == "debug" ? Level::debug : Level::info};
  std::string which;
  try {
    if (synth->parsed()) {
      which = "synth";
      run_synth(ctx, synth_a);
    } else if (segment->parsed()) {
      which = "segment";
      run_segment(ctx, seg_a);
    } else if (train->parsed()) {
      which = "train";
      run_train(ctx, train_a);
    } else if (ib->parsed()) {
      which = "index build";
      run_index_build(ctx, ib_a);
    } else if (iq->parsed()) {
      which = "index query";
      run_index_query(ctx, iq_a);
    } else if (tune->parsed()) {
      which = "detect tune";
      run_tune(ctx, tune_a);
    } else if (det->parsed()) {
      which = "detect";
      if (det_a.index.empty()) throw Error("--index is required");
      run_detect(ctx, det_a, k_opt->count() > 0, g_opt->count() > 0);
    } else if (rep->parsed()) {
      which = "report";
      run_report(ctx, rep_a);
    } else if (ev->parsed()) {
      which = "evaluate";
      run_evaluate(ctx, ev_a);
    } else if (bench->parsed()) {
      which = "bench";
      run_bench(ctx, bench_a);
    }
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (char& c : msg) {
      if (c == '\n' || c == '\r') c = ' ';
    }
    err << "error: " << which << ": " << msg << "\n";
    return kFailure;
  }
  return kOk;
}

}  // namespace evidexr::cli
