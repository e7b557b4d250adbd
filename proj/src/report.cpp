#include "evidexr/report.hpp"

#include "evidexr/io.hpp"
#include "json_util.hpp"

#include <httplib.h>
#include <json.hpp>

#include <regex>
#include <semaphore>
#include <sstream>

namespace evidexr::report {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Template

PromptTemplate PromptTemplate::defaults() {
  PromptTemplate t;
  t.system_role =
      "You are a report selector for EEG segments. You never write new text; you return one of the "
      "reference reports below unchanged.";
  t.context_header = "Reference reports retrieved for this EEG segment, most similar first:";
  t.constraint_lines = {
      "Choose the single reference that best fits the segment.",
      "Output the chosen reference text exactly as written, byte for byte.",
      "Do not add, remove or reword anything, and add no commentary.",
  };
  t.output_instruction = "Output: the chosen reference text only.";
  return t;
}

namespace {

constexpr std::string_view kTemplateMagic = "evidexr-template";

void replace_all(std::string& s, std::string_view from, std::string_view to) {
  std::size_t pos = 0;
  while ((pos = s.find(from, pos)) != std::string::npos) {
    s.replace(pos, from.size(), to);
    pos += to.size();
  }
}

}  // namespace

std::string serialize_template(const PromptTemplate& t) {
  std::string out = std::string(kTemplateMagic) + " " + std::to_string(kTemplateVersion) + "\n";
  auto section = [&](std::string_view name, const std::string& body) {
    out += "@@ ";
    out += name;
    out += "\n";
    out += body;
    out += "\n";
  };
  section("system_role", t.system_role);
  section("context_header", t.context_header);
  std::string cons;
  for (std::size_t i = 0; i < t.constraint_lines.size(); ++i) {
    if (t.constraint_lines[i].find('\n') != std::string::npos) throw Error("template: constraint line contains a newline");
    cons += (i ? "\n" : "") + t.constraint_lines[i];
  }
  section("constraints", cons);
  section("reference_slot", t.reference_slot_format);
  section("output_instruction", t.output_instruction);
  return out;
}

PromptTemplate parse_template(std::string_view text) {
  std::vector<std::string> lines;
  {
    std::string cur;
    for (char c : text) {
      if (c == '\n') {
        lines.push_back(std::move(cur));
        cur.clear();
      } else {
        cur.push_back(c);
      }
    }
    if (!cur.empty()) lines.push_back(std::move(cur));
  }
  if (lines.empty() || lines[0].rfind(kTemplateMagic, 0) != 0) throw Error("template: missing header line");
  const std::string ver = lines[0].substr(kTemplateMagic.size());
  if (ver != " " + std::to_string(kTemplateVersion)) throw Error("template: unsupported version '" + ver + "'");

  std::unordered_map<std::string, std::string> sections;
  std::string name;
  std::vector<std::string> body;
  auto flush = [&] {
    if (name.empty()) return;
    std::string joined;
    for (std::size_t i = 0; i < body.size(); ++i) joined += (i ? "\n" : "") + body[i];
    if (!sections.emplace(name, joined).second) throw Error("template: duplicate section " + name);
  };
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (lines[i].rfind("@@ ", 0) == 0) {
      flush();
      name = lines[i].substr(3);
      body.clear();
    } else {
      if (name.empty()) throw Error("template: line " + std::to_string(i + 1) + " is outside a section");
      body.push_back(lines[i]);
    }
  }
  flush();

  auto take = [&](const char* key) {
    auto it = sections.find(key);
    if (it == sections.end()) throw Error(std::string("template: missing section ") + key);
    std::string v = std::move(it->second);
    sections.erase(it);
    return v;
  };
  PromptTemplate t;
  t.system_role = take("system_role");
  t.context_header = take("context_header");
  std::istringstream cons(take("constraints"));
  for (std::string line; std::getline(cons, line);) {
    if (!line.empty()) t.constraint_lines.push_back(line);
  }
  t.reference_slot_format = take("reference_slot");
  t.output_instruction = take("output_instruction");
  if (!sections.empty()) throw Error("template: unknown section " + sections.begin()->first);
  if (t.reference_slot_format.find("{report}") == std::string::npos) {
    throw Error("template: reference slot lacks a {report} placeholder");
  }
  return t;
}

PromptTemplate load_template(const std::filesystem::path& path) {
  try {
    return parse_template(io::read_text(path));
  } catch (const Error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

void save_template(const PromptTemplate& t, const std::filesystem::path& path) {
  io::write_atomic(path, serialize_template(t));
}

std::string assemble_prompt(const PromptTemplate& t, const std::vector<std::string>& references) {
  if (references.empty()) throw Error("assemble_prompt: no references");
  std::string out = t.system_role + "\n\n" + t.context_header + "\n\n";
  for (std::size_t i = 0; i < references.size(); ++i) {
    // {report} is substituted last so report text is never rescanned for placeholders.
    std::string slot = t.reference_slot_format;
    replace_all(slot, "{rank}", std::to_string(i + 1));
    const auto at = slot.find("{report}");
    slot.replace(at, 8, references[i]);
    out += slot + "\n\n";
  }
  out += "Constraints:\n";
  for (std::size_t i = 0; i < t.constraint_lines.size(); ++i) {
    out += std::to_string(i + 1) + ". " + t.constraint_lines[i] + "\n";
  }
  out += "\n" + t.output_instruction + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Store

CaseStore::CaseStore(std::vector<CaseRecord> records) : records_(std::move(records)) {
  for (std::size_t i = 0; i < records_.size(); ++i) {
    if (!by_id_.emplace(records_[i].case_id, i).second) throw Error("case store: duplicate case_id " + records_[i].case_id);
  }
}

const CaseRecord* CaseStore::find(const std::string& case_id) const {
  auto it = by_id_.find(case_id);
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

const CaseRecord& CaseStore::at(const std::string& case_id) const {
  const CaseRecord* r = find(case_id);
  if (!r) throw Error("case store: unknown case_id " + case_id);
  return *r;
}

const CaseRecord& CaseStore::normal_template() const {
  const CaseRecord* r = find(kNormalTemplateId);
  if (!r) throw Error(std::string("corpus has no '") + kNormalTemplateId + "' record");
  return *r;
}

// ---------------------------------------------------------------------------
// Generation

Selection select_reference(const index::NeighborList& neighbors, Label predicted) {
  if (neighbors.hits.empty()) throw Error("select_reference: empty neighbor list");
  for (std::size_t i = 0; i < neighbors.hits.size(); ++i) {
    if (neighbors.hits[i].label == predicted) return Selection{i, false};
  }
  return Selection{0, true};
}

const char* to_string(RemoteOutcome o) {
  switch (o) {
    case RemoteOutcome::none: return "none";
    case RemoteOutcome::accepted: return "accepted";
    case RemoteOutcome::violation: return "violation";
    case RemoteOutcome::failed: return "failed";
  }
  return "none";
}

namespace {

RemoteOutcome outcome_from_string(const std::string& s) {
  for (auto o : {RemoteOutcome::none, RemoteOutcome::accepted, RemoteOutcome::violation, RemoteOutcome::failed}) {
    if (s == to_string(o)) return o;
  }
  throw Error("unknown remote outcome '" + s + "'");
}

// Local choice, optionally overridden by a verbatim-compliant remote completion.
void choose(GeneratedReport& out, Label predicted, const std::vector<const CaseRecord*>& refs,
            const GenerateOptions& opts) {
  index::NeighborList as_list;
  for (const auto* r : refs) as_list.hits.push_back(index::Hit{r->case_id, 0.0, r->label, 0});
  const Selection sel = select_reference(as_list, predicted);
  out.fallback = sel.fallback;
  out.text = refs[sel.rank]->report;
  out.source_case_id = refs[sel.rank]->case_id;
  if (opts.mode != Mode::remote) return;
  if (!opts.client) throw Error("generate: remote mode needs a client");

  std::vector<std::string> texts;
  for (const auto* r : refs) texts.push_back(r->report);
  const PromptTemplate tmpl = opts.prompt_template ? *opts.prompt_template : PromptTemplate::defaults();
  auto& counters = opts.client->counters();
  std::string completion;
  try {
    completion = opts.client->complete(assemble_prompt(tmpl, texts));
  } catch (const Error& e) {
    ++counters.failures;
    out.remote = RemoteOutcome::failed;
    out.remote_error = e.what();
    return;
  }
  for (std::size_t i = 0; i < refs.size(); ++i) {
    if (completion == texts[i]) {
      ++counters.accepted;
      out.remote = RemoteOutcome::accepted;
      out.text = texts[i];
      out.source_case_id = refs[i]->case_id;
      out.fallback = refs[i]->label != predicted;
      return;
    }
  }
  ++counters.violations;
  out.remote = RemoteOutcome::violation;
  out.remote_error = "completion is not byte-equal to any injected reference";
}

}  // namespace

GeneratedReport generate_with_references(const std::string& query_id, Label predicted,
                                         const std::vector<const CaseRecord*>& references,
                                         const GenerateOptions& opts) {
  if (references.empty()) throw Error("generate: no references for " + query_id);
  GeneratedReport out;
  out.query_id = query_id;
  out.predicted = predicted;
  for (const auto* r : references) out.evidence.hits.push_back(index::Hit{r->case_id, 0.0, r->label, 0});
  out.evidence.query_id = query_id;
  choose(out, predicted, references, opts);
  return out;
}

GeneratedReport generate_from_evidence(const index::NeighborList& neighbors, const CaseStore& store,
                                       const detect::DetectorConfig& cfg, const GenerateOptions& opts) {
  cfg.validate();
  GeneratedReport out;
  out.query_id = neighbors.query_id;
  out.evidence = neighbors;
  out.evidence_score = detect::evidence_score(neighbors, cfg.k);
  out.predicted = detect::classify(out.evidence_score, cfg);
  if (out.predicted == 0) {
    const CaseRecord& normal = store.normal_template();
    out.text = normal.report;
    out.source_case_id = normal.case_id;
    return out;
  }
  if (opts.references < 1) throw Error("generate: at least one reference is needed");
  std::vector<const CaseRecord*> refs;
  const std::size_t n = std::min(opts.references, neighbors.hits.size());
  for (std::size_t i = 0; i < n; ++i) refs.push_back(&store.at(neighbors.hits[i].case_id));
  choose(out, out.predicted, refs, opts);
  return out;
}

GeneratedReport generate(const std::string& query_id, const Embedding& query, const index::VectorIndex& idx,
                         const CaseStore& store, const detect::DetectorConfig& cfg, const GenerateOptions& opts,
                         const std::string& exclude_id) {
  cfg.validate();
  const std::size_t depth = std::max(cfg.k, opts.references);
  auto nl = exclude_id.empty() ? index::search(idx, query, depth) : index::search_excluding(idx, query, depth, exclude_id);
  nl.query_id = query_id;
  return generate_from_evidence(nl, store, cfg, opts);
}

// ---------------------------------------------------------------------------
// Remote client

struct RemoteClient::Impl {
  explicit Impl(std::size_t limit) : slots(static_cast<std::ptrdiff_t>(limit)) {}
  std::counting_semaphore<> slots;
  std::string scheme_host_port;
  std::string path;
};

RemoteClient::RemoteClient(RemoteConfig cfg) : cfg_(std::move(cfg)) {
  if (cfg_.max_in_flight < 1) throw Error("remote: max_in_flight must be >= 1");
  if (!(cfg_.timeout_s > 0.0)) throw Error("remote: timeout must be positive");
  static const std::regex url(R"(^(https?://[^/\s]+)(/[^\s]*)?$)");
  std::smatch m;
  if (!std::regex_match(cfg_.endpoint, m, url)) throw Error("remote: malformed endpoint URL '" + cfg_.endpoint + "'");
  impl_ = std::make_unique<Impl>(cfg_.max_in_flight);
  impl_->scheme_host_port = m[1].str();
  impl_->path = m[2].matched ? m[2].str() : "/";
}

RemoteClient::~RemoteClient() = default;

std::string remote_request_body(const RemoteConfig& cfg, const std::string& prompt) {
  json body{{"model", cfg.model},
            {"messages", json::array({json{{"role", "user"}, {"content", prompt}}})},
            {"temperature", 0},
            {"top_p", 1},
            {"n", 1},
            {"stream", false},
            {"seed", 0}};
  return body.dump();
}

std::string parse_remote_response(std::string_view body) {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::exception& e) {
    throw Error(std::string("remote: malformed response body: ") + e.what());
  }
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception&) {
    throw Error("remote: response lacks choices[0].message.content");
  }
}

std::string RemoteClient::complete(const std::string& prompt) {
  impl_->slots.acquire();
  struct Release {
    std::counting_semaphore<>& s;
    ~Release() { s.release(); }
  } release{impl_->slots};
  ++counters_.requests;

  httplib::Client client(impl_->scheme_host_port);
  const auto secs = static_cast<time_t>(cfg_.timeout_s);
  const auto usecs = static_cast<time_t>((cfg_.timeout_s - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);

  auto res = client.Post(impl_->path, headers, remote_request_body(cfg_, prompt), "application/json");
  if (!res) throw Error("remote: request to " + cfg_.endpoint + " failed: " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300) {
    throw Error("remote: " + cfg_.endpoint + " returned HTTP " + std::to_string(res->status));
  }
  return parse_remote_response(res->body);
}

// ---------------------------------------------------------------------------
// Serialization

std::string to_jsonl_line(const GeneratedReport& r) {
  json j{{"query_id", r.query_id},
         {"text", r.text},
         {"source_case_id", r.source_case_id},
         {"predicted", r.predicted},
         {"evidence_score", r.evidence_score},
         {"fallback", r.fallback},
         {"remote", to_string(r.remote)},
         {"evidence", jsonutil::hits_to_json(r.evidence)}};
  if (!r.remote_error.empty()) j["remote_error"] = r.remote_error;
  return j.dump();
}

GeneratedReport from_json_line(std::string_view line) {
  const json j = json::parse(line);
  GeneratedReport r;
  r.query_id = j.at("query_id").get<std::string>();
  r.text = j.at("text").get<std::string>();
  r.source_case_id = j.at("source_case_id").get<std::string>();
  r.predicted = j.at("predicted").get<Label>();
  r.evidence_score = j.value("evidence_score", 0.0);
  r.fallback = j.value("fallback", false);
  r.remote = outcome_from_string(j.value("remote", std::string("none")));
  r.remote_error = j.value("remote_error", std::string());
  r.evidence = jsonutil::hits_from_json(j.at("evidence"), r.query_id);
  return r;
}

void save_reports(const std::vector<GeneratedReport>& reports, const std::filesystem::path& path) {
  std::string out;
  for (const auto& r : reports) out += to_jsonl_line(r) + "\n";
  io::write_atomic(path, out);
}

std::vector<GeneratedReport> load_reports(const std::filesystem::path& path) {
  std::istringstream in(io::read_text(path));
  std::vector<GeneratedReport> out;
  std::size_t lineno = 0;
  for (std::string line; std::getline(in, line);) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(from_json_line(line));
    } catch (const std::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace evidexr::report
