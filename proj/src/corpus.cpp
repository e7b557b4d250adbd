#include "evidexr/corpus.hpp"

#include "evidexr/io.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace evidexr::corpus {

using nlohmann::json;

namespace {

constexpr std::uint32_t kSignalVersion = 1;

std::string line_prefix(const std::filesystem::path& path, std::size_t line) {
  return path.string() + ":" + std::to_string(line) + ": ";
}

// Reads non-blank lines, handing each parsed JSON object to `fn` with its line number.
template <typename Fn>
void for_each_json_line(const std::filesystem::path& path, Fn&& fn) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw Error(line_prefix(path, lineno) + "malformed JSON: " + e.what());
    }
    if (!j.is_object()) throw Error(line_prefix(path, lineno) + "expected a JSON object");
    try {
      fn(j, lineno);
    } catch (const json::exception& e) {
      throw Error(line_prefix(path, lineno) + "bad field: " + e.what());
    } catch (const Error& e) {
      throw Error(line_prefix(path, lineno) + e.what());
    }
  }
}

std::string join_lines(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) {
    out += r.dump(-1, ' ', false, json::error_handler_t::strict);
    out += '\n';
  }
  return out;
}

Label parse_label(const json& j) {
  if (!j.is_number_integer()) throw Error("label must be an integer");
  const auto v = j.get<long long>();
  if (v != 0 && v != 1) throw Error("label must be 0 or 1, got " + std::to_string(v));
  return static_cast<Label>(v);
}

json meta_to_json(const SignalMeta& m) {
  return json{{"version", kSignalVersion}, {"count", m.count},   {"channels", m.channels},
              {"samples", m.samples},      {"fs", m.fs},         {"seed", m.seed},
              {"subject_id", m.subject_id}, {"dtype", "float32"}, {"order", "channel-major"}};
}

}  // namespace

void validate(const Segment& seg) {
  if (seg.id.empty()) throw Error("segment id is empty");
  if (seg.data.size() != seg.channels * seg.samples) {
    throw Error("segment " + seg.id + ": data size " + std::to_string(seg.data.size()) +
                " != channels*samples " + std::to_string(seg.channels * seg.samples));
  }
  if (seg.label != 0 && seg.label != 1) throw Error("segment " + seg.id + ": label outside {0,1}");
  if (!(seg.start_s >= 0.0)) throw Error("segment " + seg.id + ": negative start_s");
  for (float v : seg.data) {
    if (!std::isfinite(v)) throw Error("segment " + seg.id + ": non-finite sample");
  }
}

void validate(const CaseRecord& rec) {
  if (rec.case_id.empty()) throw Error("case_id is empty");
  if (rec.label != 0 && rec.label != 1) throw Error("case " + rec.case_id + ": label outside {0,1}");
  if (rec.report.empty()) throw Error("case " + rec.case_id + ": empty report");
  if (rec.embedding) {
    for (float v : *rec.embedding) {
      if (!std::isfinite(v)) throw Error("case " + rec.case_id + ": non-finite embedding");
    }
  }
}

void validate(const EventAnnotation& ev) {
  if (!(ev.onset_s >= 0.0) || !(ev.offset_s > ev.onset_s)) {
    throw Error("event on " + ev.subject_id + ": need offset_s > onset_s >= 0");
  }
}

std::vector<CaseRecord> load_corpus(const std::filesystem::path& path) {
  std::vector<CaseRecord> out;
  std::unordered_set<std::string> seen;
  for_each_json_line(path, [&](const json& j, std::size_t) {
    CaseRecord r;
    r.case_id = j.at("case_id").get<std::string>();
    r.segment_id = j.value("segment_id", std::string{});
    r.label = parse_label(j.at("label"));
    r.report = j.at("report").get<std::string>();
    if (auto it = j.find("embedding"); it != j.end() && !it->is_null()) {
      r.embedding = it->get<std::vector<float>>();
    }
    validate(r);
    if (!seen.insert(r.case_id).second) throw Error("duplicate case_id " + r.case_id);
    out.push_back(std::move(r));
  });
  return out;
}

void save_corpus(const std::vector<CaseRecord>& records, const std::filesystem::path& path) {
  std::vector<json> rows;
  rows.reserve(records.size());
  for (const auto& r : records) {
    validate(r);
    json j{{"case_id", r.case_id}, {"segment_id", r.segment_id}, {"label", r.label}, {"report", r.report}};
    if (r.embedding) j["embedding"] = *r.embedding;
    rows.push_back(std::move(j));
  }
  io::write_atomic(path, join_lines(rows));
}

const CaseRecord* find(const std::vector<CaseRecord>& records, const std::string& case_id) {
  for (const auto& r : records) {
    if (r.case_id == case_id) return &r;
  }
  return nullptr;
}

std::vector<EventAnnotation> load_events(const std::filesystem::path& path) {
  std::vector<EventAnnotation> out;
  for_each_json_line(path, [&](const json& j, std::size_t) {
    EventAnnotation ev;
    ev.subject_id = j.at("subject_id").get<std::string>();
    ev.onset_s = j.at("onset_s").get<double>();
    ev.offset_s = j.at("offset_s").get<double>();
    ev.kind = j.value("kind", std::string{});
    ev.recording_id = j.value("recording_id", std::string{});
    ev.report = j.value("report", std::string{});
    validate(ev);
    out.push_back(std::move(ev));
  });
  return out;
}

void save_events(const std::vector<EventAnnotation>& events, const std::filesystem::path& path) {
  std::vector<json> rows;
  for (const auto& ev : events) {
    validate(ev);
    json j{{"subject_id", ev.subject_id}, {"onset_s", ev.onset_s}, {"offset_s", ev.offset_s}, {"kind", ev.kind}};
    if (!ev.recording_id.empty()) j["recording_id"] = ev.recording_id;
    if (!ev.report.empty()) j["report"] = ev.report;
    rows.push_back(std::move(j));
  }
  io::write_atomic(path, join_lines(rows));
}

std::filesystem::path sidecar_path(const std::filesystem::path& signal_path) {
  auto p = signal_path;
  p += ".json";
  return p;
}

void write_signal(const std::filesystem::path& path, const SignalMeta& meta,
                  const std::vector<float>& data) {
  if (data.size() != meta.count * meta.channels * meta.samples) {
    throw Error("write_signal: data size does not match shape");
  }
  io::Writer w;
  w.header(io::kSignalMagic, kSignalVersion);
  w.f32s(data);
  io::write_atomic(path, w.bytes());
  io::write_atomic(sidecar_path(path), meta_to_json(meta).dump(2) + "\n");
}

std::vector<float> read_signal(const std::filesystem::path& path, SignalMeta& meta) {
  json j;
  try {
    j = json::parse(io::read_text(sidecar_path(path)));
    meta.count = j.value("count", std::size_t{1});
    meta.channels = j.at("channels").get<std::size_t>();
    meta.samples = j.at("samples").get<std::size_t>();
    meta.fs = j.at("fs").get<double>();
    meta.seed = j.value("seed", std::uint64_t{0});
    meta.subject_id = j.value("subject_id", std::string{});
  } catch (const json::exception& e) {
    throw Error(sidecar_path(path).string() + ": " + e.what());
  }
  io::Reader r(io::read_file(path), path.string());
  const auto version = r.header(io::kSignalMagic);
  if (version != kSignalVersion) throw Error(path.string() + ": unsupported version");
  const std::size_t n = meta.count * meta.channels * meta.samples;
  if (r.remaining() != n * 4) {
    throw Error(path.string() + ": payload size does not match sidecar shape");
  }
  std::vector<float> data(n);
  r.f32s(data);
  return data;
}

void save_recording(const Recording& rec, const std::filesystem::path& path, std::uint64_t seed) {
  SignalMeta m;
  m.channels = rec.channels;
  m.samples = rec.samples();
  m.fs = rec.fs;
  m.seed = seed;
  m.subject_id = rec.subject_id;
  write_signal(path, m, rec.data);
}

Recording load_recording(const std::filesystem::path& path) {
  SignalMeta m;
  Recording rec;
  rec.data = read_signal(path, m);
  if (m.count != 1) throw Error(path.string() + ": expected a single recording block");
  rec.channels = m.channels;
  rec.fs = m.fs;
  rec.subject_id = m.subject_id;
  rec.id = path.stem().string();
  return rec;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  json recs = json::array();
  for (const auto& rec : ds.recordings) {
    const std::string file = rec.id + ".f32";
    save_recording(rec, dir / file, ds.seed);
    recs.push_back({{"id", rec.id}, {"subject_id", rec.subject_id}, {"file", file}});
  }
  save_events(ds.events, dir / "events.jsonl");
  json manifest{{"version", 1}, {"seed", ds.seed}, {"normal_report", ds.normal_report}, {"recordings", recs}};
  io::write_atomic(dir / "manifest.json", manifest.dump(2) + "\n");
}

Dataset load_dataset(const std::filesystem::path& dir) {
  Dataset ds;
  json manifest;
  try {
    manifest = json::parse(io::read_text(dir / "manifest.json"));
    ds.seed = manifest.value("seed", std::uint64_t{0});
    ds.normal_report = manifest.value("normal_report", std::string{});
    for (const auto& r : manifest.at("recordings")) {
      Recording rec = load_recording(dir / r.at("file").get<std::string>());
      rec.id = r.at("id").get<std::string>();
      rec.subject_id = r.at("subject_id").get<std::string>();
      ds.recordings.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    throw Error((dir / "manifest.json").string() + ": " + e.what());
  }
  if (std::filesystem::exists(dir / "events.jsonl")) ds.events = load_events(dir / "events.jsonl");
  return ds;
}

void save_segment_set(const SegmentSet& set, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  SignalMeta m;
  m.count = set.segments.size();
  m.channels = set.segments.empty() ? kDefaultChannels : set.segments.front().channels;
  m.samples = set.segments.empty() ? kDefaultSamples : set.segments.front().samples;
  m.fs = set.fs;
  m.seed = set.seed;
  std::vector<float> block;
  block.reserve(m.count * m.channels * m.samples);
  std::vector<json> rows;
  for (const auto& s : set.segments) {
    validate(s);
    if (s.channels != m.channels || s.samples != m.samples) {
      throw Error("segment " + s.id + ": shape differs from the rest of the set");
    }
    block.insert(block.end(), s.data.begin(), s.data.end());
    rows.push_back({{"id", s.id}, {"subject_id", s.subject_id}, {"start_s", s.start_s}, {"label", s.label}});
  }
  write_signal(dir / "segments.f32", m, block);
  io::write_atomic(dir / "segments.jsonl", join_lines(rows));
  save_corpus(set.records, dir / "corpus.jsonl");
}

SegmentSet load_segment_set(const std::filesystem::path& dir) {
  SegmentSet set;
  SignalMeta m;
  const auto block = read_signal(dir / "segments.f32", m);
  set.fs = m.fs;
  set.seed = m.seed;
  for_each_json_line(dir / "segments.jsonl", [&](const json& j, std::size_t) {
    Segment s;
    s.id = j.at("id").get<std::string>();
    s.subject_id = j.value("subject_id", std::string{});
    s.start_s = j.at("start_s").get<double>();
    s.label = parse_label(j.at("label"));
    s.channels = m.channels;
    s.samples = m.samples;
    const std::size_t k = set.segments.size();
    if (k >= m.count) throw Error("more metadata lines than signal blocks");
    const std::size_t n = m.channels * m.samples;
    s.data.assign(block.begin() + static_cast<std::ptrdiff_t>(k * n),
                  block.begin() + static_cast<std::ptrdiff_t>((k + 1) * n));
    validate(s);
    set.segments.push_back(std::move(s));
  });
  if (set.segments.size() != m.count) throw Error(dir.string() + ": segment count mismatch");
  set.records = load_corpus(dir / "corpus.jsonl");
  std::unordered_map<std::string, Label> labels;
  for (const auto& s : set.segments) labels.emplace(s.id, s.label);
  for (const auto& r : set.records) {
    auto it = labels.find(r.segment_id);
    if (it != labels.end() && it->second != r.label) {
      throw Error("case " + r.case_id + ": label differs from segment " + r.segment_id);
    }
  }
  return set;
}

}  // namespace evidexr::corpus
