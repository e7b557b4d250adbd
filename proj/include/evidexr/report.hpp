#pragma once

#include "evidexr/detect.hpp"
#include "evidexr/index.hpp"
#include "evidexr/types.hpp"

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace evidexr::report {

// ---------------------------------------------------------------------------
// Prompt template

struct PromptTemplate {
  std::string system_role;
  std::string context_header;
  std::vector<std::string> constraint_lines;
  std::string reference_slot_format = "REFERENCE {rank}:\n{report}";
  std::string output_instruction;

  static PromptTemplate defaults();
  bool operator==(const PromptTemplate&) const = default;
};

inline constexpr int kTemplateVersion = 1;

/// Text file: a "evidexr-template <version>" first line, then sections
/// introduced by "@@ <field>" lines. Each section body is taken verbatim up to
/// the next "@@" line, minus the final newline. The constraints section holds
/// one constraint per line.
std::string serialize_template(const PromptTemplate& t);
PromptTemplate parse_template(std::string_view text);
PromptTemplate load_template(const std::filesystem::path& path);
void save_template(const PromptTemplate& t, const std::filesystem::path& path);

/// System role, context header, one slot per reference numbered from 1 in the
/// given order, numbered constraints, output instruction; parts separated by
/// blank lines. Throws on an empty reference list.
std::string assemble_prompt(const PromptTemplate& t, const std::vector<std::string>& references);

// ---------------------------------------------------------------------------
// Case lookup

/// Read-only view of a corpus keyed by case_id. The normal-template record is
/// looked up by its sentinel id.
class CaseStore {
 public:
  explicit CaseStore(std::vector<CaseRecord> records);

  const CaseRecord* find(const std::string& case_id) const;
  const CaseRecord& at(const std::string& case_id) const;
  /// Throws when the corpus has no normal-template record.
  const CaseRecord& normal_template() const;
  bool has_normal_template() const { return find(kNormalTemplateId) != nullptr; }
  const std::vector<CaseRecord>& records() const { return records_; }

 private:
  std::vector<CaseRecord> records_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// ---------------------------------------------------------------------------
// Selection and generation

struct Selection {
  std::size_t rank = 0;   // 0-based position in the neighbor list
  bool fallback = false;  // no neighbor had the predicted label
};

/// Highest-ranked neighbor whose label equals `predicted`; rank 0 with the
/// fallback flag when none does. Throws on an empty list.
Selection select_reference(const index::NeighborList& neighbors, Label predicted);

enum class Mode { local, remote };

enum class RemoteOutcome { none, accepted, violation, failed };

const char* to_string(RemoteOutcome o);

struct GeneratedReport {
  std::string query_id;
  std::string text;
  std::string source_case_id;  // or kNormalTemplateId
  index::NeighborList evidence;
  double evidence_score = 0.0;
  Label predicted = 0;
  bool fallback = false;
  RemoteOutcome remote = RemoteOutcome::none;
  std::string remote_error;

  bool operator==(const GeneratedReport&) const = default;
};

struct RemoteConfig {
  std::string endpoint;  // http[s]://host[:port]/path
  double timeout_s = 30.0;
  std::string model = "selector";
  std::size_t max_in_flight = 4;
  std::string api_key;  // sent as a Bearer token when non-empty
};

/// Name of the environment variable read for the remote credential.
inline constexpr const char* kApiKeyEnv = "EVIDEXR_API_KEY";

struct RemoteCounters {
  std::atomic<std::uint64_t> requests{0};
  std::atomic<std::uint64_t> accepted{0};
  std::atomic<std::uint64_t> violations{0};
  std::atomic<std::uint64_t> failures{0};
};

/// Chat-completion style client with greedy decoding parameters. At most
/// max_in_flight requests run concurrently; further callers wait.
class RemoteClient {
 public:
  explicit RemoteClient(RemoteConfig cfg);
  ~RemoteClient();
  RemoteClient(const RemoteClient&) = delete;
  RemoteClient& operator=(const RemoteClient&) = delete;

  /// Returns the completion text. Throws Error on transport failure, timeout,
  /// non-2xx status or a malformed body.
  std::string complete(const std::string& prompt);

  const RemoteConfig& config() const { return cfg_; }
  RemoteCounters& counters() { return counters_; }
  const RemoteCounters& counters() const { return counters_; }

 private:
  struct Impl;
  RemoteConfig cfg_;
  RemoteCounters counters_;
  std::unique_ptr<Impl> impl_;
};

/// JSON request body for a prompt (exposed for tests and documentation).
std::string remote_request_body(const RemoteConfig& cfg, const std::string& prompt);
/// Extracts choices[0].message.content; throws on any other shape.
std::string parse_remote_response(std::string_view body);

struct GenerateOptions {
  Mode mode = Mode::local;
  std::size_t references = 3;  // top-ranked reports injected into the prompt
  const PromptTemplate* prompt_template = nullptr;  // defaults() when null
  RemoteClient* client = nullptr;                   // required in remote mode
};

/// Replicates one of `references` (best first) for a query whose label is
/// already decided. Label-consistent selection; in remote mode the completion
/// must byte-equal one of the references or the local choice is used.
GeneratedReport generate_with_references(const std::string& query_id, Label predicted,
                                         const std::vector<const CaseRecord*>& references,
                                         const GenerateOptions& opts = {});

/// Decision from the first K hits, then the normal template (prediction 0) or
/// a verbatim copy of one of the first opts.references hits (prediction 1).
GeneratedReport generate_from_evidence(const index::NeighborList& neighbors, const CaseStore& store,
                                       const detect::DetectorConfig& cfg, const GenerateOptions& opts = {});

/// search + generate_from_evidence. When exclude_id is non-empty that case is
/// skipped during search.
GeneratedReport generate(const std::string& query_id, const Embedding& query, const index::VectorIndex& idx,
                         const CaseStore& store, const detect::DetectorConfig& cfg,
                         const GenerateOptions& opts = {}, const std::string& exclude_id = {});

// ---------------------------------------------------------------------------
// Serialization

std::string to_jsonl_line(const GeneratedReport& r);
GeneratedReport from_json_line(std::string_view line);
void save_reports(const std::vector<GeneratedReport>& reports, const std::filesystem::path& path);
std::vector<GeneratedReport> load_reports(const std::filesystem::path& path);

}  // namespace evidexr::report
