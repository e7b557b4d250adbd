#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "evidexr/io.hpp"
#include "evidexr/report.hpp"
#include "mock_remote.hpp"
#include "test_util.hpp"

#include <json.hpp>

#include <thread>

using namespace evidexr;

namespace {

index::NeighborList hits(std::vector<std::pair<std::string, Label>> ids) {
  index::NeighborList nl;
  nl.query_id = "q";
  for (std::size_t i = 0; i < ids.size(); ++i) {
    nl.hits.push_back(index::Hit{ids[i].first, 1.0 - 0.1 * static_cast<double>(i), ids[i].second, i});
  }
  return nl;
}

std::vector<CaseRecord> store_records() {
  return {
      {"a", "", Embedding{1, 0}, 1, "Left frontal spikes.\nFrequent."},
      {"b", "", Embedding{0.8f, 0.6f}, 1, "Right occipital sharp waves."},
      {"c", "", Embedding{0.6f, 0.8f}, 0, "Background within normal limits, variant A."},
      {"d", "", Embedding{0, 1}, 1, "Left centrotemporal spike-and-wave."},
      {kNormalTemplateId, "", std::nullopt, 0, "Normal EEG."},
  };
}

}  // namespace

TEST_CASE("template round trip and parse errors") {
  auto t = report::PromptTemplate::defaults();
  CHECK(report::parse_template(report::serialize_template(t)) == t);
  t.system_role = "line one\nline two\n\nafter a blank";
  t.reference_slot_format = "<<{rank}>> {report} <<end>>";
  t.constraint_lines = {"only one"};
  CHECK(report::parse_template(report::serialize_template(t)) == t);

  testutil::TempDir d;
  report::save_template(t, d / "t.txt");
  CHECK(report::load_template(d / "t.txt") == t);

  CHECK_THROWS_AS(report::parse_template("not a template\n"), Error);
  CHECK_THROWS_AS(report::parse_template("evidexr-template 99\n"), Error);
  auto text = report::serialize_template(report::PromptTemplate::defaults());
  CHECK_THROWS_AS(report::parse_template(text + "@@ extra\nx\n"), Error);
  auto no_slot = text;
  no_slot.replace(no_slot.find("{report}"), 8, "{rep}");
  CHECK_THROWS_AS(report::parse_template(no_slot), Error);
}

TEST_CASE("prompt assembly keeps reference order and text") {
  const auto t = report::PromptTemplate::defaults();
  const std::vector<std::string> refs = {"first {rank} text", "second\nwith newline", "third"};
  const auto p = report::assemble_prompt(t, refs);
  const auto r1 = p.find("REFERENCE 1:\nfirst {rank} text");
  const auto r2 = p.find("REFERENCE 2:\nsecond\nwith newline");
  const auto r3 = p.find("REFERENCE 3:\nthird");
  REQUIRE(r1 != std::string::npos);
  REQUIRE(r2 != std::string::npos);
  REQUIRE(r3 != std::string::npos);
  CHECK(r1 < r2);
  CHECK(r2 < r3);
  CHECK(p.rfind(t.system_role, 0) == 0);
  CHECK(p.find("REFERENCE 4:") == std::string::npos);
  CHECK(p.find("1. " + t.constraint_lines[0]) != std::string::npos);
  CHECK(mock::references_in(p) == refs);

  const auto one = report::assemble_prompt(t, {"only"});
  CHECK(mock::references_in(one) == std::vector<std::string>{"only"});
  CHECK_THROWS_AS(report::assemble_prompt(t, {}), Error);
}

TEST_CASE("label-consistent selection") {
  CHECK(report::select_reference(hits({{"a", 0}, {"b", 1}, {"c", 1}}), 1).rank == 1);
  CHECK(report::select_reference(hits({{"a", 1}, {"b", 1}}), 1).rank == 0);
  const auto fb = report::select_reference(hits({{"a", 0}, {"b", 0}}), 1);
  CHECK(fb.rank == 0);
  CHECK(fb.fallback);
  CHECK_FALSE(report::select_reference(hits({{"a", 0}}), 0).fallback);
  CHECK_THROWS_AS(report::select_reference(index::NeighborList{}, 1), Error);
}

TEST_CASE("case store") {
  report::CaseStore store(store_records());
  CHECK(store.has_normal_template());
  CHECK(store.normal_template().report == "Normal EEG.");
  CHECK(store.find("zz") == nullptr);
  CHECK_THROWS_AS(store.at("zz"), Error);
  CHECK_THROWS_AS(report::CaseStore({{"a", "", std::nullopt, 0, "x"}, {"a", "", std::nullopt, 1, "y"}}), Error);
  CHECK_THROWS_AS(report::CaseStore({{"a", "", std::nullopt, 0, "x"}}).normal_template(), Error);
}

TEST_CASE("local generation") {
  report::CaseStore store(store_records());
  const detect::DetectorConfig cfg{3, 0.5};

  // Positive decision, first reference has the wrong label.
  auto r = report::generate_from_evidence(hits({{"c", 0}, {"a", 1}, {"b", 1}, {"d", 1}}), store, cfg);
  CHECK(r.predicted == 1);
  CHECK(r.evidence_score == doctest::Approx(2.0 / 3.0));
  CHECK(r.text == "Left frontal spikes.\nFrequent.");
  CHECK(r.source_case_id == "a");
  CHECK_FALSE(r.fallback);
  CHECK(r.remote == report::RemoteOutcome::none);

  // Negative decision gives the normal template.
  r = report::generate_from_evidence(hits({{"c", 0}, {"a", 1}, {"c2", 0}}), store, cfg);
  CHECK(r.predicted == 0);
  CHECK(r.text == "Normal EEG.");
  CHECK(r.source_case_id == kNormalTemplateId);

  // Only the first `references` hits are eligible.
  report::GenerateOptions opts;
  opts.references = 1;
  r = report::generate_from_evidence(hits({{"c", 0}, {"a", 1}, {"b", 1}}), store, {3, 0.5}, opts);
  CHECK(r.text == store.at("c").report);
  CHECK(r.fallback);
  opts.references = 0;
  CHECK_THROWS_AS(report::generate_from_evidence(hits({{"a", 1}}), store, {1, 0.5}, opts), Error);
  CHECK_THROWS_AS(report::generate_from_evidence(hits({{"a", 1}}), store, {3, 0.5}), Error);
}

TEST_CASE("self-retrieval with K = 1 and gamma = 1 returns the stored report") {
  auto recs = store_records();
  report::CaseStore store(recs);
  recs.pop_back();
  const auto idx = index::build(recs);
  for (const auto& rec : recs) {
    const auto r = report::generate(rec.case_id, *rec.embedding, idx, store, {1, 1.0});
    if (rec.label == 1) {
      CHECK(r.text == rec.report);
      CHECK(r.source_case_id == rec.case_id);
    } else {
      CHECK(r.text == "Normal EEG.");
    }
  }
}

TEST_CASE("report JSONL round trip") {
  testutil::TempDir d;
  report::CaseStore store(store_records());
  std::vector<report::GeneratedReport> rs;
  rs.push_back(report::generate_from_evidence(hits({{"a", 1}, {"b", 1}, {"c", 0}}), store, {3, 0.5}));
  rs.push_back(report::generate_from_evidence(hits({{"c", 0}, {"c", 0}, {"a", 1}}), store, {3, 0.5}));
  rs[1].remote = report::RemoteOutcome::violation;
  rs[1].remote_error = "quote \" and \n newline";
  report::save_reports(rs, d / "r.jsonl");
  CHECK(report::load_reports(d / "r.jsonl") == rs);
  io::write_atomic(d / "bad.jsonl", report::to_jsonl_line(rs[0]) + "\n{oops\n");
  try {
    report::load_reports(d / "bad.jsonl");
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(std::string(e.what()).find(":2:") != std::string::npos);
  }
}

TEST_CASE("remote request and response shapes") {
  report::RemoteConfig cfg;
  cfg.endpoint = "http://localhost:1/x";
  const auto body = nlohmann::json::parse(report::remote_request_body(cfg, "hello"));
  CHECK(body["temperature"] == 0);
  CHECK(body["messages"][0]["content"] == "hello");
  CHECK(report::parse_remote_response(R"({"choices":[{"message":{"content":"x y"}}]})") == "x y");
  CHECK_THROWS_AS(report::parse_remote_response("{}"), Error);
  CHECK_THROWS_AS(report::parse_remote_response("not json"), Error);
  CHECK_THROWS_AS(report::RemoteClient(report::RemoteConfig{"ftp://x", 1.0}), Error);
  CHECK_THROWS_AS(report::RemoteClient(report::RemoteConfig{"http://x", 0.0}), Error);
}

TEST_CASE("remote: compliant completion is accepted byte for byte") {
  mock::Server server(mock::echo_first);
  report::RemoteConfig rc;
  rc.endpoint = server.endpoint();
  rc.timeout_s = 5;
  rc.api_key = "secret";
  report::RemoteClient client(rc);
  report::CaseStore store(store_records());
  report::GenerateOptions opts;
  opts.mode = report::Mode::remote;
  opts.client = &client;
  const auto r = report::generate_from_evidence(hits({{"b", 1}, {"a", 1}, {"d", 1}}), store, {3, 0.5}, opts);
  CHECK(r.remote == report::RemoteOutcome::accepted);
  CHECK(r.text == store.at("b").report);
  CHECK(r.source_case_id == "b");
  CHECK(client.counters().accepted == 1);
  CHECK(client.counters().violations == 0);
  REQUIRE(server.bodies().size() == 1);
  const auto sent = nlohmann::json::parse(server.bodies()[0]);
  CHECK(mock::references_in(sent["messages"][0]["content"]) ==
        std::vector<std::string>{store.at("b").report, store.at("a").report, store.at("d").report});
  CHECK(server.auth_headers()[0] == "Bearer secret");

  // The normal path never calls the endpoint.
  report::generate_from_evidence(hits({{"c", 0}, {"c", 0}, {"c", 0}}), store, {3, 0.5}, opts);
  CHECK(client.counters().requests == 1);
}

TEST_CASE("remote: edited completion is a violation and the local choice stands") {
  mock::Server server(mock::edit_first);
  report::RemoteClient client({server.endpoint(), 5.0});
  report::CaseStore store(store_records());
  report::GenerateOptions opts;
  opts.mode = report::Mode::remote;
  opts.client = &client;
  const auto local = report::generate_from_evidence(hits({{"c", 0}, {"d", 1}, {"a", 1}}), store, {3, 0.5});
  const auto r = report::generate_from_evidence(hits({{"c", 0}, {"d", 1}, {"a", 1}}), store, {3, 0.5}, opts);
  CHECK(r.remote == report::RemoteOutcome::violation);
  CHECK(r.text == local.text);
  CHECK(r.text == store.at("d").report);
  CHECK(client.counters().violations == 1);
  CHECK(client.counters().accepted == 0);
}

TEST_CASE("remote: HTTP errors and unreachable hosts fall back") {
  report::CaseStore store(store_records());
  report::GenerateOptions opts;
  opts.mode = report::Mode::remote;
  {
    mock::Server server(mock::echo_first, 503);
    report::RemoteClient client({server.endpoint(), 5.0});
    opts.client = &client;
    const auto r = report::generate_from_evidence(hits({{"a", 1}, {"b", 1}, {"d", 1}}), store, {3, 0.5}, opts);
    CHECK(r.remote == report::RemoteOutcome::failed);
    CHECK(r.remote_error.find("503") != std::string::npos);
    CHECK(r.text == store.at("a").report);
    CHECK(client.counters().failures == 1);
  }
  std::string endpoint;
  {
    mock::Server gone(mock::echo_first);
    endpoint = gone.endpoint();
  }
  report::RemoteClient client({endpoint, 1.0});
  opts.client = &client;
  const auto r = report::generate_from_evidence(hits({{"a", 1}, {"b", 1}, {"d", 1}}), store, {3, 0.5}, opts);
  CHECK(r.remote == report::RemoteOutcome::failed);
  CHECK(r.text == store.at("a").report);
  opts.client = nullptr;
  CHECK_THROWS_AS(report::generate_from_evidence(hits({{"a", 1}, {"b", 1}, {"d", 1}}), store, {3, 0.5}, opts), Error);
}

TEST_CASE("remote: concurrent callers respect the in-flight limit") {
  std::atomic<int> now{0}, peak{0};
  mock::Server server([&](const std::string& p) {
    const int n = ++now;
    int prev = peak.load();
    while (n > prev && !peak.compare_exchange_weak(prev, n)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(30));
    --now;
    return mock::echo_first(p);
  });
  report::RemoteConfig rc{server.endpoint(), 5.0};
  rc.max_in_flight = 2;
  report::RemoteClient client(rc);
  std::vector<std::thread> ts;
  for (int i = 0; i < 6; ++i) {
    ts.emplace_back([&] { CHECK(client.complete(report::assemble_prompt(report::PromptTemplate::defaults(), {"x"})) == "x"); });
  }
  for (auto& t : ts) t.join();
  CHECK(client.counters().requests == 6);
  CHECK(peak.load() <= 2);
}
