#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "evidexr/eval.hpp"
#include "evidexr/io.hpp"
#include "metric_suite.hpp"

#include <json.hpp>

using namespace evidexr;

TEST_CASE("every metric agrees with its oracle") {
  for (const auto& r : metric_suite::run()) {
    INFO(r.metric);
    CHECK(r.cases >= 20);
    CHECK(r.max_error <= 1e-9);
    for (const auto& f : r.failures) FAIL_CHECK(f);
  }
}

TEST_CASE("oracle agreement holds across seeds") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    for (const auto& r : metric_suite::run(seed, 100)) {
      INFO(r.metric << " seed " << seed);
      CHECK(r.failures.empty());
    }
  }
}

TEST_CASE("confusion counts and errors") {
  const std::vector<Label> pred{1, 0, 1, 0, 1}, label{1, 1, 0, 0, 1};
  const auto c = eval::confusion(pred, label);
  CHECK(c == eval::ConfusionCounts{2, 1, 1, 1});
  CHECK(c.total() == 5);
  CHECK_THROWS_AS(eval::confusion(pred, std::vector<Label>{1}), Error);
  eval::ConfusionCounts only_pos;
  only_pos.tp = 3;
  only_pos.fn = 1;
  CHECK_THROWS_AS(eval::balanced_accuracy(only_pos), Error);
  eval::ConfusionCounts only_neg;
  only_neg.tn = 2;
  CHECK_THROWS_AS(eval::balanced_accuracy(only_neg), Error);
}

TEST_CASE("ranking metric errors and depth") {
  eval::RankedRelevance r{1, {0, 1}};
  CHECK_THROWS_AS(eval::precision_at_k(r, 3), Error);
  CHECK_THROWS_AS(eval::precision_at_k(r, 0), Error);
  CHECK_THROWS_AS(eval::average_precision(r, 10), Error);
  CHECK(eval::average_precision(r, 2) == doctest::Approx(0.5));
  const auto mm = eval::map_mrr({eval::RankedRelevance{1, {0, 1, 0, 1}}, eval::RankedRelevance{0, {0, 1, 1, 1}}}, 4);
  CHECK(mm.map == doctest::Approx(0.75));
  CHECK(mm.mrr == doctest::Approx(0.75));
  CHECK_THROWS_AS(eval::map_mrr({}, 4), Error);
}

TEST_CASE("tokenizer") {
  CHECK(eval::tokenize("Sharp WAVE, at F3.") ==
        std::vector<std::string>{"sharp", "wave", ",", "at", "f3", "."});
  CHECK(eval::tokenize("  \n\t ").empty());
  CHECK(eval::tokenize("caf\xc3\xa9 ok") == std::vector<std::string>{"caf\xc3\xa9", "ok"});
}

TEST_CASE("bleu breakdown and rouge errors") {
  const auto b = eval::bleu(eval::tokenize("a b c"), eval::tokenize("a b c d"));
  CHECK(b.included == std::array<bool, 4>{true, true, true, false});
  CHECK(b.precision[0] == 1.0);
  CHECK(b.candidate_len == 3);
  CHECK(b.reference_len == 4);
  CHECK(b.score == doctest::Approx(0.716531).epsilon(1e-6));
  CHECK(eval::bleu(eval::tokenize("a b c d e"), eval::tokenize("a b c d")).brevity_penalty == 1.0);
  CHECK_THROWS_AS(eval::rouge_n(eval::tokenize("a"), eval::tokenize("a"), 2), Error);
  CHECK_THROWS_AS(eval::rouge_n(eval::tokenize("a"), {}, 1), Error);
  CHECK_THROWS_AS(eval::rouge_l(eval::tokenize("a"), {}), Error);
}

TEST_CASE("bundle evaluation and JSON") {
  std::vector<eval::QueryOutcome> qs = {
      {"q1", 1, 1, {1, 0, 1}, "spike at f3", "spike at f3"},
      {"q2", 0, 1, {1, 0, 0}, "spike at f3", "normal record"},
      {"q3", 0, 0, {0, 0, 0}, "normal record", "normal record"},
  };
  const auto b = eval::evaluate(qs, 3, {1, 3});
  CHECK(b.queries == 3);
  CHECK(b.balanced_accuracy == doctest::Approx(0.75));
  // AP: (1 + 2/3)/2, (1/2 + 2/3)/2, 1
  CHECK(b.map == doctest::Approx((5.0 / 6.0 + 7.0 / 12.0 + 1.0) / 3.0));
  CHECK(b.precision_at[0] == doctest::Approx(2.0 / 3.0));
  CHECK(b.hit_at[1] == doctest::Approx(1.0));
  CHECK(b.bleu == doctest::Approx(2.0 / 3.0));
  CHECK(b.rougeL == doctest::Approx(2.0 / 3.0));

  const auto j = nlohmann::json::parse(eval::to_json(b));
  CHECK(j["schema"] == eval::kMetricSchema);
  CHECK(j["detection"]["BA"].get<double>() == doctest::Approx(0.75));
  CHECK(j["retrieval"]["P@3"].is_number());
  CHECK(j["generation"]["ROUGE-L"].is_number());
  CHECK_THROWS_AS(eval::evaluate({}, 3, {1}), Error);
}
