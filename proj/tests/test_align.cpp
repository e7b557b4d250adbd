#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "evidexr/align.hpp"
#include "evidexr/io.hpp"
#include "evidexr/random.hpp"
#include "evidexr/synth.hpp"
#include "evidexr/pipeline.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include <cmath>
#include <numeric>

using namespace evidexr;
using namespace evidexr::align;

namespace {

double norm(const Embedding& e) {
  double s = 0;
  for (float v : e) s += static_cast<double>(v) * v;
  return std::sqrt(s);
}

EncoderConfig tiny_config() {
  EncoderConfig c;
  c.channels = 3;
  c.samples = 40;
  c.filters = 2;
  c.kernel = 5;
  c.pool = 3;
  c.eeg_hidden = 8;
  c.token_dim = 6;
  c.text_hidden = 8;
  c.dim = 4;
  return c;
}

Segment random_segment(const EncoderConfig& c, Rng& rng, const std::string& id) {
  Segment s{id, "s", 0.0, c.channels, c.samples, std::vector<float>(c.channels * c.samples), 0};
  for (auto& v : s.data) v = static_cast<float>(rng.normal() * 10.0);
  return s;
}

std::vector<double> random_rows(std::size_t n, std::size_t d, Rng& rng, bool unit) {
  std::vector<double> x(n * d);
  for (auto& v : x) v = rng.normal();
  if (unit) {
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0;
      for (std::size_t k = 0; k < d; ++k) s += x[i * d + k] * x[i * d + k];
      for (std::size_t k = 0; k < d; ++k) x[i * d + k] /= std::sqrt(s);
    }
  }
  return x;
}

// Elementwise relative error with a small absolute floor in the denominator.
double rel_err(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-8});
}

}  // namespace

TEST_CASE("word pieces and vocabulary") {
  CHECK(word_pieces("Spike-and-wave, LEFT T3!") == std::vector<std::string>{"spike", "and", "wave", "left", "t3"});
  CHECK(word_pieces("  ").empty());
  const auto v = Vocabulary::build({"a b", "b c"});
  CHECK(v.size() == 4);
  CHECK(v.encode("c a zzz") == std::vector<int>{3, 1, Vocabulary::kUnknown});
}

TEST_CASE("EEG embeddings are unit-norm and deterministic") {
  Rng rng(1);
  const auto cfg = tiny_config();
  const auto p = init_params(cfg, Vocabulary::build({"x"}), 5);
  for (int i = 0; i < 20; ++i) {
    const auto s = random_segment(cfg, rng, "s");
    const auto e = encode_eeg(p, s);
    CHECK(e.size() == cfg.dim);
    CHECK(norm(e) == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(encode_eeg(p, s) == e);
  }
  Segment wrong{"w", "s", 0.0, 2, cfg.samples, std::vector<float>(2 * cfg.samples), 0};
  CHECK_THROWS_AS(encode_eeg(p, wrong), Error);
}

TEST_CASE("linear configuration: scaling the input keeps the direction") {
  Rng rng(2);
  auto cfg = tiny_config();
  cfg.linear = true;
  auto p = init_params(cfg, Vocabulary::build({"x"}), 3);
  // Zero every additive term so the whole path is positively homogeneous.
  for (auto& v : p.conv_bias.data) v = 0.0;
  for (auto& v : p.eeg_head.b1.data) v = 0.0;
  for (auto& v : p.eeg_head.b2.data) v = 0.0;
  for (auto& v : p.eeg_head.beta.data) v = 0.0;
  for (auto& v : p.eeg_head.run_mean.data) v = 0.0;
  for (int i = 0; i < 10; ++i) {
    auto s = random_segment(cfg, rng, "s");
    const auto a = encode_eeg(p, s);
    for (auto& v : s.data) v *= 2.0f;
    const auto b = encode_eeg(p, s);
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(b[k] == doctest::Approx(a[k]).epsilon(1e-5));
  }
}

TEST_CASE("text embeddings: unit norm, truncation, permutation, errors") {
  const auto cfg = tiny_config();
  std::vector<std::string> words;
  for (int i = 0; i < 100; ++i) words.push_back("w" + std::to_string(i));
  std::string all;
  for (const auto& w : words) all += w + " ";
  const auto vocab = Vocabulary::build({all});
  const auto p = init_params(cfg, vocab, 9);

  const auto toks = vocab.encode(all);
  REQUIRE(toks.size() == 100);
  CHECK(norm(encode_text(p, toks)) == doctest::Approx(1.0).epsilon(1e-6));
  const std::vector<int> first77(toks.begin(), toks.begin() + 77);
  CHECK(encode_text(p, toks) == encode_text(p, first77));

  std::vector<int> perm = {5, 9, 1, 33, 2};
  const auto a = encode_text(p, perm);
  std::reverse(perm.begin(), perm.end());
  const auto b = encode_text(p, perm);
  for (std::size_t k = 0; k < a.size(); ++k) CHECK(b[k] == doctest::Approx(a[k]).epsilon(1e-6));

  CHECK_THROWS_AS(encode_text(p, std::vector<int>{}), Error);
  CHECK_THROWS_AS(encode_text(p, std::vector<int>{1000}), Error);
}

TEST_CASE("InfoNCE: degenerate and hand-computed values") {
  const std::vector<double> one = {1.0, 0.0};
  CHECK(info_nce_loss(one, one, 1, 2, 0.07).loss == 0.0);

  const std::vector<double> eye = {1.0, 0.0, 0.0, 1.0};
  const auto r = info_nce_loss(eye, eye, 2, 2, 1.0);
  CHECK(r.loss == doctest::Approx(std::log(1.0 + std::exp(-1.0))).epsilon(1e-12));
  CHECK(r.loss == doctest::Approx(0.313262).epsilon(1e-6));

  CHECK_THROWS_AS(info_nce_loss(eye, eye, 2, 2, 0.0), Error);
  std::vector<double> bad = eye;
  bad[1] = NAN;
  CHECK_THROWS_AS(info_nce_loss(bad, eye, 2, 2, 1.0), Error);
}

TEST_CASE("InfoNCE matches direct summation, is symmetric and permutation-invariant") {
  Rng rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.index(16), d = 1 + rng.index(32);
    const double tau = 0.02 + rng.uniform();
    const auto Z = random_rows(n, d, rng, true), U = random_rows(n, d, rng, true);
    const double loss = info_nce_loss(Z, U, n, d, tau).loss;
    CHECK(loss >= 0.0);
    CHECK(loss == doctest::Approx(oracle::info_nce(Z, U, n, d, tau)).epsilon(1e-10));
    CHECK(info_nce_loss(U, Z, n, d, tau).loss == doctest::Approx(loss).epsilon(1e-12));

    std::vector<std::size_t> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    std::vector<double> Zp(n * d), Up(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t k = 0; k < d; ++k) {
        Zp[i * d + k] = Z[perm[i] * d + k];
        Up[i * d + k] = U[perm[i] * d + k];
      }
    }
    CHECK(info_nce_loss(Zp, Up, n, d, tau).loss == doctest::Approx(loss).epsilon(1e-12));
  }
}

TEST_CASE("InfoNCE gradients agree with central differences") {
  Rng rng(12);
  const double eps = 1e-5;
  for (std::size_t d : {4u, 16u, 64u}) {
    for (std::size_t n : {2u, 8u, 32u}) {
      const double tau = 0.05 + 0.5 * rng.uniform();
      auto Z = random_rows(n, d, rng, true), U = random_rows(n, d, rng, true);
      const auto r = info_nce_loss(Z, U, n, d, tau);
      double worst = 0;
      for (std::size_t i = 0; i < n * d; ++i) {
        for (auto [X, G] : {std::pair{&Z, &r.dZ}, std::pair{&U, &r.dU}}) {
          const double keep = (*X)[i];
          (*X)[i] = keep + eps;
          const double up = oracle::info_nce(Z, U, n, d, tau);
          (*X)[i] = keep - eps;
          const double down = oracle::info_nce(Z, U, n, d, tau);
          (*X)[i] = keep;
          worst = std::max(worst, rel_err((*G)[i], (up - down) / (2 * eps)));
        }
      }
      const double fd_tau = (oracle::info_nce(Z, U, n, d, tau + eps) - oracle::info_nce(Z, U, n, d, tau - eps)) / (2 * eps);
      worst = std::max(worst, rel_err(r.dtau, fd_tau));
      INFO("d=" << d << " n=" << n);
      CHECK(worst < 1e-4);
    }
  }
}

TEST_CASE("network gradients agree with central differences") {
  Rng rng(13);
  const auto cfg = tiny_config();
  const auto vocab = Vocabulary::build({"left frontal spikes", "right occipital sharp waves", "normal record"});
  std::vector<Segment> segs;
  std::vector<TrainPair> pairs;
  const char* texts[] = {"left frontal spikes", "right occipital sharp waves", "normal record", "left sharp waves"};
  for (int i = 0; i < 4; ++i) segs.push_back(random_segment(cfg, rng, std::to_string(i)));
  for (int i = 0; i < 4; ++i) pairs.push_back(TrainPair{&segs[i], vocab.encode(texts[i]), i % 2});

  for (Objective obj : {Objective::contrastive, Objective::supervised}) {
    auto p = init_params(cfg, vocab, 21);
    p.objective = obj;
    const auto grads = batch_gradients(p, pairs, obj);
    std::vector<Tensor*> tensors;
    p.visit([&](const std::string&, Tensor& t, bool trainable, bool) { tensors.push_back(trainable ? &t : nullptr); });
    REQUIRE(tensors.size() == grads.size());
    const double eps = 1e-6;
    std::size_t checked = 0;
    for (std::size_t ti = 0; ti < tensors.size(); ++ti) {
      if (!tensors[ti]) continue;
      Tensor& t = *tensors[ti];
      for (int trial = 0; trial < 6 && t.size() > 0; ++trial) {
        const std::size_t i = rng.index(t.size());
        const double keep = t[i];
        t[i] = keep + eps;
        const double up = evaluate_loss(p, pairs, obj);
        t[i] = keep - eps;
        const double down = evaluate_loss(p, pairs, obj);
        t[i] = keep;
        const double fd = (up - down) / (2 * eps);
        INFO("tensor " << ti << " index " << i);
        CHECK(std::abs(grads[ti][i] - fd) <= 1e-5 * std::max(1.0, std::abs(fd)));
        ++checked;
      }
    }
    CHECK(checked > 20);
  }
}

TEST_CASE("params round trip through the binary file") {
  testutil::TempDir d;
  const auto p = init_params(tiny_config(), Vocabulary::build({"a b c"}), 4);
  save_params(p, d / "p.bin");
  const auto q = load_params(d / "p.bin");
  CHECK(q.same_weights(p));
  CHECK(q.vocab.tokens() == p.vocab.tokens());
  CHECK(q.cfg.kernel == p.cfg.kernel);

  auto bytes = io::read_file(d / "p.bin");
  bytes.resize(bytes.size() - 3);
  io::write_atomic(d / "p.bin", bytes);
  CHECK_THROWS_AS(load_params(d / "p.bin"), Error);
}

TEST_CASE("training: zero epochs, determinism, validation") {
  Rng rng(14);
  const auto cfg = tiny_config();
  std::vector<Segment> segs;
  std::vector<std::string> reports;
  for (int i = 0; i < 24; ++i) {
    segs.push_back(random_segment(cfg, rng, std::to_string(i)));
    reports.push_back(i % 2 ? "spikes left" : "normal background");
  }
  std::vector<const Segment*> ptrs;
  for (const auto& s : segs) ptrs.push_back(&s);

  TrainConfig tc;
  tc.batch_size = 8;
  tc.seed = 3;
  tc.epochs = 0;
  const auto zero = train(ptrs, reports, cfg, tc);
  CHECK(zero.params.same_weights(init_params(cfg, Vocabulary::build(reports), tc.seed)));
  CHECK(zero.batch_losses.empty());

  tc.epochs = 3;
  const auto a = train(ptrs, reports, cfg, tc);
  const auto b = train(ptrs, reports, cfg, tc);
  CHECK(a.params.same_weights(b.params));
  CHECK(a.batch_losses == b.batch_losses);
  CHECK_FALSE(a.params.same_weights(zero.params));
  CHECK(a.validation_losses.size() == 3);

  tc.batch_size = 1;
  CHECK_THROWS_AS(train(ptrs, reports, cfg, tc), Error);
  tc.batch_size = 64;
  CHECK_THROWS_AS(train(ptrs, reports, cfg, tc), Error);
}

TEST_CASE("training on a two-class synthetic corpus improves alignment") {
  synth::SynthConfig sc = pipeline::bench_synth();
  sc.n_subjects = 1;  // one focus: exactly two report texts
  sc.minutes = 3.0;
  sc.seed = 31;
  sc.report_templates = {"Interictal spikes over the {side} {region} leads."};
  const auto corpus = synth::gen_corpus(sc);
  pipeline::SegmentOptions so;
  so.per_class = 80;
  so.seed = 31;
  so.seg.stride_s = 0.25;
  const auto set = pipeline::build_segment_set(corpus.dataset, so);

  TrainConfig tc = pipeline::bench_training();
  tc.epochs = 20;
  tc.seed = 31;
  tc.validation_fraction = 0.2;
  const auto res = pipeline::train_encoder(set, pipeline::bench_encoder(), tc);
  REQUIRE_FALSE(res.batch_losses.empty());
  CHECK(res.batch_losses.back() < res.batch_losses.front());

  // Held-out pairs: same recipe, different seed.
  sc.seed = 32;
  so.seed = 32;
  so.per_class = 16;
  const auto held = pipeline::build_segment_set(synth::gen_corpus(sc).dataset, so);
  double diag = 0, off = 0;
  std::size_t nd = 0, no = 0;
  std::vector<Embedding> z, u;
  for (std::size_t i = 0; i < held.segments.size(); ++i) {
    z.push_back(encode_eeg(res.params, held.segments[i]));
    u.push_back(encode_text(res.params, res.params.vocab.encode(held.records[i].report)));
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    for (std::size_t j = 0; j < u.size(); ++j) {
      double dot = 0;
      for (std::size_t k = 0; k < z[i].size(); ++k) dot += static_cast<double>(z[i][k]) * u[j][k];
      if (i == j) {
        diag += dot;
        ++nd;
      } else {
        off += dot;
        ++no;
      }
    }
  }
  CHECK(diag / static_cast<double>(nd) > off / static_cast<double>(no));
}
