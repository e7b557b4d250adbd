#include "evidexr/align.hpp"

#include "evidexr/io.hpp"
#include "evidexr/random.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>

namespace evidexr::align {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Tokenizer

std::vector<std::string> word_pieces(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    const auto u = static_cast<unsigned char>(ch);
    if (std::isalnum(u)) {
      cur.push_back(static_cast<char>(std::tolower(u)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

Vocabulary::Vocabulary() { add("<unk>"); }

int Vocabulary::add(const std::string& token) {
  auto [it, inserted] = ids_.emplace(token, static_cast<int>(tokens_.size()));
  if (inserted) tokens_.push_back(token);
  return it->second;
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts) {
  Vocabulary v;
  for (const auto& t : texts) {
    for (const auto& w : word_pieces(t)) v.add(w);
  }
  return v;
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& w : word_pieces(text)) {
    auto it = ids_.find(w);
    ids.push_back(it == ids_.end() ? kUnknown : it->second);
  }
  return ids;
}

// ---------------------------------------------------------------------------
// Parameters

Tensor::Tensor(std::vector<std::size_t> s, double fill) : shape(std::move(s)) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  data.assign(n, fill);
}

double EncoderParams::tau() const { return std::exp(log_tau[0]); }

namespace {

template <typename Params, typename Fn>
void visit_impl(Params& p, Fn&& fn) {
  fn("eeg.spatial", p.spatial, true, true);
  fn("eeg.temporal", p.temporal, true, true);
  fn("eeg.conv_bias", p.conv_bias, true, false);
  auto head = [&](const std::string& prefix, auto& h) {
    fn(prefix + ".w1", h.w1, true, true);
    fn(prefix + ".b1", h.b1, true, false);
    fn(prefix + ".bn_gamma", h.gamma, true, false);
    fn(prefix + ".bn_beta", h.beta, true, false);
    fn(prefix + ".bn_running_mean", h.run_mean, false, false);
    fn(prefix + ".bn_running_var", h.run_var, false, false);
    fn(prefix + ".w2", h.w2, true, true);
    fn(prefix + ".b2", h.b2, true, false);
  };
  head("eeg.head", p.eeg_head);
  fn("text.token_table", p.token_table, true, true);
  head("text.head", p.text_head);
  fn("log_tau", p.log_tau, true, false);
  fn("cls.w", p.cls_w, true, true);
  fn("cls.b", p.cls_b, true, false);
}

std::vector<Tensor*> tensors_of(EncoderParams& p) {
  std::vector<Tensor*> out;
  p.visit([&](const std::string&, Tensor& t, bool, bool) { out.push_back(&t); });
  return out;
}

ProjectionHead make_head(std::size_t in, std::size_t hidden, std::size_t dim, Rng& rng) {
  ProjectionHead h;
  auto uni = [&](Tensor& t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
  };
  h.w1 = Tensor({hidden, in});
  h.b1 = Tensor({hidden});
  uni(h.w1, in);
  uni(h.b1, in);
  h.gamma = Tensor({hidden}, 1.0);
  h.beta = Tensor({hidden}, 0.0);
  h.run_mean = Tensor({hidden}, 0.0);
  h.run_var = Tensor({hidden}, 1.0);
  h.w2 = Tensor({dim, hidden});
  h.b2 = Tensor({dim});
  uni(h.w2, hidden);
  uni(h.b2, hidden);
  return h;
}

const char* objective_name(Objective o) {
  return o == Objective::contrastive ? "contrastive" : "supervised";
}

Objective parse_objective(const std::string& s) {
  if (s == "contrastive") return Objective::contrastive;
  if (s == "supervised") return Objective::supervised;
  throw Error("unknown objective: " + s);
}

json config_to_json(const EncoderConfig& c) {
  return json{{"channels", c.channels},     {"samples", c.samples},       {"filters", c.filters},
              {"kernel", c.kernel},         {"pool", c.pool},             {"eeg_hidden", c.eeg_hidden},
              {"vocab", c.vocab},           {"token_dim", c.token_dim},   {"text_hidden", c.text_hidden},
              {"dim", c.dim},               {"max_tokens", c.max_tokens}, {"dropout", c.dropout},
              {"bn_momentum", c.bn_momentum}, {"bn_eps", c.bn_eps},       {"init_tau", c.init_tau},
              {"linear", c.linear}};
}

EncoderConfig config_from_json(const json& j) {
  EncoderConfig c;
  c.channels = j.at("channels");
  c.samples = j.at("samples");
  c.filters = j.at("filters");
  c.kernel = j.at("kernel");
  c.pool = j.at("pool");
  c.eeg_hidden = j.at("eeg_hidden");
  c.vocab = j.at("vocab");
  c.token_dim = j.at("token_dim");
  c.text_hidden = j.at("text_hidden");
  c.dim = j.at("dim");
  c.max_tokens = j.at("max_tokens");
  c.dropout = j.at("dropout");
  c.bn_momentum = j.at("bn_momentum");
  c.bn_eps = j.at("bn_eps");
  c.init_tau = j.at("init_tau");
  c.linear = j.at("linear");
  return c;
}

}  // namespace

void EncoderParams::visit(const std::function<void(const std::string&, Tensor&, bool, bool)>& fn) {
  visit_impl(*this, fn);
}

void EncoderParams::visit(
    const std::function<void(const std::string&, const Tensor&, bool, bool)>& fn) const {
  visit_impl(*this, fn);
}

bool EncoderParams::same_weights(const EncoderParams& other) const {
  std::vector<const Tensor*> a, b;
  visit([&](const std::string&, const Tensor& t, bool, bool) { a.push_back(&t); });
  other.visit([&](const std::string&, const Tensor& t, bool, bool) { b.push_back(&t); });
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!(*a[i] == *b[i])) return false;
  }
  return true;
}

EncoderParams init_params(const EncoderConfig& cfg_in, Vocabulary vocab, std::uint64_t seed) {
  EncoderConfig cfg = cfg_in;
  cfg.vocab = vocab.size();
  if (cfg.samples < cfg.kernel || cfg.pooled_len() == 0) throw Error("segment too short for the encoder");
  if (cfg.dim == 0 || cfg.filters == 0 || cfg.channels == 0) throw Error("encoder dimensions must be >= 1");
  if (!(cfg.init_tau > 0.0)) throw Error("initial tau must be > 0");
  EncoderParams p;
  p.cfg = cfg;
  p.vocab = std::move(vocab);
  p.seed = seed;
  Rng rng(seed);
  auto uni = [&](Tensor& t, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (double& v : t.data) v = rng.uniform(-bound, bound);
  };
  p.spatial = Tensor({cfg.filters, cfg.channels});
  uni(p.spatial, cfg.channels);
  p.temporal = Tensor({cfg.filters, cfg.kernel});
  uni(p.temporal, cfg.kernel);
  p.conv_bias = Tensor({cfg.filters});
  uni(p.conv_bias, cfg.kernel);
  p.eeg_head = make_head(cfg.eeg_features(), cfg.eeg_hidden, cfg.dim, rng);
  p.token_table = Tensor({cfg.vocab, cfg.token_dim});
  uni(p.token_table, cfg.token_dim);
  p.text_head = make_head(cfg.token_dim, cfg.text_hidden, cfg.dim, rng);
  p.log_tau = Tensor({1}, std::log(cfg.init_tau));
  p.cls_w = Tensor({cfg.dim});
  p.cls_b = Tensor({1});
  uni(p.cls_w, cfg.dim);
  uni(p.cls_b, cfg.dim);
  return p;
}

void save_params(const EncoderParams& p, const std::filesystem::path& path) {
  json meta{{"config", config_to_json(p.cfg)},
            {"objective", objective_name(p.objective)},
            {"seed", p.seed},
            {"vocab", p.vocab.tokens()}};
  io::Writer w;
  w.header(io::kParamsMagic, 1);
  w.str(meta.dump());
  std::vector<std::pair<std::string, const Tensor*>> all;
  p.visit([&](const std::string& name, const Tensor& t, bool, bool) { all.emplace_back(name, &t); });
  w.u32(static_cast<std::uint32_t>(all.size()));
  for (const auto& [name, t] : all) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(t->shape.size()));
    for (auto d : t->shape) w.u64(d);
    w.f64s(t->data);
  }
  io::write_atomic(path, w.bytes());
}

EncoderParams load_params(const std::filesystem::path& path) {
  io::Reader r(io::read_file(path), path.string());
  if (r.header(io::kParamsMagic) != 1) throw Error(path.string() + ": unsupported params version");
  EncoderParams p;
  try {
    const json meta = json::parse(r.str());
    p.cfg = config_from_json(meta.at("config"));
    p.objective = parse_objective(meta.at("objective").get<std::string>());
    p.seed = meta.at("seed").get<std::uint64_t>();
    Vocabulary v;
    const auto tokens = meta.at("vocab").get<std::vector<std::string>>();
    for (std::size_t i = 1; i < tokens.size(); ++i) v.add(tokens[i]);
    p.vocab = std::move(v);
  } catch (const json::exception& e) {
    throw Error(path.string() + ": bad metadata: " + e.what());
  }
  std::vector<std::pair<std::string, Tensor*>> all;
  p.visit([&](const std::string& name, Tensor& t, bool, bool) { all.emplace_back(name, &t); });
  const std::uint32_t count = r.u32();
  if (count != all.size()) throw Error(path.string() + ": tensor count mismatch");
  for (auto& [name, t] : all) {
    if (r.str() != name) throw Error(path.string() + ": expected tensor " + name);
    std::vector<std::size_t> shape(r.u32());
    for (auto& d : shape) d = r.u64();
    *t = Tensor(shape);
    r.f64s(t->data);
    for (double v : t->data) {
      if (!std::isfinite(v)) throw Error(path.string() + ": non-finite weight in " + name);
    }
  }
  if (!r.done()) throw Error(path.string() + ": trailing bytes");
  return p;
}

// ---------------------------------------------------------------------------
// Forward / backward building blocks

namespace {

void check_segment(const EncoderConfig& cfg, const Segment& seg) {
  if (seg.channels != cfg.channels || seg.samples != cfg.samples ||
      seg.data.size() != cfg.channels * cfg.samples) {
    throw Error("segment " + seg.id + " shape " + std::to_string(seg.channels) + "x" +
                std::to_string(seg.samples) + " does not match encoder " + std::to_string(cfg.channels) +
                "x" + std::to_string(cfg.samples));
  }
}

struct TrunkCache {
  std::vector<double> mix;               // filters x samples
  std::vector<std::uint32_t> argmax;     // filters x pooled_len, index into conv row
};

// Spatial weighting -> temporal convolution -> max-pool. `feat` gets filters x pooled_len.
void trunk_forward(const EncoderParams& p, const Segment& seg, double* feat, TrunkCache* cache) {
  const auto& c = p.cfg;
  const std::size_t T = c.samples, L = c.conv_len(), P = c.pooled_len();
  std::vector<double> mix(c.filters * T, 0.0);
  for (std::size_t f = 0; f < c.filters; ++f) {
    double* m = mix.data() + f * T;
    for (std::size_t ch = 0; ch < c.channels; ++ch) {
      const double w = p.spatial[f * c.channels + ch];
      const float* x = seg.channel(ch);
      for (std::size_t t = 0; t < T; ++t) m[t] += w * static_cast<double>(x[t]);
    }
  }
  std::vector<double> conv(L);
  if (cache) cache->argmax.assign(c.filters * P, 0);
  for (std::size_t f = 0; f < c.filters; ++f) {
    const double* m = mix.data() + f * T;
    std::fill(conv.begin(), conv.end(), p.conv_bias[f]);
    for (std::size_t k = 0; k < c.kernel; ++k) {
      const double w = p.temporal[f * c.kernel + k];
      const double* src = m + k;
      for (std::size_t t = 0; t < L; ++t) conv[t] += w * src[t];
    }
    for (std::size_t q = 0; q < P; ++q) {
      std::size_t best = q * c.pool;
      for (std::size_t j = 1; j < c.pool; ++j) {
        if (conv[q * c.pool + j] > conv[best]) best = q * c.pool + j;
      }
      feat[f * P + q] = conv[best];
      if (cache) cache->argmax[f * P + q] = static_cast<std::uint32_t>(best);
    }
  }
  if (cache) cache->mix = std::move(mix);
}

void trunk_backward(const EncoderParams& p, const Segment& seg, const TrunkCache& cache,
                    const double* dfeat, EncoderParams& g) {
  const auto& c = p.cfg;
  const std::size_t T = c.samples, L = c.conv_len(), P = c.pooled_len();
  std::vector<double> dconv(L);
  std::vector<double> dmix(T);
  for (std::size_t f = 0; f < c.filters; ++f) {
    std::fill(dconv.begin(), dconv.end(), 0.0);
    for (std::size_t q = 0; q < P; ++q) dconv[cache.argmax[f * P + q]] += dfeat[f * P + q];
    double db = 0.0;
    for (double v : dconv) db += v;
    g.conv_bias[f] += db;
    const double* m = cache.mix.data() + f * T;
    std::fill(dmix.begin(), dmix.end(), 0.0);
    for (std::size_t k = 0; k < c.kernel; ++k) {
      const double w = p.temporal[f * c.kernel + k];
      const double* src = m + k;
      double acc = 0.0;
      double* dst = dmix.data() + k;
      for (std::size_t t = 0; t < L; ++t) {
        acc += dconv[t] * src[t];
        dst[t] += dconv[t] * w;
      }
      g.temporal[f * c.kernel + k] += acc;
    }
    for (std::size_t ch = 0; ch < c.channels; ++ch) {
      const float* x = seg.channel(ch);
      double acc = 0.0;
      for (std::size_t t = 0; t < T; ++t) acc += dmix[t] * static_cast<double>(x[t]);
      g.spatial[f * c.channels + ch] += acc;
    }
  }
}

// Mean of token rows, after truncation to max_tokens.
void text_trunk(const EncoderParams& p, std::span<const int> tokens, double* out) {
  const auto& c = p.cfg;
  std::fill(out, out + c.token_dim, 0.0);
  const std::size_t n = std::min(tokens.size(), c.max_tokens);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = p.token_table.data.data() + static_cast<std::size_t>(tokens[i]) * c.token_dim;
    for (std::size_t j = 0; j < c.token_dim; ++j) out[j] += row[j];
  }
  for (std::size_t j = 0; j < c.token_dim; ++j) out[j] /= static_cast<double>(n);
}

void check_tokens(const EncoderParams& p, std::span<const int> tokens) {
  if (tokens.empty()) throw Error("encode_text: empty token sequence");
  const std::size_t n = std::min(tokens.size(), p.cfg.max_tokens);
  for (std::size_t i = 0; i < n; ++i) {
    if (tokens[i] < 0 || static_cast<std::size_t>(tokens[i]) >= p.cfg.vocab) {
      throw Error("encode_text: token id " + std::to_string(tokens[i]) + " outside vocabulary");
    }
  }
}

struct HeadCache {
  std::size_t batch = 0;
  std::vector<double> x;       // B x in
  std::vector<double> xhat;    // B x hidden
  std::vector<double> invstd;  // hidden
  std::vector<double> y;       // B x hidden, post-BN
  std::vector<double> mask;    // B x hidden dropout multipliers
  std::vector<double> rd;      // B x hidden, input to w2
  std::vector<double> mean, var;  // batch statistics (biased var)
};

enum class BnMode { batch, running };

// Projection head over a batch; returns B x dim. x is moved into the cache.
std::vector<double> head_forward(const ProjectionHead& h, const EncoderConfig& cfg, std::vector<double> x,
                                 std::size_t B, BnMode mode, double dropout, Rng* rng, HeadCache& cache) {
  const std::size_t in = h.w1.shape[1], H = h.w1.shape[0], D = h.w2.shape[0];
  std::vector<double> a(B * H);
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = x.data() + b * in;
    for (std::size_t j = 0; j < H; ++j) {
      const double* w = h.w1.data.data() + j * in;
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += w[i] * xb[i];
      a[b * H + j] = s + h.b1[j];
    }
  }
  cache.batch = B;
  cache.mean.assign(H, 0.0);
  cache.var.assign(H, 0.0);
  cache.invstd.assign(H, 0.0);
  if (mode == BnMode::batch) {
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < H; ++j) cache.mean[j] += a[b * H + j];
    for (auto& m : cache.mean) m /= static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b)
      for (std::size_t j = 0; j < H; ++j) {
        const double d = a[b * H + j] - cache.mean[j];
        cache.var[j] += d * d;
      }
    for (auto& v : cache.var) v /= static_cast<double>(B);
  } else {
    cache.mean = h.run_mean.data;
    cache.var = h.run_var.data;
  }
  for (std::size_t j = 0; j < H; ++j) cache.invstd[j] = 1.0 / std::sqrt(cache.var[j] + cfg.bn_eps);
  cache.xhat.resize(B * H);
  cache.y.resize(B * H);
  cache.mask.assign(B * H, 1.0);
  cache.rd.resize(B * H);
  const double keep_scale = dropout > 0.0 ? 1.0 / (1.0 - dropout) : 1.0;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < H; ++j) {
      const std::size_t k = b * H + j;
      cache.xhat[k] = (a[k] - cache.mean[j]) * cache.invstd[j];
      cache.y[k] = h.gamma[j] * cache.xhat[k] + h.beta[j];
      double r = cfg.linear ? cache.y[k] : std::max(0.0, cache.y[k]);
      if (dropout > 0.0 && rng) {
        cache.mask[k] = rng->uniform() < dropout ? 0.0 : keep_scale;
        r *= cache.mask[k];
      }
      cache.rd[k] = r;
    }
  }
  std::vector<double> out(B * D);
  for (std::size_t b = 0; b < B; ++b) {
    const double* rb = cache.rd.data() + b * H;
    for (std::size_t o = 0; o < D; ++o) {
      const double* w = h.w2.data.data() + o * H;
      double s = 0.0;
      for (std::size_t j = 0; j < H; ++j) s += w[j] * rb[j];
      out[b * D + o] = s + h.b2[o];
    }
  }
  cache.x = std::move(x);
  return out;
}

// Batch-mode backward. Returns d(input), B x in.
std::vector<double> head_backward(const ProjectionHead& h, const EncoderConfig& cfg, const HeadCache& cache,
                                  const std::vector<double>& dout, ProjectionHead& g) {
  const std::size_t in = h.w1.shape[1], H = h.w1.shape[0], D = h.w2.shape[0];
  const std::size_t B = cache.batch;
  std::vector<double> dy(B * H, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const double* rb = cache.rd.data() + b * H;
    for (std::size_t o = 0; o < D; ++o) {
      const double d = dout[b * D + o];
      g.b2[o] += d;
      double* gw = g.w2.data.data() + o * H;
      const double* w = h.w2.data.data() + o * H;
      double* dyb = dy.data() + b * H;
      for (std::size_t j = 0; j < H; ++j) {
        gw[j] += d * rb[j];
        dyb[j] += d * w[j];
      }
    }
  }
  // Through dropout and ReLU.
  for (std::size_t k = 0; k < B * H; ++k) {
    dy[k] *= cache.mask[k];
    if (!cfg.linear && cache.y[k] <= 0.0) dy[k] = 0.0;
  }
  // Through BatchNorm (batch statistics).
  std::vector<double> da(B * H);
  for (std::size_t j = 0; j < H; ++j) {
    double sum_dxhat = 0.0, sum_dxhat_xhat = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t k = b * H + j;
      g.beta[j] += dy[k];
      g.gamma[j] += dy[k] * cache.xhat[k];
      const double dxhat = dy[k] * h.gamma[j];
      sum_dxhat += dxhat;
      sum_dxhat_xhat += dxhat * cache.xhat[k];
    }
    const double nb = static_cast<double>(B);
    for (std::size_t b = 0; b < B; ++b) {
      const std::size_t k = b * H + j;
      const double dxhat = dy[k] * h.gamma[j];
      da[k] = cache.invstd[j] / nb * (nb * dxhat - sum_dxhat - cache.xhat[k] * sum_dxhat_xhat);
    }
  }
  std::vector<double> dx(B * in, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    const double* xb = cache.x.data() + b * in;
    double* dxb = dx.data() + b * in;
    for (std::size_t j = 0; j < H; ++j) {
      const double d = da[b * H + j];
      g.b1[j] += d;
      if (d == 0.0) continue;
      double* gw = g.w1.data.data() + j * in;
      const double* w = h.w1.data.data() + j * in;
      for (std::size_t i = 0; i < in; ++i) {
        gw[i] += d * xb[i];
        dxb[i] += d * w[i];
      }
    }
  }
  return dx;
}

void update_running_stats(ProjectionHead& h, const HeadCache& cache, double momentum) {
  const std::size_t H = h.run_mean.size();
  const double B = static_cast<double>(cache.batch);
  const double unbias = cache.batch > 1 ? B / (B - 1.0) : 1.0;
  for (std::size_t j = 0; j < H; ++j) {
    h.run_mean[j] = (1.0 - momentum) * h.run_mean[j] + momentum * cache.mean[j];
    h.run_var[j] = (1.0 - momentum) * h.run_var[j] + momentum * cache.var[j] * unbias;
  }
}

// Row-wise L2 normalization of B x D; returns norms.
std::vector<double> normalize_rows(std::vector<double>& m, std::size_t B, std::size_t D) {
  std::vector<double> norms(B);
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (std::size_t j = 0; j < D; ++j) s += m[b * D + j] * m[b * D + j];
    norms[b] = std::sqrt(s);
    if (!(norms[b] > 0.0) || !std::isfinite(norms[b])) throw Error("cannot normalize a zero or non-finite embedding");
    for (std::size_t j = 0; j < D; ++j) m[b * D + j] /= norms[b];
  }
  return norms;
}

// d(f) from d(z) for z = f / |f|.
std::vector<double> normalize_backward(const std::vector<double>& z, const std::vector<double>& norms,
                                       const std::vector<double>& dz, std::size_t B, std::size_t D) {
  std::vector<double> df(B * D);
  for (std::size_t b = 0; b < B; ++b) {
    double dot = 0.0;
    for (std::size_t j = 0; j < D; ++j) dot += z[b * D + j] * dz[b * D + j];
    for (std::size_t j = 0; j < D; ++j) df[b * D + j] = (dz[b * D + j] - z[b * D + j] * dot) / norms[b];
  }
  return df;
}

Embedding to_embedding(const double* v, std::size_t d) {
  Embedding e(d);
  for (std::size_t j = 0; j < d; ++j) e[j] = static_cast<float>(v[j]);
  return e;
}

EncoderParams zeros_like(const EncoderParams& p) {
  EncoderParams g = p;
  g.visit([](const std::string&, Tensor& t, bool, bool) { std::fill(t.data.begin(), t.data.end(), 0.0); });
  return g;
}

// dst = src circularly delayed by `shift` samples on every channel.
void roll(const Segment& src, std::size_t shift, Segment& dst) {
  dst.id = src.id;
  dst.subject_id = src.subject_id;
  dst.start_s = src.start_s;
  dst.channels = src.channels;
  dst.samples = src.samples;
  dst.label = src.label;
  dst.data.resize(src.data.size());
  const std::size_t T = src.samples;
  for (std::size_t c = 0; c < src.channels; ++c) {
    const float* x = src.channel(c);
    float* y = dst.data.data() + c * T;
    std::copy(x, x + (T - shift), y + shift);
    std::copy(x + (T - shift), x + T, y);
  }
}

struct StepCaches {
  HeadCache eeg, text;
};

// One batch: forward in batch-BN mode, loss, and (if grads) full backward.
double forward_backward(const EncoderParams& p, const std::vector<const TrainPair*>& batch, Objective obj,
                        double dropout, Rng* rng, EncoderParams* grads, StepCaches& caches) {
  const auto& c = p.cfg;
  const std::size_t B = batch.size();
  const std::size_t F = c.eeg_features(), D = c.dim;
  std::vector<double> feats(B * F);
  std::vector<TrunkCache> trunk(B);
  for (std::size_t b = 0; b < B; ++b) {
    check_segment(c, *batch[b]->segment);
    trunk_forward(p, *batch[b]->segment, feats.data() + b * F, grads ? &trunk[b] : nullptr);
  }
  std::vector<double> fz = head_forward(p.eeg_head, c, std::move(feats), B, BnMode::batch, dropout, rng, caches.eeg);

  double loss = 0.0;
  std::vector<double> dfz;
  if (obj == Objective::contrastive) {
    std::vector<double> tin(B * c.token_dim);
    for (std::size_t b = 0; b < B; ++b) {
      check_tokens(p, batch[b]->tokens);
      text_trunk(p, batch[b]->tokens, tin.data() + b * c.token_dim);
    }
    std::vector<double> fu = head_forward(p.text_head, c, std::move(tin), B, BnMode::batch, dropout, rng, caches.text);
    std::vector<double> z = fz, u = fu;
    const auto nz = normalize_rows(z, B, D);
    const auto nu = normalize_rows(u, B, D);
    auto res = info_nce_loss(z, u, B, D, p.tau());
    loss = res.loss;
    if (grads) {
      dfz = normalize_backward(z, nz, res.dZ, B, D);
      const auto dfu = normalize_backward(u, nu, res.dU, B, D);
      grads->log_tau[0] += res.dtau * p.tau();
      const auto dtin = head_backward(p.text_head, c, caches.text, dfu, grads->text_head);
      for (std::size_t b = 0; b < B; ++b) {
        const std::size_t n = std::min(batch[b]->tokens.size(), c.max_tokens);
        for (std::size_t i = 0; i < n; ++i) {
          double* row = grads->token_table.data.data() + static_cast<std::size_t>(batch[b]->tokens[i]) * c.token_dim;
          for (std::size_t j = 0; j < c.token_dim; ++j) row[j] += dtin[b * c.token_dim + j] / static_cast<double>(n);
        }
      }
    }
  } else {
    // Logistic label head on the unnormalized embedding.
    dfz.assign(B * D, 0.0);
    for (std::size_t b = 0; b < B; ++b) {
      double logit = p.cls_b[0];
      for (std::size_t j = 0; j < D; ++j) logit += p.cls_w[j] * fz[b * D + j];
      const double y = static_cast<double>(batch[b]->label);
      const double softplus = logit > 0 ? logit + std::log1p(std::exp(-logit)) : std::log1p(std::exp(logit));
      loss += (softplus - y * logit) / static_cast<double>(B);
      if (grads) {
        const double sig = 1.0 / (1.0 + std::exp(-logit));
        const double dl = (sig - y) / static_cast<double>(B);
        grads->cls_b[0] += dl;
        for (std::size_t j = 0; j < D; ++j) {
          grads->cls_w[j] += dl * fz[b * D + j];
          dfz[b * D + j] = dl * p.cls_w[j];
        }
      }
    }
  }
  if (grads) {
    const auto dfeat = head_backward(p.eeg_head, c, caches.eeg, dfz, grads->eeg_head);
    for (std::size_t b = 0; b < B; ++b) trunk_backward(p, *batch[b]->segment, trunk[b], dfeat.data() + b * F, *grads);
  }
  return loss;
}

}  // namespace

// ---------------------------------------------------------------------------
// Inference

Embedding encode_eeg(const EncoderParams& p, const Segment& seg) {
  check_segment(p.cfg, seg);
  std::vector<double> feat(p.cfg.eeg_features());
  trunk_forward(p, seg, feat.data(), nullptr);
  HeadCache cache;
  auto f = head_forward(p.eeg_head, p.cfg, std::move(feat), 1, BnMode::running, 0.0, nullptr, cache);
  normalize_rows(f, 1, p.cfg.dim);
  return to_embedding(f.data(), p.cfg.dim);
}

Embedding encode_text(const EncoderParams& p, std::span<const int> tokens) {
  check_tokens(p, tokens);
  std::vector<double> e(p.cfg.token_dim);
  text_trunk(p, tokens, e.data());
  HeadCache cache;
  auto f = head_forward(p.text_head, p.cfg, std::move(e), 1, BnMode::running, 0.0, nullptr, cache);
  normalize_rows(f, 1, p.cfg.dim);
  return to_embedding(f.data(), p.cfg.dim);
}

std::vector<Embedding> encode_all(const EncoderParams& p, const std::vector<Segment>& segs) {
  std::vector<Embedding> out;
  out.reserve(segs.size());
  for (const auto& s : segs) out.push_back(encode_eeg(p, s));
  return out;
}

// ---------------------------------------------------------------------------
// Loss

InfoNceResult info_nce_loss(std::span<const double> Z, std::span<const double> U, std::size_t n,
                            std::size_t d, double tau) {
  if (n == 0) throw Error("info_nce_loss: empty batch");
  if (Z.size() != n * d || U.size() != n * d) throw Error("info_nce_loss: shape mismatch");
  if (!(tau > 0.0) || !std::isfinite(tau)) throw Error("info_nce_loss: tau must be positive and finite");
  for (std::size_t i = 0; i < n * d; ++i) {
    if (!std::isfinite(Z[i]) || !std::isfinite(U[i])) throw Error("info_nce_loss: non-finite input");
  }
  std::vector<double> S(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += Z[i * d + k] * U[j * d + k];
      S[i * n + j] = s / tau;
    }
  // Row softmax P (EEG -> text) and column softmax Q (text -> EEG).
  std::vector<double> P(n * n), Q(n * n);
  double row_ce = 0.0, col_ce = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double m = S[i * n];
    for (std::size_t j = 1; j < n; ++j) m = std::max(m, S[i * n + j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) sum += std::exp(S[i * n + j] - m);
    const double lse = m + std::log(sum);
    row_ce += lse - S[i * n + i];
    for (std::size_t j = 0; j < n; ++j) P[i * n + j] = std::exp(S[i * n + j] - lse);
  }
  for (std::size_t j = 0; j < n; ++j) {
    double m = S[j];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, S[i * n + j]);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += std::exp(S[i * n + j] - m);
    const double lse = m + std::log(sum);
    col_ce += lse - S[j * n + j];
    for (std::size_t i = 0; i < n; ++i) Q[i * n + j] = std::exp(S[i * n + j] - lse);
  }
  InfoNceResult r;
  const double nn = static_cast<double>(n);
  r.loss = (row_ce + col_ce) / (2.0 * nn);
  // dL/dS_ij = (P_ij + Q_ij - 2 [i==j]) / 2N
  std::vector<double> dS(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      dS[i * n + j] = (P[i * n + j] + Q[i * n + j] - (i == j ? 2.0 : 0.0)) / (2.0 * nn);
  r.dZ.assign(n * d, 0.0);
  r.dU.assign(n * d, 0.0);
  double dtau = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      const double g = dS[i * n + j] / tau;
      dtau -= dS[i * n + j] * S[i * n + j] / tau;
      for (std::size_t k = 0; k < d; ++k) {
        r.dZ[i * d + k] += g * U[j * d + k];
        r.dU[j * d + k] += g * Z[i * d + k];
      }
    }
  r.dtau = dtau;
  return r;
}

// ---------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  if (batch_size < 2) throw Error("batch size must be >= 2");
  if (!(learning_rate > 0.0)) throw Error("learning rate must be > 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw Error("betas must be in (0,1)");
  if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) throw Error("validation fraction must be in [0,1)");
  if (!(tau_min > 0.0 && tau_min <= tau_max)) throw Error("bad tau clamp range");
}

double evaluate_loss(const EncoderParams& p, const std::vector<TrainPair>& pairs, Objective objective) {
  if (pairs.empty()) return 0.0;
  std::vector<const TrainPair*> batch;
  for (const auto& tp : pairs) batch.push_back(&tp);
  StepCaches caches;
  return forward_backward(p, batch, objective, 0.0, nullptr, nullptr, caches);
}

std::vector<Tensor> batch_gradients(const EncoderParams& p, const std::vector<TrainPair>& pairs,
                                    Objective objective, double* loss_out) {
  std::vector<const TrainPair*> batch;
  for (const auto& tp : pairs) batch.push_back(&tp);
  EncoderParams g = zeros_like(p);
  StepCaches caches;
  const double loss = forward_backward(p, batch, objective, 0.0, nullptr, &g, caches);
  if (loss_out) *loss_out = loss;
  std::vector<Tensor> out;
  g.visit([&](const std::string&, Tensor& t, bool, bool) { out.push_back(t); });
  return out;
}

TrainResult train(const std::vector<TrainPair>& pairs, const EncoderParams& init, const TrainConfig& cfg,
                  const LossLogger& log) {
  cfg.validate();
  if (pairs.size() < cfg.batch_size) {
    throw Error("need at least " + std::to_string(cfg.batch_size) + " pairs, got " + std::to_string(pairs.size()));
  }
  TrainResult result;
  result.params = init;
  result.params.objective = cfg.objective;
  EncoderParams& p = result.params;

  Rng split_rng(cfg.seed ^ 0x5851F42D4C957F2DULL);
  std::vector<std::size_t> order(pairs.size());
  std::iota(order.begin(), order.end(), 0);
  split_rng.shuffle(order);
  const auto n_val = static_cast<std::size_t>(std::llround(cfg.validation_fraction * static_cast<double>(pairs.size())));
  std::vector<TrainPair> held_out;
  for (std::size_t i = 0; i < n_val; ++i) held_out.push_back(pairs[order[i]]);
  std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(train_idx.begin(), train_idx.end());
  if (train_idx.size() < 2) throw Error("fewer than 2 training pairs after the validation split");
  result.train_pairs = train_idx.size();
  result.validation_pairs = held_out.size();

  EncoderParams m = zeros_like(p), v = zeros_like(p);
  std::vector<Tensor*> pw = tensors_of(p), pm = tensors_of(m), pv = tensors_of(v);
  std::vector<bool> trainable, decays;
  p.visit([&](const std::string&, Tensor&, bool tr, bool wd) {
    trainable.push_back(tr);
    decays.push_back(wd);
  });

  Rng shuffle_rng(cfg.seed);
  Rng dropout_rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);
  Rng shift_rng(cfg.seed ^ 0x9E3779B97F4A7C15ULL);
  std::vector<Segment> shifted;
  std::vector<TrainPair> shifted_pairs;
  const double lo = std::log(cfg.tau_min), hi = std::log(cfg.tau_max);
  std::size_t step = 0;
  const std::size_t bs = std::min(cfg.batch_size, train_idx.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle_rng.shuffle(train_idx);
    for (std::size_t start = 0, bi = 0; start + 2 <= train_idx.size(); start += bs, ++bi) {
      const std::size_t end = std::min(start + bs, train_idx.size());
      if (end - start < 2) break;
      std::vector<const TrainPair*> batch;
      if (cfg.time_shift) {
        // Random circular shift per window; label and report are unchanged.
        shifted.resize(end - start);
        shifted_pairs.resize(end - start);
        for (std::size_t k = start; k < end; ++k) {
          const TrainPair& src = pairs[train_idx[k]];
          Segment& dst = shifted[k - start];
          roll(*src.segment, shift_rng.index(src.segment->samples), dst);
          shifted_pairs[k - start] = TrainPair{&dst, src.tokens, src.label};
          batch.push_back(&shifted_pairs[k - start]);
        }
      } else {
        for (std::size_t k = start; k < end; ++k) batch.push_back(&pairs[train_idx[k]]);
      }
      EncoderParams g = zeros_like(p);
      StepCaches caches;
      const double loss = forward_backward(p, batch, cfg.objective, p.cfg.dropout, &dropout_rng, &g, caches);
      if (!std::isfinite(loss)) {
        throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                    std::to_string(bi) + " (step " + std::to_string(step) + ")");
      }
      result.batch_losses.push_back(loss);
      if (log) log(epoch, bi, loss);
      update_running_stats(p.eeg_head, caches.eeg, p.cfg.bn_momentum);
      if (cfg.objective == Objective::contrastive) update_running_stats(p.text_head, caches.text, p.cfg.bn_momentum);

      ++step;
      std::vector<Tensor*> pg = tensors_of(g);
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      for (std::size_t t = 0; t < pw.size(); ++t) {
        if (!trainable[t]) continue;
        auto& w = pw[t]->data;
        auto& mt = pm[t]->data;
        auto& vt = pv[t]->data;
        const auto& gt = pg[t]->data;
        const double decay = decays[t] ? 1.0 - cfg.learning_rate * cfg.weight_decay : 1.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
          mt[i] = cfg.beta1 * mt[i] + (1.0 - cfg.beta1) * gt[i];
          vt[i] = cfg.beta2 * vt[i] + (1.0 - cfg.beta2) * gt[i] * gt[i];
          w[i] *= decay;
          w[i] -= cfg.learning_rate * (mt[i] / bc1) / (std::sqrt(vt[i] / bc2) + cfg.adam_eps);
        }
      }
      p.log_tau[0] = std::clamp(p.log_tau[0], lo, hi);
    }
    if (!held_out.empty() && held_out.size() >= 2) {
      result.validation_losses.push_back(evaluate_loss(p, held_out, cfg.objective));
    }
  }
  return result;
}

TrainResult train(const std::vector<const Segment*>& segments, const std::vector<std::string>& reports,
                  const EncoderConfig& enc, const TrainConfig& cfg, const LossLogger& log) {
  if (segments.size() != reports.size()) throw Error("train: segments and reports differ in length");
  Vocabulary vocab = Vocabulary::build(reports);
  EncoderConfig ec = enc;
  if (!segments.empty()) {
    ec.channels = segments.front()->channels;
    ec.samples = segments.front()->samples;
  }
  EncoderParams init = init_params(ec, vocab, cfg.seed);
  std::vector<TrainPair> pairs;
  pairs.reserve(segments.size());
  for (std::size_t i = 0; i < segments.size(); ++i) {
    TrainPair tp;
    tp.segment = segments[i];
    tp.tokens = vocab.encode(reports[i]);
    if (tp.tokens.empty()) tp.tokens.push_back(Vocabulary::kUnknown);
    tp.label = segments[i]->label;
    pairs.push_back(std::move(tp));
  }
  return train(pairs, init, cfg, log);
}

}  // namespace evidexr::align
