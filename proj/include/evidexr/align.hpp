#pragma once

#include "evidexr/types.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace evidexr::align {

// ---------------------------------------------------------------------------
// Tokenizer

/// Lowercased alphanumeric runs; everything else separates tokens.
std::vector<std::string> word_pieces(std::string_view text);

/// Training-corpus vocabulary. Id 0 is reserved for unknown tokens; the rest
/// are assigned in order of first appearance.
class Vocabulary {
 public:
  static constexpr int kUnknown = 0;

  Vocabulary();
  static Vocabulary build(const std::vector<std::string>& texts);

  std::vector<int> encode(std::string_view text) const;
  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  int add(const std::string& token);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// ---------------------------------------------------------------------------
// Parameters

/// Shapes of the desk-scale dual encoder.
///
/// EEG path: a bank of `filters` temporal kernels of length `kernel`, each
/// paired with its own weighting over all channels, then max-pooling by
/// `pool` and a projection head. Because both stages are linear, the spatial
/// weighting is applied first (the same operator, ~20x cheaper).
/// Text path: token table, mean pooling, projection head.
/// Heads are Linear -> BatchNorm -> ReLU -> Dropout -> Linear.
struct EncoderConfig {
  std::size_t channels = kDefaultChannels;
  std::size_t samples = kDefaultSamples;
  std::size_t filters = 8;
  std::size_t kernel = 10;
  std::size_t pool = 3;
  std::size_t eeg_hidden = 128;
  std::size_t vocab = 1;
  std::size_t token_dim = 64;
  std::size_t text_hidden = 128;
  std::size_t dim = 64;
  std::size_t max_tokens = 77;
  double dropout = 0.1;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;
  double init_tau = 0.07;
  // Test-only: skip the ReLU so the whole inference path is positively homogeneous.
  bool linear = false;

  std::size_t conv_len() const { return samples - kernel + 1; }
  std::size_t pooled_len() const { return conv_len() / pool; }
  std::size_t eeg_features() const { return filters * pooled_len(); }
};

enum class Objective { contrastive, supervised };

struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> s, double fill = 0.0);
  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }
  bool operator==(const Tensor&) const = default;
};

struct ProjectionHead {
  Tensor w1, b1;          // hidden x in, hidden
  Tensor gamma, beta;     // BatchNorm affine
  Tensor run_mean, run_var;
  Tensor w2, b2;          // dim x hidden, dim
  bool operator==(const ProjectionHead&) const = default;
};

/// All weights of both encoders plus the learnable temperature (stored as log tau).
struct EncoderParams {
  EncoderConfig cfg;
  Objective objective = Objective::contrastive;
  Vocabulary vocab;
  std::uint64_t seed = 0;

  Tensor spatial;     // filters x channels
  Tensor temporal;    // filters x kernel
  Tensor conv_bias;   // filters
  ProjectionHead eeg_head;
  Tensor token_table; // vocab x token_dim
  ProjectionHead text_head;
  Tensor log_tau;     // 1
  Tensor cls_w, cls_b;  // linear label head, used by the supervised objective only

  double tau() const;

  /// Visits (name, tensor, trainable, weight_decay) in a fixed order.
  void visit(const std::function<void(const std::string&, Tensor&, bool, bool)>& fn);
  void visit(const std::function<void(const std::string&, const Tensor&, bool, bool)>& fn) const;

  bool same_weights(const EncoderParams& other) const;
};

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights from the seed; BatchNorm
/// at identity; tau = cfg.init_tau.
EncoderParams init_params(const EncoderConfig& cfg, Vocabulary vocab, std::uint64_t seed);

void save_params(const EncoderParams& p, const std::filesystem::path& path);
EncoderParams load_params(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Inference

/// Unit-norm EEG embedding. Inference mode: running BatchNorm statistics, no dropout.
Embedding encode_eeg(const EncoderParams& p, const Segment& seg);

/// Unit-norm text embedding. Sequences longer than cfg.max_tokens are truncated.
Embedding encode_text(const EncoderParams& p, std::span<const int> tokens);

std::vector<Embedding> encode_all(const EncoderParams& p, const std::vector<Segment>& segs);

// ---------------------------------------------------------------------------
// Loss

struct InfoNceResult {
  double loss = 0.0;
  std::vector<double> dZ;  // N x d, row-major
  std::vector<double> dU;
  double dtau = 0.0;
};

/// Symmetric InfoNCE over the N x N similarity matrix Z U^T / tau with the
/// diagonal as positives; the two directional cross-entropies are averaged.
/// Z and U are N x d row-major. Gradients are analytic and treat Z, U and tau
/// as free variables.
InfoNceResult info_nce_loss(std::span<const double> Z, std::span<const double> U, std::size_t n,
                            std::size_t d, double tau);

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  std::size_t batch_size = 32;
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  std::size_t epochs = 20;
  std::uint64_t seed = 0;
  double validation_fraction = 0.1;
  double tau_min = 0.01;
  double tau_max = 1.0;
  Objective objective = Objective::contrastive;
  // Circularly shift each training window by a random offset every time it is
  // drawn. The EEG head is position-specific after flattening; this gives it
  // every event position without extra data.
  bool time_shift = true;

  void validate() const;
};

struct TrainPair {
  const Segment* segment = nullptr;
  std::vector<int> tokens;
  Label label = 0;
};

struct TrainResult {
  EncoderParams params;
  std::vector<double> batch_losses;       // one per optimizer step
  std::vector<double> validation_losses;  // one per epoch, held-out split
  std::size_t train_pairs = 0;
  std::size_t validation_pairs = 0;
};

using LossLogger = std::function<void(std::size_t epoch, std::size_t batch, double loss)>;

/// AdamW over shuffled mini-batches. The first round(validation_fraction * n)
/// pairs of a seeded permutation are held out and scored once per epoch.
/// Throws when a batch produces a non-finite loss, naming the batch.
TrainResult train(const std::vector<TrainPair>& pairs, const EncoderParams& init,
                  const TrainConfig& cfg, const LossLogger& log = {});

/// Convenience: builds the vocabulary from the pair reports and initializes from cfg.seed.
TrainResult train(const std::vector<const Segment*>& segments, const std::vector<std::string>& reports,
                  const EncoderConfig& enc, const TrainConfig& cfg, const LossLogger& log = {});

/// Batch-mode loss of the current params on the given pairs (BatchNorm in
/// batch mode, dropout off). Used for validation and tests.
double evaluate_loss(const EncoderParams& p, const std::vector<TrainPair>& pairs, Objective objective);

/// Gradient of the batch loss with respect to every tensor in
/// EncoderParams::visit order (zeros for non-trainable ones), dropout off.
/// Exposed for gradient checks.
std::vector<Tensor> batch_gradients(const EncoderParams& p, const std::vector<TrainPair>& batch,
                                    Objective objective, double* loss_out = nullptr);

}  // namespace evidexr::align
