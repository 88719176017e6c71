#pragma once

#include <Eigen/Dense>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssr/corpus.hpp"
#include "ssr/rng.hpp"

namespace ssr {

using Mat = Eigen::MatrixXd;

struct ModelConfig {
  int n_layers = 2;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 128;
  int vocab_size = 0;
  int max_rel_distance = 8;
  double dropout = 0.0;
  int max_decode_len = 64;

  void validate() const;
  int head_dim() const { return d_model / n_heads; }
  bool operator==(const ModelConfig&) const = default;
};

struct AttentionWeights {
  Mat q, k, v, o;  // d_model x d_model
};

struct EncoderLayer {
  Mat attn_norm;  // 1 x d_model, scale only
  AttentionWeights self;
  Mat ff_norm;
  Mat ff_in;   // d_model x d_ff
  Mat ff_out;  // d_ff x d_model
};

struct DecoderLayer {
  Mat self_norm;
  AttentionWeights self;
  Mat cross_norm;
  AttentionWeights cross;
  Mat ff_norm;
  Mat ff_in;
  Mat ff_out;
};

// Encoder-decoder weights. Differences from the original Transformer: scale-only
// RMS normalization in front of every sublayer (pre-norm, outside the residual
// path), a learned per-head bias on clamped relative distances in both
// self-attention stacks, ReLU feed-forward, and tied input/output embeddings.
struct ModelParams {
  ModelConfig config;
  Mat embedding;  // vocab x d_model
  std::vector<EncoderLayer> encoder;
  Mat encoder_final_norm;
  Mat encoder_rel_bias;  // n_heads x (2 * max_rel_distance + 1)
  std::vector<DecoderLayer> decoder;
  Mat decoder_final_norm;
  Mat decoder_rel_bias;

  /// Canonical (name, tensor) list; order is stable and used for checkpoints.
  std::vector<std::pair<std::string, Mat*>> tensors();
  std::vector<std::pair<std::string, const Mat*>> tensors() const;

  std::size_t parameter_count() const;
  bool all_finite() const;
  bool operator==(const ModelParams& o) const;
};

/// Closed-form parameter count for a configuration.
std::size_t parameter_count(const ModelConfig& cfg);

/// Allocates all tensors with the right shapes, filled with zeros.
ModelParams zero_params(const ModelConfig& cfg);
/// Random initialization: embeddings N(0, 0.05^2), projections N(0, 1/fan_in),
/// norm gains 1, position biases 0.
ModelParams init_params(const ModelConfig& cfg, Rng& rng);

/// Decoder logits (|target_in| x vocab) for decoder inputs `target_in`.
Mat forward(const ModelParams& params, std::span<const TokenId> source,
            std::span<const TokenId> target_in);

/// Training pair; the decoder sees <bos> + target and predicts target + <eos>.
struct Seq2SeqPair {
  std::span<const TokenId> source;
  std::span<const TokenId> target;
};

struct LossResult {
  double loss = 0.0;        // mean cross-entropy per predicted token
  std::size_t tokens = 0;   // predicted tokens in the batch
  ModelParams grad;
};

/// Mean token cross-entropy over the batch and its exact gradient. Pairs with
/// an empty target are skipped. `dropout_rng` enables dropout when the
/// configuration asks for it.
LossResult loss_and_grad(const ModelParams& params, std::span<const Seq2SeqPair> batch,
                         Rng* dropout_rng = nullptr);
/// Same mean loss without gradients.
double batch_loss(const ModelParams& params, std::span<const Seq2SeqPair> batch);

// Autoregressive decoding with cached keys and values.
class Decoder {
 public:
  Decoder(const ModelParams& params, std::span<const TokenId> source);
  /// Feeds one token and returns next-token logits (length vocab).
  Eigen::VectorXd step(TokenId token);
  std::size_t position() const { return pos_; }

 private:
  const ModelParams* params_;
  Mat enc_out_;
  std::vector<Mat> cross_k_, cross_v_;
  std::vector<Mat> self_k_, self_v_;
  std::size_t pos_ = 0;
};

std::vector<double> softmax(const Eigen::VectorXd& logits);

struct DecodeOptions {
  /// Stops early when the model emits <eos>; the result never contains it.
  std::size_t max_len = 0;  // 0: use the model's max_decode_len
};

std::vector<TokenId> decode_greedy(const ModelParams& params, std::span<const TokenId> source,
                                   DecodeOptions opts = {});
std::vector<TokenId> decode_nucleus(const ModelParams& params, std::span<const TokenId> source,
                                    double p, Rng& rng, DecodeOptions opts = {});

}  // namespace ssr
