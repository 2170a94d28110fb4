#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "declutr/prng.hpp"

namespace declutr {

struct EncoderConfig {
  int d_model = 64;
  int layers = 2;
  int heads = 4;
  int d_ff = 256;
  int max_positions = 512;
  int vocab_size = 0;
  double dropout = 0.0;  // kept at 0 for the deterministic desk profile

  void validate() const;
  bool operator==(const EncoderConfig&) const = default;
};

/// One trainable tensor with its gradient accumulator. Biases and layer-norm
/// parameters carry decay = false and are exempt from weight decay.
struct Param {
  std::string name;
  Eigen::MatrixXd w;
  Eigen::MatrixXd g;
  bool decay = false;

  Param() = default;
  Param(std::string name, Eigen::Index rows, Eigen::Index cols, bool decay)
      : name(std::move(name)),
        w(Eigen::MatrixXd::Zero(rows, cols)),
        g(Eigen::MatrixXd::Zero(rows, cols)),
        decay(decay) {}
};

struct LayerParams {
  Param ln1_scale, ln1_bias;
  Param wq, bq, wk, bk, wv, bv, wo, bo;
  Param ln2_scale, ln2_bias;
  Param ff_w1, ff_b1, ff_w2, ff_b2;
};

/// All trainable tensors of the encoder + MLM head. The MLM output
/// projection is tied to tok_emb; only its bias is a separate tensor.
class EncoderParams {
 public:
  EncoderConfig config;
  Param tok_emb;  // V x d
  Param pos_emb;  // max_positions x d
  std::vector<LayerParams> layers;
  Param ln_f_scale, ln_f_bias;
  Param mlm_bias;  // 1 x V
  int64_t step = 0;  // optimizer steps taken, persisted in the checkpoint

  /// Zero-valued tensors with the right shapes and names.
  static EncoderParams build(const EncoderConfig& cfg);

  /// Fixed iteration order shared by the optimizer, checkpoints and tests.
  std::vector<Param*> all();
  std::vector<const Param*> all() const;

  void zero_grads();
  int64_t scalar_count() const;

  /// Round-trips every tensor through float32, matching checkpoint payload
  /// precision. The trainer calls this after writing a checkpoint so resumed
  /// runs follow bit-identical trajectories.
  void quantize_to_f32();
};

/// Normal(0, 0.02^2) clamped to +-2 sigma for weights, scale 1 / offset 0 for
/// layer norms, zero biases. Deterministic per seed.
EncoderParams init_params(const EncoderConfig& cfg, uint64_t seed);

struct LayerRowCache {
  Eigen::MatrixXd ln1_xhat;
  Eigen::VectorXd ln1_inv_std;
  Eigen::MatrixXd q, k, v;  // attention probabilities are recomputed in backward
  Eigen::MatrixXd ln2_xhat;
  Eigen::VectorXd ln2_inv_std;
  Eigen::MatrixXd ffn_pre;   // pre-GELU activations, W x d_ff
  Eigen::MatrixXd attn_drop; // inverted-dropout masks; empty when dropout off
  Eigen::MatrixXd ffn_drop;
};

struct RowCache {
  std::vector<LayerRowCache> layers;
  Eigen::MatrixXd lnf_xhat;
  Eigen::VectorXd lnf_inv_std;
  Eigen::MatrixXd emb_drop;
};

struct ForwardCache {
  Eigen::MatrixXi ids;
  Eigen::MatrixXd mask;
  std::vector<RowCache> rows;
};

/// Pre-norm transformer forward over a padded id matrix. Returns one
/// (width x d_model) token-embedding matrix per batch row; each row is
/// computed at its true length, so outputs for real positions do not depend
/// on padding or batch companions. Dropout (config.dropout > 0) applies to
/// the embedding sum and each sublayer output, but only when a generator is
/// passed; inference calls leave dropout_rng null and are deterministic.
std::vector<Eigen::MatrixXd> encode_tokens(const EncoderParams& params, const Eigen::MatrixXi& ids,
                                           const Eigen::MatrixXd& pad_mask,
                                           ForwardCache* cache = nullptr,
                                           Rng* dropout_rng = nullptr);

/// Accumulates parameter gradients for d(loss)/d(token embeddings) produced
/// by a cached forward pass. Pad rows of d_out must be zero.
void encode_backward(EncoderParams& params, const ForwardCache& cache,
                     std::span<const Eigen::MatrixXd> d_out);

/// Arithmetic mean over unpadded positions. Throws on an all-pad row.
Eigen::VectorXd mean_pool(const Eigen::MatrixXd& token_embs, const Eigen::VectorXd& mask_row);

/// Adds d(pooled)/d(tokens) into d_tokens (zero at pad positions).
void mean_pool_backward(const Eigen::VectorXd& d_pooled, const Eigen::VectorXd& mask_row,
                        Eigen::MatrixXd& d_tokens);

/// logits = token_embedding(position) . E^T + bias with E the tied token
/// embedding matrix. Shape (|positions| x V).
Eigen::MatrixXd mlm_logits(const EncoderParams& params, const Eigen::MatrixXd& row_embs,
                           std::span<const int> positions);

/// Backward of mlm_logits: accumulates into tok_emb.g / mlm_bias.g and adds
/// the hidden-state gradient into d_row_embs at the masked positions.
void mlm_logits_backward(EncoderParams& params, const Eigen::MatrixXd& row_embs,
                         std::span<const int> positions, const Eigen::MatrixXd& dlogits,
                         Eigen::MatrixXd& d_row_embs);

}  // namespace declutr
