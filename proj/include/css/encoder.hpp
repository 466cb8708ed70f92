#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "css/batch.hpp"
#include "css/param_store.hpp"
#include "css/rng.hpp"

namespace css {

struct EncoderConfig {
  std::size_t d = 32;          // shared representation width
  std::size_t heads = 4;       // attention heads in the per-modality encoder
  std::size_t d_ff = 128;      // feed-forward hidden width
  std::size_t max_len = 12;    // positional table length
  std::size_t n_speakers = 8;  // speaker embedding rows
  std::array<std::size_t, kNumModalities> d_in{12, 12, 12};
  double dropout = 0.0;
  bool mae_on = true;  // per-modality self-attention stage
  bool iae_on = true;  // gated cross-attention stage
};

/// Inverted-dropout mask: elements are 0 or 1/(1-rate), sampled in forward and
/// reused by every backward pass over the same activations.
struct DropoutMask {
  Tensor scale;
  bool active = false;
  void sample(const Tensor& like, double rate, Rng& rng);
  void apply(Tensor& x) const;
  void backward(Tensor& dx) const;
};

struct AttentionCache {
  Tensor q, k, v;      // [B x L x d]
  Tensor probs;        // [B x H x L x L] (H = 1 for the cross-modal stage)
  Tensor heads_out;    // [B x L x d], pre output-projection
  Tensor attn_out;     // [B x L x d]
  DropoutMask drop;
  Tensor ln1_in, ln1_hat, ln1_out;  // residual + layer norm
  std::vector<double> ln1_inv_std;
  Tensor ff_pre, ff_act, ff_out;  // feed-forward
  DropoutMask ff_drop;
  Tensor ln2_in, ln2_hat, ln2_out;
  std::vector<double> ln2_inv_std;
};

struct CrossAttentionCache {
  std::array<Tensor, 2> gates;      // sigmoid activations per non-query modality
  std::array<int, 2> sources{};     // modality ids the gates refer to
  Tensor kv;                        // gated sum, doubles as keys and values
  Tensor probs;                     // [B x L x L]
  Tensor out;
  DropoutMask drop;
};

/// Activations of one encoder pass; owned by the caller so that a const encoder
/// can serve concurrent evaluation batches.
struct EncoderCache {
  std::array<Tensor, kNumModalities> h0;      // after enrichment
  std::array<Tensor, kNumModalities> h_ma;    // after modality-aware stage
  std::array<Tensor, kNumModalities> h_ia;    // after interaction-aware stage
  std::array<Tensor, kNumModalities> h_tilde; // integrated representation
  std::array<AttentionCache, kNumModalities> mae;
  std::array<CrossAttentionCache, kNumModalities> iae;
  std::array<Tensor, kNumModalities> d_h_ma;  // scratch for backward
};

/// Two-stage dialogue encoder: input enrichment (pointwise projection +
/// speaker embedding + sinusoidal positions), per-modality transformer layer,
/// gated cross-attention between modalities, and a linear integration of the
/// two stages. Backward is hand-derived and accumulates into the store grads.
class Encoder {
 public:
  Encoder(const EncoderConfig& cfg, ParamStore& store, Rng init);

  const EncoderConfig& config() const { return cfg_; }

  /// Fills cache.h_tilde (and all intermediates). `dropout_rng` enables
  /// training-mode dropout; pass nullptr for evaluation / gradient checks.
  void forward(const ParamStore& store, const DialogueBatch& batch, EncoderCache& cache,
               Rng* dropout_rng) const;

  /// dTilde holds dL/d h_tilde per modality; param grads are accumulated and
  /// the cache's scratch tensors are consumed.
  void backward(ParamStore& store, const DialogueBatch& batch, EncoderCache& cache,
                std::array<Tensor, kNumModalities>& d_tilde) const;

  /// Sinusoidal position encoding value for (position, channel).
  static double positional(std::size_t pos, std::size_t channel, std::size_t d);

 private:
  void embed_forward(const ParamStore& store, const DialogueBatch& batch,
                     EncoderCache& cache) const;
  void embed_backward(ParamStore& store, const DialogueBatch& batch,
                      std::array<Tensor, kNumModalities>& d_h0) const;
  void mae_forward(const ParamStore& store, int m, const DialogueBatch& batch,
                   EncoderCache& cache, Rng* dropout_rng) const;
  void mae_backward(ParamStore& store, int m, const DialogueBatch& batch, EncoderCache& cache,
                    const Tensor& d_out, Tensor& d_in) const;
  void iae_forward(const ParamStore& store, int m, const DialogueBatch& batch,
                   EncoderCache& cache, Rng* dropout_rng) const;
  void iae_backward(ParamStore& store, int m, const DialogueBatch& batch, EncoderCache& cache,
                    const Tensor& d_out, std::array<Tensor, kNumModalities>& d_h_ma) const;
  void integrate_forward(const ParamStore& store, int m, EncoderCache& cache) const;
  void integrate_backward(ParamStore& store, int m, EncoderCache& cache, const Tensor& d_tilde,
                          Tensor& d_ma, Tensor& d_ia) const;

  EncoderConfig cfg_;
};

}  // namespace css
