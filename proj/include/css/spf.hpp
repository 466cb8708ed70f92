#pragma once

#include <array>
#include <memory>
#include <span>
#include <vector>

#include "css/batch.hpp"
#include "css/param_store.hpp"
#include "css/rng.hpp"

namespace css {

/// Element-wise sign(z) * sqrt(|z|).
void signed_sqrt(std::span<const double> z, std::span<double> out);
/// Backward of signed_sqrt: dz = d_out / (2 * sqrt(max(|z|, kSignedSqrtEps))).
/// The forward is exact; only the derivative clamps near zero.
void signed_sqrt_backward(std::span<const double> z, std::span<const double> d_out,
                          std::span<double> dz);

/// Element-wise product of p vectors (p >= 1).
void hadamard_chain(const std::vector<std::span<const double>>& factors, std::span<double> out);

struct SpfConfig {
  std::size_t p = 3;        // interaction order
  std::size_t r = 8;        // projection rank
  std::size_t d = 32;       // input/output width
  std::size_t classes = 4;
  bool msp_on = true;  // modality-specific projections + static gating
};

/// Per-batch activations of the fusion stage.
struct FusionCache {
  // Indexed [order][modality] for the projection path.
  std::vector<std::array<Tensor, kNumModalities>> pre;  // W_j h, before GELU, [B x L x r]
  std::vector<std::array<Tensor, kNumModalities>> zjm;  // after GELU
  std::vector<Tensor> zj;                               // gated sums per order
  Tensor z;                                             // hadamard product
  Tensor zhat;                                          // signed sqrt
  Tensor proj;                                          // W_out^T zhat + b_out, [B x L x d]
  Tensor logits;                                        // [B x L x c]
  Tensor yhat;                                          // softmax(logits)
};

class FusionBase {
 public:
  virtual ~FusionBase() = default;
  virtual void forward(const ParamStore& store, const std::array<Tensor, kNumModalities>& h,
                       FusionCache& cache) const = 0;
  virtual void backward(ParamStore& store, const std::array<Tensor, kNumModalities>& h,
                        FusionCache& cache, const Tensor& d_logits,
                        std::array<Tensor, kNumModalities>& d_h) const = 0;
};

/// Order-p multiplicative fusion: per-order modality projections through GELU,
/// statically gated sums with a constant path, an element-wise product across
/// orders, signed-sqrt range compression, and a linear classifier. Each
/// (batch, position) vector is fused independently.
class SpfFusion : public FusionBase {
 public:
  SpfFusion(const SpfConfig& cfg, ParamStore& store, Rng init);

  void forward(const ParamStore& store, const std::array<Tensor, kNumModalities>& h,
               FusionCache& cache) const override;
  void backward(ParamStore& store, const std::array<Tensor, kNumModalities>& h,
                FusionCache& cache, const Tensor& d_logits,
                std::array<Tensor, kNumModalities>& d_h) const override;

  const SpfConfig& config() const { return cfg_; }
  /// Gate value lambda_j^(m) = sigmoid(raw scalar); msp_on only.
  double gate_value(const ParamStore& store, std::size_t order, int modality) const;

 private:
  std::string proj_name(std::size_t j, int m) const;
  SpfConfig cfg_;
};

/// Fusion ablation: concatenate the three integrated vectors and classify
/// linearly.
class ConcatFusion : public FusionBase {
 public:
  ConcatFusion(std::size_t d, std::size_t classes, ParamStore& store, Rng init);

  void forward(const ParamStore& store, const std::array<Tensor, kNumModalities>& h,
               FusionCache& cache) const override;
  void backward(ParamStore& store, const std::array<Tensor, kNumModalities>& h,
                FusionCache& cache, const Tensor& d_logits,
                std::array<Tensor, kNumModalities>& d_h) const override;

 private:
  std::size_t d_;
  std::size_t classes_;
};

}  // namespace css
