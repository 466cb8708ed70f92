#pragma once

#include <array>
#include <cstdint>
#include <span>

#include "css/batch.hpp"
#include "css/param_store.hpp"
#include "css/rng.hpp"

namespace css {

struct LossReport {
  double l1 = 0.0;
  double l2 = 0.0;
  double l3 = 0.0;
  std::array<double, kNumModalities> l2_m{};  // per-modality terms of l2
  std::array<double, kNumModalities> l3_m{};  // per-modality terms of l3
};

/// Mask-aware cross-entropy: -(1/sum mu) sum_i mu_i log p_i[label_i], with the
/// log clamped at kLogEps. probs is [N x c]; labels hold -1 on masked rows.
/// Rejects an all-masked batch.
double masked_cross_entropy(const Tensor& probs, std::span<const std::int32_t> labels,
                            std::span<const double> mask);

/// Accumulates weight * dCE/dlogits into d_logits (same shape as probs),
/// backpropagating through the softmax that produced probs. Rows where the
/// clamp was active contribute zero, matching the forward exactly.
void masked_cross_entropy_backward(const Tensor& probs, std::span<const std::int32_t> labels,
                                   std::span<const double> mask, double weight,
                                   Tensor& d_logits);

struct DistillCache {
  Tensor teacher;                                // tempered teacher distribution [N x c]
  std::array<Tensor, kNumModalities> students;   // tempered student distributions
};

/// Temperature-scaled self-distillation: (1/sum mu) sum_i mu_i sum_m
/// KL(teacher_i || student_i^m) with teacher = softmax(fused logits / T).
/// Fills `cache` for the backward pass and `per_modality` with each modality's
/// share. Rejects T <= 0.
double distill_kl(const Tensor& fused_logits,
                  const std::array<Tensor, kNumModalities>& student_logits, double temperature,
                  std::span<const double> mask, DistillCache& cache,
                  std::array<double, kNumModalities>& per_modality);

/// Accumulates weight * dL3/d(student logits m) into d_student. The teacher is
/// treated as a constant unless teacher_grad is set, in which case the fused
/// branch also receives weight * dL3/d(fused logits) into d_teacher.
void distill_kl_backward(const DistillCache& cache, double temperature,
                         std::span<const double> mask, double weight, int modality,
                         Tensor& d_student, Tensor* d_teacher, bool teacher_grad);

/// Per-modality linear softmax classifiers over the integrated representations;
/// these provide the hard-label unimodal loss and the distillation students.
class UnimodalHeads {
 public:
  UnimodalHeads(std::size_t d, std::size_t classes, ParamStore& store, Rng init);

  struct Cache {
    std::array<Tensor, kNumModalities> logits;  // [B x L x c]
    std::array<Tensor, kNumModalities> yhat;
  };

  void forward(const ParamStore& store, const std::array<Tensor, kNumModalities>& h,
               Cache& cache) const;
  /// d_logits per modality -> accumulates param grads and d_h.
  void backward(ParamStore& store, const std::array<Tensor, kNumModalities>& h,
                const std::array<Tensor, kNumModalities>& d_logits,
                std::array<Tensor, kNumModalities>& d_h) const;

 private:
  std::size_t d_;
  std::size_t classes_;
};

}  // namespace css
