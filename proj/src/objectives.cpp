#include "css/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "css/init.hpp"
#include "css/ops.hpp"

namespace css {

namespace {

double mask_total(std::span<const double> mask) {
  double s = 0.0;
  for (double m : mask) s += m;
  return s;
}

std::string head_name(int m, const char* suffix) {
  return std::string("head.") + kModalityNames[m] + "." + suffix;
}

}  // namespace

double masked_cross_entropy(const Tensor& probs, std::span<const std::int32_t> labels,
                            std::span<const double> mask) {
  std::size_t c = probs.shape().back();
  std::size_t n = probs.size() / c;
  double total = mask_total(mask);
  if (total <= 0.0) throw std::invalid_argument("masked_cross_entropy: empty batch (sum mu = 0)");
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] == 0.0) continue;
    std::int32_t y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw std::invalid_argument("masked_cross_entropy: label out of range on valid row");
    }
    loss -= mask[i] * log_clamped(probs.data()[i * c + y]);
  }
  return loss / total;
}

void masked_cross_entropy_backward(const Tensor& probs, std::span<const std::int32_t> labels,
                                   std::span<const double> mask, double weight,
                                   Tensor& d_logits) {
  std::size_t c = probs.shape().back();
  std::size_t n = probs.size() / c;
  double total = mask_total(mask);
  std::vector<double> dp(c), dl(c);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] == 0.0) continue;
    std::int32_t y = labels[i];
    const double* p = probs.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) dp[k] = 0.0;
    // Zero slope inside the clamp region keeps backward consistent with forward.
    if (p[y] > kLogEps) dp[y] = -mask[i] / (total * p[y]);
    softmax_backward(std::span<const double>(p, c), dp, dl);
    double* out = d_logits.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) out[k] += weight * dl[k];
  }
}

double distill_kl(const Tensor& fused_logits,
                  const std::array<Tensor, kNumModalities>& student_logits, double temperature,
                  std::span<const double> mask, DistillCache& cache,
                  std::array<double, kNumModalities>& per_modality) {
  if (temperature <= 0.0) throw std::invalid_argument("distill_kl: temperature must be positive");
  std::size_t c = fused_logits.shape().back();
  std::size_t n = fused_logits.size() / c;
  double total = mask_total(mask);
  if (total <= 0.0) throw std::invalid_argument("distill_kl: empty batch (sum mu = 0)");

  cache.teacher = Tensor(fused_logits.shape());
  std::vector<double> log_p(c), log_q(c);
  for (int m = 0; m < kNumModalities; ++m) {
    cache.students[m] = Tensor(student_logits[m].shape());
    per_modality[m] = 0.0;
  }
  for (std::size_t i = 0; i < n; ++i) {
    softmax_with_temperature(std::span<const double>(fused_logits.data() + i * c, c),
                             temperature, std::span<double>(cache.teacher.data() + i * c, c));
  }
  for (int m = 0; m < kNumModalities; ++m) {
    for (std::size_t i = 0; i < n; ++i) {
      softmax_with_temperature(std::span<const double>(student_logits[m].data() + i * c, c),
                               temperature,
                               std::span<double>(cache.students[m].data() + i * c, c));
      if (mask[i] == 0.0) continue;
      log_softmax_with_temperature(std::span<const double>(fused_logits.data() + i * c, c),
                                   temperature, log_p);
      log_softmax_with_temperature(std::span<const double>(student_logits[m].data() + i * c, c),
                                   temperature, log_q);
      const double* p = cache.teacher.data() + i * c;
      double kl = 0.0;
      for (std::size_t k = 0; k < c; ++k) kl += p[k] * (log_p[k] - log_q[k]);
      per_modality[m] += mask[i] * kl;
    }
    per_modality[m] /= total;
  }
  double loss = 0.0;
  for (int m = 0; m < kNumModalities; ++m) loss += per_modality[m];
  return loss;
}

void distill_kl_backward(const DistillCache& cache, double temperature,
                         std::span<const double> mask, double weight, int modality,
                         Tensor& d_student, Tensor* d_teacher, bool teacher_grad) {
  std::size_t c = cache.teacher.shape().back();
  std::size_t n = cache.teacher.size() / c;
  double total = mask_total(mask);
  for (std::size_t i = 0; i < n; ++i) {
    if (mask[i] == 0.0) continue;
    const double* p = cache.teacher.data() + i * c;
    const double* q = cache.students[modality].data() + i * c;
    double w = weight * mask[i] / (total * temperature);
    double* ds = d_student.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) ds[k] += w * (q[k] - p[k]);
    if (teacher_grad && d_teacher) {
      // d KL / d teacher logit: (P_j / T) * ((log P_j - log Q_j) - KL).
      double kl = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        kl += p[k] * (std::log(std::max(p[k], kLogEps)) - std::log(std::max(q[k], kLogEps)));
      }
      double* dt = d_teacher->data() + i * c;
      for (std::size_t k = 0; k < c; ++k) {
        double lr = std::log(std::max(p[k], kLogEps)) - std::log(std::max(q[k], kLogEps));
        dt[k] += w * p[k] * (lr - kl);
      }
    }
  }
}

UnimodalHeads::UnimodalHeads(std::size_t d, std::size_t classes, ParamStore& store, Rng init)
    : d_(d), classes_(classes) {
  for (int m = 0; m < kNumModalities; ++m) {
    std::string wn = head_name(m, "W");
    Tensor w({d, classes});
    fill_glorot(w, d, classes, init.split(fnv1a(wn.c_str())));
    store.add(wn, ParamGroup::kHeads, std::move(w));
    store.add(head_name(m, "b"), ParamGroup::kHeads, Tensor({classes}, 0.0));
  }
}

void UnimodalHeads::forward(const ParamStore& store, const std::array<Tensor, kNumModalities>& h,
                            Cache& cache) const {
  std::size_t B = h[0].dim(0), L = h[0].dim(1), n = B * L;
  for (int m = 0; m < kNumModalities; ++m) {
    const Tensor& w = store.at(head_name(m, "W")).value;  // [d x c], applied transposed
    const Tensor& b = store.at(head_name(m, "b")).value;
    cache.logits[m] = Tensor({B, L, classes_});
    cache.yhat[m] = Tensor({B, L, classes_});
    for (std::size_t p = 0; p < n; ++p) {
      const double* x = h[m].data() + p * d_;
      double* lg = cache.logits[m].data() + p * classes_;
      for (std::size_t k = 0; k < classes_; ++k) lg[k] = b[k];
      for (std::size_t i = 0; i < d_; ++i) {
        const double* wrow = w.data() + i * classes_;
        for (std::size_t k = 0; k < classes_; ++k) lg[k] += x[i] * wrow[k];
      }
      softmax_with_temperature(std::span<const double>(lg, classes_), 1.0,
                               std::span<double>(cache.yhat[m].data() + p * classes_, classes_));
    }
  }
}

void UnimodalHeads::backward(ParamStore& store, const std::array<Tensor, kNumModalities>& h,
                             const std::array<Tensor, kNumModalities>& d_logits,
                             std::array<Tensor, kNumModalities>& d_h) const {
  std::size_t B = h[0].dim(0), L = h[0].dim(1), n = B * L;
  for (int m = 0; m < kNumModalities; ++m) {
    const Tensor& w = store.at(head_name(m, "W")).value;
    Tensor& dw = store.at(head_name(m, "W")).grad;
    Tensor& db = store.at(head_name(m, "b")).grad;
    for (std::size_t p = 0; p < n; ++p) {
      const double* x = h[m].data() + p * d_;
      const double* dl = d_logits[m].data() + p * classes_;
      double* dx = d_h[m].data() + p * d_;
      for (std::size_t k = 0; k < classes_; ++k) db[k] += dl[k];
      for (std::size_t i = 0; i < d_; ++i) {
        const double* wrow = w.data() + i * classes_;
        double* dwrow = dw.data() + i * classes_;
        double acc = 0.0;
        for (std::size_t k = 0; k < classes_; ++k) {
          dwrow[k] += x[i] * dl[k];
          acc += wrow[k] * dl[k];
        }
        dx[i] += acc;
      }
    }
  }
}

}  // namespace css
