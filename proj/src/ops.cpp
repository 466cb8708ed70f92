#include "css/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

namespace css {

double norm_cdf(double x) { return 0.5 * std::erfc(-x * std::numbers::sqrt2 / 2.0); }

double norm_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
}

double gelu(double x) { return x * norm_cdf(x); }

double gelu_grad(double x) { return norm_cdf(x) + x * norm_pdf(x); }

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

void softmax_with_temperature(std::span<const double> logits, double temperature,
                              std::span<double> out) {
  if (temperature <= 0.0) {
    throw std::invalid_argument("softmax_with_temperature: temperature must be positive");
  }
  if (out.size() != logits.size()) {
    throw std::invalid_argument("softmax_with_temperature: output size mismatch");
  }
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : logits) hi = std::max(hi, v / temperature);
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp(logits[k] / temperature - hi);
    sum += out[k];
  }
  for (std::size_t k = 0; k < out.size(); ++k) out[k] /= sum;
}

void log_softmax_with_temperature(std::span<const double> logits, double temperature,
                                  std::span<double> out) {
  if (temperature <= 0.0) {
    throw std::invalid_argument("log_softmax_with_temperature: temperature must be positive");
  }
  double hi = -std::numeric_limits<double>::infinity();
  for (double v : logits) hi = std::max(hi, v / temperature);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v / temperature - hi);
  double lse = hi + std::log(sum);
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] / temperature - lse;
}

void softmax_backward(std::span<const double> probs, std::span<const double> dprobs,
                      std::span<double> dlogits) {
  double inner = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) inner += dprobs[k] * probs[k];
  for (std::size_t k = 0; k < probs.size(); ++k) {
    dlogits[k] = probs[k] * (dprobs[k] - inner);
  }
}

double log_clamped(double x) { return std::log(x > kLogEps ? x : kLogEps); }

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double l2_norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

}  // namespace css
