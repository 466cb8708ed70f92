#pragma once

#include <cstddef>
#include <span>

namespace css {

// Log arguments are clamped at this floor so cross-entropy stays finite for
// degenerate probabilities.
inline constexpr double kLogEps = 1e-12;
// Floor on |z| inside the signed-sqrt derivative only; the forward is exact.
inline constexpr double kSignedSqrtEps = 1e-12;

/// Standard normal CDF, erf-based (exact up to libm, no tanh approximation).
double norm_cdf(double x);
/// Standard normal PDF.
double norm_pdf(double x);

/// GELU x * Phi(x) with the exact CDF.
double gelu(double x);
/// d/dx gelu(x) = Phi(x) + x * pdf(x).
double gelu_grad(double x);

/// Numerically stable logistic sigmoid.
double sigmoid(double x);

/// Softmax of logits / T with max-subtraction. Rejects T <= 0. Output sums to
/// one up to 1e-12. `out` may alias `logits`.
void softmax_with_temperature(std::span<const double> logits, double temperature,
                              std::span<double> out);

/// log softmax(logits / T), stable via logsumexp.
void log_softmax_with_temperature(std::span<const double> logits, double temperature,
                                  std::span<double> out);

/// Given probabilities p = softmax(x) and upstream dL/dp, writes dL/dx.
/// dx_k = p_k * (dp_k - sum_j dp_j p_j). `dx` may alias `dp`.
void softmax_backward(std::span<const double> probs, std::span<const double> dprobs,
                      std::span<double> dlogits);

/// log(max(x, kLogEps)).
double log_clamped(double x);

double dot(std::span<const double> a, std::span<const double> b);
double l2_norm(std::span<const double> a);
/// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);

}  // namespace css
