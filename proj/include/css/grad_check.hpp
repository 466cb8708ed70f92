#pragma once

#include <functional>
#include <string>
#include <vector>

#include "css/param_store.hpp"

namespace css {

/// Central finite difference (f(x+h) - f(x-h)) / (2h) for every element of
/// every registry entry. `f` must be a deterministic function of the store
/// values; entries are perturbed in place and restored. Non-finite evaluations
/// raise non_finite_error.
std::vector<Tensor> finite_diff_grad(const std::function<double(const ParamStore&)>& f,
                                     ParamStore& store, double h);

/// Relative error with an absolute floor so tiny gradients are compared on an
/// absolute scale: |a-b| / max(|a|, |b|, floor).
double grad_rel_err(double analytic, double numeric, double floor = 1e-3);

struct GradCheckResult {
  bool pass = true;
  double max_rel_err = 0.0;
  std::string worst;  // "entry[idx]" of the worst element
};

/// Compares the grads currently stored in the registry against finite_diff_grad
/// of `f` over the given entries (all entries if empty).
GradCheckResult compare_grads(const std::function<double(const ParamStore&)>& f,
                              ParamStore& store, double h, double tol,
                              const std::vector<std::size_t>& entries = {});

}  // namespace css
