#include "css/grad_check.hpp"

#include <cmath>

#include "css/errors.hpp"

namespace css {

std::vector<Tensor> finite_diff_grad(const std::function<double(const ParamStore&)>& f,
                                     ParamStore& store, double h) {
  if (h <= 0.0) throw std::invalid_argument("finite_diff_grad: h must be positive");
  std::vector<Tensor> grads;
  grads.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& value = store.entry(i).value;
    Tensor g(value.shape(), 0.0);
    for (std::size_t k = 0; k < value.size(); ++k) {
      double saved = value[k];
      value[k] = saved + h;
      double fp = f(store);
      value[k] = saved - h;
      double fm = f(store);
      value[k] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm)) {
        throw non_finite_error("finite_diff_grad: objective evaluated to NaN/Inf");
      }
      g[k] = (fp - fm) / (2.0 * h);
    }
    grads.push_back(std::move(g));
  }
  return grads;
}

double grad_rel_err(double analytic, double numeric, double floor) {
  double denom = std::max({std::fabs(analytic), std::fabs(numeric), floor});
  return std::fabs(analytic - numeric) / denom;
}

GradCheckResult compare_grads(const std::function<double(const ParamStore&)>& f,
                              ParamStore& store, double h, double tol,
                              const std::vector<std::size_t>& entries) {
  std::vector<std::size_t> which = entries.empty() ? store.all_indices() : entries;
  std::vector<Tensor> numeric = finite_diff_grad(f, store, h);
  GradCheckResult res;
  for (std::size_t i : which) {
    const auto& e = store.entry(i);
    for (std::size_t k = 0; k < e.grad.size(); ++k) {
      double err = grad_rel_err(e.grad[k], numeric[i][k]);
      if (err > res.max_rel_err) {
        res.max_rel_err = err;
        res.worst = e.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

}  // namespace css
