#pragma once

#include <vector>

#include "css/param_store.hpp"

namespace css {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2 term added to the gradient before the moments
};

/// Bias-corrected Adam over a ParamStore. Moment buffers are zero-initialized
/// and updated in registry order; step() consumes the grads currently stored in
/// the registry and leaves them intact for inspection.
class Adam {
 public:
  Adam(const AdamConfig& cfg, const ParamStore& store);

  void step(ParamStore& store);
  std::size_t steps_taken() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::vector<Tensor> m_;
  std::vector<Tensor> v_;
  std::size_t t_ = 0;
};

}  // namespace css
