#include "css/adam.hpp"

#include <cmath>
#include <stdexcept>

namespace css {

Adam::Adam(const AdamConfig& cfg, const ParamStore& store) : cfg_(cfg) {
  if (cfg_.lr <= 0.0) throw std::invalid_argument("Adam: learning rate must be positive");
  if (cfg_.eps <= 0.0) throw std::invalid_argument("Adam: eps must be positive");
  m_.reserve(store.size());
  v_.reserve(store.size());
  for (const auto& e : store) {
    m_.emplace_back(e.value.shape(), 0.0);
    v_.emplace_back(e.value.shape(), 0.0);
  }
}

void Adam::step(ParamStore& store) {
  if (store.size() != m_.size()) {
    throw std::invalid_argument("Adam: store layout changed since construction");
  }
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < store.size(); ++i) {
    auto& e = store.entry(i);
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < e.value.size(); ++k) {
      double g = e.grad[k] + cfg_.weight_decay * e.value[k];
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g;
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g * g;
      double mhat = m[k] / bc1;
      double vhat = v[k] / bc2;
      e.value[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

}  // namespace css
