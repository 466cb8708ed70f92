#include "css/spf.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "css/init.hpp"
#include "css/ops.hpp"

namespace css {

void signed_sqrt(std::span<const double> z, std::span<double> out) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    out[i] = std::copysign(std::sqrt(std::fabs(z[i])), z[i]);
  }
}

void signed_sqrt_backward(std::span<const double> z, std::span<const double> d_out,
                          std::span<double> dz) {
  for (std::size_t i = 0; i < z.size(); ++i) {
    double a = std::fabs(z[i]);
    dz[i] = d_out[i] * 0.5 / std::sqrt(a > kSignedSqrtEps ? a : kSignedSqrtEps);
  }
}

void hadamard_chain(const std::vector<std::span<const double>>& factors, std::span<double> out) {
  if (factors.empty()) throw std::invalid_argument("hadamard_chain: need at least one factor");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = factors[0][i];
  for (std::size_t j = 1; j < factors.size(); ++j) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factors[j][i];
  }
}

namespace {

// y = W x + b with W stored [rows x cols], x of length cols.
void linear_wx(const Tensor& w, const double* x, const double* b, double* y) {
  std::size_t rows = w.dim(0), cols = w.dim(1);
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = b ? b[i] : 0.0;
    const double* wrow = w.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) acc += wrow[j] * x[j];
    y[i] = acc;
  }
}

// Backward of linear_wx: dW(i,j) += dy[i] x[j]; db[i] += dy[i]; dx[j] += W(i,j) dy[i].
void linear_wx_backward(const Tensor& w, const double* x, const double* dy, Tensor& dw,
                        double* db, double* dx) {
  std::size_t rows = w.dim(0), cols = w.dim(1);
  for (std::size_t i = 0; i < rows; ++i) {
    double g = dy[i];
    if (g == 0.0) continue;
    if (db) db[i] += g;
    const double* wrow = w.data() + i * cols;
    double* dwrow = dw.data() + i * cols;
    for (std::size_t j = 0; j < cols; ++j) {
      dwrow[j] += g * x[j];
      if (dx) dx[j] += g * wrow[j];
    }
  }
}

// y[j] = sum_i x[i] W(i,j) + b[j]  (transposed application, W [in x out]).
void linear_xw(const double* x, const Tensor& w, const double* b, double* y) {
  std::size_t in = w.dim(0), out = w.dim(1);
  for (std::size_t j = 0; j < out; ++j) y[j] = b ? b[j] : 0.0;
  for (std::size_t i = 0; i < in; ++i) {
    double xi = x[i];
    if (xi == 0.0) continue;
    const double* wrow = w.data() + i * out;
    for (std::size_t j = 0; j < out; ++j) y[j] += xi * wrow[j];
  }
}

void linear_xw_backward(const double* x, const Tensor& w, const double* dy, Tensor& dw,
                        double* db, double* dx) {
  std::size_t in = w.dim(0), out = w.dim(1);
  if (db) {
    for (std::size_t j = 0; j < out; ++j) db[j] += dy[j];
  }
  for (std::size_t i = 0; i < in; ++i) {
    const double* wrow = w.data() + i * out;
    double* dwrow = dw.data() + i * out;
    double acc = 0.0;
    for (std::size_t j = 0; j < out; ++j) {
      dwrow[j] += x[i] * dy[j];
      acc += wrow[j] * dy[j];
    }
    if (dx) dx[i] += acc;
  }
}

}  // namespace

std::string SpfFusion::proj_name(std::size_t j, int m) const {
  std::string base = "spf.o" + std::to_string(j + 1);
  if (cfg_.msp_on) base += std::string(".") + kModalityNames[m];
  return base + ".W";
}

SpfFusion::SpfFusion(const SpfConfig& cfg, ParamStore& store, Rng init) : cfg_(cfg) {
  if (cfg_.p < 1 || cfg_.r < 1) throw std::invalid_argument("SpfFusion: need p >= 1 and r >= 1");
  for (std::size_t j = 0; j < cfg_.p; ++j) {
    std::string order = "spf.o" + std::to_string(j + 1);
    if (cfg_.msp_on) {
      for (int m = 0; m < kNumModalities; ++m) {
        std::string wn = proj_name(j, m);
        Tensor w({cfg_.r, cfg_.d});
        fill_glorot(w, cfg_.r, cfg_.d, init.split(fnv1a(wn.c_str())));
        store.add(wn, ParamGroup::kFusion, std::move(w));
        // Raw gate scalar; sigmoid keeps lambda in (0,1), zero start = 0.5.
        store.add(order + "." + kModalityNames[m] + ".gate", ParamGroup::kFusion,
                  Tensor({1}, 0.0));
      }
    } else {
      std::string wn = proj_name(j, 0);
      Tensor w({cfg_.r, cfg_.d});
      fill_glorot(w, cfg_.r, cfg_.d, init.split(fnv1a(wn.c_str())));
      store.add(wn, ParamGroup::kFusion, std::move(w));
    }
    // Constant path starts at one so early products do not vanish.
    store.add(order + ".bias", ParamGroup::kFusion, Tensor({cfg_.r}, 1.0));
  }
  {
    Tensor w({cfg_.r, cfg_.d});
    fill_glorot(w, cfg_.r, cfg_.d, init.split(fnv1a("spf.out.W")));
    store.add("spf.out.W", ParamGroup::kFusion, std::move(w));
    store.add("spf.out.b", ParamGroup::kFusion, Tensor({cfg_.d}, 0.0));
  }
  {
    Tensor w({cfg_.d, cfg_.classes});
    fill_glorot(w, cfg_.d, cfg_.classes, init.split(fnv1a("spf.cls.W")));
    store.add("spf.cls.W", ParamGroup::kFusion, std::move(w));
    store.add("spf.cls.b", ParamGroup::kFusion, Tensor({cfg_.classes}, 0.0));
  }
}

double SpfFusion::gate_value(const ParamStore& store, std::size_t order, int modality) const {
  std::string name =
      "spf.o" + std::to_string(order + 1) + "." + kModalityNames[modality] + ".gate";
  return sigmoid(store.at(name).value[0]);
}

void SpfFusion::forward(const ParamStore& store, const std::array<Tensor, kNumModalities>& h,
                        FusionCache& cache) const {
  std::size_t B = h[0].dim(0), L = h[0].dim(1);
  std::size_t n = B * L, r = cfg_.r, d = cfg_.d, c = cfg_.classes;
  if (h[0].dim(2) != d) throw std::invalid_argument("SpfFusion: width mismatch");

  cache.pre.assign(cfg_.p, {});
  cache.zjm.assign(cfg_.p, {});
  cache.zj.assign(cfg_.p, Tensor());
  for (std::size_t j = 0; j < cfg_.p; ++j) {
    const Tensor& bias = store.at("spf.o" + std::to_string(j + 1) + ".bias").value;
    Tensor& zj = cache.zj[j];
    zj = Tensor({B, L, r});
    for (std::size_t p = 0; p < n; ++p) {
      double* out = zj.data() + p * r;
      for (std::size_t k = 0; k < r; ++k) out[k] = bias[k];
    }
    for (int m = 0; m < kNumModalities; ++m) {
      const Tensor& w = store.at(proj_name(j, m)).value;
      double lambda = cfg_.msp_on ? gate_value(store, j, m) : 1.0;
      Tensor& pre = cache.pre[j][m];
      Tensor& zjm = cache.zjm[j][m];
      pre = Tensor({B, L, r});
      zjm = Tensor({B, L, r});
      for (std::size_t p = 0; p < n; ++p) {
        double* pr = pre.data() + p * r;
        double* za = zjm.data() + p * r;
        double* out = cache.zj[j].data() + p * r;
        linear_wx(w, h[m].data() + p * d, nullptr, pr);
        for (std::size_t k = 0; k < r; ++k) {
          za[k] = gelu(pr[k]);
          out[k] += lambda * za[k];
        }
      }
    }
  }

  cache.z = Tensor({B, L, r});
  for (std::size_t p = 0; p < n; ++p) {
    double* z = cache.z.data() + p * r;
    for (std::size_t k = 0; k < r; ++k) z[k] = cache.zj[0].data()[p * r + k];
    for (std::size_t j = 1; j < cfg_.p; ++j) {
      const double* zj = cache.zj[j].data() + p * r;
      for (std::size_t k = 0; k < r; ++k) z[k] *= zj[k];
    }
  }

  cache.zhat = Tensor({B, L, r});
  signed_sqrt(cache.z.values(), cache.zhat.values());

  const Tensor& wout = store.at("spf.out.W").value;
  const Tensor& bout = store.at("spf.out.b").value;
  const Tensor& wcls = store.at("spf.cls.W").value;
  const Tensor& bcls = store.at("spf.cls.b").value;
  cache.proj = Tensor({B, L, d});
  cache.logits = Tensor({B, L, c});
  cache.yhat = Tensor({B, L, c});
  for (std::size_t p = 0; p < n; ++p) {
    linear_xw(cache.zhat.data() + p * r, wout, bout.data(), cache.proj.data() + p * d);
    linear_xw(cache.proj.data() + p * d, wcls, bcls.data(), cache.logits.data() + p * c);
    softmax_with_temperature(std::span<const double>(cache.logits.data() + p * c, c), 1.0,
                             std::span<double>(cache.yhat.data() + p * c, c));
  }
}

void SpfFusion::backward(ParamStore& store, const std::array<Tensor, kNumModalities>& h,
                         FusionCache& cache, const Tensor& d_logits,
                         std::array<Tensor, kNumModalities>& d_h) const {
  std::size_t B = h[0].dim(0), L = h[0].dim(1);
  std::size_t n = B * L, r = cfg_.r, d = cfg_.d, c = cfg_.classes;

  const Tensor& wout = store.at("spf.out.W").value;
  const Tensor& wcls = store.at("spf.cls.W").value;
  Tensor& dwout = store.at("spf.out.W").grad;
  Tensor& dbout = store.at("spf.out.b").grad;
  Tensor& dwcls = store.at("spf.cls.W").grad;
  Tensor& dbcls = store.at("spf.cls.b").grad;

  Tensor d_zhat({B, L, r}, 0.0);
  std::vector<double> d_proj(d);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t i = 0; i < d; ++i) d_proj[i] = 0.0;
    linear_xw_backward(cache.proj.data() + p * d, wcls, d_logits.data() + p * c, dwcls,
                       dbcls.data(), d_proj.data());
    linear_xw_backward(cache.zhat.data() + p * r, wout, d_proj.data(), dwout, dbout.data(),
                       d_zhat.data() + p * r);
  }

  Tensor d_z({B, L, r});
  signed_sqrt_backward(cache.z.values(), d_zhat.values(), d_z.values());

  // d z_j = d z * prod_{i != j} z_i, via prefix/suffix products so zero factors
  // stay exact.
  std::vector<Tensor> d_zj(cfg_.p);
  for (std::size_t j = 0; j < cfg_.p; ++j) d_zj[j] = Tensor({B, L, r}, 0.0);
  std::vector<double> prefix(r), suffix(r);
  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t k = 0; k < r; ++k) prefix[k] = 1.0;
    for (std::size_t j = 0; j < cfg_.p; ++j) {
      double* dz = d_zj[j].data() + p * r;
      for (std::size_t k = 0; k < r; ++k) dz[k] = prefix[k];
      const double* zj = cache.zj[j].data() + p * r;
      for (std::size_t k = 0; k < r; ++k) prefix[k] *= zj[k];
    }
    for (std::size_t k = 0; k < r; ++k) suffix[k] = 1.0;
    for (std::size_t j = cfg_.p; j-- > 0;) {
      double* dz = d_zj[j].data() + p * r;
      const double* g = d_z.data() + p * r;
      for (std::size_t k = 0; k < r; ++k) dz[k] *= suffix[k] * g[k];
      const double* zj = cache.zj[j].data() + p * r;
      for (std::size_t k = 0; k < r; ++k) suffix[k] *= zj[k];
    }
  }

  std::vector<double> d_zjm(r);
  for (std::size_t j = 0; j < cfg_.p; ++j) {
    Tensor& dbias = store.at("spf.o" + std::to_string(j + 1) + ".bias").grad;
    for (std::size_t p = 0; p < n; ++p) {
      const double* dz = d_zj[j].data() + p * r;
      for (std::size_t k = 0; k < r; ++k) dbias[k] += dz[k];
    }
    for (int m = 0; m < kNumModalities; ++m) {
      const Tensor& w = store.at(proj_name(j, m)).value;
      Tensor& dw = store.at(proj_name(j, m)).grad;
      double lambda = 1.0;
      double* d_gate = nullptr;
      if (cfg_.msp_on) {
        std::string gn = "spf.o" + std::to_string(j + 1) + "." + kModalityNames[m] + ".gate";
        lambda = sigmoid(store.at(gn).value[0]);
        d_gate = &store.at(gn).grad[0];
      }
      double d_lambda = 0.0;
      for (std::size_t p = 0; p < n; ++p) {
        const double* dz = d_zj[j].data() + p * r;
        const double* zjm = cache.zjm[j][m].data() + p * r;
        const double* pre = cache.pre[j][m].data() + p * r;
        for (std::size_t k = 0; k < r; ++k) {
          d_lambda += dz[k] * zjm[k];
          d_zjm[k] = dz[k] * lambda * gelu_grad(pre[k]);
        }
        linear_wx_backward(w, h[m].data() + p * d, d_zjm.data(), dw, nullptr,
                           d_h[m].data() + p * d);
      }
      if (d_gate) *d_gate += d_lambda * lambda * (1.0 - lambda);
    }
  }
}

ConcatFusion::ConcatFusion(std::size_t d, std::size_t classes, ParamStore& store, Rng init)
    : d_(d), classes_(classes) {
  Tensor w({3 * d, classes});
  fill_glorot(w, 3 * d, classes, init.split(fnv1a("fusion.concat.W")));
  store.add("fusion.concat.W", ParamGroup::kFusion, std::move(w));
  store.add("fusion.concat.b", ParamGroup::kFusion, Tensor({classes}, 0.0));
}

void ConcatFusion::forward(const ParamStore& store, const std::array<Tensor, kNumModalities>& h,
                           FusionCache& cache) const {
  std::size_t B = h[0].dim(0), L = h[0].dim(1), n = B * L;
  const Tensor& w = store.at("fusion.concat.W").value;
  const Tensor& b = store.at("fusion.concat.b").value;
  cache.logits = Tensor({B, L, classes_});
  cache.yhat = Tensor({B, L, classes_});
  std::vector<double> cat(3 * d_);
  for (std::size_t p = 0; p < n; ++p) {
    for (int m = 0; m < kNumModalities; ++m) {
      const double* src = h[m].data() + p * d_;
      for (std::size_t i = 0; i < d_; ++i) cat[m * d_ + i] = src[i];
    }
    linear_xw(cat.data(), w, b.data(), cache.logits.data() + p * classes_);
    softmax_with_temperature(
        std::span<const double>(cache.logits.data() + p * classes_, classes_), 1.0,
        std::span<double>(cache.yhat.data() + p * classes_, classes_));
  }
}

void ConcatFusion::backward(ParamStore& store, const std::array<Tensor, kNumModalities>& h,
                            FusionCache& /*cache*/, const Tensor& d_logits,
                            std::array<Tensor, kNumModalities>& d_h) const {
  std::size_t B = h[0].dim(0), L = h[0].dim(1), n = B * L;
  const Tensor& w = store.at("fusion.concat.W").value;
  Tensor& dw = store.at("fusion.concat.W").grad;
  Tensor& db = store.at("fusion.concat.b").grad;
  std::vector<double> cat(3 * d_), dcat(3 * d_);
  for (std::size_t p = 0; p < n; ++p) {
    for (int m = 0; m < kNumModalities; ++m) {
      const double* src = h[m].data() + p * d_;
      for (std::size_t i = 0; i < d_; ++i) cat[m * d_ + i] = src[i];
    }
    for (std::size_t i = 0; i < 3 * d_; ++i) dcat[i] = 0.0;
    linear_xw_backward(cat.data(), w, d_logits.data() + p * classes_, dw, db.data(),
                       dcat.data());
    for (int m = 0; m < kNumModalities; ++m) {
      double* dst = d_h[m].data() + p * d_;
      for (std::size_t i = 0; i < d_; ++i) dst[i] += dcat[m * d_ + i];
    }
  }
}

}  // namespace css
