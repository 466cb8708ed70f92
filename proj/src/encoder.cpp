#include "css/encoder.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

#include "css/init.hpp"
#include "css/ops.hpp"

namespace css {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string mname(const char* prefix, int m, const char* suffix) {
  return std::string(prefix) + "." + kModalityNames[m] + "." + suffix;
}

// y[j] = sum_i x[i] * W(i,j) + b[j]; W is [in x out].
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

// Accumulates dW(i,j) += x[i]*dy[j], db[j] += dy[j], dx[i] += sum_j W(i,j)*dy[j].
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

// Post-norm layer norm over the trailing feature dimension.
void layer_norm_forward(const Tensor& in, const Tensor& gain, const Tensor& bias, Tensor& hat,
                        Tensor& out, std::vector<double>& inv_std) {
  std::size_t n = in.size() / in.shape().back();
  std::size_t d = in.shape().back();
  inv_std.assign(n, 0.0);
  for (std::size_t p = 0; p < n; ++p) {
    const double* x = in.data() + p * d;
    double* xh = hat.data() + p * d;
    double* y = out.data() + p * d;
    double mean = 0.0;
    for (std::size_t c = 0; c < d; ++c) mean += x[c];
    mean /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      double t = x[c] - mean;
      var += t * t;
    }
    var /= static_cast<double>(d);
    double is = 1.0 / std::sqrt(var + kLnEps);
    inv_std[p] = is;
    for (std::size_t c = 0; c < d; ++c) {
      xh[c] = (x[c] - mean) * is;
      y[c] = gain[c] * xh[c] + bias[c];
    }
  }
}

void layer_norm_backward(const Tensor& hat, const std::vector<double>& inv_std,
                         const Tensor& gain, const Tensor& d_out, Tensor& d_gain, Tensor& d_bias,
                         Tensor& d_in) {
  std::size_t d = hat.shape().back();
  std::size_t n = hat.size() / d;
  for (std::size_t p = 0; p < n; ++p) {
    const double* xh = hat.data() + p * d;
    const double* dy = d_out.data() + p * d;
    double* dx = d_in.data() + p * d;
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t c = 0; c < d; ++c) {
      d_gain[c] += dy[c] * xh[c];
      d_bias[c] += dy[c];
      double g = dy[c] * gain[c];
      sum_g += g;
      sum_gx += g * xh[c];
    }
    double inv_d = 1.0 / static_cast<double>(d);
    for (std::size_t c = 0; c < d; ++c) {
      double g = dy[c] * gain[c];
      dx[c] += inv_std[p] * (g - inv_d * sum_g - xh[c] * inv_d * sum_gx);
    }
  }
}

// Masked softmax over one score row; rows with no valid key become all-zero.
void masked_softmax_row(double* row, std::size_t len) {
  double hi = kNegInf;
  for (std::size_t j = 0; j < len; ++j) hi = std::max(hi, row[j]);
  if (hi == kNegInf) {
    for (std::size_t j = 0; j < len; ++j) row[j] = 0.0;
    return;
  }
  double sum = 0.0;
  for (std::size_t j = 0; j < len; ++j) {
    row[j] = std::exp(row[j] - hi);
    sum += row[j];
  }
  for (std::size_t j = 0; j < len; ++j) row[j] /= sum;
}

}  // namespace

void DropoutMask::sample(const Tensor& like, double rate, Rng& rng) {
  active = rate > 0.0;
  if (!active) return;
  scale = Tensor(like.shape(), 0.0);
  double keep = 1.0 - rate;
  for (std::size_t i = 0; i < scale.size(); ++i) {
    scale[i] = rng.next_uniform() < rate ? 0.0 : 1.0 / keep;
  }
}

void DropoutMask::apply(Tensor& x) const {
  if (!active) return;
  for (std::size_t i = 0; i < x.size(); ++i) x[i] *= scale[i];
}

void DropoutMask::backward(Tensor& dx) const {
  if (!active) return;
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= scale[i];
}

double Encoder::positional(std::size_t pos, std::size_t channel, std::size_t d) {
  double exponent = static_cast<double>(2 * (channel / 2)) / static_cast<double>(d);
  double angle = static_cast<double>(pos) / std::pow(10000.0, exponent);
  return (channel % 2 == 0) ? std::sin(angle) : std::cos(angle);
}

Encoder::Encoder(const EncoderConfig& cfg, ParamStore& store, Rng init) : cfg_(cfg) {
  if (cfg_.d % cfg_.heads != 0) {
    throw std::invalid_argument("Encoder: d must be divisible by head count");
  }
  auto reg = [&](const std::string& name, Tensor t) {
    store.add(name, ParamGroup::kEncoder, std::move(t));
  };
  auto glorot = [&](const std::string& name, std::size_t in, std::size_t out) {
    Tensor t({in, out});
    fill_glorot(t, in, out, init.split(fnv1a(name.c_str())));
    reg(name, std::move(t));
  };
  auto zeros = [&](const std::string& name, std::size_t n) { reg(name, Tensor({n}, 0.0)); };
  auto ones = [&](const std::string& name, std::size_t n) { reg(name, Tensor({n}, 1.0)); };

  for (int m = 0; m < kNumModalities; ++m) {
    // Pointwise projection stored [d x d_in] so h = W x + b.
    std::string wn = mname("embed", m, "W");
    Tensor w({cfg_.d, cfg_.d_in[m]});
    fill_glorot(w, cfg_.d_in[m], cfg_.d, init.split(fnv1a(wn.c_str())));
    reg(wn, std::move(w));
    zeros(mname("embed", m, "b"), cfg_.d);
  }
  {
    Tensor spk({cfg_.n_speakers, cfg_.d});
    fill_gaussian(spk, 0.02, init.split(fnv1a("speaker.emb")));
    reg("speaker.emb", std::move(spk));
  }
  if (cfg_.mae_on) {
    for (int m = 0; m < kNumModalities; ++m) {
      glorot(mname("mae", m, "attn.Wq"), cfg_.d, cfg_.d);
      zeros(mname("mae", m, "attn.bq"), cfg_.d);
      glorot(mname("mae", m, "attn.Wk"), cfg_.d, cfg_.d);
      zeros(mname("mae", m, "attn.bk"), cfg_.d);
      glorot(mname("mae", m, "attn.Wv"), cfg_.d, cfg_.d);
      zeros(mname("mae", m, "attn.bv"), cfg_.d);
      glorot(mname("mae", m, "attn.Wo"), cfg_.d, cfg_.d);
      zeros(mname("mae", m, "attn.bo"), cfg_.d);
      ones(mname("mae", m, "ln1.gain"), cfg_.d);
      zeros(mname("mae", m, "ln1.bias"), cfg_.d);
      glorot(mname("mae", m, "ff.W1"), cfg_.d, cfg_.d_ff);
      zeros(mname("mae", m, "ff.b1"), cfg_.d_ff);
      glorot(mname("mae", m, "ff.W2"), cfg_.d_ff, cfg_.d);
      zeros(mname("mae", m, "ff.b2"), cfg_.d);
      ones(mname("mae", m, "ln2.gain"), cfg_.d);
      zeros(mname("mae", m, "ln2.bias"), cfg_.d);
    }
  }
  if (cfg_.iae_on) {
    for (int m = 0; m < kNumModalities; ++m) {
      for (int n = 0; n < kNumModalities; ++n) {
        if (n == m) continue;
        std::string base = mname("iae", m, "gate.") + kModalityNames[n];
        glorot(base + ".W", cfg_.d, cfg_.d);
        zeros(base + ".b", cfg_.d);
      }
    }
  }
  for (int m = 0; m < kNumModalities; ++m) {
    // Stored [d x 2d]: applied as W [h_ma; h_ia] + b.
    std::string wn = mname("integrate", m, "W");
    Tensor w({cfg_.d, 2 * cfg_.d});
    fill_glorot(w, 2 * cfg_.d, cfg_.d, init.split(fnv1a(wn.c_str())));
    reg(wn, std::move(w));
    zeros(mname("integrate", m, "b"), cfg_.d);
  }
}

void Encoder::embed_forward(const ParamStore& store, const DialogueBatch& batch,
                            EncoderCache& cache) const {
  std::size_t B = batch.batch_size, L = batch.max_len, d = cfg_.d;
  const Tensor& spk = store.at("speaker.emb").value;
  for (int m = 0; m < kNumModalities; ++m) {
    if (batch.features[m].dim(2) != cfg_.d_in[m]) {
      throw std::invalid_argument(std::string("Encoder: input width mismatch for ") +
                                  kModalityNames[m]);
    }
    const Tensor& w = store.at(mname("embed", m, "W")).value;
    const Tensor& b = store.at(mname("embed", m, "b")).value;
    Tensor& h0 = cache.h0[m];
    h0 = Tensor({B, L, d});
    for (std::size_t bi = 0; bi < B; ++bi) {
      for (std::size_t t = 0; t < L; ++t) {
        const double* x = batch.features[m].row(bi, t);
        std::int32_t sid = batch.speakers[bi * L + t];
        if (sid < 0 || static_cast<std::size_t>(sid) >= cfg_.n_speakers) {
          throw std::invalid_argument("Encoder: speaker id out of range");
        }
        double* h = h0.row(bi, t);
        for (std::size_t i = 0; i < d; ++i) {
          double acc = b[i] + spk.at(sid, i) + positional(t, i, d);
          const double* wrow = w.data() + i * cfg_.d_in[m];
          for (std::size_t j = 0; j < cfg_.d_in[m]; ++j) acc += wrow[j] * x[j];
          h[i] = acc;
        }
      }
    }
  }
}

void Encoder::embed_backward(ParamStore& store, const DialogueBatch& batch,
                             std::array<Tensor, kNumModalities>& d_h0) const {
  std::size_t B = batch.batch_size, L = batch.max_len, d = cfg_.d;
  Tensor& d_spk = store.at("speaker.emb").grad;
  for (int m = 0; m < kNumModalities; ++m) {
    Tensor& dw = store.at(mname("embed", m, "W")).grad;
    Tensor& db = store.at(mname("embed", m, "b")).grad;
    for (std::size_t bi = 0; bi < B; ++bi) {
      for (std::size_t t = 0; t < L; ++t) {
        const double* x = batch.features[m].row(bi, t);
        const double* dh = d_h0[m].row(bi, t);
        std::int32_t sid = batch.speakers[bi * L + t];
        for (std::size_t i = 0; i < d; ++i) {
          double g = dh[i];
          if (g == 0.0) continue;
          db[i] += g;
          d_spk.at(sid, i) += g;
          double* dwrow = dw.data() + i * cfg_.d_in[m];
          for (std::size_t j = 0; j < cfg_.d_in[m]; ++j) dwrow[j] += g * x[j];
        }
      }
    }
  }
}

void Encoder::mae_forward(const ParamStore& store, int m, const DialogueBatch& batch,
                          EncoderCache& cache, Rng* dropout_rng) const {
  std::size_t B = batch.batch_size, L = batch.max_len, d = cfg_.d;
  std::size_t H = cfg_.heads, dh = d / H;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionCache& ac = cache.mae[m];
  const Tensor& in = cache.h0[m];

  const Tensor& wq = store.at(mname("mae", m, "attn.Wq")).value;
  const Tensor& bq = store.at(mname("mae", m, "attn.bq")).value;
  const Tensor& wk = store.at(mname("mae", m, "attn.Wk")).value;
  const Tensor& bk = store.at(mname("mae", m, "attn.bk")).value;
  const Tensor& wv = store.at(mname("mae", m, "attn.Wv")).value;
  const Tensor& bv = store.at(mname("mae", m, "attn.bv")).value;
  const Tensor& wo = store.at(mname("mae", m, "attn.Wo")).value;
  const Tensor& bo = store.at(mname("mae", m, "attn.bo")).value;

  ac.q = Tensor({B, L, d});
  ac.k = Tensor({B, L, d});
  ac.v = Tensor({B, L, d});
  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t t = 0; t < L; ++t) {
      const double* x = in.row(bi, t);
      linear_xw(x, wq, bq.data(), ac.q.row(bi, t));
      linear_xw(x, wk, bk.data(), ac.k.row(bi, t));
      linear_xw(x, wv, bv.data(), ac.v.row(bi, t));
    }
  }

  ac.probs = Tensor({B, H, L, L});
  ac.heads_out = Tensor({B, L, d});
  for (std::size_t bi = 0; bi < B; ++bi) {
    const double* mu = batch.mask.data() + bi * L;
    for (std::size_t a = 0; a < H; ++a) {
      std::size_t off = a * dh;
      for (std::size_t i = 0; i < L; ++i) {
        double* row = &ac.probs.data()[((bi * H + a) * L + i) * L];
        const double* qi = ac.q.row(bi, i) + off;
        for (std::size_t j = 0; j < L; ++j) {
          if (mu[j] == 0.0) {
            row[j] = kNegInf;
            continue;
          }
          const double* kj = ac.k.row(bi, j) + off;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          row[j] = s * scale;
        }
        masked_softmax_row(row, L);
        double* out = ac.heads_out.row(bi, i) + off;
        for (std::size_t c = 0; c < dh; ++c) out[c] = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          if (row[j] == 0.0) continue;
          const double* vj = ac.v.row(bi, j) + off;
          for (std::size_t c = 0; c < dh; ++c) out[c] += row[j] * vj[c];
        }
      }
    }
  }

  ac.attn_out = Tensor({B, L, d});
  for (std::size_t p = 0; p < B * L; ++p) {
    linear_xw(ac.heads_out.data() + p * d, wo, bo.data(), ac.attn_out.data() + p * d);
  }
  if (dropout_rng) {
    ac.drop.sample(ac.attn_out, cfg_.dropout, *dropout_rng);
  } else {
    ac.drop.active = false;
  }
  ac.drop.apply(ac.attn_out);

  ac.ln1_in = Tensor({B, L, d});
  for (std::size_t i = 0; i < ac.ln1_in.size(); ++i) {
    ac.ln1_in[i] = in[i] + ac.attn_out[i];
  }
  ac.ln1_hat = Tensor({B, L, d});
  ac.ln1_out = Tensor({B, L, d});
  layer_norm_forward(ac.ln1_in, store.at(mname("mae", m, "ln1.gain")).value,
                     store.at(mname("mae", m, "ln1.bias")).value, ac.ln1_hat, ac.ln1_out,
                     ac.ln1_inv_std);

  const Tensor& w1 = store.at(mname("mae", m, "ff.W1")).value;
  const Tensor& b1 = store.at(mname("mae", m, "ff.b1")).value;
  const Tensor& w2 = store.at(mname("mae", m, "ff.W2")).value;
  const Tensor& b2 = store.at(mname("mae", m, "ff.b2")).value;
  ac.ff_pre = Tensor({B, L, cfg_.d_ff});
  ac.ff_act = Tensor({B, L, cfg_.d_ff});
  ac.ff_out = Tensor({B, L, d});
  for (std::size_t p = 0; p < B * L; ++p) {
    linear_xw(ac.ln1_out.data() + p * d, w1, b1.data(), ac.ff_pre.data() + p * cfg_.d_ff);
    for (std::size_t c = 0; c < cfg_.d_ff; ++c) {
      ac.ff_act.data()[p * cfg_.d_ff + c] = gelu(ac.ff_pre.data()[p * cfg_.d_ff + c]);
    }
    linear_xw(ac.ff_act.data() + p * cfg_.d_ff, w2, b2.data(), ac.ff_out.data() + p * d);
  }
  if (dropout_rng) {
    ac.ff_drop.sample(ac.ff_out, cfg_.dropout, *dropout_rng);
  } else {
    ac.ff_drop.active = false;
  }
  ac.ff_drop.apply(ac.ff_out);

  ac.ln2_in = Tensor({B, L, d});
  for (std::size_t i = 0; i < ac.ln2_in.size(); ++i) {
    ac.ln2_in[i] = ac.ln1_out[i] + ac.ff_out[i];
  }
  ac.ln2_hat = Tensor({B, L, d});
  ac.ln2_out = Tensor({B, L, d});
  layer_norm_forward(ac.ln2_in, store.at(mname("mae", m, "ln2.gain")).value,
                     store.at(mname("mae", m, "ln2.bias")).value, ac.ln2_hat, ac.ln2_out,
                     ac.ln2_inv_std);
  cache.h_ma[m] = ac.ln2_out;
}

void Encoder::mae_backward(ParamStore& store, int m, const DialogueBatch& batch,
                           EncoderCache& cache, const Tensor& d_out, Tensor& d_in) const {
  std::size_t B = batch.batch_size, L = batch.max_len, d = cfg_.d;
  std::size_t H = cfg_.heads, dh = d / H;
  double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionCache& ac = cache.mae[m];
  const Tensor& in = cache.h0[m];

  Tensor d_u2({B, L, d});
  layer_norm_backward(ac.ln2_hat, ac.ln2_inv_std, store.at(mname("mae", m, "ln2.gain")).value,
                      d_out, store.at(mname("mae", m, "ln2.gain")).grad,
                      store.at(mname("mae", m, "ln2.bias")).grad, d_u2);

  // Residual split: u2 = ln1_out + dropout(ff_out).
  Tensor d_y1 = d_u2;
  Tensor d_ff = d_u2;
  ac.ff_drop.backward(d_ff);

  const Tensor& w1 = store.at(mname("mae", m, "ff.W1")).value;
  const Tensor& w2 = store.at(mname("mae", m, "ff.W2")).value;
  Tensor& dw1 = store.at(mname("mae", m, "ff.W1")).grad;
  Tensor& db1 = store.at(mname("mae", m, "ff.b1")).grad;
  Tensor& dw2 = store.at(mname("mae", m, "ff.W2")).grad;
  Tensor& db2 = store.at(mname("mae", m, "ff.b2")).grad;
  Tensor d_act({B, L, cfg_.d_ff});
  for (std::size_t p = 0; p < B * L; ++p) {
    linear_xw_backward(ac.ff_act.data() + p * cfg_.d_ff, w2, d_ff.data() + p * d, dw2, db2.data(),
                       d_act.data() + p * cfg_.d_ff);
    double* da = d_act.data() + p * cfg_.d_ff;
    const double* pre = ac.ff_pre.data() + p * cfg_.d_ff;
    for (std::size_t c = 0; c < cfg_.d_ff; ++c) da[c] *= gelu_grad(pre[c]);
    linear_xw_backward(ac.ln1_out.data() + p * d, w1, da, dw1, db1.data(), d_y1.data() + p * d);
  }

  Tensor d_u1({B, L, d});
  layer_norm_backward(ac.ln1_hat, ac.ln1_inv_std, store.at(mname("mae", m, "ln1.gain")).value,
                      d_y1, store.at(mname("mae", m, "ln1.gain")).grad,
                      store.at(mname("mae", m, "ln1.bias")).grad, d_u1);

  // u1 = in + dropout(attn_out).
  for (std::size_t i = 0; i < d_in.size(); ++i) d_in[i] += d_u1[i];
  Tensor d_attn = d_u1;
  ac.drop.backward(d_attn);

  const Tensor& wo = store.at(mname("mae", m, "attn.Wo")).value;
  Tensor& dwo = store.at(mname("mae", m, "attn.Wo")).grad;
  Tensor& dbo = store.at(mname("mae", m, "attn.bo")).grad;
  Tensor d_heads({B, L, d});
  for (std::size_t p = 0; p < B * L; ++p) {
    linear_xw_backward(ac.heads_out.data() + p * d, wo, d_attn.data() + p * d, dwo, dbo.data(),
                       d_heads.data() + p * d);
  }

  Tensor dq({B, L, d});
  Tensor dk({B, L, d});
  Tensor dv({B, L, d});
  std::vector<double> dp(L), ds(L);
  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t a = 0; a < H; ++a) {
      std::size_t off = a * dh;
      for (std::size_t i = 0; i < L; ++i) {
        const double* prow = &ac.probs.data()[((bi * H + a) * L + i) * L];
        const double* dhi = d_heads.row(bi, i) + off;
        // dP and softmax backward over the row.
        double inner = 0.0;
        for (std::size_t j = 0; j < L; ++j) {
          if (prow[j] == 0.0) {
            dp[j] = 0.0;
            continue;
          }
          const double* vj = ac.v.row(bi, j) + off;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += dhi[c] * vj[c];
          dp[j] = s;
          inner += s * prow[j];
        }
        for (std::size_t j = 0; j < L; ++j) ds[j] = prow[j] * (dp[j] - inner);
        double* dqi = dq.row(bi, i) + off;
        const double* qi = ac.q.row(bi, i) + off;
        for (std::size_t j = 0; j < L; ++j) {
          if (prow[j] == 0.0) continue;  // masked or unreachable key
          double* dvj = dv.row(bi, j) + off;
          const double* kj = ac.k.row(bi, j) + off;
          double* dkj = dk.row(bi, j) + off;
          for (std::size_t c = 0; c < dh; ++c) {
            dvj[c] += prow[j] * dhi[c];
            dqi[c] += scale * ds[j] * kj[c];
            dkj[c] += scale * ds[j] * qi[c];
          }
        }
      }
    }
  }

  const Tensor& wq = store.at(mname("mae", m, "attn.Wq")).value;
  const Tensor& wk = store.at(mname("mae", m, "attn.Wk")).value;
  const Tensor& wv = store.at(mname("mae", m, "attn.Wv")).value;
  Tensor& dwq = store.at(mname("mae", m, "attn.Wq")).grad;
  Tensor& dbq = store.at(mname("mae", m, "attn.bq")).grad;
  Tensor& dwk = store.at(mname("mae", m, "attn.Wk")).grad;
  Tensor& dbk = store.at(mname("mae", m, "attn.bk")).grad;
  Tensor& dwv = store.at(mname("mae", m, "attn.Wv")).grad;
  Tensor& dbv = store.at(mname("mae", m, "attn.bv")).grad;
  for (std::size_t p = 0; p < B * L; ++p) {
    const double* x = in.data() + p * d;
    linear_xw_backward(x, wq, dq.data() + p * d, dwq, dbq.data(), d_in.data() + p * d);
    linear_xw_backward(x, wk, dk.data() + p * d, dwk, dbk.data(), d_in.data() + p * d);
    linear_xw_backward(x, wv, dv.data() + p * d, dwv, dbv.data(), d_in.data() + p * d);
  }
}

void Encoder::iae_forward(const ParamStore& store, int m, const DialogueBatch& batch,
                          EncoderCache& cache, Rng* dropout_rng) const {
  std::size_t B = batch.batch_size, L = batch.max_len, d = cfg_.d;
  double scale = 1.0 / std::sqrt(static_cast<double>(d));
  CrossAttentionCache& cc = cache.iae[m];
  const Tensor& q = cache.h_ma[m];

  int slot = 0;
  cc.kv = Tensor({B, L, d}, 0.0);
  for (int n = 0; n < kNumModalities; ++n) {
    if (n == m) continue;
    cc.sources[slot] = n;
    std::string base = mname("iae", m, "gate.") + kModalityNames[n];
    const Tensor& w = store.at(base + ".W").value;
    const Tensor& b = store.at(base + ".b").value;
    Tensor& gate = cc.gates[slot];
    gate = Tensor({B, L, d});
    for (std::size_t p = 0; p < B * L; ++p) {
      double* g = gate.data() + p * d;
      linear_xw(q.data() + p * d, w, b.data(), g);
      const double* src = cache.h_ma[n].data() + p * d;
      double* kv = cc.kv.data() + p * d;
      for (std::size_t c = 0; c < d; ++c) {
        g[c] = sigmoid(g[c]);
        kv[c] += g[c] * src[c];
      }
    }
    ++slot;
  }

  cc.probs = Tensor({B, L, L});
  cc.out = Tensor({B, L, d});
  for (std::size_t bi = 0; bi < B; ++bi) {
    const double* mu = batch.mask.data() + bi * L;
    for (std::size_t i = 0; i < L; ++i) {
      double* row = &cc.probs.data()[(bi * L + i) * L];
      const double* qi = q.row(bi, i);
      for (std::size_t j = 0; j < L; ++j) {
        if (mu[j] == 0.0) {
          row[j] = kNegInf;
          continue;
        }
        const double* kj = cc.kv.row(bi, j);
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += qi[c] * kj[c];
        row[j] = s * scale;
      }
      masked_softmax_row(row, L);
      double* out = cc.out.row(bi, i);
      for (std::size_t c = 0; c < d; ++c) out[c] = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        if (row[j] == 0.0) continue;
        const double* vj = cc.kv.row(bi, j);
        for (std::size_t c = 0; c < d; ++c) out[c] += row[j] * vj[c];
      }
    }
  }
  if (dropout_rng) {
    cc.drop.sample(cc.out, cfg_.dropout, *dropout_rng);
  } else {
    cc.drop.active = false;
  }
  cc.drop.apply(cc.out);
  cache.h_ia[m] = cc.out;
}

void Encoder::iae_backward(ParamStore& store, int m, const DialogueBatch& batch,
                           EncoderCache& cache, const Tensor& d_out,
                           std::array<Tensor, kNumModalities>& d_h_ma) const {
  std::size_t B = batch.batch_size, L = batch.max_len, d = cfg_.d;
  double scale = 1.0 / std::sqrt(static_cast<double>(d));
  CrossAttentionCache& cc = cache.iae[m];
  const Tensor& q = cache.h_ma[m];

  Tensor d_o = d_out;
  cc.drop.backward(d_o);

  Tensor d_kv({B, L, d}, 0.0);
  Tensor d_q({B, L, d}, 0.0);
  std::vector<double> dp(L), ds(L);
  for (std::size_t bi = 0; bi < B; ++bi) {
    for (std::size_t i = 0; i < L; ++i) {
      const double* prow = &cc.probs.data()[(bi * L + i) * L];
      const double* doi = d_o.row(bi, i);
      double inner = 0.0;
      for (std::size_t j = 0; j < L; ++j) {
        if (prow[j] == 0.0) {
          dp[j] = 0.0;
          continue;
        }
        const double* vj = cc.kv.row(bi, j);
        double s = 0.0;
        for (std::size_t c = 0; c < d; ++c) s += doi[c] * vj[c];
        dp[j] = s;
        inner += s * prow[j];
      }
      for (std::size_t j = 0; j < L; ++j) ds[j] = prow[j] * (dp[j] - inner);
      const double* qi = q.row(bi, i);
      double* dqi = d_q.row(bi, i);
      for (std::size_t j = 0; j < L; ++j) {
        if (prow[j] == 0.0) continue;
        const double* kj = cc.kv.row(bi, j);
        double* dkj = d_kv.row(bi, j);
        for (std::size_t c = 0; c < d; ++c) {
          dkj[c] += prow[j] * doi[c] + scale * ds[j] * qi[c];
          dqi[c] += scale * ds[j] * kj[c];
        }
      }
    }
  }

  for (int slot = 0; slot < 2; ++slot) {
    int n = cc.sources[slot];
    std::string base = mname("iae", m, "gate.") + kModalityNames[n];
    const Tensor& w = store.at(base + ".W").value;
    Tensor& dw = store.at(base + ".W").grad;
    Tensor& db = store.at(base + ".b").grad;
    const Tensor& gate = cc.gates[slot];
    std::vector<double> dpre(d);
    for (std::size_t p = 0; p < B * L; ++p) {
      const double* g = gate.data() + p * d;
      const double* src = cache.h_ma[n].data() + p * d;
      const double* dkv = d_kv.data() + p * d;
      double* dsrc = d_h_ma[n].data() + p * d;
      for (std::size_t c = 0; c < d; ++c) {
        dsrc[c] += dkv[c] * g[c];
        dpre[c] = dkv[c] * src[c] * g[c] * (1.0 - g[c]);
      }
      linear_xw_backward(q.data() + p * d, w, dpre.data(), dw, db.data(), d_q.data() + p * d);
    }
  }

  for (std::size_t i = 0; i < d_q.size(); ++i) d_h_ma[m][i] += d_q[i];
}

void Encoder::integrate_forward(const ParamStore& store, int m, EncoderCache& cache) const {
  const Tensor& w = store.at(mname("integrate", m, "W")).value;  // [d x 2d]
  const Tensor& b = store.at(mname("integrate", m, "b")).value;
  const Tensor& ma = cache.h_ma[m];
  const Tensor& ia = cache.h_ia[m];
  std::size_t d = cfg_.d;
  std::size_t n = ma.size() / d;
  Tensor& out = cache.h_tilde[m];
  out = Tensor(ma.shape());
  for (std::size_t p = 0; p < n; ++p) {
    const double* xa = ma.data() + p * d;
    const double* xb = ia.data() + p * d;
    double* y = out.data() + p * d;
    for (std::size_t i = 0; i < d; ++i) {
      double acc = b[i];
      const double* wrow = w.data() + i * 2 * d;
      for (std::size_t k = 0; k < d; ++k) acc += wrow[k] * xa[k] + wrow[d + k] * xb[k];
      y[i] = acc;
    }
  }
}

void Encoder::integrate_backward(ParamStore& store, int m, EncoderCache& cache,
                                 const Tensor& d_tilde, Tensor& d_ma, Tensor& d_ia) const {
  const Tensor& w = store.at(mname("integrate", m, "W")).value;
  Tensor& dw = store.at(mname("integrate", m, "W")).grad;
  Tensor& db = store.at(mname("integrate", m, "b")).grad;
  const Tensor& ma = cache.h_ma[m];
  const Tensor& ia = cache.h_ia[m];
  std::size_t d = cfg_.d;
  std::size_t n = ma.size() / d;
  for (std::size_t p = 0; p < n; ++p) {
    const double* xa = ma.data() + p * d;
    const double* xb = ia.data() + p * d;
    const double* dy = d_tilde.data() + p * d;
    double* dxa = d_ma.data() + p * d;
    double* dxb = d_ia.data() + p * d;
    for (std::size_t i = 0; i < d; ++i) {
      double g = dy[i];
      if (g == 0.0) continue;
      db[i] += g;
      const double* wrow = w.data() + i * 2 * d;
      double* dwrow = dw.data() + i * 2 * d;
      for (std::size_t k = 0; k < d; ++k) {
        dwrow[k] += g * xa[k];
        dwrow[d + k] += g * xb[k];
        dxa[k] += g * wrow[k];
        dxb[k] += g * wrow[d + k];
      }
    }
  }
}

void Encoder::forward(const ParamStore& store, const DialogueBatch& batch, EncoderCache& cache,
                      Rng* dropout_rng) const {
  if (batch.max_len > cfg_.max_len) {
    throw std::invalid_argument("Encoder: batch longer than configured max length");
  }
  embed_forward(store, batch, cache);
  for (int m = 0; m < kNumModalities; ++m) {
    if (cfg_.mae_on) {
      mae_forward(store, m, batch, cache, dropout_rng);
    } else {
      cache.h_ma[m] = cache.h0[m];
    }
  }
  for (int m = 0; m < kNumModalities; ++m) {
    if (cfg_.iae_on) {
      iae_forward(store, m, batch, cache, dropout_rng);
    } else {
      cache.h_ia[m] = cache.h_ma[m];
    }
  }
  for (int m = 0; m < kNumModalities; ++m) {
    integrate_forward(store, m, cache);
  }
}

void Encoder::backward(ParamStore& store, const DialogueBatch& batch, EncoderCache& cache,
                       std::array<Tensor, kNumModalities>& d_tilde) const {
  std::size_t B = batch.batch_size, L = batch.max_len, d = cfg_.d;
  std::array<Tensor, kNumModalities> d_ia;
  for (int m = 0; m < kNumModalities; ++m) {
    cache.d_h_ma[m] = Tensor({B, L, d}, 0.0);
    d_ia[m] = Tensor({B, L, d}, 0.0);
  }
  for (int m = 0; m < kNumModalities; ++m) {
    integrate_backward(store, m, cache, d_tilde[m], cache.d_h_ma[m], d_ia[m]);
  }
  for (int m = 0; m < kNumModalities; ++m) {
    if (cfg_.iae_on) {
      iae_backward(store, m, batch, cache, d_ia[m], cache.d_h_ma);
    } else {
      for (std::size_t i = 0; i < d_ia[m].size(); ++i) cache.d_h_ma[m][i] += d_ia[m][i];
    }
  }
  std::array<Tensor, kNumModalities> d_h0;
  for (int m = 0; m < kNumModalities; ++m) {
    d_h0[m] = Tensor({B, L, d}, 0.0);
    if (cfg_.mae_on) {
      mae_backward(store, m, batch, cache, cache.d_h_ma[m], d_h0[m]);
    } else {
      d_h0[m] = cache.d_h_ma[m];
    }
  }
  embed_backward(store, batch, d_h0);
}

}  // namespace css
