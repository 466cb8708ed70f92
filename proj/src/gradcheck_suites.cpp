#include "css/gradcheck_suites.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "css/grad_check.hpp"
#include "css/model.hpp"
#include "css/objectives.hpp"
#include "css/ops.hpp"
#include "css/pgm.hpp"
#include "css/spf.hpp"

namespace css::gradcheck {

namespace {

DialogueBatch random_batch(Rng& rng, std::size_t B, std::size_t L,
                           const std::array<std::size_t, kNumModalities>& d_in,
                           std::size_t classes, std::size_t speakers) {
  DialogueBatch b;
  b.batch_size = B;
  b.max_len = L;
  b.speakers.assign(B * L, 0);
  b.labels.assign(B * L, -1);
  b.mask.assign(B * L, 0.0);
  for (int m = 0; m < kNumModalities; ++m) b.features[m] = Tensor({B, L, d_in[m]}, 0.0);
  for (std::size_t i = 0; i < B; ++i) {
    std::size_t len = 1 + rng.next_below(L);
    for (std::size_t t = 0; t < len; ++t) {
      b.mask[i * L + t] = 1.0;
      b.speakers[i * L + t] = static_cast<std::int32_t>(rng.next_below(speakers));
      b.labels[i * L + t] = static_cast<std::int32_t>(rng.next_below(classes));
      for (int m = 0; m < kNumModalities; ++m) {
        double* row = b.features[m].row(i, t);
        for (std::size_t k = 0; k < d_in[m]; ++k) row[k] = rng.next_gaussian();
      }
    }
  }
  return b;
}

double numeric_trial(Rng& rng) {
  double worst = 0.0;
  double h = kStep;
  // Scalar activations.
  for (int i = 0; i < 8; ++i) {
    double x = 3.0 * rng.next_gaussian();
    double fd = (gelu(x + h) - gelu(x - h)) / (2 * h);
    worst = std::max(worst, grad_rel_err(gelu_grad(x), fd));
    double sg = sigmoid(x);
    double fds = (sigmoid(x + h) - sigmoid(x - h)) / (2 * h);
    worst = std::max(worst, grad_rel_err(sg * (1 - sg), fds));
  }
  // Softmax backward as a Jacobian-vector product.
  std::size_t n = 2 + rng.next_below(4);
  std::vector<double> logits(n), probs(n), seed(n), dl(n);
  for (auto& v : logits) v = rng.next_gaussian();
  for (auto& v : seed) v = rng.next_gaussian();
  softmax_with_temperature(logits, 1.0, probs);
  softmax_backward(probs, seed, dl);
  std::vector<double> tmp(n);
  for (std::size_t k = 0; k < n; ++k) {
    double saved = logits[k];
    logits[k] = saved + h;
    softmax_with_temperature(logits, 1.0, tmp);
    double fp = dot(tmp, seed);
    logits[k] = saved - h;
    softmax_with_temperature(logits, 1.0, tmp);
    double fm = dot(tmp, seed);
    logits[k] = saved;
    worst = std::max(worst, grad_rel_err(dl[k], (fp - fm) / (2 * h)));
  }
  // Signed sqrt away from zero (the derivative clamp only matters at 0).
  for (int i = 0; i < 8; ++i) {
    double z = rng.next_gaussian();
    if (std::fabs(z) < 0.1) z = std::copysign(0.1, z == 0.0 ? 1.0 : z);
    double zp[1] = {z};
    double up[1], um[1];
    double g[1], one[1] = {1.0};
    zp[0] = z + h;
    signed_sqrt(std::span<const double>(zp, 1), std::span<double>(up, 1));
    zp[0] = z - h;
    signed_sqrt(std::span<const double>(zp, 1), std::span<double>(um, 1));
    zp[0] = z;
    signed_sqrt_backward(std::span<const double>(zp, 1), std::span<const double>(one, 1),
                         std::span<double>(g, 1));
    worst = std::max(worst, grad_rel_err(g[0], (up[0] - um[0]) / (2 * h)));
  }
  return worst;
}

double encoder_trial(Rng& rng) {
  EncoderConfig ec;
  ec.d = 4 + 4 * rng.next_below(2);  // 4 or 8
  ec.heads = 1 + rng.next_below(2);
  ec.d_ff = 6;
  ec.max_len = 3;
  ec.n_speakers = 3;
  ec.d_in = {3, 2, 3};
  ec.dropout = 0.0;
  ec.mae_on = true;
  ec.iae_on = true;
  ParamStore store;
  Encoder enc(ec, store, Rng(rng.next_u64()));
  std::size_t B = 1 + rng.next_below(2);
  DialogueBatch batch = random_batch(rng, B, ec.max_len, ec.d_in, 2, ec.n_speakers);

  // Scalar readout: random linear functional over the integrated vectors.
  std::array<Tensor, kNumModalities> readout;
  for (int m = 0; m < kNumModalities; ++m) {
    readout[m] = Tensor({B, ec.max_len, ec.d});
    for (std::size_t i = 0; i < readout[m].size(); ++i) readout[m][i] = rng.next_gaussian();
  }
  auto f = [&](const ParamStore& s) {
    EncoderCache cache;
    enc.forward(s, batch, cache, nullptr);
    double acc = 0.0;
    for (int m = 0; m < kNumModalities; ++m) {
      acc += dot(cache.h_tilde[m].values(), readout[m].values());
    }
    return acc;
  };
  store.zero_grads();
  EncoderCache cache;
  enc.forward(store, batch, cache, nullptr);
  auto d_tilde = readout;
  enc.backward(store, batch, cache, d_tilde);
  return compare_grads(f, store, kStep, kTol).max_rel_err;
}

double spf_trial(Rng& rng) {
  SpfConfig sc;
  sc.p = 1 + rng.next_below(3);
  sc.r = 2 + rng.next_below(3);
  sc.d = 3 + rng.next_below(3);
  sc.classes = 2 + rng.next_below(3);
  sc.msp_on = rng.next_below(2) == 0;
  std::size_t B = 1, L = 2;

  ParamStore store;
  SpfFusion spf(sc, store, Rng(rng.next_u64()));
  // Inputs live in the registry too so the finite difference covers d_h.
  std::array<std::size_t, kNumModalities> input_ids{};
  for (int m = 0; m < kNumModalities; ++m) {
    Tensor t({B, L, sc.d});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
    input_ids[m] = store.add(std::string("input.") + kModalityNames[m], ParamGroup::kHeads,
                             std::move(t));
  }
  Tensor readout({B, L, sc.classes});
  for (std::size_t i = 0; i < readout.size(); ++i) readout[i] = rng.next_gaussian();

  auto gather = [&](const ParamStore& s) {
    std::array<Tensor, kNumModalities> h;
    for (int m = 0; m < kNumModalities; ++m) h[m] = s.entry(input_ids[m]).value;
    return h;
  };
  auto f = [&](const ParamStore& s) {
    FusionCache cache;
    auto h = gather(s);
    spf.forward(s, h, cache);
    return dot(cache.logits.values(), readout.values());
  };
  store.zero_grads();
  FusionCache cache;
  auto h = gather(store);
  spf.forward(store, h, cache);
  std::array<Tensor, kNumModalities> d_h;
  for (int m = 0; m < kNumModalities; ++m) d_h[m] = Tensor({B, L, sc.d}, 0.0);
  spf.backward(store, h, cache, readout, d_h);
  for (int m = 0; m < kNumModalities; ++m) {
    auto& g = store.entry(input_ids[m]).grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = d_h[m][i];
  }
  return compare_grads(f, store, kStep, kTol).max_rel_err;
}

double objectives_trial(Rng& rng) {
  std::size_t d = 3 + rng.next_below(3);
  std::size_t classes = 2 + rng.next_below(3);
  std::size_t B = 1 + rng.next_below(2), L = 2;
  double temperature = 0.5 + 3.0 * rng.next_uniform();

  ParamStore store;
  UnimodalHeads heads(d, classes, store, Rng(rng.next_u64()));
  std::array<std::size_t, kNumModalities> input_ids{};
  for (int m = 0; m < kNumModalities; ++m) {
    Tensor t({B, L, d});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
    input_ids[m] = store.add(std::string("input.") + kModalityNames[m], ParamGroup::kHeads,
                             std::move(t));
  }
  std::size_t teacher_id;
  {
    Tensor t({B, L, classes});
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.next_gaussian();
    teacher_id = store.add("input.teacher", ParamGroup::kHeads, std::move(t));
  }
  std::array<std::size_t, kNumModalities> d_in{d, d, d};
  DialogueBatch batch = random_batch(rng, B, L, d_in, classes, 2);
  bool check_l3 = rng.next_below(2) == 0;

  auto gather = [&](const ParamStore& s) {
    std::array<Tensor, kNumModalities> h;
    for (int m = 0; m < kNumModalities; ++m) h[m] = s.entry(input_ids[m]).value;
    return h;
  };
  auto f = [&](const ParamStore& s) {
    UnimodalHeads::Cache cache;
    auto h = gather(s);
    heads.forward(s, h, cache);
    if (!check_l3) {
      double acc = 0.0;
      for (int m = 0; m < kNumModalities; ++m) {
        acc += masked_cross_entropy(cache.yhat[m], batch.labels, batch.mask);
      }
      return acc;
    }
    DistillCache dc;
    std::array<double, kNumModalities> per{};
    return distill_kl(s.entry(teacher_id).value, cache.logits, temperature, batch.mask, dc, per);
  };

  store.zero_grads();
  UnimodalHeads::Cache cache;
  auto h = gather(store);
  heads.forward(store, h, cache);
  std::array<Tensor, kNumModalities> d_logits;
  for (int m = 0; m < kNumModalities; ++m) d_logits[m] = Tensor({B, L, classes}, 0.0);
  if (!check_l3) {
    for (int m = 0; m < kNumModalities; ++m) {
      masked_cross_entropy_backward(cache.yhat[m], batch.labels, batch.mask, 1.0, d_logits[m]);
    }
  } else {
    DistillCache dc;
    std::array<double, kNumModalities> per{};
    distill_kl(store.entry(teacher_id).value, cache.logits, temperature, batch.mask, dc, per);
    Tensor d_teacher({B, L, classes}, 0.0);
    for (int m = 0; m < kNumModalities; ++m) {
      distill_kl_backward(dc, temperature, batch.mask, 1.0, m, d_logits[m], &d_teacher, true);
    }
    auto& g = store.entry(teacher_id).grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = d_teacher[i];
  }
  std::array<Tensor, kNumModalities> d_h;
  for (int m = 0; m < kNumModalities; ++m) d_h[m] = Tensor({B, L, d}, 0.0);
  heads.backward(store, h, d_logits, d_h);
  for (int m = 0; m < kNumModalities; ++m) {
    auto& g = store.entry(input_ids[m]).grad;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = d_h[m][i];
  }
  return compare_grads(f, store, kStep, kTol).max_rel_err;
}

double model_trial(Rng& rng) {
  ModelConfig mc;
  mc.d = 4;
  mc.heads = 2;
  mc.d_ff = 6;
  mc.p = 2;
  mc.r = 2;
  mc.classes = 2;
  mc.d_in = {3, 2, 2};
  mc.max_len = 3;
  mc.n_speakers = 2;
  mc.dropout = 0.0;
  mc.temperature = 2.0;
  mc.spf_on = rng.next_below(4) != 0;  // occasionally the concat variant
  mc.msp_on = rng.next_below(2) == 0;
  Model model(mc, rng.next_u64());
  DialogueBatch batch = random_batch(rng, 2, mc.max_len, mc.d_in, mc.classes, mc.n_speakers);
  int task = static_cast<int>(rng.next_below(3));

  auto f = [&](const ParamStore&) {
    ForwardState state;
    model.forward(batch, state, nullptr);
    LossReport rep = model.compute_losses(batch, state);
    return task == 0 ? rep.l1 : (task == 1 ? rep.l2 : rep.l3);
  };
  ForwardState state;
  model.forward(batch, state, nullptr);
  model.compute_losses(batch, state);
  model.backward_task(batch, state, task);
  return compare_grads(f, model.params(), kStep, kTol).max_rel_err;
}

SuiteResult run_named(const std::string& name, std::size_t trials, std::uint64_t seed,
                      const std::function<double(Rng&)>& trial) {
  SuiteResult res;
  res.name = name;
  res.trials = trials;
  auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed, fnv1a(name.c_str()));
  for (std::size_t i = 0; i < trials; ++i) {
    res.max_rel_err = std::max(res.max_rel_err, trial(rng));
  }
  res.pass = res.max_rel_err < kTol;
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

}  // namespace

std::vector<std::string> suite_names() {
  return {"numeric", "encoder", "spf", "objectives", "model"};
}

SuiteResult run_suite(const std::string& name, std::size_t trials, std::uint64_t seed) {
  if (name == "numeric") return run_named(name, trials, seed, numeric_trial);
  if (name == "encoder") return run_named(name, trials, seed, encoder_trial);
  if (name == "spf") return run_named(name, trials, seed, spf_trial);
  if (name == "objectives") return run_named(name, trials, seed, objectives_trial);
  if (name == "model") return run_named(name, trials, seed, model_trial);
  throw std::invalid_argument("unknown gradcheck suite: " + name);
}

std::vector<SuiteResult> run_all(std::uint64_t seed) {
  std::vector<SuiteResult> out;
  out.push_back(run_suite("numeric", 50, seed));
  out.push_back(run_suite("encoder", 50, seed));
  out.push_back(run_suite("spf", 50, seed));
  out.push_back(run_suite("objectives", 50, seed));
  out.push_back(run_suite("model", 6, seed));
  return out;
}

}  // namespace css::gradcheck
