#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "css/grad_check.hpp"
#include "css/pgm.hpp"

using namespace css;

namespace {

// Brute-force minimum of 0.5 g^T Q g over the grid-discretized simplex.
double grid_objective(const std::vector<double>& q, double step) {
  std::size_t n = static_cast<std::size_t>(1.0 / step);
  double best = 1e300;
  for (std::size_t a = 0; a <= n; ++a) {
    for (std::size_t b = 0; a + b <= n; ++b) {
      double g[3] = {step * double(a), step * double(b), 1.0 - step * double(a + b)};
      double acc = 0.0;
      for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) acc += g[i] * q[i * 3 + j] * g[j];
      }
      best = std::min(best, 0.5 * acc);
    }
  }
  return best;
}

std::vector<double> gram_of(const std::vector<std::vector<double>>& rows) {
  std::size_t k = rows.size();
  std::vector<double> q(k * k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      double d = 0.0;
      for (std::size_t c = 0; c < rows[i].size(); ++c) d += rows[i][c] * rows[j][c];
      q[i * k + j] = d;
    }
  }
  return q;
}

double kkt_residual(const std::vector<double>& q, const std::vector<double>& gamma) {
  std::size_t k = gamma.size();
  double nu = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) nu += gamma[i] * q[i * k + j] * gamma[j];
  }
  double worst = 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    sum += gamma[i];
    double qi = 0.0;
    for (std::size_t j = 0; j < k; ++j) qi += q[i * k + j] * gamma[j];
    if (gamma[i] > 1e-12) {
      worst = std::max(worst, std::fabs(qi - nu));  // stationarity on the support
    } else {
      worst = std::max(worst, std::max(0.0, nu - qi));  // dual feasibility off it
    }
    worst = std::max(worst, std::max(0.0, -gamma[i]));
  }
  worst = std::max(worst, std::fabs(sum - 1.0));
  return worst;
}

}  // namespace

TEST_CASE("gradient bundles normalize rows and flag degenerate tasks") {
  auto b = make_bundle({{2.0, 4.0}, {0.0, 0.0}, {3.0, 0.0}});
  CHECK(b.norms[0] == doctest::Approx(std::sqrt(20.0)).epsilon(1e-15));
  CHECK(b.grads[0][0] == doctest::Approx(1.0 / std::sqrt(5.0)).epsilon(1e-12));
  CHECK(b.grads[0][1] == doctest::Approx(2.0 / std::sqrt(5.0)).epsilon(1e-12));
  CHECK(b.degenerate[1] == 1);
  CHECK(b.grads[1][0] == 0.0);
  CHECK(b.degenerate[2] == 0);
  CHECK(b.grads[2][0] == 1.0);
  double n0 = 0.0;
  for (double v : b.grads[0]) n0 += v * v;
  CHECK(std::fabs(std::sqrt(n0) - 1.0) <= 1e-12);
}

TEST_CASE("gram matrix entries are pairwise inner products") {
  auto q = gram_of({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) CHECK(q[i * 3 + j] == (i == j ? 1.0 : 0.0));
  }
  q = gram_of({{1, 0}, {1, 0}, {0, 1}});
  CHECK(q[0 * 3 + 1] == 1.0);
  q = gram_of({{1, 0}, {0.6, 0.8}, {0, 1}});
  CHECK(q[0 * 3 + 1] == doctest::Approx(0.6).epsilon(1e-15));

  GradientBundle b = make_bundle({{1.0, 0.0}, {0.6, 0.8}, {0.0, 1.0}});
  auto q2 = build_gram(b);
  CHECK(q2[1] == doctest::Approx(0.6).epsilon(1e-12));
  CHECK(q2[1] == q2[3]);  // symmetry
}

TEST_CASE("identity gram: uniform weights, objective 1/6") {
  std::vector<double> q{1, 0, 0, 0, 1, 0, 0, 0, 1};
  TaskWeights tw = solve_simplex_qp(q, 3);
  for (double g : tw.gamma) CHECK(g == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(tw.objective == doctest::Approx(1.0 / 6).epsilon(1e-12));
  CHECK_FALSE(tw.fallback_used);
}

TEST_CASE("duplicated gradients resolve to the minimum-norm optimum") {
  // g1 = g2 = e1, g3 = e2
  std::vector<double> q{1, 1, 0, 1, 1, 0, 0, 0, 1};
  TaskWeights tw = solve_simplex_qp(q, 3);
  CHECK(tw.gamma[0] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(tw.gamma[1] == doctest::Approx(0.25).epsilon(1e-9));
  CHECK(tw.gamma[2] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(tw.objective == doctest::Approx(0.25).epsilon(1e-9));
}

TEST_CASE("opposing gradients cancel to a zero direction") {
  // g1 = e1, g2 = -e1, g3 = e2
  std::vector<double> q{1, -1, 0, -1, 1, 0, 0, 0, 1};
  TaskWeights tw = solve_simplex_qp(q, 3);
  CHECK(tw.gamma[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(tw.gamma[1] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(tw.gamma[2] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(tw.objective == doctest::Approx(0.0).epsilon(1e-12));
  // the combined direction has zero norm: the caller's fallback must fire
  CHECK(std::sqrt(2.0 * tw.objective) < kDirectionEps);
}

TEST_CASE("invalid gram matrices are rejected") {
  std::vector<double> asym{1, 0.5, 0, 0.1, 1, 0, 0, 0, 1};
  CHECK_THROWS_AS(solve_simplex_qp(asym, 3), std::invalid_argument);
  std::vector<double> indef{1, 0, 0, 0, -1, 0, 0, 0, 1};
  CHECK_THROWS_AS(solve_simplex_qp(indef, 3), std::invalid_argument);
  CHECK_THROWS_AS(solve_simplex_qp({1.0, 0.0}, 3), std::invalid_argument);
}

TEST_CASE("degenerate tasks are pinned to zero weight") {
  std::vector<double> q{1, 0, 0, 0, 0, 0, 0, 0, 1};
  TaskWeights tw = solve_simplex_qp(q, 3, {0, 1, 0});
  CHECK(tw.gamma[1] == 0.0);
  CHECK(tw.gamma[0] == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(tw.gamma[2] == doctest::Approx(0.5).epsilon(1e-9));
  // all tasks degenerate: uniform fallback
  TaskWeights fb = solve_simplex_qp(q, 3, {1, 1, 1});
  CHECK(fb.fallback_used);
  for (double g : fb.gamma) CHECK(g == doctest::Approx(1.0 / 3).epsilon(1e-12));
}

TEST_CASE("solver is exact against grid search on random gram matrices") {
  Rng rng(2031);
  for (int trial = 0; trial < 60; ++trial) {
    std::vector<std::vector<double>> rows(3, std::vector<double>(4));
    for (auto& row : rows) {
      double n = 0.0;
      for (auto& v : row) {
        v = rng.next_gaussian();
        n += v * v;
      }
      n = std::sqrt(n);
      for (auto& v : row) v /= n;
    }
    auto q = gram_of(rows);
    TaskWeights tw = solve_simplex_qp(q, 3);
    CHECK(tw.objective <= grid_objective(q, 0.01) + 1e-6);
    CHECK(kkt_residual(q, tw.gamma) < 1e-8);
    double sum = 0.0;
    for (double g : tw.gamma) {
      CHECK(g >= 0.0);
      sum += g;
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-10);
  }
}

TEST_CASE("solver output is bit-identical across calls") {
  Rng rng(11);
  std::vector<std::vector<double>> rows(3, std::vector<double>(5));
  for (auto& row : rows) {
    for (auto& v : row) v = rng.next_gaussian();
    double n = 0.0;
    for (double v : row) n += v * v;
    for (auto& v : row) v /= std::sqrt(n);
  }
  auto q = gram_of(rows);
  TaskWeights a = solve_simplex_qp(q, 3);
  TaskWeights b = solve_simplex_qp(q, 3);
  for (int i = 0; i < 3; ++i) CHECK(a.gamma[i] == b.gamma[i]);
}

TEST_CASE("normalization makes the gram scale invariant") {
  Rng rng(13);
  std::vector<std::vector<double>> raw(3, std::vector<double>(6));
  for (auto& row : raw) {
    for (auto& v : row) v = rng.next_gaussian();
  }
  auto scaled = raw;
  for (auto& v : scaled[1]) v *= 37.5;
  auto q1 = build_gram(make_bundle(std::vector<std::vector<double>>(raw)));
  auto q2 = build_gram(make_bundle(std::vector<std::vector<double>>(scaled)));
  for (std::size_t i = 0; i < q1.size(); ++i) CHECK(std::fabs(q1[i] - q2[i]) <= 1e-12);
  TaskWeights a = solve_simplex_qp(q1, 3);
  TaskWeights b = solve_simplex_qp(q2, 3);
  for (int i = 0; i < 3; ++i) CHECK(a.gamma[i] == doctest::Approx(b.gamma[i]).epsilon(1e-9));
}

TEST_CASE("composite loss is the weighted sum") {
  LossReport rep;
  rep.l1 = 1.0;
  rep.l2 = 2.0;
  rep.l3 = 4.0;
  CHECK(composite_loss({1.0, 0.0, 0.0}, rep) == 1.0);
  LossReport same;
  same.l1 = same.l2 = same.l3 = 0.7;
  CHECK(composite_loss({1.0 / 3, 1.0 / 3, 1.0 / 3}, same) ==
        doctest::Approx(0.7).epsilon(1e-15));
  CHECK(composite_loss({0.25, 0.25, 0.5}, rep) == doctest::Approx(2.75).epsilon(1e-15));
}

namespace {

ModelConfig tiny_model_config() {
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
  mc.temperature = 2.0;
  return mc;
}

DialogueBatch tiny_batch(std::uint64_t seed, std::size_t B, const ModelConfig& mc) {
  Rng rng(seed);
  DialogueBatch b;
  b.batch_size = B;
  b.max_len = mc.max_len;
  b.speakers.assign(B * mc.max_len, 0);
  b.labels.assign(B * mc.max_len, -1);
  b.mask.assign(B * mc.max_len, 0.0);
  for (int m = 0; m < kNumModalities; ++m) b.features[m] = Tensor({B, mc.max_len, mc.d_in[m]}, 0.0);
  for (std::size_t i = 0; i < B; ++i) {
    std::size_t len = 1 + rng.next_below(mc.max_len);
    for (std::size_t t = 0; t < len; ++t) {
      b.mask[i * mc.max_len + t] = 1.0;
      b.speakers[i * mc.max_len + t] = static_cast<std::int32_t>(rng.next_below(mc.n_speakers));
      b.labels[i * mc.max_len + t] = static_cast<std::int32_t>(rng.next_below(mc.classes));
      for (int m = 0; m < kNumModalities; ++m) {
        double* row = b.features[m].row(i, t);
        for (std::size_t k = 0; k < mc.d_in[m]; ++k) row[k] = rng.next_gaussian();
      }
    }
  }
  return b;
}

}  // namespace

TEST_CASE("step weights match a finite-difference reconstruction of the QP") {
  ModelConfig mc = tiny_model_config();
  Model model(mc, 5);
  DialogueBatch batch = tiny_batch(6, 2, mc);

  // Independent route: task gradients over the shared parameters by central
  // differences, then the same QP.
  auto shared = model.shared_param_indices();
  std::vector<std::vector<double>> raw;
  for (int task = 0; task < 3; ++task) {
    auto f = [&](const ParamStore&) {
      ForwardState s;
      model.forward(batch, s);
      LossReport rep = model.compute_losses(batch, s);
      return task == 0 ? rep.l1 : (task == 1 ? rep.l2 : rep.l3);
    };
    auto grads = finite_diff_grad(f, model.params(), 1e-5);
    std::vector<double> flat;
    for (std::size_t idx : shared) {
      flat.insert(flat.end(), grads[idx].data(), grads[idx].data() + grads[idx].size());
    }
    raw.push_back(std::move(flat));
  }
  auto bundle = make_bundle(std::move(raw));
  auto q = build_gram(bundle);
  TaskWeights expect = solve_simplex_qp(q, 3);

  Adam adam(AdamConfig{}, model.params());
  PgmOptions opts;
  ForwardState state;
  StepResult sr = pgm_step(model, batch, adam, opts, state);
  CHECK_FALSE(sr.fallback);
  for (int i = 0; i < 3; ++i) {
    CHECK(sr.gamma[i] == doctest::Approx(expect.gamma[i]).epsilon(5e-4));
  }
  CHECK(sr.mgda_margin >= -1e-8);
  CHECK(sr.composite == doctest::Approx(composite_loss(sr.gamma, sr.losses)).epsilon(1e-12));
}

TEST_CASE("single-task runs reduce to plain primary-loss training") {
  ModelConfig mc = tiny_model_config();
  mc.use_l2 = false;
  mc.use_l3 = false;
  DialogueBatch batch = tiny_batch(7, 2, mc);

  Model with_pgm(mc, 9);
  Adam adam1(AdamConfig{}, with_pgm.params());
  PgmOptions qp_opts;
  ForwardState s1;
  StepResult sr = pgm_step(with_pgm, batch, adam1, qp_opts, s1);
  CHECK(sr.gamma[0] == 1.0);
  CHECK(sr.gamma[1] == 0.0);
  CHECK(sr.gamma[2] == 0.0);

  Model plain(mc, 9);
  Adam adam2(AdamConfig{}, plain.params());
  ForwardState s2;
  plain.forward(batch, s2);
  plain.compute_losses(batch, s2);
  plain.backward_task(batch, s2, 0);
  adam2.step(plain.params());

  for (std::size_t i = 0; i < plain.params().size(); ++i) {
    const auto& a = with_pgm.params().entry(i).value;
    const auto& b = plain.params().entry(i).value;
    for (std::size_t k = 0; k < a.size(); ++k) CHECK(a[k] == b[k]);
  }
}

TEST_CASE("fixed uniform weights match the static path bit for bit") {
  ModelConfig mc = tiny_model_config();
  DialogueBatch batch = tiny_batch(8, 2, mc);

  Model a(mc, 21);
  Adam adam_a(AdamConfig{}, a.params());
  PgmOptions qp_override;
  qp_override.use_qp = true;
  qp_override.gamma_override = {1.0 / 3, 1.0 / 3, 1.0 / 3};
  ForwardState sa;
  StepResult ra = pgm_step(a, batch, adam_a, qp_override, sa);

  Model b(mc, 21);
  Adam adam_b(AdamConfig{}, b.params());
  PgmOptions static_opts;
  static_opts.use_qp = false;
  ForwardState sb;
  StepResult rb = pgm_step(b, batch, adam_b, static_opts, sb);

  CHECK(ra.composite == rb.composite);
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    const auto& va = a.params().entry(i).value;
    const auto& vb = b.params().entry(i).value;
    for (std::size_t k = 0; k < va.size(); ++k) CHECK(va[k] == vb[k]);
  }
}

TEST_CASE("shared parameters are the groups reached by at least two tasks") {
  ModelConfig mc = tiny_model_config();
  Model model(mc, 3);
  auto shared = model.shared_param_indices();
  for (std::size_t idx : shared) {
    CHECK(model.params().entry(idx).group != ParamGroup::kFusion);
  }
  // encoder + heads are shared when all three losses are active
  std::size_t expected = 0;
  for (const auto& e : model.params()) {
    if (e.group != ParamGroup::kFusion) ++expected;
  }
  CHECK(shared.size() == expected);

  // dropping the unimodal hard-label loss leaves the heads reached only by
  // distillation -> encoder only
  ModelConfig mc2 = tiny_model_config();
  mc2.use_l2 = false;
  Model model2(mc2, 3);
  for (std::size_t idx : model2.shared_param_indices()) {
    CHECK(model2.params().entry(idx).group == ParamGroup::kEncoder);
  }
}

TEST_CASE("an empty batch is rejected") {
  ModelConfig mc = tiny_model_config();
  Model model(mc, 2);
  DialogueBatch batch = tiny_batch(3, 1, mc);
  for (auto& v : batch.mask) v = 0.0;
  Adam adam(AdamConfig{}, model.params());
  PgmOptions opts;
  ForwardState state;
  CHECK_THROWS_AS(pgm_step(model, batch, adam, opts, state), std::invalid_argument);
}
