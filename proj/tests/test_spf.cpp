#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "css/adam.hpp"
#include "css/gradcheck_suites.hpp"
#include "css/ops.hpp"
#include "css/spf.hpp"

using namespace css;

namespace {

std::array<Tensor, kNumModalities> single_vectors(const std::vector<double>& t,
                                                  const std::vector<double>& a,
                                                  const std::vector<double>& v) {
  std::array<Tensor, kNumModalities> h;
  h[0] = Tensor::from({1, 1, t.size()}, t);
  h[1] = Tensor::from({1, 1, a.size()}, a);
  h[2] = Tensor::from({1, 1, v.size()}, v);
  return h;
}

}  // namespace

TEST_CASE("signed sqrt values") {
  std::vector<double> z{4.0, -9.0, 0.0};
  std::vector<double> out(3);
  signed_sqrt(z, out);
  CHECK(out[0] == 2.0);
  CHECK(out[1] == -3.0);
  CHECK(out[2] == 0.0);
}

TEST_CASE("hadamard chain") {
  std::vector<double> a{2.0, -3.0}, b{0.5, 2.0};
  std::vector<double> out(2);
  hadamard_chain({std::span<const double>(a)}, out);
  CHECK(out[0] == 2.0);  // single factor passes through
  CHECK(out[1] == -3.0);
  hadamard_chain({std::span<const double>(a), std::span<const double>(b)}, out);
  CHECK(out[0] == 1.0);
  CHECK(out[1] == -6.0);
  std::vector<double> ones{1.0, 1.0};
  hadamard_chain({std::span<const double>(a), std::span<const double>(ones)}, out);
  CHECK(out[0] == 2.0);
  CHECK(out[1] == -3.0);
  CHECK_THROWS_AS(hadamard_chain({}, out), std::invalid_argument);
}

TEST_CASE("projection: zero weights give zero, identity passes large values") {
  SpfConfig sc;
  sc.p = 1;
  sc.r = 2;
  sc.d = 2;
  sc.classes = 2;
  ParamStore store;
  SpfFusion spf(sc, store, Rng(1));

  store.at("spf.o1.text.W").value.zero();
  auto h = single_vectors({1.3, -0.7}, {0.2, 0.9}, {0.0, 0.0});
  FusionCache cache;
  spf.forward(store, h, cache);
  CHECK(cache.zjm[0][0][0] == 0.0);
  CHECK(cache.zjm[0][0][1] == 0.0);

  // identity weights, large positive inputs: GELU is the identity asymptote
  Tensor& w = store.at("spf.o1.text.W").value;
  w.zero();
  w.at(0, 0) = 1.0;
  w.at(1, 1) = 1.0;
  h = single_vectors({5.0, 7.0}, {0.0, 0.0}, {0.0, 0.0});
  spf.forward(store, h, cache);
  CHECK(cache.zjm[0][0][0] == doctest::Approx(5.0).epsilon(1e-5));
  CHECK(cache.zjm[0][0][1] == doctest::Approx(7.0).epsilon(1e-5));
}

TEST_CASE("projection matches a matmul-then-gelu oracle") {
  SpfConfig sc;
  sc.p = 1;
  sc.r = 2;
  sc.d = 3;
  sc.classes = 2;
  ParamStore store;
  SpfFusion spf(sc, store, Rng(7));
  Rng rng(9);
  std::vector<double> ht(3), ha(3), hv(3);
  for (auto* vec : {&ht, &ha, &hv}) {
    for (double& x : *vec) x = rng.next_gaussian();
  }
  auto h = single_vectors(ht, ha, hv);
  FusionCache cache;
  spf.forward(store, h, cache);
  const Tensor& w = store.at("spf.o1.text.W").value;
  for (std::size_t k = 0; k < sc.r; ++k) {
    double pre = 0.0;
    for (std::size_t i = 0; i < sc.d; ++i) pre += w.at(k, i) * ht[i];
    double expect = pre * norm_cdf(pre);
    CHECK(cache.zjm[0][0][k] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("gated sum: neutral gates halve, constant path survives") {
  SpfConfig sc;
  sc.p = 1;
  sc.r = 2;
  sc.d = 2;
  sc.classes = 2;
  ParamStore store;
  SpfFusion spf(sc, store, Rng(11));
  // fresh gates are raw 0 = lambda 0.5 by construction
  CHECK(spf.gate_value(store, 0, 0) == 0.5);

  // all projections zero: z_1 equals the constant path
  for (int m = 0; m < kNumModalities; ++m) {
    store.at(std::string("spf.o1.") + kModalityNames[m] + ".W").value.zero();
  }
  store.at("spf.o1.bias").value[0] = 0.4;
  store.at("spf.o1.bias").value[1] = -0.3;
  auto h = single_vectors({1.0, 2.0}, {3.0, 4.0}, {5.0, 6.0});
  FusionCache cache;
  spf.forward(store, h, cache);
  CHECK(cache.zj[0][0] == 0.4);
  CHECK(cache.zj[0][1] == -0.3);

  // neutral gates: z_1 = 0.5 * sum_m z_1^(m) + w_1
  Rng rng(13);
  for (int m = 0; m < kNumModalities; ++m) {
    Tensor& w = store.at(std::string("spf.o1.") + kModalityNames[m] + ".W").value;
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.next_gaussian();
  }
  spf.forward(store, h, cache);
  for (std::size_t k = 0; k < sc.r; ++k) {
    double expect = store.at("spf.o1.bias").value[k];
    for (int m = 0; m < kNumModalities; ++m) expect += 0.5 * cache.zjm[0][m][k];
    CHECK(cache.zj[0][k] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("gated sum with asymmetric gates reproduces direct arithmetic") {
  SpfConfig sc;
  sc.p = 1;
  sc.r = 1;
  sc.d = 1;
  sc.classes = 2;
  ParamStore store;
  SpfFusion spf(sc, store, Rng(17));
  double ln3 = std::log(3.0);
  store.at("spf.o1.text.gate").value[0] = -ln3;  // lambda = 0.25
  store.at("spf.o1.audio.gate").value[0] = ln3;  // lambda = 0.75
  store.at("spf.o1.text.W").value[0] = 1.0;
  store.at("spf.o1.audio.W").value[0] = 1.0;
  store.at("spf.o1.visual.W").value.zero();
  store.at("spf.o1.bias").value[0] = 0.0;
  auto h = single_vectors({2.0}, {-0.5}, {9.9});
  FusionCache cache;
  spf.forward(store, h, cache);
  double g2 = 1.9544997361036416;      // gelu(2), frozen from an erf oracle
  double gm05 = -0.15426876936299344;  // gelu(-0.5)
  CHECK(cache.zj[0][0] == doctest::Approx(0.25 * g2 + 0.75 * gm05).epsilon(1e-12));
}

TEST_CASE("classifier head edge cases") {
  SpfConfig sc;
  sc.p = 1;
  sc.r = 2;
  sc.d = 3;
  sc.classes = 4;
  ParamStore store;
  SpfFusion spf(sc, store, Rng(19));
  auto h = single_vectors({0.3, -0.2, 0.5}, {0.1, 0.2, 0.3}, {-0.4, 0.0, 0.2});

  // all classifier weights zero -> uniform
  store.at("spf.out.W").value.zero();
  store.at("spf.out.b").value.zero();
  store.at("spf.cls.W").value.zero();
  store.at("spf.cls.b").value.zero();
  FusionCache cache;
  spf.forward(store, h, cache);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(cache.yhat[k] == doctest::Approx(0.25).epsilon(1e-12));
  }

  // dominant class bias -> near one-hot
  store.at("spf.cls.b").value[0] = 10.0;
  spf.forward(store, h, cache);
  CHECK(cache.yhat[0] > 0.999);

  // random small case vs a two-matmul-plus-softmax oracle
  SpfConfig sc2;
  sc2.p = 1;
  sc2.r = 2;
  sc2.d = 3;
  sc2.classes = 2;
  ParamStore store2;
  SpfFusion spf2(sc2, store2, Rng(23));
  FusionCache cache2;
  spf2.forward(store2, h, cache2);
  const Tensor& wout = store2.at("spf.out.W").value;
  const Tensor& bout = store2.at("spf.out.b").value;
  const Tensor& wcls = store2.at("spf.cls.W").value;
  const Tensor& bcls = store2.at("spf.cls.b").value;
  std::vector<double> e(sc2.d), logits(sc2.classes);
  for (std::size_t j = 0; j < sc2.d; ++j) {
    e[j] = bout[j];
    for (std::size_t k = 0; k < sc2.r; ++k) e[j] += wout.at(k, j) * cache2.zhat[k];
  }
  for (std::size_t cidx = 0; cidx < sc2.classes; ++cidx) {
    logits[cidx] = bcls[cidx];
    for (std::size_t j = 0; j < sc2.d; ++j) logits[cidx] += wcls.at(j, cidx) * e[j];
  }
  double hi = std::max(logits[0], logits[1]);
  double z0 = std::exp(logits[0] - hi), z1 = std::exp(logits[1] - hi);
  CHECK(cache2.yhat[0] == doctest::Approx(z0 / (z0 + z1)).epsilon(1e-12));
  CHECK(cache2.yhat[1] == doctest::Approx(z1 / (z0 + z1)).epsilon(1e-12));
}

TEST_CASE("trivial chain: zero projections and unit constants give uniform output") {
  SpfConfig sc;
  sc.p = 1;
  sc.r = 3;
  sc.d = 2;
  sc.classes = 4;
  ParamStore store;
  SpfFusion spf(sc, store, Rng(29));
  for (int m = 0; m < kNumModalities; ++m) {
    store.at(std::string("spf.o1.") + kModalityNames[m] + ".W").value.zero();
  }
  store.at("spf.o1.bias").value.fill(1.0);
  store.at("spf.out.W").value.zero();
  store.at("spf.out.b").value.zero();
  store.at("spf.cls.W").value.zero();
  store.at("spf.cls.b").value.zero();
  auto h = single_vectors({1.0, -1.0}, {2.0, 0.5}, {0.0, 3.0});
  FusionCache cache;
  spf.forward(store, h, cache);
  for (std::size_t k = 0; k < sc.r; ++k) {
    CHECK(cache.z[k] == 1.0);
    CHECK(cache.zhat[k] == 1.0);
  }
  for (std::size_t k = 0; k < 4; ++k) CHECK(cache.yhat[k] == doctest::Approx(0.25));
}

// Frozen end-to-end walkthrough, p=2, r=1, d=1, c=2. Expected values computed
// independently with an erf-based scripted evaluation of the same weights.
TEST_CASE("scalar walkthrough with hand-picked weights") {
  SpfConfig sc;
  sc.p = 2;
  sc.r = 1;
  sc.d = 1;
  sc.classes = 2;
  ParamStore store;
  SpfFusion spf(sc, store, Rng(31));
  double ln3 = std::log(3.0);
  store.at("spf.o1.text.W").value[0] = 1.0;
  store.at("spf.o1.audio.W").value[0] = 0.5;
  store.at("spf.o1.visual.W").value[0] = -1.0;
  store.at("spf.o1.text.gate").value[0] = 0.0;
  store.at("spf.o1.audio.gate").value[0] = ln3;
  store.at("spf.o1.visual.gate").value[0] = -ln3;
  store.at("spf.o1.bias").value[0] = 0.3;
  store.at("spf.o2.text.W").value[0] = -0.5;
  store.at("spf.o2.audio.W").value[0] = 1.0;
  store.at("spf.o2.visual.W").value[0] = 2.0;
  store.at("spf.o2.text.gate").value[0] = 0.0;
  store.at("spf.o2.audio.gate").value[0] = 0.0;
  store.at("spf.o2.visual.gate").value[0] = 0.0;
  store.at("spf.o2.bias").value[0] = -0.2;
  store.at("spf.out.W").value[0] = 0.8;
  store.at("spf.out.b").value[0] = 0.1;
  store.at("spf.cls.W").value[0] = 1.0;
  store.at("spf.cls.W").value[1] = -1.0;
  store.at("spf.cls.b").value[0] = 0.05;
  store.at("spf.cls.b").value[1] = -0.05;

  auto h = single_vectors({2.0}, {-1.0}, {0.5});
  FusionCache cache;
  spf.forward(store, h, cache);
  CHECK(cache.zj[0][0] == doctest::Approx(1.1229810986888273).epsilon(1e-12));
  CHECK(cache.zj[1][0] == doctest::Approx(0.06201711910281438).epsilon(1e-12));
  CHECK(cache.z[0] == doctest::Approx(0.06964405254759436).epsilon(1e-12));
  CHECK(cache.zhat[0] == doctest::Approx(0.26390159633392585).epsilon(1e-12));
  CHECK(cache.logits[0] == doctest::Approx(0.36112127706714064).epsilon(1e-12));
  CHECK(cache.yhat[0] == doctest::Approx(0.6731006514939226).epsilon(1e-12));
  CHECK(cache.yhat[1] == doctest::Approx(0.32689934850607727).epsilon(1e-12));
}

TEST_CASE("multilinearity: scaling one order's constant path scales the product") {
  SpfConfig sc;
  sc.p = 3;
  sc.r = 2;
  sc.d = 2;
  sc.classes = 2;
  ParamStore store;
  SpfFusion spf(sc, store, Rng(37));
  for (int m = 0; m < kNumModalities; ++m) {
    store.at(std::string("spf.o1.") + kModalityNames[m] + ".W").value.zero();
  }
  store.at("spf.o1.bias").value[0] = 0.7;
  store.at("spf.o1.bias").value[1] = -0.4;
  auto h = single_vectors({1.0, 2.0}, {0.5, -0.5}, {0.2, 0.1});
  FusionCache cache;
  spf.forward(store, h, cache);
  Tensor z_before = cache.z;

  double alpha = 2.0;
  store.at("spf.o1.bias").value[0] *= alpha;
  store.at("spf.o1.bias").value[1] *= alpha;
  spf.forward(store, h, cache);
  for (std::size_t k = 0; k < sc.r; ++k) {
    CHECK(cache.z[k] == doctest::Approx(alpha * z_before[k]).epsilon(1e-12));
  }
}

TEST_CASE("range control and probability invariants hold on random inputs") {
  SpfConfig sc;
  sc.p = 3;
  sc.r = 4;
  sc.d = 5;
  sc.classes = 3;
  ParamStore store;
  SpfFusion spf(sc, store, Rng(41));
  Rng rng(43);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<double> t(sc.d), a(sc.d), v(sc.d);
    for (auto* vec : {&t, &a, &v}) {
      for (double& x : *vec) x = 2.0 * rng.next_gaussian();
    }
    auto h = single_vectors(t, a, v);
    FusionCache cache;
    spf.forward(store, h, cache);
    double sum = 0.0;
    for (std::size_t k = 0; k < sc.classes; ++k) sum += cache.yhat[k];
    CHECK(std::fabs(sum - 1.0) <= 1e-12);
    for (std::size_t k = 0; k < sc.r; ++k) {
      double z = cache.z[k], zh = cache.zhat[k];
      CHECK(std::signbit(zh) == std::signbit(z));
      CHECK(std::fabs(zh) == doctest::Approx(std::sqrt(std::fabs(z))).epsilon(1e-12));
      CHECK(std::fabs(zh) <= std::max(1.0, std::fabs(z)) + 1e-12);
      if (std::fabs(z) > 1.0) CHECK(std::fabs(zh) < std::fabs(z));
    }
  }
}

TEST_CASE("sigmoid parameterization keeps gates in (0,1) under optimization") {
  SpfConfig sc;
  sc.p = 2;
  sc.r = 2;
  sc.d = 2;
  sc.classes = 2;
  ParamStore store;
  SpfFusion spf(sc, store, Rng(47));
  AdamConfig ac;
  ac.lr = 0.5;  // aggressive on purpose
  Adam adam(ac, store);
  Rng rng(49);
  for (int step = 0; step < 200; ++step) {
    for (auto& e : store) {
      for (std::size_t i = 0; i < e.grad.size(); ++i) e.grad[i] = rng.next_gaussian();
    }
    adam.step(store);
  }
  for (std::size_t j = 0; j < sc.p; ++j) {
    for (int m = 0; m < kNumModalities; ++m) {
      double lambda = spf.gate_value(store, j, m);
      CHECK(lambda > 0.0);
      CHECK(lambda < 1.0);
    }
  }
}

TEST_CASE("shared-projection variant drops gates and modality-specific weights") {
  SpfConfig sc;
  sc.p = 2;
  sc.r = 2;
  sc.d = 3;
  sc.classes = 2;
  sc.msp_on = false;
  ParamStore store;
  SpfFusion spf(sc, store, Rng(53));
  CHECK(store.contains("spf.o1.W"));
  CHECK_FALSE(store.contains("spf.o1.text.W"));
  CHECK_FALSE(store.contains("spf.o1.text.gate"));

  // one projection applied to every modality, votes summed ungated
  auto h = single_vectors({1.0, 0.0, 0.0}, {0.0, 1.0, 0.0}, {0.0, 0.0, 1.0});
  FusionCache cache;
  spf.forward(store, h, cache);
  const Tensor& w = store.at("spf.o1.W").value;
  const Tensor& bias = store.at("spf.o1.bias").value;
  for (std::size_t k = 0; k < sc.r; ++k) {
    double expect = bias[k];
    for (int m = 0; m < kNumModalities; ++m) {
      double pre = w.at(k, m);  // unit input picks one column
      expect += pre * norm_cdf(pre);
    }
    CHECK(cache.zj[0][k] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("spf gradients agree with finite differences") {
  auto res = css::gradcheck::run_suite("spf", 10, 2028);
  CHECK(res.pass);
  CHECK(res.max_rel_err < 1e-4);
}
