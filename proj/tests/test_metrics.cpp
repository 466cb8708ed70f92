#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "css/metrics.hpp"
#include "css/rng.hpp"

using namespace css;

TEST_CASE("accumulation respects the mask and validates labels") {
  ConfusionMatrix cm(3);
  std::vector<std::int32_t> preds{0, 1, 2};
  std::vector<std::int32_t> labels{0, 1, 2};
  std::vector<double> mask{1, 1, 1};
  cm.accumulate(preds, labels, mask);
  for (std::size_t i = 0; i < 3; ++i) {
    for (std::size_t j = 0; j < 3; ++j) CHECK(cm.count(i, j) == (i == j ? 1u : 0u));
  }

  ConfusionMatrix empty(3);
  std::vector<double> none{0, 0, 0};
  std::vector<std::int32_t> junk{-1, 9, 5};
  empty.accumulate(preds, junk, none);  // all masked: junk labels are fine
  CHECK(empty.total() == 0);

  std::vector<double> one{1, 0, 0};
  CHECK_THROWS_AS(empty.accumulate(preds, junk, one), std::invalid_argument);

  ConfusionMatrix ex(2);
  std::vector<std::int32_t> p2{0, 1, 1};
  std::vector<std::int32_t> l2{0, 0, 1};
  std::vector<double> m2{1, 1, 1};
  ex.accumulate(p2, l2, m2);
  CHECK(ex.count(0, 0) == 1);
  CHECK(ex.count(0, 1) == 1);
  CHECK(ex.count(1, 1) == 1);
  CHECK(ex.count(1, 0) == 0);
}

TEST_CASE("summary of perfect predictions") {
  ConfusionMatrix cm(3);
  std::vector<std::int32_t> preds{0, 1, 2, 1};
  std::vector<double> mask{1, 1, 1, 1};
  cm.accumulate(preds, preds, mask);
  MetricsSummary s = summarize(cm);
  CHECK(s.accuracy == 1.0);
  CHECK(s.weighted_f1 == 1.0);
  for (double f1 : s.per_class_f1) CHECK(f1 == 1.0);
}

TEST_CASE("worked three-sample example") {
  ConfusionMatrix cm(2);
  std::vector<std::int32_t> preds{0, 1, 1};
  std::vector<std::int32_t> labels{0, 0, 1};
  std::vector<double> mask{1, 1, 1};
  cm.accumulate(preds, labels, mask);
  MetricsSummary s = summarize(cm);
  CHECK(s.accuracy == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(s.per_class_f1[0] == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(s.per_class_f1[1] == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(s.weighted_f1 == doctest::Approx(2.0 / 3).epsilon(1e-15));
  CHECK(s.per_class_recall[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(s.per_class_recall[1] == 1.0);
}

TEST_CASE("a class absent from labels and predictions scores zero with zero weight") {
  ConfusionMatrix cm(3);
  std::vector<std::int32_t> preds{0, 1, 0, 1};
  std::vector<std::int32_t> labels{0, 1, 0, 0};
  std::vector<double> mask{1, 1, 1, 1};
  cm.accumulate(preds, labels, mask);
  MetricsSummary s = summarize(cm);
  CHECK(s.per_class_f1[2] == 0.0);
  CHECK(s.support[2] == 0);
  // weighted f1 computed over the supported classes only
  double expect =
      (3.0 * s.per_class_f1[0] + 1.0 * s.per_class_f1[1]) / 4.0;
  CHECK(s.weighted_f1 == doctest::Approx(expect).epsilon(1e-15));
}

TEST_CASE("empty matrices are rejected") {
  ConfusionMatrix cm(4);
  CHECK_THROWS_AS(summarize(cm), std::invalid_argument);
  CHECK_THROWS_AS(ConfusionMatrix(0), std::invalid_argument);
}

TEST_CASE("matches a brute-force precision/recall oracle on random matrices") {
  Rng rng(404);
  for (int trial = 0; trial < 100; ++trial) {
    std::size_t c = 2 + rng.next_below(5);
    ConfusionMatrix cm(c);
    // random counts via accumulate to keep the public path honest
    std::vector<std::int32_t> preds, labels;
    std::vector<double> mask;
    std::size_t n = 1 + rng.next_below(60);
    for (std::size_t i = 0; i < n; ++i) {
      preds.push_back(static_cast<std::int32_t>(rng.next_below(c)));
      labels.push_back(static_cast<std::int32_t>(rng.next_below(c)));
      mask.push_back(1.0);
    }
    cm.accumulate(preds, labels, mask);
    MetricsSummary s = summarize(cm);

    // oracle: recompute everything from raw pairs
    double correct = 0;
    for (std::size_t i = 0; i < n; ++i) correct += preds[i] == labels[i] ? 1.0 : 0.0;
    CHECK(s.accuracy == doctest::Approx(correct / double(n)).epsilon(1e-12));
    double wf1 = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      double tp = 0, fp = 0, fn = 0;
      for (std::size_t i = 0; i < n; ++i) {
        bool is_k_true = labels[i] == std::int32_t(k);
        bool is_k_pred = preds[i] == std::int32_t(k);
        if (is_k_true && is_k_pred) tp += 1;
        if (!is_k_true && is_k_pred) fp += 1;
        if (is_k_true && !is_k_pred) fn += 1;
      }
      double prec = tp + fp > 0 ? tp / (tp + fp) : 0.0;
      double rec = tp + fn > 0 ? tp / (tp + fn) : 0.0;
      double f1 = prec + rec > 0 ? 2 * prec * rec / (prec + rec) : 0.0;
      CHECK(s.per_class_f1[k] == doctest::Approx(f1).epsilon(1e-12));
      CHECK(s.per_class_recall[k] == doctest::Approx(rec).epsilon(1e-12));
      wf1 += (tp + fn) * f1;
    }
    CHECK(s.weighted_f1 == doctest::Approx(wf1 / double(n)).epsilon(1e-12));
    CHECK(s.weighted_f1 >= 0.0);
    CHECK(s.weighted_f1 <= 1.0);
    CHECK(s.accuracy >= 0.0);
    CHECK(s.accuracy <= 1.0);
  }
}

TEST_CASE("consistent class permutations leave the aggregates unchanged") {
  Rng rng(405);
  std::size_t c = 4, n = 40;
  std::vector<std::int32_t> preds, labels;
  std::vector<double> mask(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    preds.push_back(static_cast<std::int32_t>(rng.next_below(c)));
    labels.push_back(static_cast<std::int32_t>(rng.next_below(c)));
  }
  ConfusionMatrix cm(c);
  cm.accumulate(preds, labels, mask);
  MetricsSummary base = summarize(cm);

  std::vector<std::int32_t> perm{2, 0, 3, 1};
  std::vector<std::int32_t> preds_p(n), labels_p(n);
  for (std::size_t i = 0; i < n; ++i) {
    preds_p[i] = perm[preds[i]];
    labels_p[i] = perm[labels[i]];
  }
  ConfusionMatrix cmp(c);
  cmp.accumulate(preds_p, labels_p, mask);
  MetricsSummary moved = summarize(cmp);
  CHECK(moved.accuracy == doctest::Approx(base.accuracy).epsilon(1e-15));
  CHECK(moved.weighted_f1 == doctest::Approx(base.weighted_f1).epsilon(1e-12));
  for (std::size_t k = 0; k < c; ++k) {
    CHECK(moved.per_class_f1[perm[k]] == doctest::Approx(base.per_class_f1[k]).epsilon(1e-12));
  }
}

TEST_CASE("shard merging equals single-pass accumulation") {
  Rng rng(406);
  std::size_t c = 3, n = 30;
  std::vector<std::int32_t> preds, labels;
  std::vector<double> mask(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    preds.push_back(static_cast<std::int32_t>(rng.next_below(c)));
    labels.push_back(static_cast<std::int32_t>(rng.next_below(c)));
  }
  ConfusionMatrix whole(c);
  whole.accumulate(preds, labels, mask);

  ConfusionMatrix a(c), b(c);
  std::span<const std::int32_t> p(preds), l(labels);
  std::span<const double> m(mask);
  a.accumulate(p.subspan(0, 11), l.subspan(0, 11), m.subspan(0, 11));
  b.accumulate(p.subspan(11), l.subspan(11), m.subspan(11));
  a.merge(b);
  for (std::size_t i = 0; i < c; ++i) {
    for (std::size_t j = 0; j < c; ++j) CHECK(a.count(i, j) == whole.count(i, j));
  }
}

TEST_CASE("serialization produces the expected keys") {
  ConfusionMatrix cm(2);
  std::vector<std::int32_t> preds{0, 1};
  std::vector<double> mask{1, 1};
  cm.accumulate(preds, preds, mask);
  MetricsSummary s = summarize(cm);
  std::string kv = metrics_to_kv(s);
  CHECK(kv.find("accuracy 1") != std::string::npos);
  CHECK(kv.find("weighted_f1 1") != std::string::npos);
  CHECK(kv.find("class0_f1 1") != std::string::npos);
  std::string csv = metrics_to_csv(s);
  CHECK(csv.find("accuracy,weighted_f1") == 0);
}
