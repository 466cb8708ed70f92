#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace css {

/// Row = true class, column = predicted class.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes);

  std::size_t classes() const { return c_; }
  std::uint64_t count(std::size_t truth, std::size_t pred) const { return counts_[truth * c_ + pred]; }
  std::uint64_t total() const;

  /// Adds valid (mask = 1) positions only; rejects out-of-range labels there.
  void accumulate(std::span<const std::int32_t> preds, std::span<const std::int32_t> labels,
                  std::span<const double> mask);
  /// Shard merge: element-wise sum of counts.
  void merge(const ConfusionMatrix& other);

 private:
  std::size_t c_;
  std::vector<std::uint64_t> counts_;
};

struct MetricsSummary {
  double accuracy = 0.0;
  double weighted_f1 = 0.0;
  std::vector<double> per_class_recall;  // the per-class "accuracy" column
  std::vector<double> per_class_f1;
  std::vector<std::uint64_t> support;
};

/// ACC = trace/total, per-class F1 with the 0-when-undefined convention, and
/// support-weighted F1. Rejects an empty matrix.
MetricsSummary summarize(const ConfusionMatrix& cm);

/// Flat "key value" lines, one metric per line.
std::string metrics_to_kv(const MetricsSummary& s);
/// CSV with a header row and one row of values.
std::string metrics_to_csv(const MetricsSummary& s);

}  // namespace css
