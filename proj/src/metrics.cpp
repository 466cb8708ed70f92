#include "css/metrics.hpp"

#include <charconv>
#include <sstream>
#include <stdexcept>

namespace css {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes)
    : c_(n_classes), counts_(n_classes * n_classes, 0) {
  if (n_classes == 0) throw std::invalid_argument("ConfusionMatrix: need at least one class");
}

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t t = 0;
  for (auto v : counts_) t += v;
  return t;
}

void ConfusionMatrix::accumulate(std::span<const std::int32_t> preds,
                                 std::span<const std::int32_t> labels,
                                 std::span<const double> mask) {
  if (preds.size() != labels.size() || preds.size() != mask.size()) {
    throw std::invalid_argument("ConfusionMatrix: misaligned inputs");
  }
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (mask[i] == 0.0) continue;
    std::int32_t y = labels[i], p = preds[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c_ || p < 0 ||
        static_cast<std::size_t>(p) >= c_) {
      throw std::invalid_argument("ConfusionMatrix: label/prediction out of range on valid row");
    }
    ++counts_[static_cast<std::size_t>(y) * c_ + static_cast<std::size_t>(p)];
  }
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
  if (other.c_ != c_) throw std::invalid_argument("ConfusionMatrix: class count mismatch");
  for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
}

MetricsSummary summarize(const ConfusionMatrix& cm) {
  std::uint64_t total = cm.total();
  if (total == 0) throw std::invalid_argument("summarize: empty confusion matrix");
  std::size_t c = cm.classes();
  MetricsSummary s;
  s.per_class_recall.assign(c, 0.0);
  s.per_class_f1.assign(c, 0.0);
  s.support.assign(c, 0);

  std::uint64_t diag = 0;
  for (std::size_t k = 0; k < c; ++k) {
    std::uint64_t tp = cm.count(k, k);
    std::uint64_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.count(k, j);
      col += cm.count(j, k);
    }
    diag += tp;
    s.support[k] = row;
    double precision = col > 0 ? static_cast<double>(tp) / static_cast<double>(col) : 0.0;
    double recall = row > 0 ? static_cast<double>(tp) / static_cast<double>(row) : 0.0;
    s.per_class_recall[k] = recall;
    s.per_class_f1[k] =
        (precision + recall) > 0.0 ? 2.0 * precision * recall / (precision + recall) : 0.0;
  }
  s.accuracy = static_cast<double>(diag) / static_cast<double>(total);
  double wf1 = 0.0;
  for (std::size_t k = 0; k < c; ++k) {
    wf1 += static_cast<double>(s.support[k]) * s.per_class_f1[k];
  }
  s.weighted_f1 = wf1 / static_cast<double>(total);
  return s;
}

std::string metrics_to_kv(const MetricsSummary& s) {
  std::ostringstream out;
  out << "accuracy " << fmt_double(s.accuracy) << "\n";
  out << "weighted_f1 " << fmt_double(s.weighted_f1) << "\n";
  for (std::size_t k = 0; k < s.per_class_f1.size(); ++k) {
    out << "class" << k << "_recall " << fmt_double(s.per_class_recall[k]) << "\n";
    out << "class" << k << "_f1 " << fmt_double(s.per_class_f1[k]) << "\n";
    out << "class" << k << "_support " << s.support[k] << "\n";
  }
  return out.str();
}

std::string metrics_to_csv(const MetricsSummary& s) {
  std::ostringstream head, row;
  head << "accuracy,weighted_f1";
  row << fmt_double(s.accuracy) << "," << fmt_double(s.weighted_f1);
  for (std::size_t k = 0; k < s.per_class_f1.size(); ++k) {
    head << ",class" << k << "_recall,class" << k << "_f1,class" << k << "_support";
    row << "," << fmt_double(s.per_class_recall[k]) << "," << fmt_double(s.per_class_f1[k]) << ","
        << s.support[k];
  }
  return head.str() + "\n" + row.str() + "\n";
}

}  // namespace css
