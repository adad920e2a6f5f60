#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "pan/error.hpp"

namespace pan {

/// Rows are true classes, columns predicted.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t num_classes)
      : k_(num_classes), counts_(num_classes * num_classes, 0) {
    if (k_ < 2) throw DomainError("confusion matrix: need at least two classes");
  }

  void add(std::size_t truth, std::size_t predicted, std::uint64_t n = 1) {
    if (truth >= k_ || predicted >= k_) {
      throw DomainError("confusion matrix: class index out of range");
    }
    counts_[truth * k_ + predicted] += n;
  }

  std::uint64_t at(std::size_t truth, std::size_t predicted) const {
    return counts_[truth * k_ + predicted];
  }

  std::size_t num_classes() const { return k_; }

  std::uint64_t total() const {
    std::uint64_t t = 0;
    for (std::uint64_t c : counts_) t += c;
    return t;
  }

  std::uint64_t trace() const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k_; ++i) t += at(i, i);
    return t;
  }

  std::uint64_t row_total(std::size_t i) const {
    std::uint64_t t = 0;
    for (std::size_t j = 0; j < k_; ++j) t += at(i, j);
    return t;
  }

  std::uint64_t col_total(std::size_t j) const {
    std::uint64_t t = 0;
    for (std::size_t i = 0; i < k_; ++i) t += at(i, j);
    return t;
  }

  void merge(const ConfusionMatrix& other) {
    if (other.k_ != k_) throw DomainError("confusion matrix: merge with different class count");
    for (std::size_t i = 0; i < counts_.size(); ++i) counts_[i] += other.counts_[i];
  }

  bool operator==(const ConfusionMatrix& other) const {
    return k_ == other.k_ && counts_ == other.counts_;
  }

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

struct PerClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

struct MetricsReport {
  double acc = 0.0;
  double mf1 = 0.0;
  double kappa = 0.0;
  std::vector<PerClassMetrics> per_class;

  /// Structured text with 6-decimal fixed-point reals.
  std::string to_text() const {
    char buf[128];
    std::string out;
    std::snprintf(buf, sizeof buf, "acc %.6f\nmf1 %.6f\nkappa %.6f\n", acc, mf1, kappa);
    out += buf;
    for (std::size_t i = 0; i < per_class.size(); ++i) {
      std::snprintf(buf, sizeof buf, "class %zu precision %.6f recall %.6f f1 %.6f\n", i,
                    per_class[i].precision, per_class[i].recall, per_class[i].f1);
      out += buf;
    }
    return out;
  }
};

inline void require_scored(const ConfusionMatrix& cm) {
  if (cm.total() == 0) throw DomainError("metrics: empty confusion matrix");
}

inline double accuracy(const ConfusionMatrix& cm) {
  require_scored(cm);
  return static_cast<double>(cm.trace()) / static_cast<double>(cm.total());
}

/// Unweighted mean of per-class F1. A class with no predictions or no true
/// samples scores F1 = 0.
inline double macro_f1(const ConfusionMatrix& cm) {
  require_scored(cm);
  double sum = 0.0;
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    const double tp = static_cast<double>(cm.at(i, i));
    const double fp = static_cast<double>(cm.col_total(i)) - tp;
    const double fn = static_cast<double>(cm.row_total(i)) - tp;
    if (tp + fp == 0.0 || tp + fn == 0.0) continue;
    const double precision = tp / (tp + fp);
    const double recall = tp / (tp + fn);
    if (precision + recall > 0.0) sum += 2.0 * precision * recall / (precision + recall);
  }
  return sum / static_cast<double>(cm.num_classes());
}

inline double cohen_kappa(const ConfusionMatrix& cm) {
  require_scored(cm);
  const double q = static_cast<double>(cm.total());
  const double po = static_cast<double>(cm.trace()) / q;
  double pe = 0.0;
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    pe += static_cast<double>(cm.row_total(i)) * static_cast<double>(cm.col_total(i));
  }
  pe /= q * q;
  if (pe == 1.0) return po == 1.0 ? 1.0 : 0.0;
  return (po - pe) / (1.0 - pe);
}

inline MetricsReport compute_metrics(const ConfusionMatrix& cm) {
  require_scored(cm);
  MetricsReport report;
  report.acc = accuracy(cm);
  report.mf1 = macro_f1(cm);
  report.kappa = cohen_kappa(cm);
  report.per_class.resize(cm.num_classes());
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    const double tp = static_cast<double>(cm.at(i, i));
    const double fp = static_cast<double>(cm.col_total(i)) - tp;
    const double fn = static_cast<double>(cm.row_total(i)) - tp;
    PerClassMetrics& pc = report.per_class[i];
    pc.precision = tp + fp > 0.0 ? tp / (tp + fp) : 0.0;
    pc.recall = tp + fn > 0.0 ? tp / (tp + fn) : 0.0;
    pc.f1 = pc.precision + pc.recall > 0.0
                ? 2.0 * pc.precision * pc.recall / (pc.precision + pc.recall)
                : 0.0;
  }
  return report;
}

inline std::string confusion_to_text(const ConfusionMatrix& cm) {
  std::string out = "confusion (rows true, cols predicted)\n";
  for (std::size_t i = 0; i < cm.num_classes(); ++i) {
    for (std::size_t j = 0; j < cm.num_classes(); ++j) {
      out += std::to_string(cm.at(i, j));
      out += j + 1 == cm.num_classes() ? '\n' : ' ';
    }
  }
  return out;
}

}  // namespace pan
