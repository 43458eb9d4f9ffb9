#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace seizurecast {

struct Confusion {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;

  std::size_t total() const { return tp + tn + fp + fn; }
  friend bool operator==(const Confusion&, const Confusion&) = default;
};

// Sensitivity and specificity are NaN when their class is absent.
struct Metrics {
  Confusion counts;
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  std::optional<double> roc_auc;  // absent for single-class data
};

// Mann-Whitney form: fraction of (positive, negative) pairs ranked correctly,
// ties counted as one half. Throws std::invalid_argument unless both classes
// are present.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

// Thresholded metrics (score >= threshold means pre-ictal) plus AUC.
Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5);

struct MetricSummary {
  Metrics mean;  // mean.counts holds the pooled confusion counts
  Metrics stddev;  // sample standard deviation, zero for a single record
  std::size_t records = 0;
};

// Unweighted mean and sample std of each metric across records; the AUC
// summary uses only records that have one.
MetricSummary summarize(std::span<const Metrics> records);

}  // namespace seizurecast
