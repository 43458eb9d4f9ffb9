#include "seizurecast/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace seizurecast {

namespace {

void check_sizes(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("scores and labels differ in length");
  for (int y : labels) {
    if (y != 0 && y != 1) throw std::invalid_argument("labels must be 0 or 1");
  }
}

double ratio(std::size_t num, std::size_t den) {
  return den ? static_cast<double>(num) / static_cast<double>(den) : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_sizes(scores, labels);
  const std::size_t n = scores.size();
  const auto pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const std::size_t neg = n - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("roc_auc needs both classes");
  for (double s : scores) {
    if (std::isnan(s)) throw std::invalid_argument("roc_auc got a NaN score");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Sum of midranks of the positives.
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum += midrank;
    }
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

Confusion confusion(std::span<const double> scores, std::span<const int> labels, double threshold) {
  check_sizes(scores, labels);
  Confusion c;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool predicted = scores[i] >= threshold;
    if (labels[i] == 1) {
      predicted ? ++c.tp : ++c.fn;
    } else {
      predicted ? ++c.fp : ++c.tn;
    }
  }
  return c;
}

Metrics compute_metrics(std::span<const double> scores, std::span<const int> labels, double threshold) {
  Metrics m;
  m.counts = confusion(scores, labels, threshold);
  const Confusion& c = m.counts;
  m.accuracy = ratio(c.tp + c.tn, c.total());
  m.sensitivity = ratio(c.tp, c.tp + c.fn);
  m.specificity = ratio(c.tn, c.tn + c.fp);
  if (c.tp + c.fn > 0 && c.tn + c.fp > 0) m.roc_auc = roc_auc(scores, labels);
  return m;
}

MetricSummary summarize(std::span<const Metrics> records) {
  MetricSummary s;
  s.records = records.size();
  if (records.empty()) return s;

  auto stats = [&](auto get, double& mean, double& sd) {
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& r : records) {
      if (auto v = get(r)) {
        sum += *v;
        ++n;
      }
    }
    if (n == 0) {
      mean = sd = std::numeric_limits<double>::quiet_NaN();
      return n;
    }
    mean = sum / static_cast<double>(n);
    double ss = 0.0;
    for (const auto& r : records) {
      if (auto v = get(r)) ss += (*v - mean) * (*v - mean);
    }
    sd = n > 1 ? std::sqrt(ss / static_cast<double>(n - 1)) : 0.0;
    return n;
  };
  using Opt = std::optional<double>;
  stats([](const Metrics& r) { return Opt(r.accuracy); }, s.mean.accuracy, s.stddev.accuracy);
  stats([](const Metrics& r) { return Opt(r.sensitivity); }, s.mean.sensitivity, s.stddev.sensitivity);
  stats([](const Metrics& r) { return Opt(r.specificity); }, s.mean.specificity, s.stddev.specificity);
  double auc_mean = 0.0, auc_sd = 0.0;
  if (stats([](const Metrics& r) { return r.roc_auc; }, auc_mean, auc_sd) > 0) {
    s.mean.roc_auc = auc_mean;
    s.stddev.roc_auc = auc_sd;
  }
  for (const auto& r : records) {
    s.mean.counts.tp += r.counts.tp;
    s.mean.counts.tn += r.counts.tn;
    s.mean.counts.fp += r.counts.fp;
    s.mean.counts.fn += r.counts.fn;
  }
  return s;
}

}  // namespace seizurecast
