#include "seizurecast/interpret.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <stdexcept>

#include "seizurecast/error.hpp"
#include "seizurecast/random.hpp"

namespace seizurecast {

namespace {

void check_pair(const Tensor& instance, const Tensor& baseline) {
  if (instance.rank() != 3) throw std::invalid_argument("instance must be [C x H x W]");
  if (instance.shape() != baseline.shape()) {
    throw std::invalid_argument("baseline " + shape_string(baseline.shape()) + " does not match instance " +
                                shape_string(instance.shape()));
  }
}

}  // namespace

std::vector<double> shapley_permutation(std::size_t players, const CoalitionValue& value, std::size_t permutations,
                                        std::uint64_t seed) {
  if (players == 0) throw std::invalid_argument("need at least one player");
  if (permutations == 0) throw std::invalid_argument("need at least one permutation");
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(players);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint8_t> present(players);
  std::vector<double> phi(players, 0.0);
  for (std::size_t s = 0; s < permutations; ++s) {
    std::shuffle(order.begin(), order.end(), rng);
    std::fill(present.begin(), present.end(), 0);
    double prev = value(present);
    for (std::size_t j : order) {
      present[j] = 1;
      const double cur = value(present);
      phi[j] += cur - prev;
      prev = cur;
    }
  }
  for (double& v : phi) v /= static_cast<double>(permutations);
  return phi;
}

std::vector<double> shapley_exact(std::size_t players, const CoalitionValue& value) {
  if (players == 0 || players > 20) throw std::invalid_argument("exact Shapley supports 1..20 players");
  const std::size_t n_sets = std::size_t{1} << players;
  std::vector<double> v(n_sets);
  std::vector<std::uint8_t> present(players);
  for (std::size_t mask = 0; mask < n_sets; ++mask) {
    for (std::size_t j = 0; j < players; ++j) present[j] = (mask >> j) & 1U;
    v[mask] = value(present);
  }
  // weight(|S|) = |S|! (n - |S| - 1)! / n!
  std::vector<double> weight(players);
  for (std::size_t s = 0; s < players; ++s) {
    weight[s] = std::exp(std::lgamma(static_cast<double>(s + 1)) + std::lgamma(static_cast<double>(players - s)) -
                         std::lgamma(static_cast<double>(players + 1)));
  }
  std::vector<double> phi(players, 0.0);
  for (std::size_t j = 0; j < players; ++j) {
    const std::size_t bit = std::size_t{1} << j;
    for (std::size_t mask = 0; mask < n_sets; ++mask) {
      if (mask & bit) continue;
      phi[j] += weight[static_cast<std::size_t>(std::popcount(mask))] * (v[mask | bit] - v[mask]);
    }
  }
  return phi;
}

std::vector<double> masked_probabilities(Model& model, const Tensor& instance, const Tensor& baseline,
                                         std::span<const std::vector<std::uint8_t>> present) {
  check_pair(instance, baseline);
  const std::size_t c = instance.dim(0);
  const std::size_t plane = instance.size() / c;
  Tensor batch({present.size(), instance.dim(0), instance.dim(1), instance.dim(2)});
  for (std::size_t r = 0; r < present.size(); ++r) {
    if (present[r].size() != c) throw std::invalid_argument("coalition size differs from channel count");
    double* dst = batch.data() + r * instance.size();
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* src = (present[r][ch] ? instance.data() : baseline.data()) + ch * plane;
      std::copy(src, src + plane, dst + ch * plane);
    }
  }
  auto p = model.predict_proba(batch);
  for (double v : p) {
    if (!std::isfinite(v)) throw NumericError("model output is non-finite under channel masking");
  }
  return p;
}

std::vector<double> channel_shapley(Model& model, const Tensor& instance, const Tensor& baseline,
                                    std::size_t n_samples, std::uint64_t seed) {
  check_pair(instance, baseline);
  const std::size_t c = instance.dim(0);
  if (n_samples < c) {
    throw ConfigError("n_samples must be at least the channel count (" + std::to_string(c) + ")");
  }
  // One batch per permutation: the empty coalition plus each prefix.
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::vector<std::uint8_t>> rows(c + 1, std::vector<std::uint8_t>(c, 0));
  std::vector<double> phi(c, 0.0);
  for (std::size_t s = 0; s < n_samples; ++s) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t k = 1; k <= c; ++k) {
      rows[k] = rows[k - 1];
      rows[k][order[k - 1]] = 1;
    }
    const auto v = masked_probabilities(model, instance, baseline, rows);
    for (std::size_t k = 1; k <= c; ++k) phi[order[k - 1]] += v[k] - v[k - 1];
  }
  for (double& v : phi) v = std::abs(v / static_cast<double>(n_samples));
  return phi;
}

AttributionMap attribute_sequence(Model& model, std::span<const Tensor> instances, const Tensor& baseline,
                                  std::size_t n_samples, std::uint64_t seed, std::string baseline_id) {
  if (instances.empty()) throw std::invalid_argument("no instances to attribute");
  const std::size_t c = instances.front().dim(0);
  AttributionMap out{Tensor({c, instances.size()}), n_samples, seed, std::move(baseline_id)};
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto phi = channel_shapley(model, instances[i], baseline, n_samples, derive_seed(seed, i));
    for (std::size_t ch = 0; ch < c; ++ch) out.values.at(ch, i) = phi[ch];
  }
  return out;
}

std::vector<double> aggregate_elementwise(const Tensor& shap_map) {
  if (shap_map.rank() < 1 || shap_map.dim(0) == 0) throw std::invalid_argument("map needs a channel axis");
  const std::size_t c = shap_map.dim(0);
  const std::size_t n = shap_map.size() / c;
  std::vector<double> out(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t k = 0; k < n; ++k) out[ch] += std::abs(shap_map[ch * n + k]);
  }
  return out;
}

Tensor mean_map(std::span<const Tensor> maps) {
  if (maps.empty()) throw std::invalid_argument("mean of no maps");
  Tensor out(maps.front().shape());
  for (const auto& m : maps) {
    if (m.shape() != out.shape()) throw std::invalid_argument("maps differ in shape");
    for (std::size_t i = 0; i < m.size(); ++i) out[i] += m[i];
  }
  const auto n = static_cast<double>(maps.size());
  for (double& v : out.values()) v /= n;
  return out;
}

std::vector<double> hanning(std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {1.0};
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  }
  return w;
}

PredictionTrace smooth_and_threshold(std::span<const double> raw, std::size_t window_len, double threshold) {
  if (window_len == 0 || window_len % 2 == 0) throw ConfigError("smoothing window length must be odd and >= 1");
  if (window_len > 2 * raw.size() + 1) {
    throw ConfigError("smoothing window of " + std::to_string(window_len) + " is longer than 2N+1 for N=" +
                      std::to_string(raw.size()));
  }
  PredictionTrace tr;
  tr.raw.assign(raw.begin(), raw.end());
  tr.threshold = threshold;
  tr.window_len = window_len;
  const auto w = hanning(window_len);
  const auto half = static_cast<std::ptrdiff_t>(window_len / 2);
  const auto n = static_cast<std::ptrdiff_t>(raw.size());
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    double num = 0.0, den = 0.0;
    for (std::ptrdiff_t k = -half; k <= half; ++k) {
      const std::ptrdiff_t j = i + k;
      if (j < 0 || j >= n) continue;
      const double wk = w[static_cast<std::size_t>(k + half)];
      num += wk * raw[static_cast<std::size_t>(j)];
      den += wk;
    }
    tr.smoothed.push_back(num / den);
    tr.final.push_back(tr.smoothed.back() >= threshold ? 1 : 0);
  }
  return tr;
}

std::vector<double> histogram_distribution(std::span<const double> values, double lo, double hi, std::size_t bins,
                                           double alpha) {
  if (bins == 0) throw std::invalid_argument("histogram needs at least one bin");
  if (values.empty()) throw std::invalid_argument("histogram of no values");
  std::vector<double> p(bins, 0.0);
  const double width = hi - lo;
  for (double v : values) {
    std::size_t b = 0;
    if (width > 0) {
      const double x = (v - lo) / width * static_cast<double>(bins);
      b = x <= 0 ? 0 : std::min(bins - 1, static_cast<std::size_t>(x));
    }
    p[b] += 1.0;
  }
  const double total = static_cast<double>(values.size());
  const double norm = 1.0 + alpha * static_cast<double>(bins);
  for (double& v : p) v = (v / total + alpha) / norm;
  return p;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw std::invalid_argument("distributions differ in support size");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0) kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(kl, 0.0);
}

KlMap kl_map(std::span<const Tensor> features, std::size_t bins, double alpha) {
  if (features.size() < 2) throw std::invalid_argument("KL map needs at least two feature maps");
  if (!(alpha > 0)) throw ConfigError("KL smoothing alpha must be positive");
  const Shape& shape = features.front().shape();
  for (const auto& f : features) {
    if (f.shape() != shape || f.rank() < 1) throw std::invalid_argument("feature maps differ in shape");
    if (!f.all_finite()) throw NumericError("feature map has non-finite values");
  }
  const std::size_t c = shape[0];
  const std::size_t plane = features.front().size() / c;
  const std::size_t n = features.size();
  KlMap out{Tensor({c, n - 1}), bins, alpha, std::vector<double>(c), std::vector<double>(c)};
  for (std::size_t ch = 0; ch < c; ++ch) {
    double lo = features.front()[ch * plane], hi = lo;
    for (const auto& f : features) {
      const auto [mn, mx] = std::minmax_element(f.data() + ch * plane, f.data() + (ch + 1) * plane);
      lo = std::min(lo, *mn);
      hi = std::max(hi, *mx);
    }
    out.lo[ch] = lo;
    out.hi[ch] = hi;
    std::vector<double> prev;
    for (std::size_t t = 0; t < n; ++t) {
      auto cur = histogram_distribution({features[t].data() + ch * plane, plane}, lo, hi, bins, alpha);
      if (t > 0) out.values.at(ch, t - 1) = kl_divergence(prev, cur);
      prev = std::move(cur);
    }
  }
  return out;
}

}  // namespace seizurecast
