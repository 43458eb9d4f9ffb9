#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "seizurecast/models.hpp"
#include "seizurecast/tensor.hpp"

namespace seizurecast {

// Value of a coalition; present[j] != 0 means player j takes its instance
// value, otherwise its baseline value.
using CoalitionValue = std::function<double(std::span<const std::uint8_t> present)>;

// Signed Monte Carlo permutation estimate: the mean marginal contribution of
// each player over `permutations` seeded uniform orderings.
std::vector<double> shapley_permutation(std::size_t players, const CoalitionValue& value, std::size_t permutations,
                                        std::uint64_t seed);

// Signed exact Shapley values by enumerating all 2^players coalitions.
std::vector<double> shapley_exact(std::size_t players, const CoalitionValue& value);

// Batched coalition value of a model: each row of `present` masks channels of
// `instance` with `baseline`, and the model's pre-ictal probability is read.
std::vector<double> masked_probabilities(Model& model, const Tensor& instance, const Tensor& baseline,
                                         std::span<const std::vector<std::uint8_t>> present);

// Channel-level attribution of one [C x H x W] instance with every channel as
// a player. Returns absolute Shapley values of the pre-ictal probability.
// n_samples is the permutation count and must be at least the channel count.
std::vector<double> channel_shapley(Model& model, const Tensor& instance, const Tensor& baseline,
                                    std::size_t n_samples, std::uint64_t seed);

struct AttributionMap {
  Tensor values;  // [C x N], nonnegative
  std::size_t n_samples = 0;
  std::uint64_t seed = 0;
  std::string baseline;
};

// channel_shapley over a sequence; instance i uses seed derive_seed(seed, i).
AttributionMap attribute_sequence(Model& model, std::span<const Tensor> instances, const Tensor& baseline,
                                  std::size_t n_samples, std::uint64_t seed, std::string baseline_id);

// Per-channel sum of absolute values of a [C x ...] per-element map.
std::vector<double> aggregate_elementwise(const Tensor& shap_map);

// Elementwise mean of equally shaped maps.
Tensor mean_map(std::span<const Tensor> maps);

// Symmetric Hann window with zero endpoints; length 1 gives {1}.
std::vector<double> hanning(std::size_t n);

struct PredictionTrace {
  std::vector<double> raw;
  std::vector<double> smoothed;
  std::vector<int> final;
  double threshold = 0.5;
  std::size_t window_len = 1;
};

// Hann-kernel smoothing with the kernel renormalized over the valid overlap at
// the edges, then final = smoothed >= threshold.
PredictionTrace smooth_and_threshold(std::span<const double> raw, std::size_t window_len = 21,
                                     double threshold = 0.5);

struct KlMap {
  Tensor values;  // [C x (N - 1)], nats
  std::size_t bins = 32;
  double alpha = 1e-6;
  std::vector<double> lo, hi;  // per-channel histogram range
};

// KL(P_t || P_{t+1}) per channel between consecutive maps, each channel's
// values binned on its global range over the sequence.
KlMap kl_map(std::span<const Tensor> features, std::size_t bins = 32, double alpha = 1e-6);

// Additively smoothed histogram distribution of `values` on [lo, hi].
std::vector<double> histogram_distribution(std::span<const double> values, double lo, double hi, std::size_t bins,
                                           double alpha);

// sum_i p_i ln(p_i / q_i); terms with p_i = 0 contribute 0.
double kl_divergence(std::span<const double> p, std::span<const double> q);

}  // namespace seizurecast
