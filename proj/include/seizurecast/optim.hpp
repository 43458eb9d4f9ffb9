#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "seizurecast/autodiff.hpp"

namespace seizurecast::nn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;  // first moments, one per parameter
  std::vector<Tensor> v;  // second moments
  std::uint64_t step = 0;
};

// Bias-corrected Adam over every parameter of a store, reading
// Parameter::grad. A step with any non-finite gradient is rejected before
// any parameter changes and raises NumericError.
class Adam {
 public:
  Adam(ParameterStore& params, AdamConfig cfg = {});

  void step();
  std::uint64_t steps() const { return state_.step; }
  const AdamConfig& config() const { return cfg_; }
  AdamState& state() { return state_; }
  const AdamState& state() const { return state_; }

 private:
  ParameterStore* params_;
  AdamConfig cfg_;
  AdamState state_;
};

// Rescales each output filter (leading axis) whose L2 norm exceeds c onto
// the ball of radius c.
void maxnorm_project(Tensor& kernel, double c = 0.4);

// Glorot-uniform fill with limit sqrt(6 / (fan_in + fan_out)).
void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng);

struct GradCheckOptions {
  double eps = 1e-5;
  // Denominator floor of the relative error |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  // 0 checks every coordinate; otherwise a seeded sample per parameter.
  std::size_t max_coords_per_param = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coordinates_checked = 0;
};

// Central finite differences of a scalar loss against backward gradients for
// the parameters of `params`. `build_loss` must construct the loss on the tape
// it is given and be deterministic (no dropout).
GradCheckResult grad_check(ParameterStore& params, const std::function<Var(Tape&)>& build_loss,
                           const GradCheckOptions& opt = {});

}  // namespace seizurecast::nn
