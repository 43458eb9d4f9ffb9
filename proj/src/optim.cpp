#include "seizurecast/optim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "seizurecast/error.hpp"

namespace seizurecast::nn {

Adam::Adam(ParameterStore& params, AdamConfig cfg) : params_(&params), cfg_(cfg) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    state_.m.emplace_back(params[i].value.shape());
    state_.v.emplace_back(params[i].value.shape());
  }
}

void Adam::step() {
  ParameterStore& ps = *params_;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    if (!ps[i].grad.all_finite()) {
      throw NumericError("non-finite gradient in parameter '" + ps[i].name + "'; Adam step aborted");
    }
  }
  ++state_.step;
  const auto t = static_cast<double>(state_.step);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < ps.size(); ++i) {
    auto& theta = ps[i].value;
    const auto& g = ps[i].grad;
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    for (std::size_t k = 0; k < theta.size(); ++k) {
      m[k] = cfg_.beta1 * m[k] + (1.0 - cfg_.beta1) * g[k];
      v[k] = cfg_.beta2 * v[k] + (1.0 - cfg_.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      theta[k] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
    }
  }
}

void maxnorm_project(Tensor& kernel, double c) {
  if (!(c > 0)) throw std::invalid_argument("max-norm radius must be positive");
  if (kernel.empty()) return;
  const std::size_t filters = kernel.dim(0);
  const std::size_t n = kernel.size() / filters;
  for (std::size_t f = 0; f < filters; ++f) {
    double* w = kernel.data() + f * n;
    double sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) sq += w[i] * w[i];
    const double norm = std::sqrt(sq);
    if (norm > c) {
      const double s = c / norm;
      for (std::size_t i = 0; i < n; ++i) w[i] *= s;
    }
  }
}

void glorot_uniform(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::uniform_real_distribution<double> dist(-limit, limit);
  for (double& v : t.values()) v = dist(rng);
}

GradCheckResult grad_check(ParameterStore& params, const std::function<Var(Tape&)>& build_loss,
                           const GradCheckOptions& opt) {
  params.zero_grad();
  {
    Tape tape;
    const Var loss = build_loss(tape);
    tape.backward(loss);
  }
  auto eval = [&] {
    Tape tape;
    return tape.value(build_loss(tape))[0];
  };

  GradCheckResult r;
  Rng rng(opt.seed);
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params[pi];
    std::vector<std::size_t> coords(p.value.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (opt.max_coords_per_param && coords.size() > opt.max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(opt.max_coords_per_param);
      std::sort(coords.begin(), coords.end());
    }
    for (std::size_t k : coords) {
      const double saved = p.value[k];
      p.value[k] = saved + opt.eps;
      const double up = eval();
      p.value[k] = saved - opt.eps;
      const double down = eval();
      p.value[k] = saved;
      const double numeric = (up - down) / (2.0 * opt.eps);
      const double analytic = p.grad[k];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), opt.floor});
      const double err = std::abs(analytic - numeric) / denom;
      ++r.coordinates_checked;
      if (err > r.max_rel_error || r.worst_parameter.empty()) {
        r.max_rel_error = std::max(err, r.max_rel_error);
        if (err >= r.max_rel_error) {
          r.worst_parameter = p.name;
          r.worst_index = k;
          r.worst_analytic = analytic;
          r.worst_numeric = numeric;
        }
      }
    }
  }
  return r;
}

}  // namespace seizurecast::nn
