#pragma once

// Tape-based reverse-mode differentiation restricted to the node set the two
// seizure models need. Tensors are batch-major: [B x C x H x W] for feature
// maps, [B x D] for vectors.

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seizurecast/tensor.hpp"

namespace seizurecast::nn {

using Rng = std::mt19937_64;

struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;
};

// Owns every trainable tensor of a model. Two branches of a Siamese pair
// read the same Parameter objects, so their gradients accumulate here.
class ParameterStore {
 public:
  Parameter& add(std::string name, Shape shape);
  Parameter& get(std::string_view name);
  const Parameter& get(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t scalar_count() const;
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad();

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
};

struct Var {
  std::size_t id = std::numeric_limits<std::size_t>::max();
};

class Tape {
 public:
  using Backward = std::function<void(Tape&)>;

  Var constant(Tensor value);
  Var parameter(Parameter& p);

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  // Upstream gradient of a node; empty if nothing flowed into it.
  const Tensor& grad(Var v) const { return nodes_.at(v.id).grad; }
  // Zero-initialized on first access.
  Tensor& grad_buffer(Var v);

  // Adds a node whose value was computed by an op. `requires_grad` should be
  // true when any input requires a gradient.
  Var push(Tensor value, bool requires_grad);
  void set_backward(Var v, Backward fn) { nodes_.at(v.id).backward = std::move(fn); }

  // Reverse sweep from a scalar node. Parameter gradients are added to
  // Parameter::grad.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backward backward;
    Parameter* param = nullptr;
    bool requires_grad = false;
  };
  std::vector<Node> nodes_;
};

struct Conv2dOptions {
  std::size_t stride_h = 1;
  std::size_t stride_w = 1;
  std::size_t pad_h = 0;
  std::size_t pad_w = 0;

  // Zero padding that preserves H and W for odd kernels at stride 1.
  static Conv2dOptions same(std::size_t kh, std::size_t kw) { return {1, 1, kh / 2, kw / 2}; }
};

// Cross-correlation with bias. x [B x Cin x H x W], w [Cout x Cin x kh x kw],
// b [Cout].
Var conv2d(Tape& t, Var x, Var w, Var b, const Conv2dOptions& opt = {});
// Non-overlapping max pooling (stride = kernel, floor).
Var max_pool2d(Tape& t, Var x, std::size_t kh, std::size_t kw);
// x [B x in], w [out x in], b [out].
Var dense(Tape& t, Var x, Var w, Var b);
Var relu(Tape& t, Var x);
Var sigmoid(Tape& t, Var x);
// Softmax over the last axis of [B x K].
Var softmax(Tape& t, Var x);
// Inverted dropout; identity when `training` is false.
Var dropout(Tape& t, Var x, double p, Rng& rng, bool training);
Var flatten(Tape& t, Var x);
// Concatenation along axis 1.
Var concat(Tape& t, std::span<const Var> xs);
// Row-wise Euclidean distance of two [B x D] tensors -> [B]. The gradient at
// d = 0 is taken as zero.
Var l2_distance(Tape& t, Var a, Var b);

inline constexpr double kProbabilityClamp = 1e-7;

// Scalar loss definitions shared by the tape nodes.
double bce(double p, double y);
double cce(std::span<const double> q, std::size_t y);
double contrastive(double d, int same, double margin);

// Batch-mean losses; all return a [1] tensor.
Var bce_loss(Tape& t, Var p, std::span<const double> y);
Var cce_loss(Tape& t, Var q, std::span<const int> y);
Var contrastive_loss(Tape& t, Var d, std::span<const int> same, double margin = 1.0);
// Sum of w_i * x_i over scalar nodes.
Var weighted_sum(Tape& t, std::span<const Var> xs, std::span<const double> weights);

}  // namespace seizurecast::nn
