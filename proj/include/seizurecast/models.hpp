#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seizurecast/autodiff.hpp"

namespace seizurecast {

// Feature-map geometry seen by the models: EEG channels are the convolution
// input channels, the MFCC [coefficients x frames] plane is the spatial
// extent.
struct InputGeometry {
  std::size_t channels = 23;
  std::size_t height = 13;
  std::size_t width = 201;

  friend bool operator==(const InputGeometry&, const InputGeometry&) = default;
};

struct ConvBlockSpec {
  std::size_t filters = 0;
  std::size_t kh = 3;
  std::size_t kw = 3;
  std::size_t pool_h = 1;  // 1 x 1 means no pooling after the block
  std::size_t pool_w = 1;

  friend bool operator==(const ConvBlockSpec&, const ConvBlockSpec&) = default;
};

// Multitask CNN: conv blocks (conv -> relu -> dropout, max-norm constrained)
// -> flatten -> dense embedding -> {sigmoid seizure head, softmax patient head}.
struct Model1Architecture {
  std::string id = "model1-v1";
  std::vector<ConvBlockSpec> blocks = {
      {16, 3, 5, 1, 1}, {16, 3, 5, 2, 4}, {32, 3, 5, 1, 1}, {32, 3, 5, 2, 4}, {64, 3, 3, 2, 6}};
  std::size_t embedding = 360;
  std::size_t patients = 24;
  double dropout = 0.6;
  double maxnorm = 0.4;
};

// Siamese encoder: two parallel conv stems -> concat -> conv block -> max-pool
// -> dropout -> flatten -> dense embedding; the classification
// branch is dense(hidden) -> relu -> dense(1) -> sigmoid.
struct Model2Architecture {
  std::string id = "model2-v1";
  std::size_t stem_filters = 8;
  std::vector<std::pair<std::size_t, std::size_t>> stem_kernels = {{5, 9}, {5, 11}};
  std::size_t block_filters = 16;
  std::size_t block_kh = 3;
  std::size_t block_kw = 5;
  std::size_t pool_h = 4;
  std::size_t pool_w = 10;
  std::size_t embedding = 100;
  std::size_t classifier_hidden = 40;
  double dropout = 0.4;
  double margin = 1.0;
  double embed_init_scale = 0.1;
};

enum class ModelKind { kModel1, kModel2 };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& s);

// Shared interface used by training, evaluation and attribution.
class Model {
 public:
  virtual ~Model() = default;

  struct Prediction {
    nn::Var p;  // [B] pre-ictal probability
    nn::Var e;  // [B x D] embedding
  };

  virtual ModelKind kind() const = 0;
  virtual const std::string& architecture_id() const = 0;
  virtual const InputGeometry& geometry() const = 0;
  virtual std::size_t embedding_size() const = 0;
  virtual Prediction predict(nn::Tape& t, const Tensor& batch, bool training, nn::Rng& rng) = 0;
  // Constraint projection after an optimizer step (no-op when none).
  virtual void apply_constraints() {}
  virtual std::unique_ptr<Model> clone() const = 0;

  nn::ParameterStore& params() { return params_; }
  const nn::ParameterStore& params() const { return params_; }
  std::size_t parameter_count() const { return params_.scalar_count(); }
  std::uint64_t seed() const { return seed_; }

  // Eval-mode pre-ictal probabilities for a [B x C x H x W] batch.
  std::vector<double> predict_proba(const Tensor& batch);
  // Eval-mode embeddings, [B x D].
  Tensor embed(const Tensor& batch);

  // Fixed per-coefficient standardization applied to every input batch,
  // (x - mean[h]) / scale[h]. Not trainable; travels with checkpoints.
  bool has_input_norm() const { return !norm_mean_.empty(); }
  void set_input_norm(std::vector<double> mean, std::vector<double> scale);
  const std::vector<double>& input_mean() const { return norm_mean_; }
  const std::vector<double>& input_scale() const { return norm_scale_; }

 protected:
  explicit Model(std::uint64_t seed) : seed_(seed) {}
  void copy_parameters_from(const Model& other);
  void check_input(const Tensor& batch) const;
  // check_input, then the input standardization when one is set.
  Tensor prepare_input(const Tensor& batch) const;

  nn::ParameterStore params_;
  std::vector<double> norm_mean_, norm_scale_;
  std::uint64_t seed_ = 0;
};

class Model1 final : public Model {
 public:
  Model1(Model1Architecture arch = {}, InputGeometry geometry = {}, std::uint64_t seed = 0);

  struct Outputs {
    nn::Var p;  // [B]
    nn::Var q;  // [B x patients]
    nn::Var e;  // [B x embedding]
  };

  Outputs forward(nn::Tape& t, const Tensor& batch, bool training, nn::Rng& rng);
  // lambda * BCE(p, y_seizure) + (1 - lambda) * CCE(q, y_patient).
  nn::Var loss(nn::Tape& t, const Outputs& out, std::span<const double> y_seizure, std::span<const int> y_patient,
               double lambda = 0.9);

  ModelKind kind() const override { return ModelKind::kModel1; }
  const std::string& architecture_id() const override { return arch_.id; }
  const InputGeometry& geometry() const override { return geometry_; }
  std::size_t embedding_size() const override { return arch_.embedding; }
  Prediction predict(nn::Tape& t, const Tensor& batch, bool training, nn::Rng& rng) override;
  void apply_constraints() override;
  std::unique_ptr<Model> clone() const override;

  const Model1Architecture& architecture() const { return arch_; }
  std::size_t flatten_size() const { return flatten_size_; }

 private:
  Model1Architecture arch_;
  InputGeometry geometry_;
  std::size_t flatten_size_ = 0;
};

class Model2 final : public Model {
 public:
  Model2(Model2Architecture arch = {}, InputGeometry geometry = {}, std::uint64_t seed = 0);

  struct PairOutputs {
    nn::Var e_a;
    nn::Var e_b;
    nn::Var d;  // [B] L2 distances
    nn::Var p;  // [B] probability for the primary sample
  };

  nn::Var encode(nn::Tape& t, nn::Var x, bool training, nn::Rng& rng);
  nn::Var classify(nn::Tape& t, nn::Var embedding);
  PairOutputs forward(nn::Tape& t, const Tensor& xa, const Tensor& xb, bool training, nn::Rng& rng);
  // gamma * contrastive(d, same) + (1 - gamma) * BCE(p, y_seizure).
  nn::Var loss(nn::Tape& t, const PairOutputs& out, std::span<const int> same, std::span<const double> y_seizure,
               double gamma = 0.6);

  ModelKind kind() const override { return ModelKind::kModel2; }
  const std::string& architecture_id() const override { return arch_.id; }
  const InputGeometry& geometry() const override { return geometry_; }
  std::size_t embedding_size() const override { return arch_.embedding; }
  Prediction predict(nn::Tape& t, const Tensor& batch, bool training, nn::Rng& rng) override;
  std::unique_ptr<Model> clone() const override;

  const Model2Architecture& architecture() const { return arch_; }
  std::size_t flatten_size() const { return flatten_size_; }

 private:
  Model2Architecture arch_;
  InputGeometry geometry_;
  std::size_t flatten_size_ = 0;
};

}  // namespace seizurecast
