#include "seizurecast/models.hpp"

#include <cmath>
#include <stdexcept>

#include "seizurecast/error.hpp"
#include "seizurecast/optim.hpp"

namespace seizurecast {

using nn::Tape;
using nn::Var;

std::string to_string(ModelKind kind) { return kind == ModelKind::kModel1 ? "model1" : "model2"; }

ModelKind parse_model_kind(const std::string& s) {
  if (s == "model1") return ModelKind::kModel1;
  if (s == "model2") return ModelKind::kModel2;
  throw ConfigError("unknown model '" + s + "' (expected model1 or model2)");
}

void Model::check_input(const Tensor& batch) const {
  const auto& g = geometry();
  if (batch.rank() != 4 || batch.dim(1) != g.channels || batch.dim(2) != g.height || batch.dim(3) != g.width) {
    throw std::invalid_argument("model input " + shape_string(batch.shape()) + " does not match [B x " +
                                std::to_string(g.channels) + " x " + std::to_string(g.height) + " x " +
                                std::to_string(g.width) + "]");
  }
}

void Model::copy_parameters_from(const Model& other) {
  for (std::size_t i = 0; i < params_.size(); ++i) params_[i].value = other.params()[i].value;
  norm_mean_ = other.norm_mean_;
  norm_scale_ = other.norm_scale_;
}

void Model::set_input_norm(std::vector<double> mean, std::vector<double> scale) {
  const std::size_t h = geometry().height;
  if (mean.size() != h || scale.size() != h) throw ConfigError("input normalization needs one value per coefficient");
  for (std::size_t i = 0; i < h; ++i) {
    if (!std::isfinite(mean[i]) || !std::isfinite(scale[i]) || !(scale[i] > 0)) {
      throw ConfigError("input normalization values must be finite with positive scale");
    }
  }
  norm_mean_ = std::move(mean);
  norm_scale_ = std::move(scale);
}

Tensor Model::prepare_input(const Tensor& batch) const {
  check_input(batch);
  if (!has_input_norm()) return batch;
  Tensor x = batch;
  const std::size_t h = geometry().height, w = geometry().width;
  const std::size_t rows = x.size() / w;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t k = r % h;
    double* row = x.data() + r * w;
    for (std::size_t j = 0; j < w; ++j) row[j] = (row[j] - norm_mean_[k]) / norm_scale_[k];
  }
  return x;
}

std::vector<double> Model::predict_proba(const Tensor& batch) {
  Tape t;
  nn::Rng rng(0);
  const auto pred = predict(t, batch, false, rng);
  const auto& v = t.value(pred.p).storage();
  return {v.begin(), v.end()};
}

Tensor Model::embed(const Tensor& batch) {
  Tape t;
  nn::Rng rng(0);
  return t.value(predict(t, batch, false, rng).e);
}

Model1::Model1(Model1Architecture arch, InputGeometry geometry, std::uint64_t seed)
    : Model(seed), arch_(std::move(arch)), geometry_(geometry) {
  if (arch_.blocks.empty()) throw ConfigError("model1 needs at least one conv block");
  nn::Rng rng(seed);
  std::size_t c = geometry_.channels, h = geometry_.height, w = geometry_.width;
  for (std::size_t i = 0; i < arch_.blocks.size(); ++i) {
    const auto& b = arch_.blocks[i];
    auto& k = params_.add("conv" + std::to_string(i + 1) + ".kernel", {b.filters, c, b.kh, b.kw});
    nn::glorot_uniform(k.value, c * b.kh * b.kw, b.filters * b.kh * b.kw, rng);
    params_.add("conv" + std::to_string(i + 1) + ".bias", {b.filters});
    c = b.filters;
    h /= b.pool_h;
    w /= b.pool_w;
    if (h == 0 || w == 0) throw ConfigError("model1 pooling collapses the input geometry");
  }
  flatten_size_ = c * h * w;
  auto& de = params_.add("embed.weight", {arch_.embedding, flatten_size_});
  nn::glorot_uniform(de.value, flatten_size_, arch_.embedding, rng);
  params_.add("embed.bias", {arch_.embedding});
  auto& hs = params_.add("seizure.weight", {1, arch_.embedding});
  nn::glorot_uniform(hs.value, arch_.embedding, 1, rng);
  params_.add("seizure.bias", {1});
  auto& hp = params_.add("patient.weight", {arch_.patients, arch_.embedding});
  nn::glorot_uniform(hp.value, arch_.embedding, arch_.patients, rng);
  params_.add("patient.bias", {arch_.patients});
}

Model1::Outputs Model1::forward(Tape& t, const Tensor& batch, bool training, nn::Rng& rng) {
  Var x = t.constant(prepare_input(batch));
  for (std::size_t i = 0; i < arch_.blocks.size(); ++i) {
    const auto& b = arch_.blocks[i];
    const std::string n = "conv" + std::to_string(i + 1);
    x = nn::conv2d(t, x, t.parameter(params_.get(n + ".kernel")), t.parameter(params_.get(n + ".bias")),
                   nn::Conv2dOptions::same(b.kh, b.kw));
    x = nn::relu(t, x);
    x = nn::dropout(t, x, arch_.dropout, rng, training);
    if (b.pool_h > 1 || b.pool_w > 1) x = nn::max_pool2d(t, x, b.pool_h, b.pool_w);
  }
  x = nn::flatten(t, x);
  Var e = nn::relu(t, nn::dense(t, x, t.parameter(params_.get("embed.weight")), t.parameter(params_.get("embed.bias"))));
  Var p = nn::sigmoid(
      t, nn::dense(t, e, t.parameter(params_.get("seizure.weight")), t.parameter(params_.get("seizure.bias"))));
  Var q = nn::softmax(
      t, nn::dense(t, e, t.parameter(params_.get("patient.weight")), t.parameter(params_.get("patient.bias"))));
  return {p, q, e};
}

Var Model1::loss(Tape& t, const Outputs& out, std::span<const double> y_seizure, std::span<const int> y_patient,
                 double lambda) {
  if (lambda < 0.0 || lambda > 1.0) throw ConfigError("lambda must be in [0, 1]");
  const Var terms[] = {nn::bce_loss(t, out.p, y_seizure), nn::cce_loss(t, out.q, y_patient)};
  const double weights[] = {lambda, 1.0 - lambda};
  return nn::weighted_sum(t, terms, weights);
}

Model::Prediction Model1::predict(Tape& t, const Tensor& batch, bool training, nn::Rng& rng) {
  const auto out = forward(t, batch, training, rng);
  return {out.p, out.e};
}

void Model1::apply_constraints() {
  for (std::size_t i = 0; i < arch_.blocks.size(); ++i) {
    nn::maxnorm_project(params_.get("conv" + std::to_string(i + 1) + ".kernel").value, arch_.maxnorm);
  }
}

std::unique_ptr<Model> Model1::clone() const {
  auto m = std::make_unique<Model1>(arch_, geometry_, seed_);
  m->copy_parameters_from(*this);
  return m;
}

Model2::Model2(Model2Architecture arch, InputGeometry geometry, std::uint64_t seed)
    : Model(seed), arch_(std::move(arch)), geometry_(geometry) {
  if (arch_.stem_kernels.empty()) throw ConfigError("model2 needs at least one stem");
  nn::Rng rng(seed);
  const std::size_t c = geometry_.channels;
  for (std::size_t i = 0; i < arch_.stem_kernels.size(); ++i) {
    const auto [kh, kw] = arch_.stem_kernels[i];
    auto& k = params_.add("stem" + std::to_string(i + 1) + ".kernel", {arch_.stem_filters, c, kh, kw});
    nn::glorot_uniform(k.value, c * kh * kw, arch_.stem_filters * kh * kw, rng);
    params_.add("stem" + std::to_string(i + 1) + ".bias", {arch_.stem_filters});
  }
  const std::size_t cat = arch_.stem_filters * arch_.stem_kernels.size();
  auto& bk = params_.add("block.kernel", {arch_.block_filters, cat, arch_.block_kh, arch_.block_kw});
  nn::glorot_uniform(bk.value, cat * arch_.block_kh * arch_.block_kw,
                     arch_.block_filters * arch_.block_kh * arch_.block_kw, rng);
  params_.add("block.bias", {arch_.block_filters});
  const std::size_t h = geometry_.height / arch_.pool_h;
  const std::size_t w = geometry_.width / arch_.pool_w;
  if (h == 0 || w == 0) throw ConfigError("model2 pooling collapses the input geometry");
  flatten_size_ = arch_.block_filters * h * w;
  auto& de = params_.add("embed.weight", {arch_.embedding, flatten_size_});
  nn::glorot_uniform(de.value, flatten_size_, arch_.embedding, rng);
  // Start pair distances inside the margin; at full Glorot scale the d^2 pull
  // dominates the first steps and can silence a whole subject's activations.
  for (double& v : de.value.values()) v *= arch_.embed_init_scale;
  params_.add("embed.bias", {arch_.embedding});
  auto& c1 = params_.add("classifier.hidden.weight", {arch_.classifier_hidden, arch_.embedding});
  nn::glorot_uniform(c1.value, arch_.embedding, arch_.classifier_hidden, rng);
  params_.add("classifier.hidden.bias", {arch_.classifier_hidden});
  auto& c2 = params_.add("classifier.out.weight", {1, arch_.classifier_hidden});
  nn::glorot_uniform(c2.value, arch_.classifier_hidden, 1, rng);
  params_.add("classifier.out.bias", {1});
}

Var Model2::encode(Tape& t, Var x, bool training, nn::Rng& rng) {
  std::vector<Var> stems;
  for (std::size_t i = 0; i < arch_.stem_kernels.size(); ++i) {
    const auto [kh, kw] = arch_.stem_kernels[i];
    const std::string n = "stem" + std::to_string(i + 1);
    stems.push_back(nn::relu(t, nn::conv2d(t, x, t.parameter(params_.get(n + ".kernel")),
                                           t.parameter(params_.get(n + ".bias")), nn::Conv2dOptions::same(kh, kw))));
  }
  Var h = nn::concat(t, stems);
  h = nn::relu(t, nn::conv2d(t, h, t.parameter(params_.get("block.kernel")), t.parameter(params_.get("block.bias")),
                             nn::Conv2dOptions::same(arch_.block_kh, arch_.block_kw)));
  // Single dropout, after pooling: dropout upstream of relu/max-pool makes
  // train-mode activations run hotter than eval mode.
  h = nn::max_pool2d(t, h, arch_.pool_h, arch_.pool_w);
  h = nn::dropout(t, h, arch_.dropout, rng, training);
  h = nn::flatten(t, h);
  return nn::dense(t, h, t.parameter(params_.get("embed.weight")), t.parameter(params_.get("embed.bias")));
}

Var Model2::classify(Tape& t, Var embedding) {
  Var h = nn::relu(t, nn::dense(t, embedding, t.parameter(params_.get("classifier.hidden.weight")),
                                t.parameter(params_.get("classifier.hidden.bias"))));
  Var z = nn::dense(t, h, t.parameter(params_.get("classifier.out.weight")),
                    t.parameter(params_.get("classifier.out.bias")));
  return nn::sigmoid(t, nn::flatten(t, z));
}

Model2::PairOutputs Model2::forward(Tape& t, const Tensor& xa, const Tensor& xb, bool training, nn::Rng& rng) {
  if (xa.dim(0) != xb.dim(0)) throw std::invalid_argument("paired batches differ in size");
  Var ea = encode(t, t.constant(prepare_input(xa)), training, rng);
  Var eb = encode(t, t.constant(prepare_input(xb)), training, rng);
  Var d = nn::l2_distance(t, ea, eb);
  Var p = classify(t, ea);
  return {ea, eb, d, p};
}

Var Model2::loss(Tape& t, const PairOutputs& out, std::span<const int> same, std::span<const double> y_seizure,
                 double gamma) {
  if (gamma < 0.0 || gamma > 1.0) throw ConfigError("gamma must be in [0, 1]");
  const Var terms[] = {nn::contrastive_loss(t, out.d, same, arch_.margin), nn::bce_loss(t, out.p, y_seizure)};
  const double weights[] = {gamma, 1.0 - gamma};
  return nn::weighted_sum(t, terms, weights);
}

Model::Prediction Model2::predict(Tape& t, const Tensor& batch, bool training, nn::Rng& rng) {
  Var e = encode(t, t.constant(prepare_input(batch)), training, rng);
  return {classify(t, e), e};
}

std::unique_ptr<Model> Model2::clone() const {
  auto m = std::make_unique<Model2>(arch_, geometry_, seed_);
  m->copy_parameters_from(*this);
  return m;
}

}  // namespace seizurecast
