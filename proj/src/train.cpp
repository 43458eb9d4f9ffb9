#include "seizurecast/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "seizurecast/error.hpp"
#include "seizurecast/optim.hpp"

namespace seizurecast {

namespace {

std::vector<std::size_t> iota_indices(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

void check_indices(const FeatureSet& f, std::span<const std::size_t> idx) {
  for (std::size_t i : idx) {
    if (i >= f.size()) throw std::out_of_range("feature index " + std::to_string(i) + " out of range");
  }
}

void check_loss(double loss, std::size_t epoch, std::size_t batch) {
  if (!std::isfinite(loss)) {
    std::ostringstream os;
    os << "non-finite loss " << loss << " at epoch " << epoch << ", batch " << batch << "; training aborted";
    throw NumericError(os.str());
  }
}

std::vector<double> seizure_targets(const FeatureSet& f, std::span<const std::size_t> idx) {
  std::vector<double> y;
  y.reserve(idx.size());
  for (std::size_t i : idx) y.push_back(static_cast<double>(f.labels[i]));
  return y;
}

std::size_t count_correct(const Tensor& p, std::span<const double> y) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < y.size(); ++i) n += ((p[i] >= 0.5) == (y[i] > 0.5));
  return n;
}

// Shared epoch/batch loop. `step` runs forward + backward for one batch of
// positions into `items` and returns (summed loss, correct, summed contrastive).
struct BatchStats {
  double loss = 0.0;
  std::size_t correct = 0;
  double contrastive = 0.0;
};

template <typename Step>
TrainHistory run_epochs(Model& model, std::size_t n_items, const TrainConfig& cfg, Step step) {
  cfg.validate();
  if (n_items == 0) throw std::invalid_argument("training set is empty");
  nn::Adam adam(model.params(), nn::AdamConfig{cfg.lr});
  nn::Rng shuffle_rng(derive_seed(cfg.seed, 1));
  nn::Rng dropout_rng(derive_seed(cfg.seed, 2));
  auto order = iota_indices(n_items);
  TrainHistory h;
  for (std::size_t e = 1; e <= cfg.epochs; ++e) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    BatchStats total;
    for (std::size_t b = 0, bi = 0; b < n_items; b += cfg.batch, ++bi) {
      const std::span<const std::size_t> items(order.data() + b, std::min(cfg.batch, n_items - b));
      model.params().zero_grad();
      const BatchStats s = step(items, dropout_rng, e, bi);
      adam.step();
      model.apply_constraints();
      total.loss += s.loss;
      total.correct += s.correct;
      total.contrastive += s.contrastive;
    }
    const auto n = static_cast<double>(n_items);
    h.epochs.push_back({e, total.loss / n, static_cast<double>(total.correct) / n, total.contrastive / n, adam.steps()});
  }
  h.steps = adam.steps();
  return h;
}

TrainHistory train_model1(Model1& m, const FeatureSet& f, std::span<const std::size_t> idx, const TrainConfig& cfg) {
  for (std::size_t i : idx) {
    const int s = f.subjects[i];
    if (s < 1 || static_cast<std::size_t>(s) > m.architecture().patients) {
      throw ConfigError("subject " + std::to_string(s) + " is outside the patient head range 1.." +
                        std::to_string(m.architecture().patients));
    }
  }
  return run_epochs(m, idx.size(), cfg, [&](std::span<const std::size_t> items, nn::Rng& rng, std::size_t e,
                                             std::size_t bi) {
    std::vector<std::size_t> sel;
    for (std::size_t k : items) sel.push_back(idx[k]);
    const auto y = seizure_targets(f, sel);
    std::vector<int> yp;
    for (std::size_t i : sel) yp.push_back(f.subjects[i] - 1);
    nn::Tape t;
    const auto out = m.forward(t, f.batch(sel), true, rng);
    const nn::Var loss = m.loss(t, out, y, yp, cfg.lambda);
    const double lv = t.value(loss)[0];
    check_loss(lv, e, bi);
    t.backward(loss);
    const auto b = static_cast<double>(sel.size());
    return BatchStats{lv * b, count_correct(t.value(out.p), y), 0.0};
  });
}

// Single-window BCE training of the Model II classification branch.
TrainHistory train_model2_single(Model2& m, const FeatureSet& f, std::span<const std::size_t> idx,
                                 const TrainConfig& cfg) {
  return run_epochs(m, idx.size(), cfg, [&](std::span<const std::size_t> items, nn::Rng& rng, std::size_t e,
                                             std::size_t bi) {
    std::vector<std::size_t> sel;
    for (std::size_t k : items) sel.push_back(idx[k]);
    const auto y = seizure_targets(f, sel);
    nn::Tape t;
    const auto pred = m.predict(t, f.batch(sel), true, rng);
    const nn::Var loss = nn::bce_loss(t, pred.p, y);
    const double lv = t.value(loss)[0];
    check_loss(lv, e, bi);
    t.backward(loss);
    return BatchStats{lv * static_cast<double>(sel.size()), count_correct(t.value(pred.p), y), 0.0};
  });
}

}  // namespace

InputGeometry FeatureSet::geometry() const {
  if (maps.empty()) throw std::logic_error("empty feature set has no geometry");
  const Tensor& m = maps.front();
  return {m.dim(0), m.dim(1), m.dim(2)};
}

void FeatureSet::push_back(Tensor map, int label, int subject, WindowSource source) {
  if (map.rank() != 3) throw std::invalid_argument("feature maps must be [C x H x W]");
  if (!maps.empty() && map.shape() != maps.front().shape()) {
    throw std::invalid_argument("feature map " + shape_string(map.shape()) + " differs from " +
                                shape_string(maps.front().shape()));
  }
  if (label != kInterictal && label != kPreictal) throw std::invalid_argument("label must be 0 or 1");
  maps.push_back(std::move(map));
  labels.push_back(label);
  subjects.push_back(subject);
  sources.push_back(std::move(source));
}

Tensor FeatureSet::batch(std::span<const std::size_t> idx) const {
  check_indices(*this, idx);
  std::vector<const Tensor*> items;
  items.reserve(idx.size());
  for (std::size_t i : idx) items.push_back(&maps[i]);
  return stack(items);
}

FeatureSet FeatureSet::subset(std::span<const std::size_t> idx) const {
  check_indices(*this, idx);
  FeatureSet out;
  for (std::size_t i : idx) out.push_back(maps[i], labels[i], subjects[i], sources[i]);
  return out;
}

FeatureSet featurize(const Dataset& dataset, const MfccConfig& cfg, double fs) {
  const MfccExtractor mfcc(cfg, fs);
  FeatureSet out;
  for (const auto& w : dataset.windows) out.push_back(mfcc.compute(w.samples), w.label, w.subject_id, w.source);
  return out;
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (!(lr > 0)) throw ConfigError("learning rate must be positive");
  if (lambda < 0 || lambda > 1) throw ConfigError("lambda must be in [0, 1]");
  if (gamma < 0 || gamma > 1) throw ConfigError("gamma must be in [0, 1]");
  if (finetune_batch && *finetune_batch < 1) throw ConfigError("fine-tune batch must be >= 1");
}

std::unique_ptr<Model> make_model(ModelKind kind, InputGeometry geometry, std::uint64_t seed) {
  if (kind == ModelKind::kModel1) return std::make_unique<Model1>(Model1Architecture{}, geometry, seed);
  return std::make_unique<Model2>(Model2Architecture{}, geometry, seed);
}

ModelFactory default_factory(ModelKind kind, InputGeometry geometry) {
  return [kind, geometry](std::uint64_t seed) { return make_model(kind, geometry, seed); };
}

void fit_input_norm(Model& model, const FeatureSet& features, std::span<const std::size_t> idx) {
  check_indices(features, idx);
  if (idx.empty()) throw std::invalid_argument("input normalization needs at least one window");
  const auto g = model.geometry();
  std::vector<double> sum(g.height, 0.0), sq(g.height, 0.0);
  double count = 0;
  for (std::size_t i : idx) {
    const Tensor& m = features.maps[i];
    if (m.shape() != Shape{g.channels, g.height, g.width}) throw std::invalid_argument("feature map shape mismatch");
    for (std::size_t c = 0; c < g.channels; ++c) {
      for (std::size_t k = 0; k < g.height; ++k) {
        for (std::size_t j = 0; j < g.width; ++j) {
          const double v = m.at(c, k, j);
          sum[k] += v;
          sq[k] += v * v;
        }
      }
    }
    count += static_cast<double>(g.channels * g.width);
  }
  std::vector<double> mean(g.height), scale(g.height);
  for (std::size_t k = 0; k < g.height; ++k) {
    mean[k] = sum[k] / count;
    const double var = std::max(sq[k] / count - mean[k] * mean[k], 0.0);
    scale[k] = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
  for (std::size_t k = 0; k < g.height; ++k) {
    if (!std::isfinite(mean[k]) || !std::isfinite(scale[k])) {
      throw NumericError("non-finite feature values in coefficient " + std::to_string(k) +
                         " while fitting the input normalization");
    }
  }
  model.set_input_norm(std::move(mean), std::move(scale));
}

TrainHistory train(Model& model, const FeatureSet& features, std::span<const std::size_t> idx,
                   const TrainConfig& cfg) {
  check_indices(features, idx);
  if (!model.has_input_norm()) fit_input_norm(model, features, idx);
  if (auto* m1 = dynamic_cast<Model1*>(&model)) return train_model1(*m1, features, idx, cfg);
  auto& m2 = dynamic_cast<Model2&>(model);
  if (cfg.gamma == 0.0) return train_model2_single(m2, features, idx, cfg);
  std::vector<int> subjects;
  subjects.reserve(idx.size());
  for (std::size_t i : idx) subjects.push_back(features.subjects[i]);
  PairStream pairs = mine_pairs(subjects, derive_seed(cfg.seed, 3));
  for (auto& p : pairs.pairs) {
    p.primary = idx[p.primary];
    p.secondary = idx[p.secondary];
  }
  return train_pairs(m2, features, pairs, cfg);
}

TrainHistory train_pairs(Model2& model, const FeatureSet& features, const PairStream& pairs,
                         const TrainConfig& cfg) {
  if (!model.has_input_norm()) {
    std::vector<std::size_t> primaries;
    for (const auto& p : pairs.pairs) primaries.push_back(p.primary);
    fit_input_norm(model, features, primaries);
  }
  const double margin = model.architecture().margin;
  return run_epochs(model, pairs.size(), cfg, [&](std::span<const std::size_t> items, nn::Rng& rng, std::size_t e,
                                                  std::size_t bi) {
    std::vector<std::size_t> a, b;
    std::vector<int> same;
    for (std::size_t k : items) {
      const auto& p = pairs.pairs[k];
      a.push_back(p.primary);
      b.push_back(p.secondary);
      same.push_back(p.same_patient);
    }
    const auto y = seizure_targets(features, a);
    nn::Tape t;
    const auto out = model.forward(t, features.batch(a), features.batch(b), true, rng);
    const nn::Var loss = model.loss(t, out, same, y, cfg.gamma);
    const double lv = t.value(loss)[0];
    check_loss(lv, e, bi);
    t.backward(loss);
    double cons = 0.0;
    const Tensor& d = t.value(out.d);
    for (std::size_t i = 0; i < same.size(); ++i) cons += nn::contrastive(d[i], same[i], margin);
    return BatchStats{lv * static_cast<double>(a.size()), count_correct(t.value(out.p), y), cons};
  });
}

std::vector<double> predict_scores(Model& model, const FeatureSet& features, std::span<const std::size_t> idx,
                                   std::size_t batch) {
  if (batch < 1) throw std::invalid_argument("batch must be >= 1");
  std::vector<double> out;
  out.reserve(idx.size());
  for (std::size_t b = 0; b < idx.size(); b += batch) {
    const auto part = idx.subspan(b, std::min(batch, idx.size() - b));
    const auto p = model.predict_proba(features.batch(part));
    for (double v : p) {
      if (!std::isfinite(v)) throw NumericError("model produced a non-finite probability");
      out.push_back(v);
    }
  }
  return out;
}

Metrics evaluate(Model& model, const FeatureSet& features, std::span<const std::size_t> idx, double threshold) {
  const auto scores = predict_scores(model, features, idx);
  std::vector<int> labels;
  labels.reserve(idx.size());
  for (std::size_t i : idx) labels.push_back(features.labels[i]);
  return compute_metrics(scores, labels, threshold);
}

CrossValResult cross_validate(const FeatureSet& features, const TrainConfig& cfg, std::size_t k,
                              const ModelFactory& factory) {
  cfg.validate();
  CrossValResult r;
  r.plan = make_folds(features.size(), k, cfg.seed);
  for (std::size_t f = 0; f < k; ++f) {
    const auto train_idx = r.plan.train_indices(f);
    const auto test_idx = r.plan.fold_indices(f);
    auto model = factory(derive_seed(cfg.seed, 100 + f));
    TrainConfig fold_cfg = cfg;
    fold_cfg.seed = derive_seed(cfg.seed, 200 + f);
    train(*model, features, train_idx, fold_cfg);
    r.folds.push_back(evaluate(*model, features, test_idx));
  }
  r.summary = summarize(r.folds);
  return r;
}

std::vector<SweepRow> duration_sweep(std::span<const EegRecording> recordings, const LabelPolicy& base,
                                     std::span<const double> durations_mins, std::span<const double> overlaps,
                                     const MfccConfig& mfcc, const TrainConfig& cfg, std::size_t k,
                                     const ModelFactory& factory) {
  if (durations_mins.size() != overlaps.size()) throw ConfigError("sweep needs one overlap per duration");
  if (recordings.empty()) throw ConfigError("sweep needs recordings");
  std::vector<SweepRow> rows;
  for (std::size_t i = 0; i < durations_mins.size(); ++i) {
    if (!(durations_mins[i] > 0) || durations_mins[i] > 60.0) {
      throw ConfigError("sweep durations must be in (0, 60] minutes");
    }
    LabelPolicy policy = base;
    policy.preictal_horizon = durations_mins[i] * 60.0;
    policy.preictal_overlap = overlaps[i];
    policy.validate();
    const Dataset ds = build_balanced_dataset(recordings, policy, cfg.seed);
    const FeatureSet fs = featurize(ds, mfcc, recordings.front().fs);
    rows.push_back({durations_mins[i], overlaps[i], fs.size(), cross_validate(fs, cfg, k, factory)});
  }
  return rows;
}

std::size_t finetune_batch_size(std::size_t n, bool all, std::optional<std::size_t> override_batch) {
  if (override_batch) return *override_batch;
  if (all) return 400;
  return std::clamp<std::size_t>(n / 10, 1, 400);
}

Metrics fine_tune(Model& model, const FeatureSet& features, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, const TrainConfig& cfg) {
  for (std::size_t i : train_idx) {
    if (std::find(val_idx.begin(), val_idx.end(), i) != val_idx.end()) {
      throw std::invalid_argument("fine-tuning window " + std::to_string(i) + " is also a validation window");
    }
  }
  TrainConfig c = cfg;
  if (model.kind() == ModelKind::kModel2) c.gamma = 0.0;
  train(model, features, train_idx, c);
  return evaluate(model, features, val_idx);
}

TransferResult run_transfer(const FeatureSet& features, int subject, const TrainConfig& cfg,
                            const TransferConfig& tcfg, const ModelFactory& factory) {
  cfg.validate();
  if (!(tcfg.validation_fraction > 0 && tcfg.validation_fraction < 1)) {
    throw ConfigError("validation fraction must be in (0, 1)");
  }
  TransferResult r;
  r.subject = subject;
  const auto [train_idx, held] = split_lopo_indices(features.subjects, subject);
  if (held.size() < 2) throw ConfigError("subject " + std::to_string(subject) + " needs at least 2 windows");

  // Validation subset first, then a fixed ordering of the remainder.
  std::vector<std::size_t> order = held;
  nn::Rng rng(derive_seed(cfg.seed, 300));
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_val = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(tcfg.validation_fraction * static_cast<double>(held.size()))), 1,
      held.size() - 1);
  r.validation.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::sort(r.validation.begin(), r.validation.end());
  const std::vector<std::size_t> pool(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());

  auto pretrained = factory(derive_seed(cfg.seed, 400));
  train(*pretrained, features, train_idx, cfg);
  r.lopo = evaluate(*pretrained, features, r.validation);

  for (std::size_t n : tcfg.n_values) {
    const bool all = n == kAllSamples || n >= pool.size();
    if (n != kAllSamples && n > pool.size()) {
      r.warnings.push_back("n=" + std::to_string(n) + " exceeds the " + std::to_string(pool.size()) +
                           " available windows of subject " + std::to_string(subject) + "; using all");
    }
    const std::size_t used = all ? pool.size() : n;
    TrainConfig c = cfg;
    c.batch = finetune_batch_size(used, n == kAllSamples, cfg.finetune_batch);
    c.seed = derive_seed(cfg.seed, 500 + used);
    auto model = pretrained->clone();
    const std::span<const std::size_t> part(pool.data(), used);
    r.fine_tuned.push_back({n, used, c.batch, fine_tune(*model, features, part, r.validation, c)});
  }
  return r;
}

}  // namespace seizurecast
