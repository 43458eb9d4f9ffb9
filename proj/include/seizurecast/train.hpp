#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "seizurecast/dataset.hpp"
#include "seizurecast/metrics.hpp"
#include "seizurecast/mfcc.hpp"
#include "seizurecast/models.hpp"
#include "seizurecast/random.hpp"

namespace seizurecast {

// MFCC maps with the per-window labels they came from. Maps share one shape.
struct FeatureSet {
  std::vector<Tensor> maps;  // each [C x coeffs x frames]
  std::vector<int> labels;
  std::vector<int> subjects;
  std::vector<WindowSource> sources;

  std::size_t size() const { return maps.size(); }
  InputGeometry geometry() const;
  void push_back(Tensor map, int label, int subject, WindowSource source);
  // [B x C x H x W] batch of the selected maps.
  Tensor batch(std::span<const std::size_t> idx) const;
  FeatureSet subset(std::span<const std::size_t> idx) const;
};

FeatureSet featurize(const Dataset& dataset, const MfccConfig& cfg, double fs);

struct TrainConfig {
  std::size_t epochs = 200;
  std::size_t batch = 600;
  double lr = 0.001;
  std::uint64_t seed = 0;
  ModelKind model = ModelKind::kModel2;
  double lambda = 0.9;  // Model I loss mix
  double gamma = 0.6;   // Model II loss mix
  std::optional<std::size_t> finetune_batch;  // overrides the size-based map

  void validate() const;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double loss = 0.0;      // sample-weighted mean over the epoch
  double accuracy = 0.0;  // training-mode predictions at threshold 0.5
  double contrastive = 0.0;  // mean contrastive term, Model II pair training only
  std::uint64_t steps = 0;   // cumulative optimizer steps
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::uint64_t steps = 0;
};

using ModelFactory = std::function<std::unique_ptr<Model>(std::uint64_t seed)>;

std::unique_ptr<Model> make_model(ModelKind kind, InputGeometry geometry, std::uint64_t seed);
ModelFactory default_factory(ModelKind kind, InputGeometry geometry);

// Per-coefficient mean and standard deviation over the windows `idx`, set as
// the model's input standardization. A constant coefficient gets scale 1.
void fit_input_norm(Model& model, const FeatureSet& features, std::span<const std::size_t> idx);

// Trains on the windows `idx`, fitting the input standardization on them
// first unless the model already carries one (fine-tuning keeps its own). Model I uses its combined loss; Model II mines
// a pair stream over `idx` and uses the pair loss, except with gamma = 0
// where the contrastive term vanishes and it trains on single windows.
// A non-finite loss raises NumericError before any parameter update.
TrainHistory train(Model& model, const FeatureSet& features, std::span<const std::size_t> idx,
                   const TrainConfig& cfg);

// Model II on an explicit pair stream whose indices refer to `features`; the
// input standardization is fitted on the primaries when missing.
TrainHistory train_pairs(Model2& model, const FeatureSet& features, const PairStream& pairs,
                         const TrainConfig& cfg);

// Eval-mode pre-ictal probabilities in `idx` order.
std::vector<double> predict_scores(Model& model, const FeatureSet& features, std::span<const std::size_t> idx,
                                   std::size_t batch = 64);

Metrics evaluate(Model& model, const FeatureSet& features, std::span<const std::size_t> idx,
                 double threshold = 0.5);

struct CrossValResult {
  FoldPlan plan;
  std::vector<Metrics> folds;
  MetricSummary summary;
};

// Window-level folds from cfg.seed; fold f trains a fresh model from the
// factory with derive_seed(cfg.seed, 100 + f).
CrossValResult cross_validate(const FeatureSet& features, const TrainConfig& cfg, std::size_t k,
                              const ModelFactory& factory);

struct SweepRow {
  double duration_mins = 0.0;
  double overlap = 0.0;
  std::size_t windows = 0;
  CrossValResult cv;
};

// Rebuilds the balanced dataset for each pre-ictal duration with its overlap
// and cross-validates.
std::vector<SweepRow> duration_sweep(std::span<const EegRecording> recordings, const LabelPolicy& base,
                                     std::span<const double> durations_mins, std::span<const double> overlaps,
                                     const MfccConfig& mfcc, const TrainConfig& cfg, std::size_t k,
                                     const ModelFactory& factory);

inline constexpr std::size_t kAllSamples = 0;

struct TransferConfig {
  std::vector<std::size_t> n_values = {100, 1000, 2000, kAllSamples};
  double validation_fraction = 0.2;
};

// 100:10, 1000:100, 2000:200 and 400 for "all"; other sizes use n / 10
// clamped to [1, 400]. An explicit override wins.
std::size_t finetune_batch_size(std::size_t n, bool all, std::optional<std::size_t> override_batch = {});

// Continues training `model` on `train_idx` (Model II with gamma forced to 0,
// since every window belongs to one subject) and evaluates on `val_idx`.
Metrics fine_tune(Model& model, const FeatureSet& features, std::span<const std::size_t> train_idx,
                  std::span<const std::size_t> val_idx, const TrainConfig& cfg);

struct FineTuneRecord {
  std::size_t requested = 0;  // kAllSamples for "all"
  std::size_t used = 0;
  std::size_t batch = 0;
  Metrics metrics;
};

struct TransferResult {
  int subject = 0;
  Metrics lopo;
  std::vector<FineTuneRecord> fine_tuned;
  std::vector<std::size_t> validation;  // feature indices, fixed for every n
  std::vector<std::string> warnings;
};

// Leave-one-subject-out pretraining followed by fine-tuning on the first n of
// a seeded ordering of the subject's non-validation windows.
TransferResult run_transfer(const FeatureSet& features, int subject, const TrainConfig& cfg,
                            const TransferConfig& tcfg, const ModelFactory& factory);

}  // namespace seizurecast
