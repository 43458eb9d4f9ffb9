#include "seizurecast/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "seizurecast/error.hpp"
#include "seizurecast/interpret.hpp"
#include "seizurecast/storage.hpp"

namespace seizurecast {

using nlohmann::json;
namespace fs = std::filesystem;

MontageConfig default_montage() {
  return {{"FP1-F7", "F7-T7",  "T7-P7",  "P7-O1",  "FP1-F3",   "F3-C3",    "C3-P3", "P3-O1",
           "FP2-F4", "F4-C4",  "C4-P4",  "P4-O2",  "FP2-F8",   "F8-T8",    "T8-P8", "P8-O2",
           "FZ-CZ",  "CZ-PZ",  "P7-T7",  "T7-FT9", "FT9-FT10", "FT10-T8", "T8-P8"},
          {"-", ".", "ECG", "VNS", "LOC-ROC", "EKG1-CHIN"}};
}

namespace {

json parse_json_text(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

// Copies j[key] into `target` when present; rejects wrong types as config errors.
template <typename T>
void take(const json& j, const char* key, T& target) {
  if (!j.contains(key)) return;
  try {
    target = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  const std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config key '" + k + "' in " + where);
  }
}

std::size_t parse_n_value(const json& v) {
  if (v.is_string() && v.get<std::string>() == "all") return kAllSamples;
  if (v.is_number_unsigned()) return v.get<std::size_t>();
  throw ConfigError("transfer n_values entries must be positive integers or \"all\"");
}

}  // namespace

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  if (!fs::exists(path)) throw ConfigError("manifest not found: " + path.string());
  const json doc = parse_json_text(read_text_file(path), path.string());
  const json& list = doc.is_object() ? doc.at("recordings") : doc;
  if (!list.is_array() || list.empty()) throw ConfigError("manifest must list at least one recording");
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base / p; };
  std::vector<ManifestEntry> out;
  for (const auto& e : list) {
    if (!e.contains("edf_path") || !e.contains("subject_id")) {
      throw ConfigError("manifest entries need edf_path and subject_id");
    }
    ManifestEntry m;
    m.edf_path = resolve(e.at("edf_path").get<std::string>());
    m.subject_id = e.at("subject_id").get<int>();
    if (m.subject_id < 1 || m.subject_id > 24) {
      throw ConfigError("subject_id " + std::to_string(m.subject_id) + " is outside 1..24");
    }
    if (e.contains("summary_path") && !e.at("summary_path").is_null()) {
      m.summary_path = resolve(e.at("summary_path").get<std::string>());
    }
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<EegRecording> load_recordings(std::span<const ManifestEntry> entries, const MontageConfig& montage,
                                          std::vector<std::string>* warnings) {
  std::map<fs::path, std::vector<SeizureAnnotations>> summaries;
  std::vector<EegRecording> out;
  for (const auto& e : entries) {
    SeizureAnnotations ann;
    ann.file_name = e.edf_path.filename().string();
    if (e.summary_path) {
      auto it = summaries.find(*e.summary_path);
      if (it == summaries.end()) it = summaries.emplace(*e.summary_path, parse_summary(read_text_file(*e.summary_path))).first;
      const auto& blocks = it->second;
      auto match = std::find_if(blocks.begin(), blocks.end(),
                                [&](const SeizureAnnotations& a) { return a.file_name == ann.file_name; });
      if (match == blocks.end()) {
        throw ParseError(e.summary_path->string() + " has no block for " + ann.file_name);
      }
      ann = *match;
    }
    std::size_t clamped = 0;
    out.push_back(load_recording(e.edf_path, e.subject_id, ann, montage, &clamped));
    if (clamped && warnings) {
      warnings->push_back(ann.file_name + ": " + std::to_string(clamped) + " out-of-range samples clamped");
    }
  }
  for (const auto& r : out) {
    if (r.fs != out.front().fs) throw ParseError("recordings have different sampling rates");
  }
  return out;
}

std::string RunConfig::to_json() const {
  json j;
  j["manifest"] = manifest ? manifest->generic_string() : "";
  j["seed"] = seed;
  j["k"] = k;
  j["montage"] = {{"canonical_labels", montage.canonical_labels}, {"ignore_labels", montage.ignore_labels}};
  j["label_policy"] = {{"preictal_horizon", policy.preictal_horizon},
                       {"interictal_exclusion", policy.interictal_exclusion},
                       {"window_len", policy.window_len},
                       {"preictal_overlap", policy.preictal_overlap},
                       {"interictal_overlap", policy.interictal_overlap}};
  j["mfcc"] = {{"n_banks", mfcc.n_banks},     {"n_coeffs", mfcc.n_coeffs},   {"fmin", mfcc.fmin},
               {"fmax", mfcc.fmax},           {"frame_len", mfcc.frame_len}, {"hop", mfcc.hop},
               {"fft_size", mfcc.fft_size},   {"preemphasis", mfcc.preemphasis}, {"log_floor", mfcc.log_floor}};
  j["train"] = {{"epochs", train.epochs}, {"batch", train.batch},   {"lr", train.lr},
                {"model", to_string(train.model)}, {"lambda", train.lambda}, {"gamma", train.gamma}};
  j["train"]["finetune_batch"] = train.finetune_batch ? json(*train.finetune_batch) : json(nullptr);
  json ns = json::array();
  for (auto n : transfer.n_values) ns.push_back(n == kAllSamples ? json("all") : json(n));
  j["transfer"] = {{"n_values", ns}, {"validation_fraction", transfer.validation_fraction}};
  j["interpret"] = {{"n_samples", interpret.n_samples}, {"smooth_len", interpret.smooth_len},
                    {"threshold", interpret.threshold}, {"bins", interpret.bins},
                    {"baseline", interpret.baseline}};
  j["sweep"] = {{"durations_mins", sweep.durations_mins}, {"overlaps", sweep.overlaps}};
  return j.dump(2);
}

void apply_config_json(RunConfig& cfg, const std::string& text) {
  const json j = parse_json_text(text, "config");
  reject_unknown(j, {"manifest", "out", "seed", "k", "montage", "label_policy", "mfcc", "train", "transfer",
                     "interpret", "sweep"},
                 "config");
  if (j.contains("manifest")) cfg.manifest = j.at("manifest").get<std::string>();
  if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
  take(j, "seed", cfg.seed);
  take(j, "k", cfg.k);
  if (j.contains("montage")) {
    const auto& m = j.at("montage");
    reject_unknown(m, {"canonical_labels", "ignore_labels"}, "montage");
    take(m, "canonical_labels", cfg.montage.canonical_labels);
    take(m, "ignore_labels", cfg.montage.ignore_labels);
  }
  if (j.contains("label_policy")) {
    const auto& p = j.at("label_policy");
    reject_unknown(p, {"preictal_horizon", "interictal_exclusion", "window_len", "preictal_overlap",
                       "interictal_overlap"},
                   "label_policy");
    take(p, "preictal_horizon", cfg.policy.preictal_horizon);
    take(p, "interictal_exclusion", cfg.policy.interictal_exclusion);
    take(p, "window_len", cfg.policy.window_len);
    take(p, "preictal_overlap", cfg.policy.preictal_overlap);
    take(p, "interictal_overlap", cfg.policy.interictal_overlap);
  }
  if (j.contains("mfcc")) {
    const auto& m = j.at("mfcc");
    reject_unknown(m, {"n_banks", "n_coeffs", "fmin", "fmax", "frame_len", "hop", "fft_size", "preemphasis",
                       "log_floor"},
                   "mfcc");
    take(m, "n_banks", cfg.mfcc.n_banks);
    take(m, "n_coeffs", cfg.mfcc.n_coeffs);
    take(m, "fmin", cfg.mfcc.fmin);
    take(m, "fmax", cfg.mfcc.fmax);
    take(m, "frame_len", cfg.mfcc.frame_len);
    take(m, "hop", cfg.mfcc.hop);
    take(m, "fft_size", cfg.mfcc.fft_size);
    take(m, "preemphasis", cfg.mfcc.preemphasis);
    take(m, "log_floor", cfg.mfcc.log_floor);
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    reject_unknown(t, {"epochs", "batch", "lr", "model", "lambda", "gamma", "finetune_batch"}, "train");
    take(t, "epochs", cfg.train.epochs);
    take(t, "batch", cfg.train.batch);
    take(t, "lr", cfg.train.lr);
    take(t, "lambda", cfg.train.lambda);
    take(t, "gamma", cfg.train.gamma);
    if (t.contains("model")) cfg.train.model = parse_model_kind(t.at("model").get<std::string>());
    if (t.contains("finetune_batch") && !t.at("finetune_batch").is_null()) {
      cfg.train.finetune_batch = t.at("finetune_batch").get<std::size_t>();
    }
  }
  if (j.contains("transfer")) {
    const auto& t = j.at("transfer");
    reject_unknown(t, {"n_values", "validation_fraction"}, "transfer");
    if (t.contains("n_values")) {
      cfg.transfer.n_values.clear();
      for (const auto& v : t.at("n_values")) cfg.transfer.n_values.push_back(parse_n_value(v));
    }
    take(t, "validation_fraction", cfg.transfer.validation_fraction);
  }
  if (j.contains("interpret")) {
    const auto& s = j.at("interpret");
    reject_unknown(s, {"n_samples", "smooth_len", "threshold", "bins", "baseline"}, "interpret");
    take(s, "n_samples", cfg.interpret.n_samples);
    take(s, "smooth_len", cfg.interpret.smooth_len);
    take(s, "threshold", cfg.interpret.threshold);
    take(s, "bins", cfg.interpret.bins);
    take(s, "baseline", cfg.interpret.baseline);
  }
  if (j.contains("sweep")) {
    const auto& s = j.at("sweep");
    reject_unknown(s, {"durations_mins", "overlaps"}, "sweep");
    take(s, "durations_mins", cfg.sweep.durations_mins);
    take(s, "overlaps", cfg.sweep.overlaps);
  }
}

namespace {

struct Flags {
  std::string manifest, config, out, model, checkpoint, recording, features;
  std::optional<std::uint64_t> seed;
  std::optional<double> lambda, gamma, threshold;
  std::optional<std::size_t> k, n_samples, smooth_len, bins, epochs, batch;
  std::optional<int> subject;
  std::vector<double> durations;
};

// Files read and written by one run, hashed into the run manifest.
struct Run {
  std::string command;
  RunConfig cfg;
  std::vector<fs::path> inputs;
  std::vector<fs::path> outputs;
  std::vector<std::string> warnings;
  std::ostream* log = nullptr;

  fs::path out(const std::string& name) {
    fs::path p = cfg.out / name;
    outputs.push_back(p);
    return p;
  }
};

double default_overlap(double mins) {
  if (mins == 15) return 3.5;
  if (mins == 30) return 2.5;
  return 2.0;
}

RunConfig resolve_config(const Flags& f) {
  RunConfig cfg;
  if (!f.config.empty()) {
    if (!fs::exists(f.config)) throw ConfigError("config file not found: " + f.config);
    apply_config_json(cfg, read_text_file(f.config));
  }
  if (!f.manifest.empty()) cfg.manifest = f.manifest;
  if (!f.out.empty()) cfg.out = f.out;
  if (const char* env = std::getenv("SEIZURECAST_OUT"); env && *env) cfg.out = env;
  if (f.seed) cfg.seed = *f.seed;
  if (f.k) cfg.k = *f.k;
  if (!f.model.empty()) cfg.train.model = parse_model_kind(f.model);
  if (f.lambda) cfg.train.lambda = *f.lambda;
  if (f.gamma) cfg.train.gamma = *f.gamma;
  if (f.epochs) cfg.train.epochs = *f.epochs;
  if (f.batch) cfg.train.batch = *f.batch;
  if (f.n_samples) cfg.interpret.n_samples = *f.n_samples;
  if (f.smooth_len) cfg.interpret.smooth_len = *f.smooth_len;
  if (f.threshold) cfg.interpret.threshold = *f.threshold;
  if (f.bins) cfg.interpret.bins = *f.bins;
  if (!f.durations.empty()) {
    cfg.sweep.durations_mins = f.durations;
    cfg.sweep.overlaps.clear();
    for (double d : f.durations) cfg.sweep.overlaps.push_back(default_overlap(d));
  }
  cfg.train.seed = cfg.seed;
  cfg.policy.validate();
  cfg.train.validate();
  if (cfg.interpret.baseline != "mean" && cfg.interpret.baseline != "zeros") {
    throw ConfigError("interpret baseline must be \"mean\" or \"zeros\"");
  }
  if (cfg.interpret.bins < 1) throw ConfigError("bins must be >= 1");
  return cfg;
}

std::vector<EegRecording> manifest_recordings(Run& run) {
  if (!run.cfg.manifest) throw ConfigError(run.command + " needs --manifest");
  const auto entries = read_manifest(*run.cfg.manifest);
  run.inputs.push_back(*run.cfg.manifest);
  std::set<fs::path> summaries;
  for (const auto& e : entries) {
    run.inputs.push_back(e.edf_path);
    if (e.summary_path && summaries.insert(*e.summary_path).second) run.inputs.push_back(*e.summary_path);
  }
  return load_recordings(entries, run.cfg.montage, &run.warnings);
}

Dataset manifest_dataset(Run& run, std::span<const EegRecording> recs) {
  Dataset ds = build_balanced_dataset(recs, run.cfg.policy, run.cfg.seed);
  for (const auto& w : ds.warnings) run.warnings.push_back(w);
  return ds;
}

FeatureSet load_features(Run& run, const Flags& f) {
  if (!f.features.empty()) {
    for (const char* ext : {".json", ".bin"}) run.inputs.push_back(fs::path(f.features).concat(ext));
    return load_feature_cache(f.features);
  }
  const auto recs = manifest_recordings(run);
  return featurize(manifest_dataset(run, recs), run.cfg.mfcc, recs.front().fs);
}

std::unique_ptr<Model> load_model(Run& run, const Flags& f) {
  if (f.checkpoint.empty()) throw ConfigError(run.command + " needs --checkpoint");
  if (!fs::exists(f.checkpoint)) throw ConfigError("checkpoint not found: " + f.checkpoint);
  run.inputs.push_back(f.checkpoint);
  return load_checkpoint(f.checkpoint);
}

// Consecutive non-overlapping windows over a whole recording.
struct RecordingWindows {
  std::vector<Tensor> maps;
  std::vector<double> starts;
};

RecordingWindows window_recording(Run& run, const Flags& f) {
  if (f.recording.empty()) throw ConfigError(run.command + " needs --recording");
  if (!fs::exists(f.recording)) throw ConfigError("recording not found: " + f.recording);
  run.inputs.push_back(f.recording);
  SeizureAnnotations none;
  none.file_name = fs::path(f.recording).filename().string();
  const EegRecording rec = load_recording(f.recording, 1, none, run.cfg.montage);
  const double n_exact = rec.fs * run.cfg.policy.window_len;
  const auto n = static_cast<std::size_t>(std::llround(n_exact));
  if (n == 0 || std::abs(n_exact - static_cast<double>(n)) > 1e-9) {
    throw ConfigError("window length does not cover a whole number of samples");
  }
  const MfccExtractor mfcc(run.cfg.mfcc, rec.fs);
  RecordingWindows w;
  for (std::size_t s = 0; s + n <= rec.length(); s += n) {
    w.maps.push_back(mfcc.compute(extract_window(rec, s, n)));
    w.starts.push_back(static_cast<double>(s) / rec.fs);
  }
  if (w.maps.empty()) throw ConfigError("recording is shorter than one window");
  return w;
}

ResultRow row(std::string id, const Metrics& m, std::map<std::string, std::string> extra = {}) {
  return {std::move(id), m, std::move(extra)};
}

void add_summary_rows(std::vector<ResultRow>& rows, const MetricSummary& s, std::map<std::string, std::string> extra) {
  rows.push_back(row("mean", s.mean, extra));
  Metrics sd = s.stddev;
  sd.counts = {};
  rows.push_back(row("std", sd, std::move(extra)));
}

void write_run_manifest(Run& run) {
  const fs::path path = run.cfg.out / "run_manifest.json";
  json j;
  j["command"] = run.command;
  const std::string config = run.cfg.to_json();
  j["config"] = json::parse(config);
  j["config_hash"] = fnv1a_hex(config);
  j["seeds"] = {{"run", run.cfg.seed}, {"train", run.cfg.train.seed}};
  json inputs = json::array();
  for (const auto& p : run.inputs) inputs.push_back({{"path", p.generic_string()}, {"fnv1a", hash_file(p)}});
  j["inputs"] = inputs;
  json outputs = json::array();
  for (const auto& p : run.outputs) {
    outputs.push_back({{"path", p.filename().generic_string()}, {"fnv1a", hash_file(p)}});
  }
  j["outputs"] = outputs;
  j["warnings"] = run.warnings;
  std::ofstream(path, std::ios::trunc) << j.dump(2) << '\n';
}

void cmd_ingest(Run& run) {
  const auto recs = manifest_recordings(run);
  const Dataset ds = manifest_dataset(run, recs);
  std::ostringstream os;
  os << "file,subject,fs,duration,seizures\n";
  for (const auto& r : recs) {
    os << r.annotations.file_name << ',' << r.subject_id << ',' << format_double(r.fs) << ','
       << format_double(r.duration()) << ',' << r.annotations.seizure_intervals.size() << '\n';
  }
  fs::create_directories(run.cfg.out);
  std::ofstream(run.out("recordings.csv"), std::ios::trunc) << os.str();
  save_dataset_cache(run.cfg.out / "dataset", ds);
  for (const char* ext : {".bin", ".json", ".csv"}) run.outputs.push_back(run.cfg.out / (std::string("dataset") + ext));
  *run.log << "windows: " << ds.size() << " (pre-ictal " << ds.class_counts[kPreictal] << ", interictal "
           << ds.class_counts[kInterictal] << ")\n";
}

void cmd_featurize(Run& run, const Flags& f) {
  const FeatureSet fs_ = load_features(run, f);
  save_feature_cache(run.cfg.out / "features", fs_);
  for (const char* ext : {".bin", ".json", ".csv"}) run.outputs.push_back(run.cfg.out / (std::string("features") + ext));
  *run.log << "feature maps: " << fs_.size() << '\n';
}

void cmd_train(Run& run, const Flags& f) {
  const FeatureSet feats = load_features(run, f);
  auto model = make_model(run.cfg.train.model, feats.geometry(), derive_seed(run.cfg.seed, 0));
  std::vector<std::size_t> all(feats.size());
  std::iota(all.begin(), all.end(), 0);
  const TrainHistory h = train(*model, feats, all, run.cfg.train);
  std::ostringstream os;
  os << "epoch,loss,accuracy,contrastive,steps\n";
  for (const auto& e : h.epochs) {
    os << e.epoch << ',' << format_double(e.loss) << ',' << format_double(e.accuracy) << ','
       << format_double(e.contrastive) << ',' << e.steps << '\n';
  }
  std::ofstream(run.out("history.csv"), std::ios::trunc) << os.str();
  save_checkpoint(run.out("model.ckpt"), *model, h.steps);
  const std::vector<ResultRow> rows = {row("train", evaluate(*model, feats, all))};
  write_results_csv(run.out("results.csv"), rows);
  *run.log << "parameters: " << model->parameter_count() << ", steps: " << h.steps << '\n';
}

void cmd_crossval(Run& run, const Flags& f) {
  const FeatureSet feats = load_features(run, f);
  const auto cv = cross_validate(feats, run.cfg.train, run.cfg.k, default_factory(run.cfg.train.model, feats.geometry()));
  std::vector<ResultRow> rows;
  for (std::size_t i = 0; i < cv.folds.size(); ++i) rows.push_back(row("fold" + std::to_string(i), cv.folds[i]));
  add_summary_rows(rows, cv.summary, {});
  write_results_csv(run.out("results.csv"), rows);
  *run.log << "mean accuracy: " << format_double(cv.summary.mean.accuracy) << '\n';
}

void cmd_sweep(Run& run) {
  const auto recs = manifest_recordings(run);
  const auto n = static_cast<std::size_t>(std::llround(recs.front().fs * run.cfg.policy.window_len));
  const InputGeometry g{kChannelCount, run.cfg.mfcc.n_coeffs, run.cfg.mfcc.frame_count(n)};
  const auto sweep = duration_sweep(recs, run.cfg.policy, run.cfg.sweep.durations_mins, run.cfg.sweep.overlaps,
                                    run.cfg.mfcc, run.cfg.train, run.cfg.k, default_factory(run.cfg.train.model, g));
  std::vector<ResultRow> rows;
  const std::vector<std::string> cols = {"duration_mins", "overlap", "windows"};
  for (const auto& s : sweep) {
    std::map<std::string, std::string> extra = {{"duration_mins", format_double(s.duration_mins)},
                                                {"overlap", format_double(s.overlap)},
                                                {"windows", std::to_string(s.windows)}};
    for (std::size_t i = 0; i < s.cv.folds.size(); ++i) rows.push_back(row("fold" + std::to_string(i), s.cv.folds[i], extra));
    add_summary_rows(rows, s.cv.summary, extra);
  }
  write_results_csv(run.out("results.csv"), rows, cols);
}

void cmd_transfer(Run& run, const Flags& f) {
  const FeatureSet feats = load_features(run, f);
  std::vector<int> subjects;
  if (f.subject) {
    subjects.push_back(*f.subject);
  } else {
    subjects = feats.subjects;
    std::sort(subjects.begin(), subjects.end());
    subjects.erase(std::unique(subjects.begin(), subjects.end()), subjects.end());
  }
  std::vector<ResultRow> rows;
  const std::vector<std::string> cols = {"subject", "n", "used", "batch"};
  const auto factory = default_factory(run.cfg.train.model, feats.geometry());
  for (int s : subjects) {
    if (std::find(feats.subjects.begin(), feats.subjects.end(), s) == feats.subjects.end()) {
      throw ConfigError("subject " + std::to_string(s) + " has no windows");
    }
    const auto r = run_transfer(feats, s, run.cfg.train, run.cfg.transfer, factory);
    rows.push_back(row("lopo", r.lopo, {{"subject", std::to_string(s)}, {"n", "0"}, {"used", "0"}, {"batch", ""}}));
    for (const auto& ft : r.fine_tuned) {
      rows.push_back(row("finetune", ft.metrics,
                         {{"subject", std::to_string(s)},
                          {"n", ft.requested == kAllSamples ? "all" : std::to_string(ft.requested)},
                          {"used", std::to_string(ft.used)},
                          {"batch", std::to_string(ft.batch)}}));
    }
    for (const auto& w : r.warnings) run.warnings.push_back(w);
  }
  write_results_csv(run.out("results.csv"), rows, cols);
}

Tensor baseline_for(Run& run, const Flags& f, const RecordingWindows& w) {
  if (run.cfg.interpret.baseline == "zeros") return Tensor(w.maps.front().shape());
  if (!f.features.empty() || run.cfg.manifest) {
    const FeatureSet feats = load_features(run, f);
    return mean_map(feats.maps);
  }
  run.warnings.push_back("no dataset given; baseline is the recording's mean feature map");
  return mean_map(w.maps);
}

void cmd_interpret(Run& run, const Flags& f) {
  auto model = load_model(run, f);
  const RecordingWindows w = window_recording(run, f);
  const Tensor baseline = baseline_for(run, f, w);
  const auto& s = run.cfg.interpret;
  const AttributionMap attr = attribute_sequence(*model, w.maps, baseline, s.n_samples, run.cfg.seed, s.baseline);
  write_channel_matrix_csv(run.out("attribution.csv"), attr.values, w.starts);
  std::vector<double> raw;
  for (const auto& m : w.maps) {
    const Tensor* one[] = {&m};
    raw.push_back(model->predict_proba(stack(one)).front());
  }
  const PredictionTrace tr = smooth_and_threshold(raw, s.smooth_len, s.threshold);
  write_trace_csv(run.out("trace.csv"), tr, w.starts);
}

void cmd_biomarker(Run& run, const Flags& f) {
  const RecordingWindows w = window_recording(run, f);
  const KlMap kl = kl_map(w.maps, run.cfg.interpret.bins);
  const std::vector<double> starts(w.starts.begin(), w.starts.end() - 1);
  write_channel_matrix_csv(run.out("kl_map.csv"), kl.values, starts);
}

void cmd_export_embeddings(Run& run, const Flags& f) {
  auto model = load_model(run, f);
  const FeatureSet feats = load_features(run, f);
  std::vector<Tensor> rows;
  for (std::size_t b = 0; b < feats.size(); b += 64) {
    std::vector<std::size_t> idx;
    for (std::size_t i = b; i < std::min(feats.size(), b + 64); ++i) idx.push_back(i);
    rows.push_back(model->embed(feats.batch(idx)));
  }
  Tensor all({feats.size(), model->embedding_size()});
  std::size_t off = 0;
  for (const auto& r : rows) {
    std::copy(r.values().begin(), r.values().end(), all.data() + off);
    off += r.size();
  }
  write_embeddings_csv(run.out("embeddings.csv"), all, feats.subjects, feats.labels);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"EEG seizure prediction toolkit", "seizurecast"};
  app.require_subcommand(1);
  Flags f;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--manifest", f.manifest, "Dataset manifest (JSON)");
    sub->add_option("--config", f.config, "Run configuration (JSON); flags override it");
    sub->add_option("--seed", f.seed, "Run seed");
    sub->add_option("--out", f.out, "Output directory (SEIZURECAST_OUT overrides)");
    sub->add_option("--model", f.model, "model1 or model2");
    sub->add_option("--lambda", f.lambda, "Model I loss mix");
    sub->add_option("--gamma", f.gamma, "Model II loss mix");
    sub->add_option("--epochs", f.epochs, "Training epochs");
    sub->add_option("--batch", f.batch, "Training batch size");
    sub->add_option("--features", f.features, "Feature cache stem written by featurize");
  };
  auto* ingest = app.add_subcommand("ingest", "Parse recordings and write the balanced window dataset");
  auto* featurize_cmd = app.add_subcommand("featurize", "Compute MFCC feature maps");
  auto* train_cmd = app.add_subcommand("train", "Train a model on the whole dataset");
  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation");
  auto* sweep = app.add_subcommand("sweep", "Pre-ictal duration sweep");
  auto* transfer = app.add_subcommand("transfer", "Leave-one-subject-out transfer and fine-tuning");
  auto* interpret = app.add_subcommand("interpret", "Channel attribution and smoothed predictions");
  auto* biomarker = app.add_subcommand("biomarker", "KL-divergence map of a recording");
  auto* embeddings = app.add_subcommand("export-embeddings", "Write embeddings as CSV");
  for (auto* s : {ingest, featurize_cmd, train_cmd, crossval, sweep, transfer, interpret, biomarker, embeddings}) {
    common(s);
  }
  crossval->add_option("--k", f.k, "Number of folds");
  sweep->add_option("--k", f.k, "Number of folds");
  sweep->add_option("--duration-mins", f.durations, "Pre-ictal durations in minutes");
  transfer->add_option("--subject", f.subject, "Held-out subject (default: every subject)");
  for (auto* s : {interpret, embeddings}) s->add_option("--checkpoint", f.checkpoint, "Model checkpoint");
  for (auto* s : {interpret, biomarker}) s->add_option("--recording", f.recording, "EDF recording");
  interpret->add_option("--n-samples,--samples", f.n_samples, "Shapley permutations per window");
  interpret->add_option("--threshold", f.threshold, "Decision threshold");
  interpret->add_option("--smooth-len", f.smooth_len, "Hann smoothing length (odd)");
  biomarker->add_option("--bins", f.bins, "Histogram bins");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  Run run;
  run.log = &out;
  try {
    run.command = app.get_subcommands().front()->get_name();
    run.cfg = resolve_config(f);
    if (!f.config.empty()) run.inputs.push_back(f.config);
    fs::create_directories(run.cfg.out);
    if (run.command == "ingest") cmd_ingest(run);
    else if (run.command == "featurize") cmd_featurize(run, f);
    else if (run.command == "train") cmd_train(run, f);
    else if (run.command == "crossval") cmd_crossval(run, f);
    else if (run.command == "sweep") cmd_sweep(run);
    else if (run.command == "transfer") cmd_transfer(run, f);
    else if (run.command == "interpret") cmd_interpret(run, f);
    else if (run.command == "biomarker") cmd_biomarker(run, f);
    else if (run.command == "export-embeddings") cmd_export_embeddings(run, f);
    write_run_manifest(run);
    for (const auto& w : run.warnings) err << "warning: " << w << '\n';
    return 0;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace seizurecast
