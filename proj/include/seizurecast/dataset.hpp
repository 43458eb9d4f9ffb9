#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "seizurecast/edf.hpp"
#include "seizurecast/tensor.hpp"

namespace seizurecast {

inline constexpr int kInterictal = 0;
inline constexpr int kPreictal = 1;

// Window labeling rule. All durations in seconds.
struct LabelPolicy {
  double preictal_horizon = 3600.0;
  double interictal_exclusion = 14400.0;
  double window_len = 10.0;
  double preictal_overlap = 2.0;
  double interictal_overlap = 0.0;

  void validate() const;
};

enum class WindowClass { kInterictal, kPreictal, kDiscard };

// The labeling predicate for a window [start, start + window_len) given every
// seizure known relative to the same file origin. Windows overlapping a
// seizure are ictal and discarded; windows between the pre-ictal horizon and
// the interictal exclusion distance belong to neither class.
WindowClass classify_window(double start, std::span<const SeizureInterval> seizures, const LabelPolicy& policy);

struct WindowSource {
  std::string file;
  double start_offset = 0.0;  // seconds from file start
};

struct LabeledWindow {
  int subject_id = 0;
  int label = kInterictal;
  WindowSource source;
  Tensor samples;  // [23 x fs*window_len]
};

// Everything labeling needs to know about a recording, without samples.
struct RecordingInfo {
  int subject_id = 0;
  std::string source;
  double fs = 0.0;
  std::size_t length = 0;  // samples per channel
  SeizureAnnotations annotations;
  std::optional<std::int64_t> start_epoch;

  static RecordingInfo from(const EegRecording& rec);
  double duration() const { return fs > 0 ? static_cast<double>(length) / fs : 0.0; }
};

struct WindowPlan {
  std::size_t recording = 0;  // index into the recording list
  int subject_id = 0;
  int label = kInterictal;
  double start_offset = 0.0;
  std::size_t start_sample = 0;
};

// Candidate windows of one recording. `external` holds seizures from other
// files of the same subject, expressed relative to this file's start.
std::vector<WindowPlan> plan_windows(const RecordingInfo& info, std::size_t recording_index, const LabelPolicy& policy,
                                     std::span<const SeizureInterval> external = {});

// For each recording, seizures of the subject's other recordings shifted onto
// its own time axis. Subjects with any recording lacking a start time get no
// external seizures.
std::vector<std::vector<SeizureInterval>> chain_external_seizures(std::span<const RecordingInfo> infos);

std::vector<LabeledWindow> label_windows(const EegRecording& recording, const LabelPolicy& policy,
                                         std::span<const SeizureInterval> external = {});

Tensor extract_window(const EegRecording& recording, std::size_t start_sample, std::size_t n_samples);

struct Dataset {
  std::vector<LabeledWindow> windows;
  std::array<std::size_t, 2> class_counts{0, 0};
  std::map<int, std::size_t> subject_counts;
  std::vector<std::string> warnings;

  std::size_t size() const { return windows.size(); }
  void recount();
  std::vector<int> subjects() const;  // per window
  std::vector<int> labels() const;    // per window
};

struct BalanceResult {
  std::vector<std::size_t> kept;  // indices into the candidate list, ascending
  std::vector<std::string> warnings;
};

// Keeps every pre-ictal candidate and a seeded uniform subsample of the
// interictal ones of equal size. Subjects that would vanish get one of their
// interictal windows swapped in.
BalanceResult balance_candidates(std::span<const WindowPlan> candidates, std::uint64_t seed);

Dataset build_balanced_dataset(std::span<const EegRecording> recordings, const LabelPolicy& policy,
                               std::uint64_t seed);

struct FoldPlan {
  std::size_t k = 0;
  std::vector<std::size_t> assignment;  // window index -> fold id
  std::uint64_t seed = 0;

  std::vector<std::size_t> fold_indices(std::size_t fold) const;
  std::vector<std::size_t> train_indices(std::size_t fold) const;
  std::vector<std::size_t> fold_sizes() const;
};

FoldPlan make_folds(std::size_t n_windows, std::size_t k, std::uint64_t seed);

struct WindowPair {
  std::size_t primary = 0;
  std::size_t secondary = 0;
  int same_patient = 0;
};

struct PairStream {
  std::vector<WindowPair> pairs;
  std::uint64_t seed = 0;

  std::size_t size() const { return pairs.size(); }
  double same_fraction() const;
};

// Offline pair mining over per-window subject ids: every window is the
// primary exactly once, in seeded order, and half of the pairs are matched.
PairStream mine_pairs(std::span<const int> subjects, std::uint64_t seed);
PairStream mine_pairs(const Dataset& dataset, std::uint64_t seed);

// Held-out windows are exactly the subject's; train is everything else.
std::pair<Dataset, Dataset> split_lopo(const Dataset& dataset, int subject_id);

// Index form of split_lopo for callers holding parallel arrays.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_lopo_indices(std::span<const int> subjects,
                                                                                 int subject_id);

}  // namespace seizurecast
