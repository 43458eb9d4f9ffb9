#include "seizurecast/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include "seizurecast/error.hpp"

namespace seizurecast {
namespace {

double distance_to_point(double start, double end, double x) {
  if (x < start) return start - x;
  if (x > end) return x - end;
  return 0.0;
}

std::size_t to_sample(double seconds, double fs) {
  const double s = seconds * fs;
  const double r = std::round(s);
  if (std::abs(s - r) > 1e-6) {
    throw ConfigError("window start " + std::to_string(seconds) + " s is not on the sample grid at fs=" +
                      std::to_string(fs));
  }
  return static_cast<std::size_t>(r);
}

}  // namespace

void LabelPolicy::validate() const {
  if (!(window_len > 0)) throw ConfigError("window_len must be positive");
  if (preictal_overlap < 0 || preictal_overlap >= window_len) throw ConfigError("preictal_overlap must be in [0, window_len)");
  if (interictal_overlap < 0 || interictal_overlap >= window_len) {
    throw ConfigError("interictal_overlap must be in [0, window_len)");
  }
  if (!(preictal_horizon > 0)) throw ConfigError("preictal_horizon must be positive");
  if (preictal_horizon > interictal_exclusion) throw ConfigError("preictal_horizon must not exceed interictal_exclusion");
}

WindowClass classify_window(double start, std::span<const SeizureInterval> seizures, const LabelPolicy& policy) {
  const double end = start + policy.window_len;
  for (const auto& s : seizures) {
    if (start < s.end && s.start < end) return WindowClass::kDiscard;
  }
  for (const auto& s : seizures) {
    if (s.start - policy.preictal_horizon <= start && end <= s.start) return WindowClass::kPreictal;
  }
  for (const auto& s : seizures) {
    if (distance_to_point(start, end, s.start) <= policy.interictal_exclusion ||
        distance_to_point(start, end, s.end) <= policy.interictal_exclusion) {
      return WindowClass::kDiscard;
    }
  }
  return WindowClass::kInterictal;
}

RecordingInfo RecordingInfo::from(const EegRecording& rec) {
  RecordingInfo info;
  info.subject_id = rec.subject_id;
  info.source = rec.source;
  info.fs = rec.fs;
  info.length = rec.length();
  info.annotations = rec.annotations;
  info.start_epoch = rec.start_epoch;
  return info;
}

std::vector<WindowPlan> plan_windows(const RecordingInfo& info, std::size_t recording_index, const LabelPolicy& policy,
                                     std::span<const SeizureInterval> external) {
  policy.validate();
  const double window_samples = info.fs * policy.window_len;
  if (std::abs(window_samples - std::round(window_samples)) > 1e-9) {
    throw ConfigError("fs * window_len = " + std::to_string(window_samples) + " is not an integer sample count");
  }
  std::vector<SeizureInterval> seizures = info.annotations.seizure_intervals;
  seizures.insert(seizures.end(), external.begin(), external.end());
  const double duration = info.duration();

  std::vector<WindowPlan> plans;
  auto emit = [&](double t, int label) {
    WindowPlan p;
    p.recording = recording_index;
    p.subject_id = info.subject_id;
    p.label = label;
    p.start_offset = t;
    p.start_sample = to_sample(t, info.fs);
    plans.push_back(p);
  };

  // Pre-ictal grid: anchored so the last window ends exactly at each onset.
  const double pre_step = policy.window_len - policy.preictal_overlap;
  std::set<std::size_t> pre_starts;
  for (const auto& s : seizures) {
    const double lower = std::max(0.0, s.start - policy.preictal_horizon);
    for (double t = s.start - policy.window_len; t >= lower - 1e-9; t -= pre_step) {
      if (t + policy.window_len > duration + 1e-9) continue;
      if (classify_window(t, seizures, policy) != WindowClass::kPreictal) continue;
      const std::size_t sample = to_sample(t, info.fs);
      if (pre_starts.insert(sample).second) emit(t, kPreictal);
    }
  }

  // Interictal grid: anchored at the file start.
  const double inter_step = policy.window_len - policy.interictal_overlap;
  for (std::size_t k = 0;; ++k) {
    const double t = static_cast<double>(k) * inter_step;
    if (t + policy.window_len > duration + 1e-9) break;
    if (classify_window(t, seizures, policy) == WindowClass::kInterictal) emit(t, kInterictal);
  }

  std::sort(plans.begin(), plans.end(), [](const WindowPlan& a, const WindowPlan& b) {
    return a.start_sample != b.start_sample ? a.start_sample < b.start_sample : a.label < b.label;
  });
  return plans;
}

std::vector<std::vector<SeizureInterval>> chain_external_seizures(std::span<const RecordingInfo> infos) {
  std::vector<std::vector<SeizureInterval>> out(infos.size());
  std::map<int, std::vector<std::size_t>> by_subject;
  for (std::size_t i = 0; i < infos.size(); ++i) by_subject[infos[i].subject_id].push_back(i);
  for (const auto& [subject, members] : by_subject) {
    const bool timed = std::all_of(members.begin(), members.end(), [&](std::size_t i) {
      return infos[i].start_epoch.has_value();
    });
    if (!timed) continue;
    for (std::size_t i : members) {
      for (std::size_t j : members) {
        if (i == j) continue;
        const double shift = static_cast<double>(*infos[j].start_epoch - *infos[i].start_epoch);
        for (const auto& s : infos[j].annotations.seizure_intervals) {
          out[i].push_back({s.start + shift, s.end + shift});
        }
      }
    }
  }
  return out;
}

Tensor extract_window(const EegRecording& recording, std::size_t start_sample, std::size_t n_samples) {
  const std::size_t channels = recording.channels.dim(0);
  if (start_sample + n_samples > recording.length()) throw std::out_of_range("window extends past recording end");
  Tensor w({channels, n_samples});
  for (std::size_t c = 0; c < channels; ++c) {
    const auto row = recording.channels.slice(c);
    std::copy(row.begin() + static_cast<std::ptrdiff_t>(start_sample),
              row.begin() + static_cast<std::ptrdiff_t>(start_sample + n_samples), w.slice(c).begin());
  }
  return w;
}

std::vector<LabeledWindow> label_windows(const EegRecording& recording, const LabelPolicy& policy,
                                         std::span<const SeizureInterval> external) {
  if (recording.channels.rank() != 2 || recording.channels.dim(0) != kChannelCount) {
    throw std::invalid_argument("label_windows requires a recording harmonized to 23 channels");
  }
  const auto plans = plan_windows(RecordingInfo::from(recording), 0, policy, external);
  const auto n = static_cast<std::size_t>(std::llround(recording.fs * policy.window_len));
  std::vector<LabeledWindow> out;
  out.reserve(plans.size());
  for (const auto& p : plans) {
    out.push_back({recording.subject_id, p.label, {recording.source, p.start_offset},
                   extract_window(recording, p.start_sample, n)});
  }
  return out;
}

void Dataset::recount() {
  class_counts = {0, 0};
  subject_counts.clear();
  for (const auto& w : windows) {
    ++class_counts.at(static_cast<std::size_t>(w.label));
    ++subject_counts[w.subject_id];
  }
}

std::vector<int> Dataset::subjects() const {
  std::vector<int> s;
  s.reserve(windows.size());
  for (const auto& w : windows) s.push_back(w.subject_id);
  return s;
}

std::vector<int> Dataset::labels() const {
  std::vector<int> s;
  s.reserve(windows.size());
  for (const auto& w : windows) s.push_back(w.label);
  return s;
}

BalanceResult balance_candidates(std::span<const WindowPlan> candidates, std::uint64_t seed) {
  std::vector<std::size_t> pre, inter;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    (candidates[i].label == kPreictal ? pre : inter).push_back(i);
  }
  if (pre.empty()) throw ConfigError("no pre-ictal windows: cannot build a balanced dataset");
  if (inter.empty()) throw ConfigError("no interictal windows: cannot build a balanced dataset");

  BalanceResult result;
  std::vector<std::size_t> chosen_inter = inter;
  if (inter.size() > pre.size()) {
    std::mt19937_64 rng(seed);
    std::shuffle(chosen_inter.begin(), chosen_inter.end(), rng);
    std::vector<std::size_t> rest(chosen_inter.begin() + static_cast<std::ptrdiff_t>(pre.size()), chosen_inter.end());
    chosen_inter.resize(pre.size());

    // Every subject must keep at least one window.
    std::set<int> present;
    for (std::size_t i : pre) present.insert(candidates[i].subject_id);
    for (std::size_t i : chosen_inter) present.insert(candidates[i].subject_id);
    for (std::size_t i : rest) {
      const int subject = candidates[i].subject_id;
      if (present.count(subject)) continue;
      std::map<int, std::size_t> counts;
      for (std::size_t j : pre) ++counts[candidates[j].subject_id];
      for (std::size_t j : chosen_inter) ++counts[candidates[j].subject_id];
      auto victim = std::find_if(chosen_inter.rbegin(), chosen_inter.rend(),
                                 [&](std::size_t j) { return counts[candidates[j].subject_id] > 1; });
      if (victim == chosen_inter.rend()) break;
      *victim = i;
      present.insert(subject);
    }
  } else if (inter.size() < pre.size()) {
    result.warnings.push_back("interictal windows (" + std::to_string(inter.size()) +
                              ") are fewer than pre-ictal (" + std::to_string(pre.size()) +
                              "); keeping all, dataset is unbalanced");
  }

  result.kept = pre;
  result.kept.insert(result.kept.end(), chosen_inter.begin(), chosen_inter.end());
  std::sort(result.kept.begin(), result.kept.end());
  return result;
}

Dataset build_balanced_dataset(std::span<const EegRecording> recordings, const LabelPolicy& policy,
                               std::uint64_t seed) {
  std::vector<RecordingInfo> infos;
  infos.reserve(recordings.size());
  for (const auto& r : recordings) {
    if (r.channels.rank() != 2 || r.channels.dim(0) != kChannelCount) {
      throw std::invalid_argument("build_balanced_dataset requires recordings harmonized to 23 channels");
    }
    infos.push_back(RecordingInfo::from(r));
  }
  const auto external = chain_external_seizures(infos);
  std::vector<WindowPlan> candidates;
  for (std::size_t i = 0; i < infos.size(); ++i) {
    auto plans = plan_windows(infos[i], i, policy, external[i]);
    candidates.insert(candidates.end(), plans.begin(), plans.end());
  }
  auto balance = balance_candidates(candidates, seed);

  Dataset ds;
  ds.warnings = std::move(balance.warnings);
  ds.windows.reserve(balance.kept.size());
  for (std::size_t idx : balance.kept) {
    const WindowPlan& p = candidates[idx];
    const EegRecording& rec = recordings[p.recording];
    const auto n = static_cast<std::size_t>(std::llround(rec.fs * policy.window_len));
    ds.windows.push_back({p.subject_id, p.label, {rec.source, p.start_offset}, extract_window(rec, p.start_sample, n)});
  }
  ds.recount();
  for (const auto& r : recordings) {
    if (!ds.subject_counts.count(r.subject_id)) {
      ds.warnings.push_back("subject " + std::to_string(r.subject_id) + " contributes no windows");
    }
  }
  return ds;
}

std::vector<std::size_t> FoldPlan::fold_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] == fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::train_indices(std::size_t fold) const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] != fold) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> FoldPlan::fold_sizes() const {
  std::vector<std::size_t> sizes(k, 0);
  for (std::size_t f : assignment) ++sizes[f];
  return sizes;
}

FoldPlan make_folds(std::size_t n_windows, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw ConfigError("k must be at least 2");
  if (k > n_windows) {
    throw ConfigError("k = " + std::to_string(k) + " exceeds dataset size " + std::to_string(n_windows));
  }
  std::vector<std::size_t> order(n_windows);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  FoldPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.assignment.assign(n_windows, 0);
  for (std::size_t i = 0; i < n_windows; ++i) plan.assignment[order[i]] = i % k;
  return plan;
}

double PairStream::same_fraction() const {
  if (pairs.empty()) return 0.0;
  const auto same = std::count_if(pairs.begin(), pairs.end(), [](const WindowPair& p) { return p.same_patient == 1; });
  return static_cast<double>(same) / static_cast<double>(pairs.size());
}

PairStream mine_pairs(std::span<const int> subjects, std::uint64_t seed) {
  const std::size_t n = subjects.size();
  // Windows grouped by subject: members[offset[s] .. offset[s] + count[s]).
  std::map<int, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) groups[subjects[i]].push_back(i);
  if (groups.size() < 2) throw ConfigError("pair mining needs at least two subjects");

  std::vector<std::size_t> members;
  std::map<int, std::pair<std::size_t, std::size_t>> span_of;  // subject -> (offset, count)
  for (const auto& [s, idx] : groups) {
    span_of[s] = {members.size(), idx.size()};
    members.insert(members.end(), idx.begin(), idx.end());
  }

  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  // Exactly floor(n/2) matched pairs, positions seeded.
  std::vector<int> same(n, 0);
  std::fill(same.begin(), same.begin() + static_cast<std::ptrdiff_t>(n / 2), 1);
  std::shuffle(same.begin(), same.end(), rng);

  // Singleton primaries cannot take a matched pair; move those flags elsewhere.
  for (std::size_t i = 0; i < n; ++i) {
    if (!same[i] || span_of[subjects[order[i]]].second >= 2) continue;
    bool moved = false;
    std::uniform_int_distribution<std::size_t> pick(0, n - 1);
    for (int attempt = 0; attempt < 100; ++attempt) {
      const std::size_t j = pick(rng);
      if (!same[j] && span_of[subjects[order[j]]].second >= 2) {
        std::swap(same[i], same[j]);
        moved = true;
        break;
      }
    }
    if (!moved) {
      throw ConfigError("pair mining: subject " + std::to_string(subjects[order[i]]) +
                        " has a single window and no matched pair could be reassigned after 100 attempts");
    }
  }

  PairStream stream;
  stream.seed = seed;
  stream.pairs.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t primary = order[i];
    const int subject = subjects[primary];
    auto [offset, count] = span_of[subject];
    std::size_t secondary = 0;
    if (same[i]) {
      std::uniform_int_distribution<std::size_t> pick(0, count - 2);
      std::size_t k = pick(rng);
      secondary = members[offset + k];
      if (secondary == primary) secondary = members[offset + count - 1];
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - count - 1);
      std::size_t u = pick(rng);
      if (u >= offset) u += count;
      secondary = members[u];
    }
    stream.pairs.push_back({primary, secondary, subjects[primary] == subjects[secondary] ? 1 : 0});
  }
  return stream;
}

PairStream mine_pairs(const Dataset& dataset, std::uint64_t seed) {
  const auto s = dataset.subjects();
  return mine_pairs(s, seed);
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_lopo_indices(std::span<const int> subjects,
                                                                                 int subject_id) {
  std::vector<std::size_t> train, held;
  for (std::size_t i = 0; i < subjects.size(); ++i) (subjects[i] == subject_id ? held : train).push_back(i);
  if (held.empty()) throw ConfigError("subject " + std::to_string(subject_id) + " has no windows in the dataset");
  return {train, held};
}

std::pair<Dataset, Dataset> split_lopo(const Dataset& dataset, int subject_id) {
  const auto subjects = dataset.subjects();
  const auto [train_idx, held_idx] = split_lopo_indices(subjects, subject_id);
  Dataset train, held;
  for (std::size_t i : train_idx) train.windows.push_back(dataset.windows[i]);
  for (std::size_t i : held_idx) held.windows.push_back(dataset.windows[i]);
  train.recount();
  held.recount();
  return {std::move(train), std::move(held)};
}

}  // namespace seizurecast
