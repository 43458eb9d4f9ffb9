#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "doctest.h"
#include "seizurecast/dataset.hpp"
#include "seizurecast/error.hpp"

using namespace seizurecast;

namespace {

EegRecording flat_recording(int subject, double fs, std::size_t seconds, std::vector<SeizureInterval> seizures,
                            std::string source = "r.edf") {
  EegRecording r;
  r.subject_id = subject;
  r.fs = fs;
  r.channels = Tensor({kChannelCount, static_cast<std::size_t>(fs * static_cast<double>(seconds))});
  for (std::size_t i = 0; i < r.channels.dim(1); ++i) r.channels.at(0, i) = static_cast<double>(i);
  r.annotations = {source, std::move(seizures)};
  r.source = std::move(source);
  return r;
}

// Label predicate written from the policy text, independent of the library.
int oracle_label(double t, const std::vector<SeizureInterval>& seizures, const LabelPolicy& p) {
  const double a = t, b = t + p.window_len;
  auto dist = [&](double x) { return std::max({0.0, a - x, x - b}); };
  for (const auto& s : seizures) {
    if (std::max(a, s.start) < std::min(b, s.end)) return -1;
  }
  for (const auto& s : seizures) {
    if (t >= s.start - p.preictal_horizon && b <= s.start) return 1;
  }
  for (const auto& s : seizures) {
    if (!(dist(s.start) > p.interictal_exclusion && dist(s.end) > p.interictal_exclusion)) return -1;
  }
  return 0;
}

}  // namespace

TEST_CASE("policy examples") {
  const LabelPolicy p;
  const std::vector<SeizureInterval> s = {{5000, 5040}};
  CHECK(classify_window(3500, s, p) == WindowClass::kPreictal);
  CHECK(classify_window(500, s, p) == WindowClass::kDiscard);
  CHECK(classify_window(20000, s, p) == WindowClass::kInterictal);
  CHECK(classify_window(4990, s, p) == WindowClass::kPreictal);
  CHECK(classify_window(4991, s, p) == WindowClass::kDiscard);  // overlaps onset
  CHECK(classify_window(1400, s, p) == WindowClass::kPreictal);
  CHECK(classify_window(1399, s, p) == WindowClass::kDiscard);
}

TEST_CASE("policy validation") {
  LabelPolicy p;
  p.preictal_overlap = 10;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.preictal_horizon = 20000;
  CHECK_THROWS_AS(p.validate(), ConfigError);
  p = {};
  p.interictal_overlap = -1;
  CHECK_THROWS_AS(p.validate(), ConfigError);
}

TEST_CASE("label soundness against the oracle") {
  const LabelPolicy p;
  const std::vector<SeizureInterval> s = {{5000, 5040}, {27000, 27060}};
  const auto rec = flat_recording(4, 1.0, 48000, s);
  const auto windows = label_windows(rec, p);
  std::size_t pre = 0, inter = 0;
  for (const auto& w : windows) {
    REQUIRE(oracle_label(w.source.start_offset, s, p) == w.label);
    (w.label == kPreictal ? pre : inter)++;
    CHECK(w.samples.dim(1) == 10);
    // Column 0 carries the sample index, so the window content is traceable.
    CHECK(w.samples.at(0, 0) == w.source.start_offset);
    CHECK(w.source.start_offset + p.window_len <= 48000);
  }
  // Pre-ictal grid ends at each onset and steps back 8 s over the 1 h horizon.
  CHECK(pre == 2 * (static_cast<std::size_t>((3600 - 10) / 8) + 1));
  CHECK(inter > 0);
  // Interictal windows tile the file from 0 with no overlap.
  for (const auto& w : windows) {
    if (w.label == kInterictal) CHECK(std::fmod(w.source.start_offset, 10.0) == 0.0);
  }

  // Exhaustive oracle check of every interictal grid position.
  std::set<double> emitted;
  for (const auto& w : windows) {
    if (w.label == kInterictal) emitted.insert(w.source.start_offset);
  }
  for (double t = 0; t + 10 <= 48000; t += 10) {
    CHECK((oracle_label(t, s, p) == 0) == (emitted.count(t) == 1));
  }
}

TEST_CASE("window length must be a whole number of samples") {
  LabelPolicy p;
  p.window_len = 10.5;
  p.preictal_overlap = 0;
  const auto rec = flat_recording(1, 1.0, 100, {});
  CHECK_THROWS_AS(label_windows(rec, p), ConfigError);
}

TEST_CASE("seizures in adjacent files exclude interictal windows") {
  const LabelPolicy p;
  auto a = flat_recording(2, 1.0, 3600, {}, "a.edf");
  auto b = flat_recording(2, 1.0, 3600, {{1000, 1040}}, "b.edf");
  a.start_epoch = 0;
  b.start_epoch = 7200;  // b starts two hours after a
  const std::vector<RecordingInfo> infos = {RecordingInfo::from(a), RecordingInfo::from(b)};
  const auto ext = chain_external_seizures(infos);
  REQUIRE(ext[0].size() == 1);
  CHECK(ext[0][0].start == 8200);
  CHECK(plan_windows(infos[0], 0, p, ext[0]).empty());
  // Without timestamps only within-file distances apply.
  a.start_epoch.reset();
  const std::vector<RecordingInfo> untimed = {RecordingInfo::from(a), RecordingInfo::from(b)};
  CHECK(chain_external_seizures(untimed)[0].empty());
  CHECK(plan_windows(untimed[0], 0, p).size() == 360);
}

TEST_CASE("balancing") {
  auto plan = [](int label, int subject, double t) {
    WindowPlan w;
    w.label = label;
    w.subject_id = subject;
    w.start_offset = t;
    return w;
  };
  std::vector<WindowPlan> c;
  for (int i = 0; i < 10; ++i) c.push_back(plan(kPreictal, 1, i));
  for (int i = 0; i < 40; ++i) c.push_back(plan(kInterictal, 1, 100 + i));

  SUBCASE("10 + 40 -> 10 + 10") {
    const auto r = balance_candidates(c, 5);
    std::size_t pre = 0, inter = 0;
    for (auto i : r.kept) (c[i].label == kPreictal ? pre : inter)++;
    CHECK(pre == 10);
    CHECK(inter == 10);
    CHECK(r.warnings.empty());
    CHECK(balance_candidates(c, 5).kept == r.kept);
    CHECK(balance_candidates(c, 6).kept != r.kept);
  }
  SUBCASE("10 + 4 keeps all and warns") {
    c.resize(14);
    const auto r = balance_candidates(c, 5);
    CHECK(r.kept.size() == 14);
    CHECK(r.warnings.size() == 1);
  }
  SUBCASE("empty class") {
    c.resize(10);
    CHECK_THROWS_AS(balance_candidates(c, 5), ConfigError);
  }
  SUBCASE("every subject keeps a window") {
    std::vector<WindowPlan> d;
    for (int i = 0; i < 3; ++i) d.push_back(plan(kPreictal, 1, i));
    for (int i = 0; i < 30; ++i) d.push_back(plan(kInterictal, 1, 100 + i));
    d.push_back(plan(kInterictal, 2, 0));
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const auto r = balance_candidates(d, seed);
      CHECK(r.kept.size() == 6);
      CHECK(std::any_of(r.kept.begin(), r.kept.end(), [&](std::size_t i) { return d[i].subject_id == 2; }));
    }
  }
}

TEST_CASE("build_balanced_dataset over recordings") {
  LabelPolicy p;
  p.preictal_horizon = 60;
  p.interictal_exclusion = 120;
  const std::vector<EegRecording> recs = {flat_recording(1, 2.0, 600, {{300, 320}}, "x.edf"),
                                          flat_recording(2, 2.0, 600, {{100, 110}}, "y.edf")};
  const auto ds = build_balanced_dataset(recs, p, 9);
  CHECK(ds.class_counts[kPreictal] == ds.class_counts[kInterictal]);
  CHECK(ds.subject_counts.size() == 2);
  const auto again = build_balanced_dataset(recs, p, 9);
  REQUIRE(again.size() == ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    CHECK(again.windows[i].source.file == ds.windows[i].source.file);
    CHECK(again.windows[i].source.start_offset == ds.windows[i].source.start_offset);
    CHECK(again.windows[i].samples == ds.windows[i].samples);
  }
  for (const auto& w : ds.windows) {
    const auto& rec = w.source.file == "x.edf" ? recs[0] : recs[1];
    CHECK(oracle_label(w.source.start_offset, rec.annotations.seizure_intervals, p) == w.label);
  }
}

TEST_CASE("fold plans") {
  SUBCASE("100 windows, k=10") {
    const auto f = make_folds(100, 10, 1);
    for (auto s : f.fold_sizes()) CHECK(s == 10);
  }
  SUBCASE("101 windows, k=10") {
    auto sizes = make_folds(101, 10, 1).fold_sizes();
    std::sort(sizes.begin(), sizes.end());
    CHECK(sizes.back() == 11);
    CHECK(std::count(sizes.begin(), sizes.end(), 10) == 9);
  }
  SUBCASE("full-size dataset") {
    const auto f = make_folds(158902, 10, 1);
    const auto sizes = f.fold_sizes();
    for (auto s : sizes) CHECK((s == 15890 || s == 15891));
    CHECK(f.train_indices(0).size() + f.fold_indices(0).size() == 158902);
  }
  SUBCASE("partition") {
    const auto f = make_folds(57, 4, 3);
    std::vector<int> seen(57, 0);
    for (std::size_t k = 0; k < 4; ++k) {
      for (auto i : f.fold_indices(k)) seen[i]++;
      auto tr = f.train_indices(k);
      auto te = f.fold_indices(k);
      std::vector<std::size_t> both;
      std::set_intersection(tr.begin(), tr.end(), te.begin(), te.end(), std::back_inserter(both));
      CHECK(both.empty());
      CHECK(tr.size() + te.size() == 57);
    }
    CHECK(std::all_of(seen.begin(), seen.end(), [](int v) { return v == 1; }));
    CHECK(make_folds(57, 4, 3).assignment == f.assignment);
  }
  CHECK_THROWS_AS(make_folds(5, 10, 0), ConfigError);
  CHECK_THROWS_AS(make_folds(5, 1, 0), ConfigError);
}

TEST_CASE("pair mining") {
  SUBCASE("2 subjects x 2 windows") {
    const std::vector<int> s = {1, 1, 2, 2};
    const auto ps = mine_pairs(s, 4);
    CHECK(ps.size() == 4);
    CHECK(std::abs(ps.same_fraction() - 0.5) <= 0.25);
  }
  SUBCASE("single subject") {
    const std::vector<int> s = {3, 3, 3};
    CHECK_THROWS_AS(mine_pairs(s, 0), ConfigError);
  }
  SUBCASE("10,000 pairs") {
    std::vector<int> s;
    for (int i = 0; i < 10000; ++i) s.push_back(1 + i % 7);
    const auto ps = mine_pairs(s, 17);
    CHECK(ps.same_fraction() >= 0.48);
    CHECK(ps.same_fraction() <= 0.52);
    std::vector<int> primary_seen(s.size(), 0);
    for (const auto& p : ps.pairs) {
      REQUIRE(p.same_patient == (s[p.primary] == s[p.secondary] ? 1 : 0));
      CHECK(p.primary != p.secondary);
      primary_seen[p.primary]++;
    }
    CHECK(std::all_of(primary_seen.begin(), primary_seen.end(), [](int v) { return v == 1; }));
    const auto again = mine_pairs(s, 17);
    CHECK(std::equal(ps.pairs.begin(), ps.pairs.end(), again.pairs.begin(), [](const auto& a, const auto& b) {
      return a.primary == b.primary && a.secondary == b.secondary && a.same_patient == b.same_patient;
    }));
  }
  SUBCASE("singleton subject") {
    const std::vector<int> s = {1, 2, 2, 2, 2, 2};
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
      const auto ps = mine_pairs(s, seed);
      for (const auto& p : ps.pairs) CHECK(p.same_patient == (s[p.primary] == s[p.secondary] ? 1 : 0));
      CHECK(std::abs(ps.same_fraction() - 0.5) <= 1.0 / 6.0 + 1e-12);
    }
  }
}

TEST_CASE("leave one subject out") {
  LabelPolicy p;
  p.preictal_horizon = 60;
  p.interictal_exclusion = 120;
  std::vector<EegRecording> recs;
  for (int s = 1; s <= 3; ++s) recs.push_back(flat_recording(s, 1.0, 600, {{300, 320}}, "s" + std::to_string(s)));
  const auto ds = build_balanced_dataset(recs, p, 2);
  const auto [train, held] = split_lopo(ds, 1);
  CHECK(train.size() + held.size() == ds.size());
  CHECK(held.subject_counts.size() == 1);
  CHECK(held.subject_counts.count(1) == 1);
  CHECK(train.subject_counts.size() == 2);
  CHECK_THROWS_AS(split_lopo(ds, 9), ConfigError);
}
