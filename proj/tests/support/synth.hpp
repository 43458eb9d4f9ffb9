#pragma once

// Test-side writers, generators and slow reference implementations. Nothing
// here calls into the code paths it is used to check.

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "seizurecast/edf.hpp"
#include "seizurecast/mfcc.hpp"
#include "seizurecast/train.hpp"

namespace seizurecast::testing {

// Scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

// EDF bytes from a header and per-signal digital codes (n_records *
// samples_per_record codes each). Fields are written left-justified and
// space-padded; numbers must fit their field width.
std::vector<std::uint8_t> encode_edf(const RecordingHeader& header,
                                     std::span<const std::vector<std::int16_t>> codes);
void write_edf(const std::filesystem::path& path, const RecordingHeader& header,
               std::span<const std::vector<std::int16_t>> codes);

// Header for an EEG file with one-second records.
RecordingHeader eeg_header(std::span<const std::string> labels, int fs, int n_records,
                           double physical_min = -3276.8, double physical_max = 3276.7);

// Physical values to codes by rounding the inverse affine map, clamped.
std::vector<std::int16_t> to_codes(const SignalHeader& s, std::span<const double> x);

// [C x L] physical samples at integer fs written as a one-second-record EDF.
void write_eeg_edf(const std::filesystem::path& path, const Tensor& channels, int fs,
                   std::span<const std::string> labels, CivilTime start = {});

std::string format_summary(std::span<const SeizureAnnotations> blocks);

// Randomized header with `n_signals` signals whose numeric fields all fit
// their EDF widths, plus random codes (some outside the digital range).
struct RandomEdf {
  RecordingHeader header;
  std::vector<std::vector<std::int16_t>> codes;
};
RandomEdf random_edf(std::mt19937_64& rng);

// Pseudo-patient for synthetic EEG. Each channel is a sum of a background
// rhythm, a class rhythm (pre-ictal or interictal frequency) and white
// noise, scaled by a per-channel gain, plus a DC offset.
struct PseudoPatient {
  int subject = 1;
  double offset = 0.0;
  double background_hz = 10.0;
  double preictal_hz = 24.0;
  double interictal_hz = 6.0;
  double class_amplitude = 1.0;
  double noise = 0.3;
  std::vector<double> gain;  // per channel
};

// Patients share the class rhythms (24 Hz vs 6 Hz) and differ in offset,
// gains and background rhythm.
std::vector<PseudoPatient> shared_rhythm_patients(std::size_t n, std::uint64_t seed);
// Each patient draws its own pair of class rhythms, so a model trained on
// other patients transfers only partially.
std::vector<PseudoPatient> patient_specific_patients(std::size_t n, std::uint64_t seed);

Tensor synth_window(const PseudoPatient& p, int label, std::size_t n_samples, double fs, std::mt19937_64& rng);

// `per_class` windows of each class for every patient, featurized with `cfg`.
// Windows are interleaved patient by patient.
FeatureSet synth_features(std::span<const PseudoPatient> patients, std::size_t per_class, std::size_t n_samples,
                          const MfccConfig& cfg, double fs, std::uint64_t seed);

// KL change-point sequence: N maps of shape [C x H x W] with N(0, 1) entries;
// channel `channel` switches to standard deviation 2 from index `change_at`.
std::vector<Tensor> variance_change_sequence(std::size_t n, std::size_t change_at, std::size_t channel,
                                             const Shape& shape, std::uint64_t seed);

// Area under the empirical ROC curve by trapezoids over distinct thresholds.
double trapezoid_auc(std::span<const double> scores, std::span<const int> labels);

// Textbook MFCC: naive DFT, triangles from the mel definition with natural
// log, orthonormal DCT-II by its formula. [C x n_coeffs x frames].
Tensor reference_mfcc(const Tensor& window, const MfccConfig& cfg, double fs);

// On-disk corpus for command-line runs: one 320 s recording per subject at
// 256 Hz with a seizure at [250, 260) s, pre-ictal rhythm during the minute
// before it, plus a manifest.json, a summary file per subject and a
// config.json with a 2 s window, 60 s horizon and 120 s exclusion policy.
struct MiniCorpus {
  std::filesystem::path manifest;
  std::filesystem::path config;
  std::vector<std::filesystem::path> recordings;
};
MiniCorpus write_mini_corpus(const std::filesystem::path& dir, std::size_t subjects, std::uint64_t seed);

// The 23 bipolar labels in canonical order.
std::vector<std::string> canonical_labels();

}  // namespace seizurecast::testing
