#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "seizurecast/dataset.hpp"
#include "seizurecast/edf.hpp"
#include "seizurecast/mfcc.hpp"
#include "seizurecast/train.hpp"

namespace seizurecast {

// The 23 bipolar CHB-MIT montage labels, in canonical order.
MontageConfig default_montage();

struct ManifestEntry {
  std::filesystem::path edf_path;
  int subject_id = 0;
  std::optional<std::filesystem::path> summary_path;
};

// JSON list of {edf_path, subject_id, summary_path}, either top-level or under
// "recordings". Relative paths resolve against the manifest's directory.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path);

// Loads every manifest entry; seizures come from the summary block whose
// "File Name:" matches the EDF file name.
std::vector<EegRecording> load_recordings(std::span<const ManifestEntry> entries, const MontageConfig& montage,
                                          std::vector<std::string>* warnings = nullptr);

struct InterpretSettings {
  std::size_t n_samples = 100;  // permutations per window
  std::size_t smooth_len = 21;
  double threshold = 0.5;
  std::size_t bins = 32;
  std::string baseline = "mean";  // "mean" or "zeros"
};

struct SweepSettings {
  std::vector<double> durations_mins = {15, 30, 60};
  std::vector<double> overlaps = {3.5, 2.5, 2.0};
};

// Merged view of the JSON config file and flags; flags win.
struct RunConfig {
  std::optional<std::filesystem::path> manifest;
  std::filesystem::path out = "out";
  std::uint64_t seed = 0;
  std::size_t k = 10;
  MontageConfig montage = default_montage();
  LabelPolicy policy;
  MfccConfig mfcc;
  TrainConfig train;
  TransferConfig transfer;
  InterpretSettings interpret;
  SweepSettings sweep;

  // Deterministic JSON rendering; its hash identifies the configuration.
  std::string to_json() const;
};

// Applies the keys present in a JSON config document onto `cfg`.
void apply_config_json(RunConfig& cfg, const std::string& text);

// Full command line entry point; returns the process exit code (0 success,
// 2 configuration error, 1 runtime error).
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace seizurecast
