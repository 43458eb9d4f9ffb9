#pragma once

// Minimal EDF reader and CHB-MIT summary parser.
//
// Only plain EDF is supported: continuous records, no EDF+ annotation
// signal. Samples are 16-bit little-endian two's-complement codes.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "seizurecast/tensor.hpp"

namespace seizurecast {

inline constexpr std::size_t kEdfMainHeaderBytes = 256;
inline constexpr std::size_t kEdfSignalHeaderBytes = 256;
inline constexpr std::size_t kChannelCount = 23;

struct SignalHeader {
  std::string label;
  std::string transducer;
  std::string physical_dimension;
  double physical_min = 0.0;
  double physical_max = 0.0;
  int digital_min = 0;
  int digital_max = 0;
  std::string prefiltering;
  int samples_per_record = 0;

  friend bool operator==(const SignalHeader&, const SignalHeader&) = default;
};

struct CivilTime {
  int year = 1985;
  int month = 1;
  int day = 1;
  int hour = 0;
  int minute = 0;
  int second = 0;

  // Seconds since 1970-01-01T00:00:00 (no leap seconds).
  std::int64_t epoch_seconds() const;
  friend bool operator==(const CivilTime&, const CivilTime&) = default;
};

struct RecordingHeader {
  std::string version;
  std::string patient_id;
  std::string recording_id;
  CivilTime start_datetime;
  int header_bytes = 0;
  std::string reserved;
  int n_records = 0;
  double record_duration = 0.0;
  std::vector<SignalHeader> signals;

  std::size_t n_signals() const { return signals.size(); }
  std::size_t record_samples() const;  // sum of samples_per_record
  std::size_t payload_bytes() const;   // n_records * record_samples * 2

  friend bool operator==(const RecordingHeader&, const RecordingHeader&) = default;
};

// Decodes the fixed 256-byte header plus 256 bytes per signal.
RecordingHeader parse_edf_header(std::span<const std::uint8_t> bytes);

struct DecodedSignal {
  std::vector<double> samples;  // physical units
  std::size_t clamped = 0;      // digital codes outside [digital_min, digital_max]
};

// Raw 16-bit codes of one signal, concatenated across records.
std::vector<std::int16_t> decode_digital(const RecordingHeader& header, std::span<const std::uint8_t> payload,
                                         std::size_t signal_index);

// Codes mapped affinely onto [physical_min, physical_max]; out-of-range
// codes are clamped and tallied.
DecodedSignal decode_samples(const RecordingHeader& header, std::span<const std::uint8_t> payload,
                             std::size_t signal_index);

double digital_to_physical(const SignalHeader& signal, int code);

struct SeizureInterval {
  double start = 0.0;  // seconds from file start
  double end = 0.0;

  friend bool operator==(const SeizureInterval&, const SeizureInterval&) = default;
};

struct SeizureAnnotations {
  std::string file_name;
  std::vector<SeizureInterval> seizure_intervals;

  friend bool operator==(const SeizureAnnotations&, const SeizureAnnotations&) = default;
};

// Parses a chbXX-summary.txt document into one record per "File Name:" block.
std::vector<SeizureAnnotations> parse_summary(std::string_view text);

// Appends the per-sample mean of 22 channels as a 23rd channel; 23-channel
// input is returned unchanged.
Tensor harmonize_channels(Tensor channels);

struct EegRecording {
  int subject_id = 0;
  Tensor channels;  // [23 x L], physical units
  double fs = 0.0;
  SeizureAnnotations annotations;
  std::optional<std::int64_t> start_epoch;  // absolute start, for chaining files
  std::string source;

  std::size_t length() const { return channels.rank() == 2 ? channels.dim(1) : 0; }
  double duration() const { return fs > 0 ? static_cast<double>(length()) / fs : 0.0; }
};

struct MontageConfig {
  // Canonical channel order. Empty means "take signals in file order".
  std::vector<std::string> canonical_labels;
  // Labels dropped silently before matching (e.g. "-", "ECG", "VNS").
  std::vector<std::string> ignore_labels;
};

struct EdfFile {
  RecordingHeader header;
  std::vector<std::uint8_t> payload;
  std::size_t clamped = 0;
};

EdfFile read_edf_file(const std::filesystem::path& path);

// Reorders the file's signals by the montage and harmonizes to 23 channels.
// Annotations must lie within the recording.
EegRecording load_recording(const std::filesystem::path& path, int subject_id, const SeizureAnnotations& annotations,
                            const MontageConfig& montage, std::size_t* clamped = nullptr);

std::string read_text_file(const std::filesystem::path& path);
std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path);

}  // namespace seizurecast
