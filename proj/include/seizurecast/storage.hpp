#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "seizurecast/dataset.hpp"
#include "seizurecast/interpret.hpp"
#include "seizurecast/metrics.hpp"
#include "seizurecast/models.hpp"
#include "seizurecast/train.hpp"

namespace seizurecast {

// FNV-1a 64-bit, rendered as 16 lowercase hex digits.
std::string fnv1a_hex(std::span<const std::uint8_t> bytes);
std::string fnv1a_hex(std::string_view text);
std::string hash_file(const std::filesystem::path& path);

// Shortest decimal that round-trips; "nan" for NaN.
std::string format_double(double v);

// Checkpoint layout: "SZCK", u32 version, u64 JSON length, JSON metadata
// (architecture, seed, step, tensor table), then each tensor's float64 LE
// values in table order.
struct CheckpointInfo {
  ModelKind kind = ModelKind::kModel2;
  std::string architecture_id;
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
  InputGeometry geometry;
};

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t step = 0);
std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

// Dataset cache: <stem>.bin with raw window samples, <stem>.json index and
// <stem>.csv audit export of the index.
void save_dataset_cache(const std::filesystem::path& stem, const Dataset& dataset);
Dataset load_dataset_cache(const std::filesystem::path& stem);

// Feature cache with the same layout, one tensor block per window id.
void save_feature_cache(const std::filesystem::path& stem, const FeatureSet& features);
FeatureSet load_feature_cache(const std::filesystem::path& stem);

// Single feature map as CSV: channel, coefficient, then one column per frame.
void write_feature_map_csv(const std::filesystem::path& path, const Tensor& map);

// [C x N] matrix with a "channel" column and one column per window start.
void write_channel_matrix_csv(const std::filesystem::path& path, const Tensor& values,
                              std::span<const double> window_starts);

void write_trace_csv(const std::filesystem::path& path, const PredictionTrace& trace,
                     std::span<const double> window_starts);

// Rows: subject, label, e_1..e_k.
void write_embeddings_csv(const std::filesystem::path& path, const Tensor& embeddings, std::span<const int> subjects,
                          std::span<const int> labels);

// Result ledger rows: an identifier column followed by metric columns.
struct ResultRow {
  std::string id;
  Metrics metrics;
  std::map<std::string, std::string> extra;  // e.g. n, batch, duration
};

void write_results_csv(const std::filesystem::path& path, std::span<const ResultRow> rows,
                       std::span<const std::string> extra_columns = {});

}  // namespace seizurecast
