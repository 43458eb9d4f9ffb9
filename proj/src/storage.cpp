#include "seizurecast/storage.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

#include "seizurecast/edf.hpp"
#include "seizurecast/error.hpp"

namespace seizurecast {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'S', 'Z', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

void put_doubles(std::string& out, std::span<const double> values) {
  for (double v : values) put_u64(out, std::bit_cast<std::uint64_t>(v));
}

void get_doubles(std::span<const std::uint8_t> bytes, std::size_t offset, std::span<double> out) {
  if (offset + out.size() * 8 > bytes.size()) throw ParseError("tensor data runs past the end of the file");
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::bit_cast<double>(get_u64(bytes.data() + offset + 8 * i));
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed for " + path.string());
}

json parse_json(const std::filesystem::path& path) {
  try {
    return json::parse(read_text_file(path));
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

json model1_arch_json(const Model1Architecture& a) {
  json blocks = json::array();
  for (const auto& b : a.blocks) blocks.push_back({b.filters, b.kh, b.kw, b.pool_h, b.pool_w});
  return {{"id", a.id},           {"blocks", blocks},   {"embedding", a.embedding},
          {"patients", a.patients}, {"dropout", a.dropout}, {"maxnorm", a.maxnorm}};
}

Model1Architecture model1_arch_from(const json& j) {
  Model1Architecture a;
  a.id = j.at("id").get<std::string>();
  a.blocks.clear();
  for (const auto& b : j.at("blocks")) a.blocks.push_back({b.at(0), b.at(1), b.at(2), b.at(3), b.at(4)});
  a.embedding = j.at("embedding");
  a.patients = j.at("patients");
  a.dropout = j.at("dropout");
  a.maxnorm = j.at("maxnorm");
  return a;
}

json model2_arch_json(const Model2Architecture& a) {
  json stems = json::array();
  for (const auto& [kh, kw] : a.stem_kernels) stems.push_back({kh, kw});
  return {{"id", a.id},
          {"stem_filters", a.stem_filters},
          {"stem_kernels", stems},
          {"block", {a.block_filters, a.block_kh, a.block_kw}},
          {"pool", {a.pool_h, a.pool_w}},
          {"embedding", a.embedding},
          {"classifier_hidden", a.classifier_hidden},
          {"dropout", a.dropout},
          {"margin", a.margin}};
}

Model2Architecture model2_arch_from(const json& j) {
  Model2Architecture a;
  a.id = j.at("id").get<std::string>();
  a.stem_filters = j.at("stem_filters");
  a.stem_kernels.clear();
  for (const auto& k : j.at("stem_kernels")) a.stem_kernels.emplace_back(k.at(0), k.at(1));
  a.block_filters = j.at("block").at(0);
  a.block_kh = j.at("block").at(1);
  a.block_kw = j.at("block").at(2);
  a.pool_h = j.at("pool").at(0);
  a.pool_w = j.at("pool").at(1);
  a.embedding = j.at("embedding");
  a.classifier_hidden = j.at("classifier_hidden");
  a.dropout = j.at("dropout");
  a.margin = j.at("margin");
  return a;
}

// Shared block-file writer: tensors back to back, index records their offsets.
struct BlockWriter {
  std::string bytes;
  json entry(const Tensor& t) {
    json e = {{"shape", t.shape()}, {"offset", bytes.size()}};
    put_doubles(bytes, t.values());
    return e;
  }
};

Tensor read_block(std::span<const std::uint8_t> bytes, const json& e) {
  Tensor t(e.at("shape").get<Shape>());
  get_doubles(bytes, e.at("offset").get<std::size_t>(), t.values());
  return t;
}

std::filesystem::path with_ext(std::filesystem::path stem, const char* ext) { return stem.concat(ext); }

void write_index_csv(const std::filesystem::path& path, const json& windows) {
  std::ostringstream os;
  os << "id,subject,label,file,start_offset\n";
  for (const auto& w : windows) {
    os << w.at("id").get<std::size_t>() << ',' << w.at("subject").get<int>() << ',' << w.at("label").get<int>() << ','
       << csv_field(w.at("file").get<std::string>()) << ',' << format_double(w.at("start_offset").get<double>())
       << '\n';
  }
  write_file(path, os.str());
}

}  // namespace

std::string fnv1a_hex(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string fnv1a_hex(std::string_view text) {
  return fnv1a_hex(std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string hash_file(const std::filesystem::path& path) { return fnv1a_hex(read_binary_file(path)); }

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t step) {
  json meta;
  meta["model"] = to_string(model.kind());
  meta["architecture_id"] = model.architecture_id();
  meta["seed"] = model.seed();
  meta["step"] = step;
  const auto& g = model.geometry();
  meta["geometry"] = {g.channels, g.height, g.width};
  if (const auto* m1 = dynamic_cast<const Model1*>(&model)) meta["architecture"] = model1_arch_json(m1->architecture());
  if (const auto* m2 = dynamic_cast<const Model2*>(&model)) meta["architecture"] = model2_arch_json(m2->architecture());
  if (model.has_input_norm()) meta["input_norm"] = {{"mean", model.input_mean()}, {"scale", model.input_scale()}};

  std::string payload;
  json table = json::array();
  const auto& ps = model.params();
  for (std::size_t i = 0; i < ps.size(); ++i) {
    table.push_back({{"name", ps[i].name}, {"shape", ps[i].value.shape()}, {"offset", payload.size()}});
    put_doubles(payload, ps[i].value.values());
  }
  meta["tensors"] = table;

  const std::string header = meta.dump();
  std::string out(kMagic, 4);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((kCheckpointVersion >> (8 * i)) & 0xff));
  put_u64(out, header.size());
  out += header;
  out += payload;
  write_file(path, out);
}

std::unique_ptr<Model> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info) {
  const auto bytes = read_binary_file(path);
  if (bytes.size() < 16 || !std::equal(kMagic, kMagic + 4, bytes.begin())) {
    throw ParseError(path.string() + " is not a checkpoint");
  }
  const std::uint32_t version = bytes[4] | (bytes[5] << 8) | (bytes[6] << 16) | (static_cast<std::uint32_t>(bytes[7]) << 24);
  if (version != kCheckpointVersion) throw ParseError("unsupported checkpoint version " + std::to_string(version));
  const std::uint64_t len = get_u64(bytes.data() + 8);
  if (16 + len > bytes.size()) throw ParseError("checkpoint header is truncated");
  json meta;
  try {
    meta = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(len));
  } catch (const json::exception& e) {
    throw ParseError(std::string("checkpoint metadata: ") + e.what());
  }
  const std::span<const std::uint8_t> payload(bytes.data() + 16 + len, bytes.size() - 16 - len);

  CheckpointInfo ci;
  ci.kind = parse_model_kind(meta.at("model").get<std::string>());
  ci.architecture_id = meta.at("architecture_id").get<std::string>();
  ci.seed = meta.at("seed");
  ci.step = meta.at("step");
  const auto& g = meta.at("geometry");
  ci.geometry = {g.at(0), g.at(1), g.at(2)};

  std::unique_ptr<Model> model;
  if (ci.kind == ModelKind::kModel1) {
    model = std::make_unique<Model1>(model1_arch_from(meta.at("architecture")), ci.geometry, ci.seed);
  } else {
    model = std::make_unique<Model2>(model2_arch_from(meta.at("architecture")), ci.geometry, ci.seed);
  }
  auto& ps = model->params();
  const auto& table = meta.at("tensors");
  if (table.size() != ps.size()) throw ParseError("checkpoint tensor count does not match the architecture");
  for (const auto& e : table) {
    auto& p = ps.get(e.at("name").get<std::string>());
    if (e.at("shape").get<Shape>() != p.value.shape()) {
      throw ParseError("checkpoint tensor " + p.name + " has shape " + shape_string(e.at("shape").get<Shape>()));
    }
    get_doubles(payload, e.at("offset").get<std::size_t>(), p.value.values());
  }
  if (meta.contains("input_norm")) {
    const auto& n = meta.at("input_norm");
    try {
      model->set_input_norm(n.at("mean").get<std::vector<double>>(), n.at("scale").get<std::vector<double>>());
    } catch (const ConfigError& e) {
      throw ParseError(std::string("checkpoint input normalization: ") + e.what());
    }
  }
  if (info) *info = ci;
  return model;
}

void save_dataset_cache(const std::filesystem::path& stem, const Dataset& dataset) {
  BlockWriter w;
  json windows = json::array();
  for (std::size_t i = 0; i < dataset.windows.size(); ++i) {
    const auto& win = dataset.windows[i];
    json e = w.entry(win.samples);
    e["id"] = i;
    e["subject"] = win.subject_id;
    e["label"] = win.label;
    e["file"] = win.source.file;
    e["start_offset"] = win.source.start_offset;
    windows.push_back(std::move(e));
  }
  const json index = {{"kind", "dataset"}, {"version", 1}, {"windows", windows}, {"warnings", dataset.warnings}};
  write_file(with_ext(stem, ".bin"), w.bytes);
  write_file(with_ext(stem, ".json"), index.dump(1));
  write_index_csv(with_ext(stem, ".csv"), windows);
}

Dataset load_dataset_cache(const std::filesystem::path& stem) {
  const json index = parse_json(with_ext(stem, ".json"));
  if (index.value("kind", "") != "dataset") throw ParseError(stem.string() + ".json is not a dataset index");
  const auto bytes = read_binary_file(with_ext(stem, ".bin"));
  Dataset d;
  for (const auto& e : index.at("windows")) {
    d.windows.push_back({e.at("subject"), e.at("label"), {e.at("file"), e.at("start_offset")}, read_block(bytes, e)});
  }
  d.warnings = index.at("warnings").get<std::vector<std::string>>();
  d.recount();
  return d;
}

void save_feature_cache(const std::filesystem::path& stem, const FeatureSet& features) {
  BlockWriter w;
  json windows = json::array();
  for (std::size_t i = 0; i < features.size(); ++i) {
    json e = w.entry(features.maps[i]);
    e["id"] = i;
    e["subject"] = features.subjects[i];
    e["label"] = features.labels[i];
    e["file"] = features.sources[i].file;
    e["start_offset"] = features.sources[i].start_offset;
    windows.push_back(std::move(e));
  }
  const json index = {{"kind", "features"}, {"version", 1}, {"windows", windows}};
  write_file(with_ext(stem, ".bin"), w.bytes);
  write_file(with_ext(stem, ".json"), index.dump(1));
  write_index_csv(with_ext(stem, ".csv"), windows);
}

FeatureSet load_feature_cache(const std::filesystem::path& stem) {
  const json index = parse_json(with_ext(stem, ".json"));
  if (index.value("kind", "") != "features") throw ParseError(stem.string() + ".json is not a feature index");
  const auto bytes = read_binary_file(with_ext(stem, ".bin"));
  FeatureSet f;
  for (const auto& e : index.at("windows")) {
    f.push_back(read_block(bytes, e), e.at("label"), e.at("subject"), {e.at("file"), e.at("start_offset")});
  }
  return f;
}

void write_feature_map_csv(const std::filesystem::path& path, const Tensor& map) {
  if (map.rank() != 3) throw std::invalid_argument("feature map must be [C x H x W]");
  std::ostringstream os;
  os << "channel,coefficient";
  for (std::size_t t = 0; t < map.dim(2); ++t) os << ",f" << t;
  os << '\n';
  for (std::size_t c = 0; c < map.dim(0); ++c) {
    for (std::size_t k = 0; k < map.dim(1); ++k) {
      os << c << ',' << k;
      for (std::size_t t = 0; t < map.dim(2); ++t) os << ',' << format_double(map.at(c, k, t));
      os << '\n';
    }
  }
  write_file(path, os.str());
}

void write_channel_matrix_csv(const std::filesystem::path& path, const Tensor& values,
                              std::span<const double> window_starts) {
  if (values.rank() != 2 || values.dim(1) != window_starts.size()) {
    throw std::invalid_argument("matrix columns must match the window start times");
  }
  std::ostringstream os;
  os << "channel";
  for (double t : window_starts) os << ",t=" << format_double(t);
  os << '\n';
  for (std::size_t c = 0; c < values.dim(0); ++c) {
    os << c;
    for (std::size_t i = 0; i < values.dim(1); ++i) os << ',' << format_double(values.at(c, i));
    os << '\n';
  }
  write_file(path, os.str());
}

void write_trace_csv(const std::filesystem::path& path, const PredictionTrace& trace,
                     std::span<const double> window_starts) {
  if (window_starts.size() != trace.raw.size()) throw std::invalid_argument("one start time per window expected");
  std::ostringstream os;
  os << "window_start,raw,smoothed,final\n";
  for (std::size_t i = 0; i < trace.raw.size(); ++i) {
    os << format_double(window_starts[i]) << ',' << format_double(trace.raw[i]) << ','
       << format_double(trace.smoothed[i]) << ',' << trace.final[i] << '\n';
  }
  write_file(path, os.str());
}

void write_embeddings_csv(const std::filesystem::path& path, const Tensor& embeddings, std::span<const int> subjects,
                          std::span<const int> labels) {
  if (embeddings.rank() != 2 || embeddings.dim(0) != subjects.size() || subjects.size() != labels.size()) {
    throw std::invalid_argument("embedding rows must match subjects and labels");
  }
  std::ostringstream os;
  os << "subject,label";
  for (std::size_t k = 0; k < embeddings.dim(1); ++k) os << ",e_" << k + 1;
  os << '\n';
  for (std::size_t i = 0; i < embeddings.dim(0); ++i) {
    os << subjects[i] << ',' << labels[i];
    for (std::size_t k = 0; k < embeddings.dim(1); ++k) os << ',' << format_double(embeddings.at(i, k));
    os << '\n';
  }
  write_file(path, os.str());
}

void write_results_csv(const std::filesystem::path& path, std::span<const ResultRow> rows,
                       std::span<const std::string> extra_columns) {
  std::ostringstream os;
  os << "id";
  for (const auto& c : extra_columns) os << ',' << csv_field(c);
  os << ",accuracy,sensitivity,specificity,roc_auc,tp,tn,fp,fn\n";
  for (const auto& r : rows) {
    os << csv_field(r.id);
    for (const auto& c : extra_columns) {
      auto it = r.extra.find(c);
      os << ',' << (it == r.extra.end() ? "" : csv_field(it->second));
    }
    const auto& m = r.metrics;
    os << ',' << format_double(m.accuracy) << ',' << format_double(m.sensitivity) << ','
       << format_double(m.specificity) << ',' << (m.roc_auc ? format_double(*m.roc_auc) : "") << ',' << m.counts.tp
       << ',' << m.counts.tn << ',' << m.counts.fp << ',' << m.counts.fn << '\n';
  }
  write_file(path, os.str());
}

}  // namespace seizurecast
