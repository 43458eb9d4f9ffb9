#include "seizurecast/edf.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iterator>
#include <regex>
#include <sstream>

#include "seizurecast/error.hpp"

namespace seizurecast {
namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

class FieldReader {
 public:
  explicit FieldReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::string text(std::size_t width, std::string_view what) {
    if (pos_ + width > bytes_.size()) throw ParseError("EDF header truncated while reading " + std::string(what));
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), width);
    pos_ += width;
    return std::string(trim(s));
  }

  double number(std::size_t width, std::string_view what) {
    const std::string s = text(width, what);
    std::string_view v = s;
    if (!v.empty() && v.front() == '+') v.remove_prefix(1);
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out)) {
      throw ParseError("EDF field '" + std::string(what) + "' is not numeric: '" + s + "'");
    }
    return out;
  }

  int integer(std::size_t width, std::string_view what) {
    const std::string s = text(width, what);
    std::string_view v = s;
    if (!v.empty() && v.front() == '+') v.remove_prefix(1);
    int out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (v.empty() || ec != std::errc() || ptr != v.data() + v.size()) {
      throw ParseError("EDF field '" + std::string(what) + "' is not an integer: '" + s + "'");
    }
    return out;
  }

  std::size_t position() const { return pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

int parse_two_digits(std::string_view s, std::size_t at, std::string_view what) {
  int v = 0;
  const auto [ptr, ec] = std::from_chars(s.data() + at, s.data() + at + 2, v);
  if (ec != std::errc() || ptr != s.data() + at + 2) {
    throw ParseError("EDF " + std::string(what) + " is malformed: '" + std::string(s) + "'");
  }
  return v;
}

// Howard Hinnant's days_from_civil.
std::int64_t days_from_civil(std::int64_t y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const auto yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

}  // namespace

std::int64_t CivilTime::epoch_seconds() const {
  return days_from_civil(year, static_cast<unsigned>(month), static_cast<unsigned>(day)) * 86400 +
         hour * 3600 + minute * 60 + second;
}

std::size_t RecordingHeader::record_samples() const {
  std::size_t n = 0;
  for (const auto& s : signals) n += static_cast<std::size_t>(s.samples_per_record);
  return n;
}

std::size_t RecordingHeader::payload_bytes() const {
  return static_cast<std::size_t>(n_records) * record_samples() * 2;
}

RecordingHeader parse_edf_header(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kEdfMainHeaderBytes) {
    throw ParseError("EDF header truncated: " + std::to_string(bytes.size()) + " bytes, need 256");
  }
  FieldReader r(bytes);
  RecordingHeader h;
  h.version = r.text(8, "version");
  h.patient_id = r.text(80, "patient id");
  h.recording_id = r.text(80, "recording id");
  const std::string date = r.text(8, "start date");
  const std::string time = r.text(8, "start time");
  if (date.size() != 8 || date[2] != '.' || date[5] != '.') throw ParseError("EDF start date malformed: '" + date + "'");
  if (time.size() != 8 || time[2] != '.' || time[5] != '.') throw ParseError("EDF start time malformed: '" + time + "'");
  const int yy = parse_two_digits(date, 6, "start date");
  h.start_datetime.day = parse_two_digits(date, 0, "start date");
  h.start_datetime.month = parse_two_digits(date, 3, "start date");
  h.start_datetime.year = yy >= 85 ? 1900 + yy : 2000 + yy;
  h.start_datetime.hour = parse_two_digits(time, 0, "start time");
  h.start_datetime.minute = parse_two_digits(time, 3, "start time");
  h.start_datetime.second = parse_two_digits(time, 6, "start time");
  h.header_bytes = r.integer(8, "header bytes");
  h.reserved = r.text(44, "reserved");
  h.n_records = r.integer(8, "number of records");
  h.record_duration = r.number(8, "record duration");
  const int ns = r.integer(4, "number of signals");

  if (h.n_records == -1) throw ParseError("EDF with unknown record count (-1) is not supported");
  if (h.n_records < 0) throw ParseError("EDF record count is negative");
  if (ns <= 0) throw ParseError("EDF n_signals must be positive, got " + std::to_string(ns));
  if (!(h.record_duration > 0)) throw ParseError("EDF record duration must be positive");

  const auto n = static_cast<std::size_t>(ns);
  const std::size_t need = kEdfMainHeaderBytes + kEdfSignalHeaderBytes * n;
  if (bytes.size() < need) {
    throw ParseError("EDF header truncated: " + std::to_string(bytes.size()) + " bytes, need " +
                     std::to_string(need));
  }
  if (h.header_bytes != static_cast<int>(need)) {
    throw ParseError("EDF header byte count " + std::to_string(h.header_bytes) + " disagrees with " +
                     std::to_string(need) + " implied by n_signals");
  }

  // Signal headers are stored field-major: all labels, then all transducers, ...
  h.signals.resize(n);
  for (auto& s : h.signals) s.label = r.text(16, "label");
  for (auto& s : h.signals) s.transducer = r.text(80, "transducer");
  for (auto& s : h.signals) s.physical_dimension = r.text(8, "physical dimension");
  for (auto& s : h.signals) s.physical_min = r.number(8, "physical minimum");
  for (auto& s : h.signals) s.physical_max = r.number(8, "physical maximum");
  for (auto& s : h.signals) s.digital_min = r.integer(8, "digital minimum");
  for (auto& s : h.signals) s.digital_max = r.integer(8, "digital maximum");
  for (auto& s : h.signals) s.prefiltering = r.text(80, "prefiltering");
  for (auto& s : h.signals) s.samples_per_record = r.integer(8, "samples per record");
  for (std::size_t i = 0; i < n; ++i) r.text(32, "signal reserved");

  for (const auto& s : h.signals) {
    if (s.digital_min >= s.digital_max) throw ParseError("EDF signal '" + s.label + "': digital_min >= digital_max");
    if (s.physical_min == s.physical_max) throw ParseError("EDF signal '" + s.label + "': physical range is empty");
    if (s.samples_per_record <= 0) throw ParseError("EDF signal '" + s.label + "': samples per record must be positive");
    if (s.digital_min < -32768 || s.digital_max > 32767) {
      throw ParseError("EDF signal '" + s.label + "': digital range exceeds 16 bits");
    }
  }
  return h;
}

std::vector<std::int16_t> decode_digital(const RecordingHeader& header, std::span<const std::uint8_t> payload,
                                         std::size_t signal_index) {
  if (signal_index >= header.n_signals()) {
    throw std::out_of_range("signal index " + std::to_string(signal_index) + " out of range");
  }
  if (payload.size() != header.payload_bytes()) {
    throw ParseError("EDF payload is " + std::to_string(payload.size()) + " bytes, header implies " +
                     std::to_string(header.payload_bytes()));
  }
  std::size_t offset_in_record = 0;
  for (std::size_t i = 0; i < signal_index; ++i) offset_in_record += header.signals[i].samples_per_record;
  const auto spr = static_cast<std::size_t>(header.signals[signal_index].samples_per_record);
  const std::size_t record_samples = header.record_samples();

  std::vector<std::int16_t> codes;
  codes.reserve(spr * static_cast<std::size_t>(header.n_records));
  for (std::size_t rec = 0; rec < static_cast<std::size_t>(header.n_records); ++rec) {
    const std::size_t base = (rec * record_samples + offset_in_record) * 2;
    for (std::size_t k = 0; k < spr; ++k) {
      const auto lo = static_cast<std::uint16_t>(payload[base + 2 * k]);
      const auto hi = static_cast<std::uint16_t>(payload[base + 2 * k + 1]);
      codes.push_back(static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8))));
    }
  }
  return codes;
}

double digital_to_physical(const SignalHeader& s, int code) {
  // std::lerp is exact at both endpoints and monotone in t.
  const double t = static_cast<double>(code - s.digital_min) / static_cast<double>(s.digital_max - s.digital_min);
  return std::lerp(s.physical_min, s.physical_max, t);
}

DecodedSignal decode_samples(const RecordingHeader& header, std::span<const std::uint8_t> payload,
                             std::size_t signal_index) {
  const auto codes = decode_digital(header, payload, signal_index);
  const SignalHeader& s = header.signals[signal_index];
  DecodedSignal out;
  out.samples.reserve(codes.size());
  for (const std::int16_t raw : codes) {
    int code = raw;
    if (code < s.digital_min || code > s.digital_max) {
      code = std::clamp(code, s.digital_min, s.digital_max);
      ++out.clamped;
    }
    out.samples.push_back(digital_to_physical(s, code));
  }
  return out;
}

std::vector<SeizureAnnotations> parse_summary(std::string_view text) {
  static const std::regex file_re(R"(^\s*File Name:\s*(\S+))");
  static const std::regex count_re(R"(^\s*Number of Seizures in File:\s*(\d+))");
  static const std::regex start_re(R"(^\s*Seizure(?:\s+\d+)?\s+Start Time:\s*([0-9]+(?:\.[0-9]+)?))");
  static const std::regex end_re(R"(^\s*Seizure(?:\s+\d+)?\s+End Time:\s*([0-9]+(?:\.[0-9]+)?))");

  struct Block {
    SeizureAnnotations ann;
    std::optional<int> declared;
    std::vector<double> starts, ends;
  };
  std::vector<Block> blocks;

  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::smatch m;
    if (std::regex_search(line, m, file_re)) {
      blocks.emplace_back();
      blocks.back().ann.file_name = m[1];
      continue;
    }
    const bool is_count = std::regex_search(line, m, count_re);
    const bool is_start = !is_count && std::regex_search(line, m, start_re);
    const bool is_end = !is_count && !is_start && std::regex_search(line, m, end_re);
    if (!is_count && !is_start && !is_end) continue;
    if (blocks.empty()) throw ParseError("summary line " + std::to_string(line_no) + " precedes any 'File Name:'");
    Block& b = blocks.back();
    if (is_count) {
      b.declared = std::stoi(m[1]);
    } else if (is_start) {
      b.starts.push_back(std::stod(m[1]));
    } else {
      b.ends.push_back(std::stod(m[1]));
    }
  }

  std::vector<SeizureAnnotations> out;
  out.reserve(blocks.size());
  for (auto& b : blocks) {
    const std::string& f = b.ann.file_name;
    if (!b.declared) throw ParseError("summary block '" + f + "' lacks 'Number of Seizures in File:'");
    if (b.starts.size() != b.ends.size() || b.starts.size() != static_cast<std::size_t>(*b.declared)) {
      throw ParseError("summary block '" + f + "' declares " + std::to_string(*b.declared) + " seizures but has " +
                       std::to_string(b.starts.size()) + " start and " + std::to_string(b.ends.size()) +
                       " end times");
    }
    for (std::size_t i = 0; i < b.starts.size(); ++i) {
      if (b.ends[i] <= b.starts[i]) throw ParseError("summary block '" + f + "': seizure end <= start");
      b.ann.seizure_intervals.push_back({b.starts[i], b.ends[i]});
    }
    auto& iv = b.ann.seizure_intervals;
    std::sort(iv.begin(), iv.end(), [](const auto& a, const auto& c) { return a.start < c.start; });
    for (std::size_t i = 1; i < iv.size(); ++i) {
      if (iv[i].start < iv[i - 1].end) throw ParseError("summary block '" + f + "': overlapping seizures");
    }
    out.push_back(std::move(b.ann));
  }
  return out;
}

Tensor harmonize_channels(Tensor channels) {
  if (channels.rank() != 2) throw std::invalid_argument("harmonize_channels expects a [C x L] matrix");
  const std::size_t c = channels.dim(0);
  const std::size_t len = channels.dim(1);
  if (c == kChannelCount) return channels;
  if (c != kChannelCount - 1) {
    throw std::invalid_argument("harmonize_channels: expected 22 or 23 channels, got " + std::to_string(c));
  }
  Tensor out({kChannelCount, len});
  std::copy(channels.data(), channels.data() + channels.size(), out.data());
  for (std::size_t t = 0; t < len; ++t) {
    double sum = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) sum += channels.at(ch, t);
    out.at(c, t) = sum / static_cast<double>(c);
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::uint8_t> read_binary_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  return bytes;
}

EdfFile read_edf_file(const std::filesystem::path& path) {
  auto bytes = read_binary_file(path);
  EdfFile f;
  f.header = parse_edf_header(bytes);
  const auto begin = bytes.begin() + static_cast<std::ptrdiff_t>(f.header.header_bytes);
  f.payload.assign(begin, bytes.end());
  if (f.payload.size() != f.header.payload_bytes()) {
    throw ParseError(path.string() + ": payload is " + std::to_string(f.payload.size()) + " bytes, header implies " +
                     std::to_string(f.header.payload_bytes()));
  }
  return f;
}

EegRecording load_recording(const std::filesystem::path& path, int subject_id, const SeizureAnnotations& annotations,
                            const MontageConfig& montage, std::size_t* clamped) {
  const EdfFile file = read_edf_file(path);
  const RecordingHeader& h = file.header;

  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < h.n_signals(); ++i) {
    const auto& label = h.signals[i].label;
    if (std::find(montage.ignore_labels.begin(), montage.ignore_labels.end(), label) == montage.ignore_labels.end()) {
      kept.push_back(i);
    }
  }

  std::vector<std::size_t> order;
  if (montage.canonical_labels.empty()) {
    order = kept;
  } else {
    // Match by label; repeated canonical labels consume repeated file labels in order.
    std::vector<bool> used(h.n_signals(), false);
    for (const auto& want : montage.canonical_labels) {
      for (std::size_t i : kept) {
        if (!used[i] && h.signals[i].label == want) {
          used[i] = true;
          order.push_back(i);
          break;
        }
      }
    }
    for (std::size_t i : kept) {
      if (!used[i]) throw ParseError(path.string() + ": signal label '" + h.signals[i].label + "' is not in the montage");
    }
  }
  if (order.size() != kChannelCount && order.size() != kChannelCount - 1) {
    throw ParseError(path.string() + ": " + std::to_string(order.size()) + " usable channels, need 22 or 23");
  }

  const int spr = h.signals[order.front()].samples_per_record;
  for (std::size_t i : order) {
    if (h.signals[i].samples_per_record != spr) throw ParseError(path.string() + ": mixed sampling rates");
  }
  const std::size_t len = static_cast<std::size_t>(spr) * static_cast<std::size_t>(h.n_records);
  Tensor channels({order.size(), len});
  std::size_t clamp_total = 0;
  for (std::size_t row = 0; row < order.size(); ++row) {
    auto sig = decode_samples(h, file.payload, order[row]);
    clamp_total += sig.clamped;
    std::copy(sig.samples.begin(), sig.samples.end(), channels.slice(row).begin());
  }
  if (clamped) *clamped = clamp_total;

  EegRecording rec;
  rec.subject_id = subject_id;
  rec.fs = static_cast<double>(spr) / h.record_duration;
  rec.channels = harmonize_channels(std::move(channels));
  rec.annotations = annotations;
  rec.start_epoch = h.start_datetime.epoch_seconds();
  rec.source = path.string();
  if (!rec.channels.all_finite()) throw ParseError(path.string() + ": non-finite samples");
  for (const auto& iv : annotations.seizure_intervals) {
    if (iv.start < 0 || iv.end > rec.duration() + 1e-9) {
      throw ParseError(path.string() + ": seizure interval outside the recording");
    }
  }
  return rec;
}

}  // namespace seizurecast
