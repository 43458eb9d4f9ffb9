#include <cmath>
#include <random>

#include "doctest.h"
#include "seizurecast/cli.hpp"
#include "seizurecast/edf.hpp"
#include "seizurecast/error.hpp"
#include "synth.hpp"

using namespace seizurecast;
using namespace seizurecast::testing;

namespace {

RecordingHeader two_signal_header() {
  RecordingHeader h;
  h.version = "0";
  h.patient_id = "chb99";
  h.recording_id = "Startdate 01-JAN-2001";
  h.start_datetime = {2001, 1, 1, 11, 42, 54};
  h.n_records = 3;
  h.record_duration = 1.0;
  SignalHeader a;
  a.label = "FP1-F7";
  a.physical_dimension = "uV";
  a.physical_min = -100;
  a.physical_max = 100;
  a.digital_min = -32768;
  a.digital_max = 32767;
  a.samples_per_record = 4;
  SignalHeader b = a;
  b.label = "F7-T7";
  b.physical_min = -3276.8;
  b.physical_max = 3276.7;
  b.digital_min = -2048;
  b.digital_max = 2047;
  b.samples_per_record = 2;
  h.signals = {a, b};
  h.header_bytes = 256 * 3;
  return h;
}

}  // namespace

TEST_CASE("two-signal header round-trips through the test writer") {
  const auto h = two_signal_header();
  std::vector<std::vector<std::int16_t>> codes = {{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}, {-5, 5, -2048, 2047, 0, 1}};
  const auto bytes = encode_edf(h, codes);
  const auto parsed = parse_edf_header(bytes);
  CHECK(parsed == h);
  CHECK(parsed.n_signals() == 2);
  const std::span<const std::uint8_t> payload(bytes.data() + 768, bytes.size() - 768);
  CHECK(decode_digital(parsed, payload, 0) == codes[0]);
  CHECK(decode_digital(parsed, payload, 1) == codes[1]);
}

TEST_CASE("n_signals field with trailing spaces decodes") {
  auto bytes = encode_edf(two_signal_header(), std::vector<std::vector<std::int16_t>>{std::vector<std::int16_t>(12),
                                                                                      std::vector<std::int16_t>(6)});
  CHECK(std::string(bytes.begin() + 252, bytes.begin() + 256) == "2   ");
  CHECK(parse_edf_header(bytes).n_signals() == 2);
}

TEST_CASE("header errors") {
  auto h = two_signal_header();
  std::vector<std::vector<std::int16_t>> codes = {std::vector<std::int16_t>(12), std::vector<std::int16_t>(6)};
  auto bytes = encode_edf(h, codes);

  SUBCASE("unknown record count") {
    const std::string neg = "-1      ";
    std::copy(neg.begin(), neg.end(), bytes.begin() + 236);
    CHECK_THROWS_AS(parse_edf_header(bytes), ParseError);
  }
  SUBCASE("truncated main header") {
    CHECK_THROWS_AS(parse_edf_header(std::span(bytes.data(), 200)), ParseError);
  }
  SUBCASE("truncated signal headers") {
    CHECK_THROWS_AS(parse_edf_header(std::span(bytes.data(), 600)), ParseError);
  }
  SUBCASE("non-numeric field") {
    const std::string junk = "abc     ";
    std::copy(junk.begin(), junk.end(), bytes.begin() + 244);
    CHECK_THROWS_AS(parse_edf_header(bytes), ParseError);
  }
  SUBCASE("zero signals") {
    const std::string zero = "0   ";
    std::copy(zero.begin(), zero.end(), bytes.begin() + 252);
    CHECK_THROWS_AS(parse_edf_header(bytes), ParseError);
  }
  SUBCASE("inverted digital range") {
    h.signals[0].digital_min = 10;
    h.signals[0].digital_max = 10;
    CHECK_THROWS_AS(parse_edf_header(encode_edf(h, codes)), ParseError);
  }
  SUBCASE("empty physical range") {
    h.signals[1].physical_max = h.signals[1].physical_min;
    CHECK_THROWS_AS(parse_edf_header(encode_edf(h, codes)), ParseError);
  }
}

TEST_CASE("affine decode") {
  SignalHeader s;
  s.physical_min = -100;
  s.physical_max = 100;
  s.digital_min = -32768;
  s.digital_max = 32767;
  CHECK(digital_to_physical(s, s.digital_min) == s.physical_min);
  CHECK(digital_to_physical(s, s.digital_max) == s.physical_max);
  // -100 + 32768 * 200 / 65535
  CHECK(digital_to_physical(s, 0) == doctest::Approx(-100.0 + 32768.0 * 200.0 / 65535.0).epsilon(1e-15));
  CHECK(digital_to_physical(s, 0) == doctest::Approx(0.0015259).epsilon(1e-4));
  double prev = -1e300;
  for (int d = -32768; d <= 32767; d += 97) {
    const double p = digital_to_physical(s, d);
    CHECK(p > prev);
    prev = p;
  }
}

TEST_CASE("decode clamps out-of-range codes and counts them") {
  auto h = two_signal_header();
  std::vector<std::vector<std::int16_t>> codes = {std::vector<std::int16_t>(12), {-3000, 3000, 0, 0, 2047, -2048}};
  const auto bytes = encode_edf(h, codes);
  const std::span<const std::uint8_t> payload(bytes.data() + 768, bytes.size() - 768);
  const auto d = decode_samples(h, payload, 1);
  CHECK(d.clamped == 2);
  CHECK(d.samples[0] == h.signals[1].physical_min);
  CHECK(d.samples[1] == h.signals[1].physical_max);
  CHECK(d.samples[4] == h.signals[1].physical_max);
  CHECK_THROWS_AS(decode_samples(h, payload.subspan(2), 1), ParseError);
}

TEST_CASE("randomized write-then-parse") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 20; ++i) {
    const auto r = random_edf(rng);
    const auto bytes = encode_edf(r.header, r.codes);
    const auto h = parse_edf_header(bytes);
    REQUIRE(h == r.header);
    const std::span<const std::uint8_t> payload(bytes.data() + h.header_bytes, bytes.size() - h.header_bytes);
    for (std::size_t s = 0; s < h.n_signals(); ++s) {
      REQUIRE(decode_digital(h, payload, s) == r.codes[s]);
      const auto d = decode_samples(h, payload, s);
      for (std::size_t k = 0; k < d.samples.size(); ++k) {
        const int code = std::clamp<int>(r.codes[s][k], h.signals[s].digital_min, h.signals[s].digital_max);
        REQUIRE(d.samples[k] == digital_to_physical(h.signals[s], code));
      }
    }
  }
}

TEST_CASE("summary parsing") {
  SUBCASE("zero seizures") {
    const auto a = parse_summary("File Name: chb01_01.edf\nNumber of Seizures in File: 0\n");
    REQUIRE(a.size() == 1);
    CHECK(a[0].file_name == "chb01_01.edf");
    CHECK(a[0].seizure_intervals.empty());
  }
  SUBCASE("one seizure") {
    const auto a = parse_summary(
        "File Name: chb01_03.edf\nFile Start Time: 13:43:04\nFile End Time: 14:43:04\n"
        "Number of Seizures in File: 1\nSeizure Start Time: 2996 seconds\nSeizure End Time: 3036 seconds\n");
    REQUIRE(a.size() == 1);
    REQUIRE(a[0].seizure_intervals.size() == 1);
    CHECK(a[0].seizure_intervals[0] == SeizureInterval{2996, 3036});
  }
  SUBCASE("two files written by the test") {
    std::vector<SeizureAnnotations> blocks = {{"chb05_06.edf", {{417, 532}}},
                                              {"chb05_13.edf", {{1086, 1196}, {2000, 2040.5}}}};
    CHECK(parse_summary(format_summary(blocks)) == blocks);
  }
  SUBCASE("count mismatch") {
    CHECK_THROWS_AS(parse_summary("File Name: a.edf\nNumber of Seizures in File: 2\n"
                                  "Seizure Start Time: 1 seconds\nSeizure End Time: 5 seconds\n"),
                    ParseError);
  }
  SUBCASE("end before start") {
    CHECK_THROWS_AS(parse_summary("File Name: a.edf\nNumber of Seizures in File: 1\n"
                                  "Seizure Start Time: 10 seconds\nSeizure End Time: 5 seconds\n"),
                    ParseError);
  }
}

TEST_CASE("channel harmonization") {
  Tensor full({23, 5});
  for (std::size_t i = 0; i < full.size(); ++i) full[i] = static_cast<double>(i) * 0.5 - 3;
  CHECK(harmonize_channels(full) == full);
  CHECK(harmonize_channels(harmonize_channels(full)) == full);

  Tensor ones({22, 6}, 1.0);
  const auto h = harmonize_channels(ones);
  REQUIRE(h.dim(0) == 23);
  for (std::size_t k = 0; k < 6; ++k) CHECK(h.at(22, k) == 1.0);

  // Column sums 22, 0, -22, 44.
  Tensor cols({22, 4});
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  const double sums[] = {22, 0, -22, 44};
  for (std::size_t k = 0; k < 4; ++k) {
    double acc = 0;
    for (std::size_t c = 0; c < 21; ++c) acc += cols.at(c, k) = g(rng);
    cols.at(21, k) = sums[k] - acc;
  }
  const auto m = harmonize_channels(cols);
  const double want[] = {1, 0, -1, 2};
  for (std::size_t k = 0; k < 4; ++k) CHECK(m.at(22, k) == doctest::Approx(want[k]).epsilon(1e-12));

  CHECK_THROWS(harmonize_channels(Tensor({21, 3})));
  CHECK_THROWS(harmonize_channels(Tensor({24, 3})));
}

TEST_CASE("load_recording matches montage labels") {
  TempDir dir("edf");
  const auto labels = canonical_labels();
  const int fs = 16;
  Tensor x({23, 32});
  for (std::size_t c = 0; c < 23; ++c) {
    for (std::size_t k = 0; k < 32; ++k) x.at(c, k) = static_cast<double>(c) * 10 + static_cast<double>(k) * 0.1;
  }

  SUBCASE("shuffled file order with ignored channels") {
    // File order: reversed canonical labels plus an ECG channel in the middle.
    std::vector<std::string> file_labels;
    Tensor y({24, 32});
    std::size_t row = 0;
    for (std::size_t c = 23; c-- > 0;) {
      file_labels.push_back(labels[c]);
      std::copy(x.slice(c).begin(), x.slice(c).end(), y.slice(row++).begin());
      if (c == 12) {
        file_labels.push_back("ECG");
        std::fill(y.slice(row).begin(), y.slice(row).end(), 999.0);
        ++row;
      }
    }
    write_eeg_edf(dir / "a.edf", y, fs, file_labels);
    const auto rec = load_recording(dir / "a.edf", 3, {"a.edf", {}}, default_montage());
    CHECK(rec.fs == 16);
    CHECK(rec.subject_id == 3);
    REQUIRE(rec.channels.dim(0) == 23);
    // Duplicate T8-P8 labels are consumed in file order, so rows 14 and 22 swap.
    for (std::size_t c = 0; c < 23; ++c) {
      const std::size_t src = c == 14 ? 22 : c == 22 ? 14 : c;
      for (std::size_t k = 0; k < 32; ++k) CHECK(rec.channels.at(c, k) == doctest::Approx(x.at(src, k)).epsilon(1e-4));
    }
  }
  SUBCASE("22 channels get the average channel") {
    std::vector<std::string> l22(labels.begin(), labels.begin() + 22);
    Tensor y({22, 32});
    std::copy(x.values().begin(), x.values().begin() + 22 * 32, y.data());
    write_eeg_edf(dir / "b.edf", y, fs, l22);
    const auto rec = load_recording(dir / "b.edf", 1, {"b.edf", {}}, default_montage());
    REQUIRE(rec.channels.dim(0) == 23);
    double mean0 = 0;
    for (std::size_t c = 0; c < 22; ++c) mean0 += rec.channels.at(c, 0) / 22.0;
    CHECK(rec.channels.at(22, 0) == doctest::Approx(mean0).epsilon(1e-12));
  }
  SUBCASE("unknown label") {
    auto bad = labels;
    bad[4] = "XYZ";
    write_eeg_edf(dir / "c.edf", x, fs, bad);
    CHECK_THROWS_AS(load_recording(dir / "c.edf", 1, {"c.edf", {}}, default_montage()), ParseError);
  }
  SUBCASE("seizure outside the file") {
    write_eeg_edf(dir / "d.edf", x, fs, labels);
    CHECK_THROWS_AS(load_recording(dir / "d.edf", 1, {"d.edf", {{1, 5}}}, default_montage()), ParseError);
  }
}
