#include "seizurecast/mfcc.hpp"

#include <bit>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

#include "seizurecast/error.hpp"

namespace seizurecast {

double MfccConfig::effective_fmax(double fs) const { return std::min(fmax, fs / 2.0); }

std::size_t MfccConfig::frame_count(std::size_t n_samples) const {
  if (n_samples < frame_len) return 0;
  return (n_samples - frame_len) / hop + 1;
}

void MfccConfig::validate(double fs) const {
  if (!(fs > 0)) throw ConfigError("sampling rate must be positive");
  if (n_banks < 2) throw ConfigError("need at least two mel banks");
  if (n_coeffs == 0 || n_coeffs > n_banks) throw ConfigError("n_coeffs must be in [1, n_banks]");
  if (frame_len == 0 || hop == 0) throw ConfigError("frame_len and hop must be positive");
  if (fft_size < frame_len || !std::has_single_bit(fft_size)) {
    throw ConfigError("fft_size must be a power of two no smaller than frame_len");
  }
  const double top = effective_fmax(fs);
  if (!(fmin >= 0 && fmin < top)) throw ConfigError("mel range requires 0 <= fmin < fmax <= fs/2");
  if (!(log_floor > 0)) throw ConfigError("log_floor must be positive");
}

double hz_to_mel(double hz) { return 1127.0 * std::log1p(hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * std::expm1(mel / 1127.0); }

std::vector<double> periodic_hann(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) {
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  }
  return w;
}

Tensor frame_signal(std::span<const double> channel, const MfccConfig& cfg) {
  if (channel.size() < cfg.frame_len) {
    throw std::invalid_argument("signal of " + std::to_string(channel.size()) + " samples is shorter than one frame");
  }
  const auto w = periodic_hann(cfg.frame_len);
  const std::size_t n = cfg.frame_count(channel.size());
  Tensor frames({n, cfg.frame_len});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < cfg.frame_len; ++j) frames.at(i, j) = channel[i * cfg.hop + j] * w[j];
  }
  return frames;
}

Tensor mel_filterbank(const MfccConfig& cfg, double fs) {
  cfg.validate(fs);
  const std::size_t bins = cfg.fft_size / 2 + 1;
  const double lo = hz_to_mel(cfg.fmin);
  const double hi = hz_to_mel(cfg.effective_fmax(fs));
  std::vector<double> edges(cfg.n_banks + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_banks + 1));
  }
  Tensor fb({cfg.n_banks, bins});
  for (std::size_t b = 0; b < cfg.n_banks; ++b) {
    const double left = edges[b], center = edges[b + 1], right = edges[b + 2];
    for (std::size_t k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * fs / static_cast<double>(cfg.fft_size);
      double v = 0.0;
      if (f > left && f <= center) {
        v = (f - left) / (center - left);
      } else if (f > center && f < right) {
        v = (right - f) / (right - center);
      }
      fb.at(b, k) = v;
    }
  }
  return fb;
}

void fft_inplace(std::vector<std::complex<double>>& a) {
  const std::size_t n = a.size();
  if (!std::has_single_bit(n)) throw std::invalid_argument("fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w(std::cos(ang * static_cast<double>(k)), std::sin(ang * static_cast<double>(k)));
        const auto u = a[i + k];
        const auto v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
      }
    }
  }
}

MfccExtractor::MfccExtractor(MfccConfig cfg, double fs)
    : cfg_(cfg), fs_(fs), hann_(periodic_hann(cfg.frame_len)), filterbank_(mel_filterbank(cfg, fs)),
      dct_({cfg.n_coeffs, cfg.n_banks}) {
  const auto n = static_cast<double>(cfg_.n_banks);
  for (std::size_t k = 0; k < cfg_.n_coeffs; ++k) {
    const double scale = k == 0 ? std::sqrt(1.0 / n) : std::sqrt(2.0 / n);
    for (std::size_t i = 0; i < cfg_.n_banks; ++i) {
      dct_.at(k, i) = scale * std::cos(std::numbers::pi * static_cast<double>(k) * (2.0 * static_cast<double>(i) + 1.0) /
                                       (2.0 * n));
    }
  }
}

Tensor MfccExtractor::channel_coefficients(std::span<const double> channel) const {
  if (channel.size() < cfg_.frame_len) throw std::invalid_argument("channel shorter than one frame");
  std::vector<double> signal(channel.begin(), channel.end());
  if (cfg_.preemphasis != 0.0) {
    for (std::size_t i = signal.size(); i-- > 1;) signal[i] -= cfg_.preemphasis * signal[i - 1];
  }
  const std::size_t frames = cfg_.frame_count(signal.size());
  const std::size_t bins = cfg_.fft_size / 2 + 1;
  Tensor out({frames, cfg_.n_coeffs});
  std::vector<std::complex<double>> buf(cfg_.fft_size);
  std::vector<double> power(bins), logmel(cfg_.n_banks);
  for (std::size_t f = 0; f < frames; ++f) {
    std::fill(buf.begin(), buf.end(), std::complex<double>{});
    for (std::size_t j = 0; j < cfg_.frame_len; ++j) buf[j] = signal[f * cfg_.hop + j] * hann_[j];
    fft_inplace(buf);
    for (std::size_t k = 0; k < bins; ++k) power[k] = std::norm(buf[k]);
    for (std::size_t b = 0; b < cfg_.n_banks; ++b) {
      double e = 0.0;
      for (std::size_t k = 0; k < bins; ++k) e += filterbank_.at(b, k) * power[k];
      logmel[b] = std::log(e + cfg_.log_floor);
    }
    for (std::size_t c = 0; c < cfg_.n_coeffs; ++c) {
      double s = 0.0;
      for (std::size_t b = 0; b < cfg_.n_banks; ++b) s += dct_.at(c, b) * logmel[b];
      out.at(f, c) = s;
    }
  }
  return out;
}

Tensor MfccExtractor::compute(const Tensor& window) const {
  if (window.rank() != 2) throw std::invalid_argument("mfcc input must be a [C x L] window");
  if (!window.all_finite()) throw NumericError("mfcc input contains non-finite samples");
  const std::size_t channels = window.dim(0);
  const std::size_t frames = cfg_.frame_count(window.dim(1));
  if (frames == 0) throw std::invalid_argument("window shorter than one frame");
  Tensor out({channels, cfg_.n_coeffs, frames});
  for (std::size_t c = 0; c < channels; ++c) {
    const Tensor coeffs = channel_coefficients(window.slice(c));
    for (std::size_t f = 0; f < frames; ++f) {
      for (std::size_t k = 0; k < cfg_.n_coeffs; ++k) out.at(c, k, f) = coeffs.at(f, k);
    }
  }
  return out;
}

Tensor mfcc_map(const Tensor& window, const MfccConfig& cfg, double fs) { return MfccExtractor(cfg, fs).compute(window); }

}  // namespace seizurecast
