#pragma once

#include <complex>
#include <span>
#include <vector>

#include "seizurecast/tensor.hpp"

namespace seizurecast {

// MFCC front end. The defaults turn a 10 s window at 256 Hz (2560 samples)
// into 201 frames of 13 coefficients.
struct MfccConfig {
  std::size_t n_banks = 13;
  std::size_t n_coeffs = 13;
  double fmin = 0.0;
  double fmax = 256.0;  // requested; clamped to fs/2
  std::size_t frame_len = 160;
  std::size_t hop = 12;
  std::size_t fft_size = 256;
  double preemphasis = 0.0;
  double log_floor = 1e-10;

  double effective_fmax(double fs) const;
  std::size_t frame_count(std::size_t n_samples) const;
  void validate(double fs) const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// Periodic Hann window: w[n] = 0.5 - 0.5 cos(2 pi n / N).
std::vector<double> periodic_hann(std::size_t n);

// Frame i covers samples [i*hop, i*hop + frame_len), Hann-windowed.
Tensor frame_signal(std::span<const double> channel, const MfccConfig& cfg);

// Triangular filters, centers equally spaced on the mel scale, sampled at the
// rfft bin frequencies k * fs / fft_size. Shape [n_banks x fft_size/2 + 1].
Tensor mel_filterbank(const MfccConfig& cfg, double fs);

// In-place iterative radix-2 FFT; size must be a power of two.
void fft_inplace(std::vector<std::complex<double>>& data);

// Reusable extractor: window, filterbank, DCT basis and FFT buffers are
// computed once.
class MfccExtractor {
 public:
  MfccExtractor(MfccConfig cfg, double fs);

  const MfccConfig& config() const { return cfg_; }
  double fs() const { return fs_; }
  const Tensor& filterbank() const { return filterbank_; }

  // [n_frames x n_coeffs] for a single channel.
  Tensor channel_coefficients(std::span<const double> channel) const;
  // [C x n_coeffs x n_frames] for a [C x L] window.
  Tensor compute(const Tensor& window) const;

 private:
  MfccConfig cfg_;
  double fs_;
  std::vector<double> hann_;
  Tensor filterbank_;
  Tensor dct_;  // [n_coeffs x n_banks], orthonormal DCT-II rows
};

Tensor mfcc_map(const Tensor& window, const MfccConfig& cfg, double fs = 256.0);

}  // namespace seizurecast
