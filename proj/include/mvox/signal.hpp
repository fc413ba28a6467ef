#pragma once

#include "mvox/tensor.hpp"

#include <Eigen/Core>

#include <vector>

namespace mvox {

struct SpectralConfig {
  Index n_fft = 1024;
  Index win_length = 1024;
  Index hop_length = 256;
  bool center = true;

  void validate() const;
  Index bins() const { return n_fft / 2 + 1; }
  // Frame count for a signal of `length` samples. With center padding the
  // frame count is len/hop for hop-divisible lengths and floor(len/hop)+1
  // otherwise.
  Index frames(Index length) const;
};

struct MelConfig {
  SpectralConfig spectral;
  Index n_mels = 128;
  double f_min = 0.0;
  double f_max = 0.0;  // 0 selects Nyquist
  double log_floor = 1e-5;

  void validate(double sample_rate) const;
  double upper_frequency(double sample_rate) const { return f_max > 0 ? f_max : sample_rate / 2; }
};

struct AudioSegment {
  std::vector<float> samples;
  double sample_rate = 44100.0;

  Index size() const { return static_cast<Index>(samples.size()); }
};

template <typename Scalar>
Tensor<Scalar> to_tensor(const AudioSegment& x);  // [1, T], no gradient
template <typename Scalar>
AudioSegment to_audio(const Tensor<Scalar>& wave, double sample_rate);  // clamps to [-1, 1]

// Periodic Hann window of win_length samples.
Eigen::ArrayXd hann_window(Index length);

// Complex STFT of a [1,T] or [T] signal as [2, bins, frames]: channel 0
// holds real parts, channel 1 imaginary parts. Differentiable; the backward
// pass is the exact adjoint of the forward map.
template <typename Scalar>
Tensor<Scalar> stft(const Tensor<Scalar>& x, const SpectralConfig& cfg);

// sqrt(re^2 + im^2 + eps) of a [2,F,M] spectrum -> [F,M].
template <typename Scalar>
Tensor<Scalar> magnitude(const Tensor<Scalar>& spectrum, double eps = 1e-9);

// Triangular filters on the Slaney mel scale with Slaney area
// normalization, [n_mels, n_fft/2+1]. Throws ConfigError when a filter
// covers no FFT bin.
Eigen::MatrixXd mel_filterbank(const MelConfig& cfg, double sample_rate);

double hz_to_mel(double hz);
double mel_to_hz(double mel);

// log(max(filterbank * |STFT(x)|, log_floor)) -> [n_mels, frames].
template <typename Scalar>
Tensor<Scalar> mel_spectrogram(const Tensor<Scalar>& x, const MelConfig& cfg, double sample_rate);
Tensor<float> mel_spectrogram(const AudioSegment& x, const MelConfig& cfg);

// Peak normalization; throws DataError on non-finite samples.
AudioSegment normalize_audio(const std::vector<float>& samples, double sample_rate = 44100.0);

enum class ResampleDirection { Up, Down };

// Half-band Kaiser-windowed sinc taps used by resample2x.
const std::vector<double>& halfband_taps();

// Anti-aliased 2x resampling of [C,T] with edge-replicated borders.
template <typename Scalar>
Tensor<Scalar> resample2x(const Tensor<Scalar>& x, ResampleDirection direction);

}  // namespace mvox
