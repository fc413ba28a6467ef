#include "mvox/signal.hpp"

#include "mvox/errors.hpp"
#include "mvox/ops.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <tuple>
#include <numbers>
#include <string>

namespace mvox {

void SpectralConfig::validate() const {
  if (n_fft <= 0 || win_length <= 0 || hop_length <= 0)
    throw ConfigError("spectral config: n_fft, win_length and hop_length must be positive");
  if (n_fft % 2 != 0) throw ConfigError("spectral config: n_fft must be even");
  if (win_length > n_fft) throw ConfigError("spectral config: win_length exceeds n_fft");
  if (hop_length > win_length) throw ConfigError("spectral config: hop_length exceeds win_length");
}

Index SpectralConfig::frames(Index length) const {
  if (!center) return length < n_fft ? 0 : (length - n_fft) / hop_length + 1;
  return length % hop_length == 0 ? length / hop_length : length / hop_length + 1;
}

void MelConfig::validate(double sample_rate) const {
  spectral.validate();
  if (n_mels < 1) throw ConfigError("mel config: n_mels must be >= 1");
  if (!(log_floor > 0)) throw ConfigError("mel config: log_floor must be positive");
  const double hi = upper_frequency(sample_rate);
  if (!(f_min >= 0 && f_min < hi && hi <= sample_rate / 2 + 1e-9))
    throw ConfigError("mel config: need 0 <= f_min < f_max <= sample_rate/2");
}

template <typename Scalar>
Tensor<Scalar> to_tensor(const AudioSegment& x) {
  if (x.samples.empty()) throw ContractError("audio segment is empty");
  Array<Scalar> data(x.size());
  for (Index i = 0; i < x.size(); ++i) data[i] = static_cast<Scalar>(x.samples[static_cast<std::size_t>(i)]);
  return Tensor<Scalar>({1, x.size()}, std::move(data));
}

template <typename Scalar>
AudioSegment to_audio(const Tensor<Scalar>& wave, double sample_rate) {
  AudioSegment out;
  out.sample_rate = sample_rate;
  out.samples.resize(static_cast<std::size_t>(wave.size()));
  for (Index i = 0; i < wave.size(); ++i)
    out.samples[static_cast<std::size_t>(i)] =
        static_cast<float>(std::clamp<Scalar>(wave[i], Scalar(-1), Scalar(1)));
  return out;
}

Eigen::ArrayXd hann_window(Index length) {
  Eigen::ArrayXd w(length);
  for (Index n = 0; n < length; ++n)
    w[n] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(n) / static_cast<double>(length));
  return w;
}

namespace {

template <typename Scalar>
Eigen::FFT<Scalar>& half_fft() {
  thread_local Eigen::FFT<Scalar> fft = [] {
    Eigen::FFT<Scalar> f;
    f.SetFlag(Eigen::FFT<Scalar>::HalfSpectrum);
    return f;
  }();
  return fft;
}

template <typename Scalar>
Eigen::FFT<Scalar>& full_fft() {
  thread_local Eigen::FFT<Scalar> fft;
  return fft;
}

// Windowed DFT of `frames` frames taken every `hop` samples from an already
// padded [1,P] signal.
template <typename Scalar>
Tensor<Scalar> frames_dft(const Tensor<Scalar>& padded, const SpectralConfig& cfg, Index frames) {
  const Index n = cfg.n_fft, bins = cfg.bins(), hop = cfg.hop_length;
  std::vector<Scalar> window(static_cast<std::size_t>(n), Scalar(0));
  const Eigen::ArrayXd hann = hann_window(cfg.win_length);
  const Index offset = (n - cfg.win_length) / 2;
  for (Index i = 0; i < cfg.win_length; ++i) window[static_cast<std::size_t>(offset + i)] = static_cast<Scalar>(hann[i]);

  Array<Scalar> out(2 * bins * frames);
  std::vector<Scalar> buf(static_cast<std::size_t>(n));
  std::vector<std::complex<Scalar>> spec;
  auto& fft = half_fft<Scalar>();
  const Scalar* p = padded.ptr();
  for (Index f = 0; f < frames; ++f) {
    for (Index i = 0; i < n; ++i) buf[static_cast<std::size_t>(i)] = p[f * hop + i] * window[static_cast<std::size_t>(i)];
    fft.fwd(spec, buf);
    for (Index k = 0; k < bins; ++k) {
      out[k * frames + f] = spec[static_cast<std::size_t>(k)].real();
      out[(bins + k) * frames + f] = spec[static_cast<std::size_t>(k)].imag();
    }
  }
  auto in = padded.impl();
  return make_result<Scalar>(
      {2, bins, frames}, std::move(out), {padded}, "stft",
      [in, window, n, bins, hop, frames](const Array<Scalar>& g) {
        auto& gp = in->grad_buffer();
        auto& fft = full_fft<Scalar>();
        std::vector<std::complex<Scalar>> freq(static_cast<std::size_t>(n)), time;
        for (Index f = 0; f < frames; ++f) {
          std::fill(freq.begin(), freq.end(), std::complex<Scalar>(0));
          for (Index k = 0; k < bins; ++k)
            freq[static_cast<std::size_t>(k)] = {g[k * frames + f], g[(bins + k) * frames + f]};
          fft.inv(time, freq);  // (1/n) sum_k G_k e^{+i 2 pi k t / n}
          const Scalar scale_n = static_cast<Scalar>(n);
          for (Index i = 0; i < n; ++i)
            gp[f * hop + i] += scale_n * time[static_cast<std::size_t>(i)].real() * window[static_cast<std::size_t>(i)];
        }
      });
}

}  // namespace

template <typename Scalar>
Tensor<Scalar> stft(const Tensor<Scalar>& x, const SpectralConfig& cfg) {
  cfg.validate();
  const Tensor<Scalar> row = x.ndim() == 1 ? x.reshaped({1, x.size()}) : x;
  if (row.ndim() != 2 || row.dim(0) != 1)
    throw DimensionError("stft: expected a mono [1,T] signal, got " + shape_string(x.shape()));
  const Index length = row.dim(1);
  if (length < cfg.hop_length)
    throw ContractError("stft: signal of " + std::to_string(length) +
                        " samples is shorter than one hop (" + std::to_string(cfg.hop_length) + ")");
  const Index frames = cfg.frames(length);
  if (frames < 1) throw ContractError("stft: signal shorter than n_fft without centering");
  const Tensor<Scalar> padded = cfg.center ? pad_reflect(row, cfg.n_fft / 2, cfg.n_fft / 2) : row;
  return frames_dft(padded, cfg, frames);
}

template <typename Scalar>
Tensor<Scalar> magnitude(const Tensor<Scalar>& spectrum, double eps) {
  if (spectrum.ndim() != 3 || spectrum.dim(0) != 2)
    throw DimensionError("magnitude: expected [2,F,M] spectrum, got " + shape_string(spectrum.shape()));
  const Index bins = spectrum.dim(1), frames = spectrum.dim(2), plane = bins * frames;
  const auto re = spectrum.data().head(plane);
  const auto im = spectrum.data().tail(plane);
  Array<Scalar> mag = (re.square() + im.square() + static_cast<Scalar>(eps)).sqrt();
  auto in = spectrum.impl();
  Array<Scalar> mag_copy = mag;
  return make_result<Scalar>({bins, frames}, std::move(mag), {spectrum}, "magnitude",
                             [in, mag = std::move(mag_copy), plane](const Array<Scalar>& g) {
                               auto& gs = in->grad_buffer();
                               const Array<Scalar> gm = g / mag;
                               gs.head(plane) += gm * in->data.head(plane);
                               gs.tail(plane) += gm * in->data.tail(plane);
                             });
}

// Slaney scale: linear below 1 kHz, logarithmic above.
double hz_to_mel(double hz) {
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0, min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return hz < min_log_hz ? hz / f_sp : min_log_mel + std::log(hz / min_log_hz) / logstep;
}

double mel_to_hz(double mel) {
  constexpr double f_sp = 200.0 / 3.0, min_log_hz = 1000.0, min_log_mel = min_log_hz / f_sp;
  const double logstep = std::log(6.4) / 27.0;
  return mel < min_log_mel ? mel * f_sp : min_log_hz * std::exp(logstep * (mel - min_log_mel));
}

Eigen::MatrixXd mel_filterbank(const MelConfig& cfg, double sample_rate) {
  cfg.validate(sample_rate);
  const Index bins = cfg.spectral.bins();
  const double lo = hz_to_mel(cfg.f_min), hi = hz_to_mel(cfg.upper_frequency(sample_rate));
  std::vector<double> edges(static_cast<std::size_t>(cfg.n_mels + 2));
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(cfg.n_mels + 1));
  Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(cfg.n_mels, bins);
  for (Index m = 0; m < cfg.n_mels; ++m) {
    const double left = edges[static_cast<std::size_t>(m)], center = edges[static_cast<std::size_t>(m + 1)],
                 right = edges[static_cast<std::size_t>(m + 2)];
    const double enorm = 2.0 / (right - left);
    for (Index k = 0; k < bins; ++k) {
      const double f = static_cast<double>(k) * sample_rate / static_cast<double>(cfg.spectral.n_fft);
      const double rise = (f - left) / (center - left), fall = (right - f) / (right - center);
      fb(m, k) = std::max(0.0, std::min(rise, fall)) * enorm;
    }
    if (fb.row(m).sum() <= 0)
      throw ConfigError("mel filterbank: filter " + std::to_string(m) + " of " +
                        std::to_string(cfg.n_mels) + " covers no FFT bin (n_fft " +
                        std::to_string(cfg.spectral.n_fft) + " too small for this many mels)");
  }
  return fb;
}

namespace {
// Filterbanks are rebuilt for every loss evaluation otherwise.
template <typename Scalar>
Tensor<Scalar> cached_filterbank(const MelConfig& cfg, double sample_rate) {
  using Key = std::tuple<Index, Index, Index, double, double, double>;
  thread_local std::map<Key, Tensor<Scalar>> cache;
  const Key key{cfg.spectral.n_fft, cfg.spectral.win_length, cfg.n_mels, cfg.f_min,
                cfg.upper_frequency(sample_rate), sample_rate};
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;
  const Eigen::MatrixXd fb = mel_filterbank(cfg, sample_rate);
  Array<Scalar> fb_data(fb.size());
  MatrixMap<Scalar>(fb_data.data(), fb.rows(), fb.cols()) = fb.cast<Scalar>();
  return cache.emplace(key, Tensor<Scalar>({fb.rows(), fb.cols()}, std::move(fb_data))).first->second;
}
}  // namespace

template <typename Scalar>
Tensor<Scalar> mel_spectrogram(const Tensor<Scalar>& x, const MelConfig& cfg, double sample_rate) {
  cfg.validate(sample_rate);
  const Tensor<Scalar> filters = cached_filterbank<Scalar>(cfg, sample_rate);
  const Tensor<Scalar> mel = matmul(filters, magnitude(stft(x, cfg.spectral)));
  return log(clamp_min(mel, static_cast<Scalar>(cfg.log_floor)));
}

Tensor<float> mel_spectrogram(const AudioSegment& x, const MelConfig& cfg) {
  NoGradGuard no_grad;
  return mel_spectrogram(to_tensor<float>(x), cfg, x.sample_rate);
}

AudioSegment normalize_audio(const std::vector<float>& samples, double sample_rate) {
  if (samples.empty()) throw ContractError("normalize_audio: empty input");
  float peak = 0.0f;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!std::isfinite(samples[i]))
      throw DataError("normalize_audio: non-finite sample at index " + std::to_string(i));
    peak = std::max(peak, std::abs(samples[i]));
  }
  AudioSegment out{samples, sample_rate};
  if (peak > 0.0f)
    for (float& s : out.samples) s /= peak;
  return out;
}

const std::vector<double>& halfband_taps() {
  static const std::vector<double> taps = [] {
    constexpr int per_phase = 12;
    constexpr double beta = 8.0;
    constexpr int length = 2 * per_phase + 1;
    constexpr int center = per_phase;
    const double i0_beta = std::cyl_bessel_i(0.0, beta);
    std::vector<double> h(length);
    for (int n = 0; n < length; ++n) {
      const double t = n - center;
      const double sinc = t == 0 ? 1.0 : std::sin(std::numbers::pi * 0.5 * t) / (std::numbers::pi * 0.5 * t);
      const double r = t / center;
      const double kaiser = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / i0_beta;
      h[static_cast<std::size_t>(n)] = 0.5 * sinc * kaiser;
    }
    // Normalize each polyphase branch to 1/2 so both output phases of the
    // interpolator, and the decimator, pass DC with unit gain.
    double even = 0, odd = 0;
    for (int n = 0; n < length; ++n) ((n - center) % 2 == 0 ? even : odd) += h[static_cast<std::size_t>(n)];
    for (int n = 0; n < length; ++n) h[static_cast<std::size_t>(n)] *= 0.5 / ((n - center) % 2 == 0 ? even : odd);
    return h;
  }();
  return taps;
}

template <typename Scalar>
Tensor<Scalar> resample2x(const Tensor<Scalar>& x, ResampleDirection direction) {
  if (x.ndim() != 2) throw DimensionError("resample2x: expected [C,T], got " + shape_string(x.shape()));
  const auto& h = halfband_taps();
  const Index half = static_cast<Index>(h.size() / 2);
  if (direction == ResampleDirection::Down) {
    if (x.dim(1) % 2 != 0)
      throw ContractError("resample2x: downsampling needs an even time axis, got " + std::to_string(x.dim(1)));
    return depthwise_fir(x, h, 2, half, half);
  }
  std::vector<double> up(h);
  for (double& v : up) v *= 2.0;
  // Replicate-pad the low-rate signal, zero-stuff, then filter; the pad of
  // half/2 input samples lines the filter center up with output sample 0.
  const Index pad = half / 2;
  const Tensor<Scalar> padded = depthwise_fir(x, {1.0}, 1, pad, pad);
  const Tensor<Scalar> stuffed = zero_stuff(padded, 2);
  const Tensor<Scalar> filtered = depthwise_fir(stuffed, up, 1, 0, 0);
  return slice(filtered, 1, 2 * pad - half, 2 * x.dim(1));
}

template Tensor<float> to_tensor(const AudioSegment&);
template Tensor<double> to_tensor(const AudioSegment&);
template AudioSegment to_audio(const Tensor<float>&, double);
template AudioSegment to_audio(const Tensor<double>&, double);
template Tensor<float> stft(const Tensor<float>&, const SpectralConfig&);
template Tensor<double> stft(const Tensor<double>&, const SpectralConfig&);
template Tensor<float> magnitude(const Tensor<float>&, double);
template Tensor<double> magnitude(const Tensor<double>&, double);
template Tensor<float> mel_spectrogram(const Tensor<float>&, const MelConfig&, double);
template Tensor<double> mel_spectrogram(const Tensor<double>&, const MelConfig&, double);
template Tensor<float> resample2x(const Tensor<float>&, ResampleDirection);
template Tensor<double> resample2x(const Tensor<double>&, ResampleDirection);

}  // namespace mvox
