#include "mvox/data.hpp"

#include "mvox/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace mvox {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

std::optional<AudioSegment> sample_segment(const AudioSegment& clip, Index length, std::mt19937_64& rng) {
  if (length < 1) throw ConfigError("segment length must be positive");
  if (clip.size() < length) return std::nullopt;
  const auto range = static_cast<std::uint64_t>(clip.size() - length) + 1;
  const auto offset = static_cast<std::size_t>(rng() % range);
  AudioSegment out;
  out.sample_rate = clip.sample_rate;
  out.samples.assign(clip.samples.begin() + static_cast<std::ptrdiff_t>(offset),
                     clip.samples.begin() + static_cast<std::ptrdiff_t>(offset) + length);
  return out;
}

void SyntheticDatasetSpec::validate() const {
  if (n_clips < 1) throw ConfigError("synthetic dataset: n_clips must be >= 1");
  if (!(clip_seconds > 0) || !(sample_rate > 0)) throw ConfigError("synthetic dataset: bad duration or rate");
  if (min_voices < 0 || max_voices < min_voices) throw ConfigError("synthetic dataset: bad voice range");
  if (!(min_f0 > 0) || max_f0 < min_f0 || max_f0 >= sample_rate / 2)
    throw ConfigError("synthetic dataset: bad f0 range");
  if (percussive_rate < 0 || noise_floor < 0) throw ConfigError("synthetic dataset: negative rate or noise");
}

namespace {
struct Rng {
  std::mt19937_64 engine;
  double uniform() { return static_cast<double>(engine() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double gaussian() {
    const double u1 = uniform() + 0x1.0p-54, u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }
};
}  // namespace

AudioSegment synth_clip(const SyntheticDatasetSpec& spec, Index index) {
  spec.validate();
  Rng rng{std::mt19937_64(derive_seed(spec.seed, static_cast<std::uint64_t>(index), 1))};
  const double sr = spec.sample_rate;
  const auto n = static_cast<std::size_t>(std::llround(spec.clip_seconds * sr));
  std::vector<double> y(n, 0.0);
  const double two_pi = 2.0 * std::numbers::pi;

  const int voices = spec.min_voices + static_cast<int>(rng.engine() % static_cast<std::uint64_t>(
                                                            spec.max_voices - spec.min_voices + 1));
  for (int v = 0; v < voices; ++v) {
    // A voice plays a run of notes with attack/decay envelopes and vibrato.
    const double rolloff = rng.uniform(0.7, 2.0);
    const double level = rng.uniform(0.3, 1.0);
    const double vib_rate = rng.uniform(3.0, 7.0), vib_depth = rng.uniform(0.0, 0.006);
    std::size_t start = 0;
    while (start < n) {
      const auto dur = static_cast<std::size_t>(rng.uniform(0.12, 0.6) * sr);
      const double f0 = spec.min_f0 * std::pow(spec.max_f0 / spec.min_f0, rng.uniform());
      const int harmonics = std::max(1, static_cast<int>(std::min(12.0, 0.45 * sr / f0)));
      const double attack = rng.uniform(0.002, 0.04), decay = rng.uniform(1.5, 8.0);
      std::vector<double> amps(static_cast<std::size_t>(harmonics)), phases(amps.size());
      for (int h = 0; h < harmonics; ++h) {
        amps[static_cast<std::size_t>(h)] = std::pow(h + 1.0, -rolloff) * rng.uniform(0.5, 1.0);
        phases[static_cast<std::size_t>(h)] = rng.uniform(0.0, two_pi);
      }
      double phase = 0.0;
      const std::size_t end = std::min(n, start + dur);
      for (std::size_t i = start; i < end; ++i) {
        const double t = static_cast<double>(i - start) / sr;
        const double env = std::min(1.0, t / attack) * std::exp(-decay * t);
        phase += two_pi * f0 * (1.0 + vib_depth * std::sin(two_pi * vib_rate * static_cast<double>(i) / sr)) / sr;
        double s = 0.0;
        for (int h = 0; h < harmonics; ++h)
          s += amps[static_cast<std::size_t>(h)] * std::sin((h + 1) * phase + phases[static_cast<std::size_t>(h)]);
        y[i] += level * env * s;
      }
      start = end;
    }
  }

  // Exponentially decaying broadband bursts at Poisson onsets.
  if (spec.percussive_rate > 0) {
    double t = -std::log(1.0 - rng.uniform()) / spec.percussive_rate;
    while (t < spec.clip_seconds) {
      const auto onset = static_cast<std::size_t>(t * sr);
      const double amp = rng.uniform(0.5, 1.5), tau = rng.uniform(0.01, 0.08);
      double lp = 0.0;
      const double smooth = rng.uniform(0.0, 0.8);
      for (std::size_t i = onset; i < n && i < onset + static_cast<std::size_t>(6 * tau * sr); ++i) {
        lp = smooth * lp + (1.0 - smooth) * rng.gaussian();
        y[i] += amp * std::exp(-static_cast<double>(i - onset) / (tau * sr)) * lp;
      }
      t += -std::log(1.0 - rng.uniform()) / spec.percussive_rate;
    }
  }

  std::vector<float> samples(n);
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  const double gain = peak > 0 ? 0.9 / peak : 0.0;
  for (std::size_t i = 0; i < n; ++i)
    samples[i] = static_cast<float>(gain * y[i] + spec.noise_floor * rng.gaussian());
  return normalize_audio(samples, sr);
}

std::vector<AudioSegment> synth_dataset(const SyntheticDatasetSpec& spec) {
  spec.validate();
  std::vector<AudioSegment> out;
  out.reserve(static_cast<std::size_t>(spec.n_clips));
  for (Index i = 0; i < spec.n_clips; ++i) out.push_back(synth_clip(spec, i));
  return out;
}

double spectral_flux(const AudioSegment& x) {
  NoGradGuard no_grad;
  const SpectralConfig cfg;
  const Tensor<double> mag = magnitude(stft(to_tensor<double>(x), cfg));
  const Index bins = mag.dim(0), frames = mag.dim(1);
  if (frames < 2) return 0.0;
  double flux = 0.0;
  for (Index f = 1; f < frames; ++f)
    for (Index k = 0; k < bins; ++k) flux += std::max(0.0, mag[k * frames + f] - mag[k * frames + f - 1]);
  return flux / static_cast<double>(frames - 1);
}

}  // namespace mvox
