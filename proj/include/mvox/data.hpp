#pragma once

#include "mvox/signal.hpp"

#include <cstdint>
#include <optional>
#include <random>
#include <vector>

namespace mvox {

// splitmix64 over a seed and two coordinates; used for every derived RNG.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

// Uniform contiguous window of `length` samples, or nullopt when the clip
// is shorter than that.
std::optional<AudioSegment> sample_segment(const AudioSegment& clip, Index length, std::mt19937_64& rng);

struct SyntheticDatasetSpec {
  Index n_clips = 64;
  double clip_seconds = 2.0;
  double sample_rate = 44100.0;
  int min_voices = 1;
  int max_voices = 8;
  double min_f0 = 100.0;
  double max_f0 = 2000.0;
  double percussive_rate = 3.0;  // bursts per second, Poisson
  double noise_floor = 0.003;
  std::uint64_t seed = 0;

  void validate() const;
};

// Clip `index` of the corpus; depends only on (spec, index).
AudioSegment synth_clip(const SyntheticDatasetSpec& spec, Index index);
std::vector<AudioSegment> synth_dataset(const SyntheticDatasetSpec& spec);

// Mean positive spectral flux of |STFT| frames (n_fft 1024, hop 256).
double spectral_flux(const AudioSegment& x);

}  // namespace mvox
