#pragma once

#include "mvox/nn.hpp"
#include "mvox/signal.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace mvox {

struct MPDConfig {
  std::vector<Index> periods{2, 3, 5, 7, 11};
  std::vector<Index> channels{4, 8, 16, 16};  // strided layers, then one stride-1 layer at the last width
  Index kernel = 5;
  Index stride = 3;
  double slope = 0.1;

  void validate() const;
  Index layers() const { return static_cast<Index>(channels.size()) + 2; }
};

struct MRSDConfig {
  std::vector<SpectralConfig> resolutions{{2048, 2048, 512, true}, {1024, 1024, 256, true}, {512, 512, 128, true}};
  std::vector<double> band_edges{0.0, 0.1, 0.25, 0.5, 0.75, 1.0};  // fractions of Nyquist
  std::vector<Index> channels{8, 8, 8};  // per band; layers after the first stride 2 along frequency
  Index kernel_freq = 5;
  Index kernel_time = 3;
  double slope = 0.1;

  void validate() const;
  Index bands() const { return static_cast<Index>(band_edges.size()) - 1; }
  Index layers() const { return bands() * static_cast<Index>(channels.size()) + 1; }
};

struct DiscriminatorConfig {
  MPDConfig mpd;
  MRSDConfig mrsd;
  std::uint64_t seed = 2;

  void validate() const { mpd.validate(), mrsd.validate(); }
  static DiscriminatorConfig tiny() { return {}; }
};

template <typename Scalar>
struct DiscriminatorOutput {
  std::vector<Tensor<Scalar>> logits;                 // one per sub-discriminator
  std::vector<std::vector<Tensor<Scalar>>> features;  // [sub][layer], logits included as the last layer

  void append(DiscriminatorOutput&& other);
};

// [1,T] (or [T]) -> [1, ceil(T/p), p], right-padded by reflection.
template <typename Scalar>
Tensor<Scalar> mpd_fold(const Tensor<Scalar>& wave, Index period);

// Half-open [start, end) bin ranges for `bins` frequency bins. Every bin is
// covered exactly once; an empty band is a ConfigError.
std::vector<std::pair<Index, Index>> band_partition(Index bins, const std::vector<double>& edges);

template <typename Scalar>
class MultiPeriodDiscriminator {
 public:
  MultiPeriodDiscriminator() = default;
  MultiPeriodDiscriminator(ParameterStore<Scalar>& store, const std::string& prefix, const MPDConfig& cfg);

  DiscriminatorOutput<Scalar> operator()(const Tensor<Scalar>& wave) const;
  DiscriminatorOutput<Scalar> forward_one(const Tensor<Scalar>& wave, std::size_t index) const;
  std::size_t size() const { return subs_.size(); }

 private:
  struct Sub {
    Index period;
    std::vector<Conv2d<Scalar>> convs;
    Conv2d<Scalar> post;
  };
  MPDConfig cfg_;
  std::vector<Sub> subs_;
};

template <typename Scalar>
class MultiResolutionSpectrogramDiscriminator {
 public:
  MultiResolutionSpectrogramDiscriminator() = default;
  MultiResolutionSpectrogramDiscriminator(ParameterStore<Scalar>& store, const std::string& prefix,
                                          const MRSDConfig& cfg);

  DiscriminatorOutput<Scalar> operator()(const Tensor<Scalar>& wave) const;
  DiscriminatorOutput<Scalar> forward_one(const Tensor<Scalar>& wave, std::size_t index) const;
  std::size_t size() const { return subs_.size(); }

 private:
  struct Sub {
    SpectralConfig spectral;
    std::vector<std::pair<Index, Index>> bands;
    std::vector<std::vector<Conv2d<Scalar>>> band_convs;  // [band][layer]
    Conv2d<Scalar> post;
  };
  MRSDConfig cfg_;
  std::vector<Sub> subs_;
};

// Both discriminator families in one parameter store ("mpd.*", "mrsd.*").
template <typename Scalar>
class Discriminators {
 public:
  explicit Discriminators(const DiscriminatorConfig& cfg, bool allocate = true);
  Discriminators(const Discriminators&) = delete;
  Discriminators& operator=(const Discriminators&) = delete;

  const DiscriminatorConfig& config() const { return cfg_; }
  ParameterStore<Scalar>& store() { return store_; }
  const ParameterStore<Scalar>& store() const { return store_; }
  const MultiPeriodDiscriminator<Scalar>& mpd() const { return mpd_; }
  const MultiResolutionSpectrogramDiscriminator<Scalar>& mrsd() const { return mrsd_; }

  // MPD sub-discriminators first, then MRSD.
  DiscriminatorOutput<Scalar> operator()(const Tensor<Scalar>& wave) const;
  std::size_t size() const { return mpd_.size() + mrsd_.size(); }

 private:
  DiscriminatorConfig cfg_;
  ParameterStore<Scalar> store_;
  MultiPeriodDiscriminator<Scalar> mpd_;
  MultiResolutionSpectrogramDiscriminator<Scalar> mrsd_;
};

}  // namespace mvox
