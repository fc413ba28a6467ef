#include "mvox/discriminators.hpp"

#include "mvox/errors.hpp"
#include "mvox/ops.hpp"

#include <cmath>
#include <set>

namespace mvox {

void MPDConfig::validate() const {
  if (periods.size() != 5) throw ConfigError("MPD: exactly 5 periods are required, got " + std::to_string(periods.size()));
  std::set<Index> seen;
  for (Index p : periods) {
    if (p < 1) throw ConfigError("MPD: periods must be positive");
    if (!seen.insert(p).second) throw ConfigError("MPD: duplicate period " + std::to_string(p));
  }
  if (channels.empty()) throw ConfigError("MPD: channel schedule is empty");
  for (Index c : channels)
    if (c < 1) throw ConfigError("MPD: channels must be positive");
  if (kernel < 1 || kernel % 2 == 0 || stride < 1) throw ConfigError("MPD: kernel must be odd, stride positive");
  if (!(slope >= 0 && slope < 1)) throw ConfigError("MPD: leaky-relu slope must lie in [0,1)");
}

void MRSDConfig::validate() const {
  if (resolutions.size() != 3)
    throw ConfigError("MRSD: exactly 3 resolutions are required, got " + std::to_string(resolutions.size()));
  for (const auto& r : resolutions) r.validate();
  if (band_edges.size() < 2 || band_edges.front() != 0.0 || band_edges.back() != 1.0)
    throw ConfigError("MRSD: band edges must start at 0 and end at 1");
  for (std::size_t i = 1; i < band_edges.size(); ++i)
    if (!(band_edges[i] > band_edges[i - 1])) throw ConfigError("MRSD: band edges must be strictly increasing");
  if (channels.empty()) throw ConfigError("MRSD: channel schedule is empty");
  for (Index c : channels)
    if (c < 1) throw ConfigError("MRSD: channels must be positive");
  if (kernel_freq < 1 || kernel_freq % 2 == 0 || kernel_time < 1 || kernel_time % 2 == 0)
    throw ConfigError("MRSD: kernels must be odd and positive");
  if (!(slope >= 0 && slope < 1)) throw ConfigError("MRSD: leaky-relu slope must lie in [0,1)");
}

template <typename Scalar>
void DiscriminatorOutput<Scalar>::append(DiscriminatorOutput&& other) {
  for (auto& l : other.logits) logits.push_back(std::move(l));
  for (auto& f : other.features) features.push_back(std::move(f));
}

template <typename Scalar>
Tensor<Scalar> mpd_fold(const Tensor<Scalar>& wave, Index period) {
  const Tensor<Scalar> row = wave.ndim() == 1 ? wave.reshaped({1, wave.size()}) : wave;
  if (row.ndim() != 2 || row.dim(0) != 1)
    throw DimensionError("mpd_fold: expected mono [1,T], got " + shape_string(row.shape()));
  if (period < 1) throw ConfigError("mpd_fold: period must be positive");
  const Index t = row.dim(1);
  if (t < period)
    throw ContractError("mpd_fold: length " + std::to_string(t) + " is shorter than period " + std::to_string(period));
  const Index pad = (period - t % period) % period;
  const Tensor<Scalar> padded = pad > 0 ? pad_reflect(row, 0, pad) : row;
  return padded.reshaped({1, (t + pad) / period, period});
}

std::vector<std::pair<Index, Index>> band_partition(Index bins, const std::vector<double>& edges) {
  if (bins < 1) throw ConfigError("band partition: no frequency bins");
  if (edges.size() < 2 || edges.front() != 0.0 || edges.back() != 1.0)
    throw ConfigError("band partition: edges must start at 0 and end at 1");
  std::vector<std::pair<Index, Index>> out;
  Index start = 0;
  for (std::size_t i = 1; i < edges.size(); ++i) {
    const Index end = i + 1 == edges.size() ? bins : static_cast<Index>(std::floor(edges[i] * double(bins)));
    if (end <= start)
      throw ConfigError("band partition: band " + std::to_string(i - 1) + " is empty for " + std::to_string(bins) +
                        " bins");
    out.emplace_back(start, end);
    start = end;
  }
  return out;
}

template <typename Scalar>
MultiPeriodDiscriminator<Scalar>::MultiPeriodDiscriminator(ParameterStore<Scalar>& store, const std::string& prefix,
                                                           const MPDConfig& cfg)
    : cfg_(cfg) {
  cfg_.validate();
  for (std::size_t i = 0; i < cfg_.periods.size(); ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    Sub sub;
    sub.period = cfg_.periods[i];
    Index in = 1;
    Conv2dGeometry strided{cfg_.stride, 1, cfg_.kernel / 2, 0};
    for (std::size_t l = 0; l < cfg_.channels.size(); ++l) {
      sub.convs.emplace_back(store, p + ".convs." + std::to_string(l), in, cfg_.channels[l], cfg_.kernel, 1, strided);
      in = cfg_.channels[l];
    }
    Conv2dGeometry same{1, 1, cfg_.kernel / 2, 0};
    sub.convs.emplace_back(store, p + ".convs." + std::to_string(cfg_.channels.size()), in, in, cfg_.kernel, 1, same);
    sub.post = Conv2d<Scalar>(store, p + ".post", in, 1, 3, 1, Conv2dGeometry{1, 1, 1, 0});
    subs_.push_back(std::move(sub));
  }
}

template <typename Scalar>
DiscriminatorOutput<Scalar> MultiPeriodDiscriminator<Scalar>::forward_one(const Tensor<Scalar>& wave,
                                                                          std::size_t index) const {
  const Sub& sub = subs_.at(index);
  const Index t = wave.size();
  if (t == 0) throw ContractError("MPD: empty input");
  Tensor<Scalar> y = mpd_fold(wave, sub.period);
  DiscriminatorOutput<Scalar> out;
  out.features.emplace_back();
  for (const auto& c : sub.convs) {
    y = leaky_relu(c(y), static_cast<Scalar>(cfg_.slope));
    out.features.back().push_back(y);
  }
  y = sub.post(y);
  out.features.back().push_back(y);
  out.logits.push_back(y);
  return out;
}

template <typename Scalar>
DiscriminatorOutput<Scalar> MultiPeriodDiscriminator<Scalar>::operator()(const Tensor<Scalar>& wave) const {
  DiscriminatorOutput<Scalar> out;
  for (std::size_t i = 0; i < subs_.size(); ++i) out.append(forward_one(wave, i));
  return out;
}

template <typename Scalar>
MultiResolutionSpectrogramDiscriminator<Scalar>::MultiResolutionSpectrogramDiscriminator(
    ParameterStore<Scalar>& store, const std::string& prefix, const MRSDConfig& cfg)
    : cfg_(cfg) {
  cfg_.validate();
  const Index kf = cfg_.kernel_freq, kt = cfg_.kernel_time;
  for (std::size_t i = 0; i < cfg_.resolutions.size(); ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    Sub sub;
    sub.spectral = cfg_.resolutions[i];
    sub.bands = band_partition(sub.spectral.bins(), cfg_.band_edges);
    for (std::size_t b = 0; b < sub.bands.size(); ++b) {
      std::vector<Conv2d<Scalar>> convs;
      Index in = 2;
      for (std::size_t l = 0; l < cfg_.channels.size(); ++l) {
        const Conv2dGeometry geo{l == 0 ? 1 : 2, 1, kf / 2, kt / 2};
        convs.emplace_back(store, p + ".bands." + std::to_string(b) + "." + std::to_string(l), in, cfg_.channels[l],
                           kf, kt, geo);
        in = cfg_.channels[l];
      }
      sub.band_convs.push_back(std::move(convs));
    }
    sub.post = Conv2d<Scalar>(store, p + ".post", cfg_.channels.back(), 1, 3, 3, Conv2dGeometry{1, 1, 1, 1});
    subs_.push_back(std::move(sub));
  }
}

template <typename Scalar>
DiscriminatorOutput<Scalar> MultiResolutionSpectrogramDiscriminator<Scalar>::forward_one(const Tensor<Scalar>& wave,
                                                                                         std::size_t index) const {
  const Sub& sub = subs_.at(index);
  const Tensor<Scalar> spec = stft(wave, sub.spectral);  // [2, F, M]
  DiscriminatorOutput<Scalar> out;
  out.features.emplace_back();
  std::vector<Tensor<Scalar>> band_out;
  for (std::size_t b = 0; b < sub.bands.size(); ++b) {
    const auto [start, end] = sub.bands[b];
    Tensor<Scalar> y = slice(spec, 1, start, end - start);
    for (const auto& c : sub.band_convs[b]) {
      y = leaky_relu(c(y), static_cast<Scalar>(cfg_.slope));
      out.features.back().push_back(y);
    }
    band_out.push_back(y);
  }
  const Tensor<Scalar> logits = sub.post(concat(band_out, 1));
  out.features.back().push_back(logits);
  out.logits.push_back(logits);
  return out;
}

template <typename Scalar>
DiscriminatorOutput<Scalar> MultiResolutionSpectrogramDiscriminator<Scalar>::operator()(
    const Tensor<Scalar>& wave) const {
  DiscriminatorOutput<Scalar> out;
  for (std::size_t i = 0; i < subs_.size(); ++i) out.append(forward_one(wave, i));
  return out;
}

template <typename Scalar>
Discriminators<Scalar>::Discriminators(const DiscriminatorConfig& cfg, bool allocate)
    : cfg_(cfg), store_(cfg.seed, allocate) {
  cfg_.validate();
  mpd_ = MultiPeriodDiscriminator<Scalar>(store_, "mpd", cfg_.mpd);
  mrsd_ = MultiResolutionSpectrogramDiscriminator<Scalar>(store_, "mrsd", cfg_.mrsd);
}

template <typename Scalar>
DiscriminatorOutput<Scalar> Discriminators<Scalar>::operator()(const Tensor<Scalar>& wave) const {
  DiscriminatorOutput<Scalar> out = mpd_(wave);
  out.append(mrsd_(wave));
  return out;
}

#define MVOX_INSTANTIATE_DISC(S)                                   \
  template struct DiscriminatorOutput<S>;                          \
  template Tensor<S> mpd_fold(const Tensor<S>&, Index);            \
  template class MultiPeriodDiscriminator<S>;                      \
  template class MultiResolutionSpectrogramDiscriminator<S>;       \
  template class Discriminators<S>;

MVOX_INSTANTIATE_DISC(float)
MVOX_INSTANTIATE_DISC(double)

}  // namespace mvox
