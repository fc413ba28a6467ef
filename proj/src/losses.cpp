#include "mvox/losses.hpp"

#include "mvox/errors.hpp"
#include "mvox/ops.hpp"

#include <cmath>
#include <set>

namespace mvox {

void LossWeights::validate() const {
  for (double v : {wav, dac, mel, stft, gen, feat})
    if (!std::isfinite(v) || v < 0) throw ConfigError("loss weights must be finite and non-negative");
}

void MultiScaleConfig::validate(double sample_rate) const {
  if (scales.empty()) throw ConfigError("multi-scale config: no scales");
  std::set<Index> sizes;
  for (const auto& s : scales) {
    s.validate(sample_rate);
    if (!sizes.insert(s.spectral.n_fft).second)
      throw ConfigError("multi-scale config: duplicate FFT size " + std::to_string(s.spectral.n_fft));
  }
}

MultiScaleConfig MultiScaleConfig::full() {
  MultiScaleConfig cfg;
  const Index sizes[] = {2048, 1024, 512, 256, 128};
  const Index mels[] = {160, 128, 64, 32, 16};
  for (int i = 0; i < 5; ++i) {
    MelConfig m;
    m.spectral = {sizes[i], sizes[i], sizes[i] / 4, true};
    m.n_mels = mels[i];
    cfg.scales.push_back(m);
  }
  return cfg;
}

MultiScaleConfig MultiScaleConfig::desk() {
  MultiScaleConfig cfg = full();
  cfg.scales.resize(3);
  return cfg;
}

namespace {
template <typename Scalar>
void require_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* what) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(what) + ": shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
}

template <typename Scalar>
Tensor<Scalar> spectral_view(const Tensor<Scalar>& x, const MelConfig& cfg, SpecKind kind, double sample_rate) {
  return kind == SpecKind::Mel ? mel_spectrogram(x, cfg, sample_rate) : magnitude(stft(x, cfg.spectral));
}
}  // namespace

template <typename Scalar>
Tensor<Scalar> loss_waveform(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat) {
  require_same_shape(x, x_hat, "waveform loss");
  return mean(abs(x - x_hat));
}

template <typename Scalar>
Tensor<Scalar> loss_latent_align(const Tensor<Scalar>& enc_out, const Tensor<Scalar>& teacher_latent) {
  require_same_shape(enc_out, teacher_latent, "latent alignment loss");
  if (teacher_latent.requires_grad())
    throw ContractError("latent alignment loss: teacher latent must not require gradient");
  return mean(abs(enc_out - teacher_latent));
}

template <typename Scalar>
Tensor<Scalar> loss_multiscale_spec(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat,
                                    const MultiScaleConfig& cfg, SpecKind kind, double sample_rate) {
  require_same_shape(x, x_hat, "multi-scale spectral loss");
  if (cfg.scales.empty()) throw ConfigError("multi-scale config: no scales");
  Tensor<Scalar> total;
  for (const auto& scale : cfg.scales) {
    Tensor<Scalar> target;
    {
      NoGradGuard no_grad;
      target = spectral_view(x.detach(), scale, kind, sample_rate);
    }
    const Tensor<Scalar> term = mean(abs(spectral_view(x_hat, scale, kind, sample_rate) - target));
    total = total.defined() ? total + term : term;
  }
  return total;
}

template <typename Scalar>
Tensor<Scalar> loss_adv_generator(const std::vector<Tensor<Scalar>>& fake_logits) {
  if (fake_logits.empty()) throw ContractError("generator adversarial loss: no sub-discriminator outputs");
  Tensor<Scalar> total;
  for (std::size_t i = 0; i < fake_logits.size(); ++i) {
    if (!fake_logits[i].defined())
      throw ContractError("generator adversarial loss: sub-discriminator " + std::to_string(i) + " has no output");
    const Tensor<Scalar> term = mean(square(add_scalar(scale(fake_logits[i], Scalar(-1)), Scalar(1))));
    total = total.defined() ? total + term : term;
  }
  return total;
}

template <typename Scalar>
Tensor<Scalar> loss_adv_discriminator(const std::vector<Tensor<Scalar>>& real_logits,
                                      const std::vector<Tensor<Scalar>>& fake_logits) {
  if (real_logits.empty() || real_logits.size() != fake_logits.size())
    throw ContractError("discriminator loss: got " + std::to_string(real_logits.size()) + " real and " +
                        std::to_string(fake_logits.size()) + " fake sub-discriminator outputs");
  Tensor<Scalar> total;
  for (std::size_t i = 0; i < real_logits.size(); ++i) {
    if (!real_logits[i].defined() || !fake_logits[i].defined())
      throw ContractError("discriminator loss: sub-discriminator " + std::to_string(i) + " has no output");
    const Tensor<Scalar> term =
        mean(square(fake_logits[i])) + mean(square(add_scalar(scale(real_logits[i], Scalar(-1)), Scalar(1))));
    total = total.defined() ? total + term : term;
  }
  return total;
}

template <typename Scalar>
Tensor<Scalar> loss_feature_matching(const std::vector<std::vector<Tensor<Scalar>>>& real_features,
                                     const std::vector<std::vector<Tensor<Scalar>>>& fake_features) {
  if (real_features.empty() || real_features.size() != fake_features.size())
    throw ContractError("feature matching: sub-discriminator counts differ");
  Tensor<Scalar> total;
  for (std::size_t i = 0; i < real_features.size(); ++i) {
    if (real_features[i].size() != fake_features[i].size())
      throw ContractError("feature matching: sub-discriminator " + std::to_string(i) + " has " +
                          std::to_string(real_features[i].size()) + " real and " +
                          std::to_string(fake_features[i].size()) + " fake layers");
    for (std::size_t j = 0; j < real_features[i].size(); ++j) {
      const auto& real = real_features[i][j];
      const auto& fake = fake_features[i][j];
      if (real.shape() != fake.shape())
        throw ContractError("feature matching: layer " + std::to_string(j) + " of sub-discriminator " +
                            std::to_string(i) + " has shapes " + shape_string(real.shape()) + " and " +
                            shape_string(fake.shape()));
      const Scalar inv_n = Scalar(1) / static_cast<Scalar>(real.dim(0));
      const Tensor<Scalar> term = scale(mean(abs(fake - real.detach())), inv_n);
      total = total.defined() ? total + term : term;
    }
  }
  return total;
}

template <typename Scalar>
Tensor<Scalar> loss_total(const LossComponents<Scalar>& c, const LossWeights& w) {
  w.validate();
  const std::pair<const char*, std::pair<const Tensor<Scalar>*, double>> parts[] = {
      {"wav", {&c.wav, w.wav}},    {"dac", {&c.dac, w.dac}}, {"mel", {&c.mel, w.mel}},
      {"stft", {&c.stft, w.stft}}, {"gen", {&c.gen, w.gen}}, {"feat", {&c.feat, w.feat}},
  };
  Tensor<Scalar> total;
  for (const auto& [name, part] : parts) {
    const auto& [t, weight] = part;
    if (!t->defined()) {
      if (weight == 0.0) continue;
      throw ContractError(std::string("loss total: component '") + name + "' is missing");
    }
    if (t->size() != 1) throw DimensionError(std::string("loss total: component '") + name + "' is not scalar");
    if (!std::isfinite(static_cast<double>(t->item())))
      throw NumericError(std::string("loss total: component '") + name + "' is not finite");
    if (weight == 0.0) continue;
    const Tensor<Scalar> term = scale(*t, static_cast<Scalar>(weight));
    total = total.defined() ? total + term : term;
  }
  return total.defined() ? total : Tensor<Scalar>::scalar(Scalar(0));
}

#define MVOX_INSTANTIATE_LOSSES(S)                                                                         \
  template Tensor<S> loss_waveform(const Tensor<S>&, const Tensor<S>&);                                    \
  template Tensor<S> loss_latent_align(const Tensor<S>&, const Tensor<S>&);                                \
  template Tensor<S> loss_multiscale_spec(const Tensor<S>&, const Tensor<S>&, const MultiScaleConfig&,     \
                                          SpecKind, double);                                               \
  template Tensor<S> loss_adv_generator(const std::vector<Tensor<S>>&);                                    \
  template Tensor<S> loss_adv_discriminator(const std::vector<Tensor<S>>&, const std::vector<Tensor<S>>&); \
  template Tensor<S> loss_feature_matching(const std::vector<std::vector<Tensor<S>>>&,                     \
                                           const std::vector<std::vector<Tensor<S>>>&);                    \
  template Tensor<S> loss_total(const LossComponents<S>&, const LossWeights&);

MVOX_INSTANTIATE_LOSSES(float)
MVOX_INSTANTIATE_LOSSES(double)

}  // namespace mvox
