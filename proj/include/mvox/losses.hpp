#pragma once

#include "mvox/signal.hpp"
#include "mvox/tensor.hpp"

#include <string>
#include <vector>

namespace mvox {

struct LossWeights {
  double wav = 1.0;
  double dac = 15.0;
  double mel = 15.0;
  double stft = 1.0;
  double gen = 1.0;
  double feat = 2.0;

  void validate() const;
};

// Scale family for the multi-scale spectral losses and metrics. For the
// STFT kind only the spectral part of each entry is used.
struct MultiScaleConfig {
  std::vector<MelConfig> scales;

  void validate(double sample_rate) const;
  // FFT/window 2048..128, hop = window/4, mel bins 160/128/64/32/16.
  static MultiScaleConfig full();
  // 2048, 1024, 512 members of full().
  static MultiScaleConfig desk();
};

enum class SpecKind { Mel, Stft };

template <typename Scalar>
Tensor<Scalar> loss_waveform(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat);

// Throws ContractError when the teacher side would receive gradient.
template <typename Scalar>
Tensor<Scalar> loss_latent_align(const Tensor<Scalar>& enc_out, const Tensor<Scalar>& teacher_latent);

// Sum over scales of mean |psi_c(x) - psi_c(x_hat)|; psi is log-mel or
// linear STFT magnitude. The target x is evaluated without gradient.
template <typename Scalar>
Tensor<Scalar> loss_multiscale_spec(const Tensor<Scalar>& x, const Tensor<Scalar>& x_hat,
                                    const MultiScaleConfig& cfg, SpecKind kind, double sample_rate);

// Logits are flattened over every sub-discriminator of every type.
template <typename Scalar>
Tensor<Scalar> loss_adv_generator(const std::vector<Tensor<Scalar>>& fake_logits);

template <typename Scalar>
Tensor<Scalar> loss_adv_discriminator(const std::vector<Tensor<Scalar>>& real_logits,
                                      const std::vector<Tensor<Scalar>>& fake_logits);

// features[i][j] is layer j of sub-discriminator i. N_j is the channel
// count (leading axis) of the layer. Real features are detached.
template <typename Scalar>
Tensor<Scalar> loss_feature_matching(const std::vector<std::vector<Tensor<Scalar>>>& real_features,
                                     const std::vector<std::vector<Tensor<Scalar>>>& fake_features);

template <typename Scalar>
struct LossComponents {
  Tensor<Scalar> wav, dac, mel, stft, gen, feat;  // dac may be undefined when its weight is 0
};

template <typename Scalar>
Tensor<Scalar> loss_total(const LossComponents<Scalar>& c, const LossWeights& w);

}  // namespace mvox
