#pragma once

#include "mvox/codec.hpp"
#include "mvox/data.hpp"
#include "mvox/discriminators.hpp"
#include "mvox/generator.hpp"
#include "mvox/losses.hpp"
#include "mvox/optim.hpp"

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace mvox {

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.8;
  double beta2 = 0.99;
  double gamma = 0.9995;
  double clip = 1e3;
  double weight_decay = 0.01;
  double disc_lr_scale = 1.0;  // discriminator lr = lr * scale
  LossWeights weights;
  Index segment_length = 16384;
  Index batch = 4;
  long long stage_switch_step = 100000;
  long long total_steps = 2000000;
  std::uint64_t seed = 0;
  MultiScaleConfig mel_scales = MultiScaleConfig::full();
  MultiScaleConfig stft_scales = MultiScaleConfig::full();

  void validate(Index hop = 512, double sample_rate = 44100.0) const;
  AdamWConfig adamw() const { return {beta1, beta2, 1e-8, weight_decay}; }

  static TrainConfig paper();
  // stage switch 500, 2000 steps, batch 4, three loss scales.
  static TrainConfig desk();
};

struct StepReport {
  long long step = 0;  // index of the step just taken (0-based)
  int stage = 1;
  double lr = 0;
  double wav = 0, mel = 0, stft = 0, gen = 0, feat = 0, total = 0;
  std::optional<double> dac;  // absent once lambda_dac is 0
  double disc = 0;
  double grad_norm_g = 0, grad_norm_d = 0;
  Index items = 0;
  std::vector<std::string> warnings;
};

struct TrainEvent {
  long long step = 0;
  std::string name;
};

// Trainer-owned state that is not a model parameter.
struct TrainState {
  long long step = 0;
  int stage = 1;
  bool transitioned = false;
  double current_lr(const TrainConfig& cfg) const { return decay_lr(cfg.lr, cfg.gamma, step); }
};

// Runs the two-stage adversarial loop over a generator, the discriminator
// set and the frozen teacher codec. Per step: discriminator update, then
// generator update; the stage switch happens at the start of step
// `stage_switch_step`.
template <typename Scalar>
class Trainer {
 public:
  Trainer(GeneratorModel<Scalar>& generator, Discriminators<Scalar>& discriminators, CodecModel<Scalar>& teacher,
          const std::vector<AudioSegment>& dataset, const TrainConfig& cfg);

  StepReport train_step();
  // Switches to stage 2: unfreezes the decoder, sets lambda_dac to 0 and
  // enables the zero-initialized skip. Only valid at the switch step, once.
  void stage_transition();

  const TrainState& state() const { return state_; }
  const TrainConfig& config() const { return cfg_; }
  const LossWeights& active_weights() const { return weights_; }
  const std::vector<TrainEvent>& events() const { return events_; }
  GeneratorModel<Scalar>& generator() { return *gen_; }
  Discriminators<Scalar>& discriminators() { return *disc_; }

  // Optimizer moments ("opt_g.*", "opt_d.*") and a JSON-able summary.
  std::vector<TensorRecord> optimizer_state() const;
  void restore(const TrainState& state, const std::vector<TensorRecord>& optimizer_records);

  // Segments for one step, derived only from (seed, step, item).
  std::vector<AudioSegment> sample_batch(long long step, std::vector<std::string>* warnings = nullptr) const;

 private:
  void apply_stage(int stage);

  GeneratorModel<Scalar>* gen_;
  Discriminators<Scalar>* disc_;
  CodecModel<Scalar>* teacher_;
  const std::vector<AudioSegment>* data_;
  TrainConfig cfg_;
  LossWeights weights_;
  TrainState state_;
  AdamW<Scalar> opt_g_, opt_d_;
  std::vector<TrainEvent> events_;
};

// Target for the latent alignment loss: z_q in Z mode, the concatenated
// codebook entries in QL mode. Computed without gradient.
template <typename Scalar>
Tensor<Scalar> teacher_latent(CodecModel<Scalar>& teacher, const Tensor<Scalar>& wave, BottleneckMode mode);

// One manifest line (JSON) for a step report or an event.
std::string manifest_line(const StepReport& r);
std::string manifest_line(const TrainEvent& e);

}  // namespace mvox
