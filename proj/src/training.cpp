#include "mvox/training.hpp"

#include "mvox/errors.hpp"
#include "mvox/ops.hpp"

#include <json.hpp>

#include <cmath>

namespace mvox {

void TrainConfig::validate(Index hop, double sample_rate) const {
  if (!(lr > 0) || !std::isfinite(lr)) throw ConfigError("train: lr must be positive");
  if (!(gamma > 0 && gamma <= 1)) throw ConfigError("train: gamma must lie in (0, 1]");
  if (!(clip > 0) || !std::isfinite(clip)) throw ConfigError("train: clip threshold must be positive");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw ConfigError("train: betas must lie in [0, 1)");
  if (!(weight_decay >= 0) || !(disc_lr_scale > 0)) throw ConfigError("train: bad weight decay or lr scale");
  if (segment_length < 1 || segment_length % hop != 0)
    throw ConfigError("train: segment_length " + std::to_string(segment_length) + " is not a positive multiple of " +
                      std::to_string(hop));
  if (batch < 1) throw ConfigError("train: batch must be positive");
  if (stage_switch_step < 0 || total_steps < 0) throw ConfigError("train: step counts must be non-negative");
  weights.validate();
  mel_scales.validate(sample_rate);
  stft_scales.validate(sample_rate);
}

TrainConfig TrainConfig::paper() { return {}; }

TrainConfig TrainConfig::desk() {
  TrainConfig c;
  c.lr = 5e-4;
  c.stage_switch_step = 500;
  c.total_steps = 2000;
  c.batch = 4;
  c.mel_scales = MultiScaleConfig::desk();
  c.stft_scales = MultiScaleConfig::desk();
  return c;
}

template <typename Scalar>
Tensor<Scalar> teacher_latent(CodecModel<Scalar>& teacher, const Tensor<Scalar>& wave, BottleneckMode mode) {
  NoGradGuard no_grad;
  auto q = teacher.quantize(teacher.encode(wave.detach()));
  return mode == BottleneckMode::QL ? q.ql.detach() : q.z_q.detach();
}

template <typename Scalar>
Trainer<Scalar>::Trainer(GeneratorModel<Scalar>& generator, Discriminators<Scalar>& discriminators,
                         CodecModel<Scalar>& teacher, const std::vector<AudioSegment>& dataset,
                         const TrainConfig& cfg)
    : gen_(&generator),
      disc_(&discriminators),
      teacher_(&teacher),
      data_(&dataset),
      cfg_(cfg),
      weights_(cfg.weights),
      opt_g_(generator.store(), cfg.adamw()),
      opt_d_(discriminators.store(), cfg.adamw()) {
  cfg_.validate(generator.config().hop(), generator.config().codec.sample_rate);
  if (dataset.empty()) throw ConfigError("train: empty dataset");
  teacher.store().set_frozen("", true);
  apply_stage(1);
}

template <typename Scalar>
void Trainer<Scalar>::apply_stage(int stage) {
  state_.stage = stage;
  if (stage == 1) {
    gen_->set_decoder_frozen(true);
    gen_->restore_skip(false);
    weights_.dac = cfg_.weights.dac;
  } else {
    gen_->set_decoder_frozen(false);
    weights_.dac = 0.0;
  }
}

template <typename Scalar>
void Trainer<Scalar>::stage_transition() {
  if (state_.transitioned || state_.stage == 2) throw StateError("stage transition already happened");
  if (state_.step != cfg_.stage_switch_step)
    throw StateError("stage transition requested at step " + std::to_string(state_.step) + ", expected " +
                     std::to_string(cfg_.stage_switch_step));
  apply_stage(2);
  gen_->enable_skip();
  state_.transitioned = true;
  events_.push_back({state_.step, "stage_transition"});
}

template <typename Scalar>
std::vector<AudioSegment> Trainer<Scalar>::sample_batch(long long step, std::vector<std::string>* warnings) const {
  std::vector<AudioSegment> out;
  const auto n = static_cast<std::uint64_t>(data_->size());
  for (Index b = 0; b < cfg_.batch; ++b) {
    std::mt19937_64 rng(derive_seed(cfg_.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b)));
    const std::size_t clip = static_cast<std::size_t>(rng() % n);
    auto seg = sample_segment((*data_)[clip], cfg_.segment_length, rng);
    if (!seg) {
      if (warnings)
        warnings->push_back("clip " + std::to_string(clip) + " shorter than " + std::to_string(cfg_.segment_length) +
                            " samples skipped");
      continue;
    }
    out.push_back(std::move(*seg));
  }
  return out;
}

template <typename Scalar>
StepReport Trainer<Scalar>::train_step() {
  if (state_.stage == 1 && state_.step == cfg_.stage_switch_step) stage_transition();

  StepReport r;
  r.step = state_.step;
  r.stage = state_.stage;
  r.lr = state_.current_lr(cfg_);
  const auto batch = sample_batch(state_.step, &r.warnings);
  if (batch.empty())
    throw DataError("step " + std::to_string(state_.step) + ": no clip is long enough for a training segment");
  r.items = static_cast<Index>(batch.size());
  const Scalar inv_b = Scalar(1) / static_cast<Scalar>(batch.size());
  const double sr = gen_->config().codec.sample_rate;
  const BottleneckMode mode = gen_->config().mode;
  const bool with_dac = weights_.dac != 0.0;

  auto context = [&](const std::string& what) {
    return "stage " + std::to_string(state_.stage) + ", step " + std::to_string(state_.step) + ": " + what;
  };

  // Generator forward with graph, kept for the generator update.
  std::vector<Tensor<Scalar>> reals;
  std::vector<GeneratorOutput<Scalar>> fakes;
  for (const auto& seg : batch) {
    reals.push_back(to_tensor<Scalar>(seg));
    fakes.push_back(gen_->forward(reals.back()));
  }

  // (a) discriminator update on detached generator output.
  disc_->store().zero_grad();
  double disc_total = 0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto real = (*disc_)(reals[i]);
    const auto fake = (*disc_)(fakes[i].audio.detach());
    const Tensor<Scalar> l = loss_adv_discriminator(real.logits, fake.logits);
    const double v = static_cast<double>(l.item());
    if (!std::isfinite(v)) throw NumericError(context("discriminator loss is not finite"));
    disc_total += v;
    backward(scale(l, inv_b));
  }
  try {
    r.grad_norm_d = clip_gradients(disc_->store(), cfg_.clip);
    opt_d_.step(r.lr * cfg_.disc_lr_scale);
  } catch (const NumericError& e) {
    throw NumericError(context(e.what()));
  }
  r.disc = disc_total / static_cast<double>(batch.size());

  // (b) generator update against the updated discriminators.
  gen_->store().zero_grad();
  disc_->store().set_requires_grad(false);
  try {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Tensor<Scalar>& x = reals[i];
      const Tensor<Scalar>& y = fakes[i].audio;
      DiscriminatorOutput<Scalar> real;
      {
        NoGradGuard no_grad;
        real = (*disc_)(x);
      }
      const auto fake = (*disc_)(y);
      LossComponents<Scalar> c;
      c.wav = loss_waveform(x, y);
      if (with_dac) c.dac = loss_latent_align(fakes[i].latent, teacher_latent(*teacher_, x, mode));
      c.mel = loss_multiscale_spec(x, y, cfg_.mel_scales, SpecKind::Mel, sr);
      c.stft = loss_multiscale_spec(x, y, cfg_.stft_scales, SpecKind::Stft, sr);
      c.gen = loss_adv_generator(fake.logits);
      c.feat = loss_feature_matching(real.features, fake.features);
      const Tensor<Scalar> total = loss_total(c, weights_);
      r.wav += static_cast<double>(c.wav.item());
      if (with_dac) r.dac = r.dac.value_or(0.0) + static_cast<double>(c.dac.item());
      r.mel += static_cast<double>(c.mel.item());
      r.stft += static_cast<double>(c.stft.item());
      r.gen += static_cast<double>(c.gen.item());
      r.feat += static_cast<double>(c.feat.item());
      r.total += static_cast<double>(total.item());
      backward(scale(total, inv_b));
    }
    r.grad_norm_g = clip_gradients(gen_->store(), cfg_.clip);
    opt_g_.step(r.lr);
  } catch (const NumericError& e) {
    disc_->store().set_requires_grad(true);
    throw NumericError(context(e.what()));
  }
  disc_->store().set_requires_grad(true);

  const double nb = static_cast<double>(batch.size());
  for (double* v : {&r.wav, &r.mel, &r.stft, &r.gen, &r.feat, &r.total}) *v /= nb;
  if (r.dac) *r.dac /= nb;
  ++state_.step;
  return r;
}

template <typename Scalar>
std::vector<TensorRecord> Trainer<Scalar>::optimizer_state() const {
  auto out = opt_g_.state("opt_g.");
  auto d = opt_d_.state("opt_d.");
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

template <typename Scalar>
void Trainer<Scalar>::restore(const TrainState& state, const std::vector<TensorRecord>& optimizer_records) {
  if (state.stage != 1 && state.stage != 2) throw StateError("train state: stage must be 1 or 2");
  if ((state.stage == 2) != (state.step >= cfg_.stage_switch_step && state.transitioned))
    throw StateError("train state: stage " + std::to_string(state.stage) + " is inconsistent with step " +
                     std::to_string(state.step));
  state_ = state;
  apply_stage(state.stage);
  gen_->restore_skip(state.stage == 2);
  opt_g_.load_state(optimizer_records, "opt_g.", state.step);
  opt_d_.load_state(optimizer_records, "opt_d.", state.step);
}

std::string manifest_line(const StepReport& r) {
  nlohmann::ordered_json j;
  j["step"] = r.step;
  j["stage"] = r.stage;
  j["lr"] = r.lr;
  j["wav"] = r.wav;
  if (r.dac) j["dac"] = *r.dac;
  j["mel"] = r.mel;
  j["stft"] = r.stft;
  j["gen"] = r.gen;
  j["feat"] = r.feat;
  j["total"] = r.total;
  j["disc"] = r.disc;
  j["grad_norm_g"] = r.grad_norm_g;
  j["grad_norm_d"] = r.grad_norm_d;
  j["items"] = r.items;
  if (!r.warnings.empty()) j["warnings"] = r.warnings;
  return j.dump();
}

std::string manifest_line(const TrainEvent& e) {
  nlohmann::ordered_json j;
  j["event"] = e.name;
  j["step"] = e.step;
  return j.dump();
}

template class Trainer<float>;
template class Trainer<double>;
template Tensor<float> teacher_latent(CodecModel<float>&, const Tensor<float>&, BottleneckMode);
template Tensor<double> teacher_latent(CodecModel<double>&, const Tensor<double>&, BottleneckMode);

}  // namespace mvox
