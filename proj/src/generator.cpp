#include "mvox/generator.hpp"

#include "mvox/errors.hpp"
#include "mvox/ops.hpp"

#include <cmath>

namespace mvox {

const char* to_string(BottleneckMode mode) { return mode == BottleneckMode::QL ? "QL" : "Z"; }

BottleneckMode parse_bottleneck_mode(const std::string& text) {
  if (text == "QL" || text == "ql") return BottleneckMode::QL;
  if (text == "Z" || text == "z") return BottleneckMode::Z;
  throw ConfigError("unknown bottleneck mode '" + text + "' (expected QL or Z)");
}

void AMPBlockConfig::validate() const {
  if (channels < 1) throw ConfigError("AMP block: channels must be positive");
  if (dilations.empty()) throw ConfigError("AMP block: dilations must be non-empty");
  for (Index d : dilations)
    if (d < 1) throw ConfigError("AMP block: dilations must be positive");
  if (kernel < 1 || kernel % 2 == 0) throw ConfigError("AMP block: kernel must be odd and positive");
}

template <typename Scalar>
AMPBlock<Scalar>::AMPBlock(ParameterStore<Scalar>& store, const std::string& prefix, const AMPBlockConfig& cfg)
    : cfg_(cfg) {
  cfg_.validate();
  const Index c = cfg_.channels;
  for (std::size_t i = 0; i < cfg_.dilations.size(); ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    Conv1dOptions dilated;
    dilated.dilation = cfg_.dilations[i];
    Conv1dOptions closing;
    closing.init = Init::Zeros;
    branches_.push_back({Snake<Scalar>(store, p + ".act1", c), Snake<Scalar>(store, p + ".act2", c),
                         Conv1d<Scalar>(store, p + ".conv1", c, c, cfg_.kernel, dilated),
                         Conv1d<Scalar>(store, p + ".conv2", c, c, cfg_.kernel, closing)});
  }
}

template <typename Scalar>
Tensor<Scalar> AMPBlock<Scalar>::activate(const Snake<Scalar>& act, const Tensor<Scalar>& x) const {
  if (!cfg_.use_resampling) return act(x);
  return resample2x(act(resample2x(x, ResampleDirection::Up)), ResampleDirection::Down);
}

template <typename Scalar>
Tensor<Scalar> AMPBlock<Scalar>::operator()(const Tensor<Scalar>& x) const {
  if (x.ndim() != 2 || x.dim(0) != cfg_.channels)
    throw DimensionError("AMP block: expected [" + std::to_string(cfg_.channels) + ", T] input, got " +
                         shape_string(x.shape()));
  Tensor<Scalar> y = x;
  for (const auto& b : branches_) y = y + b.conv2(activate(b.act2, b.conv1(activate(b.act1, y))));
  return y;
}

void GeneratorConfig::validate() const {
  codec.validate();
  mel.validate(codec.sample_rate);
  if (encoder_channels < 1) throw ConfigError("generator: encoder_channels must be positive");
  if (amp_blocks < 0) throw ConfigError("generator: amp_blocks must be non-negative");
  AMPBlockConfig a = amp;
  a.channels = encoder_channels;
  a.validate();
  if (hop() != codec.hop())
    throw ConfigError("generator: latent hop " + std::to_string(hop()) + " (2 x mel hop) differs from the codec hop " +
                      std::to_string(codec.hop()));
}

Index GeneratorConfig::bottleneck_width() const {
  return mode == BottleneckMode::QL ? codec.ql_width() : codec.latent_dim;
}

GeneratorConfig GeneratorConfig::tiny(BottleneckMode mode) {
  GeneratorConfig c;
  c.mode = mode;
  c.encoder_channels = 32;
  c.amp_blocks = 2;
  c.codec = CodecConfig::desk();
  return c;
}

GeneratorConfig GeneratorConfig::paper(BottleneckMode mode, int size_millions) {
  GeneratorConfig c;
  c.mode = mode;
  c.codec = CodecConfig::paper();
  c.amp_blocks = 8;
  if (size_millions == 220) {
    c.encoder_channels = 1056;
  } else if (size_millions == 430) {
    c.encoder_channels = 1592;
  } else {
    throw ConfigError("paper preset size must be 220 or 430 (million parameters)");
  }
  return c;
}

template <typename Scalar>
GeneratorModel<Scalar>::GeneratorModel(const GeneratorConfig& cfg, bool allocate)
    : cfg_(cfg), store_(cfg.seed, allocate) {
  cfg_.validate();
  const Index c0 = cfg_.encoder_channels;
  AMPBlockConfig amp = cfg_.amp;
  amp.channels = c0;
  input_ = Conv1d<Scalar>(store_, "encoder.input", cfg_.mel.n_mels, c0, 7);
  const Index n_pre = cfg_.amp_blocks / 2;
  for (Index i = 0; i < n_pre; ++i) pre_.emplace_back(store_, "encoder.pre." + std::to_string(i), amp);
  Conv1dOptions stride2;
  stride2.stride = 2;
  stride2.padding = Padding::Zero;
  stride2.zero_padding = 1;
  down_ = Conv1d<Scalar>(store_, "encoder.down", c0, c0, 4, stride2);
  for (Index i = n_pre; i < cfg_.amp_blocks; ++i)
    post_.emplace_back(store_, "encoder.post." + std::to_string(i - n_pre), amp);
  final_act_ = Snake<Scalar>(store_, "encoder.final_act", c0);
  proj_ = Conv1d<Scalar>(store_, "encoder.proj", c0, cfg_.bottleneck_width(), 1);
  Conv1dOptions zero;
  zero.init = Init::Zeros;
  skip_proj_ = Conv1d<Scalar>(store_, "skip.proj", c0, cfg_.codec.latent_dim, 1, zero);
  decoder_ = DacDecoder<Scalar>(store_, "decoder", cfg_.codec.latent_dim, cfg_.codec.decoder_channels,
                                cfg_.codec.decoder_rates);
  set_decoder_frozen(true);
}

template <typename Scalar>
typename GeneratorModel<Scalar>::EncoderOutput GeneratorModel<Scalar>::encode(const Tensor<Scalar>& mel) const {
  if (mel.ndim() != 2 || mel.dim(0) != cfg_.mel.n_mels)
    throw DimensionError("generator encoder: expected [" + std::to_string(cfg_.mel.n_mels) + ", Tm] mel, got " +
                         shape_string(mel.shape()));
  if (mel.dim(1) % 2 != 0)
    throw ContractError("generator encoder: mel frame count " + std::to_string(mel.dim(1)) + " is odd");
  EncoderOutput out;
  out.first_conv_out = input_(mel);
  Tensor<Scalar> y = out.first_conv_out;
  for (const auto& b : pre_) y = b(y);
  y = down_(y);
  for (const auto& b : post_) y = b(y);
  out.latent = proj_(final_act_(y));
  return out;
}

template <typename Scalar>
Tensor<Scalar> GeneratorModel<Scalar>::skip_pool(const Tensor<Scalar>& first_conv_out) const {
  if (!skip_enabled_) throw StateError("skip_pool: the skip connection is disabled");
  return skip_proj_(avg_pool1d(first_conv_out, 2, 2));
}

template <typename Scalar>
Tensor<Scalar> GeneratorModel<Scalar>::decoder_input(const Tensor<Scalar>& latent) const {
  if (cfg_.mode == BottleneckMode::Z) return latent;
  const Index k = cfg_.codec.codebook_dim;
  if (up_proj_.empty()) throw StateError("QL generator: teacher projections are not loaded");
  if (latent.ndim() != 2 || latent.dim(0) != k * static_cast<Index>(up_proj_.size()))
    throw DimensionError("QL generator: latent " + shape_string(latent.shape()) + " does not match " +
                         std::to_string(up_proj_.size()) + " codebooks of dim " + std::to_string(k));
  Tensor<Scalar> z;
  for (std::size_t i = 0; i < up_proj_.size(); ++i) {
    const Tensor<Scalar> part = matmul(up_proj_[i], slice(latent, 0, static_cast<Index>(i) * k, k));
    z = z.defined() ? z + part : part;
  }
  return z;
}

template <typename Scalar>
GeneratorOutput<Scalar> GeneratorModel<Scalar>::forward_mel(const Tensor<Scalar>& mel) const {
  const EncoderOutput enc = encode(mel);
  GeneratorOutput<Scalar> out;
  out.latent = enc.latent;
  out.decoder_input = decoder_input(enc.latent);
  if (skip_enabled_) out.decoder_input = out.decoder_input + skip_pool(enc.first_conv_out);
  out.audio = decoder_(out.decoder_input);
  return out;
}

template <typename Scalar>
GeneratorOutput<Scalar> GeneratorModel<Scalar>::forward(const Tensor<Scalar>& wave) const {
  const Tensor<Scalar> row = wave.ndim() == 1 ? wave.reshaped({1, wave.size()}) : wave;
  if (row.ndim() != 2 || row.dim(0) != 1)
    throw DimensionError("generator: expected mono [1,T] audio, got " + shape_string(row.shape()));
  if (row.dim(1) % cfg_.hop() != 0)
    throw ContractError("generator: length " + std::to_string(row.dim(1)) + " is not a multiple of " +
                        std::to_string(cfg_.hop()));
  return forward_mel(mel_spectrogram(row, cfg_.mel, cfg_.codec.sample_rate));
}

template <typename Scalar>
AudioSegment GeneratorModel<Scalar>::infer(const AudioSegment& x) const {
  if (x.samples.empty()) throw ContractError("generator: empty input");
  NoGradGuard no_grad;
  const Index t = x.size(), hop = cfg_.hop();
  Tensor<Scalar> wave = to_tensor<Scalar>(x);
  if (t % hop != 0) wave = concat<Scalar>({wave, Tensor<Scalar>::zeros({1, hop - t % hop})}, 1);
  Tensor<Scalar> y = forward(wave).audio;
  if (y.dim(1) != t) y = slice(y, 1, 0, t);
  return to_audio(y, x.sample_rate);
}

template <typename Scalar>
AudioSegment GeneratorModel<Scalar>::infer_mel(const Tensor<float>& mel) const {
  NoGradGuard no_grad;
  Tensor<Scalar> m(mel.shape(), mel.data().template cast<Scalar>().eval());
  return to_audio(forward_mel(m).audio, cfg_.codec.sample_rate);
}

template <typename Scalar>
ShapeChain GeneratorModel<Scalar>::shape_chain(Index samples) const {
  if (samples % cfg_.hop() != 0)
    throw ContractError("shape chain: length " + std::to_string(samples) + " is not a multiple of " +
                        std::to_string(cfg_.hop()));
  ShapeChain s;
  const Index tm = cfg_.mel.spectral.frames(samples);
  s.mel = {cfg_.mel.n_mels, tm};
  Index t = input_.output_length(tm);
  t = down_.output_length(t);
  t = proj_.output_length(t);
  s.latent = {cfg_.bottleneck_width(), t};
  s.decoder_input = {cfg_.codec.latent_dim, t};
  s.output = {1, decoder_.output_length(t)};
  return s;
}

template <typename Scalar>
void GeneratorModel<Scalar>::set_teacher_projections(const std::vector<Tensor<Scalar>>& down_proj) {
  const Index d = cfg_.codec.latent_dim, k = cfg_.codec.codebook_dim;
  if (static_cast<Index>(down_proj.size()) != cfg_.codec.codebooks)
    throw DimensionError("teacher projections: expected " + std::to_string(cfg_.codec.codebooks) + " stages, got " +
                         std::to_string(down_proj.size()));
  up_proj_.clear();
  for (const auto& p : down_proj) {
    if (p.shape() != Shape{k, d})
      throw DimensionError("teacher projection has shape " + shape_string(p.shape()) + ", expected " +
                           shape_string({k, d}));
    Tensor<Scalar> up({d, k});
    for (Index i = 0; i < d; ++i)
      for (Index a = 0; a < k; ++a) up.data()[i * k + a] = p[a * d + i];
    up_proj_.push_back(up);
  }
}

template <typename Scalar>
std::size_t GeneratorModel<Scalar>::load_decoder(const std::vector<TensorRecord>& records,
                                                 const std::string& from_prefix) {
  const bool frozen = decoder_frozen();
  const std::size_t n = store_.load_state(records, from_prefix, "decoder.");
  std::size_t expected = 0;
  for (const auto& p : store_.params()) expected += p.name.rfind("decoder.", 0) == 0;
  if (n != expected)
    throw DimensionError("decoder load: matched " + std::to_string(n) + " of " + std::to_string(expected) +
                         " decoder tensors");
  set_decoder_frozen(frozen);
  return n;
}

template <typename Scalar>
void GeneratorModel<Scalar>::load_from_codec(const CodecModel<Scalar>& codec) {
  const CodecConfig& c = codec.config();
  if (c.latent_dim != cfg_.codec.latent_dim || c.decoder_channels != cfg_.codec.decoder_channels ||
      c.decoder_rates != cfg_.codec.decoder_rates || c.codebooks != cfg_.codec.codebooks ||
      c.codebook_dim != cfg_.codec.codebook_dim)
    throw ConfigError("generator and codec disagree on decoder or quantizer geometry");
  load_decoder(codec.store().state(), "decoder.");
  std::vector<Tensor<Scalar>> downs;
  for (const auto& st : codec.rvq().stages) downs.push_back(st.down_proj);
  set_teacher_projections(downs);
}

template <typename Scalar>
void GeneratorModel<Scalar>::set_decoder_frozen(bool frozen) {
  store_.set_frozen("decoder.", frozen);
}

template <typename Scalar>
bool GeneratorModel<Scalar>::decoder_frozen() const {
  for (const auto& p : store_.params())
    if (p.name.rfind("decoder.", 0) == 0) return p.frozen;
  return false;
}

template <typename Scalar>
void GeneratorModel<Scalar>::enable_skip() {
  if (store_.allocating()) {
    skip_proj_.weight.data().setZero();
    if (skip_proj_.bias.defined()) skip_proj_.bias.data().setZero();
  }
  skip_enabled_ = true;
}

template <typename Scalar>
std::vector<TensorRecord> GeneratorModel<Scalar>::buffers() const {
  std::vector<TensorRecord> out;
  for (std::size_t i = 0; i < up_proj_.size(); ++i) {
    TensorRecord r;
    r.name = "teacher.up_proj." + std::to_string(i);
    r.dtype = sizeof(Scalar) == 4 ? DType::F32 : DType::F64;
    r.shape = up_proj_[i].shape();
    r.values = up_proj_[i].data().template cast<double>();
    out.push_back(std::move(r));
  }
  return out;
}

template <typename Scalar>
void GeneratorModel<Scalar>::load_buffers(const std::vector<TensorRecord>& records) {
  std::vector<Tensor<Scalar>> ups;
  for (Index i = 0;; ++i) {
    const std::string name = "teacher.up_proj." + std::to_string(i);
    const TensorRecord* found = nullptr;
    for (const auto& r : records)
      if (r.name == name) found = &r;
    if (!found) break;
    ups.emplace_back(found->shape, found->values.template cast<Scalar>().eval());
  }
  if (ups.empty()) return;
  const Index d = cfg_.codec.latent_dim, k = cfg_.codec.codebook_dim;
  if (static_cast<Index>(ups.size()) != cfg_.codec.codebooks)
    throw DimensionError("checkpoint holds " + std::to_string(ups.size()) + " teacher projections, expected " +
                         std::to_string(cfg_.codec.codebooks));
  for (const auto& u : ups)
    if (u.shape() != Shape{d, k}) throw DimensionError("teacher projection has shape " + shape_string(u.shape()));
  up_proj_ = std::move(ups);
}

template class AMPBlock<float>;
template class AMPBlock<double>;
template class GeneratorModel<float>;
template class GeneratorModel<double>;

}  // namespace mvox
