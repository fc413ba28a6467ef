#include "mvox/codec.hpp"

#include "mvox/data.hpp"
#include "mvox/errors.hpp"
#include "mvox/optim.hpp"

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <numeric>

namespace mvox {

void CodecConfig::validate() const {
  if (latent_dim < 1 || codebooks < 1 || codebook_size < 2 || codebook_dim < 1)
    throw ConfigError("codec: latent_dim, codebooks, codebook_dim must be >= 1 and codebook_size >= 2");
  if (codebook_dim > latent_dim) throw ConfigError("codec: codebook_dim exceeds latent_dim");
  if (encoder_strides.empty() || encoder_strides.size() != decoder_rates.size())
    throw ConfigError("codec: encoder strides and decoder rates must be non-empty and of equal count");
  Index up = 1;
  for (Index r : decoder_rates) {
    if (r < 1) throw ConfigError("codec: decoder rates must be >= 1");
    up *= r;
  }
  for (Index s : encoder_strides)
    if (s < 1) throw ConfigError("codec: encoder strides must be >= 1");
  if (up != hop()) throw ConfigError("codec: decoder upsampling must equal encoder stride product");
  if (encoder_channels < 1) throw ConfigError("codec: encoder_channels must be >= 1");
  const Index shrink = Index(1) << decoder_rates.size();
  if (decoder_channels % shrink != 0)
    throw ConfigError("codec: decoder_channels must be divisible by 2^" + std::to_string(decoder_rates.size()));
  if (!(ema_decay > 0 && ema_decay < 1) || dead_threshold < 0 || commitment_weight < 0)
    throw ConfigError("codec: bad EMA decay, dead threshold or commitment weight");
}

Index CodecConfig::hop() const {
  return std::accumulate(encoder_strides.begin(), encoder_strides.end(), Index(1), std::multiplies<>());
}

CodecConfig CodecConfig::desk() { return CodecConfig{}; }

CodecConfig CodecConfig::paper() {
  CodecConfig c;
  c.latent_dim = 1024;
  c.codebooks = 9;
  c.codebook_size = 1024;
  c.codebook_dim = 8;
  c.encoder_channels = 64;
  c.decoder_channels = 1536;
  return c;
}

namespace {
// Transposed conv/strided conv geometry that maps T <-> T*s exactly.
Index resample_kernel(Index s) { return 2 * s - (s % 2); }
Index resample_padding(Index s) { return (resample_kernel(s) - s) / 2; }

// Residual branches start closed so depth does not compound activation
// variance at init.
Conv1dOptions zero_init() {
  Conv1dOptions o;
  o.init = Init::Zeros;
  return o;
}
}  // namespace

template <typename Scalar>
DacDecoder<Scalar>::DacDecoder(ParameterStore<Scalar>& store, const std::string& prefix, Index latent_dim,
                               Index channels, const std::vector<Index>& rates)
    : latent_dim_(latent_dim) {
  input_ = Conv1d<Scalar>(store, prefix + ".input", latent_dim, channels, 7);
  Index width = channels;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    const std::string p = prefix + ".stages." + std::to_string(i);
    const Index s = rates[i], out = width / 2;
    Stage st;
    st.act = Snake<Scalar>(store, p + ".act", width);
    st.up = ConvTranspose1d<Scalar>(store, p + ".up", width, out, resample_kernel(s), s, resample_padding(s));
    const Index dilations[] = {1, 3, 9};
    for (int u = 0; u < 3; ++u) {
      const std::string q = p + ".units." + std::to_string(u);
      Conv1dOptions dil;
      dil.dilation = dilations[u];
      st.units.push_back({Snake<Scalar>(store, q + ".act1", out), Snake<Scalar>(store, q + ".act2", out),
                          Conv1d<Scalar>(store, q + ".conv1", out, out, 7, dil),
                          Conv1d<Scalar>(store, q + ".conv2", out, out, 1, zero_init())});
    }
    stages_.push_back(std::move(st));
    width = out;
  }
  final_act_ = Snake<Scalar>(store, prefix + ".final_act", width);
  output_ = Conv1d<Scalar>(store, prefix + ".output", width, 1, 7);
}

template <typename Scalar>
Tensor<Scalar> DacDecoder<Scalar>::operator()(const Tensor<Scalar>& z) const {
  if (z.ndim() != 2 || z.dim(0) != latent_dim_)
    throw DimensionError("decoder: expected [" + std::to_string(latent_dim_) + ", frames] input, got " +
                         shape_string(z.shape()));
  Tensor<Scalar> y = input_(z);
  for (const auto& st : stages_) {
    y = st.up(st.act(y));
    for (const auto& u : st.units) y = y + u.conv2(u.act2(u.conv1(u.act1(y))));
  }
  return tanh(output_(final_act_(y)));
}

template <typename Scalar>
Index DacDecoder<Scalar>::output_length(Index frames) const {
  Index t = frames;
  for (const auto& st : stages_) t = st.up.output_length(t);
  return t;
}

template <typename Scalar>
CodecEncoder<Scalar>::CodecEncoder(ParameterStore<Scalar>& store, const std::string& prefix,
                                   const CodecConfig& cfg) {
  Index width = cfg.encoder_channels;
  input_ = Conv1d<Scalar>(store, prefix + ".input", 1, width, 7);
  for (std::size_t i = 0; i < cfg.encoder_strides.size(); ++i) {
    const std::string p = prefix + ".stages." + std::to_string(i);
    const Index s = cfg.encoder_strides[i];
    Stage st;
    const Index dilations[] = {1, 3, 9};
    for (int u = 0; u < 3; ++u) {
      const std::string q = p + ".units." + std::to_string(u);
      Conv1dOptions dil;
      dil.dilation = dilations[u];
      st.act1.emplace_back(store, q + ".act1", width);
      st.conv1.emplace_back(store, q + ".conv1", width, width, 7, dil);
      st.act2.emplace_back(store, q + ".act2", width);
      st.conv2.emplace_back(store, q + ".conv2", width, width, 1, zero_init());
    }
    st.act = Snake<Scalar>(store, p + ".act", width);
    Conv1dOptions down;
    down.stride = s;
    down.padding = Padding::Zero;
    down.zero_padding = resample_padding(s);
    st.down = Conv1d<Scalar>(store, p + ".down", width, 2 * width, resample_kernel(s), down);
    stages_.push_back(std::move(st));
    width *= 2;
  }
  final_act_ = Snake<Scalar>(store, prefix + ".final_act", width);
  output_ = Conv1d<Scalar>(store, prefix + ".output", width, cfg.latent_dim, 3);
}

template <typename Scalar>
Tensor<Scalar> CodecEncoder<Scalar>::operator()(const Tensor<Scalar>& wave) const {
  Tensor<Scalar> y = input_(wave);
  for (const auto& st : stages_) {
    for (std::size_t u = 0; u < st.conv1.size(); ++u) y = y + st.conv2[u](st.act2[u](st.conv1[u](st.act1[u](y))));
    y = st.down(st.act(y));
  }
  return output_(final_act_(y));
}

template <typename Scalar>
Index CodecEncoder<Scalar>::output_length(Index length) const {
  Index t = length;
  for (const auto& st : stages_) t = st.down.output_length(t);
  return t;
}

template <typename Scalar>
RVQStack<Scalar>::RVQStack(ParameterStore<Scalar>& store, const std::string& prefix, const CodecConfig& cfg)
    : latent_dim(cfg.latent_dim), codebook_size(cfg.codebook_size), codebook_dim(cfg.codebook_dim) {
  std::mt19937_64 rng(derive_seed(cfg.seed, 0x525651));
  auto gaussian = [&rng] {
    const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;
    const double u2 = static_cast<double>(rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  };
  for (Index i = 0; i < cfg.codebooks; ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    Stage st;
    st.codebook = store.declare(p + ".codebook", {cfg.codebook_size, cfg.codebook_dim}, Init::Zeros);
    st.down_proj = store.declare(p + ".down_proj", {cfg.codebook_dim, cfg.latent_dim}, Init::Zeros);
    st.ema_count = store.declare(p + ".ema_count", {cfg.codebook_size}, Init::Zeros);
    st.ema_sum = store.declare(p + ".ema_sum", {cfg.codebook_size, cfg.codebook_dim}, Init::Zeros);
    st.usage.assign(static_cast<std::size_t>(cfg.codebook_size), 0);
    if (store.allocating()) {
      // Orthonormal rows: thin Q of a Gaussian D x dim matrix, transposed.
      Eigen::MatrixXd g(cfg.latent_dim, cfg.codebook_dim);
      for (Index c = 0; c < g.cols(); ++c)
        for (Index r = 0; r < g.rows(); ++r) g(r, c) = gaussian();
      const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(g).householderQ() *
                                Eigen::MatrixXd::Identity(cfg.latent_dim, cfg.codebook_dim);
      MatrixMap<Scalar>(st.down_proj.ptr(), cfg.codebook_dim, cfg.latent_dim) = q.transpose().cast<Scalar>();
      for (Index j = 1; j < cfg.codebook_size; ++j)
        for (Index d = 0; d < cfg.codebook_dim; ++d)
          st.codebook.data()[j * cfg.codebook_dim + d] = static_cast<Scalar>(0.1 * gaussian());
    }
    stages.push_back(std::move(st));
  }
  store.set_frozen(prefix + ".", true);
}

template <typename Scalar>
void RVQStack<Scalar>::reset_usage() {
  for (auto& st : stages) std::fill(st.usage.begin(), st.usage.end(), 0);
}

namespace {
template <typename Scalar>
Eigen::MatrixXd as_matrix(const Tensor<Scalar>& t, Index rows, Index cols) {
  return ConstMatrixMap<Scalar>(t.ptr(), rows, cols).template cast<double>();
}
}  // namespace

template <typename Scalar>
Tensor<Scalar> ql_to_z(const Tensor<Scalar>& ql, const RVQStack<Scalar>& stack) {
  const Index dim = stack.codebook_dim;
  if (ql.ndim() != 2 || ql.dim(0) % dim != 0 || ql.dim(0) / dim > static_cast<Index>(stack.stages.size()))
    throw DimensionError("ql_to_z: expected [k*" + std::to_string(dim) + ", frames] with k <= " +
                         std::to_string(stack.stages.size()) + ", got " + shape_string(ql.shape()));
  const Index frames = ql.dim(1), k = ql.dim(0) / dim;
  const Eigen::MatrixXd q = as_matrix(ql, ql.dim(0), frames);
  Eigen::MatrixXd z = Eigen::MatrixXd::Zero(stack.latent_dim, frames);
  for (Index i = 0; i < k; ++i) {
    const auto& st = stack.stages[static_cast<std::size_t>(i)];
    z.noalias() += as_matrix(st.down_proj, dim, stack.latent_dim).transpose() * q.middleRows(i * dim, dim);
  }
  Tensor<Scalar> out({stack.latent_dim, frames});
  MatrixMap<Scalar>(out.ptr(), stack.latent_dim, frames) = z.cast<Scalar>();
  return out;
}

template <typename Scalar>
RVQResult<Scalar> rvq_quantize(const Tensor<Scalar>& z_e, RVQStack<Scalar>& stack, int stages) {
  const Index total = static_cast<Index>(stack.stages.size());
  const Index k = stages < 0 ? total : stages;
  if (k < 1 || k > total) throw ContractError("rvq: stage count " + std::to_string(k) + " out of range");
  if (z_e.ndim() != 2 || z_e.dim(0) != stack.latent_dim)
    throw DimensionError("rvq: expected latent width (axis 0) " + std::to_string(stack.latent_dim) + ", got " +
                         shape_string(z_e.shape()));
  const Index frames = z_e.dim(1), dim = stack.codebook_dim, n = stack.codebook_size;
  if (frames < 1) throw DimensionError("rvq: no frames");

  RVQResult<Scalar> out;
  Eigen::MatrixXd residual = as_matrix(z_e, stack.latent_dim, frames);
  Eigen::MatrixXd ql(k * dim, frames);
  out.residual_energy.push_back({});
  for (Index f = 0; f < frames; ++f) out.residual_energy.back().push_back(residual.col(f).squaredNorm());
  for (Index i = 0; i < k; ++i) {
    auto& st = stack.stages[static_cast<std::size_t>(i)];
    const Eigen::MatrixXd down = as_matrix(st.down_proj, dim, stack.latent_dim);
    const Eigen::MatrixXd book = as_matrix(st.codebook, n, dim);
    const Eigen::MatrixXd p = down * residual;
    std::vector<Index> idx(static_cast<std::size_t>(frames));
    for (Index f = 0; f < frames; ++f) {
      Index best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (Index j = 0; j < n; ++j) {
        double d = 0.0;
        for (Index c = 0; c < dim; ++c) {
          const double diff = p(c, f) - book(j, c);
          d += diff * diff;
        }
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      idx[static_cast<std::size_t>(f)] = best;
      ++st.usage[static_cast<std::size_t>(best)];
      ql.block(i * dim, f, dim, 1) = book.row(best).transpose();
    }
    residual.noalias() -= down.transpose() * ql.middleRows(i * dim, dim);
    out.residual_energy.push_back({});
    for (Index f = 0; f < frames; ++f) out.residual_energy.back().push_back(residual.col(f).squaredNorm());
    out.indices.push_back(std::move(idx));
    out.projected.push_back(p);
  }
  out.ql = Tensor<Scalar>({k * dim, frames});
  MatrixMap<Scalar>(out.ql.ptr(), k * dim, frames) = ql.cast<Scalar>();
  out.z_q = straight_through(z_e, ql_to_z(out.ql, stack));
  return out;
}

template <typename Scalar>
void rvq_ema_update(RVQStack<Scalar>& stack, const std::vector<const RVQResult<Scalar>*>& batch, double decay,
                    double dead_threshold, std::uint64_t seed) {
  const Index dim = stack.codebook_dim, n = stack.codebook_size;
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < stack.stages.size(); ++i) {
    auto& st = stack.stages[i];
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(n);
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(n, dim);
    std::vector<Eigen::VectorXd> pool;
    for (const auto* r : batch) {
      if (i >= r->projected.size()) continue;
      const auto& p = r->projected[i];
      for (Index f = 0; f < p.cols(); ++f) {
        const Index j = r->indices[i][static_cast<std::size_t>(f)];
        counts[j] += 1.0;
        sums.row(j) += p.col(f).transpose();
        pool.push_back(p.col(f));
      }
    }
    if (pool.empty()) continue;
    Scalar* count = st.ema_count.ptr();
    Scalar* sum = st.ema_sum.ptr();
    Scalar* book = st.codebook.ptr();
    for (Index j = 1; j < n; ++j) {
      double c = decay * count[j] + (1.0 - decay) * counts[j];
      Eigen::VectorXd s(dim);
      for (Index d = 0; d < dim; ++d) s[d] = decay * sum[j * dim + d] + (1.0 - decay) * sums(j, d);
      if (c < dead_threshold) {
        // Dead entry: restart it on a random vector from this batch.
        const Eigen::VectorXd& v = pool[static_cast<std::size_t>(rng() % pool.size())];
        c = 1.0;
        s = v;
      }
      count[j] = static_cast<Scalar>(c);
      for (Index d = 0; d < dim; ++d) {
        sum[j * dim + d] = static_cast<Scalar>(s[d]);
        book[j * dim + d] = static_cast<Scalar>(s[d] / c);
      }
    }
  }
}

template <typename Scalar>
CodecModel<Scalar>::CodecModel(const CodecConfig& cfg, bool allocate) : cfg_(cfg), store_(cfg.seed, allocate) {
  cfg_.validate();
  encoder_ = CodecEncoder<Scalar>(store_, "encoder", cfg_);
  rvq_ = RVQStack<Scalar>(store_, "rvq", cfg_);
  decoder_ = DacDecoder<Scalar>(store_, "decoder", cfg_.latent_dim, cfg_.decoder_channels, cfg_.decoder_rates);
}

template <typename Scalar>
Tensor<Scalar> CodecModel<Scalar>::encode(const Tensor<Scalar>& wave) const {
  const Tensor<Scalar> row = wave.defined() && wave.ndim() == 1 ? wave.reshaped({1, wave.size()}) : wave;
  if (!row.defined() || row.size() == 0) throw ContractError("codec encode: empty input");
  if (row.ndim() != 2 || row.dim(0) != 1)
    throw DimensionError("codec encode: expected mono [1,T], got " + shape_string(row.shape()));
  const Index hop = cfg_.hop(), t = row.dim(1);
  if (t % hop == 0) return encoder_(row);
  const Index padded = (t / hop + 1) * hop;
  return encoder_(concat<Scalar>({row, Tensor<Scalar>::zeros({1, padded - t})}, 1));
}

template <typename Scalar>
Tensor<Scalar> CodecModel<Scalar>::encode(const AudioSegment& x) const {
  if (x.samples.empty()) throw ContractError("codec encode: empty input");
  return encode(to_tensor<Scalar>(x));
}

template <typename Scalar>
Tensor<Scalar> CodecModel<Scalar>::decode(const Tensor<Scalar>& z_q) const {
  return decoder_(z_q);
}

template <typename Scalar>
Tensor<Scalar> CodecModel<Scalar>::reconstruct(const Tensor<Scalar>& wave) {
  NoGradGuard no_grad;
  const Tensor<Scalar> y = decode(quantize(encode(wave)).z_q);
  const Index t = wave.size();
  return y.dim(1) == t ? y : slice(y, 1, 0, t);
}

template <typename Scalar>
AudioSegment CodecModel<Scalar>::reconstruct(const AudioSegment& x) {
  if (x.samples.empty()) throw ContractError("codec reconstruct: empty input");
  return to_audio(reconstruct(to_tensor<Scalar>(x)), x.sample_rate);
}

template <typename Scalar>
CodecTrainLog train_codec(CodecModel<Scalar>& model, const std::vector<AudioSegment>& dataset,
                          const CodecTrainConfig& cfg, const std::function<void(Index, double)>& on_step) {
  if (dataset.empty()) throw ConfigError("train_codec: empty dataset");
  if (cfg.steps < 0 || cfg.batch < 1 || cfg.segment % model.config().hop() != 0)
    throw ConfigError("train_codec: bad steps/batch or segment not divisible by the hop");
  const double sr = model.config().sample_rate;
  auto& store = model.store();
  AdamW<Scalar> opt(store, {cfg.beta1, cfg.beta2, 1e-8, cfg.weight_decay});
  CodecTrainLog log;
  for (Index step = 0; step < cfg.steps; ++step) {
    store.zero_grad();
    std::vector<RVQResult<Scalar>> results;
    results.reserve(static_cast<std::size_t>(cfg.batch));
    double recon = 0.0, commit = 0.0;
    for (Index b = 0; b < cfg.batch; ++b) {
      std::mt19937_64 rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(b)));
      std::optional<AudioSegment> seg;
      for (int attempt = 0; attempt < 16 && !seg; ++attempt)
        seg = sample_segment(dataset[static_cast<std::size_t>(rng() % dataset.size())], cfg.segment, rng);
      if (!seg) throw DataError("train_codec: no clip is at least one segment long");
      const Tensor<Scalar> x = to_tensor<Scalar>(*seg);
      const Tensor<Scalar> z_e = model.encode(x);
      results.push_back(model.quantize(z_e));
      const auto& r = results.back();
      const Tensor<Scalar> x_hat = model.decode(r.z_q);
      const Tensor<Scalar> rec = scale(loss_waveform(x, x_hat), static_cast<Scalar>(cfg.wav_weight)) +
                                 scale(loss_multiscale_spec(x, x_hat, cfg.mel, SpecKind::Mel, sr),
                                       static_cast<Scalar>(cfg.mel_weight));
      const Tensor<Scalar> com = mean(square(z_e - r.z_q.detach()));
      const Tensor<Scalar> loss =
          scale(rec + scale(com, static_cast<Scalar>(model.config().commitment_weight)),
                static_cast<Scalar>(1.0 / static_cast<double>(cfg.batch)));
      if (!std::isfinite(static_cast<double>(loss.item())))
        throw NumericError("train_codec: non-finite loss at step " + std::to_string(step));
      backward(loss);
      recon += static_cast<double>(rec.item()) / static_cast<double>(cfg.batch);
      commit += static_cast<double>(com.item()) / static_cast<double>(cfg.batch);
    }
    clip_gradients(store, cfg.clip);
    opt.step(decay_lr(cfg.lr, cfg.gamma, step));
    std::vector<const RVQResult<Scalar>*> ptrs;
    for (const auto& r : results) ptrs.push_back(&r);
    rvq_ema_update(model.rvq(), ptrs, model.config().ema_decay, model.config().dead_threshold,
                   derive_seed(cfg.seed, static_cast<std::uint64_t>(step), 0xE3A));
    log.loss.push_back(recon);
    log.commitment.push_back(commit);
    if (on_step) on_step(step, recon);
  }
  store.zero_grad();
  store.set_frozen("", true);
  return log;
}

#define MVOX_INSTANTIATE_CODEC(S)                                                                        \
  template class DacDecoder<S>;                                                                          \
  template class CodecEncoder<S>;                                                                        \
  template struct RVQStack<S>;                                                                           \
  template class CodecModel<S>;                                                                          \
  template RVQResult<S> rvq_quantize(const Tensor<S>&, RVQStack<S>&, int);                               \
  template Tensor<S> ql_to_z(const Tensor<S>&, const RVQStack<S>&);                                      \
  template void rvq_ema_update(RVQStack<S>&, const std::vector<const RVQResult<S>*>&, double, double,    \
                               std::uint64_t);                                                           \
  template CodecTrainLog train_codec(CodecModel<S>&, const std::vector<AudioSegment>&,                   \
                                     const CodecTrainConfig&, const std::function<void(Index, double)>&);

MVOX_INSTANTIATE_CODEC(float)
MVOX_INSTANTIATE_CODEC(double)

}  // namespace mvox
