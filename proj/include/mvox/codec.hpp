#pragma once

#include "mvox/losses.hpp"
#include "mvox/nn.hpp"
#include "mvox/signal.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace mvox {

struct CodecConfig {
  Index latent_dim = 64;  // D
  Index codebooks = 4;
  Index codebook_size = 64;
  Index codebook_dim = 8;
  Index encoder_channels = 8;
  std::vector<Index> encoder_strides{2, 4, 8, 8};
  Index decoder_channels = 64;
  std::vector<Index> decoder_rates{8, 8, 4, 2};
  double sample_rate = 44100.0;
  std::uint64_t seed = 0;

  // Teacher training.
  double commitment_weight = 0.25;
  double ema_decay = 0.99;
  double dead_threshold = 0.05;  // EMA usage below which an entry is reseeded

  void validate() const;
  Index hop() const;  // product of encoder strides
  Index ql_width() const { return codebooks * codebook_dim; }

  static CodecConfig desk();
  static CodecConfig paper();  // D=1024, 9 x 1024 x 8, decoder width 1536
};

// DAC-style decoder: conv7 D->C, then per rate s a snake, a transposed conv
// (kernel 2s, stride s) halving the width, three residual units with
// dilations 1/3/9, and finally snake, conv7 to one channel and tanh.
template <typename Scalar>
class DacDecoder {
 public:
  DacDecoder() = default;
  DacDecoder(ParameterStore<Scalar>& store, const std::string& prefix, Index latent_dim, Index channels,
             const std::vector<Index>& rates);

  Tensor<Scalar> operator()(const Tensor<Scalar>& z) const;  // [D,frames] -> [1, frames*hop]
  Index input_width() const { return latent_dim_; }
  Index output_length(Index frames) const;

 private:
  struct ResidualUnit {
    Snake<Scalar> act1, act2;
    Conv1d<Scalar> conv1, conv2;
  };
  struct Stage {
    Snake<Scalar> act;
    ConvTranspose1d<Scalar> up;
    std::vector<ResidualUnit> units;
  };
  Index latent_dim_ = 0;
  Conv1d<Scalar> input_;
  std::vector<Stage> stages_;
  Snake<Scalar> final_act_;
  Conv1d<Scalar> output_;
};

template <typename Scalar>
class CodecEncoder {
 public:
  CodecEncoder() = default;
  CodecEncoder(ParameterStore<Scalar>& store, const std::string& prefix, const CodecConfig& cfg);

  Tensor<Scalar> operator()(const Tensor<Scalar>& wave) const;  // [1,T] -> [D, T/hop]
  Index output_length(Index length) const;

 private:
  struct Stage {
    std::vector<Snake<Scalar>> act1, act2;
    std::vector<Conv1d<Scalar>> conv1, conv2;
    Snake<Scalar> act;
    Conv1d<Scalar> down;
  };
  Conv1d<Scalar> input_;
  std::vector<Stage> stages_;
  Snake<Scalar> final_act_;
  Conv1d<Scalar> output_;
};

// Per-stage tensors live in the owning store as "<prefix>.<i>.codebook"
// [N,dim], "<prefix>.<i>.down_proj" [dim,D], plus EMA buffers. Entry 0 of
// every codebook is pinned at the origin.
template <typename Scalar>
struct RVQStack {
  struct Stage {
    Tensor<Scalar> codebook, down_proj, ema_count, ema_sum;
    std::vector<std::uint64_t> usage;
  };
  std::vector<Stage> stages;
  Index latent_dim = 0, codebook_size = 0, codebook_dim = 0;

  RVQStack() = default;
  RVQStack(ParameterStore<Scalar>& store, const std::string& prefix, const CodecConfig& cfg);

  void reset_usage();
};

template <typename Scalar>
struct RVQResult {
  std::vector<std::vector<Index>> indices;  // [stage][frame]
  Tensor<Scalar> ql;                        // [stages*dim, frames]
  Tensor<Scalar> z_q;                       // [D, frames], straight-through to z_e
  // Squared residual norm per frame before stage 0 and after every stage.
  std::vector<std::vector<double>> residual_energy;
  // Projected residual that each stage quantized, [stage] -> [dim, frames].
  std::vector<Eigen::MatrixXd> projected;
};

// Greedy stagewise nearest-neighbour quantization; `stages` < 0 uses all.
// Selections use exact Euclidean distance in double, lowest index on ties.
template <typename Scalar>
RVQResult<Scalar> rvq_quantize(const Tensor<Scalar>& z_e, RVQStack<Scalar>& stack, int stages = -1);

// Sum of up-projected ql blocks (up_proj = down_proj^T).
template <typename Scalar>
Tensor<Scalar> ql_to_z(const Tensor<Scalar>& ql, const RVQStack<Scalar>& stack);

// EMA codebook learning and dead-entry reseeding from a batch of results.
template <typename Scalar>
void rvq_ema_update(RVQStack<Scalar>& stack, const std::vector<const RVQResult<Scalar>*>& batch, double decay,
                    double dead_threshold, std::uint64_t seed);

template <typename Scalar>
class CodecModel {
 public:
  explicit CodecModel(const CodecConfig& cfg, bool allocate = true);
  CodecModel(const CodecModel&) = delete;
  CodecModel& operator=(const CodecModel&) = delete;

  const CodecConfig& config() const { return cfg_; }
  ParameterStore<Scalar>& store() { return store_; }
  const ParameterStore<Scalar>& store() const { return store_; }
  RVQStack<Scalar>& rvq() { return rvq_; }
  const RVQStack<Scalar>& rvq() const { return rvq_; }
  const DacDecoder<Scalar>& decoder() const { return decoder_; }

  // Zero-pads to a multiple of the hop; empty input is a ContractError.
  Tensor<Scalar> encode(const Tensor<Scalar>& wave) const;
  Tensor<Scalar> encode(const AudioSegment& x) const;
  RVQResult<Scalar> quantize(const Tensor<Scalar>& z_e, int stages = -1) { return rvq_quantize(z_e, rvq_, stages); }
  Tensor<Scalar> decode(const Tensor<Scalar>& z_q) const;
  // encode -> quantize -> decode under no-grad.
  Tensor<Scalar> reconstruct(const Tensor<Scalar>& wave);
  AudioSegment reconstruct(const AudioSegment& x);

 private:
  CodecConfig cfg_;
  ParameterStore<Scalar> store_;
  CodecEncoder<Scalar> encoder_;
  RVQStack<Scalar> rvq_;
  DacDecoder<Scalar> decoder_;
};

struct CodecTrainConfig {
  Index steps = 1200;
  Index batch = 4;
  Index segment = 16384;
  double lr = 1e-3;
  double beta1 = 0.8, beta2 = 0.99;
  double weight_decay = 0.0;
  double gamma = 0.999;
  double clip = 1e3;
  double mel_weight = 1.0;
  double wav_weight = 1.0;
  std::uint64_t seed = 0;
  MultiScaleConfig mel = MultiScaleConfig::desk();
};

struct CodecTrainLog {
  std::vector<double> loss;  // reconstruction loss (L1 waveform + multi-scale mel) per step
  std::vector<double> commitment;
};

// Trains the teacher on peak-normalized clips and freezes every parameter.
template <typename Scalar>
CodecTrainLog train_codec(CodecModel<Scalar>& model, const std::vector<AudioSegment>& dataset,
                          const CodecTrainConfig& cfg, const std::function<void(Index, double)>& on_step = {});

}  // namespace mvox
