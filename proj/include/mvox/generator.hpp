#pragma once

#include "mvox/codec.hpp"
#include "mvox/nn.hpp"
#include "mvox/signal.hpp"

#include <string>
#include <vector>

namespace mvox {

enum class BottleneckMode { QL, Z };

const char* to_string(BottleneckMode mode);
BottleneckMode parse_bottleneck_mode(const std::string& text);

struct AMPBlockConfig {
  Index channels = 32;
  std::vector<Index> dilations{1, 3, 5};
  Index kernel = 3;
  bool use_resampling = true;  // 2x up / snake / 2x down around every activation

  void validate() const;
};

// Anti-aliased multi-periodicity block: per dilation d,
// y <- y + conv1x(act(conv_d(act(y)))). The closing conv of each branch
// starts at zero, so a fresh block is the identity.
template <typename Scalar>
class AMPBlock {
 public:
  AMPBlock() = default;
  AMPBlock(ParameterStore<Scalar>& store, const std::string& prefix, const AMPBlockConfig& cfg);

  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const;
  const AMPBlockConfig& config() const { return cfg_; }

 private:
  Tensor<Scalar> activate(const Snake<Scalar>& act, const Tensor<Scalar>& x) const;

  struct Branch {
    Snake<Scalar> act1, act2;
    Conv1d<Scalar> conv1, conv2;
  };
  AMPBlockConfig cfg_;
  std::vector<Branch> branches_;
};

struct GeneratorConfig {
  BottleneckMode mode = BottleneckMode::Z;
  Index encoder_channels = 32;  // C0
  Index amp_blocks = 2;         // split evenly around the stride-2 reduction
  AMPBlockConfig amp;           // channels is overwritten with encoder_channels
  MelConfig mel;
  CodecConfig codec = CodecConfig::desk();  // decoder shape and QL geometry
  std::uint64_t seed = 1;

  void validate() const;
  Index bottleneck_width() const;
  Index hop() const { return 2 * mel.spectral.hop_length; }

  static GeneratorConfig tiny(BottleneckMode mode = BottleneckMode::Z);
  // size_millions is 220 or 430.
  static GeneratorConfig paper(BottleneckMode mode, int size_millions);
};

struct ShapeChain {
  Shape mel, latent, decoder_input, output;
};

template <typename Scalar>
struct GeneratorOutput {
  Tensor<Scalar> audio;           // [1,T]
  Tensor<Scalar> latent;          // bottleneck [width, T/hop]
  Tensor<Scalar> decoder_input;   // [D, T/hop]
};

template <typename Scalar>
class GeneratorModel {
 public:
  explicit GeneratorModel(const GeneratorConfig& cfg, bool allocate = true);
  GeneratorModel(const GeneratorModel&) = delete;
  GeneratorModel& operator=(const GeneratorModel&) = delete;

  const GeneratorConfig& config() const { return cfg_; }
  ParameterStore<Scalar>& store() { return store_; }
  const ParameterStore<Scalar>& store() const { return store_; }

  struct EncoderOutput {
    Tensor<Scalar> latent;          // [width, Tm/2]
    Tensor<Scalar> first_conv_out;  // [C0, Tm]
  };
  // Odd Tm is a ContractError.
  EncoderOutput encode(const Tensor<Scalar>& mel) const;
  // Average pool (2,2) then the 1x1 projection to the decoder input width.
  // StateError while the skip is disabled.
  Tensor<Scalar> skip_pool(const Tensor<Scalar>& first_conv_out) const;
  // QL: sum of up-projected 8-d blocks through the teacher matrices.
  Tensor<Scalar> decoder_input(const Tensor<Scalar>& latent) const;

  GeneratorOutput<Scalar> forward_mel(const Tensor<Scalar>& mel) const;
  // Length must be a multiple of hop().
  GeneratorOutput<Scalar> forward(const Tensor<Scalar>& wave) const;
  AudioSegment infer(const AudioSegment& x) const;
  AudioSegment infer_mel(const Tensor<float>& mel) const;

  ShapeChain shape_chain(Index samples) const;

  // Copies "decoder.*" tensors and, in QL mode, the teacher projections.
  void load_from_codec(const CodecModel<Scalar>& codec);
  std::size_t load_decoder(const std::vector<TensorRecord>& records, const std::string& from_prefix = "decoder.");
  void set_teacher_projections(const std::vector<Tensor<Scalar>>& down_proj);
  const std::vector<Tensor<Scalar>>& teacher_projections() const { return up_proj_; }

  void set_decoder_frozen(bool frozen);
  bool decoder_frozen() const;
  bool skip_enabled() const { return skip_enabled_; }
  // Re-zeroes the projection and switches the skip on.
  void enable_skip();
  void restore_skip(bool enabled) { skip_enabled_ = enabled; }

  // Extra tensors that are not trainable parameters (teacher projections).
  std::vector<TensorRecord> buffers() const;
  void load_buffers(const std::vector<TensorRecord>& records);

 private:
  GeneratorConfig cfg_;
  ParameterStore<Scalar> store_;
  Conv1d<Scalar> input_;
  std::vector<AMPBlock<Scalar>> pre_, post_;
  Conv1d<Scalar> down_;
  Snake<Scalar> final_act_;
  Conv1d<Scalar> proj_;
  Conv1d<Scalar> skip_proj_;
  DacDecoder<Scalar> decoder_;
  std::vector<Tensor<Scalar>> up_proj_;  // [D,8] per stage, QL only
  bool skip_enabled_ = false;
};

}  // namespace mvox
