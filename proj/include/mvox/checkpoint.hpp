#pragma once

// Model <-> checkpoint mapping. Tensors are stored as "<component>/<name>"
// with components "codec", "generator", "discriminators" and "optimizer";
// the config JSON carries one section per stored component.

#include "mvox/config.hpp"
#include "mvox/io.hpp"

#include <memory>

namespace mvox {

Checkpoint codec_checkpoint(const CodecModel<float>& codec);
std::unique_ptr<CodecModel<float>> load_codec(const Checkpoint& ckpt);

// Generator weights, teacher projections and skip/stage flags.
Checkpoint generator_checkpoint(const GeneratorModel<float>& gen);
std::unique_ptr<GeneratorModel<float>> load_generator(const Checkpoint& ckpt);

// Copies "codec/decoder.*" into the generator's decoder slot and, in QL
// mode, the teacher projections. Returns the number of decoder tensors.
std::size_t load_decoder_from_codec_checkpoint(GeneratorModel<float>& gen, const Checkpoint& codec_ckpt);

// Everything needed to resume training bit for bit.
struct TrainingSession {
  RunConfig config;
  std::unique_ptr<CodecModel<float>> codec;
  std::unique_ptr<GeneratorModel<float>> generator;
  std::unique_ptr<Discriminators<float>> discriminators;
  TrainState state;
  std::vector<TensorRecord> optimizer;
};

Checkpoint training_checkpoint(const RunConfig& cfg, const CodecModel<float>& codec, const GeneratorModel<float>& gen,
                               const Discriminators<float>& disc, const Trainer<float>& trainer);
TrainingSession load_training(const Checkpoint& ckpt);

}  // namespace mvox
