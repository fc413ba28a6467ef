#pragma once

#include "mvox/nn.hpp"
#include "mvox/signal.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mvox {

enum class WavFormat { PCM16, F32 };

const char* to_string(WavFormat f);
WavFormat parse_wav_format(const std::string& text);

// RIFF/WAVE with PCM16 or IEEE float32 samples (plain or extensible fmt
// chunk). Multi-channel data is averaged to mono; PCM16 is scaled by 1/32768.
AudioSegment read_wav(const std::string& path);
AudioSegment parse_wav(std::string_view bytes);

// PCM16 rounds half away from zero after clamping to [-1, 1].
void write_wav(const std::string& path, const AudioSegment& x, WavFormat format = WavFormat::F32);
std::string encode_wav(const AudioSegment& x, WavFormat format = WavFormat::F32);

// Named-tensor container. Byte layout (all integers little-endian):
//   "MVOX" | u32 version | u64 n + n bytes config JSON
//   | u32 count | count x tensor | u64 n + n bytes state JSON | u32 CRC-32
// tensor = u32 n + n bytes name | u8 dtype (1 f32, 2 f64) | u32 rank
//          | rank x u64 extent | raw element data
// The CRC covers every byte before it.
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string config;  // JSON text
  std::vector<TensorRecord> tensors;
  std::string state;   // JSON text

  const TensorRecord* find(const std::string& name) const;
  // Records under `prefix` with the prefix removed.
  std::vector<TensorRecord> component(const std::string& prefix) const;
  void add(const std::string& prefix, const std::vector<TensorRecord>& records);
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
// CorruptionError on bad magic, truncation or checksum failure;
// UnsupportedFormatError on a version mismatch.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// 2-D .npy arrays (version 1.0, little-endian float32 or float64, C order),
// used for mel spectrogram input and output.
Tensor<float> read_npy(const std::string& path);
Tensor<float> parse_npy(std::string_view bytes);
void write_npy(const std::string& path, const Tensor<float>& x);

std::string read_file(const std::string& path);
// Writes through a temporary file and renames it into place.
void write_file(const std::string& path, std::string_view bytes);

}  // namespace mvox
