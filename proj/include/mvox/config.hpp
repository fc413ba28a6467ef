#pragma once

// JSON schema for every configuration type. Readers are strict: unknown keys
// raise ConfigError naming the key path, missing keys keep their defaults.
// Key names are listed in docs/config_schema.md.

#include "mvox/codec.hpp"
#include "mvox/data.hpp"
#include "mvox/discriminators.hpp"
#include "mvox/generator.hpp"
#include "mvox/training.hpp"

#include <json.hpp>

namespace mvox {

using Json = nlohmann::ordered_json;

Json to_json(const SpectralConfig& c);
Json to_json(const MelConfig& c);
Json to_json(const MultiScaleConfig& c);
Json to_json(const CodecConfig& c);
Json to_json(const CodecTrainConfig& c);
Json to_json(const AMPBlockConfig& c);
Json to_json(const GeneratorConfig& c);
Json to_json(const MPDConfig& c);
Json to_json(const MRSDConfig& c);
Json to_json(const DiscriminatorConfig& c);
Json to_json(const LossWeights& c);
Json to_json(const TrainConfig& c);
Json to_json(const SyntheticDatasetSpec& c);
Json to_json(const TrainState& s);

// `path` prefixes error messages, e.g. "train.weights".
void from_json(const Json& j, SpectralConfig& c, const std::string& path = "spectral");
void from_json(const Json& j, MelConfig& c, const std::string& path = "mel");
void from_json(const Json& j, MultiScaleConfig& c, const std::string& path = "scales");
void from_json(const Json& j, CodecConfig& c, const std::string& path = "codec");
void from_json(const Json& j, CodecTrainConfig& c, const std::string& path = "codec_train");
void from_json(const Json& j, AMPBlockConfig& c, const std::string& path = "amp");
void from_json(const Json& j, GeneratorConfig& c, const std::string& path = "generator");
void from_json(const Json& j, MPDConfig& c, const std::string& path = "mpd");
void from_json(const Json& j, MRSDConfig& c, const std::string& path = "mrsd");
void from_json(const Json& j, DiscriminatorConfig& c, const std::string& path = "discriminators");
void from_json(const Json& j, LossWeights& c, const std::string& path = "weights");
void from_json(const Json& j, TrainConfig& c, const std::string& path = "train");
void from_json(const Json& j, SyntheticDatasetSpec& c, const std::string& path = "data");
void from_json(const Json& j, TrainState& s, const std::string& path = "state");

// Top-level file consumed by `mvox train`.
struct RunConfig {
  std::string preset = "desk";  // desk | paper-220 | paper-430 (shape-only)
  GeneratorConfig generator = GeneratorConfig::tiny(BottleneckMode::QL);
  DiscriminatorConfig discriminators = DiscriminatorConfig::tiny();
  TrainConfig train = TrainConfig::desk();

  void validate() const;
};

Json to_json(const RunConfig& c);
void from_json(const Json& j, RunConfig& c, const std::string& path = "");

// Parses JSON text; syntax errors become ParseError with the byte offset.
Json parse_json(const std::string& text);
Json read_json_file(const std::string& path);

}  // namespace mvox
