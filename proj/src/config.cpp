#include "mvox/config.hpp"

#include "mvox/errors.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace mvox {

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

class Fields {
 public:
  Fields(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError((path_.empty() ? "config" : path_) + ": expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(join(path_, key) + ": " + e.what());
    }
  }

  template <typename T>
  void nested(const char* key, T& out) {
    seen_.insert(key);
    const auto it = j_.find(key);
    if (it != j_.end()) from_json(*it, out, join(path_, key));
  }

  void finish() const {
    for (const auto& item : j_.items())
      if (!seen_.count(item.key())) throw ConfigError(join(path_, item.key()) + ": unknown key");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

Json to_json(const SpectralConfig& c) {
  return {{"n_fft", c.n_fft}, {"win_length", c.win_length}, {"hop_length", c.hop_length}, {"center", c.center}};
}

void from_json(const Json& j, SpectralConfig& c, const std::string& path) {
  Fields f(j, path);
  f.get("n_fft", c.n_fft);
  f.get("win_length", c.win_length);
  f.get("hop_length", c.hop_length);
  f.get("center", c.center);
  f.finish();
}

Json to_json(const MelConfig& c) {
  return {{"spectral", to_json(c.spectral)}, {"n_mels", c.n_mels}, {"f_min", c.f_min}, {"f_max", c.f_max},
          {"log_floor", c.log_floor}};
}

void from_json(const Json& j, MelConfig& c, const std::string& path) {
  Fields f(j, path);
  f.nested("spectral", c.spectral);
  f.get("n_mels", c.n_mels);
  f.get("f_min", c.f_min);
  f.get("f_max", c.f_max);
  f.get("log_floor", c.log_floor);
  f.finish();
}

Json to_json(const MultiScaleConfig& c) {
  Json a = Json::array();
  for (const auto& s : c.scales) a.push_back(to_json(s));
  return a;
}

void from_json(const Json& j, MultiScaleConfig& c, const std::string& path) {
  if (j.is_string()) {
    const auto name = j.get<std::string>();
    if (name == "full") c = MultiScaleConfig::full();
    else if (name == "desk") c = MultiScaleConfig::desk();
    else throw ConfigError(path + ": unknown scale family \"" + name + "\" (expected full or desk)");
    return;
  }
  if (!j.is_array()) throw ConfigError(path + ": expected an array of mel configs or \"full\"/\"desk\"");
  c.scales.clear();
  for (std::size_t i = 0; i < j.size(); ++i) {
    MelConfig m;
    from_json(j[i], m, path + "[" + std::to_string(i) + "]");
    c.scales.push_back(m);
  }
}

Json to_json(const CodecConfig& c) {
  return {{"latent_dim", c.latent_dim},
          {"codebooks", c.codebooks},
          {"codebook_size", c.codebook_size},
          {"codebook_dim", c.codebook_dim},
          {"encoder_channels", c.encoder_channels},
          {"encoder_strides", c.encoder_strides},
          {"decoder_channels", c.decoder_channels},
          {"decoder_rates", c.decoder_rates},
          {"sample_rate", c.sample_rate},
          {"seed", c.seed},
          {"commitment_weight", c.commitment_weight},
          {"ema_decay", c.ema_decay},
          {"dead_threshold", c.dead_threshold}};
}

void from_json(const Json& j, CodecConfig& c, const std::string& path) {
  Fields f(j, path);
  f.get("latent_dim", c.latent_dim);
  f.get("codebooks", c.codebooks);
  f.get("codebook_size", c.codebook_size);
  f.get("codebook_dim", c.codebook_dim);
  f.get("encoder_channels", c.encoder_channels);
  f.get("encoder_strides", c.encoder_strides);
  f.get("decoder_channels", c.decoder_channels);
  f.get("decoder_rates", c.decoder_rates);
  f.get("sample_rate", c.sample_rate);
  f.get("seed", c.seed);
  f.get("commitment_weight", c.commitment_weight);
  f.get("ema_decay", c.ema_decay);
  f.get("dead_threshold", c.dead_threshold);
  f.finish();
}

Json to_json(const CodecTrainConfig& c) {
  return {{"steps", c.steps},   {"batch", c.batch},           {"segment", c.segment},
          {"lr", c.lr},         {"beta1", c.beta1},           {"beta2", c.beta2},
          {"weight_decay", c.weight_decay}, {"gamma", c.gamma}, {"clip", c.clip},
          {"mel_weight", c.mel_weight},     {"wav_weight", c.wav_weight}, {"seed", c.seed},
          {"mel", to_json(c.mel)}};
}

void from_json(const Json& j, CodecTrainConfig& c, const std::string& path) {
  Fields f(j, path);
  f.get("steps", c.steps);
  f.get("batch", c.batch);
  f.get("segment", c.segment);
  f.get("lr", c.lr);
  f.get("beta1", c.beta1);
  f.get("beta2", c.beta2);
  f.get("weight_decay", c.weight_decay);
  f.get("gamma", c.gamma);
  f.get("clip", c.clip);
  f.get("mel_weight", c.mel_weight);
  f.get("wav_weight", c.wav_weight);
  f.get("seed", c.seed);
  f.nested("mel", c.mel);
  f.finish();
}

Json to_json(const AMPBlockConfig& c) {
  return {{"channels", c.channels}, {"dilations", c.dilations}, {"kernel", c.kernel},
          {"use_resampling", c.use_resampling}};
}

void from_json(const Json& j, AMPBlockConfig& c, const std::string& path) {
  Fields f(j, path);
  f.get("channels", c.channels);
  f.get("dilations", c.dilations);
  f.get("kernel", c.kernel);
  f.get("use_resampling", c.use_resampling);
  f.finish();
}

Json to_json(const GeneratorConfig& c) {
  return {{"mode", to_string(c.mode)}, {"encoder_channels", c.encoder_channels}, {"amp_blocks", c.amp_blocks},
          {"amp", to_json(c.amp)},     {"mel", to_json(c.mel)},                  {"codec", to_json(c.codec)},
          {"seed", c.seed}};
}

void from_json(const Json& j, GeneratorConfig& c, const std::string& path) {
  Fields f(j, path);
  std::string mode = to_string(c.mode);
  f.get("mode", mode);
  try {
    c.mode = parse_bottleneck_mode(mode);
  } catch (const Error& e) {
    throw ConfigError(join(path, "mode") + ": " + e.what());
  }
  f.get("encoder_channels", c.encoder_channels);
  f.get("amp_blocks", c.amp_blocks);
  f.nested("amp", c.amp);
  f.nested("mel", c.mel);
  f.nested("codec", c.codec);
  f.get("seed", c.seed);
  f.finish();
}

Json to_json(const MPDConfig& c) {
  return {{"periods", c.periods}, {"channels", c.channels}, {"kernel", c.kernel}, {"stride", c.stride},
          {"slope", c.slope}};
}

void from_json(const Json& j, MPDConfig& c, const std::string& path) {
  Fields f(j, path);
  f.get("periods", c.periods);
  f.get("channels", c.channels);
  f.get("kernel", c.kernel);
  f.get("stride", c.stride);
  f.get("slope", c.slope);
  f.finish();
}

Json to_json(const MRSDConfig& c) {
  Json res = Json::array();
  for (const auto& r : c.resolutions) res.push_back(to_json(r));
  return {{"resolutions", res},         {"band_edges", c.band_edges},   {"channels", c.channels},
          {"kernel_freq", c.kernel_freq}, {"kernel_time", c.kernel_time}, {"slope", c.slope}};
}

void from_json(const Json& j, MRSDConfig& c, const std::string& path) {
  Fields f(j, path);
  Json res;
  f.get("resolutions", res);
  if (!res.is_null()) {
    if (!res.is_array()) throw ConfigError(join(path, "resolutions") + ": expected an array");
    c.resolutions.clear();
    for (std::size_t i = 0; i < res.size(); ++i) {
      SpectralConfig s;
      from_json(res[i], s, join(path, "resolutions") + "[" + std::to_string(i) + "]");
      c.resolutions.push_back(s);
    }
  }
  f.get("band_edges", c.band_edges);
  f.get("channels", c.channels);
  f.get("kernel_freq", c.kernel_freq);
  f.get("kernel_time", c.kernel_time);
  f.get("slope", c.slope);
  f.finish();
}

Json to_json(const DiscriminatorConfig& c) {
  return {{"mpd", to_json(c.mpd)}, {"mrsd", to_json(c.mrsd)}, {"seed", c.seed}};
}

void from_json(const Json& j, DiscriminatorConfig& c, const std::string& path) {
  Fields f(j, path);
  f.nested("mpd", c.mpd);
  f.nested("mrsd", c.mrsd);
  f.get("seed", c.seed);
  f.finish();
}

Json to_json(const LossWeights& c) {
  return {{"lambda_wav", c.wav}, {"lambda_dac", c.dac}, {"lambda_mel", c.mel},
          {"lambda_stft", c.stft}, {"lambda_gen", c.gen}, {"lambda_feat", c.feat}};
}

void from_json(const Json& j, LossWeights& c, const std::string& path) {
  Fields f(j, path);
  f.get("lambda_wav", c.wav);
  f.get("lambda_dac", c.dac);
  f.get("lambda_mel", c.mel);
  f.get("lambda_stft", c.stft);
  f.get("lambda_gen", c.gen);
  f.get("lambda_feat", c.feat);
  f.finish();
}

Json to_json(const TrainConfig& c) {
  return {{"lr", c.lr},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"gamma", c.gamma},
          {"clip", c.clip},
          {"weight_decay", c.weight_decay},
          {"disc_lr_scale", c.disc_lr_scale},
          {"weights", to_json(c.weights)},
          {"segment_length", c.segment_length},
          {"batch", c.batch},
          {"stage_switch_step", c.stage_switch_step},
          {"total_steps", c.total_steps},
          {"seed", c.seed},
          {"mel_scales", to_json(c.mel_scales)},
          {"stft_scales", to_json(c.stft_scales)}};
}

void from_json(const Json& j, TrainConfig& c, const std::string& path) {
  Fields f(j, path);
  f.get("lr", c.lr);
  f.get("beta1", c.beta1);
  f.get("beta2", c.beta2);
  f.get("gamma", c.gamma);
  f.get("clip", c.clip);
  f.get("weight_decay", c.weight_decay);
  f.get("disc_lr_scale", c.disc_lr_scale);
  f.nested("weights", c.weights);
  f.get("segment_length", c.segment_length);
  f.get("batch", c.batch);
  f.get("stage_switch_step", c.stage_switch_step);
  f.get("total_steps", c.total_steps);
  f.get("seed", c.seed);
  f.nested("mel_scales", c.mel_scales);
  f.nested("stft_scales", c.stft_scales);
  f.finish();
}

Json to_json(const SyntheticDatasetSpec& c) {
  return {{"n_clips", c.n_clips},       {"clip_seconds", c.clip_seconds},       {"sample_rate", c.sample_rate},
          {"min_voices", c.min_voices}, {"max_voices", c.max_voices},           {"min_f0", c.min_f0},
          {"max_f0", c.max_f0},         {"percussive_rate", c.percussive_rate}, {"noise_floor", c.noise_floor},
          {"seed", c.seed}};
}

void from_json(const Json& j, SyntheticDatasetSpec& c, const std::string& path) {
  Fields f(j, path);
  f.get("n_clips", c.n_clips);
  f.get("clip_seconds", c.clip_seconds);
  f.get("sample_rate", c.sample_rate);
  f.get("min_voices", c.min_voices);
  f.get("max_voices", c.max_voices);
  f.get("min_f0", c.min_f0);
  f.get("max_f0", c.max_f0);
  f.get("percussive_rate", c.percussive_rate);
  f.get("noise_floor", c.noise_floor);
  f.get("seed", c.seed);
  f.finish();
}

Json to_json(const TrainState& s) {
  return {{"step", s.step}, {"stage", s.stage}, {"transitioned", s.transitioned}};
}

void from_json(const Json& j, TrainState& s, const std::string& path) {
  Fields f(j, path);
  f.get("step", s.step);
  f.get("stage", s.stage);
  f.get("transitioned", s.transitioned);
  f.finish();
}

void RunConfig::validate() const {
  generator.validate();
  discriminators.validate();
  train.validate(generator.hop(), generator.codec.sample_rate);
}

Json to_json(const RunConfig& c) {
  return {{"preset", c.preset},
          {"generator", to_json(c.generator)},
          {"discriminators", to_json(c.discriminators)},
          {"train", to_json(c.train)}};
}

void from_json(const Json& j, RunConfig& c, const std::string& path) {
  Fields f(j, path);
  f.get("preset", c.preset);
  const BottleneckMode mode = j.contains("generator") && j["generator"].contains("mode")
                                  ? parse_bottleneck_mode(j["generator"]["mode"].get<std::string>())
                                  : c.generator.mode;
  if (c.preset == "desk") {
    c.generator = GeneratorConfig::tiny(mode);
    c.discriminators = DiscriminatorConfig::tiny();
    c.train = TrainConfig::desk();
  } else if (c.preset == "paper-220" || c.preset == "paper-430") {
    c.generator = GeneratorConfig::paper(mode, c.preset == "paper-220" ? 220 : 430);
    c.discriminators = DiscriminatorConfig::tiny();
    c.train = TrainConfig::paper();
  } else {
    throw ConfigError(join(path, "preset") + ": unknown preset \"" + c.preset + "\" (desk, paper-220, paper-430)");
  }
  f.nested("generator", c.generator);
  f.nested("discriminators", c.discriminators);
  f.nested("train", c.train);
  f.finish();
}

Json parse_json(const std::string& text) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), e.byte);
  }
}

Json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FileError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_json(ss.str());
}

}  // namespace mvox
