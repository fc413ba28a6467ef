#include "mvox/checkpoint.hpp"

#include "mvox/errors.hpp"

namespace mvox {

namespace {

Json header(const char* kind) {
  Json j;
  j["format"] = "mvox-checkpoint";
  j["kind"] = kind;
  j["version"] = MVOX_VERSION;
  return j;
}

Json parse_section(const std::string& text, const char* what) {
  try {
    return parse_json(text.empty() ? std::string("{}") : text);
  } catch (const ParseError& e) {
    throw CorruptionError(std::string("checkpoint ") + what + " is not valid JSON: " + e.what());
  }
}

const Json& section(const Json& config, const char* name) {
  if (!config.contains(name)) throw DataError(std::string("checkpoint has no \"") + name + "\" component");
  return config[name];
}

template <typename Store>
void load_all(Store& store, const Checkpoint& ckpt, const std::string& component) {
  const auto records = ckpt.component(component + "/");
  const std::size_t loaded = store.load_state(records);
  if (loaded != store.params().size())
    throw DataError("checkpoint component \"" + component + "\" provides " + std::to_string(loaded) + " of " +
                    std::to_string(store.params().size()) + " tensors");
}

}  // namespace

Checkpoint codec_checkpoint(const CodecModel<float>& codec) {
  Checkpoint ck;
  Json cfg = header("codec");
  cfg["codec"] = to_json(codec.config());
  ck.config = cfg.dump();
  ck.add("codec/", codec.store().state());
  ck.state = "{}";
  return ck;
}

std::unique_ptr<CodecModel<float>> load_codec(const Checkpoint& ckpt) {
  const Json cfg = parse_section(ckpt.config, "config");
  CodecConfig c;
  from_json(section(cfg, "codec"), c, "codec");
  auto model = std::make_unique<CodecModel<float>>(c);
  load_all(model->store(), ckpt, "codec");
  model->store().set_frozen("", true);
  return model;
}

namespace {

void add_generator(Checkpoint& ck, Json& cfg, Json& state, const GeneratorModel<float>& gen) {
  cfg["generator"] = to_json(gen.config());
  ck.add("generator/", gen.store().state());
  ck.add("generator/", gen.buffers());
  state["generator"] = {{"skip_enabled", gen.skip_enabled()}, {"decoder_frozen", gen.decoder_frozen()}};
}

std::unique_ptr<GeneratorModel<float>> restore_generator(const Checkpoint& ckpt, const Json& cfg, const Json& state) {
  GeneratorConfig g;
  from_json(section(cfg, "generator"), g, "generator");
  auto gen = std::make_unique<GeneratorModel<float>>(g);
  load_all(gen->store(), ckpt, "generator");
  gen->load_buffers(ckpt.component("generator/"));
  if (state.contains("generator")) {
    const Json& s = state["generator"];
    gen->restore_skip(s.value("skip_enabled", false));
    gen->set_decoder_frozen(s.value("decoder_frozen", true));
  }
  return gen;
}

}  // namespace

Checkpoint generator_checkpoint(const GeneratorModel<float>& gen) {
  Checkpoint ck;
  Json cfg = header("generator");
  Json state = Json::object();
  add_generator(ck, cfg, state, gen);
  ck.config = cfg.dump();
  ck.state = state.dump();
  return ck;
}

std::unique_ptr<GeneratorModel<float>> load_generator(const Checkpoint& ckpt) {
  return restore_generator(ckpt, parse_section(ckpt.config, "config"), parse_section(ckpt.state, "state"));
}

std::size_t load_decoder_from_codec_checkpoint(GeneratorModel<float>& gen, const Checkpoint& codec_ckpt) {
  auto codec = load_codec(codec_ckpt);
  gen.load_from_codec(*codec);
  std::size_t n = 0;
  for (const auto& t : codec_ckpt.tensors) n += t.name.rfind("codec/decoder.", 0) == 0;
  return n;
}

Checkpoint training_checkpoint(const RunConfig& run, const CodecModel<float>& codec, const GeneratorModel<float>& gen,
                               const Discriminators<float>& disc, const Trainer<float>& trainer) {
  Checkpoint ck;
  Json cfg = header("training");
  Json state = Json::object();
  cfg["run"] = to_json(run);
  cfg["codec"] = to_json(codec.config());
  ck.add("codec/", codec.store().state());
  add_generator(ck, cfg, state, gen);
  cfg["discriminators"] = to_json(disc.config());
  ck.add("discriminators/", disc.store().state());
  ck.add("optimizer/", trainer.optimizer_state());
  state["train"] = to_json(trainer.state());
  ck.config = cfg.dump();
  ck.state = state.dump();
  return ck;
}

TrainingSession load_training(const Checkpoint& ckpt) {
  const Json cfg = parse_section(ckpt.config, "config");
  const Json state = parse_section(ckpt.state, "state");
  TrainingSession s;
  from_json(section(cfg, "run"), s.config, "run");
  s.codec = load_codec(ckpt);
  s.generator = restore_generator(ckpt, cfg, state);
  DiscriminatorConfig d;
  from_json(section(cfg, "discriminators"), d, "discriminators");
  s.discriminators = std::make_unique<Discriminators<float>>(d);
  load_all(s.discriminators->store(), ckpt, "discriminators");
  from_json(section(state, "train"), s.state, "state.train");
  s.optimizer = ckpt.component("optimizer/");
  return s;
}

}  // namespace mvox
