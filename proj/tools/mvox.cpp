#include "mvox/checkpoint.hpp"
#include "mvox/config.hpp"
#include "mvox/errors.hpp"
#include "mvox/eval.hpp"
#include "mvox/gradcheck.hpp"
#include "mvox/io.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace mvox;

namespace {

// One JSON record per line, flushed as it goes so a crashed run keeps its trace.
class Manifest {
 public:
  explicit Manifest(const std::string& path) : out_(path, std::ios::trunc) {
    if (!out_) throw FileError("cannot write manifest " + path);
  }
  void write(const Json& j) { raw(j.dump()); }
  void raw(const std::string& line) {
    out_ << line << '\n' << std::flush;
    if (!out_) throw FileError("manifest write failed");
  }

 private:
  std::ofstream out_;
};

Json run_header(const char* command, const std::optional<std::uint64_t>& seed) {
  Json j;
  j["command"] = command;
  j["version"] = MVOX_VERSION;
  j["seed"] = seed ? Json(*seed) : Json(nullptr);
  return j;
}

std::vector<std::string> wav_names(const std::string& dir) {
  std::error_code ec;
  if (!fs::is_directory(dir, ec)) throw FileError("not a directory: " + dir);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".wav") names.push_back(e.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DataError("no .wav files in " + dir);
  return names;
}

std::vector<AudioSegment> load_corpus(const std::string& dir) {
  std::vector<AudioSegment> clips;
  for (const auto& n : wav_names(dir)) clips.push_back(read_wav((fs::path(dir) / n).string()));
  return clips;
}

Json corpus_json(const std::string& dir, const std::vector<AudioSegment>& clips) {
  Index samples = 0;
  for (const auto& c : clips) samples += c.size();
  return {{"dir", dir}, {"clips", clips.size()}, {"samples", samples}};
}

void log_progress(long long step, long long total, double value, const char* what) {
  std::fprintf(stderr, "step %lld/%lld  %s %.5g\n", step, total, what, value);
}

// ---- gen-data ----

struct GenDataArgs {
  std::string out;
  SyntheticDatasetSpec spec;
  std::string format = "f32";
};

int gen_data(const GenDataArgs& a) {
  a.spec.validate();
  const WavFormat format = parse_wav_format(a.format);
  fs::create_directories(a.out);
  Manifest m((fs::path(a.out) / "manifest.jsonl").string());
  Json h = run_header("gen-data", a.spec.seed);
  h["config"] = to_json(a.spec);
  h["format"] = to_string(format);
  m.write(h);
  for (Index i = 0; i < a.spec.n_clips; ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%04lld.wav", static_cast<long long>(i));
    const AudioSegment clip = synth_clip(a.spec, i);
    write_wav((fs::path(a.out) / name).string(), clip, format);
    m.write({{"clip", name}, {"samples", clip.size()}});
  }
  m.write({{"event", "done"}, {"clips", a.spec.n_clips}});
  return 0;
}

// ---- train-codec ----

struct TrainCodecArgs {
  std::string data, out, config, manifest;
  std::optional<long long> steps;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
};

int train_codec_cmd(const TrainCodecArgs& a) {
  CodecConfig codec_cfg = CodecConfig::desk();
  CodecTrainConfig train_cfg;
  if (!a.config.empty()) {
    const Json j = read_json_file(a.config);
    for (const auto& [key, value] : j.items())
      if (key != "codec" && key != "codec_train") throw ConfigError("unknown key \"" + key + "\" (codec, codec_train)");
    if (j.contains("codec")) from_json(j["codec"], codec_cfg, "codec");
    if (j.contains("codec_train")) from_json(j["codec_train"], train_cfg, "codec_train");
  }
  if (a.steps) train_cfg.steps = *a.steps;
  if (a.seed) train_cfg.seed = *a.seed;
  if (a.lr) train_cfg.lr = *a.lr;
  codec_cfg.validate();

  const auto clips = load_corpus(a.data);
  Manifest m(a.manifest.empty() ? a.out + ".manifest.jsonl" : a.manifest);
  Json h = run_header("train-codec", train_cfg.seed);
  h["config"] = {{"codec", to_json(codec_cfg)}, {"codec_train", to_json(train_cfg)}};
  h["data"] = corpus_json(a.data, clips);
  m.write(h);

  CodecModel<float> codec(codec_cfg);
  const auto log = train_codec(codec, clips, train_cfg, [&](Index step, double loss) {
    m.write({{"step", step}, {"loss", loss}});
    if ((step + 1) % 50 == 0 || step + 1 == train_cfg.steps) log_progress(step + 1, train_cfg.steps, loss, "loss");
  });
  save_checkpoint(a.out, codec_checkpoint(codec));
  m.write({{"event", "done"}, {"steps", log.loss.size()}});
  return 0;
}

// ---- train ----

struct TrainArgs {
  std::string config, codec, data, out, manifest, resume;
  std::optional<long long> steps, switch_step, batch;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  long long checkpoint_every = 0;
  long long log_every = 50;
};

int train_cmd(const TrainArgs& a) {
  const auto clips = load_corpus(a.data);

  std::unique_ptr<CodecModel<float>> codec;
  std::unique_ptr<GeneratorModel<float>> gen;
  std::unique_ptr<Discriminators<float>> disc;
  RunConfig run;
  std::optional<TrainingSession> session;

  if (!a.resume.empty()) {
    if (!a.config.empty()) throw ConfigError("--config cannot be combined with --resume; the checkpoint holds the run config");
    session = load_training(load_checkpoint(a.resume));
    run = session->config;
  } else {
    Json j = a.config.empty() ? Json::object() : read_json_file(a.config);
    from_json(j, run);
  }
  if (a.steps) run.train.total_steps = *a.steps;
  if (a.seed) run.train.seed = *a.seed;
  if (a.lr) run.train.lr = *a.lr;
  if (a.switch_step) run.train.stage_switch_step = *a.switch_step;
  if (a.batch) run.train.batch = *a.batch;

  if (session) {
    codec = std::move(session->codec);
    gen = std::move(session->generator);
    disc = std::move(session->discriminators);
  } else {
    if (a.codec.empty()) throw ConfigError("train needs --codec (a checkpoint from train-codec) or --resume");
    codec = load_codec(load_checkpoint(a.codec));
    if (to_json(codec->config()) != to_json(run.generator.codec))
      throw ConfigError("codec checkpoint " + a.codec + " does not match generator.codec in the run config");
    gen = std::make_unique<GeneratorModel<float>>(run.generator);
    gen->load_from_codec(*codec);
    disc = std::make_unique<Discriminators<float>>(run.discriminators);
  }
  run.validate();

  Trainer<float> trainer(*gen, *disc, *codec, clips, run.train);
  if (session) trainer.restore(session->state, session->optimizer);

  Manifest m(a.manifest.empty() ? a.out + ".manifest.jsonl" : a.manifest);
  Json h = run_header("train", run.train.seed);
  h["config"] = to_json(run);
  h["data"] = corpus_json(a.data, clips);
  h["codec"] = a.codec.empty() ? Json(nullptr) : Json(a.codec);
  h["resume"] = session ? Json({{"checkpoint", a.resume}, {"step", session->state.step}}) : Json(nullptr);
  m.write(h);

  auto save = [&] { save_checkpoint(a.out, training_checkpoint(run, *codec, *gen, *disc, trainer)); };
  const long long total = run.train.total_steps;
  std::size_t events_seen = trainer.events().size();
  const auto t0 = std::chrono::steady_clock::now();
  while (trainer.state().step < total) {
    const StepReport r = trainer.train_step();
    for (; events_seen < trainer.events().size(); ++events_seen) m.raw(manifest_line(trainer.events()[events_seen]));
    m.raw(manifest_line(r));
    const long long done = trainer.state().step;
    if (a.log_every > 0 && (done % a.log_every == 0 || done == total)) log_progress(done, total, r.total, "total");
    if (a.checkpoint_every > 0 && done % a.checkpoint_every == 0 && done < total) save();
  }
  save();
  m.write({{"event", "done"}, {"step", trainer.state().step}});
  std::fprintf(stderr, "trained to step %lld in %.1f s\n", trainer.state().step,
               std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
  return 0;
}

// ---- infer ----

struct InferArgs {
  std::string checkpoint, in, mel, out, manifest;
  std::string format = "f32";
};

int infer_cmd(const InferArgs& a) {
  const WavFormat format = parse_wav_format(a.format);
  const auto gen = load_generator(load_checkpoint(a.checkpoint));
  Json input;
  AudioSegment y;
  if (!a.in.empty()) {
    const AudioSegment x = read_wav(a.in);
    if (x.sample_rate != gen->config().codec.sample_rate)
      throw DataError(a.in + ": sample rate " + std::to_string(x.sample_rate) + " Hz, model expects " +
                      std::to_string(gen->config().codec.sample_rate) + " Hz");
    y = gen->infer(x);
    input = {{"wav", a.in}, {"samples", x.size()}};
  } else {
    const Tensor<float> mel = read_npy(a.mel);
    y = gen->infer_mel(mel);
    input = {{"mel", a.mel}, {"shape", mel.shape()}};
  }
  write_wav(a.out, y, format);

  Manifest m(a.manifest.empty() ? a.out + ".manifest.jsonl" : a.manifest);
  Json h = run_header("infer", std::nullopt);
  h["config"] = to_json(gen->config());
  h["checkpoint"] = a.checkpoint;
  h["input"] = input;
  h["output"] = {{"samples", y.size()}, {"format", to_string(format)}};
  m.write(h);
  return 0;
}

// ---- eval ----

struct EvalArgs {
  std::string checkpoint, data, tsv, json, manifest;
};

int eval_cmd(const EvalArgs& a) {
  const auto gen = load_generator(load_checkpoint(a.checkpoint));
  const MetricConfig cfg;
  const EvalReport report = evaluate_model([&](const AudioSegment& x) { return gen->infer(x); }, a.data, cfg);
  write_report(report, a.tsv, a.json);

  Manifest m(a.manifest.empty() ? a.json + ".manifest.jsonl" : a.manifest);
  Json h = run_header("eval", std::nullopt);
  h["config"] = {{"generator", to_json(gen->config())},
                 {"metrics",
                  {{"mr_stft", [&] {
                      Json s = Json::array();
                      for (const auto& c : cfg.mr_stft) s.push_back(to_json(c));
                      return s;
                    }()},
                   {"mr_mel", to_json(cfg.mr_mel)},
                   {"log_floor", cfg.log_floor}}}};
  h["checkpoint"] = a.checkpoint;
  h["data"] = a.data;
  h["clips"] = report.clips.size();
  h["skipped"] = report.skipped.size();
  m.write(h);
  std::fprintf(stderr, "MR-STFT %.4f +- %.4f  MR-MEL %.4f +- %.4f  (%zu clips, %zu skipped)\n", report.mr_stft.mean,
               report.mr_stft.std, report.mr_mel.mean, report.mr_mel.std, report.clips.size(),
               report.skipped.size());
  return report.clips.empty() ? 1 : 0;
}

// ---- gradcheck ----

struct GradcheckArgs {
  int probes = 20;
  std::uint64_t seed = 1;
  std::string manifest;
};

int gradcheck_cmd(const GradcheckArgs& a) {
  const auto t0 = std::chrono::steady_clock::now();
  const auto results = run_gradient_suite(a.probes, a.seed);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::optional<Manifest> m;
  if (!a.manifest.empty()) {
    m.emplace(a.manifest);
    Json h = run_header("gradcheck", a.seed);
    h["config"] = {{"probes", a.probes}};
    m->write(h);
  }
  int failed = 0;
  for (const auto& r : results) {
    std::printf("%-4s %-36s max rel err %.3e  tol %.0e  (%d probes)\n", r.passed ? "ok" : "FAIL", r.name.c_str(),
                r.max_relative_error, r.tolerance, r.probes);
    failed += !r.passed;
    if (m)
      m->write({{"case", r.name}, {"max_relative_error", r.max_relative_error}, {"tolerance", r.tolerance},
                {"probes", r.probes}, {"passed", r.passed}});
  }
  std::printf("%zu cases, %d failed, %.1f s\n", results.size(), failed, seconds);
  return failed ? 1 : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mvox: mel-to-waveform vocoder toolkit"};
  app.set_version_flag("--version", std::string(MVOX_VERSION));
  app.require_subcommand(1);

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "Write a synthetic corpus of WAV clips");
  c_gen->add_option("--out", gd.out, "Output directory")->required();
  c_gen->add_option("--clips", gd.spec.n_clips, "Number of clips")->capture_default_str();
  c_gen->add_option("--seconds", gd.spec.clip_seconds, "Clip length in seconds")->capture_default_str();
  c_gen->add_option("--sample-rate", gd.spec.sample_rate, "Sample rate in Hz")->capture_default_str();
  c_gen->add_option("--seed", gd.spec.seed, "Corpus seed")->capture_default_str();
  c_gen->add_option("--format", gd.format, "pcm16 or f32")->capture_default_str();

  TrainCodecArgs tc;
  auto* c_codec = app.add_subcommand("train-codec", "Train the RVQ teacher codec and save it");
  c_codec->add_option("--data", tc.data, "Directory of training WAVs")->required();
  c_codec->add_option("--out", tc.out, "Output checkpoint")->required();
  c_codec->add_option("--config", tc.config, "JSON file with \"codec\" and \"codec_train\" sections");
  c_codec->add_option("--steps", tc.steps, "Override codec_train.steps");
  c_codec->add_option("--seed", tc.seed, "Override codec_train.seed");
  c_codec->add_option("--lr", tc.lr, "Override codec_train.lr");
  c_codec->add_option("--manifest", tc.manifest, "Manifest path (default <out>.manifest.jsonl)");

  TrainArgs tr;
  auto* c_train = app.add_subcommand("train", "Run two-stage vocoder training");
  c_train->add_option("--config", tr.config, "Run config JSON (default: desk preset)");
  c_train->add_option("--codec", tr.codec, "Teacher codec checkpoint");
  c_train->add_option("--data", tr.data, "Directory of training WAVs")->required();
  c_train->add_option("--out", tr.out, "Output training checkpoint")->required();
  c_train->add_option("--resume", tr.resume, "Continue from a training checkpoint");
  c_train->add_option("--steps", tr.steps, "Override train.total_steps");
  c_train->add_option("--seed", tr.seed, "Override train.seed");
  c_train->add_option("--lr", tr.lr, "Override train.lr");
  c_train->add_option("--switch-step", tr.switch_step, "Override train.stage_switch_step");
  c_train->add_option("--batch", tr.batch, "Override train.batch");
  c_train->add_option("--checkpoint-every", tr.checkpoint_every, "Save every N steps (0: only at the end)");
  c_train->add_option("--log-every", tr.log_every, "Progress line every N steps on stderr")->capture_default_str();
  c_train->add_option("--manifest", tr.manifest, "Manifest path (default <out>.manifest.jsonl)");

  InferArgs in;
  auto* c_infer = app.add_subcommand("infer", "Vocode a WAV or a mel spectrogram");
  c_infer->add_option("--checkpoint", in.checkpoint, "Generator or training checkpoint")->required();
  auto* o_in = c_infer->add_option("--in", in.in, "Input WAV (analysed to mel)");
  auto* o_mel = c_infer->add_option("--mel", in.mel, "Input log-mel .npy [n_mels, frames]");
  o_in->excludes(o_mel);
  c_infer->add_option("--out", in.out, "Output WAV")->required();
  c_infer->add_option("--format", in.format, "pcm16 or f32")->capture_default_str();
  c_infer->add_option("--manifest", in.manifest, "Manifest path (default <out>.manifest.jsonl)");

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "MR-STFT and MR-MEL over a directory of WAVs");
  c_eval->add_option("--checkpoint", ev.checkpoint, "Generator or training checkpoint")->required();
  c_eval->add_option("--data", ev.data, "Directory of reference WAVs")->required();
  c_eval->add_option("--tsv", ev.tsv, "Per-clip table")->required();
  c_eval->add_option("--json", ev.json, "Structured report")->required();
  c_eval->add_option("--manifest", ev.manifest, "Manifest path (default <json>.manifest.jsonl)");

  GradcheckArgs gc;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference gradient suite; exits 1 on failure");
  c_grad->add_option("--probes", gc.probes, "Probes per case")->capture_default_str();
  c_grad->add_option("--seed", gc.seed, "Direction seed")->capture_default_str();
  c_grad->add_option("--manifest", gc.manifest, "Optional manifest path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "mvox: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (*c_gen) return gen_data(gd);
    if (*c_codec) return train_codec_cmd(tc);
    if (*c_train) return train_cmd(tr);
    if (*c_infer) {
      if (in.in.empty() == in.mel.empty()) {
        std::cerr << "mvox: infer needs exactly one of --in or --mel\n\n" << c_infer->help();
        return 2;
      }
      return infer_cmd(in);
    }
    if (*c_eval) return eval_cmd(ev);
    if (*c_grad) return gradcheck_cmd(gc);
  } catch (const std::exception& e) {
    std::cerr << "mvox: error: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
