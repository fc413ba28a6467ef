#include "doctest.h"

#include "mvox/checkpoint.hpp"
#include "mvox/errors.hpp"
#include "mvox/eval.hpp"
#include "mvox/io.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>

using namespace mvox;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("mvox_test_" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string operator/(const std::string& name) const { return (path / name).string(); }
};

AudioSegment noise(Index n, std::uint64_t seed, float amp = 0.5f) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(-amp, amp);
  AudioSegment x;
  x.samples.resize(static_cast<std::size_t>(n));
  for (auto& s : x.samples) s = u(rng);
  return x;
}

AudioSegment tone(Index n, double hz, float amp = 0.5f) {
  AudioSegment x;
  x.samples.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) x.samples[i] = amp * static_cast<float>(std::sin(2 * M_PI * hz * i / 44100.0));
  return x;
}

// Hand-assembled little-endian WAV for header fixtures.
struct Bytes {
  std::string s;
  Bytes& tag(const char* t) {
    s.append(t, 4);
    return *this;
  }
  Bytes& u16(std::uint16_t v) {
    s.push_back(char(v & 0xFF));
    s.push_back(char(v >> 8));
    return *this;
  }
  Bytes& u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) s.push_back(char((v >> (8 * i)) & 0xFF));
    return *this;
  }
  Bytes& f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    return u32(u);
  }
};

std::string wav_bytes(std::uint16_t format, std::uint16_t channels, std::uint16_t bits, const std::string& payload) {
  Bytes b;
  b.tag("RIFF").u32(std::uint32_t(36 + payload.size())).tag("WAVE");
  b.tag("fmt ").u32(16).u16(format).u16(channels).u32(44100).u32(44100u * channels * bits / 8);
  b.u16(std::uint16_t(channels * bits / 8)).u16(bits);
  b.tag("data").u32(std::uint32_t(payload.size()));
  b.s += payload;
  return b.s;
}

}  // namespace

TEST_CASE("wav float32 round trip is bitwise exact") {
  TempDir dir;
  AudioSegment x = noise(1001, 3, 1.5f);  // values beyond [-1,1] survive float32
  x.samples[0] = -0.0f;
  x.samples[1] = 1e-40f;  // subnormal
  write_wav(dir / "a.wav", x, WavFormat::F32);
  const AudioSegment y = read_wav(dir / "a.wav");
  REQUIRE(y.size() == x.size());
  CHECK(y.sample_rate == 44100.0);
  CHECK(std::memcmp(x.samples.data(), y.samples.data(), x.samples.size() * sizeof(float)) == 0);
}

TEST_CASE("wav header lengths match payload") {
  const AudioSegment x = noise(77, 4);
  for (WavFormat f : {WavFormat::PCM16, WavFormat::F32}) {
    const std::string b = encode_wav(x, f);
    const std::size_t bytes_per = f == WavFormat::PCM16 ? 2 : 4;
    auto u32 = [&](std::size_t at) {
      std::uint32_t v = 0;
      for (int i = 0; i < 4; ++i) v |= std::uint32_t(static_cast<unsigned char>(b[at + i])) << (8 * i);
      return v;
    };
    CHECK(b.size() == 44 + 77 * bytes_per);
    CHECK(u32(4) == b.size() - 8);
    CHECK(u32(40) == 77 * bytes_per);
  }
}

TEST_CASE("pcm16 conventions") {
  Bytes p;
  p.u16(0x8000).u16(0x7FFF).u16(0).u16(0x4000);
  const AudioSegment y = parse_wav(wav_bytes(1, 1, 16, p.s));
  REQUIRE(y.size() == 4);
  CHECK(y.samples[0] == -1.0f);
  CHECK(y.samples[1] == 32767.0f / 32768.0f);
  CHECK(y.samples[2] == 0.0f);
  CHECK(y.samples[3] == 0.5f);

  // Round half away from zero, clamping outside [-1, 1].
  AudioSegment x;
  x.samples = {0.5f / 32768, -0.5f / 32768, 1.5f / 32768, 2.0f, -2.0f, 1.0f};
  const AudioSegment r = parse_wav(encode_wav(x, WavFormat::PCM16));
  CHECK(r.samples[0] == 1.0f / 32768);
  CHECK(r.samples[1] == -1.0f / 32768);
  CHECK(r.samples[2] == 2.0f / 32768);
  CHECK(r.samples[3] == 32767.0f / 32768);
  CHECK(r.samples[4] == -1.0f);
  CHECK(r.samples[5] == 32767.0f / 32768);

  const AudioSegment n = noise(5000, 9, 0.999f);
  const AudioSegment q = parse_wav(encode_wav(n, WavFormat::PCM16));
  double worst = 0;
  for (std::size_t i = 0; i < n.samples.size(); ++i)
    worst = std::max(worst, std::abs(double(n.samples[i]) - double(q.samples[i])));
  CHECK(worst <= 1.0 / 32768);
}

TEST_CASE("stereo downmix and extensible format") {
  Bytes p;
  p.f32(1.0f).f32(0.0f).f32(-0.5f).f32(0.25f);
  const AudioSegment y = parse_wav(wav_bytes(3, 2, 32, p.s));
  REQUIRE(y.size() == 2);
  CHECK(y.samples[0] == 0.5f);
  CHECK(y.samples[1] == -0.125f);

  Bytes q;
  q.u16(0x7FFF).u16(0x8000);
  const AudioSegment z = parse_wav(wav_bytes(1, 2, 16, q.s));
  CHECK(z.samples[0] == doctest::Approx((32767.0 / 32768 - 1.0) / 2));

  Bytes e;
  e.tag("RIFF").u32(4 + 8 + 40 + 8 + 4).tag("WAVE");
  e.tag("fmt ").u32(40).u16(0xFFFE).u16(1).u32(48000).u32(48000 * 4).u16(4).u16(32);
  e.u16(22).u16(32).u32(4).u16(3);  // cbSize, valid bits, channel mask, sub-format
  e.s.append(14, '\0');             // rest of the GUID
  e.tag("data").u32(4).f32(0.75f);
  const AudioSegment ext = parse_wav(e.s);
  CHECK(ext.sample_rate == 48000.0);
  REQUIRE(ext.size() == 1);
  CHECK(ext.samples[0] == 0.75f);
}

TEST_CASE("wav errors") {
  const std::string good = encode_wav(noise(10, 1), WavFormat::F32);

  std::string bad_riff = good;
  bad_riff[0] = 'X';
  CHECK_THROWS_AS(parse_wav(bad_riff), ParseError);

  std::string bad_wave = good;
  bad_wave[8] = 'X';
  try {
    parse_wav(bad_wave);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset == 8);
  }

  // data chunk claims more than the file holds.
  std::string long_data = good;
  long_data[40] = char(0xFF);
  try {
    parse_wav(long_data);
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset == 40);
  }

  CHECK_THROWS_AS(parse_wav(good.substr(0, 30)), ParseError);
  CHECK_THROWS_AS(parse_wav(wav_bytes(1, 1, 24, std::string(6, '\0'))), UnsupportedFormatError);
  CHECK_THROWS_AS(parse_wav(wav_bytes(2, 1, 16, std::string(4, '\0'))), UnsupportedFormatError);
  CHECK_THROWS_AS(parse_wav(wav_bytes(3, 1, 32, std::string(6, '\0'))), ParseError);  // partial frame
  CHECK_THROWS_AS(read_wav("/nonexistent/x.wav"), FileError);

  AudioSegment nan;
  nan.samples = {0.0f, std::nanf("")};
  CHECK_THROWS_AS(encode_wav(nan), ContractError);
}

namespace {
std::string npy_bytes(const std::string& header_dict, const std::string& payload) {
  std::string header = header_dict;
  while ((10 + header.size() + 1) % 64 != 0) header += ' ';
  header += '\n';
  std::string out("\x93NUMPY\x01\x00", 8);
  out += static_cast<char>(header.size() & 0xff);
  out += static_cast<char>(header.size() >> 8);
  return out + header + payload;
}
}  // namespace

TEST_CASE("npy arrays") {
  TempDir dir;
  Tensor<float> m({3, 5});
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<float>(i) * 0.25f - 1.0f;
  write_npy(dir / "m.npy", m);
  const std::string bytes = read_file(dir / "m.npy");
  CHECK(bytes.size() % 64 == 60);  // 64-byte aligned header, then 15 floats
  CHECK(bytes.substr(0, 6) == std::string("\x93NUMPY", 6));
  const Tensor<float> back = read_npy(dir / "m.npy");
  CHECK(back.shape() == m.shape());
  CHECK((back.data() == m.data()).all());

  // Little-endian float64, row-major: element (r, c) = 10 r + c.
  std::string payload;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 3; ++c) {
      const double v = 10.0 * r + c;
      payload.append(reinterpret_cast<const char*>(&v), 8);
    }
  const Tensor<float> d = parse_npy(npy_bytes("{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }", payload));
  CHECK(d.shape() == Shape{2, 3});
  CHECK(d[4] == 11.0f);

  CHECK_THROWS_AS(parse_npy("NOTNPY0000"), ParseError);
  CHECK_THROWS_AS(parse_npy(npy_bytes("{'descr': '<i4', 'fortran_order': False, 'shape': (2, 3), }", payload)),
                  UnsupportedFormatError);
  CHECK_THROWS_AS(parse_npy(npy_bytes("{'descr': '<f8', 'fortran_order': True, 'shape': (2, 3), }", payload)),
                  UnsupportedFormatError);
  CHECK_THROWS_AS(parse_npy(npy_bytes("{'descr': '<f8', 'fortran_order': False, 'shape': (6,), }", payload)),
                  DimensionError);
  CHECK_THROWS_AS(parse_npy(npy_bytes("{'descr': '<f8', 'fortran_order': False, 'shape': (2, 3), }",
                                      payload.substr(0, 40))),
                  ParseError);
}

TEST_CASE("checkpoint container") {
  Checkpoint ck;
  ck.config = R"({"a":1})";
  ck.state = R"({"step":3})";
  TensorRecord a{"w", DType::F32, {2, 3}, Eigen::ArrayXd::LinSpaced(6, -1, 1).cast<float>().cast<double>()};
  TensorRecord b{"v", DType::F64, {4}, Eigen::ArrayXd::Constant(4, 1.0 / 3.0)};
  ck.tensors = {a, b};
  const std::string bytes = serialize_checkpoint(ck);
  CHECK(bytes.substr(0, 4) == "MVOX");
  CHECK(static_cast<unsigned char>(bytes[4]) == kCheckpointVersion);

  const Checkpoint back = deserialize_checkpoint(bytes);
  CHECK(back.config == ck.config);
  CHECK(back.state == ck.state);
  REQUIRE(back.tensors.size() == 2);
  CHECK(back.tensors[0].shape == Shape{2, 3});
  CHECK((back.tensors[0].values == a.values).all());
  CHECK((back.tensors[1].values == b.values).all());
  CHECK(back.tensors[1].dtype == DType::F64);
  CHECK(serialize_checkpoint(back) == bytes);

  for (std::size_t cut : {std::size_t(0), std::size_t(3), std::size_t(11), bytes.size() / 2, bytes.size() - 1})
    CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, cut)), CorruptionError);
  std::string flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK_THROWS_AS(deserialize_checkpoint(flipped), CorruptionError);

  // Future version with a valid checksum.
  std::string future = bytes.substr(0, bytes.size() - 4);
  future[4] = 2;
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(future.data()), static_cast<uInt>(future.size())));
  for (int i = 0; i < 4; ++i) future.push_back(char((crc >> (8 * i)) & 0xFF));
  CHECK_THROWS_AS(deserialize_checkpoint(future), UnsupportedFormatError);

  Checkpoint dup = ck;
  dup.tensors.push_back(a);
  CHECK_THROWS_AS(serialize_checkpoint(dup), ContractError);
}

TEST_CASE("model checkpoints") {
  TempDir dir;
  CodecModel<float> codec(CodecConfig::desk());
  save_checkpoint(dir / "codec.mvox", codec_checkpoint(codec));
  const auto first = read_file(dir / "codec.mvox");
  auto loaded = load_codec(load_checkpoint(dir / "codec.mvox"));
  save_checkpoint(dir / "codec2.mvox", codec_checkpoint(*loaded));
  CHECK(read_file(dir / "codec2.mvox") == first);

  // Codec checkpoint feeds the generator's decoder slot by name.
  GeneratorModel<float> gen(GeneratorConfig::tiny(BottleneckMode::QL));
  const std::size_t n = load_decoder_from_codec_checkpoint(gen, load_checkpoint(dir / "codec.mvox"));
  CHECK(n > 0);
  const auto ck = load_checkpoint(dir / "codec.mvox");
  for (const auto& t : ck.tensors) {
    if (t.name.rfind("codec/decoder.", 0) != 0) continue;
    const auto* p = gen.store().find(t.name.substr(6));
    REQUIRE(p != nullptr);
    CHECK((p->tensor.data().template cast<double>() == t.values).all());
  }
  CHECK(gen.decoder_frozen());

  const std::string g1 = serialize_checkpoint(generator_checkpoint(gen));
  auto gen2 = load_generator(deserialize_checkpoint(g1));
  CHECK(serialize_checkpoint(generator_checkpoint(*gen2)) == g1);
  auto x = tone(16384, 440);
  const auto y1 = gen.infer(x), y2 = gen2->infer(x);
  CHECK(y1.samples == y2.samples);

  Checkpoint missing = deserialize_checkpoint(g1);
  std::erase_if(missing.tensors, [](const TensorRecord& t) { return t.name == "generator/encoder.input.weight"; });
  CHECK_THROWS_AS(load_generator(missing), DataError);
  CHECK_THROWS_AS(load_codec(deserialize_checkpoint(g1)), DataError);
}

TEST_CASE("metrics") {
  MetricConfig cfg;
  const AudioSegment x = tone(8192, 330);
  CHECK(mr_stft_metric(x, x, cfg) == 0.0);
  CHECK(mr_mel_metric(x, x, cfg) == 0.0);

  AudioSegment silence;
  silence.samples.assign(8192, 0.0f);
  AudioSegment scaled = x;
  for (auto& s : scaled.samples) s *= 0.99f;
  CHECK(mr_stft_metric(x, silence, cfg) > mr_stft_metric(x, scaled, cfg));
  CHECK(mr_mel_metric(x, silence, cfg) > mr_mel_metric(x, scaled, cfg));
  CHECK(mr_stft_metric(x, scaled, cfg) > 0);

  // Compositional oracle: per-scale terms computed from a direct DFT sum.
  const auto terms = mr_stft_terms(x, scaled, cfg);
  REQUIRE(terms.size() == 3);
  double sum = 0;
  for (std::size_t i = 0; i < terms.size(); ++i) {
    MetricConfig one = cfg;
    one.mr_stft = {cfg.mr_stft[i]};
    const double single = mr_stft_metric(x, scaled, one);
    CHECK(single == doctest::Approx(terms[i].spectral_convergence + terms[i].log_magnitude).epsilon(1e-12));
    sum += single;
  }
  CHECK(mr_stft_metric(x, scaled, cfg) == doctest::Approx(sum).epsilon(1e-12));
  // Uniform scaling by 0.99: spectral convergence 0.01, log term |ln 0.99| wherever above the floor.
  CHECK(terms[0].spectral_convergence == doctest::Approx(0.01).epsilon(1e-4));
  CHECK(terms[0].log_magnitude <= std::abs(std::log(0.99)) + 1e-9);

  // Noise at -20 dB hurts more than at -40 dB.
  const AudioSegment n = noise(8192, 21, 1.0f);
  auto add_noise = [&](double db) {
    AudioSegment y = x;
    double px = 0, pn = 0;
    for (std::size_t i = 0; i < x.samples.size(); ++i) px += x.samples[i] * x.samples[i], pn += n.samples[i] * n.samples[i];
    const double g = std::sqrt(px / pn * std::pow(10.0, db / 10));
    for (std::size_t i = 0; i < y.samples.size(); ++i) y.samples[i] += float(g * n.samples[i]);
    return y;
  };
  CHECK(mr_mel_metric(x, add_noise(-20), cfg) > mr_mel_metric(x, add_noise(-40), cfg));
  CHECK(mr_stft_metric(x, add_noise(-20), cfg) > mr_stft_metric(x, add_noise(-40), cfg));

  // MR-MEL is the double-precision mel loss.
  const auto tx = to_tensor<double>(x), ts = to_tensor<double>(scaled);
  CHECK(mr_mel_metric(x, scaled, cfg) == loss_multiscale_spec(tx, ts, cfg.mr_mel, SpecKind::Mel, 44100.0).item());

  AudioSegment shorter = x;
  shorter.samples.pop_back();
  CHECK_THROWS_AS(mr_stft_metric(x, shorter, cfg), DimensionError);
  CHECK_THROWS_AS(mr_mel_metric(x, shorter, cfg), DimensionError);
}

TEST_CASE("evaluate_model") {
  TempDir dir;
  write_wav(dir / "b.wav", tone(4096, 220));
  write_wav(dir / "a.wav", tone(4096, 880), WavFormat::PCM16);
  write_wav(dir / "c.wav", noise(4096, 2));
  write_file(dir / "broken.wav", "not a wav");
  write_file(dir / "notes.txt", "ignored");

  const AudioModel identity = [](const AudioSegment& s) { return s; };
  const EvalReport id = evaluate_model(identity, dir.path.string());
  REQUIRE(id.clips.size() == 3);
  CHECK(id.clips[0].name == "a.wav");
  for (const auto& c : id.clips) {
    CHECK(c.mr_stft == 0.0);
    CHECK(c.mr_mel == 0.0);
  }
  REQUIRE(id.skipped.size() == 1);
  CHECK(id.skipped[0].first == "broken.wav");

  const AudioModel halve = [](const AudioSegment& s) {
    AudioSegment y = s;
    for (auto& v : y.samples) v *= 0.5f;
    return y;
  };
  EvalReport r = evaluate_model(halve, dir.path.string());
  double mean = 0, var = 0;
  for (const auto& c : r.clips) mean += c.mr_mel;
  mean /= 3;
  for (const auto& c : r.clips) var += (c.mr_mel - mean) * (c.mr_mel - mean);
  CHECK(r.mr_mel.mean == doctest::Approx(mean).epsilon(1e-14));
  CHECK(r.mr_mel.std == doctest::Approx(std::sqrt(var / 3)).epsilon(1e-12));
  CHECK(r.to_tsv().find("clip\tmr_stft\tmr_mel\n") == 0);
  CHECK(r.to_json().find("\"skipped\"") != std::string::npos);
  write_report(r, dir / "r.tsv", dir / "r.json");
  CHECK(fs::exists(dir / "r.tsv"));

  const AudioModel truncating = [](const AudioSegment& s) {
    AudioSegment y = s;
    y.samples.resize(100);
    return y;
  };
  const EvalReport t = evaluate_model(truncating, dir.path.string());
  CHECK(t.clips.empty());
  CHECK(t.skipped.size() == 4);

  // Evaluation leaves the model untouched.
  GeneratorModel<float> gen(GeneratorConfig::tiny());
  const std::string before = serialize_checkpoint(generator_checkpoint(gen));
  evaluate_model([&](const AudioSegment& s) { return gen.infer(s); }, dir.path.string());
  CHECK(serialize_checkpoint(generator_checkpoint(gen)) == before);
}

TEST_CASE("config schema") {
  RunConfig run;
  const Json j = to_json(run);
  RunConfig back;
  from_json(j, back);
  CHECK(to_json(back).dump() == j.dump());
  CHECK(back.train.stage_switch_step == 500);
  CHECK(back.generator.mode == BottleneckMode::QL);

  RunConfig partial;
  from_json(parse_json(R"({"train": {"lr": 0.002, "weights": {"lambda_mel": 3}}, "generator": {"mode": "z"}})"),
            partial);
  CHECK(partial.train.lr == 0.002);
  CHECK(partial.train.weights.mel == 3.0);
  CHECK(partial.train.weights.dac == 15.0);
  CHECK(partial.train.batch == 4);
  CHECK(partial.generator.mode == BottleneckMode::Z);

  RunConfig paper;
  from_json(parse_json(R"({"preset": "paper-430"})"), paper);
  CHECK(paper.train.lr == 1e-4);
  CHECK(paper.train.stage_switch_step == 100000);
  CHECK(paper.generator.encoder_channels == GeneratorConfig::paper(BottleneckMode::QL, 430).encoder_channels);

  RunConfig bad;
  try {
    from_json(parse_json(R"({"train": {"weights": {"lambda_foo": 1}}})"), bad);
    FAIL("expected a config error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("train.weights.lambda_foo") != std::string::npos);
  }
  CHECK_THROWS_AS(from_json(parse_json(R"({"preset": "huge"})"), bad), ConfigError);
  CHECK_THROWS_AS(from_json(parse_json(R"({"train": {"lr": "fast"}})"), bad), ConfigError);
  CHECK_THROWS_AS(from_json(parse_json(R"({"generator": {"mode": "q"}})"), bad), ConfigError);
  try {
    parse_json("{\"a\": 1,, }");
    FAIL("expected a parse error");
  } catch (const ParseError& e) {
    CHECK(e.byte_offset == 9);
  }

  MultiScaleConfig m;
  from_json(Json("desk"), m);
  CHECK(m.scales.size() == MultiScaleConfig::desk().scales.size());
  DiscriminatorConfig d;
  from_json(to_json(DiscriminatorConfig::tiny()), d);
  CHECK(to_json(d).dump() == to_json(DiscriminatorConfig::tiny()).dump());
  CodecTrainConfig ct;
  from_json(to_json(CodecTrainConfig{}), ct);
  CHECK(ct.steps == CodecTrainConfig{}.steps);
}
