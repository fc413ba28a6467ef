#include "doctest.h"

#include "mvox/discriminators.hpp"
#include "mvox/errors.hpp"
#include "mvox/generator.hpp"
#include "test_util.hpp"

#include <cstring>

using namespace mvox;
using mvox::test::gradcheck_both;
using mvox::test::random_tensor;
using mvox::test::weighted_sum;

namespace {
template <typename Scalar>
bool bitwise_equal(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return a.shape() == b.shape() && std::memcmp(a.ptr(), b.ptr(), sizeof(Scalar) * std::size_t(a.size())) == 0;
}

GeneratorConfig micro(BottleneckMode mode) {
  GeneratorConfig c = GeneratorConfig::tiny(mode);
  c.encoder_channels = 4;
  c.mel.n_mels = 8;
  c.mel.spectral = {64, 64, 16, true};
  c.codec.latent_dim = 8;
  c.codec.codebooks = 2;
  c.codec.codebook_dim = 2;
  c.codec.decoder_channels = 16;
  c.codec.decoder_rates = {2, 2, 4, 2};
  c.codec.encoder_strides = {2, 2, 4, 2};
  return c;
}
}  // namespace

TEST_CASE("AMP block") {
  ParameterStore<float> store(1);
  AMPBlockConfig cfg;
  cfg.channels = 8;
  AMPBlock<float> block(store, "amp", cfg);
  auto x = random_tensor<float>({8, 128}, 2);
  auto y = block(x);
  CHECK(y.shape() == x.shape());
  CHECK(bitwise_equal(x, y));  // closing convs start at zero
  CHECK_THROWS_AS(block(random_tensor<float>({7, 128}, 3)), DimensionError);

  AMPBlockConfig bad = cfg;
  bad.dilations.clear();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.dilations = {1, 0};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  GRADCHECK("amp block", []<typename S>() {
    ParameterStore<S> st(4);
    AMPBlockConfig c;
    c.channels = 3;
    c.dilations = {1, 3};
    AMPBlock<S> b(st, "amp", c);
    for (auto& p : st.params()) p.tensor.data() = random_tensor<S>(p.tensor.shape(), 5 + p.name.size(), -0.5, 0.5).data();
    auto x = random_tensor<S>({3, 16}, 6);
    std::vector<Tensor<S>> inputs{x};
    for (auto& p : st.params()) inputs.push_back(p.tensor);
    std::function<Tensor<S>()> fn = [=] { return weighted_sum(b(x)); };
    return std::make_pair(fn, inputs);
  });
}

TEST_CASE("generator shape chain") {
  for (auto mode : {BottleneckMode::QL, BottleneckMode::Z}) {
    GeneratorModel<float> tiny(GeneratorConfig::tiny(mode));
    const auto chain = tiny.shape_chain(16384);
    CHECK(chain.mel == Shape{128, 64});
    CHECK(chain.latent == Shape{mode == BottleneckMode::QL ? 32 : 64, 32});
    CHECK(chain.output == Shape{1, 16384});

    CodecModel<float> codec(CodecConfig::desk());
    tiny.load_from_codec(codec);
    auto x = random_tensor<float>({1, 16384}, 1, -0.5, 0.5);
    auto out = tiny.forward(x);
    CHECK(out.latent.shape() == chain.latent);
    CHECK(out.decoder_input.shape() == Shape{64, 32});
    CHECK(out.audio.shape() == Shape{1, 16384});
    CHECK(bitwise_equal(out.audio, tiny.forward(x).audio));

    auto mel = mel_spectrogram(x, tiny.config().mel, 44100.0);
    CHECK(tiny.encode(mel).latent.dim(1) == 32);
    CHECK(tiny.encode(concat<float>({mel, mel}, 1)).latent.dim(1) == 64);
    CHECK(tiny.encode(mel).first_conv_out.shape() == Shape{32, 64});
    CHECK_THROWS_AS(tiny.encode(slice(mel, 1, 0, 63)), ContractError);
    CHECK_THROWS_AS(tiny.forward(slice(x, 1, 0, 16000)), ContractError);
    CHECK(tiny.infer(AudioSegment{std::vector<float>(1000, 0.1f), 44100}).size() == 1000);

    for (int size : {220, 430}) {
      GeneratorModel<float> paper(GeneratorConfig::paper(mode, size), false);
      const auto pc = paper.shape_chain(16384);
      CHECK(pc.mel == Shape{128, 64});
      CHECK(pc.latent == Shape{mode == BottleneckMode::QL ? 72 : 1024, 32});
      CHECK(pc.output == Shape{1, 16384});
      const double count = double(paper.store().parameter_count());
      CHECK(std::abs(count / (size * 1e6) - 1.0) <= 0.02);
    }
  }
  // samples : mel frames : latent frames = 512k : 2k : k
  GeneratorModel<float> g(GeneratorConfig::tiny(), false);
  for (Index k = 1; k < 6; ++k) {
    const auto c = g.shape_chain(512 * k);
    CHECK(c.mel[1] == 2 * k);
    CHECK(c.latent[1] == k);
    CHECK(c.output[1] == 512 * k);
  }
}

TEST_CASE("generator decoder loading and QL projection") {
  CodecModel<float> codec(CodecConfig::desk());
  GeneratorModel<float> g(GeneratorConfig::tiny(BottleneckMode::QL));
  g.load_from_codec(codec);
  for (const auto& p : g.store().params())
    if (p.name.rfind("decoder.", 0) == 0) {
      const auto* src = codec.store().find(p.name);
      REQUIRE(src);
      CHECK(bitwise_equal(p.tensor, src->tensor));
      CHECK(p.frozen);
    }
  // QL latents map through the teacher exactly like ql_to_z.
  auto z = random_tensor<float>({64, 5}, 3);
  auto q = codec.quantize(z);
  auto via_gen = g.decoder_input(q.ql);
  auto via_codec = ql_to_z(q.ql, codec.rvq());
  CHECK((via_gen.data() - via_codec.data()).abs().maxCoeff() <= 1e-5f);

  GeneratorModel<float> fresh(GeneratorConfig::tiny(BottleneckMode::QL));
  CHECK_THROWS_AS(fresh.decoder_input(q.ql), StateError);
  auto records = codec.store().state();
  std::erase_if(records, [](const TensorRecord& r) { return r.name == "decoder.output.bias"; });
  CHECK_THROWS_AS(fresh.load_decoder(records), DimensionError);
}

TEST_CASE("skip connection") {
  GeneratorModel<double> g(GeneratorConfig::tiny());
  auto c = random_tensor<double>({32, 64}, 1);
  CHECK_THROWS_AS(g.skip_pool(c), StateError);

  auto x = random_tensor<double>({1, 4096}, 2, -0.5, 0.5);
  const auto before = g.forward(x).audio;
  g.enable_skip();
  CHECK(bitwise_equal(before, g.forward(x).audio));
  CHECK(g.skip_pool(c).shape() == Shape{64, 32});

  // Constant input: output equals projection row sums times the constant.
  auto* w = g.store().find("skip.proj.weight");
  REQUIRE(w);
  w->tensor.data() = random_tensor<double>(w->tensor.shape(), 3).data();
  auto y = g.skip_pool(Tensor<double>::full({32, 64}, 0.5));
  for (Index o = 0; o < 64; ++o) {
    double row = 0;
    for (Index i = 0; i < 32; ++i) row += w->tensor[o * 32 + i];
    for (Index t = 0; t < 32; ++t) CHECK(std::abs(y[o * 32 + t] - 0.5 * row) <= 1e-12);
  }
}

TEST_CASE("generator full-graph gradient") {
  for (auto mode : {BottleneckMode::Z, BottleneckMode::QL}) {
    GRADCHECK("generator", [mode]<typename S>() {
      auto cfg = micro(mode);
      auto g = std::make_shared<GeneratorModel<S>>(cfg);
      CodecModel<S> codec(cfg.codec);
      g->load_from_codec(codec);
      g->set_decoder_frozen(false);
      g->enable_skip();
      std::vector<Tensor<S>> inputs;
      std::size_t i = 0;
      for (auto& p : g->store().params()) {
        p.tensor.data() = random_tensor<S>(p.tensor.shape(), 10 + i, -0.3, 0.3).data();
        if (i++ % 3 == 0) inputs.push_back(p.tensor);  // random subset
      }
      auto x = random_tensor<S>({1, 128}, 9, -0.5, 0.5);
      std::function<Tensor<S>()> fn = [g, x] { return weighted_sum(g->forward(x).audio); };
      return std::make_pair(fn, inputs);
    });
  }
}

TEST_CASE("MPD folding and structure") {
  auto x12 = random_tensor<float>({1, 12}, 1);
  CHECK(mpd_fold(x12, 3).shape() == Shape{1, 4, 3});
  auto x13 = random_tensor<float>({1, 13}, 2);
  auto f = mpd_fold(x13, 5);
  CHECK(f.shape() == Shape{1, 3, 5});
  CHECK(f[13] == x13[11]);  // reflect pad
  CHECK(f[14] == x13[10]);
  CHECK_THROWS_AS(mpd_fold(random_tensor<float>({1, 2}, 3), 3), ContractError);

  MPDConfig bad;
  bad.periods = {2, 3, 5, 7};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.periods = {2, 3, 5, 7, 7};
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  Discriminators<float> d(DiscriminatorConfig::tiny());
  auto x = random_tensor<float>({1, 4096}, 4);
  auto out = d(x);
  CHECK(out.logits.size() == 8);
  REQUIRE(out.features.size() == 8);
  for (std::size_t i = 0; i < 5; ++i) CHECK(Index(out.features[i].size()) == d.config().mpd.layers());
  for (std::size_t i = 5; i < 8; ++i) CHECK(Index(out.features[i].size()) == d.config().mrsd.layers());
  for (const auto& l : out.logits) CHECK(l.data().allFinite());
  auto z1 = d(Tensor<float>::zeros({1, 4096})), z2 = d(Tensor<float>::zeros({1, 4096}));
  for (std::size_t i = 0; i < 8; ++i) CHECK(bitwise_equal(z1.logits[i], z2.logits[i]));
  // Zero input through zero biases gives zero logits for every MRSD sub.
  for (std::size_t i = 5; i < 8; ++i) CHECK(z1.logits[i].data().abs().maxCoeff() == 0.0f);
}

TEST_CASE("MRSD band partition") {
  for (Index bins : {1025, 513, 257, 40}) {
    const auto bands = band_partition(bins, MRSDConfig{}.band_edges);
    REQUIRE(bands.size() == 5);
    Index next = 0;
    for (const auto& [s, e] : bands) {
      CHECK(s == next);
      CHECK(e > s);
      next = e;
    }
    CHECK(next == bins);
  }
  CHECK_THROWS_AS(band_partition(3, MRSDConfig{}.band_edges), ConfigError);
  MRSDConfig bad;
  bad.band_edges = {0, 0.5, 0.4, 1};
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = MRSDConfig{};
  bad.resolutions.pop_back();
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("discriminator gradients") {
  GRADCHECK("mpd sub", []<typename S>() {
    MPDConfig cfg;
    cfg.channels = {2, 3};
    auto store = std::make_shared<ParameterStore<S>>(3);
    auto mpd = std::make_shared<MultiPeriodDiscriminator<S>>(*store, "mpd", cfg);
    for (auto& p : store->params()) p.tensor.data() = random_tensor<S>(p.tensor.shape(), p.name.size(), -0.5, 0.5).data();
    auto x = random_tensor<S>({1, 60}, 4);
    std::vector<Tensor<S>> inputs{x};
    for (auto& p : store->params())
      if (p.name.rfind("mpd.1.", 0) == 0) inputs.push_back(p.tensor);
    std::function<Tensor<S>()> fn = [=] {
      auto o = mpd->forward_one(x, 1);
      return weighted_sum(o.logits[0]) + weighted_sum(o.features[0][0], 5);
    };
    return std::make_pair(fn, inputs);
  });
  GRADCHECK("mrsd sub", []<typename S>() {
    MRSDConfig cfg;
    cfg.resolutions = {{64, 64, 16, true}, {32, 32, 8, true}, {16, 16, 4, true}};
    cfg.band_edges = {0, 0.5, 1};
    cfg.channels = {2, 2};
    auto store = std::make_shared<ParameterStore<S>>(4);
    auto mrsd = std::make_shared<MultiResolutionSpectrogramDiscriminator<S>>(*store, "mrsd", cfg);
    for (auto& p : store->params()) p.tensor.data() = random_tensor<S>(p.tensor.shape(), p.name.size(), -0.5, 0.5).data();
    auto x = random_tensor<S>({1, 64}, 5);
    std::vector<Tensor<S>> inputs{x};
    for (auto& p : store->params())
      if (p.name.rfind("mrsd.0.", 0) == 0) inputs.push_back(p.tensor);
    std::function<Tensor<S>()> fn = [=] { return weighted_sum(mrsd->forward_one(x, 0).logits[0]); };
    return std::make_pair(fn, inputs);
  });
}
