#include "mvox/discriminators.hpp"
#include "mvox/errors.hpp"
#include "mvox/generator.hpp"
#include "mvox/gradcheck.hpp"
#include "mvox/losses.hpp"
#include "mvox/ops.hpp"

#include <memory>
#include <random>

namespace mvox {

namespace {

template <typename S>
Tensor<S> rand_t(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor<S> t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<S>(dist(rng));
  return t;
}

template <typename S>
Tensor<S> probe(const Tensor<S>& y, std::uint64_t seed = 99) {
  return sum(y * rand_t<S>(y.shape(), seed));
}

// Keeps the model's own initialization but gives zero-initialized tensors
// small values, so every branch carries gradient.
template <typename S>
void wake(ParameterStore<S>& store, std::uint64_t seed) {
  std::size_t i = 0;
  for (auto& p : store.params()) {
    if ((p.tensor.data() == S(0)).all()) p.tensor.data() = rand_t<S>(p.tensor.shape(), seed + i, -0.02, 0.02).data();
    ++i;
  }
}

template <typename S>
using Case = std::pair<std::function<Tensor<S>()>, std::vector<Tensor<S>>>;

class Suite {
 public:
  Suite(int probes, std::uint64_t seed) : probes_(probes), seed_(seed) {}

  // `build` is a generic lambda instantiated for float and double.
  template <typename Build>
  void add(const std::string& name, Build build, double step = 0) {
    GradCheckOptions opt;
    opt.probes = probes_;
    if (step > 0) opt.step = step;
    opt.seed = seed_ + results_.size();
    Case<double> d = build.template operator()<double>();
    results_.push_back(check_gradients<double>(name + " f64", d.first, d.second, opt));
    Case<float> f = build.template operator()<float>();
    Case<double> ref = build.template operator()<double>();
    results_.push_back(check_gradients<float>(name + " f32", {f.first, f.second}, {ref.first, ref.second}, opt));
  }

  std::vector<GradCheckResult> results() && { return std::move(results_); }

 private:
  int probes_;
  std::uint64_t seed_;
  std::vector<GradCheckResult> results_;
};

}  // namespace

std::vector<GradCheckResult> run_gradient_suite(int probes, std::uint64_t seed) {
  if (probes < 1) throw ConfigError("gradient suite: probes must be positive");
  Suite s(probes, seed);

  s.add("conv1d", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({4, 64}, 1), w = rand_t<S>({3, 4, 5}, 2), b = rand_t<S>({3}, 3);
    return {[=] { return probe(conv1d(x, w, b, 2, 3, 4)); }, {x, w, b}};
  });
  s.add("conv_transpose1d", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({4, 16}, 1), w = rand_t<S>({4, 3, 8}, 2), b = rand_t<S>({3}, 3);
    return {[=] { return probe(conv_transpose1d(x, w, b, 4, 2)); }, {x, w, b}};
  });
  s.add("conv2d", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({2, 9, 7}, 1), w = rand_t<S>({3, 2, 3, 5}, 2), b = rand_t<S>({3}, 3);
    return {[=] { return probe(conv2d(x, w, b, {2, 1, 1, 2})); }, {x, w, b}};
  });
  s.add("avg_pool1d", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({3, 20}, 1);
    return {[=] { return probe(avg_pool1d(x, 3, 2)); }, {x}};
  });
  s.add("snake", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({3, 20}, 1, -3, 3), a = rand_t<S>({3}, 2, -0.5, 0.5);
    return {[=] { return probe(snake(x, a)); }, {x, a}};
  });
  s.add("matmul", []<typename S>() -> Case<S> {
    auto a = rand_t<S>({4, 6}, 1), b = rand_t<S>({6, 3}, 2);
    return {[=] { return probe(matmul(a, b)); }, {a, b}};
  });
  s.add("pointwise", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({3, 10}, 1, 0.5, 2.0), y = rand_t<S>({3, 10}, 2);
    return {[=] {
              return probe(tanh(log(x)) + sqrt(x) + square(x) + leaky_relu(add_scalar(x, S(-1)), S(0.1)) +
                           mul(x, y) - scale(y, S(0.5)) + clamp_min(y, S(-2)));
            },
            {x, y}};
  });
  s.add("abs/mean", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({40}, 1), y = rand_t<S>({40}, 2);
    for (Index i = 0; i < x.size(); ++i)
      if (std::abs(double(x[i] - y[i])) < 0.05) x.data()[i] += S(0.1);
    return {[=] { return mean(abs(x - y)); }, {x}};
  });
  s.add("slice/concat/pad_reflect", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({2, 9}, 1);
    return {[=] {
              auto p = pad_reflect(x, 4, 11);
              return probe(concat<S>({slice(p, 1, 2, 5), slice(p, 0, 1, 1).reshaped({2, 12})}, 1));
            },
            {x}};
  });
  s.add("depthwise_fir/zero_stuff", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({2, 12}, 1);
    return {[=] { return probe(depthwise_fir(zero_stuff(x, 2), {0.25, -0.5, 1.0, 0.3}, 3, 2, 5)); }, {x}};
  });
  s.add("straight_through", []<typename S>() -> Case<S> {
    // Forward value x + 0.3 with identity backward, so both sides agree.
    auto x = rand_t<S>({3, 5}, 1);
    return {[=] { return probe(square(straight_through(x, add_scalar(x.detach(), S(0.3))) + x)); }, {x}};
  });
  s.add("resample2x", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({2, 20}, 3);
    return {[=] { return probe(resample2x(resample2x(x, ResampleDirection::Up), ResampleDirection::Down)); }, {x}};
  });
  s.add("stft/magnitude", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({1, 200}, 1);
    return {[=] {
              const SpectralConfig c{64, 48, 16, true};
              return probe(stft(x, c)) + probe(magnitude(stft(x, c)), 5);
            },
            {x}};
  });
  s.add("log-mel", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({1, 256}, 2);
    MelConfig cfg;
    cfg.spectral = {128, 128, 32, true};
    cfg.n_mels = 16;
    return {[=] { return probe(mel_spectrogram(x, cfg, 16000.0)); }, {x}};
  });
  s.add("losses", []<typename S>() -> Case<S> {
    auto x = rand_t<S>({1, 512}, 7), y = rand_t<S>({1, 512}, 8);
    auto a = rand_t<S>({2, 5}, 3), b = rand_t<S>({1, 7}, 4);
    auto r = rand_t<S>({3, 6}, 5), f = rand_t<S>({3, 6}, 6);
    auto z = rand_t<S>({4, 3}, 9), t = rand_t<S>({4, 3}, 10);
    MultiScaleConfig ms;
    for (Index n : {256, 128}) {
      MelConfig m;
      m.spectral = {n, n, n / 4, true};
      m.n_mels = n / 8;
      ms.scales.push_back(m);
    }
    using F = std::vector<std::vector<Tensor<S>>>;
    return {[=] {
              return loss_waveform(x, y) + loss_multiscale_spec(x, y, ms, SpecKind::Mel, 44100.0) +
                     loss_multiscale_spec(x, y, ms, SpecKind::Stft, 44100.0) +
                     loss_adv_generator(std::vector{a, b}) +
                     loss_adv_discriminator(std::vector{b, a}, std::vector{a, b}) +
                     loss_feature_matching(F{{r}}, F{{f}}) + loss_latent_align(z, t);
            },
            {y, a, b, f, z}};
  });
  s.add("amp block", []<typename S>() -> Case<S> {
    auto st = std::make_shared<ParameterStore<S>>(4);
    AMPBlockConfig c;
    c.channels = 3;
    c.dilations = {1, 3};
    auto blk = std::make_shared<AMPBlock<S>>(*st, "amp", c);
    std::size_t i = 0;
    for (auto& p : st->params()) p.tensor.data() = rand_t<S>(p.tensor.shape(), 5 + i++, -0.5, 0.5).data();
    auto x = rand_t<S>({3, 16}, 6);
    std::vector<Tensor<S>> inputs{x};
    for (auto& p : st->params()) inputs.push_back(p.tensor);
    return {[=] { return probe((*blk)(x)); }, inputs};
  });

  // Full tiny-preset graphs at their initialization: every parameter is a
  // probe input.
  for (BottleneckMode mode : {BottleneckMode::Z, BottleneckMode::QL}) {
    s.add(std::string("tiny generator ") + to_string(mode), [mode]<typename S>() -> Case<S> {
      const GeneratorConfig cfg = GeneratorConfig::tiny(mode);
      auto g = std::make_shared<GeneratorModel<S>>(cfg);
      CodecModel<S> codec(cfg.codec);
      g->load_from_codec(codec);
      g->set_decoder_frozen(false);
      g->enable_skip();
      wake(g->store(), 10);
      std::vector<Tensor<S>> inputs;
      for (auto& p : g->store().params()) inputs.push_back(p.tensor);
      auto x = rand_t<S>({1, cfg.hop() * 2}, 9, -0.5, 0.5);
      return {[g, x] { return probe(g->forward(x).audio); }, inputs};
    });
  }
  // Leaky ReLU and the L1 feature loss put thousands of kinks in this graph;
  // a smaller step keeps probes from straddling them.
  s.add(
      "tiny discriminators",
      []<typename S>() -> Case<S> {
    auto d = std::make_shared<Discriminators<S>>(DiscriminatorConfig::tiny());
    wake(d->store(), 20);
    auto x = rand_t<S>({1, 1536}, 11, -0.5, 0.5);
    auto real = rand_t<S>({1, 1536}, 12, -0.5, 0.5);
    std::vector<Tensor<S>> inputs{x};
    for (auto& p : d->store().params()) inputs.push_back(p.tensor);
    // Real-branch outputs are constants, as in the generator step.
    DiscriminatorOutput<S> r;
    {
      NoGradGuard ng;
      r = (*d)(real);
    }
    return {[d, x, r] {
              const auto f = (*d)(x);
              return loss_adv_generator(f.logits) + loss_feature_matching(r.features, f.features) +
                     loss_adv_discriminator(r.logits, f.logits);
            },
            inputs};
      },
      5e-6);
  return std::move(s).results();
}

}  // namespace mvox
