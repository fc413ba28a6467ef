#include "doctest.h"

#include "mvox/errors.hpp"
#include "mvox/signal.hpp"
#include "test_util.hpp"

#include <cmath>
#include <complex>
#include <numbers>

using namespace mvox;
using mvox::test::gradcheck_both;
using mvox::test::random_tensor;
using mvox::test::weighted_sum;

namespace {

constexpr double kPi = std::numbers::pi;

// Direct O(N^2) windowed DFT with its own reflect padding and Hann window.
std::vector<std::vector<std::complex<double>>> naive_stft(const std::vector<double>& x, Index n_fft, Index hop) {
  const Index len = static_cast<Index>(x.size()), half = n_fft / 2;
  auto at = [&](Index i) {
    while (i < 0 || i >= len) i = i < 0 ? -i : 2 * (len - 1) - i;
    return x[static_cast<std::size_t>(i)];
  };
  const Index frames = len % hop == 0 ? len / hop : len / hop + 1;
  std::vector<std::vector<std::complex<double>>> out(static_cast<std::size_t>(half + 1),
                                                     std::vector<std::complex<double>>(static_cast<std::size_t>(frames)));
  for (Index f = 0; f < frames; ++f)
    for (Index k = 0; k <= half; ++k) {
      std::complex<double> acc = 0;
      for (Index n = 0; n < n_fft; ++n) {
        const double w = std::pow(std::sin(kPi * double(n) / double(n_fft)), 2);
        acc += w * at(f * hop + n - half) * std::polar(1.0, -2 * kPi * double(k * n) / double(n_fft));
      }
      out[static_cast<std::size_t>(k)][static_cast<std::size_t>(f)] = acc;
    }
  return out;
}

std::vector<double> to_vector(const Tensor<double>& t) {
  return std::vector<double>(t.ptr(), t.ptr() + t.size());
}

// Mel breakpoints via the closed-form Slaney scale, written separately from
// the library helpers.
double mel_of(double hz) { return hz <= 1000 ? 3 * hz / 200 : 15 + 27 * std::log(hz / 1000) / std::log(6.4); }
double hz_of(double mel) { return mel <= 15 ? 200 * mel / 3 : 1000 * std::pow(6.4, (mel - 15) / 27); }

std::vector<float> tone(Index n, double hz, double sr, double amp = 0.5) {
  std::vector<float> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = float(amp * std::sin(2 * kPi * hz * double(i) / sr));
  return v;
}

}  // namespace

TEST_CASE("stft of zeros is zero and the frame count follows the hop") {
  SpectralConfig cfg;
  auto s = stft(Tensor<float>::zeros({1, 4096}), cfg);
  CHECK(s.shape() == Shape{2, 513, 16});
  CHECK(s.data().abs().maxCoeff() == 0.0f);
  CHECK(cfg.frames(16384) == 64);
  CHECK(cfg.frames(1000) == 4);
  CHECK_THROWS_AS(stft(Tensor<float>::zeros({1, 100}), cfg), ContractError);
}

TEST_CASE("stft matches the direct DFT") {
  SpectralConfig cfg{256, 256, 64, true};
  auto x = random_tensor<float>({1, 1000}, 5, -0.5, 0.5);
  std::vector<double> xd(x.ptr(), x.ptr() + x.size());
  const auto ref = naive_stft(xd, 256, 64);
  auto s = stft(x, cfg);
  const Index bins = s.dim(1), frames = s.dim(2);
  REQUIRE(bins == 129);
  REQUIRE(frames == Index(ref[0].size()));
  double worst = 0;
  for (Index k = 0; k < bins; ++k)
    for (Index f = 0; f < frames; ++f) {
      const auto r = ref[static_cast<std::size_t>(k)][static_cast<std::size_t>(f)];
      worst = std::max(worst, std::abs(double(s[k * frames + f]) - r.real()));
      worst = std::max(worst, std::abs(double(s[(bins + k) * frames + f]) - r.imag()));
    }
  CHECK(worst <= 1e-4);
}

TEST_CASE("440 Hz tone peaks at bin 10") {
  SpectralConfig cfg;
  AudioSegment a{tone(16384, 440, 44100), 44100};
  auto mag = magnitude(stft(to_tensor<float>(a), cfg));
  const Index frames = mag.dim(1);
  for (Index f = 4; f < frames - 4; ++f) {
    Index best = 0;
    for (Index k = 1; k < mag.dim(0); ++k)
      if (mag[k * frames + f] > mag[best * frames + f]) best = k;
    CHECK(best == 10);
  }
}

TEST_CASE("stft is linear and its backward is the adjoint") {
  SpectralConfig cfg{128, 96, 32, true};
  auto x = random_tensor<double>({1, 300}, 1), y = random_tensor<double>({1, 300}, 2);
  auto lhs = stft(scale(x, 0.7) + scale(y, -1.3), cfg);
  auto rhs = scale(stft(x, cfg), 0.7) + scale(stft(y, cfg), -1.3);
  CHECK((lhs.data() - rhs.data()).abs().maxCoeff() <= 1e-9);

  auto xf = random_tensor<float>({1, 300}, 1), yf = random_tensor<float>({1, 300}, 2);
  auto lf = stft(scale(xf, 0.7f) + scale(yf, -1.3f), cfg);
  auto rf = scale(stft(xf, cfg), 0.7f) + scale(stft(yf, cfg), -1.3f);
  CHECK((lf.data() - rf.data()).abs().maxCoeff() <= 1e-4);

  x.set_requires_grad(true);
  auto s = stft(x, cfg);
  auto g = random_tensor<double>(s.shape(), 3);
  backward(sum(s * g));
  double forward = (s.data() * g.data()).sum();
  double adjoint = (x.data() * x.grad()).sum();
  CHECK(std::abs(forward - adjoint) <= 1e-5 * std::abs(forward));
}

TEST_CASE("mel filterbank shape, positivity and centres") {
  MelConfig cfg;
  const auto fb = mel_filterbank(cfg, 44100);
  REQUIRE(fb.rows() == 128);
  REQUIRE(fb.cols() == 513);
  CHECK(fb.minCoeff() >= 0);
  const double top = mel_of(22050);
  Index previous = -1;
  for (Index m = 0; m < fb.rows(); ++m) {
    CHECK(fb.row(m).sum() > 0);
    Index peak = 0;
    fb.row(m).maxCoeff(&peak);
    CHECK(peak >= previous);
    previous = peak;
    const double centre_hz = hz_of(top * double(m + 1) / 129.0);
    CHECK(std::abs(double(peak) - centre_hz * 1024 / 44100) <= 1.0);
  }
  CHECK(std::abs(hz_to_mel(3000) - mel_of(3000)) < 1e-9);
  CHECK(std::abs(mel_to_hz(hz_to_mel(7123.0)) - 7123.0) < 1e-6);
}

TEST_CASE("single mel filter spans the whole band") {
  MelConfig cfg;
  cfg.n_mels = 1;
  cfg.f_min = 100;
  cfg.f_max = 8000;
  const auto fb = mel_filterbank(cfg, 44100);
  for (Index k = 0; k < fb.cols(); ++k) {
    const double f = double(k) * 44100 / 1024;
    if (f <= 100 || f >= 8000) CHECK(fb(0, k) == 0.0);
    else CHECK(fb(0, k) > 0.0);
  }
  Index peak = 0;
  fb.row(0).maxCoeff(&peak);
  const double centre = hz_of((mel_of(100) + mel_of(8000)) / 2);
  CHECK(std::abs(double(peak) - centre * 1024 / 44100) <= 1.0);
}

TEST_CASE("mel config errors") {
  MelConfig cfg;
  cfg.spectral = {256, 256, 64, true};
  cfg.n_mels = 400;
  CHECK_THROWS_AS(mel_filterbank(cfg, 44100), ConfigError);
  MelConfig bad;
  bad.f_min = 30000;
  CHECK_THROWS_AS(mel_filterbank(bad, 44100), ConfigError);
  bad = MelConfig{};
  bad.spectral.hop_length = 2048;
  CHECK_THROWS_AS(bad.validate(44100), ConfigError);
  bad = MelConfig{};
  bad.log_floor = 0;
  CHECK_THROWS_AS(bad.validate(44100), ConfigError);
}

TEST_CASE("mel spectrogram shape, silence and composition") {
  MelConfig cfg;
  AudioSegment silent{std::vector<float>(16384, 0.0f), 44100};
  auto mel = mel_spectrogram(silent, cfg);
  REQUIRE(mel.shape() == Shape{128, 64});
  for (Index i = 0; i < mel.size(); ++i) CHECK(mel[i] == doctest::Approx(std::log(1e-5f)).epsilon(1e-6));

  MelConfig small;
  small.spectral = {256, 256, 64, true};
  small.n_mels = 24;
  auto x = random_tensor<double>({1, 640}, 11, -0.8, 0.8);
  auto got = mel_spectrogram(x, small, 16000);
  REQUIRE(got.shape() == Shape{24, 10});
  const auto ref = naive_stft(to_vector(x), 256, 64);
  const auto fb = mel_filterbank(small, 16000);
  double worst = 0;
  for (Index m = 0; m < 24; ++m)
    for (Index f = 0; f < 10; ++f) {
      double acc = 0;
      for (Index k = 0; k < 129; ++k) acc += fb(m, k) * std::abs(ref[static_cast<std::size_t>(k)][static_cast<std::size_t>(f)]);
      worst = std::max(worst, std::abs(std::log(std::max(acc, 1e-5)) - got[m * 10 + f]));
    }
  CHECK(worst <= 1e-6);
}

TEST_CASE("normalize_audio") {
  auto a = normalize_audio({0.5f, -0.25f});
  CHECK(a.samples == std::vector<float>{1.0f, -0.5f});
  CHECK(normalize_audio({0.0f, 0.0f}).samples == std::vector<float>{0.0f, 0.0f});
  auto x = normalize_audio({0.3f, -0.9f, 0.1f, 0.7f});
  CHECK(normalize_audio(x.samples).samples == x.samples);
  for (float s : normalize_audio({3.0f, -7.5f, 2.0f}).samples) CHECK(std::abs(s) <= 1.0f);
  CHECK_THROWS_AS(normalize_audio({0.1f, std::nanf("")}), DataError);
  CHECK_THROWS_AS(normalize_audio({INFINITY}), DataError);
}

TEST_CASE("half-band resampling") {
  const auto& h = halfband_taps();
  CHECK(h.size() % 2 == 1);
  for (std::size_t i = 0; i < h.size(); ++i) CHECK(std::abs(h[i] - h[h.size() - 1 - i]) < 1e-15);

  auto dc = Tensor<double>::full({2, 64}, 0.37);
  for (auto dir : {ResampleDirection::Up, ResampleDirection::Down}) {
    auto y = resample2x(dc, dir);
    CHECK(y.dim(1) == (dir == ResampleDirection::Up ? 128 : 32));
    CHECK((y.data() - 0.37).abs().maxCoeff() <= 1e-3 * 0.37);
    CHECK(resample2x(Tensor<double>::zeros({1, 16}), dir).data().abs().maxCoeff() == 0.0);
  }

  // Tone at 0.2 of Nyquist; the borders are excluded from the comparison.
  const Index n = 512;
  Tensor<double> x({1, n});
  for (Index i = 0; i < n; ++i) x.data()[i] = std::sin(kPi * 0.2 * double(i) + 0.3);
  auto round_trip = resample2x(resample2x(x, ResampleDirection::Down), ResampleDirection::Up);
  REQUIRE(round_trip.shape() == x.shape());
  const auto err = (round_trip.data() - x.data()).segment(32, n - 64);
  CHECK(std::sqrt(err.square().sum() / x.data().segment(32, n - 64).square().sum()) <= 5e-2);

  // Up then down returns the band-limited tone.
  auto back = resample2x(resample2x(x, ResampleDirection::Up), ResampleDirection::Down);
  const auto err2 = (back.data() - x.data()).segment(32, n - 64);
  CHECK(std::sqrt(err2.square().sum() / x.data().segment(32, n - 64).square().sum()) <= 5e-2);

  CHECK_THROWS_AS(resample2x(Tensor<double>::zeros({1, 15}), ResampleDirection::Down), ContractError);
}

TEST_CASE("finite-difference checks for the spectral front-end") {
  GRADCHECK("stft", []<typename S>() {
    auto x = random_tensor<S>({1, 200}, 1);
    std::function<Tensor<S>()> fn = [=] { return weighted_sum(stft(x, SpectralConfig{64, 48, 16, true})); };
    return std::make_pair(fn, std::vector<Tensor<S>>{x});
  });
  GRADCHECK("log mel", []<typename S>() {
    auto x = random_tensor<S>({1, 256}, 2);
    MelConfig cfg;
    cfg.spectral = {128, 128, 32, true};
    cfg.n_mels = 16;
    std::function<Tensor<S>()> fn = [=] { return weighted_sum(mel_spectrogram(x, cfg, 16000.0)); };
    return std::make_pair(fn, std::vector<Tensor<S>>{x});
  });
  GRADCHECK("resample up/down", []<typename S>() {
    auto x = random_tensor<S>({2, 20}, 3);
    std::function<Tensor<S>()> fn = [=] {
      return weighted_sum(resample2x(resample2x(x, ResampleDirection::Up), ResampleDirection::Down));
    };
    return std::make_pair(fn, std::vector<Tensor<S>>{x});
  });
}
