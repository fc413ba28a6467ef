#include "mvox/eval.hpp"

#include "mvox/errors.hpp"
#include "mvox/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <sstream>

namespace mvox {

namespace {

void require_same_length(const AudioSegment& x, const AudioSegment& y, const char* what) {
  if (x.size() != y.size())
    throw DimensionError(std::string(what) + ": lengths differ (" + std::to_string(x.size()) + " vs " +
                         std::to_string(y.size()) + ")");
}

Eigen::ArrayXXd stft_magnitude(const AudioSegment& x, const SpectralConfig& s) {
  const Tensor<double> spec = stft(to_tensor<double>(x), s);
  const Index bins = spec.dim(1), frames = spec.dim(2), plane = bins * frames;
  Eigen::ArrayXXd mag(bins, frames);
  const double* p = spec.ptr();
  for (Index k = 0; k < bins; ++k)
    for (Index m = 0; m < frames; ++m) {
      const double re = p[k * frames + m], im = p[plane + k * frames + m];
      mag(k, m) = std::sqrt(re * re + im * im);
    }
  return mag;
}

}  // namespace

void MetricConfig::validate(double sample_rate) const {
  if (mr_stft.empty()) throw ConfigError("metric config: no MR-STFT scales");
  for (const auto& s : mr_stft) s.validate();
  mr_mel.validate(sample_rate);
  if (!(log_floor > 0)) throw ConfigError("metric config: log floor must be positive");
}

std::vector<StftTerms> mr_stft_terms(const AudioSegment& x, const AudioSegment& x_hat, const MetricConfig& cfg) {
  require_same_length(x, x_hat, "MR-STFT");
  NoGradGuard no_grad;
  std::vector<StftTerms> out;
  for (const auto& s : cfg.mr_stft) {
    const Eigen::ArrayXXd a = stft_magnitude(x, s), b = stft_magnitude(x_hat, s);
    StftTerms t;
    const double num = std::sqrt((a - b).square().sum());
    const double den = std::sqrt(a.square().sum());
    t.spectral_convergence = num == 0 ? 0.0 : num / std::max(den, cfg.log_floor);
    t.log_magnitude = (a.max(cfg.log_floor).log() - b.max(cfg.log_floor).log()).abs().mean();
    out.push_back(t);
  }
  return out;
}

double mr_stft_metric(const AudioSegment& x, const AudioSegment& x_hat, const MetricConfig& cfg) {
  double total = 0;
  for (const auto& t : mr_stft_terms(x, x_hat, cfg)) total += t.spectral_convergence + t.log_magnitude;
  return total;
}

double mr_mel_metric(const AudioSegment& x, const AudioSegment& x_hat, const MetricConfig& cfg) {
  require_same_length(x, x_hat, "MR-MEL");
  NoGradGuard no_grad;
  return loss_multiscale_spec(to_tensor<double>(x), to_tensor<double>(x_hat), cfg.mr_mel, SpecKind::Mel,
                              x.sample_rate)
      .item();
}

void EvalReport::summarize() {
  auto stats = [this](double ClipMetrics::*field) {
    MetricSummary s;
    if (clips.empty()) return s;
    for (const auto& c : clips) s.mean += c.*field;
    s.mean /= static_cast<double>(clips.size());
    for (const auto& c : clips) s.std += (c.*field - s.mean) * (c.*field - s.mean);
    s.std = std::sqrt(s.std / static_cast<double>(clips.size()));
    return s;
  };
  mr_stft = stats(&ClipMetrics::mr_stft);
  mr_mel = stats(&ClipMetrics::mr_mel);
}

std::string EvalReport::to_tsv() const {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "clip\tmr_stft\tmr_mel\n";
  for (const auto& c : clips) os << c.name << '\t' << c.mr_stft << '\t' << c.mr_mel << '\n';
  os << "# mean\t" << mr_stft.mean << '\t' << mr_mel.mean << '\n';
  os << "# std\t" << mr_stft.std << '\t' << mr_mel.std << '\n';
  for (const auto& [name, why] : skipped) os << "# skipped\t" << name << '\t' << why << '\n';
  return os.str();
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["clips"] = nlohmann::ordered_json::array();
  for (const auto& c : clips) j["clips"].push_back({{"name", c.name}, {"mr_stft", c.mr_stft}, {"mr_mel", c.mr_mel}});
  j["summary"] = {{"mr_stft", {{"mean", mr_stft.mean}, {"std", mr_stft.std}}},
                  {"mr_mel", {{"mean", mr_mel.mean}, {"std", mr_mel.std}}},
                  {"count", clips.size()},
                  {"std_kind", "population"}};
  j["skipped"] = nlohmann::ordered_json::array();
  for (const auto& [name, why] : skipped) j["skipped"].push_back({{"name", name}, {"reason", why}});
  return j.dump(2) + "\n";
}

EvalReport evaluate_clips(const AudioModel& model, const std::vector<std::pair<std::string, AudioSegment>>& clips,
                          const MetricConfig& cfg) {
  if (clips.empty()) throw DataError("evaluation: empty corpus");
  cfg.validate(clips.front().second.sample_rate);
  EvalReport report;
  for (const auto& [name, clip] : clips) {
    try {
      const AudioSegment y = model(clip);
      ClipMetrics m;
      m.name = name;
      m.mr_stft = mr_stft_metric(clip, y, cfg);
      m.mr_mel = mr_mel_metric(clip, y, cfg);
      report.clips.push_back(m);
    } catch (const Error& e) {
      report.skipped.emplace_back(name, e.what());
    }
  }
  report.summarize();
  return report;
}

EvalReport evaluate_model(const AudioModel& model, const std::string& corpus_dir, const MetricConfig& cfg) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (!fs::is_directory(corpus_dir, ec)) throw FileError("not a directory: " + corpus_dir);
  std::vector<std::string> names;
  for (const auto& entry : fs::directory_iterator(corpus_dir))
    if (entry.path().extension() == ".wav") names.push_back(entry.path().filename().string());
  std::sort(names.begin(), names.end());
  if (names.empty()) throw DataError("evaluation: no .wav files in " + corpus_dir);

  std::vector<std::pair<std::string, AudioSegment>> clips;
  std::vector<std::pair<std::string, std::string>> unreadable;
  for (const auto& n : names) {
    try {
      clips.emplace_back(n, read_wav((fs::path(corpus_dir) / n).string()));
    } catch (const Error& e) {
      unreadable.emplace_back(n, e.what());
    }
  }
  EvalReport report;
  if (!clips.empty()) report = evaluate_clips(model, clips, cfg);
  report.skipped.insert(report.skipped.begin(), unreadable.begin(), unreadable.end());
  return report;
}

void write_report(const EvalReport& report, const std::string& tsv_path, const std::string& json_path) {
  write_file(tsv_path, report.to_tsv());
  write_file(json_path, report.to_json());
}

}  // namespace mvox
