#pragma once

#include "mvox/losses.hpp"
#include "mvox/signal.hpp"

#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace mvox {

struct MetricConfig {
  std::vector<SpectralConfig> mr_stft{{2048, 2048, 512, true}, {1024, 1024, 256, true}, {512, 512, 128, true}};
  MultiScaleConfig mr_mel = MultiScaleConfig::full();
  double log_floor = 1e-5;

  void validate(double sample_rate) const;
};

struct StftTerms {
  double spectral_convergence = 0;  // ||X| - |Y||_F / ||X||_F
  double log_magnitude = 0;         // mean |log max(|X|, floor) - log max(|Y|, floor)|
};

// One entry per scale of cfg.mr_stft.
std::vector<StftTerms> mr_stft_terms(const AudioSegment& x, const AudioSegment& x_hat, const MetricConfig& cfg);
double mr_stft_metric(const AudioSegment& x, const AudioSegment& x_hat, const MetricConfig& cfg = {});
// The multi-scale mel loss in double precision without gradient.
double mr_mel_metric(const AudioSegment& x, const AudioSegment& x_hat, const MetricConfig& cfg = {});

struct ClipMetrics {
  std::string name;
  double mr_stft = 0;
  double mr_mel = 0;
};

struct MetricSummary {
  double mean = 0;
  double std = 0;  // population standard deviation over clips
};

struct EvalReport {
  std::vector<ClipMetrics> clips;
  std::vector<std::pair<std::string, std::string>> skipped;  // (clip, reason)
  MetricSummary mr_stft, mr_mel;

  void summarize();
  std::string to_tsv() const;
  std::string to_json() const;
};

// Maps a reference clip to its reconstruction of the same length.
using AudioModel = std::function<AudioSegment(const AudioSegment&)>;

EvalReport evaluate_clips(const AudioModel& model, const std::vector<std::pair<std::string, AudioSegment>>& clips,
                          const MetricConfig& cfg = {});
// Every *.wav directly inside `corpus_dir`, in name order. Unreadable or
// failing clips are listed under `skipped`.
EvalReport evaluate_model(const AudioModel& model, const std::string& corpus_dir, const MetricConfig& cfg = {});

void write_report(const EvalReport& report, const std::string& tsv_path, const std::string& json_path);

}  // namespace mvox
