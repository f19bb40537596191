#pragma once

// Objective spectrogram metrics, DTW alignment and report aggregation.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "padtts/data.hpp"
#include "padtts/dsp.hpp"
#include "padtts/model.hpp"

namespace padtts::eval {

inline constexpr double kSdrClampDb = 100.0;
inline constexpr double kMagnitudeFloor = 1e-8;

// Scale-invariant cosine SDR in dB, clamped to [-100, 100].
double sdr(const dsp::Spectrogram& s, const dsp::Spectrogram& s_hat);
// Mean over frames of the RMS of 20 log10(|S| / |S_hat|), magnitudes floored.
double sd(const dsp::Spectrogram& s, const dsp::Spectrogram& s_hat);

struct MelMetrics {
  double sdr_db = 0.0;
  double sd_db = 0.0;
};
MelMetrics mel_variants(const dsp::Spectrogram& linear, const dsp::Spectrogram& linear_hat,
                        const dsp::MelBank& bank);

struct DtwResult {
  dsp::Spectrogram warped;  // target.frames frames
  double cost = 0.0;        // sum of frame costs along the path
  std::vector<std::pair<std::size_t, std::size_t>> path;  // (target, synth), both increasing
};

// Euclidean distance between log(max(x, floor)) frames.
double dtw_frame_cost(std::span<const double> a, std::span<const double> b);

// Minimal-cost monotonic alignment with steps (1,0), (0,1), (1,1). Synth
// frames mapped to the same target frame are averaged.
DtwResult dtw_align(const dsp::Spectrogram& target, const dsp::Spectrogram& synth);

struct Interval {
  double mean = 0.0;
  double half_width = 0.0;
};
// mean +- 1.96 * s / sqrt(N) with the N - 1 sample deviation.
Interval confidence_interval(std::span<const double> values);

enum class Mode { teacher_forced, free_running };
std::string to_string(Mode m);
Mode mode_from(const std::string& text);

struct MetricResult {
  std::string model;
  std::string id;
  Mode mode = Mode::teacher_forced;
  bool ok = true;
  std::string error;
  double sdr_db = 0.0;
  double mel_sdr_db = 0.0;
  double sd_db = 0.0;
  double mel_sd_db = 0.0;

  nlohmann::json to_json() const;
  static MetricResult from_json(const nlohmann::json& j);
};

struct AggregateRow {
  std::string model;
  Mode mode = Mode::teacher_forced;
  std::size_t n = 0;
  std::size_t failed = 0;
  Interval sdr, mel_sdr, sd, mel_sd;

  nlohmann::json to_json() const;
};

struct Report {
  std::vector<std::string> models;  // row order
  std::vector<Mode> modes;
  std::vector<MetricResult> utterances;
  std::vector<AggregateRow> rows;  // mode-major, then model order

  std::size_t failures() const;
  nlohmann::json to_json() const;
  // Rebuilds rows from the persisted per-utterance results.
  static Report from_json(const nlohmann::json& j);
  // Plain-text table laid out as mode / model / SDR / Mel-SDR / SD / Mel-SD.
  std::string text() const;
};

// Aggregates per (mode, model) over successful results sorted by id.
std::vector<AggregateRow> aggregate(const std::vector<MetricResult>& results,
                                    const std::vector<std::string>& models,
                                    const std::vector<Mode>& modes);

// Metrics of one linear prediction against its target, aligned per mode.
MetricResult score(const dsp::Spectrogram& target_linear, const dsp::Spectrogram& synth_linear,
                   Mode mode, const dsp::MelBank& bank);

struct NamedModel {
  std::string name;
  const Model* model = nullptr;
};

Report evaluate_models(const std::vector<NamedModel>& models,
                       const std::vector<data::Example>& test, const std::vector<Mode>& modes);

}  // namespace padtts::eval
