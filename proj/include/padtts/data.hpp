#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "padtts/dsp.hpp"
#include "padtts/style.hpp"

namespace padtts::data {

struct Utterance {
  std::string id;
  std::string text;
  std::filesystem::path wav;  // usable from the working directory; stored relative to the manifest
  style::Emotion emotion = style::Emotion::neutral;
  std::string speaker;
};

// JSON-lines {id, text, wav, emotion, speaker}; wav paths resolved against
// the manifest directory and checked for existence.
std::vector<Utterance> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const std::vector<Utterance>& utts);

inline constexpr std::size_t kPadId = 0;
inline constexpr std::size_t kUnknownId = 1;

class Vocab {
 public:
  Vocab() = default;
  explicit Vocab(std::vector<char> symbols);

  static Vocab build(const std::vector<Utterance>& utts);
  static Vocab build(const std::vector<std::string>& texts);

  std::size_t size() const { return symbols_.size() + 2; }
  std::vector<std::size_t> encode(const std::string& text) const;
  std::string decode(const std::vector<std::size_t>& ids) const;
  const std::vector<char>& symbols() const { return symbols_; }

  nlohmann::json to_json() const;
  static Vocab from_json(const nlohmann::json& j);

 private:
  std::vector<char> symbols_;  // sorted; id = index + 2
  std::map<char, std::size_t> lookup_;
};

// Acoustic front end shared by training targets and evaluation.
struct FeatureConfig {
  dsp::StftConfig stft;
  dsp::MelConfig mel;

  // Magnitudes are scaled by 2 / sum(window), so a full-scale sinusoid at a
  // bin centre has magnitude equal to its amplitude.
  double magnitude_scale() const;
  nlohmann::json to_json() const;
  static FeatureConfig from_json(const nlohmann::json& j);
};

struct Features {
  dsp::Spectrogram linear;  // scaled magnitudes
  dsp::Spectrogram mel;     // bank applied to the scaled linear grid
};

class FeatureExtractor {
 public:
  explicit FeatureExtractor(FeatureConfig cfg = {});
  const FeatureConfig& config() const { return cfg_; }
  const dsp::MelBank& bank() const { return bank_; }
  Features extract(const dsp::Waveform& w) const;
  // Scaled linear magnitudes back to a waveform.
  dsp::Waveform invert(const dsp::Spectrogram& scaled_linear, std::size_t iterations) const;

 private:
  FeatureConfig cfg_;
  dsp::MelBank bank_;
};

struct Batch {
  std::vector<std::string> ids;
  std::size_t max_chars = 0;
  std::size_t max_frames = 0;  // multiple of r
  std::vector<std::size_t> char_ids;  // rows x max_chars, padded with kPadId
  std::vector<std::size_t> char_lengths;
  std::vector<double> mel;     // rows x max_frames x n_mels, zero padded
  std::vector<double> linear;  // rows x max_frames x bins, zero padded
  std::vector<std::size_t> frame_lengths;  // unpadded
  std::size_t n_mels = 0;
  std::size_t bins = 0;
  std::vector<style::Emotion> emotions;

  std::size_t size() const { return ids.size(); }
  std::vector<std::size_t> chars(std::size_t row) const;
  // Frames padded to a multiple of r (the training target length).
  std::size_t target_frames(std::size_t row, std::size_t r) const;
  std::vector<double> mel_rows(std::size_t row, std::size_t frames) const;
  std::vector<double> linear_rows(std::size_t row, std::size_t frames) const;
};

struct Example {
  std::string id;
  std::vector<std::size_t> chars;
  Features features;
  style::Emotion emotion = style::Emotion::neutral;
};

Batch make_batch(const std::vector<const Example*>& rows, std::size_t r);

struct SyntheticConfig {
  std::string alphabet = "abcdefghijkl";
  std::size_t min_chars = 3;
  std::size_t max_chars = 8;
  double segment_s = 0.06;      // per character at arousal 0
  double ramp_s = 0.005;        // raised-cosine fade per segment edge
  double lead_silence_s = 0.03;
  double tail_silence_s = 0.15;
  double amplitude = 0.3;
  double base_hz = 200.0;
  double step_hz = 40.0;        // per alphabet index
  std::size_t harmonics = 6;
  double tilt = 1.0;            // harmonic k weight k^-(tilt * (1 - 0.5 p))
  int sample_rate = 16000;
  std::string speaker = "synthetic";
};

// Per-emotion acoustic multipliers derived from PAD.
struct Modulation {
  double tilt_exponent;   // pleasure
  double duration_scale;  // 1 - 0.3 a
  double amplitude_scale; // 1 + 0.5 a
  double frequency_scale; // 1 + 0.2 d
};

Modulation modulation_for(const style::PadVector& pad, const SyntheticConfig& cfg);
std::size_t segment_samples(const style::PadVector& pad, const SyntheticConfig& cfg);
dsp::Waveform render_text(const std::string& text, const style::PadVector& pad,
                          const SyntheticConfig& cfg);

struct SyntheticCorpus {
  std::vector<Utterance> utterances;
  std::filesystem::path manifest;
};

// Writes wavs under out_dir/wavs and out_dir/manifest.jsonl. Identical
// seed -> identical manifest and wav bytes.
SyntheticCorpus generate_synthetic_corpus(std::uint64_t seed, std::size_t n_per_emotion,
                                          const style::PadTable& pads,
                                          const std::filesystem::path& out_dir,
                                          const SyntheticConfig& cfg = {});

// Random texts for the corpus, in emission order.
std::vector<std::string> synthetic_texts(std::uint64_t seed, std::size_t count,
                                         const SyntheticConfig& cfg);

// Loads wavs and computes features for every utterance.
std::vector<Example> load_examples(const std::vector<Utterance>& utts, const Vocab& vocab,
                                   const FeatureExtractor& fx);

}  // namespace padtts::data
