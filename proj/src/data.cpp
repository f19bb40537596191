#include "padtts/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>

#include "padtts/errors.hpp"

namespace padtts::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Manifest

std::vector<Utterance> load_manifest(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open manifest " + path.string());
  const auto base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  std::vector<Utterance> out;
  std::set<std::string> ids;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(where + ": " + e.what());
    }
    for (const char* key : {"id", "text", "wav", "emotion", "speaker"})
      if (!j.contains(key) || !j.at(key).is_string())
        throw FormatError(where + ": missing field '" + key + "'");
    Utterance u;
    u.id = j.at("id").get<std::string>();
    u.text = j.at("text").get<std::string>();
    u.speaker = j.at("speaker").get<std::string>();
    if (u.text.empty()) throw ValueError(where + ": empty text");
    try {
      u.emotion = style::emotion_from_label(j.at("emotion").get<std::string>());
    } catch (const ValueError& e) {
      throw ValueError(where + ": " + e.what());
    }
    fs::path wav = j.at("wav").get<std::string>();
    u.wav = wav.is_absolute() ? wav : base / wav;
    if (!fs::exists(u.wav)) throw ConfigError(where + ": missing wav " + u.wav.string());
    if (!ids.insert(u.id).second) throw ValueError(where + ": duplicate utterance id '" + u.id + "'");
    out.push_back(std::move(u));
  }
  return out;
}

void write_manifest(const fs::path& path, const std::vector<Utterance>& utts) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  const auto base = path.has_parent_path() ? path.parent_path() : fs::path(".");
  for (const auto& u : utts) {
    const auto rel = fs::absolute(u.wav).lexically_relative(fs::absolute(base));
    nlohmann::json j = {{"id", u.id},
                        {"text", u.text},
                        {"wav", rel.generic_string()},
                        {"emotion", style::label(u.emotion)},
                        {"speaker", u.speaker}};
    os << j.dump() << '\n';
  }
}

// ---------------------------------------------------------------------------
// Vocabulary

Vocab::Vocab(std::vector<char> symbols) : symbols_(std::move(symbols)) {
  std::sort(symbols_.begin(), symbols_.end());
  symbols_.erase(std::unique(symbols_.begin(), symbols_.end()), symbols_.end());
  for (std::size_t i = 0; i < symbols_.size(); ++i) lookup_[symbols_[i]] = i + 2;
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
  std::vector<char> chars;
  for (const auto& t : texts) chars.insert(chars.end(), t.begin(), t.end());
  return Vocab(std::move(chars));
}

Vocab Vocab::build(const std::vector<Utterance>& utts) {
  std::vector<std::string> texts;
  for (const auto& u : utts) texts.push_back(u.text);
  return build(texts);
}

std::vector<std::size_t> Vocab::encode(const std::string& text) const {
  std::vector<std::size_t> ids;
  ids.reserve(text.size());
  for (char c : text) {
    auto it = lookup_.find(c);
    ids.push_back(it == lookup_.end() ? kUnknownId : it->second);
  }
  return ids;
}

std::string Vocab::decode(const std::vector<std::size_t>& ids) const {
  std::string out;
  for (auto id : ids) {
    if (id == kPadId) continue;
    if (id == kUnknownId || id - 2 >= symbols_.size()) {
      out.push_back('?');
      continue;
    }
    out.push_back(symbols_[id - 2]);
  }
  return out;
}

nlohmann::json Vocab::to_json() const { return std::string(symbols_.begin(), symbols_.end()); }

Vocab Vocab::from_json(const nlohmann::json& j) {
  const auto text = j.get<std::string>();
  return Vocab(std::vector<char>(text.begin(), text.end()));
}

// ---------------------------------------------------------------------------
// Features

double FeatureConfig::magnitude_scale() const {
  const auto w = dsp::hann_window(stft.frame_length());
  double total = 0.0;
  for (double v : w) total += v;
  return 2.0 / total;
}

nlohmann::json FeatureConfig::to_json() const {
  return {{"frame_length_s", stft.frame_length_s}, {"frame_shift_s", stft.frame_shift_s},
          {"fft_size", stft.fft_size},             {"sample_rate", stft.sample_rate},
          {"n_mels", mel.n_mels},                  {"fmin", mel.fmin},
          {"fmax", mel.fmax}};
}

FeatureConfig FeatureConfig::from_json(const nlohmann::json& j) {
  FeatureConfig c;
  try {
    c.stft.frame_length_s = j.value("frame_length_s", c.stft.frame_length_s);
    c.stft.frame_shift_s = j.value("frame_shift_s", c.stft.frame_shift_s);
    c.stft.fft_size = j.value("fft_size", c.stft.fft_size);
    c.stft.sample_rate = j.value("sample_rate", c.stft.sample_rate);
    c.mel.n_mels = j.value("n_mels", c.mel.n_mels);
    c.mel.fmin = j.value("fmin", c.mel.fmin);
    c.mel.fmax = j.value("fmax", c.mel.fmax);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("feature config: ") + e.what());
  }
  c.stft.validate();
  return c;
}

FeatureExtractor::FeatureExtractor(FeatureConfig cfg)
    : cfg_(cfg), bank_(dsp::mel_filterbank(cfg_.stft, cfg_.mel)) {
  cfg_.stft.validate();
}

Features FeatureExtractor::extract(const dsp::Waveform& w) const {
  if (w.sample_rate != cfg_.stft.sample_rate)
    throw ConfigError("waveform sample rate " + std::to_string(w.sample_rate) +
                      " does not match feature config " + std::to_string(cfg_.stft.sample_rate));
  Features f;
  f.linear = dsp::stft_magnitude(w, cfg_.stft);
  const double s = cfg_.magnitude_scale();
  for (auto& v : f.linear.values) v *= s;
  f.mel = bank_.apply(f.linear);
  return f;
}

dsp::Waveform FeatureExtractor::invert(const dsp::Spectrogram& scaled_linear,
                                       std::size_t iterations) const {
  auto raw = scaled_linear;
  const double s = cfg_.magnitude_scale();
  for (auto& v : raw.values) v = std::max(v, 0.0) / s;
  return dsp::griffin_lim(raw, iterations, cfg_.stft).waveform;
}

// ---------------------------------------------------------------------------
// Batching

std::vector<std::size_t> Batch::chars(std::size_t row) const {
  const auto* p = char_ids.data() + row * max_chars;
  return {p, p + char_lengths[row]};
}

std::size_t Batch::target_frames(std::size_t row, std::size_t r) const {
  return (frame_lengths[row] + r - 1) / r * r;
}

std::vector<double> Batch::mel_rows(std::size_t row, std::size_t frames) const {
  const auto* p = mel.data() + row * max_frames * n_mels;
  return {p, p + frames * n_mels};
}

std::vector<double> Batch::linear_rows(std::size_t row, std::size_t frames) const {
  const auto* p = linear.data() + row * max_frames * bins;
  return {p, p + frames * bins};
}

Batch make_batch(const std::vector<const Example*>& rows, std::size_t r) {
  if (rows.empty()) throw ValueError("make_batch: no rows");
  if (r == 0) throw ValueError("make_batch: reduction factor must be positive");
  Batch b;
  b.n_mels = rows[0]->features.mel.bins;
  b.bins = rows[0]->features.linear.bins;
  for (const auto* ex : rows) {
    b.max_chars = std::max(b.max_chars, ex->chars.size());
    b.max_frames = std::max(b.max_frames, ex->features.mel.frames);
  }
  b.max_frames = (b.max_frames + r - 1) / r * r;
  const auto n = rows.size();
  b.char_ids.assign(n * b.max_chars, kPadId);
  b.mel.assign(n * b.max_frames * b.n_mels, 0.0);
  b.linear.assign(n * b.max_frames * b.bins, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ex = *rows[i];
    if (ex.features.mel.bins != b.n_mels || ex.features.linear.bins != b.bins)
      throw ShapeError("make_batch: inconsistent feature widths in batch");
    b.ids.push_back(ex.id);
    b.emotions.push_back(ex.emotion);
    std::copy(ex.chars.begin(), ex.chars.end(), b.char_ids.begin() + i * b.max_chars);
    b.char_lengths.push_back(ex.chars.size());
    b.frame_lengths.push_back(ex.features.mel.frames);
    std::copy(ex.features.mel.values.begin(), ex.features.mel.values.end(),
              b.mel.begin() + i * b.max_frames * b.n_mels);
    std::copy(ex.features.linear.values.begin(), ex.features.linear.values.end(),
              b.linear.begin() + i * b.max_frames * b.bins);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Synthetic corpus

Modulation modulation_for(const style::PadVector& pad, const SyntheticConfig& cfg) {
  return {cfg.tilt * (1.0 - 0.5 * pad.p), 1.0 - 0.3 * pad.a, 1.0 + 0.5 * pad.a,
          1.0 + 0.2 * pad.d};
}

std::size_t segment_samples(const style::PadVector& pad, const SyntheticConfig& cfg) {
  const auto m = modulation_for(pad, cfg);
  return static_cast<std::size_t>(std::lround(cfg.segment_s * m.duration_scale * cfg.sample_rate));
}

dsp::Waveform render_text(const std::string& text, const style::PadVector& pad,
                          const SyntheticConfig& cfg) {
  pad.validate();
  const auto m = modulation_for(pad, cfg);
  const double sr = cfg.sample_rate;
  const auto seg = segment_samples(pad, cfg);
  const auto ramp = static_cast<std::size_t>(std::lround(cfg.ramp_s * sr));
  const auto lead = static_cast<std::size_t>(std::lround(cfg.lead_silence_s * sr));
  const auto tail = static_cast<std::size_t>(std::lround(cfg.tail_silence_s * sr));

  dsp::Waveform w;
  w.sample_rate = cfg.sample_rate;
  w.samples.assign(lead, 0.0);
  for (char c : text) {
    const auto pos = cfg.alphabet.find(c);
    if (pos == std::string::npos)
      throw ValueError(std::string("synthetic corpus: character '") + c + "' not in alphabet");
    const double f0 = (cfg.base_hz + cfg.step_hz * static_cast<double>(pos)) * m.frequency_scale;
    std::vector<double> weights;
    double wsum = 0.0;
    for (std::size_t k = 1; k <= cfg.harmonics && k * f0 < 0.45 * sr; ++k) {
      weights.push_back(std::pow(static_cast<double>(k), -m.tilt_exponent));
      wsum += weights.back();
    }
    const double amp = cfg.amplitude * m.amplitude_scale / wsum;
    for (std::size_t n = 0; n < seg; ++n) {
      double env = 1.0;
      const auto edge = std::min(n, seg - 1 - n);
      if (edge < ramp)
        env = 0.5 - 0.5 * std::cos(std::numbers::pi * static_cast<double>(edge) /
                                   static_cast<double>(ramp));
      double v = 0.0;
      for (std::size_t k = 0; k < weights.size(); ++k)
        v += weights[k] * std::sin(2.0 * std::numbers::pi * static_cast<double>(k + 1) * f0 *
                                   static_cast<double>(n) / sr);
      w.samples.push_back(amp * env * v);
    }
  }
  w.samples.insert(w.samples.end(), tail, 0.0);
  return w;
}

std::vector<std::string> synthetic_texts(std::uint64_t seed, std::size_t count,
                                         const SyntheticConfig& cfg) {
  std::mt19937_64 rng(seed);
  const auto span = cfg.max_chars - cfg.min_chars + 1;
  std::vector<std::string> out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = cfg.min_chars + rng() % span;
    std::string t;
    for (std::size_t k = 0; k < len; ++k) t.push_back(cfg.alphabet[rng() % cfg.alphabet.size()]);
    out.push_back(std::move(t));
  }
  return out;
}

SyntheticCorpus generate_synthetic_corpus(std::uint64_t seed, std::size_t n_per_emotion,
                                          const style::PadTable& pads, const fs::path& out_dir,
                                          const SyntheticConfig& cfg) {
  if (n_per_emotion == 0) throw ValueError("synthetic corpus: n_per_emotion must be >= 1");
  pads.validate();
  // Every emotion renders the same texts, so style is the only difference.
  const auto texts = synthetic_texts(seed, n_per_emotion, cfg);
  SyntheticCorpus corpus;
  fs::create_directories(out_dir / "wavs");
  for (std::size_t e = 0; e < style::kNumEmotions; ++e) {
    const auto emotion = static_cast<style::Emotion>(e);
    for (std::size_t i = 0; i < texts.size(); ++i) {
      char id[64];
      std::snprintf(id, sizeof(id), "%s_%04zu", style::label(emotion), i);
      Utterance u;
      u.id = id;
      u.text = texts[i];
      u.emotion = emotion;
      u.speaker = cfg.speaker;
      u.wav = out_dir / "wavs" / (u.id + ".wav");
      dsp::write_wav(u.wav, render_text(u.text, pads[emotion], cfg));
      corpus.utterances.push_back(std::move(u));
    }
  }
  corpus.manifest = out_dir / "manifest.jsonl";
  write_manifest(corpus.manifest, corpus.utterances);
  return corpus;
}

std::vector<Example> load_examples(const std::vector<Utterance>& utts, const Vocab& vocab,
                                   const FeatureExtractor& fx) {
  std::vector<Example> out;
  out.reserve(utts.size());
  for (const auto& u : utts) {
    Example ex;
    ex.id = u.id;
    ex.chars = vocab.encode(u.text);
    ex.features = fx.extract(dsp::read_wav(u.wav));
    ex.emotion = u.emotion;
    out.push_back(std::move(ex));
  }
  return out;
}

}  // namespace padtts::data
