#include "padtts/model.hpp"

#include <cstdio>

#include "padtts/errors.hpp"

namespace padtts {

std::string to_string(Stage s) {
  switch (s) {
    case Stage::init: return "init";
    case Stage::base: return "base";
    case Stage::tune_w2: return "tune_w2";
    case Stage::adjust_pad: return "adjust_pad";
  }
  return "?";
}

Stage stage_from(const std::string& text) {
  if (text == "init") return Stage::init;
  if (text == "base") return Stage::base;
  if (text == "tune_w2" || text == "tune-w2") return Stage::tune_w2;
  if (text == "adjust_pad" || text == "adjust-pad") return Stage::adjust_pad;
  throw ConfigError("unknown stage '" + text + "' (base | tune-w2 | adjust-pad)");
}

dsp::Spectrogram to_spectrogram(const Tensor& frames, dsp::SpectrogramKind kind,
                                const data::FeatureConfig& fc, std::size_t keep_frames) {
  dsp::Spectrogram s;
  s.kind = kind;
  s.bins = frames.cols();
  s.frames = keep_frames ? std::min(keep_frames, frames.rows()) : frames.rows();
  s.frame_shift_s = fc.stft.frame_shift_s;
  s.frame_length_s = fc.stft.frame_length_s;
  s.sample_rate = fc.stft.sample_rate;
  const auto d = frames.data();
  s.values.resize(s.frames * s.bins);
  for (std::size_t i = 0; i < s.values.size(); ++i) s.values[i] = d[i] > 0.0 ? d[i] : 0.0;
  return s;
}

Model::Model(synth::SynthConfig cfg, data::FeatureConfig features, data::Vocab vocab,
             const style::PadTable& pad_init, std::uint64_t seed)
    : features_(std::move(features)), vocab_(std::move(vocab)), seed_(seed) {
  cfg.char_vocab_size = vocab_.size();
  cfg.n_mels = features_.mel.n_mels;
  cfg.linear_bins = features_.stft.bins();
  if (cfg.style_dim != style::kStyleDim)
    throw ConfigError("style_dim must be " + std::to_string(style::kStyleDim));
  std::mt19937_64 rng(seed);
  synth_ = synth::Synthesizer(cfg, params_, rng);
  projector_ = style::StyleProjector(params_, pad_init, rng);
}

std::string Model::config_hash() const {
  nlohmann::json j = {{"config", config().to_json()},
                      {"features", features_.to_json()},
                      {"vocab", vocab_.to_json()}};
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

Checkpoint Model::checkpoint() const {
  nlohmann::json meta = {{"config", config().to_json()},
                         {"features", features_.to_json()},
                         {"vocab", vocab_.to_json()},
                         {"pad_init", projector_.pad_init().to_json()},
                         {"stage", to_string(stage_)},
                         {"seed", seed_},
                         {"config_hash", config_hash()}};
  return Checkpoint::capture(params_, std::move(meta));
}

void Model::save(const std::filesystem::path& path) const { checkpoint().save(path); }

Model Model::from_checkpoint(const Checkpoint& ck) {
  try {
    const auto& m = ck.meta;
    Model model(synth::SynthConfig::from_json(m.at("config")),
                data::FeatureConfig::from_json(m.at("features")),
                data::Vocab::from_json(m.at("vocab")),
                style::PadTable::from_json(m.at("pad_init")), m.at("seed").get<std::uint64_t>());
    if (m.contains("config_hash") && m.at("config_hash").get<std::string>() != model.config_hash())
      throw FormatError("checkpoint config hash does not match its config");
    ck.restore(model.params_);
    model.stage_ = stage_from(m.at("stage").get<std::string>());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
}

Model Model::load(const std::filesystem::path& path) {
  return from_checkpoint(Checkpoint::load(path));
}

std::unique_ptr<Model> Model::clone() const {
  return std::make_unique<Model>(from_checkpoint(checkpoint()));
}

Tensor Model::style_row(const StyleSpec& spec) const {
  switch (spec.kind) {
    case StyleSpec::Kind::none: return {};
    case StyleSpec::Kind::pad: return projector_.project_from_pad(spec.pad).as_row();
    case StyleSpec::Kind::emotion:
      return projector_.project_from_onehot(style::OneHotStyle::of(spec.emotion)).second.as_row();
  }
  return {};
}

namespace {

Synthesis wrap(synth::DecoderOutput out, const data::FeatureConfig& fc, std::size_t keep) {
  Synthesis s;
  s.mel = to_spectrogram(out.mel, dsp::SpectrogramKind::mel, fc, keep);
  s.linear = to_spectrogram(out.linear, dsp::SpectrogramKind::linear, fc, keep);
  s.output = std::move(out);
  return s;
}

}  // namespace

Synthesis Model::synthesize(const std::string& text, const StyleSpec& spec) const {
  if (text.empty()) throw ValueError("synthesize: empty text");
  return synthesize_free(vocab_.encode(text), spec);
}

Synthesis Model::synthesize_free(const std::vector<std::size_t>& chars,
                                 const StyleSpec& spec) const {
  NoGradGuard guard;
  return wrap(synth_.run(chars, style_row(spec), synth::FreeRunning{}), features_, 0);
}

Synthesis Model::synthesize_teacher_forced(const std::vector<std::size_t>& chars,
                                           const StyleSpec& spec,
                                           const dsp::Spectrogram& target_mel) const {
  NoGradGuard guard;
  const auto r = config().reduction_factor;
  const auto padded = (target_mel.frames + r - 1) / r * r;
  std::vector<double> values(padded * target_mel.bins, 0.0);
  std::copy(target_mel.values.begin(), target_mel.values.end(), values.begin());
  auto target = Tensor::from({padded, target_mel.bins}, std::move(values));
  return wrap(synth_.run(chars, style_row(spec), synth::TeacherForced{target}, nullptr),
              features_, target_mel.frames);
}

}  // namespace padtts
