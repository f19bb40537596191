#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "padtts/data.hpp"
#include "padtts/params.hpp"
#include "padtts/style.hpp"
#include "padtts/synth.hpp"

namespace padtts {

// Position in the PAD-adjustment schedule. `init` is a fresh model.
enum class Stage { init = 0, base, tune_w2, adjust_pad };

std::string to_string(Stage s);
// Accepts "base", "tune_w2" / "tune-w2", "adjust_pad" / "adjust-pad", "init".
Stage stage_from(const std::string& text);

// Style input for synthesis.
struct StyleSpec {
  enum class Kind { none, pad, emotion };
  Kind kind = Kind::none;
  style::PadVector pad;
  style::Emotion emotion = style::Emotion::neutral;

  static StyleSpec disabled() { return {}; }
  static StyleSpec of(const style::PadVector& p) { return {Kind::pad, p, {}}; }
  static StyleSpec of(style::Emotion e) { return {Kind::emotion, {}, e}; }
};

struct Synthesis {
  synth::DecoderOutput output;
  dsp::Spectrogram mel;     // negative predictions clamped to zero
  dsp::Spectrogram linear;  // negative predictions clamped to zero
};

// Clamps at zero and wraps rows of a T x F tensor.
dsp::Spectrogram to_spectrogram(const Tensor& frames, dsp::SpectrogramKind kind,
                                const data::FeatureConfig& fc, std::size_t keep_frames = 0);

// Synthesizer + style projector + vocabulary + front-end settings.
class Model {
 public:
  Model(synth::SynthConfig cfg, data::FeatureConfig features, data::Vocab vocab,
        const style::PadTable& pad_init, std::uint64_t seed);

  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  static Model from_checkpoint(const Checkpoint& ck);
  static Model load(const std::filesystem::path& path);
  Checkpoint checkpoint() const;
  void save(const std::filesystem::path& path) const;
  std::unique_ptr<Model> clone() const;

  const synth::SynthConfig& config() const { return synth_.config(); }
  const data::FeatureConfig& features() const { return features_; }
  const data::Vocab& vocab() const { return vocab_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const style::StyleProjector& projector() const { return projector_; }
  const synth::Synthesizer& synthesizer() const { return synth_; }
  Stage stage() const { return stage_; }
  void set_stage(Stage s) { stage_ = s; }
  std::uint64_t seed() const { return seed_; }
  std::string config_hash() const;

  // Inference-time style row (undefined for disabled).
  Tensor style_row(const StyleSpec& spec) const;

  Synthesis synthesize(const std::string& text, const StyleSpec& spec) const;
  Synthesis synthesize_teacher_forced(const std::vector<std::size_t>& chars,
                                      const StyleSpec& spec,
                                      const dsp::Spectrogram& target_mel) const;
  Synthesis synthesize_free(const std::vector<std::size_t>& chars, const StyleSpec& spec) const;

 private:
  data::FeatureConfig features_;
  data::Vocab vocab_;
  ParameterSet params_;
  synth::Synthesizer synth_;
  style::StyleProjector projector_;
  Stage stage_ = Stage::init;
  std::uint64_t seed_ = 0;
};

}  // namespace padtts
