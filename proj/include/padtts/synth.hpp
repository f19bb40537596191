#pragma once

// Style-conditioned encoder / location-sensitive attention / decoder.

#include <array>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "padtts/params.hpp"
#include "padtts/tensor.hpp"

namespace padtts::synth {

enum class InjectionType { sum, concat, multiply };

enum class Site { attn_rnn, attn_context, dec_prenet, dec_rnn1, dec_rnn2 };

inline constexpr Site kAllSites[] = {Site::attn_rnn, Site::attn_context, Site::dec_prenet,
                                     Site::dec_rnn1, Site::dec_rnn2};

std::string to_string(InjectionType t);
std::string to_string(Site s);
InjectionType injection_type_from(const std::string& text);
Site site_from(const std::string& text);

struct SynthConfig {
  std::size_t char_vocab_size = 16;
  std::size_t embed_dim = 32;
  std::size_t encoder_dim = 64;  // bidirectional output width
  std::size_t attention_dim = 64;
  std::size_t decoder_dim = 128;
  std::size_t style_dim = 32;
  std::size_t n_mels = 80;
  std::size_t linear_bins = 513;
  std::size_t reduction_factor = 2;
  InjectionType injection_type = InjectionType::concat;
  std::set<Site> injection_sites;
  std::size_t max_decoder_steps = 200;
  std::size_t location_filters = 16;
  std::size_t location_width = 11;
  double dropout = 0.5;
  // Free-running stop: this many consecutive frames below the threshold.
  std::size_t stop_frames = 5;
  double stop_threshold = 0.01;
  std::string preset = "custom";

  bool has(Site s) const { return injection_sites.count(s) != 0; }
  bool widens(Site s) const { return has(s) && injection_type == InjectionType::concat; }

  // "SUM-4", "CAT-1", "CAT-2", "CAT-4", plus "<SUM|CAT|MUL>-<1|2|4|5|CTX>" and "NONE".
  static SynthConfig from_preset(const std::string& name);
  static std::vector<std::string> preset_names();
  // Preset name matching the type + site set, or "custom".
  std::string matching_preset() const;

  void validate() const;
  nlohmann::json to_json() const;
  // Accepts {"preset": "CAT-4", ...overrides} or explicit type + sites.
  static SynthConfig from_json(const nlohmann::json& j);
};

// Analytic trainable scalar count of the synthesizer (style projector excluded).
std::size_t count_parameters(const SynthConfig& cfg);
// Number of standalone style projection matrices (sum / multiply sites).
std::size_t count_projection_matrices(const SynthConfig& cfg);

struct Linear {
  Tensor w, b;
  Tensor operator()(const Tensor& x) const;
};

// Gates ordered (reset, update, candidate).
struct Gru {
  Tensor wx, wh, bx, bh;
  std::size_t hidden = 0;
  // x_proj = x * wx + bx, precomputed (1 x 3H).
  Tensor step(const Tensor& x_proj, const Tensor& h) const;
  Tensor step_input(const Tensor& x, const Tensor& h) const;
};

struct AttentionState {
  Tensor alpha;        // 1 x T_in
  Tensor rnn_hidden;   // 1 x attention_dim
  Tensor context;      // 1 x context width (after optional injection)
};

struct DecoderState {
  AttentionState attention;
  Tensor h1, h2;       // 1 x decoder_dim
};

struct EncoderState {
  Tensor e;     // T_in x encoder_dim
  Tensor keys;  // T_in x attention_dim, e projected once per utterance
};

struct DecoderOutput {
  Tensor mel;     // (steps * r) x n_mels
  Tensor linear;  // (steps * r) x linear_bins
  std::vector<std::vector<double>> alignments;
  std::size_t steps = 0;
  bool truncated = false;
};

struct TeacherForced {
  Tensor target_mel;  // T x n_mels, T a multiple of r
};

struct FreeRunning {};

// style: 1 x style_dim row, or undefined for injection disabled.
// Disabled sum / multiply sites pass y through; disabled concat sites
// concatenate a zero block so layer widths are unchanged.
Tensor inject(const Tensor& style, const Tensor& y, InjectionType type, const Tensor& projection,
              std::size_t style_dim);

class Synthesizer {
 public:
  Synthesizer() = default;
  Synthesizer(const SynthConfig& cfg, ParameterSet& params, std::mt19937_64& rng);

  const SynthConfig& config() const { return cfg_; }

  EncoderState encode(std::span<const std::size_t> ids, DropoutContext* dropout) const;

  DecoderState initial_state(const EncoderState& enc) const;

  // Pre-net on the previous frame, attention RNN, location-sensitive scores.
  // Returns alpha_i and updates the attention RNN hidden state.
  Tensor attention_step(const EncoderState& enc, DecoderState& state, const Tensor& prev_frame,
                        const Tensor& style, DropoutContext* dropout) const;

  // Weighted sum of encoder rows, style injected afterwards at attn_context.
  Tensor context(const EncoderState& enc, const Tensor& alpha, const Tensor& style) const;

  // One full decoder step: returns 1 x (r * n_mels).
  Tensor decoder_step(const EncoderState& enc, DecoderState& state, const Tensor& prev_frame,
                      const Tensor& style, DropoutContext* dropout) const;

  DecoderOutput run(std::span<const std::size_t> ids, const Tensor& style,
                    const TeacherForced& mode, DropoutContext* dropout) const;
  DecoderOutput run(std::span<const std::size_t> ids, const Tensor& style,
                    const FreeRunning& mode) const;

  // Mel frames -> linear frames.
  Tensor post_project(const Tensor& mel) const;

  const Tensor& projection(Site s) const;

 private:
  Tensor prenet(const Linear& l1, const Linear& l2, const Tensor& x,
                DropoutContext* dropout) const;
  Tensor site(Site s, const Tensor& style, const Tensor& y) const;
  DecoderOutput finish(std::vector<Tensor> step_frames,
                       std::vector<std::vector<double>> alignments, bool truncated) const;

  SynthConfig cfg_;
  Tensor embedding_;
  Linear enc_pre1_, enc_pre2_;
  Gru enc_fwd_, enc_bwd_;
  Linear dec_pre1_, dec_pre2_;
  Gru attn_rnn_;
  Tensor query_, key_, loc_conv_, loc_proj_, score_v_;
  Linear dec_input_;
  Gru rnn1_, rnn2_;
  Linear output_, post_;
  std::array<Tensor, 5> projections_;
};

}  // namespace padtts::synth
