#include "padtts/synth.hpp"

#include <cmath>

#include "padtts/errors.hpp"

namespace padtts::synth {

namespace {

constexpr const char* kSiteNames[] = {"attn_rnn", "attn_context", "dec_prenet", "dec_rnn1",
                                      "dec_rnn2"};

std::size_t idx(Site s) { return static_cast<std::size_t>(s); }

struct SiteSet {
  const char* suffix;
  std::set<Site> sites;
};

const std::vector<SiteSet>& site_sets() {
  static const std::vector<SiteSet> sets = {
      {"1", {Site::attn_rnn}},
      {"2", {Site::attn_rnn, Site::dec_prenet}},
      {"4", {Site::attn_rnn, Site::dec_prenet, Site::dec_rnn1, Site::dec_rnn2}},
      {"5",
       {Site::attn_rnn, Site::attn_context, Site::dec_prenet, Site::dec_rnn1, Site::dec_rnn2}},
      {"CTX", {Site::attn_context}},
  };
  return sets;
}

const char* type_prefix(InjectionType t) {
  switch (t) {
    case InjectionType::sum: return "SUM";
    case InjectionType::concat: return "CAT";
    case InjectionType::multiply: return "MUL";
  }
  return "?";
}

Tensor bias(std::size_t n) { return Tensor::zeros({1, n}); }

Linear make_linear(ParameterSet& params, const std::string& name, std::size_t in,
                   std::size_t out, std::mt19937_64& rng) {
  return {params.add(name + ".w", glorot(in, out, rng)), params.add(name + ".b", bias(out))};
}

Gru make_gru(ParameterSet& params, const std::string& name, std::size_t in, std::size_t hidden,
             std::mt19937_64& rng) {
  Gru g;
  g.wx = params.add(name + ".wx", glorot(in, 3 * hidden, rng));
  g.wh = params.add(name + ".wh", glorot(hidden, 3 * hidden, rng));
  g.bx = params.add(name + ".bx", bias(3 * hidden));
  g.bh = params.add(name + ".bh", bias(3 * hidden));
  g.hidden = hidden;
  return g;
}

void check_finite(const Tensor& t, const char* what) {
  for (double v : t.data())
    if (!std::isfinite(v)) throw NumericError(std::string("non-finite activation in ") + what);
}

}  // namespace

std::string to_string(InjectionType t) {
  switch (t) {
    case InjectionType::sum: return "sum";
    case InjectionType::concat: return "concat";
    case InjectionType::multiply: return "multiply";
  }
  return "?";
}

std::string to_string(Site s) { return kSiteNames[idx(s)]; }

InjectionType injection_type_from(const std::string& text) {
  if (text == "sum") return InjectionType::sum;
  if (text == "concat") return InjectionType::concat;
  if (text == "multiply") return InjectionType::multiply;
  throw ConfigError("unknown injection type '" + text + "' (sum | concat | multiply)");
}

Site site_from(const std::string& text) {
  for (auto s : kAllSites)
    if (text == kSiteNames[idx(s)]) return s;
  throw ConfigError("unknown injection site '" + text +
                    "' (attn_rnn | attn_context | dec_prenet | dec_rnn1 | dec_rnn2)");
}

// ---------------------------------------------------------------------------
// Config

SynthConfig SynthConfig::from_preset(const std::string& name) {
  SynthConfig cfg;
  cfg.preset = name;
  if (name == "NONE") return cfg;
  const auto dash = name.find('-');
  if (dash != std::string::npos) {
    const auto prefix = name.substr(0, dash), suffix = name.substr(dash + 1);
    for (auto t : {InjectionType::sum, InjectionType::concat, InjectionType::multiply}) {
      if (prefix != type_prefix(t)) continue;
      for (const auto& set : site_sets())
        if (suffix == set.suffix) {
          cfg.injection_type = t;
          cfg.injection_sites = set.sites;
          return cfg;
        }
    }
  }
  throw ConfigError("unknown preset '" + name + "'");
}

std::vector<std::string> SynthConfig::preset_names() {
  std::vector<std::string> out{"NONE"};
  for (auto t : {InjectionType::sum, InjectionType::concat, InjectionType::multiply})
    for (const auto& set : site_sets()) out.push_back(std::string(type_prefix(t)) + "-" + set.suffix);
  return out;
}

std::string SynthConfig::matching_preset() const {
  if (injection_sites.empty()) return "NONE";
  for (const auto& set : site_sets())
    if (set.sites == injection_sites) return std::string(type_prefix(injection_type)) + "-" + set.suffix;
  return "custom";
}

void SynthConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ConfigError(std::string("synth config: ") + name + " must be positive");
  };
  positive(char_vocab_size, "char_vocab_size");
  positive(embed_dim, "embed_dim");
  positive(encoder_dim, "encoder_dim");
  positive(attention_dim, "attention_dim");
  positive(decoder_dim, "decoder_dim");
  positive(style_dim, "style_dim");
  positive(n_mels, "n_mels");
  positive(linear_bins, "linear_bins");
  positive(reduction_factor, "reduction_factor");
  positive(max_decoder_steps, "max_decoder_steps");
  positive(location_filters, "location_filters");
  positive(stop_frames, "stop_frames");
  if (encoder_dim % 2 || decoder_dim % 2)
    throw ConfigError("synth config: encoder_dim and decoder_dim must be even");
  if (location_width % 2 == 0) throw ConfigError("synth config: location_width must be odd");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("synth config: dropout must be in [0, 1)");
}

nlohmann::json SynthConfig::to_json() const {
  nlohmann::json sites = nlohmann::json::array();
  for (auto s : injection_sites) sites.push_back(to_string(s));
  return {{"preset", matching_preset()},
          {"char_vocab_size", char_vocab_size},
          {"embed_dim", embed_dim},
          {"encoder_dim", encoder_dim},
          {"attention_dim", attention_dim},
          {"decoder_dim", decoder_dim},
          {"style_dim", style_dim},
          {"n_mels", n_mels},
          {"linear_bins", linear_bins},
          {"reduction_factor", reduction_factor},
          {"injection_type", to_string(injection_type)},
          {"injection_sites", sites},
          {"max_decoder_steps", max_decoder_steps},
          {"location_filters", location_filters},
          {"location_width", location_width},
          {"dropout", dropout},
          {"stop_frames", stop_frames},
          {"stop_threshold", stop_threshold}};
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("synth config must be a JSON object");
  SynthConfig cfg;
  try {
    const std::string preset = j.value("preset", std::string("custom"));
    const bool named = preset != "custom";
    if (named) cfg = from_preset(preset);
    auto get = [&](const char* key, auto& field) {
      if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
    };
    get("char_vocab_size", cfg.char_vocab_size);
    get("embed_dim", cfg.embed_dim);
    get("encoder_dim", cfg.encoder_dim);
    get("attention_dim", cfg.attention_dim);
    get("decoder_dim", cfg.decoder_dim);
    get("style_dim", cfg.style_dim);
    get("n_mels", cfg.n_mels);
    get("linear_bins", cfg.linear_bins);
    get("reduction_factor", cfg.reduction_factor);
    get("max_decoder_steps", cfg.max_decoder_steps);
    get("location_filters", cfg.location_filters);
    get("location_width", cfg.location_width);
    get("dropout", cfg.dropout);
    get("stop_frames", cfg.stop_frames);
    get("stop_threshold", cfg.stop_threshold);
    InjectionType type = cfg.injection_type;
    std::set<Site> sites = cfg.injection_sites;
    if (j.contains("injection_type")) type = injection_type_from(j.at("injection_type").get<std::string>());
    if (j.contains("injection_sites")) {
      sites.clear();
      for (const auto& s : j.at("injection_sites")) sites.insert(site_from(s.get<std::string>()));
    }
    if (named && !sites.empty() && (type != cfg.injection_type || sites != cfg.injection_sites))
      throw ConfigError("synth config: preset '" + preset +
                        "' conflicts with explicit injection_type / injection_sites");
    cfg.injection_type = type;
    cfg.injection_sites = sites;
    cfg.preset = cfg.matching_preset();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("synth config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Parameter accounting (closed form, independent of model construction)

namespace {

std::size_t linear_count(std::size_t in, std::size_t out) { return in * out + out; }
std::size_t gru_count(std::size_t in, std::size_t h) { return (in + h) * 3 * h + 6 * h; }

}  // namespace

std::size_t count_parameters(const SynthConfig& cfg) {
  const std::size_t E = cfg.embed_dim, Ce = cfg.encoder_dim, A = cfg.attention_dim,
                    D = cfg.decoder_dim, M = cfg.n_mels, S = cfg.style_dim,
                    K = cfg.location_width, F = cfg.location_filters;
  const std::size_t P0 = D / 2;
  std::size_t base = 0;
  base += cfg.char_vocab_size * E;
  base += linear_count(E, Ce) + linear_count(Ce, Ce / 2);
  base += 2 * gru_count(Ce / 2, Ce / 2);
  base += linear_count(M, D) + linear_count(D, P0);
  base += gru_count(P0 + Ce, A);
  base += A * A + Ce * A + K * F + F * A + A;
  base += linear_count(A + Ce, D);
  base += 2 * gru_count(D, D);
  base += linear_count(D, cfg.reduction_factor * M);
  base += linear_count(M, cfg.linear_bins);

  std::size_t extra = 0;
  for (auto s : cfg.injection_sites) {
    if (cfg.injection_type == InjectionType::concat) {
      // The consuming layer's input weights gain S rows.
      switch (s) {
        case Site::attn_rnn:
        case Site::dec_prenet: extra += S * 3 * A; break;
        case Site::attn_context: extra += S * 3 * A + S * D; break;
        case Site::dec_rnn1:
        case Site::dec_rnn2: extra += S * 3 * D; break;
      }
    } else {
      switch (s) {
        case Site::attn_rnn: extra += S * (P0 + Ce); break;
        case Site::attn_context: extra += S * Ce; break;
        case Site::dec_prenet: extra += S * P0; break;
        case Site::dec_rnn1:
        case Site::dec_rnn2: extra += S * D; break;
      }
    }
  }
  return base + extra;
}

std::size_t count_projection_matrices(const SynthConfig& cfg) {
  return cfg.injection_type == InjectionType::concat ? 0 : cfg.injection_sites.size();
}

// ---------------------------------------------------------------------------
// Layers

Tensor Linear::operator()(const Tensor& x) const { return ops::add_rowwise(ops::matmul(x, w), b); }

Tensor Gru::step(const Tensor& x_proj, const Tensor& h) const {
  const auto H = hidden;
  auto h_proj = ops::add_rowwise(ops::matmul(h, wh), bh);
  auto r = ops::sigmoid(ops::add(ops::slice_cols(x_proj, 0, H), ops::slice_cols(h_proj, 0, H)));
  auto z = ops::sigmoid(
      ops::add(ops::slice_cols(x_proj, H, 2 * H), ops::slice_cols(h_proj, H, 2 * H)));
  auto n = ops::tanh(ops::add(ops::slice_cols(x_proj, 2 * H, 3 * H),
                              ops::mul(r, ops::slice_cols(h_proj, 2 * H, 3 * H))));
  // (1 - z) * n + z * h
  return ops::add(n, ops::mul(z, ops::sub(h, n)));
}

Tensor Gru::step_input(const Tensor& x, const Tensor& h) const {
  return step(ops::add_rowwise(ops::matmul(x, wx), bx), h);
}

Tensor inject(const Tensor& style, const Tensor& y, InjectionType type, const Tensor& projection,
              std::size_t style_dim) {
  if (type == InjectionType::concat) {
    if (!style.defined()) return ops::concat({Tensor::zeros({y.rows(), style_dim}), y});
    if (style.cols() != style_dim)
      throw ShapeError("inject: style width " + std::to_string(style.cols()) + " != " +
                       std::to_string(style_dim));
    return ops::concat({style, y});
  }
  if (!style.defined()) return y;
  if (!projection.defined()) throw ShapeError("inject: sum / multiply need a projection matrix");
  if (projection.dim() != 2 || projection.size(1) != y.cols())
    throw ShapeError("inject: projection " + shape_str(projection.shape()) +
                     " does not map onto y " + shape_str(y.shape()));
  auto gate = ops::relu(ops::matmul(style, projection));
  return type == InjectionType::sum ? ops::add(gate, y) : ops::mul(gate, y);
}

// ---------------------------------------------------------------------------
// Synthesizer

Synthesizer::Synthesizer(const SynthConfig& cfg, ParameterSet& params, std::mt19937_64& rng)
    : cfg_(cfg) {
  cfg_.validate();
  const std::size_t E = cfg.embed_dim, Ce = cfg.encoder_dim, A = cfg.attention_dim,
                    D = cfg.decoder_dim, M = cfg.n_mels, S = cfg.style_dim;
  const std::size_t P0 = D / 2;
  const std::size_t P = P0 + (cfg.widens(Site::dec_prenet) ? S : 0);
  const std::size_t C = Ce + (cfg.widens(Site::attn_context) ? S : 0);
  const std::size_t attn_in = P + C + (cfg.widens(Site::attn_rnn) ? S : 0);

  embedding_ = params.add("encoder.embedding", glorot(cfg.char_vocab_size, E, rng));
  enc_pre1_ = make_linear(params, "encoder.prenet1", E, Ce, rng);
  enc_pre2_ = make_linear(params, "encoder.prenet2", Ce, Ce / 2, rng);
  enc_fwd_ = make_gru(params, "encoder.gru_fwd", Ce / 2, Ce / 2, rng);
  enc_bwd_ = make_gru(params, "encoder.gru_bwd", Ce / 2, Ce / 2, rng);

  dec_pre1_ = make_linear(params, "decoder.prenet1", M, D, rng);
  dec_pre2_ = make_linear(params, "decoder.prenet2", D, P0, rng);
  attn_rnn_ = make_gru(params, "attention.rnn", attn_in, A, rng);
  query_ = params.add("attention.query", glorot(A, A, rng));
  key_ = params.add("attention.key", glorot(Ce, A, rng));
  loc_conv_ = params.add("attention.location_conv",
                         glorot(cfg.location_width, cfg.location_filters, rng));
  loc_proj_ = params.add("attention.location_proj", glorot(cfg.location_filters, A, rng));
  score_v_ = params.add("attention.v", glorot(A, 1, rng));

  dec_input_ = make_linear(params, "decoder.input", A + C, D, rng);
  rnn1_ = make_gru(params, "decoder.rnn1", D + (cfg.widens(Site::dec_rnn1) ? S : 0), D, rng);
  rnn2_ = make_gru(params, "decoder.rnn2", D + (cfg.widens(Site::dec_rnn2) ? S : 0), D, rng);
  output_ = make_linear(params, "decoder.output", D, cfg.reduction_factor * M, rng);
  post_ = make_linear(params, "post.linear", M, cfg.linear_bins, rng);

  if (cfg.injection_type != InjectionType::concat) {
    for (auto s : cfg.injection_sites) {
      std::size_t width = 0;
      switch (s) {
        case Site::attn_rnn: width = P0 + Ce; break;
        case Site::attn_context: width = Ce; break;
        case Site::dec_prenet: width = P0; break;
        case Site::dec_rnn1:
        case Site::dec_rnn2: width = D; break;
      }
      projections_[idx(s)] = params.add("inject." + to_string(s) + ".W", glorot(S, width, rng));
    }
  }
}

const Tensor& Synthesizer::projection(Site s) const { return projections_[idx(s)]; }

Tensor Synthesizer::prenet(const Linear& l1, const Linear& l2, const Tensor& x,
                           DropoutContext* dropout) const {
  auto h = ops::dropout(ops::relu(l1(x)), dropout);
  return ops::dropout(ops::relu(l2(h)), dropout);
}

Tensor Synthesizer::site(Site s, const Tensor& style, const Tensor& y) const {
  if (!cfg_.has(s)) return y;
  return inject(style, y, cfg_.injection_type, projections_[idx(s)], cfg_.style_dim);
}

EncoderState Synthesizer::encode(std::span<const std::size_t> ids, DropoutContext* dropout) const {
  if (ids.empty()) throw ValueError("encode: empty input sequence");
  for (auto id : ids)
    if (id >= cfg_.char_vocab_size)
      throw ValueError("encode: character id " + std::to_string(id) + " outside vocabulary of " +
                       std::to_string(cfg_.char_vocab_size));
  const auto T = ids.size();
  const auto H = enc_fwd_.hidden;
  auto x = prenet(enc_pre1_, enc_pre2_, ops::gather_rows(embedding_, ids), dropout);
  auto xf = ops::add_rowwise(ops::matmul(x, enc_fwd_.wx), enc_fwd_.bx);
  auto xb = ops::add_rowwise(ops::matmul(x, enc_bwd_.wx), enc_bwd_.bx);
  std::vector<Tensor> fwd(T), bwd(T);
  auto h = Tensor::zeros({1, H});
  for (std::size_t t = 0; t < T; ++t) fwd[t] = h = enc_fwd_.step(ops::slice_rows(xf, t, t + 1), h);
  h = Tensor::zeros({1, H});
  for (std::size_t t = T; t-- > 0;) bwd[t] = h = enc_bwd_.step(ops::slice_rows(xb, t, t + 1), h);
  EncoderState enc;
  enc.e = ops::concat({ops::concat_rows(fwd), ops::concat_rows(bwd)});
  enc.keys = ops::matmul(enc.e, key_);
  return enc;
}

DecoderState Synthesizer::initial_state(const EncoderState& enc) const {
  const auto T = enc.e.size(0);
  DecoderState st;
  std::vector<double> alpha(T, 0.0);
  alpha[0] = 1.0;
  st.attention.alpha = Tensor::row(std::move(alpha));
  st.attention.rnn_hidden = Tensor::zeros({1, cfg_.attention_dim});
  const auto C = cfg_.encoder_dim + (cfg_.widens(Site::attn_context) ? cfg_.style_dim : 0);
  st.attention.context = Tensor::zeros({1, C});
  st.h1 = Tensor::zeros({1, cfg_.decoder_dim});
  st.h2 = Tensor::zeros({1, cfg_.decoder_dim});
  return st;
}

Tensor Synthesizer::attention_step(const EncoderState& enc, DecoderState& state,
                                   const Tensor& prev_frame, const Tensor& style,
                                   DropoutContext* dropout) const {
  auto& att = state.attention;
  if (att.alpha.cols() != enc.e.size(0))
    throw ShapeError("attention_step: alpha length " + std::to_string(att.alpha.cols()) +
                     " != encoder length " + std::to_string(enc.e.size(0)));
  auto p = site(Site::dec_prenet, style, prenet(dec_pre1_, dec_pre2_, prev_frame, dropout));
  auto rnn_in = site(Site::attn_rnn, style, ops::concat({p, att.context}));
  att.rnn_hidden = attn_rnn_.step_input(rnn_in, att.rnn_hidden);

  auto query = ops::matmul(att.rnn_hidden, query_);
  auto location = ops::matmul(
      ops::conv1d(ops::transpose(att.alpha), loc_conv_, cfg_.location_width), loc_proj_);
  auto energies = ops::tanh(ops::add_rowwise(ops::add(enc.keys, location), query));
  auto scores = ops::transpose(ops::matmul(energies, score_v_));
  for (double v : scores.data())
    if (std::isnan(v)) throw NumericError("attention collapse: NaN in alignment scores");
  att.alpha = ops::softmax(scores);
  return att.alpha;
}

Tensor Synthesizer::context(const EncoderState& enc, const Tensor& alpha,
                            const Tensor& style) const {
  if (alpha.numel() != enc.e.size(0))
    throw ShapeError("context: alpha length " + std::to_string(alpha.numel()) +
                     " != encoder rows " + std::to_string(enc.e.size(0)));
  return site(Site::attn_context, style, ops::matmul(alpha, enc.e));
}

Tensor Synthesizer::decoder_step(const EncoderState& enc, DecoderState& state,
                                 const Tensor& prev_frame, const Tensor& style,
                                 DropoutContext* dropout) const {
  auto alpha = attention_step(enc, state, prev_frame, style, dropout);
  state.attention.context = context(enc, alpha, style);
  auto x = dec_input_(ops::concat({state.attention.rnn_hidden, state.attention.context}));
  state.h1 = rnn1_.step_input(site(Site::dec_rnn1, style, x), state.h1);
  x = ops::add(x, state.h1);
  state.h2 = rnn2_.step_input(site(Site::dec_rnn2, style, x), state.h2);
  x = ops::add(x, state.h2);
  auto frames = output_(x);
  check_finite(frames, "decoder output");
  return frames;
}

Tensor Synthesizer::post_project(const Tensor& mel) const { return post_(mel); }

DecoderOutput Synthesizer::finish(std::vector<Tensor> step_frames,
                                  std::vector<std::vector<double>> alignments,
                                  bool truncated) const {
  DecoderOutput out;
  out.steps = step_frames.size();
  out.mel = ops::reshape(ops::concat_rows(step_frames),
                         {out.steps * cfg_.reduction_factor, cfg_.n_mels});
  out.linear = post_project(out.mel);
  out.alignments = std::move(alignments);
  out.truncated = truncated;
  return out;
}

DecoderOutput Synthesizer::run(std::span<const std::size_t> ids, const Tensor& style,
                               const TeacherForced& mode, DropoutContext* dropout) const {
  const auto r = cfg_.reduction_factor, M = cfg_.n_mels;
  const auto& target = mode.target_mel;
  if (!target.defined() || target.dim() != 2 || target.cols() != M || target.rows() == 0)
    throw ShapeError("teacher forcing needs a T x " + std::to_string(M) + " target mel");
  if (target.rows() % r)
    throw ShapeError("teacher-forced target length " + std::to_string(target.rows()) +
                     " is not a multiple of r=" + std::to_string(r));
  auto enc = encode(ids, dropout);
  auto state = initial_state(enc);
  const auto steps = target.rows() / r;
  std::vector<Tensor> frames;
  std::vector<std::vector<double>> alignments;
  auto prev = Tensor::zeros({1, M});
  for (std::size_t i = 0; i < steps; ++i) {
    frames.push_back(decoder_step(enc, state, prev, style, dropout));
    alignments.emplace_back(state.attention.alpha.data().begin(),
                            state.attention.alpha.data().end());
    prev = ops::slice_rows(target, (i + 1) * r - 1, (i + 1) * r);
  }
  return finish(std::move(frames), std::move(alignments), false);
}

DecoderOutput Synthesizer::run(std::span<const std::size_t> ids, const Tensor& style,
                               const FreeRunning&) const {
  const auto r = cfg_.reduction_factor, M = cfg_.n_mels;
  auto enc = encode(ids, nullptr);
  auto state = initial_state(enc);
  std::vector<Tensor> frames;
  std::vector<std::vector<double>> alignments;
  auto prev = Tensor::zeros({1, M});
  std::size_t quiet = 0;
  bool stopped = false;
  while (frames.size() < cfg_.max_decoder_steps) {
    auto out = decoder_step(enc, state, prev, style, nullptr);
    frames.push_back(out);
    alignments.emplace_back(state.attention.alpha.data().begin(),
                            state.attention.alpha.data().end());
    const auto d = out.data();
    for (std::size_t f = 0; f < r; ++f) {
      double level = 0.0;
      for (std::size_t m = 0; m < M; ++m) level += d[f * M + m];
      quiet = level / static_cast<double>(M) < cfg_.stop_threshold ? quiet + 1 : 0;
    }
    if (quiet >= cfg_.stop_frames) {
      stopped = true;
      break;
    }
    prev = ops::slice_cols(out, (r - 1) * M, r * M);
  }
  return finish(std::move(frames), std::move(alignments), !stopped);
}

}  // namespace padtts::synth
