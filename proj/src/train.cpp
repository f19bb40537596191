#include "padtts/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "padtts/errors.hpp"

namespace padtts::train {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("batch_size must be >= 1");
  for (auto s : {Stage::base, Stage::tune_w2, Stage::adjust_pad}) {
    const double lr = lr_for(s);
    if (!(lr > 0.0) || !std::isfinite(lr))
      throw ConfigError("learning rate for " + to_string(s) + " must be > 0");
  }
  if (log_every == 0) throw ConfigError("log_every must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
  nlohmann::json steps_j, lr_j;
  for (auto s : {Stage::base, Stage::tune_w2, Stage::adjust_pad}) {
    steps_j[to_string(s)] = steps_for(s);
    lr_j[to_string(s)] = lr_for(s);
  }
  return {{"batch_size", batch_size}, {"steps", steps_j},          {"learning_rate", lr_j},
          {"seed", seed},             {"checkpoint_every", checkpoint_every},
          {"log_every", log_every}};
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) {
  TrainConfig c;
  try {
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    c.log_every = j.value("log_every", c.log_every);
    for (auto s : {Stage::base, Stage::tune_w2, Stage::adjust_pad}) {
      const auto i = static_cast<std::size_t>(s);
      if (j.contains("steps") && j["steps"].contains(to_string(s)))
        c.steps[i] = j["steps"][to_string(s)].get<std::size_t>();
      if (j.contains("learning_rate") && j["learning_rate"].contains(to_string(s)))
        c.learning_rate[i] = j["learning_rate"][to_string(s)].get<double>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

Tensor loss(const synth::DecoderOutput& pred, const Tensor& target_mel,
            const Tensor& target_linear) {
  if (pred.mel.shape() != target_mel.shape())
    throw ShapeError("loss: mel " + shape_str(pred.mel.shape()) + " vs target " +
                     shape_str(target_mel.shape()));
  if (pred.linear.shape() != target_linear.shape())
    throw ShapeError("loss: linear " + shape_str(pred.linear.shape()) + " vs target " +
                     shape_str(target_linear.shape()));
  return ops::add(ops::l1_loss(pred.mel, target_mel), ops::l1_loss(pred.linear, target_linear));
}

TargetPair targets(const data::Example& ex, std::size_t r) {
  const auto b = data::make_batch({&ex}, r);
  const auto frames = b.target_frames(0, r);
  return {Tensor::from({frames, b.n_mels}, b.mel_rows(0, frames)),
          Tensor::from({frames, b.bins}, b.linear_rows(0, frames))};
}

Stage required_predecessor(Stage s) {
  switch (s) {
    case Stage::base: return Stage::init;
    case Stage::tune_w2: return Stage::base;
    case Stage::adjust_pad: return Stage::tune_w2;
    case Stage::init: break;
  }
  throw StageError("init is not a trainable stage");
}

void apply_freeze(ParameterSet& params, Stage s) {
  switch (s) {
    case Stage::base:
      params.set_frozen_prefix("", false);
      params.set_frozen("style.W1", true);
      return;
    case Stage::tune_w2:
      params.set_frozen_prefix("", true);
      params.set_frozen("style.W2", false);
      return;
    case Stage::adjust_pad:
      params.set_frozen_prefix("style.", true, /*invert=*/true);
      params.set_frozen_prefix("style.", false);
      return;
    case Stage::init: break;
  }
  throw StageError("init is not a trainable stage");
}

namespace {

bool has_emotion_rows(const style::PadTable& t) {
  for (std::size_t e = 1; e < style::kNumEmotions; ++e)
    if (!(t.rows[e] == style::PadVector{})) return true;
  return false;
}

// Cycles through a fresh shuffle of the example indices each epoch.
class Sampler {
 public:
  Sampler(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) { reshuffle(); }
  std::size_t next() {
    if (pos_ == order_.size()) reshuffle();
    return order_[pos_++];
  }

 private:
  void reshuffle() {
    std::iota(order_.begin(), order_.end(), 0);
    for (std::size_t i = order_.size(); i > 1; --i) std::swap(order_[i - 1], order_[rng_() % i]);
    pos_ = 0;
  }
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

}  // namespace

StageResult run_stage(Stage stage, Model& model, const std::vector<data::Example>& examples,
                      const TrainConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const Stage need = required_predecessor(stage);
  if (model.stage() != need)
    throw StageError("stage " + to_string(stage) + " requires a " + to_string(need) +
                     " checkpoint, model is at stage " + to_string(model.stage()));
  if (!has_emotion_rows(model.projector().pad_init()))
    throw ConfigError("PAD table has no emotion rows; supply a full 7-emotion table");
  const auto n_steps = cfg.steps_for(stage);
  if (n_steps > 0 && examples.empty()) throw ConfigError("no training examples");

  const auto r = model.config().reduction_factor;
  std::vector<TargetPair> tgt;
  tgt.reserve(examples.size());
  for (const auto& ex : examples) tgt.push_back(targets(ex, r));

  auto& params = model.params();
  apply_freeze(params, stage);
  Adam opt({cfg.lr_for(stage)});
  const std::uint64_t stage_seed = mix64(cfg.seed ^ (0x5157ULL + static_cast<std::uint64_t>(stage)));
  Sampler sampler(examples.size(), stage_seed);

  std::ofstream log;
  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    log.open(cfg.out_dir / "train_log.jsonl", std::ios::app);
  }

  StageResult result;
  result.losses.reserve(n_steps);
  const auto& synth = model.synthesizer();
  const auto& proj = model.projector();
  const double dropout = synth.config().dropout;
  const double inv_b = 1.0 / static_cast<double>(cfg.batch_size);

  for (std::size_t step = 0; step < n_steps; ++step) {
    params.zero_grad();
    double total = 0.0;
    for (std::size_t b = 0; b < cfg.batch_size; ++b) {
      const auto i = sampler.next();
      const auto& ex = examples[i];
      DropoutContext drop(stage_seed, step * cfg.batch_size + b, dropout);
      const Tensor style = proj.project_graph(style::OneHotStyle::of(ex.emotion));
      auto out = synth.run(ex.chars, style, synth::TeacherForced{tgt[i].mel}, &drop);
      const Tensor l = loss(out, tgt[i].mel, tgt[i].linear);
      if (!std::isfinite(l.item()))
        throw NumericError("non-finite loss at " + to_string(stage) + " step " +
                           std::to_string(step));
      total += l.item();
      ops::scale(l, inv_b).backward();
    }
    opt.step(params);
    const double mean_loss = total * inv_b;
    result.losses.push_back(mean_loss);
    if (log.is_open() && (step % cfg.log_every == 0 || step + 1 == n_steps))
      log << nlohmann::json{{"step", step}, {"stage", to_string(stage)}, {"loss", mean_loss}}.dump()
          << "\n" << std::flush;
    if (progress) progress(step, mean_loss);
    if (!cfg.out_dir.empty() && cfg.checkpoint_every && (step + 1) % cfg.checkpoint_every == 0 &&
        step + 1 < n_steps) {
      model.set_stage(stage);
      model.save(cfg.out_dir / (to_string(stage) + "_step" + std::to_string(step + 1) + ".ckpt"));
      model.set_stage(need);
    }
  }

  params.set_frozen_prefix("", false);
  params.zero_grad();
  model.set_stage(stage);
  result.checkpoint = model.checkpoint();
  if (!cfg.out_dir.empty()) result.checkpoint.save(cfg.out_dir / (to_string(stage) + ".ckpt"));
  return result;
}

double evaluate_loss(const Model& model, const std::vector<data::Example>& examples) {
  if (examples.empty()) throw ValueError("evaluate_loss: no examples");
  NoGradGuard guard;
  const auto r = model.config().reduction_factor;
  double total = 0.0;
  for (const auto& ex : examples) {
    const auto t = targets(ex, r);
    const Tensor style = model.style_row(StyleSpec::of(ex.emotion));
    auto out = model.synthesizer().run(ex.chars, style, synth::TeacherForced{t.mel}, nullptr);
    total += loss(out, t.mel, t.linear).item();
  }
  return total / static_cast<double>(examples.size());
}

AdjustedPad export_adjusted_pad(const Model& model) {
  if (model.stage() != Stage::adjust_pad)
    throw StageError("export requires an adjust_pad checkpoint, model is at stage " +
                     to_string(model.stage()));
  AdjustedPad out;
  out.table = model.projector().current_pad();
  for (auto& row : out.table.rows) {
    row.p = std::clamp(row.p, -1.0, 1.0);
    row.a = std::clamp(row.a, -1.0, 1.0);
    row.d = std::clamp(row.d, -1.0, 1.0);
  }
  out.table.validate();
  out.report = style::sign_compatibility(model.projector().pad_init(), out.table);
  return out;
}

}  // namespace padtts::train
