#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include <nlohmann/json.hpp>

#include "padtts/data.hpp"
#include "padtts/model.hpp"

namespace padtts::train {

struct TrainConfig {
  std::size_t batch_size = 8;
  // Indexed by Stage (init unused).
  std::array<std::size_t, 4> steps{0, 2000, 300, 300};
  std::array<double, 4> learning_rate{0.0, 1e-3, 1e-3, 1e-4};
  std::uint64_t seed = 42;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::filesystem::path out_dir;     // empty: no files written
  std::size_t log_every = 1;

  std::size_t steps_for(Stage s) const { return steps[static_cast<std::size_t>(s)]; }
  double lr_for(Stage s) const { return learning_rate[static_cast<std::size_t>(s)]; }

  // 0 steps is allowed (a no-op stage); learning rates must be positive.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainConfig from_json(const nlohmann::json& j);
};

// L1(mel) + L1(linear); frame counts must match.
Tensor loss(const synth::DecoderOutput& pred, const Tensor& target_mel,
            const Tensor& target_linear);

struct TargetPair {
  Tensor mel, linear;  // frames padded with zeros to a multiple of r
};
TargetPair targets(const data::Example& ex, std::size_t r);

// Stage that must precede s.
Stage required_predecessor(Stage s);

// Sets the freeze mask for a stage on the model's parameters.
void apply_freeze(ParameterSet& params, Stage s);

struct StageResult {
  Checkpoint checkpoint;
  std::vector<double> losses;  // one per step
};

using ProgressFn = std::function<void(std::size_t step, double loss)>;

// Runs one stage of the schedule in place on model. Throws StageError when
// the model is not at the required predecessor stage and ConfigError when
// the model's PAD table has no emotion rows.
StageResult run_stage(Stage stage, Model& model, const std::vector<data::Example>& examples,
                      const TrainConfig& cfg, const ProgressFn& progress = {});

// Mean teacher-forced loss without dropout.
double evaluate_loss(const Model& model, const std::vector<data::Example>& examples);

struct AdjustedPad {
  style::PadTable table;
  style::SignReport report;
};

// Final W1 columns clamped to [-1, 1] with the sign audit against pad_init.
AdjustedPad export_adjusted_pad(const Model& model);

}  // namespace padtts::train
