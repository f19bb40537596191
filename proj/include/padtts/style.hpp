#pragma once

// Emotion styles: onehot category -> 3-D PAD -> 32-D projected style.

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "padtts/params.hpp"
#include "padtts/tensor.hpp"

namespace padtts::style {

inline constexpr std::size_t kNumEmotions = 7;
inline constexpr std::size_t kPadDims = 3;
inline constexpr std::size_t kStyleDim = 32;
// Near-zero initial PAD entries are excluded from the sign audit.
inline constexpr double kSignThreshold = 0.05;

enum class Emotion { neutral = 0, happy, sad, angry, fear, disgust, surprise };

inline constexpr std::array<const char*, kNumEmotions> kEmotionLabels = {
    "neutral", "happy", "sad", "angry", "fear", "disgust", "surprise"};

const char* label(Emotion e);
// Throws ValueError listing the valid labels.
Emotion emotion_from_label(const std::string& text);
std::optional<Emotion> try_emotion(const std::string& text);
std::string valid_labels();

struct OneHotStyle {
  std::array<double, kNumEmotions> vector{};
  Emotion label = Emotion::neutral;

  static OneHotStyle of(Emotion e);
  // Validates exactly one entry equal to 1 and the rest 0.
  static OneHotStyle from_vector(std::span<const double> values);
};

struct PadVector {
  double p = 0.0, a = 0.0, d = 0.0;

  std::array<double, kPadDims> values() const { return {p, a, d}; }
  bool in_range() const;
  // Throws ValueError naming the first out-of-range component.
  void validate() const;
  bool operator==(const PadVector&) const = default;
};

struct ProjectedStyle {
  std::vector<double> vector;  // kStyleDim entries, all >= 0

  bool is_zero() const;
  Tensor as_row() const;
};

// 7 PAD rows in canonical emotion order.
struct PadTable {
  std::array<PadVector, kNumEmotions> rows{};

  const PadVector& operator[](Emotion e) const { return rows[static_cast<std::size_t>(e)]; }
  PadVector& operator[](Emotion e) { return rows[static_cast<std::size_t>(e)]; }

  // Shipped default: only the neutral row is known (all zero); the emotion
  // rows are absent and must be supplied from a reference table.
  static nlohmann::json default_json();

  void validate() const;
  nlohmann::json to_json() const;
  static PadTable from_json(const nlohmann::json& j);
  static PadTable load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

inline PadTable load_pad_table(const std::filesystem::path& path) { return PadTable::load(path); }

struct SignReport {
  struct Row {
    std::size_t compared = 0;
    std::size_t matching = 0;
    double fraction = 1.0;
  };
  std::size_t compared = 0;
  std::size_t matching = 0;
  // 1.0 when nothing is compared.
  double fraction = 1.0;
  std::array<Row, kNumEmotions> per_emotion{};

  nlohmann::json to_json() const;
};

// Compares signs over entries whose magnitude exceeds threshold in both
// matrices. Both inputs are 3 x 7 (PAD x emotion), row-major.
SignReport sign_compatibility(std::span<const double> w1_init, std::span<const double> w1_final,
                              double threshold = kSignThreshold);
SignReport sign_compatibility(const PadTable& init, const PadTable& final_table,
                              double threshold = kSignThreshold);

// W1 (3 x 7) and W2 (32 x 3) without biases. Registers "style.W1" and
// "style.W2" in the given parameter set.
class StyleProjector {
 public:
  StyleProjector() = default;
  StyleProjector(ParameterSet& params, const PadTable& pad_init, std::mt19937_64& rng);

  const PadTable& pad_init() const { return pad_init_; }
  const Tensor& w1() const { return w1_; }
  const Tensor& w2() const { return w2_; }

  std::pair<PadVector, ProjectedStyle> project_from_onehot(const OneHotStyle& so) const;
  ProjectedStyle project_from_pad(const PadVector& s) const;

  // Differentiable paths; 1 x kStyleDim rows.
  Tensor project_graph(const OneHotStyle& so) const;
  Tensor project_graph(const PadVector& s) const;

  // Current W1 columns as a PAD table.
  PadTable current_pad() const;

 private:
  PadTable pad_init_;
  Tensor w1_, w2_;
};

}  // namespace padtts::style
