#include "padtts/style.hpp"

#include <cmath>
#include <fstream>

#include "padtts/errors.hpp"

namespace padtts::style {

const char* label(Emotion e) { return kEmotionLabels[static_cast<std::size_t>(e)]; }

std::optional<Emotion> try_emotion(const std::string& text) {
  for (std::size_t i = 0; i < kNumEmotions; ++i)
    if (text == kEmotionLabels[i]) return static_cast<Emotion>(i);
  return std::nullopt;
}

std::string valid_labels() {
  std::string out;
  for (std::size_t i = 0; i < kNumEmotions; ++i) {
    if (i) out += ", ";
    out += kEmotionLabels[i];
  }
  return out;
}

Emotion emotion_from_label(const std::string& text) {
  if (auto e = try_emotion(text)) return *e;
  throw ValueError("unknown emotion label '" + text + "'; valid labels: " + valid_labels());
}

OneHotStyle OneHotStyle::of(Emotion e) {
  OneHotStyle s;
  s.vector[static_cast<std::size_t>(e)] = 1.0;
  s.label = e;
  return s;
}

OneHotStyle OneHotStyle::from_vector(std::span<const double> values) {
  if (values.size() != kNumEmotions)
    throw ValueError("onehot style needs " + std::to_string(kNumEmotions) + " entries, got " +
                     std::to_string(values.size()));
  std::optional<std::size_t> hot;
  for (std::size_t i = 0; i < values.size(); ++i) {
    if (values[i] == 0.0) continue;
    if (values[i] != 1.0 || hot) throw ValueError("malformed onehot style vector");
    hot = i;
  }
  if (!hot) throw ValueError("malformed onehot style vector: no entry set");
  return of(static_cast<Emotion>(*hot));
}

bool PadVector::in_range() const {
  for (double v : values())
    if (!(v >= -1.0 && v <= 1.0)) return false;
  return true;
}

void PadVector::validate() const {
  static constexpr const char* names[] = {"p", "a", "d"};
  const auto v = values();
  for (std::size_t i = 0; i < kPadDims; ++i)
    if (!(v[i] >= -1.0 && v[i] <= 1.0))
      throw ValueError(std::string("PAD component ") + names[i] + "=" + std::to_string(v[i]) +
                       " outside [-1, 1]");
}

bool ProjectedStyle::is_zero() const {
  for (double v : vector)
    if (v != 0.0) return false;
  return true;
}

Tensor ProjectedStyle::as_row() const { return Tensor::row(vector); }

// ---------------------------------------------------------------------------
// PAD table

nlohmann::json PadTable::default_json() {
  return nlohmann::json::array({{{"label", "neutral"}, {"p", 0.0}, {"a", 0.0}, {"d", 0.0}}});
}

void PadTable::validate() const {
  for (std::size_t i = 0; i < kNumEmotions; ++i) {
    try {
      rows[i].validate();
    } catch (const ValueError& e) {
      throw ValueError(std::string("PAD table row '") + kEmotionLabels[i] + "': " + e.what());
    }
  }
  if (!((*this)[Emotion::neutral] == PadVector{}))
    throw ValueError("PAD table: neutral must be (0, 0, 0)");
}

nlohmann::json PadTable::to_json() const {
  auto out = nlohmann::json::array();
  for (std::size_t i = 0; i < kNumEmotions; ++i)
    out.push_back({{"label", kEmotionLabels[i]},
                   {"p", rows[i].p},
                   {"a", rows[i].a},
                   {"d", rows[i].d}});
  return out;
}

PadTable PadTable::from_json(const nlohmann::json& j) {
  if (!j.is_array()) throw FormatError("PAD table must be a JSON list of {label, p, a, d}");
  PadTable t;
  std::array<bool, kNumEmotions> seen{};
  try {
    for (const auto& item : j) {
      const auto e = emotion_from_label(item.at("label").get<std::string>());
      const auto idx = static_cast<std::size_t>(e);
      if (seen[idx]) throw ValueError(std::string("PAD table: duplicate label '") + label(e) + "'");
      seen[idx] = true;
      t.rows[idx] = {item.at("p").get<double>(), item.at("a").get<double>(),
                     item.at("d").get<double>()};
    }
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("PAD table entry: ") + e.what());
  }
  for (std::size_t i = 0; i < kNumEmotions; ++i)
    if (!seen[i])
      throw ValueError(std::string("PAD table: missing label '") + kEmotionLabels[i] + "'");
  t.validate();
  return t;
}

PadTable PadTable::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open PAD table " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("PAD table " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

void PadTable::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path.string());
  os << to_json().dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Sign audit

nlohmann::json SignReport::to_json() const {
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t i = 0; i < kNumEmotions; ++i)
    per[kEmotionLabels[i]] = {{"compared", per_emotion[i].compared},
                              {"matching", per_emotion[i].matching},
                              {"fraction", per_emotion[i].fraction}};
  return {{"compared", compared},
          {"matching", matching},
          {"fraction", fraction},
          {"threshold", kSignThreshold},
          {"per_emotion", per}};
}

SignReport sign_compatibility(std::span<const double> w1_init, std::span<const double> w1_final,
                              double threshold) {
  if (w1_init.size() != w1_final.size() || w1_init.size() != kPadDims * kNumEmotions)
    throw ShapeError("sign_compatibility: expected two 3x7 matrices, got " +
                     std::to_string(w1_init.size()) + " and " + std::to_string(w1_final.size()) +
                     " entries");
  SignReport r;
  for (std::size_t dim = 0; dim < kPadDims; ++dim)
    for (std::size_t e = 0; e < kNumEmotions; ++e) {
      const double a = w1_init[dim * kNumEmotions + e];
      const double b = w1_final[dim * kNumEmotions + e];
      if (std::abs(a) <= threshold || std::abs(b) <= threshold) continue;
      const bool same = (a > 0.0) == (b > 0.0);
      ++r.compared;
      ++r.per_emotion[e].compared;
      if (same) {
        ++r.matching;
        ++r.per_emotion[e].matching;
      }
    }
  auto frac = [](std::size_t m, std::size_t c) {
    return c == 0 ? 1.0 : static_cast<double>(m) / static_cast<double>(c);
  };
  r.fraction = frac(r.matching, r.compared);
  for (auto& row : r.per_emotion) row.fraction = frac(row.matching, row.compared);
  return r;
}

namespace {

std::vector<double> table_matrix(const PadTable& t) {
  std::vector<double> m(kPadDims * kNumEmotions);
  for (std::size_t e = 0; e < kNumEmotions; ++e) {
    const auto v = t.rows[e].values();
    for (std::size_t dim = 0; dim < kPadDims; ++dim) m[dim * kNumEmotions + e] = v[dim];
  }
  return m;
}

}  // namespace

SignReport sign_compatibility(const PadTable& init, const PadTable& final_table,
                              double threshold) {
  return sign_compatibility(table_matrix(init), table_matrix(final_table), threshold);
}

// ---------------------------------------------------------------------------
// Projector

StyleProjector::StyleProjector(ParameterSet& params, const PadTable& pad_init,
                               std::mt19937_64& rng)
    : pad_init_(pad_init) {
  pad_init_.validate();
  w1_ = params.add("style.W1", Tensor::from({kPadDims, kNumEmotions}, table_matrix(pad_init_)));
  w2_ = params.add("style.W2", glorot(kStyleDim, kPadDims, rng));
}

std::pair<PadVector, ProjectedStyle> StyleProjector::project_from_onehot(
    const OneHotStyle& so) const {
  const auto col = static_cast<std::size_t>(so.label);
  const auto w1 = w1_.data();
  PadVector s{w1[0 * kNumEmotions + col], w1[1 * kNumEmotions + col],
              w1[2 * kNumEmotions + col]};
  ProjectedStyle sp;
  sp.vector.resize(kStyleDim);
  const auto w2 = w2_.data();
  const auto v = s.values();
  for (std::size_t i = 0; i < kStyleDim; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < kPadDims; ++j) acc += w2[i * kPadDims + j] * v[j];
    sp.vector[i] = acc > 0.0 ? acc : 0.0;
  }
  return {s, sp};
}

ProjectedStyle StyleProjector::project_from_pad(const PadVector& s) const {
  s.validate();
  ProjectedStyle sp;
  sp.vector.resize(kStyleDim);
  const auto w2 = w2_.data();
  const auto v = s.values();
  for (std::size_t i = 0; i < kStyleDim; ++i) {
    double acc = 0.0;
    for (std::size_t j = 0; j < kPadDims; ++j) acc += w2[i * kPadDims + j] * v[j];
    sp.vector[i] = acc > 0.0 ? acc : 0.0;
  }
  return sp;
}

Tensor StyleProjector::project_graph(const OneHotStyle& so) const {
  auto onehot = Tensor::from({kNumEmotions, 1}, {so.vector.begin(), so.vector.end()});
  auto s = ops::matmul(w1_, onehot);  // 3 x 1
  return ops::transpose(ops::relu(ops::matmul(w2_, s)));
}

Tensor StyleProjector::project_graph(const PadVector& s) const {
  s.validate();
  const auto v = s.values();
  auto col = Tensor::from({kPadDims, 1}, {v.begin(), v.end()});
  return ops::transpose(ops::relu(ops::matmul(w2_, col)));
}

PadTable StyleProjector::current_pad() const {
  PadTable t;
  const auto w1 = w1_.data();
  for (std::size_t e = 0; e < kNumEmotions; ++e)
    t.rows[e] = {w1[e], w1[kNumEmotions + e], w1[2 * kNumEmotions + e]};
  return t;
}

}  // namespace padtts::style
