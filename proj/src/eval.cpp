#include "padtts/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

#include "padtts/errors.hpp"

namespace padtts::eval {

namespace {

void check_same_shape(const dsp::Spectrogram& a, const dsp::Spectrogram& b, const char* what) {
  if (a.frames != b.frames || a.bins != b.bins)
    throw ShapeError(std::string(what) + ": shape " + std::to_string(a.frames) + "x" +
                     std::to_string(a.bins) + " vs " + std::to_string(b.frames) + "x" +
                     std::to_string(b.bins));
  if (a.values.size() != a.frames * a.bins || b.values.size() != b.frames * b.bins)
    throw ShapeError(std::string(what) + ": value count does not match shape");
}

double floored(double x) { return std::max(std::abs(x), kMagnitudeFloor); }

}  // namespace

double sdr(const dsp::Spectrogram& s, const dsp::Spectrogram& s_hat) {
  check_same_shape(s, s_hat, "sdr");
  double dot = 0.0, ns = 0.0, nh = 0.0;
  for (std::size_t i = 0; i < s.values.size(); ++i) {
    const double a = s.values[i], b = s_hat.values[i];
    if (a < 0.0 || b < 0.0) throw ValueError("sdr: negative magnitude");
    dot += a * b;
    ns += a * a;
    nh += b * b;
  }
  if (ns == 0.0 || nh == 0.0) throw ValueError("sdr: all-zero spectrogram");
  const double cos2 = (dot * dot) / (ns * nh);
  if (cos2 >= 1.0) return kSdrClampDb;
  if (cos2 <= 0.0) return -kSdrClampDb;
  return std::clamp(10.0 * std::log10(cos2 / (1.0 - cos2)), -kSdrClampDb, kSdrClampDb);
}

double sd(const dsp::Spectrogram& s, const dsp::Spectrogram& s_hat) {
  check_same_shape(s, s_hat, "sd");
  if (s.frames == 0 || s.bins == 0) throw ValueError("sd: empty spectrogram");
  double total = 0.0;
  for (std::size_t t = 0; t < s.frames; ++t) {
    double acc = 0.0;
    for (std::size_t f = 0; f < s.bins; ++f) {
      const double d = 20.0 * std::log10(floored(s.at(t, f)) / floored(s_hat.at(t, f)));
      acc += d * d;
    }
    total += std::sqrt(acc / static_cast<double>(s.bins));
  }
  return total / static_cast<double>(s.frames);
}

MelMetrics mel_variants(const dsp::Spectrogram& linear, const dsp::Spectrogram& linear_hat,
                        const dsp::MelBank& bank) {
  check_same_shape(linear, linear_hat, "mel_variants");
  if (bank.bins != linear.bins)
    throw ShapeError("mel_variants: bank expects " + std::to_string(bank.bins) + " bins, got " +
                     std::to_string(linear.bins));
  const auto m = bank.apply(linear);
  const auto mh = bank.apply(linear_hat);
  return {sdr(m, mh), sd(m, mh)};
}

double dtw_frame_cost(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t f = 0; f < a.size(); ++f) {
    const double d = std::log(std::max(a[f], kMagnitudeFloor)) -
                     std::log(std::max(b[f], kMagnitudeFloor));
    acc += d * d;
  }
  return std::sqrt(acc);
}

DtwResult dtw_align(const dsp::Spectrogram& target, const dsp::Spectrogram& synth) {
  if (target.frames == 0 || synth.frames == 0) throw ValueError("dtw_align: empty input");
  if (target.bins != synth.bins)
    throw ShapeError("dtw_align: bin count " + std::to_string(target.bins) + " vs " +
                     std::to_string(synth.bins));
  const std::size_t n = target.frames, m = synth.frames;
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> acc(n * m, inf);
  auto at = [&](std::size_t i, std::size_t j) -> double& { return acc[i * m + j]; };
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      const double c = dtw_frame_cost(target.frame(i), synth.frame(j));
      double best = (i == 0 && j == 0) ? 0.0 : inf;
      if (i > 0 && j > 0) best = std::min(best, at(i - 1, j - 1));
      if (i > 0) best = std::min(best, at(i - 1, j));
      if (j > 0) best = std::min(best, at(i, j - 1));
      at(i, j) = c + best;
    }
  }

  DtwResult r;
  r.cost = at(n - 1, m - 1);
  std::size_t i = n - 1, j = m - 1;
  r.path.emplace_back(i, j);
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const double d = at(i - 1, j - 1), up = at(i - 1, j), left = at(i, j - 1);
      if (d <= up && d <= left) {
        --i;
        --j;
      } else if (up <= left) {
        --i;
      } else {
        --j;
      }
    } else if (i > 0) {
      --i;
    } else {
      --j;
    }
    r.path.emplace_back(i, j);
  }
  std::reverse(r.path.begin(), r.path.end());

  r.warped = target;
  std::fill(r.warped.values.begin(), r.warped.values.end(), 0.0);
  r.warped.kind = synth.kind;
  std::vector<std::size_t> counts(n, 0);
  for (auto [ti, sj] : r.path) {
    ++counts[ti];
    const auto src = synth.frame(sj);
    for (std::size_t f = 0; f < target.bins; ++f) r.warped.at(ti, f) += src[f];
  }
  for (std::size_t ti = 0; ti < n; ++ti) {
    if (counts[ti] == 1) continue;
    const double k = static_cast<double>(counts[ti]);
    for (std::size_t f = 0; f < target.bins; ++f) r.warped.at(ti, f) /= k;
  }
  return r;
}

Interval confidence_interval(std::span<const double> values) {
  const std::size_t n = values.size();
  if (n < 2) throw ValueError("confidence_interval: need at least 2 values, got " +
                              std::to_string(n));
  for (double v : values)
    if (!std::isfinite(v)) throw ValueError("confidence_interval: non-finite value");
  const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
  if (*lo == *hi) return {*lo, 0.0};
  double sum = 0.0;
  for (double v : values) sum += v;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double std = std::sqrt(ss / static_cast<double>(n - 1));
  return {mean, 1.96 * std / std::sqrt(static_cast<double>(n))};
}

std::string to_string(Mode m) {
  return m == Mode::teacher_forced ? "teacher_forced" : "free_running";
}

Mode mode_from(const std::string& text) {
  if (text == "teacher_forced" || text == "teacher-forced" || text == "tf")
    return Mode::teacher_forced;
  if (text == "free_running" || text == "free-running" || text == "fr") return Mode::free_running;
  throw ConfigError("unknown mode '" + text + "' (teacher_forced | free_running)");
}

nlohmann::json MetricResult::to_json() const {
  nlohmann::json j = {{"model", model}, {"id", id}, {"mode", eval::to_string(mode)}, {"ok", ok}};
  if (ok) {
    j["sdr_db"] = sdr_db;
    j["mel_sdr_db"] = mel_sdr_db;
    j["sd_db"] = sd_db;
    j["mel_sd_db"] = mel_sd_db;
  } else {
    j["error"] = error;
  }
  return j;
}

MetricResult MetricResult::from_json(const nlohmann::json& j) {
  MetricResult r;
  r.model = j.at("model").get<std::string>();
  r.id = j.at("id").get<std::string>();
  r.mode = mode_from(j.at("mode").get<std::string>());
  r.ok = j.at("ok").get<bool>();
  if (r.ok) {
    r.sdr_db = j.at("sdr_db").get<double>();
    r.mel_sdr_db = j.at("mel_sdr_db").get<double>();
    r.sd_db = j.at("sd_db").get<double>();
    r.mel_sd_db = j.at("mel_sd_db").get<double>();
  } else {
    r.error = j.value("error", "");
  }
  return r;
}

namespace {

nlohmann::json interval_json(const Interval& i, std::size_t n) {
  if (n < 2) return {{"mean", n ? nlohmann::json(i.mean) : nlohmann::json()}, {"ci95", nullptr}};
  return {{"mean", i.mean}, {"ci95", i.half_width}};
}

std::string cell(const Interval& i, std::size_t n) {
  if (n == 0) return "-";
  char buf[64];
  if (n < 2)
    std::snprintf(buf, sizeof(buf), "%.2f", i.mean);
  else
    std::snprintf(buf, sizeof(buf), "%.2f ± %.2f", i.mean, i.half_width);
  return buf;
}

}  // namespace

nlohmann::json AggregateRow::to_json() const {
  return {{"model", model},
          {"mode", eval::to_string(mode)},
          {"n", n},
          {"failed", failed},
          {"sdr_db", interval_json(sdr, n)},
          {"mel_sdr_db", interval_json(mel_sdr, n)},
          {"sd_db", interval_json(sd, n)},
          {"mel_sd_db", interval_json(mel_sd, n)}};
}

std::vector<AggregateRow> aggregate(const std::vector<MetricResult>& results,
                                    const std::vector<std::string>& models,
                                    const std::vector<Mode>& modes) {
  std::vector<const MetricResult*> sorted;
  sorted.reserve(results.size());
  for (const auto& r : results) sorted.push_back(&r);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const MetricResult* a, const MetricResult* b) { return a->id < b->id; });

  std::vector<AggregateRow> rows;
  for (auto mode : modes) {
    for (const auto& name : models) {
      AggregateRow row;
      row.model = name;
      row.mode = mode;
      std::vector<double> a, b, c, d;
      for (const auto* r : sorted) {
        if (r->model != name || r->mode != mode) continue;
        if (!r->ok) {
          ++row.failed;
          continue;
        }
        a.push_back(r->sdr_db);
        b.push_back(r->mel_sdr_db);
        c.push_back(r->sd_db);
        d.push_back(r->mel_sd_db);
      }
      row.n = a.size();
      if (row.n >= 2) {
        row.sdr = confidence_interval(a);
        row.mel_sdr = confidence_interval(b);
        row.sd = confidence_interval(c);
        row.mel_sd = confidence_interval(d);
      } else if (row.n == 1) {
        row.sdr = {a[0], 0.0};
        row.mel_sdr = {b[0], 0.0};
        row.sd = {c[0], 0.0};
        row.mel_sd = {d[0], 0.0};
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::size_t Report::failures() const {
  std::size_t n = 0;
  for (const auto& u : utterances) n += u.ok ? 0 : 1;
  return n;
}

nlohmann::json Report::to_json() const {
  nlohmann::json j;
  j["models"] = models;
  j["modes"] = nlohmann::json::array();
  for (auto m : modes) j["modes"].push_back(to_string(m));
  j["utterances"] = nlohmann::json::array();
  for (const auto& u : utterances) j["utterances"].push_back(u.to_json());
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) j["rows"].push_back(r.to_json());
  j["failed"] = failures();
  return j;
}

Report Report::from_json(const nlohmann::json& j) {
  Report r;
  try {
    r.models = j.at("models").get<std::vector<std::string>>();
    for (const auto& m : j.at("modes")) r.modes.push_back(mode_from(m.get<std::string>()));
    for (const auto& u : j.at("utterances")) r.utterances.push_back(MetricResult::from_json(u));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("report: ") + e.what());
  }
  r.rows = aggregate(r.utterances, r.models, r.modes);
  return r;
}

std::string Report::text() const {
  std::vector<std::vector<std::string>> table;
  table.push_back({"", "Model", "SDR", "Mel-SDR", "SD", "Mel-SD", "N"});
  Mode last{};
  bool first = true;
  for (const auto& row : rows) {
    std::string mode_cell;
    if (first || row.mode != last)
      mode_cell = row.mode == Mode::teacher_forced ? "Teacher forcing" : "Free running";
    first = false;
    last = row.mode;
    std::string n = std::to_string(row.n);
    if (row.failed) n += " (" + std::to_string(row.failed) + " failed)";
    table.push_back({mode_cell, row.model, cell(row.sdr, row.n), cell(row.mel_sdr, row.n),
                     cell(row.sd, row.n), cell(row.mel_sd, row.n), n});
  }
  // Display width; "±" is two bytes in UTF-8.
  auto width = [](const std::string& s) {
    std::size_t w = 0;
    for (unsigned char ch : s) w += (ch & 0xC0) != 0x80;
    return w;
  };
  std::vector<std::size_t> widths(table[0].size(), 0);
  for (const auto& r : table)
    for (std::size_t c = 0; c < r.size(); ++c) widths[c] = std::max(widths[c], width(r[c]));
  std::ostringstream out;
  for (const auto& r : table) {
    std::string line;
    for (std::size_t c = 0; c < r.size(); ++c) {
      line += r[c] + std::string(widths[c] - width(r[c]), ' ');
      if (c + 1 < r.size()) line += "  ";
    }
    while (!line.empty() && line.back() == ' ') line.pop_back();
    out << line << "\n";
  }
  return out.str();
}

MetricResult score(const dsp::Spectrogram& target_linear, const dsp::Spectrogram& synth_linear,
                   Mode mode, const dsp::MelBank& bank) {
  MetricResult r;
  r.mode = mode;
  const dsp::Spectrogram* pred = &synth_linear;
  DtwResult aligned;
  if (mode == Mode::free_running) {
    aligned = dtw_align(target_linear, synth_linear);
    pred = &aligned.warped;
  }
  r.sdr_db = sdr(target_linear, *pred);
  r.sd_db = sd(target_linear, *pred);
  const auto mel = mel_variants(target_linear, *pred, bank);
  r.mel_sdr_db = mel.sdr_db;
  r.mel_sd_db = mel.sd_db;
  return r;
}

Report evaluate_models(const std::vector<NamedModel>& models,
                       const std::vector<data::Example>& test, const std::vector<Mode>& modes) {
  if (models.empty()) throw ConfigError("evaluate_models: no models");
  if (test.empty()) throw ConfigError("evaluate_models: empty test set");
  if (modes.empty()) throw ConfigError("evaluate_models: no modes");

  std::vector<const data::Example*> order;
  for (const auto& ex : test) order.push_back(&ex);
  std::stable_sort(order.begin(), order.end(),
                   [](const data::Example* a, const data::Example* b) { return a->id < b->id; });

  Report rep;
  rep.modes = modes;
  for (const auto& m : models) {
    if (!m.model) throw ConfigError("evaluate_models: model '" + m.name + "' is null");
    rep.models.push_back(m.name);
  }
  for (auto mode : modes) {
    for (const auto& m : models) {
      const auto bank = dsp::mel_filterbank(m.model->features().stft, m.model->features().mel);
      for (const auto* ex : order) {
        MetricResult r;
        try {
          const auto spec = StyleSpec::of(ex->emotion);
          const auto syn = mode == Mode::teacher_forced
                               ? m.model->synthesize_teacher_forced(ex->chars, spec, ex->features.mel)
                               : m.model->synthesize_free(ex->chars, spec);
          r = score(ex->features.linear, syn.linear, mode, bank);
        } catch (const std::exception& e) {
          r = MetricResult{};
          r.mode = mode;
          r.ok = false;
          r.error = e.what();
        }
        r.model = m.name;
        r.id = ex->id;
        rep.utterances.push_back(std::move(r));
      }
    }
  }
  rep.rows = aggregate(rep.utterances, rep.models, rep.modes);
  return rep;
}

}  // namespace padtts::eval
