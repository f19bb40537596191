#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "padtts/errors.hpp"
#include "padtts/eval.hpp"

using namespace padtts;
using namespace padtts::eval;
namespace fs = std::filesystem;

namespace {

dsp::Spectrogram spec(std::size_t frames, std::size_t bins, std::vector<double> v) {
  dsp::Spectrogram s;
  s.frames = frames;
  s.bins = bins;
  s.values = std::move(v);
  return s;
}

dsp::Spectrogram random_spec(std::size_t frames, std::size_t bins, std::mt19937_64& rng) {
  return spec(frames, bins, oracle::uniform(frames * bins, rng, 0.01, 1.0));
}

// S * B^T with B given as n_mels x bins.
std::vector<double> mel_oracle(const dsp::Spectrogram& s, const dsp::MelBank& b) {
  std::vector<double> bt(b.bins * b.n_mels);
  for (std::size_t m = 0; m < b.n_mels; ++m)
    for (std::size_t k = 0; k < b.bins; ++k) bt[k * b.n_mels + m] = b.at(m, k);
  return oracle::matmul(s.values, bt, s.frames, s.bins, b.n_mels);
}

double log_cost(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t f = 0; f < a.size(); ++f) {
    const double d = std::log(std::max(a[f], 1e-8)) - std::log(std::max(b[f], 1e-8));
    acc += d * d;
  }
  return std::sqrt(acc);
}

}  // namespace

TEST_CASE("metrics match direct formulas on random pairs") {
  std::mt19937_64 rng(100);
  const auto bank = dsp::mel_filterbank(8, 3, 0.0, 8000.0, 16000);
  double worst = 0.0;
  for (int i = 0; i < 100; ++i) {
    const auto s = random_spec(10, 8, rng), h = random_spec(10, 8, rng);
    worst = std::max(worst, std::abs(sdr(s, h) - oracle::sdr_db(s.values, h.values)));
    worst = std::max(worst, std::abs(sd(s, h) - oracle::sd_db(s.values, h.values, 10, 8)));
    const auto mel = mel_variants(s, h, bank);
    const auto ms = mel_oracle(s, bank), mh = mel_oracle(h, bank);
    worst = std::max(worst, std::abs(mel.sdr_db - oracle::sdr_db(ms, mh)));
    worst = std::max(worst, std::abs(mel.sd_db - oracle::sd_db(ms, mh, 10, 3)));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("metric identities") {
  std::mt19937_64 rng(1);
  const auto s = random_spec(10, 8, rng), h = random_spec(10, 8, rng);
  auto h5 = h;
  for (auto& v : h5.values) v *= 5.0;
  CHECK(sdr(s, h5) == doctest::Approx(sdr(s, h)).epsilon(1e-12));
  auto tenth = s;
  for (auto& v : tenth.values) v /= 10.0;
  CHECK(std::abs(sd(s, tenth) - 20.0) < 1e-12);
  CHECK(sd(s, s) == 0.0);
  CHECK(sdr(s, s) == kSdrClampDb);

  // Disjoint supports: cos^2 = 0.
  const auto a = spec(1, 2, {1.0, 0.0}), b = spec(1, 2, {0.0, 1.0});
  CHECK(sdr(a, b) == -kSdrClampDb);
  // Equal parts signal and error.
  const auto c = spec(1, 2, {1.0, 1.0});
  CHECK(sdr(a, c) == doctest::Approx(0.0).scale(1.0).epsilon(1e-12));

  CHECK_THROWS_AS(sdr(s, random_spec(10, 7, rng)), ShapeError);
  CHECK_THROWS_AS(sdr(spec(1, 2, {0.0, 0.0}), a), ValueError);
  CHECK_THROWS_AS(sdr(spec(1, 2, {-1.0, 1.0}), a), ValueError);
  CHECK_THROWS_AS(sd(s, random_spec(9, 8, rng)), ShapeError);
}

TEST_CASE("dtw cost equals brute-force enumeration") {
  std::mt19937_64 rng(12);
  std::uniform_int_distribution<std::size_t> len(1, 12);
  for (int trial = 0; trial < 20; ++trial) {
    const auto n = len(rng), m = len(rng);
    const auto t = random_spec(n, 4, rng), y = random_spec(m, 4, rng);
    std::vector<std::vector<double>> cost(n, std::vector<double>(m));
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) cost[i][j] = log_cost(t.frame(i), y.frame(j));
    const auto r = dtw_align(t, y);
    INFO("n=" << n << " m=" << m);
    CHECK(r.cost == doctest::Approx(oracle::brute_force_dtw(cost)).epsilon(1e-12));

    REQUIRE(!r.path.empty());
    CHECK(r.path.front() == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK(r.path.back() == std::pair<std::size_t, std::size_t>{n - 1, m - 1});
    double along = 0.0;
    for (std::size_t k = 0; k < r.path.size(); ++k) {
      along += cost[r.path[k].first][r.path[k].second];
      if (k) {
        const auto di = r.path[k].first - r.path[k - 1].first;
        const auto dj = r.path[k].second - r.path[k - 1].second;
        CHECK(di <= 1);
        CHECK(dj <= 1);
        CHECK(di + dj >= 1);
      }
    }
    CHECK(along == doctest::Approx(r.cost).epsilon(1e-12));
    CHECK(r.warped.frames == n);
  }
}

TEST_CASE("dtw collapses duplicated frames") {
  std::mt19937_64 rng(3);
  const auto t = random_spec(6, 5, rng);
  std::vector<double> dup;
  for (std::size_t i = 0; i < 6; ++i)
    for (int rep = 0; rep < (i % 2 ? 3 : 1); ++rep)
      dup.insert(dup.end(), t.frame(i).begin(), t.frame(i).end());
  const auto y = spec(dup.size() / 5, 5, dup);
  const auto r = dtw_align(t, y);
  CHECK(r.cost == 0.0);
  for (std::size_t i = 0; i < t.values.size(); ++i)
    CHECK(std::abs(r.warped.values[i] - t.values[i]) < 1e-9);
  CHECK_THROWS_AS(dtw_align(t, random_spec(3, 4, rng)), ShapeError);
}

TEST_CASE("confidence interval") {
  const std::vector<double> v{1.0, 2.0, 3.0, 4.0};
  const auto ci = confidence_interval(v);
  CHECK(ci.mean == 2.5);
  CHECK(ci.half_width == doctest::Approx(1.96 * std::sqrt(5.0 / 3.0) / 2.0).epsilon(1e-15));
  const std::vector<double> same(5, 0.7);
  CHECK(confidence_interval(same).mean == 0.7);
  CHECK(confidence_interval(same).half_width == 0.0);
  CHECK_THROWS_AS(confidence_interval(std::vector<double>{1.0}), ValueError);
  CHECK_THROWS_AS(confidence_interval(std::vector<double>{1.0, std::nan("")}), ValueError);
}

TEST_CASE("report aggregation and persistence") {
  std::vector<MetricResult> results;
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-10.0, 10.0);
  for (auto mode : {Mode::teacher_forced, Mode::free_running})
    for (auto model : {"A", "B"})
      for (int i = 4; i-- > 0;) {
        MetricResult r;
        r.model = model;
        r.mode = mode;
        r.id = "u" + std::to_string(i);
        r.sdr_db = u(rng);
        r.mel_sdr_db = u(rng);
        r.sd_db = u(rng);
        r.mel_sd_db = u(rng);
        if (i == 0 && std::string(model) == "B") {
          r.ok = false;
          r.error = "boom";
        }
        results.push_back(r);
      }
  Report rep;
  rep.models = {"B", "A"};
  rep.modes = {Mode::teacher_forced, Mode::free_running};
  rep.utterances = results;
  rep.rows = aggregate(results, rep.models, rep.modes);
  REQUIRE(rep.rows.size() == 4);
  CHECK(rep.rows[0].model == "B");
  CHECK(rep.rows[0].n == 3);
  CHECK(rep.rows[0].failed == 1);
  CHECK(rep.rows[1].n == 4);
  CHECK(rep.rows[2].mode == Mode::free_running);
  CHECK(rep.failures() == 2);

  std::vector<double> a_tf;
  for (const auto& r : results)
    if (r.model == "A" && r.mode == Mode::teacher_forced) a_tf.insert(a_tf.begin(), r.mel_sdr_db);
  CHECK(rep.rows[1].mel_sdr.mean == confidence_interval(a_tf).mean);

  const auto j = rep.to_json();
  const auto back = Report::from_json(nlohmann::json::parse(j.dump()));
  CHECK(back.to_json() == j);
  CHECK(back.text() == rep.text());
  CHECK(rep.text().find("Teacher forcing") != std::string::npos);
  CHECK(rep.text().find("(1 failed)") != std::string::npos);
  CHECK_THROWS_AS(Report::from_json(nlohmann::json::object()), FormatError);

  // A single result has no interval.
  const auto one = aggregate({results[0]}, {"A"}, {Mode::teacher_forced});
  CHECK(one[0].n == 1);
  CHECK(one[0].to_json()["sdr_db"]["ci95"].is_null());
}

TEST_CASE("evaluate_models over a tiny corpus") {
  const auto dir = oracle::temp_dir("eval_corpus");
  const auto pads = style::PadTable::load(fs::path(PADTTS_DATA_DIR) / "pad_fixture.json");
  auto gen = data::generate_synthetic_corpus(9, 1, pads, dir);
  const auto vocab = data::Vocab::build(gen.utterances);
  auto test = data::load_examples(gen.utterances, vocab, data::FeatureExtractor{});
  auto cfg = synth::SynthConfig::from_preset("SUM-4");
  cfg.decoder_dim = 16;
  cfg.attention_dim = 16;
  cfg.encoder_dim = 16;
  cfg.max_decoder_steps = 20;
  Model a(cfg, {}, vocab, pads, 1);
  cfg = synth::SynthConfig::from_preset("CAT-1");
  cfg.decoder_dim = 16;
  cfg.attention_dim = 16;
  cfg.encoder_dim = 16;
  cfg.max_decoder_steps = 20;
  Model b(cfg, {}, vocab, pads, 2);

  test[3].chars.push_back(999);  // out of vocabulary: recorded as a failure
  const auto rep = evaluate_models({{"SUM-4", &a}, {"CAT-1", &b}}, test,
                                   {Mode::teacher_forced, Mode::free_running});
  CHECK(rep.rows.size() == 4);
  CHECK(rep.utterances.size() == 28);
  CHECK(rep.failures() == 4);
  for (const auto& row : rep.rows) {
    CHECK(row.n == 6);
    CHECK(std::isfinite(row.mel_sdr.mean));
  }
  CHECK(Report::from_json(rep.to_json()).to_json() == rep.to_json());

  CHECK_THROWS_AS(evaluate_models({}, test, {Mode::teacher_forced}), ConfigError);
  CHECK_THROWS_AS(evaluate_models({{"a", &a}}, {}, {Mode::teacher_forced}), ConfigError);
  CHECK_THROWS_AS(evaluate_models({{"a", &a}}, test, {}), ConfigError);
}
