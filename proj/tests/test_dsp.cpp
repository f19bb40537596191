#include <doctest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>

#include "oracles.hpp"
#include "padtts/dsp.hpp"
#include "padtts/errors.hpp"

using namespace padtts;
using namespace padtts::dsp;

namespace {

Waveform sine(double hz, double seconds, double amp = 0.5, int sr = 16000) {
  Waveform w;
  w.sample_rate = sr;
  const auto n = static_cast<std::size_t>(seconds * sr);
  for (std::size_t i = 0; i < n; ++i)
    w.samples.push_back(amp * std::sin(2 * std::numbers::pi * hz * double(i) / sr));
  return w;
}

Waveform noise(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {oracle::uniform(n, rng, -0.5, 0.5), 16000};
}

}  // namespace

TEST_CASE("stft frame count and bin count") {
  StftConfig cfg;
  CHECK(cfg.frame_length() == 800);
  CHECK(cfg.frame_shift() == 200);
  const auto s = stft_magnitude(noise(5000, 1), cfg);
  CHECK(s.frames == (5000 - 800) / 200 + 1);
  CHECK(s.bins == 513);
  CHECK_THROWS_AS(stft_magnitude(noise(799, 1), cfg), ValueError);
  CHECK_THROWS_AS(stft_magnitude(Waveform{}, cfg), ValueError);
}

TEST_CASE("1 kHz sine peaks at bin 64") {
  const auto s = stft_magnitude(sine(1000.0, 0.3), {});
  for (std::size_t t = 0; t < s.frames; ++t) {
    const auto f = s.frame(t);
    CHECK(std::max_element(f.begin(), f.end()) - f.begin() == 64);
  }
}

TEST_CASE("silence gives an all-zero spectrogram") {
  Waveform w{std::vector<double>(4000, 0.0), 16000};
  for (double v : stft_magnitude(w, {}).values) CHECK(v == 0.0);
}

TEST_CASE("stft matches a direct DFT and Parseval") {
  StftConfig cfg;
  const auto w = noise(2000, 3);
  const auto s = stft_magnitude(w, cfg);
  const std::size_t L = cfg.frame_length(), N = cfg.fft_size;
  for (std::size_t t : {std::size_t{0}, s.frames / 2, s.frames - 1}) {
    std::vector<double> frame(L);
    double time_energy = 0.0;
    for (std::size_t n = 0; n < L; ++n) {
      const double win = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * double(n) / double(L));
      frame[n] = w.samples[t * cfg.frame_shift() + n] * win;
      time_energy += frame[n] * frame[n];
    }
    const auto ref = oracle::dft_magnitude(frame, N);
    double freq_energy = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      CHECK(s.at(t, k) == doctest::Approx(ref[k]).epsilon(1e-9));
      const double weight = (k == 0 || k == N / 2) ? 1.0 : 2.0;
      freq_energy += weight * s.at(t, k) * s.at(t, k);
    }
    CHECK(freq_energy / double(N) == doctest::Approx(time_energy).epsilon(1e-9));
  }
}

TEST_CASE("stft magnitude ignores sign flips") {
  auto w = noise(3000, 5);
  auto neg = w;
  for (auto& x : neg.samples) x = -x;
  const auto a = stft_magnitude(w, {}), b = stft_magnitude(neg, {});
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-12));
}

TEST_CASE("mel filterbank construction") {
  const auto bank = mel_filterbank(513, 80, 0.0, 8000.0, 16000);
  CHECK(bank.n_mels == 80);
  std::size_t last_peak = 0;
  for (std::size_t m = 0; m < 80; ++m) {
    double row = 0.0, peak = -1.0;
    std::size_t arg = 0;
    for (std::size_t k = 0; k < 513; ++k) {
      CHECK(bank.at(m, k) >= 0.0);
      row += bank.at(m, k);
      if (bank.at(m, k) > peak) peak = bank.at(m, k), arg = k;
    }
    CHECK(row > 0.0);
    if (m) CHECK(arg >= last_peak);
    last_peak = arg;
  }

  const auto one = mel_filterbank(513, 1, 100.0, 4000.0, 16000);
  const double hz_per_bin = 16000.0 / 1024.0;
  for (std::size_t k = 0; k < 513; ++k) {
    const double hz = k * hz_per_bin;
    if (hz <= 100.0 || hz >= 4000.0) CHECK(one.at(0, k) == 0.0);
    else CHECK(one.at(0, k) > 0.0);
  }

  CHECK_THROWS_AS(mel_filterbank(513, 80, 5000.0, 4000.0, 16000), ConfigError);
  CHECK_THROWS_AS(mel_filterbank(513, 80, 0.0, 9000.0, 16000), ConfigError);
  CHECK_THROWS_AS(mel_filterbank(513, 0, 0.0, 8000.0, 16000), ConfigError);
  CHECK(mel_to_hz(hz_to_mel(1234.5)) == doctest::Approx(1234.5).epsilon(1e-12));
  CHECK(hz_to_mel(1000.0) == doctest::Approx(2595.0 * std::log10(1.0 + 1000.0 / 700.0)));
}

TEST_CASE("mel of a flat spectrum equals row sums and is linear") {
  const auto bank = mel_filterbank(513, 80, 0.0, 8000.0, 16000);
  Spectrogram flat;
  flat.frames = 2;
  flat.bins = 513;
  flat.values.assign(2 * 513, 1.0);
  const auto m = bank.apply(flat);
  for (std::size_t r = 0; r < 80; ++r) {
    double row = 0.0;
    for (std::size_t k = 0; k < 513; ++k) row += bank.at(r, k);
    CHECK(m.at(0, r) == doctest::Approx(row).epsilon(1e-12));
  }
  const auto x = stft_magnitude(noise(3000, 2), {});
  auto x3 = x;
  for (auto& v : x3.values) v *= 3.0;
  const auto a = bank.apply(x), b = bank.apply(x3);
  for (std::size_t i = 0; i < a.values.size(); ++i)
    CHECK(b.values[i] == doctest::Approx(3.0 * a.values[i]).epsilon(1e-12));
}

TEST_CASE("griffin-lim distances are non-increasing and improve") {
  StftConfig cfg;
  auto w = sine(440.0, 0.25);
  const auto n2 = sine(1250.0, 0.25, 0.2);
  for (std::size_t i = 0; i < w.samples.size(); ++i) w.samples[i] += n2.samples[i];
  const auto mag = stft_magnitude(w, cfg);
  const auto r = griffin_lim(mag, 32, cfg);
  REQUIRE(r.distances.size() == 32);
  for (std::size_t i = 1; i < r.distances.size(); ++i)
    CHECK(r.distances[i] <= r.distances[i - 1] + 1e-9);
  CHECK(r.distances.back() < r.distances.front());
  CHECK(r.waveform.samples.size() == (mag.frames - 1) * cfg.frame_shift() + cfg.frame_length());
  CHECK_THROWS_AS(griffin_lim(mag, 0, cfg), ValueError);
}

TEST_CASE("griffin-lim of silence is silent") {
  Spectrogram z;
  z.frames = 5;
  z.bins = 513;
  z.values.assign(5 * 513, 0.0);
  const auto r = griffin_lim(z, 4, {});
  for (double v : r.waveform.samples) CHECK(v == 0.0);
}

TEST_CASE("wav round trip and header") {
  const auto dir = oracle::temp_dir("wav");
  const auto w = sine(440.0, 1.0, 0.9);
  write_wav(dir / "a.wav", w);
  const auto back = read_wav(dir / "a.wav");
  REQUIRE(back.samples.size() == w.samples.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    worst = std::max(worst, std::abs(back.samples[i] - w.samples[i]));
  CHECK(worst <= 1.0 / 32768.0);

  const auto bytes = encode_wav(w);
  auto u16 = [&](std::size_t o) { return unsigned(std::uint8_t(bytes[o])) | unsigned(std::uint8_t(bytes[o + 1])) << 8; };
  auto u32 = [&](std::size_t o) { return u16(o) | u16(o + 2) << 16; };
  CHECK(bytes.substr(0, 4) == "RIFF");
  CHECK(bytes.substr(8, 4) == "WAVE");
  CHECK(u16(20) == 1);      // PCM
  CHECK(u16(22) == 1);      // mono
  CHECK(u32(24) == 16000);  // rate
  CHECK(u16(34) == 16);     // bits

  CHECK_THROWS_AS(write_wav(dir / "e.wav", Waveform{}), ValueError);
  CHECK_THROWS_AS(decode_wav(bytes.substr(0, bytes.size() - 10)), FormatError);
  auto stereo = bytes;
  stereo[22] = 2;
  CHECK_THROWS_AS(decode_wav(stereo), FormatError);
  auto float32 = bytes;
  float32[20] = 3;
  CHECK_THROWS_AS(decode_wav(float32), FormatError);
}

TEST_CASE("out-of-range samples are clipped") {
  Waveform w{{0.5, 1.5, -2.0}, 16000};
  const auto back = decode_wav(encode_wav(w));
  CHECK(back.samples[1] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(back.samples[2] == doctest::Approx(-1.0).epsilon(1e-4));
}

TEST_CASE("spectrogram cache round trip") {
  const auto dir = oracle::temp_dir("spec");
  auto s = stft_magnitude(noise(2000, 8), {});
  save_spectrogram(dir / "s.spec", s);
  const auto back = load_spectrogram(dir / "s.spec");
  CHECK(back.frames == s.frames);
  CHECK(back.bins == s.bins);
  CHECK(back.kind == s.kind);
  CHECK(back.values == s.values);
  std::filesystem::resize_file(dir / "s.spec", std::filesystem::file_size(dir / "s.spec") - 4);
  CHECK_THROWS_AS(load_spectrogram(dir / "s.spec"), FormatError);
}
