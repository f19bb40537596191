#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace padtts::dsp {

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration_s() const {
    return static_cast<double>(samples.size()) / static_cast<double>(sample_rate);
  }
  // Throws ValueError when sample_rate <= 0 or a sample is non-finite.
  void validate() const;
};

enum class SpectrogramKind { linear, mel };

std::string to_string(SpectrogramKind kind);
SpectrogramKind spectrogram_kind_from(const std::string& text);

// T x F magnitude grid, row-major by frame.
struct Spectrogram {
  std::size_t frames = 0;
  std::size_t bins = 0;
  std::vector<double> values;
  SpectrogramKind kind = SpectrogramKind::linear;
  double frame_shift_s = 0.0125;
  double frame_length_s = 0.05;
  int sample_rate = 16000;

  double at(std::size_t t, std::size_t f) const { return values[t * bins + f]; }
  double& at(std::size_t t, std::size_t f) { return values[t * bins + f]; }
  std::span<const double> frame(std::size_t t) const {
    return {values.data() + t * bins, bins};
  }
  void validate() const;
};

struct StftConfig {
  double frame_length_s = 0.05;
  double frame_shift_s = 0.0125;
  std::size_t fft_size = 1024;
  int sample_rate = 16000;

  std::size_t frame_length() const;
  std::size_t frame_shift() const;
  std::size_t bins() const { return fft_size / 2 + 1; }
  void validate() const;
};

struct MelConfig {
  std::size_t n_mels = 80;
  double fmin = 0.0;
  double fmax = 8000.0;
};

// Periodic Hann window.
std::vector<double> hann_window(std::size_t length);

std::size_t frame_count(std::size_t samples, const StftConfig& cfg);

// |STFT|; frames fully inside the signal, window zero-padded to fft_size.
Spectrogram stft_magnitude(const Waveform& w, const StftConfig& cfg);

// HTK-scale triangular filters with unit peak, n_mels x bins row-major.
struct MelBank {
  std::size_t n_mels = 0;
  std::size_t bins = 0;
  std::vector<double> weights;

  double at(std::size_t m, std::size_t k) const { return weights[m * bins + k]; }
  Spectrogram apply(const Spectrogram& linear) const;
};

double hz_to_mel(double hz);
double mel_to_hz(double mel);

MelBank mel_filterbank(std::size_t linear_bins, std::size_t n_mels, double fmin, double fmax,
                       int sample_rate);
inline MelBank mel_filterbank(const StftConfig& stft, const MelConfig& mel) {
  return mel_filterbank(stft.bins(), mel.n_mels, mel.fmin, mel.fmax, stft.sample_rate);
}

struct GriffinLimResult {
  Waveform waveform;
  // Relative magnitude distance ||STFT(x_i)| - mag|| / ||mag|| after each iteration.
  std::vector<double> distances;
};

// Zero-phase initialisation, least-squares overlap-add inverse.
GriffinLimResult griffin_lim(const Spectrogram& magnitude, std::size_t iterations,
                             const StftConfig& cfg);

// RIFF PCM16 mono.
void write_wav(const std::filesystem::path& path, const Waveform& w);
std::string encode_wav(const Waveform& w);
Waveform read_wav(const std::filesystem::path& path);
Waveform decode_wav(const std::string& bytes);

// JSON header line followed by little-endian float64 payload.
void save_spectrogram(const std::filesystem::path& path, const Spectrogram& s);
Spectrogram load_spectrogram(const std::filesystem::path& path);

}  // namespace padtts::dsp
