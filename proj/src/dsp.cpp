#include "padtts/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <complex>
#include <cstring>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

#include <nlohmann/json.hpp>

#include "padtts/errors.hpp"

namespace padtts::dsp {

namespace {

// FFTW planning is not thread-safe; execution with new-array calls is.
class FftPlans {
 public:
  static FftPlans& instance() {
    static FftPlans plans;
    return plans;
  }

  fftw_plan forward(std::size_t n) { return get(n, true); }
  fftw_plan inverse(std::size_t n) { return get(n, false); }

 private:
  fftw_plan get(std::size_t n, bool fwd) {
    std::lock_guard lock(mu_);
    auto& slot = (fwd ? fwd_ : inv_)[n];
    if (!slot) {
      auto* r = fftw_alloc_real(n);
      auto* c = fftw_alloc_complex(n / 2 + 1);
      slot = fwd ? fftw_plan_dft_r2c_1d(static_cast<int>(n), r, c, FFTW_ESTIMATE)
                 : fftw_plan_dft_c2r_1d(static_cast<int>(n), c, r, FFTW_ESTIMATE);
      fftw_free(r);
      fftw_free(c);
    }
    return slot;
  }

  std::mutex mu_;
  std::map<std::size_t, fftw_plan> fwd_, inv_;
};

struct RealBuf {
  explicit RealBuf(std::size_t n) : p(fftw_alloc_real(n)), n(n) {}
  ~RealBuf() { fftw_free(p); }
  RealBuf(const RealBuf&) = delete;
  RealBuf& operator=(const RealBuf&) = delete;
  double* p;
  std::size_t n;
};

struct ComplexBuf {
  explicit ComplexBuf(std::size_t n) : p(fftw_alloc_complex(n)), n(n) {}
  ~ComplexBuf() { fftw_free(p); }
  ComplexBuf(const ComplexBuf&) = delete;
  ComplexBuf& operator=(const ComplexBuf&) = delete;
  fftw_complex* p;
  std::size_t n;
};

using Complex = std::complex<double>;

// Complex STFT, frames x bins.
std::vector<Complex> stft_complex(std::span<const double> x, const StftConfig& cfg,
                                  const std::vector<double>& window, std::size_t frames) {
  const auto n = cfg.fft_size, len = cfg.frame_length(), hop = cfg.frame_shift(),
             bins = cfg.bins();
  std::vector<Complex> out(frames * bins);
  RealBuf in(n);
  ComplexBuf spec(bins);
  auto plan = FftPlans::instance().forward(n);
  for (std::size_t t = 0; t < frames; ++t) {
    std::fill(in.p, in.p + n, 0.0);
    for (std::size_t i = 0; i < len; ++i) in.p[i] = x[t * hop + i] * window[i];
    fftw_execute_dft_r2c(plan, in.p, spec.p);
    for (std::size_t k = 0; k < bins; ++k) out[t * bins + k] = {spec.p[k][0], spec.p[k][1]};
  }
  return out;
}

// Least-squares overlap-add inverse of a complex STFT.
std::vector<double> istft(const std::vector<Complex>& spec, std::size_t frames,
                          const StftConfig& cfg, const std::vector<double>& window) {
  const auto n = cfg.fft_size, len = cfg.frame_length(), hop = cfg.frame_shift(),
             bins = cfg.bins();
  const std::size_t total = (frames - 1) * hop + len;
  std::vector<double> acc(total, 0.0), norm(total, 0.0);
  ComplexBuf in(bins);
  RealBuf out(n);
  auto plan = FftPlans::instance().inverse(n);
  for (std::size_t t = 0; t < frames; ++t) {
    for (std::size_t k = 0; k < bins; ++k) {
      in.p[k][0] = spec[t * bins + k].real();
      in.p[k][1] = spec[t * bins + k].imag();
    }
    fftw_execute_dft_c2r(plan, in.p, out.p);
    for (std::size_t i = 0; i < len; ++i) {
      acc[t * hop + i] += window[i] * out.p[i] / static_cast<double>(n);
      norm[t * hop + i] += window[i] * window[i];
    }
  }
  for (std::size_t i = 0; i < total; ++i) acc[i] = norm[i] > 1e-12 ? acc[i] / norm[i] : 0.0;
  return acc;
}

}  // namespace

void Waveform::validate() const {
  if (sample_rate <= 0) throw ValueError("waveform sample_rate must be positive");
  for (double s : samples)
    if (!std::isfinite(s)) throw ValueError("waveform contains non-finite samples");
}

std::string to_string(SpectrogramKind kind) {
  return kind == SpectrogramKind::mel ? "mel" : "linear";
}

SpectrogramKind spectrogram_kind_from(const std::string& text) {
  if (text == "mel") return SpectrogramKind::mel;
  if (text == "linear") return SpectrogramKind::linear;
  throw FormatError("unknown spectrogram kind '" + text + "'");
}

void Spectrogram::validate() const {
  if (frames < 1 || bins < 1) throw ValueError("spectrogram must have T >= 1 and F >= 1");
  if (values.size() != frames * bins) throw ValueError("spectrogram value count mismatch");
  for (double v : values)
    if (!(v >= 0.0) || !std::isfinite(v))
      throw ValueError("spectrogram values must be finite and non-negative");
}

std::size_t StftConfig::frame_length() const {
  return static_cast<std::size_t>(std::lround(frame_length_s * sample_rate));
}

std::size_t StftConfig::frame_shift() const {
  return static_cast<std::size_t>(std::lround(frame_shift_s * sample_rate));
}

void StftConfig::validate() const {
  if (sample_rate <= 0) throw ConfigError("sample_rate must be positive");
  if (frame_length() == 0 || frame_shift() == 0)
    throw ConfigError("frame length and shift must be at least one sample");
  if (fft_size < frame_length())
    throw ConfigError("fft size " + std::to_string(fft_size) + " is shorter than frame length " +
                      std::to_string(frame_length()));
}

std::vector<double> hann_window(std::size_t length) {
  std::vector<double> w(length);
  for (std::size_t i = 0; i < length; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) /
                                static_cast<double>(length));
  return w;
}

std::size_t frame_count(std::size_t samples, const StftConfig& cfg) {
  const auto len = cfg.frame_length();
  if (samples < len) return 0;
  return (samples - len) / cfg.frame_shift() + 1;
}

Spectrogram stft_magnitude(const Waveform& w, const StftConfig& cfg) {
  cfg.validate();
  if (w.samples.empty()) throw ValueError("stft: empty waveform");
  const auto frames = frame_count(w.samples.size(), cfg);
  if (frames == 0)
    throw ValueError("stft: waveform of " + std::to_string(w.samples.size()) +
                     " samples is shorter than one frame (" +
                     std::to_string(cfg.frame_length()) + ")");
  const auto window = hann_window(cfg.frame_length());
  const auto spec = stft_complex(w.samples, cfg, window, frames);
  Spectrogram s;
  s.frames = frames;
  s.bins = cfg.bins();
  s.kind = SpectrogramKind::linear;
  s.frame_shift_s = cfg.frame_shift_s;
  s.frame_length_s = cfg.frame_length_s;
  s.sample_rate = cfg.sample_rate;
  s.values.resize(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) s.values[i] = std::abs(spec[i]);
  return s;
}

// ---------------------------------------------------------------------------
// Mel

double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

MelBank mel_filterbank(std::size_t linear_bins, std::size_t n_mels, double fmin, double fmax,
                       int sample_rate) {
  if (n_mels < 1) throw ConfigError("mel_filterbank: n_mels must be >= 1");
  if (linear_bins < 2) throw ConfigError("mel_filterbank: need at least 2 linear bins");
  if (!(fmin >= 0.0) || !(fmin < fmax) || fmax > sample_rate / 2.0)
    throw ConfigError("mel_filterbank: require 0 <= fmin < fmax <= sample_rate/2, got fmin=" +
                      std::to_string(fmin) + " fmax=" + std::to_string(fmax));
  const double fft = 2.0 * static_cast<double>(linear_bins - 1);
  const double bin_hz = sample_rate / fft;
  const double mlo = hz_to_mel(fmin), mhi = hz_to_mel(fmax);
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(mlo + (mhi - mlo) * static_cast<double>(i) /
                                   static_cast<double>(n_mels + 1));

  MelBank bank{n_mels, linear_bins, std::vector<double>(n_mels * linear_bins, 0.0)};
  for (std::size_t m = 0; m < n_mels; ++m) {
    const double lo = edges[m], mid = edges[m + 1], hi = edges[m + 2];
    bool any = false;
    for (std::size_t k = 0; k < linear_bins; ++k) {
      const double f = static_cast<double>(k) * bin_hz;
      double v = 0.0;
      if (f > lo && f <= mid) v = (f - lo) / (mid - lo);
      else if (f > mid && f < hi) v = (hi - f) / (hi - mid);
      bank.weights[m * linear_bins + k] = v;
      any = any || v > 0.0;
    }
    // Filters narrower than a bin spacing fall back to the bin nearest their centre.
    if (!any) {
      auto k = static_cast<std::size_t>(std::lround(mid / bin_hz));
      bank.weights[m * linear_bins + std::min(k, linear_bins - 1)] = 1.0;
    }
  }
  return bank;
}

Spectrogram MelBank::apply(const Spectrogram& linear) const {
  if (linear.bins != bins)
    throw ShapeError("mel bank expects " + std::to_string(bins) + " linear bins, got " +
                     std::to_string(linear.bins));
  Spectrogram out = linear;
  out.kind = SpectrogramKind::mel;
  out.bins = n_mels;
  out.values.assign(linear.frames * n_mels, 0.0);
  for (std::size_t t = 0; t < linear.frames; ++t)
    for (std::size_t m = 0; m < n_mels; ++m) {
      double acc = 0.0;
      const double* w = weights.data() + m * bins;
      const double* x = linear.values.data() + t * bins;
      for (std::size_t k = 0; k < bins; ++k) acc += w[k] * x[k];
      out.values[t * n_mels + m] = acc;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Griffin-Lim

GriffinLimResult griffin_lim(const Spectrogram& magnitude, std::size_t iterations,
                             const StftConfig& cfg) {
  if (iterations == 0) throw ValueError("griffin_lim: iterations must be >= 1");
  cfg.validate();
  magnitude.validate();
  if (magnitude.bins != cfg.bins())
    throw ShapeError("griffin_lim: magnitude has " + std::to_string(magnitude.bins) +
                     " bins, config implies " + std::to_string(cfg.bins()));
  const auto frames = magnitude.frames, bins = magnitude.bins;
  const auto window = hann_window(cfg.frame_length());

  // Distances use the two-sided spectrum norm, in which the least-squares
  // inverse is an exact projection and the error sequence is non-increasing.
  auto bin_weight = [bins](std::size_t i) {
    const auto k = i % bins;
    return (k == 0 || k == bins - 1) ? 1.0 : 2.0;
  };
  double mag_norm = 0.0;
  for (std::size_t i = 0; i < magnitude.values.size(); ++i)
    mag_norm += bin_weight(i) * magnitude.values[i] * magnitude.values[i];
  mag_norm = std::sqrt(mag_norm);

  std::vector<Complex> spec(frames * bins);
  for (std::size_t i = 0; i < spec.size(); ++i) spec[i] = magnitude.values[i];

  GriffinLimResult result;
  std::vector<double> signal;
  for (std::size_t it = 0; it < iterations; ++it) {
    signal = istft(spec, frames, cfg, window);
    const auto rebuilt = stft_complex(signal, cfg, window, frames);
    double dist = 0.0;
    for (std::size_t i = 0; i < spec.size(); ++i) {
      const double m = std::abs(rebuilt[i]);
      const double d = m - magnitude.values[i];
      dist += bin_weight(i) * d * d;
      spec[i] = m > 1e-12 ? rebuilt[i] * (magnitude.values[i] / m) : Complex(magnitude.values[i]);
    }
    result.distances.push_back(mag_norm > 0.0 ? std::sqrt(dist) / mag_norm : 0.0);
  }
  result.waveform.samples = std::move(signal);
  result.waveform.sample_rate = cfg.sample_rate;
  return result;
}

// ---------------------------------------------------------------------------
// WAV

namespace {

void put_le(std::string& out, std::uint32_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_le(const std::string& in, std::size_t pos, int bytes) {
  std::uint32_t v = 0;
  for (int i = 0; i < bytes; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  return v;
}

}  // namespace

std::string encode_wav(const Waveform& w) {
  if (w.samples.empty()) throw ValueError("write_wav: empty waveform");
  w.validate();
  std::size_t clipped = 0;
  std::string data;
  data.reserve(w.samples.size() * 2);
  for (double s : w.samples) {
    if (s > 1.0 || s < -1.0) ++clipped;
    const double c = std::clamp(s, -1.0, 1.0);
    const auto q = static_cast<std::int16_t>(std::lround(c * 32767.0));
    put_le(data, static_cast<std::uint16_t>(q), 2);
  }
  if (clipped)
    std::cerr << "warning: write_wav clipped " << clipped << " samples outside [-1, 1]\n";
  std::string out = "RIFF";
  put_le(out, static_cast<std::uint32_t>(36 + data.size()), 4);
  out += "WAVEfmt ";
  put_le(out, 16, 4);
  put_le(out, 1, 2);  // PCM
  put_le(out, 1, 2);  // mono
  put_le(out, static_cast<std::uint32_t>(w.sample_rate), 4);
  put_le(out, static_cast<std::uint32_t>(w.sample_rate) * 2, 4);
  put_le(out, 2, 2);
  put_le(out, 16, 2);
  out += "data";
  put_le(out, static_cast<std::uint32_t>(data.size()), 4);
  out += data;
  return out;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  const auto bytes = encode_wav(w);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

Waveform decode_wav(const std::string& bytes) {
  if (bytes.size() < 12 || bytes.compare(0, 4, "RIFF") != 0 || bytes.compare(8, 4, "WAVE") != 0)
    throw FormatError("not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  Waveform w;
  while (pos + 8 <= bytes.size()) {
    const std::string id = bytes.substr(pos, 4);
    const auto size = get_le(bytes, pos + 4, 4);
    const std::size_t body = pos + 8;
    if (id == "fmt ") {
      if (body + 16 > bytes.size()) throw FormatError("truncated fmt chunk");
      const auto format = get_le(bytes, body, 2);
      const auto channels = get_le(bytes, body + 2, 2);
      const auto bits = get_le(bytes, body + 14, 2);
      if (format != 1 || bits != 16)
        throw FormatError("unsupported encoding: only 16-bit PCM is supported");
      if (channels != 1) throw FormatError("unsupported encoding: only mono is supported");
      w.sample_rate = static_cast<int>(get_le(bytes, body + 4, 4));
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw FormatError("data chunk before fmt chunk");
      if (body + size > bytes.size()) throw FormatError("truncated data chunk");
      const auto n = size / 2;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto raw = static_cast<std::int16_t>(get_le(bytes, body + 2 * i, 2));
        w.samples[i] = static_cast<double>(raw) / 32767.0;
      }
      return w;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError("truncated file: no data chunk");
}

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open wav " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return decode_wav(ss.str());
}

// ---------------------------------------------------------------------------
// Spectrogram cache

void save_spectrogram(const std::filesystem::path& path, const Spectrogram& s) {
  nlohmann::json header = {{"format", "padtts-spectrogram-v1"},
                           {"shape", {s.frames, s.bins}},
                           {"kind", to_string(s.kind)},
                           {"dtype", "float64le"},
                           {"cfg",
                            {{"frame_shift_s", s.frame_shift_s},
                             {"frame_length_s", s.frame_length_s},
                             {"sample_rate", s.sample_rate}}}};
  std::string out = header.dump() + "\n";
  for (double d : s.values) {
    const auto bits = std::bit_cast<std::uint64_t>(d);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path.string());
  os.write(out.data(), static_cast<std::streamsize>(out.size()));
}

Spectrogram load_spectrogram(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw ConfigError("cannot open spectrogram " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  const std::string bytes = ss.str();
  const auto nl = bytes.find('\n');
  if (nl == std::string::npos) throw FormatError("spectrogram header missing");
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(bytes.substr(0, nl));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("spectrogram header: ") + e.what());
  }
  Spectrogram s;
  s.frames = h.at("shape").at(0).get<std::size_t>();
  s.bins = h.at("shape").at(1).get<std::size_t>();
  s.kind = spectrogram_kind_from(h.at("kind").get<std::string>());
  s.frame_shift_s = h.at("cfg").at("frame_shift_s").get<double>();
  s.frame_length_s = h.at("cfg").at("frame_length_s").get<double>();
  s.sample_rate = h.at("cfg").at("sample_rate").get<int>();
  const std::size_t n = s.frames * s.bins;
  if (bytes.size() != nl + 1 + 8 * n) throw FormatError("spectrogram payload truncated");
  s.values.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b)
      bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[nl + 1 + 8 * i + b]))
              << (8 * b);
    s.values[i] = std::bit_cast<double>(bits);
  }
  return s;
}

}  // namespace padtts::dsp
