#pragma once

// Independent reference implementations used by the test suites. Nothing
// here calls into the library code it is checking.

#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "padtts/tensor.hpp"

namespace oracle {

inline std::vector<double> uniform(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                   double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = u(rng);
  return v;
}

// Values in [-1, 1] kept at least `gap` away from zero (kinks of relu / abs).
inline std::vector<double> away_from_zero(std::size_t n, std::mt19937_64& rng, double gap = 0.05) {
  auto v = uniform(n, rng);
  for (auto& x : v)
    if (std::abs(x) < gap) x = x < 0 ? x - gap : x + gap;
  return v;
}

inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Max relative error between autodiff gradients of `f` and central finite
// differences over every entry of every input.
inline double gradcheck(const std::function<padtts::Tensor(const std::vector<padtts::Tensor>&)>& f,
                        std::vector<padtts::Tensor> inputs, double h = 1e-5) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  f(inputs).backward();
  double worst = 0.0;
  for (auto& t : inputs) {
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + h;
      const double up = f(inputs).item();
      data[i] = keep - h;
      const double down = f(inputs).item();
      data[i] = keep;
      worst = std::max(worst, rel_err(analytic[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

// Plain triple-loop matrix product, row-major.
inline std::vector<double> matmul(const std::vector<double>& a, const std::vector<double>& b,
                                  std::size_t n, std::size_t k, std::size_t m) {
  std::vector<double> c(n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t p = 0; p < k; ++p) c[i * m + j] += a[i * k + p] * b[p * m + j];
  return c;
}

// O(n^2) DFT magnitudes of a real frame, bins 0..n/2.
inline std::vector<double> dft_magnitude(const std::vector<double>& x, std::size_t n) {
  std::vector<double> out(n / 2 + 1);
  const double pi = std::acos(-1.0);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < x.size(); ++t)
      acc += x[t] * std::polar(1.0, -2.0 * pi * double(k) * double(t) / double(n));
    out[k] = std::abs(acc);
  }
  return out;
}

// Eq-level SDR on flat vectors, no clamping.
inline double sdr_db(const std::vector<double>& s, const std::vector<double>& h) {
  long double dot = 0, ns = 0, nh = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    dot += (long double)s[i] * h[i];
    ns += (long double)s[i] * s[i];
    nh += (long double)h[i] * h[i];
  }
  const long double c2 = dot * dot / (ns * nh);
  return static_cast<double>(10.0L * std::log10(c2 / (1.0L - c2)));
}

inline double sd_db(const std::vector<double>& s, const std::vector<double>& h, std::size_t frames,
                    std::size_t bins, double floor = 1e-8) {
  double total = 0.0;
  for (std::size_t t = 0; t < frames; ++t) {
    double acc = 0.0;
    for (std::size_t f = 0; f < bins; ++f) {
      const double a = std::max(std::abs(s[t * bins + f]), floor);
      const double b = std::max(std::abs(h[t * bins + f]), floor);
      const double d = 20.0 * std::log10(a) - 20.0 * std::log10(b);
      acc += d * d;
    }
    total += std::sqrt(acc / double(bins));
  }
  return total / double(frames);
}

// Exhaustive minimum over all monotonic paths from (0,0) to (n-1,m-1) with
// steps (1,0), (0,1), (1,1), by recursive enumeration (no memoisation).
inline double brute_force_dtw(const std::vector<std::vector<double>>& cost) {
  const std::size_t n = cost.size(), m = cost[0].size();
  double best = std::numeric_limits<double>::infinity();
  std::function<void(std::size_t, std::size_t, double)> walk = [&](std::size_t i, std::size_t j,
                                                                   double acc) {
    acc += cost[i][j];
    if (acc >= best) return;
    if (i == n - 1 && j == m - 1) {
      best = acc;
      return;
    }
    if (i + 1 < n && j + 1 < m) walk(i + 1, j + 1, acc);
    if (i + 1 < n) walk(i + 1, j, acc);
    if (j + 1 < m) walk(i, j + 1, acc);
  };
  walk(0, 0, 0.0);
  return best;
}

inline std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("padtts_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace oracle
