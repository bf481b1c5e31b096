// pse/dsp.hpp
//
// Copyright 2026  The pse-toolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Small DSP kernels shared by the metrics, synthesis and embedding code:
// radix-2 FFT, Hann windows, short-time power spectra, autocorrelation
// pitch estimation and fixed 8-band spectral envelopes.

#ifndef PSE_DSP_HPP_
#define PSE_DSP_HPP_

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <vector>

#include "pse/error.hpp"

namespace pse {

constexpr double kPi = 3.14159265358979323846;

// In-place iterative radix-2 FFT. Size must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>> &a) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw ArgumentError("fft size must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = -2.0 * kPi / static_cast<double>(len);
    const std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> u = a[i + k];
        const std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
}

// Hann window as numpy's hanning(n + 2)[1:-1]: no zero endpoints.
inline std::vector<double> hann_inner(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i + 1) /
                                 static_cast<double>(n + 1)));
  return w;
}

// Periodic Hann window.
inline std::vector<double> hann_periodic(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 * (1.0 - std::cos(2.0 * kPi * static_cast<double>(i) /
                                 static_cast<double>(n)));
  return w;
}

// One-sided power spectra of windowed frames, zero-padded to nfft.
// Returns frames x (nfft/2 + 1).
inline std::vector<std::vector<double>> stft_power(
    const std::vector<double> &x, std::size_t frame_len, std::size_t hop,
    std::size_t nfft, const std::vector<double> &window) {
  std::vector<std::vector<double>> out;
  if (x.size() < frame_len) return out;
  const std::size_t n_frames = 1 + (x.size() - frame_len) / hop;
  out.reserve(n_frames);
  std::vector<std::complex<double>> buf(nfft);
  for (std::size_t f = 0; f < n_frames; ++f) {
    for (std::size_t i = 0; i < nfft; ++i) buf[i] = 0.0;
    for (std::size_t i = 0; i < frame_len; ++i)
      buf[i] = x[f * hop + i] * window[i];
    fft_radix2(buf);
    std::vector<double> row(nfft / 2 + 1);
    for (std::size_t k = 0; k <= nfft / 2; ++k) row[k] = std::norm(buf[k]);
    out.push_back(std::move(row));
  }
  return out;
}

struct PitchEstimate {
  double f0_hz = 0.0;          // mean over voiced frames; 0 when unvoiced
  double voiced_fraction = 0.0;
};

// Mean fundamental frequency by frame-wise normalized autocorrelation.
// Frames of 40 ms / hop 20 ms; a frame is voiced when its autocorrelation
// peak in the candidate lag range exceeds 0.5 and it is not near-silent.
inline PitchEstimate estimate_f0(const std::vector<double> &x, int fs,
                                 double fmin = 70.0, double fmax = 320.0) {
  PitchEstimate est;
  const std::size_t frame = static_cast<std::size_t>(0.04 * fs);
  const std::size_t hop = frame / 2;
  if (x.size() < frame) return est;
  const std::size_t lag_min = static_cast<std::size_t>(fs / fmax);
  const std::size_t lag_max = static_cast<std::size_t>(fs / fmin);
  if (lag_max + 1 >= frame) return est;

  double global_ms = 0.0;
  for (double v : x) global_ms += v * v;
  global_ms /= static_cast<double>(x.size());
  const double silence_gate = std::max(1e-8, 0.01 * global_ms);

  double f0_sum = 0.0;
  std::size_t voiced = 0, total = 0;
  const std::size_t n_frames = 1 + (x.size() - frame) / hop;
  for (std::size_t f = 0; f < n_frames; ++f) {
    const double *p = x.data() + f * hop;
    double e0 = 0.0;
    for (std::size_t t = 0; t < frame; ++t) e0 += p[t] * p[t];
    ++total;
    if (e0 / frame < silence_gate) continue;

    std::vector<double> rs(lag_max + 2, 0.0);
    double r_max = 0.0;
    for (std::size_t lag = lag_min; lag <= lag_max + 1; ++lag) {
      double num = 0.0, den_a = 0.0, den_b = 0.0;
      const std::size_t n = frame - lag;
      for (std::size_t t = 0; t < n; ++t) {
        num += p[t] * p[t + lag];
        den_a += p[t] * p[t];
        den_b += p[t + lag] * p[t + lag];
      }
      const double den = std::sqrt(den_a * den_b);
      rs[lag] = (den > 0.0) ? num / den : 0.0;
      if (lag <= lag_max) r_max = std::max(r_max, rs[lag]);
    }
    if (r_max < 0.5) continue;
    // Smallest strong local peak defeats octave (subharmonic) errors.
    std::size_t best_lag = 0;
    for (std::size_t lag = lag_min + 1; lag <= lag_max; ++lag) {
      if (rs[lag] >= rs[lag - 1] && rs[lag] >= rs[lag + 1] &&
          rs[lag] >= 0.9 * r_max) {
        best_lag = lag;
        break;
      }
    }
    if (best_lag == 0) continue;

    // Parabolic refinement around the peak lag.
    double lag_ref = static_cast<double>(best_lag);
    if (best_lag > lag_min && best_lag < lag_max) {
      const double ym = rs[best_lag - 1], y0 = rs[best_lag], yp = rs[best_lag + 1];
      const double denom = ym - 2.0 * y0 + yp;
      if (std::abs(denom) > 1e-12) lag_ref += 0.5 * (ym - yp) / denom;
    }
    f0_sum += static_cast<double>(fs) / lag_ref;
    ++voiced;
  }
  if (voiced > 0) {
    est.f0_hz = f0_sum / static_cast<double>(voiced);
    est.voiced_fraction = static_cast<double>(voiced) / static_cast<double>(total);
  }
  return est;
}

// The fixed 8-band layout used by the toy synthesizer and the fallback
// speaker embedding: log-spaced edges from 100 Hz to 7600 Hz.
inline std::array<double, 9> envelope_band_edges() {
  std::array<double, 9> edges;
  for (int i = 0; i <= 8; ++i)
    edges[i] = 100.0 * std::pow(76.0, static_cast<double>(i) / 8.0);
  return edges;
}

// Mean spectral power per envelope band (Welch average, 512/256 Hann).
inline std::array<double, 8> band_powers(const std::vector<double> &x, int fs) {
  std::array<double, 8> bands{};
  bands.fill(0.0);
  const std::size_t nfft = 512;
  if (x.size() < nfft) return bands;
  static const std::vector<double> win = hann_periodic(nfft);
  const auto frames = stft_power(x, nfft, nfft / 2, nfft, win);
  if (frames.empty()) return bands;
  const auto edges = envelope_band_edges();
  std::array<int, 8> bin_count{};
  const double bin_hz = static_cast<double>(fs) / nfft;
  std::vector<double> mean_spec(nfft / 2 + 1, 0.0);
  for (const auto &row : frames)
    for (std::size_t k = 0; k < row.size(); ++k) mean_spec[k] += row[k];
  for (double &v : mean_spec) v /= static_cast<double>(frames.size());
  for (std::size_t k = 1; k < mean_spec.size(); ++k) {
    const double f = k * bin_hz;
    for (int b = 0; b < 8; ++b) {
      if (f >= edges[b] && f < edges[b + 1]) {
        bands[b] += mean_spec[k];
        bin_count[b] += 1;
        break;
      }
    }
  }
  for (int b = 0; b < 8; ++b)
    if (bin_count[b] > 0) bands[b] /= bin_count[b];
  return bands;
}

// Syllabic-rate estimate: dominant periodicity of the 5 ms RMS envelope,
// found by normalized autocorrelation over lags of 125-500 ms. Used to
// derive rate_units_per_sec.
inline double estimate_unit_rate(const std::vector<double> &x, int fs) {
  const std::size_t hop = static_cast<std::size_t>(0.005 * fs);
  if (hop == 0 || x.size() < 8 * hop) return 0.0;
  std::vector<double> env;
  for (std::size_t off = 0; off + hop <= x.size(); off += hop) {
    double e = 0.0;
    for (std::size_t t = 0; t < hop; ++t) e += x[off + t] * x[off + t];
    env.push_back(std::sqrt(e / hop));
  }
  double mu = 0.0;
  for (double v : env) mu += v;
  mu /= static_cast<double>(env.size());
  for (double &v : env) v -= mu;

  const double frame_sec = 0.005;
  const std::size_t lag_min = static_cast<std::size_t>(0.125 / frame_sec);
  const std::size_t lag_max = static_cast<std::size_t>(0.5 / frame_sec);
  if (env.size() < lag_max + 8) return 0.0;
  std::vector<double> rs(lag_max + 2, 0.0);
  double r_max = 0.0;
  for (std::size_t lag = lag_min; lag <= lag_max + 1; ++lag) {
    double num = 0.0, da = 0.0, db = 0.0;
    const std::size_t n = env.size() - lag;
    for (std::size_t t = 0; t < n; ++t) {
      num += env[t] * env[t + lag];
      da += env[t] * env[t];
      db += env[t + lag] * env[t + lag];
    }
    const double den = std::sqrt(da * db);
    rs[lag] = den > 0.0 ? num / den : 0.0;
    if (lag <= lag_max) r_max = std::max(r_max, rs[lag]);
  }
  if (r_max < 0.2) return 0.0;
  // First strong local peak, so the unit period wins over its multiples.
  for (std::size_t lag = lag_min + 1; lag <= lag_max; ++lag) {
    if (rs[lag] >= rs[lag - 1] && rs[lag] >= rs[lag + 1] &&
        rs[lag] >= 0.8 * r_max)
      return 1.0 / (static_cast<double>(lag) * frame_sec);
  }
  return 0.0;
}

}  // namespace pse

#endif  // PSE_DSP_HPP_
