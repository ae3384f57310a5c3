#pragma once

// Frame-level signal processing: framing, RMS energy, magnitude spectra and
// the per-frame descriptors (MFCC, F0, spectral slope, spectral flux).

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace deepser {

struct AudioBuffer {
  std::vector<double> samples;
  int sample_rate = 16000;
};

struct FrameSeries {
  std::vector<std::vector<double>> frames;
  std::size_t win_len = 0;
  std::size_t hop_len = 0;
  int sample_rate = 0;

  std::size_t size() const { return frames.size(); }
};

struct Spectrum {
  std::vector<double> magnitudes;
  double bin_hz = 0.0;

  double nyquist() const {
    return magnitudes.empty() ? 0.0 : bin_hz * static_cast<double>(magnitudes.size() - 1);
  }
};

inline std::size_t ms_to_samples(double ms, int sample_rate) {
  return static_cast<std::size_t>(std::lround(ms * sample_rate / 1000.0));
}

inline std::size_t frame_count(std::size_t n, std::size_t win_len, std::size_t hop_len) {
  return n < win_len ? 0 : (n - win_len) / hop_len + 1;
}

/// Split into win_ms windows every hop_ms; trailing partial windows are dropped.
inline FrameSeries frame_signal(const AudioBuffer& audio, double win_ms, double hop_ms) {
  if (!(hop_ms > 0.0) || win_ms < hop_ms)
    throw std::invalid_argument("frame_signal: need win_ms >= hop_ms > 0");
  if (audio.sample_rate <= 0) throw std::invalid_argument("frame_signal: sample_rate must be positive");
  FrameSeries out;
  out.sample_rate = audio.sample_rate;
  out.win_len = ms_to_samples(win_ms, audio.sample_rate);
  out.hop_len = ms_to_samples(hop_ms, audio.sample_rate);
  if (out.win_len == 0 || out.hop_len == 0)
    throw std::invalid_argument("frame_signal: window or hop rounds to zero samples");
  const std::size_t count = frame_count(audio.samples.size(), out.win_len, out.hop_len);
  out.frames.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    const auto first = audio.samples.begin() + static_cast<std::ptrdiff_t>(k * out.hop_len);
    out.frames.emplace_back(first, first + static_cast<std::ptrdiff_t>(out.win_len));
  }
  return out;
}

inline double rms(std::span<const double> frame) {
  if (frame.empty()) throw std::invalid_argument("rms: empty frame");
  double acc = 0.0;
  for (double x : frame) acc += x * x;
  return std::sqrt(acc / static_cast<double>(frame.size()));
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

namespace detail {

// In-place iterative radix-2 Cooley-Tukey; data.size() must be a power of two.
inline void fft(std::vector<std::complex<double>>& data) {
  const std::size_t n = data.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(data[i], data[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double angle = -2.0 * std::numbers::pi / static_cast<double>(len);
    for (std::size_t start = 0; start < n; start += len) {
      for (std::size_t k = 0; k < len / 2; ++k) {
        const std::complex<double> w = std::polar(1.0, angle * static_cast<double>(k));
        const auto u = data[start + k];
        const auto v = data[start + k + len / 2] * w;
        data[start + k] = u + v;
        data[start + k + len / 2] = u - v;
      }
    }
  }
}

}  // namespace detail

/// Symmetric Hann window of length n (a single 1.0 for n == 1).
inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (n < 2) return w;
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n - 1));
  return w;
}

/// Hann-windowed magnitude spectrum, zero-padded to the next power of two.
/// Returns bins 0..nfft/2 inclusive.
inline Spectrum magnitude_spectrum(std::span<const double> frame, int sample_rate) {
  if (frame.empty()) throw std::invalid_argument("magnitude_spectrum: empty frame");
  if (sample_rate <= 0) throw std::invalid_argument("magnitude_spectrum: sample_rate must be positive");
  const std::size_t nfft = std::max<std::size_t>(2, next_pow2(frame.size()));
  const auto window = hann_window(frame.size());
  std::vector<std::complex<double>> buf(nfft);
  for (std::size_t i = 0; i < frame.size(); ++i) buf[i] = frame[i] * window[i];
  detail::fft(buf);
  Spectrum s;
  s.bin_hz = static_cast<double>(sample_rate) / static_cast<double>(nfft);
  s.magnitudes.resize(nfft / 2 + 1);
  for (std::size_t k = 0; k < s.magnitudes.size(); ++k) s.magnitudes[k] = std::abs(buf[k]);
  return s;
}

inline constexpr double kLogFloor = 1e-10;

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

/// Log mel filterbank energies: n_mels triangular filters equally spaced on
/// the mel scale between 20 Hz and Nyquist, applied to the power spectrum.
inline std::vector<double> log_mel_energies(const Spectrum& spectrum, std::size_t n_mels) {
  if (n_mels == 0) throw std::invalid_argument("log_mel_energies: n_mels must be positive");
  const double lo = hz_to_mel(20.0);
  const double hi = hz_to_mel(spectrum.nyquist());
  if (!(hi > lo)) throw std::invalid_argument("log_mel_energies: Nyquist must exceed 20 Hz");
  std::vector<double> edges(n_mels + 2);
  for (std::size_t i = 0; i < edges.size(); ++i)
    edges[i] = mel_to_hz(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n_mels + 1));

  std::vector<double> energies(n_mels, 0.0);
  for (std::size_t k = 0; k < spectrum.magnitudes.size(); ++k) {
    const double f = spectrum.bin_hz * static_cast<double>(k);
    const double power = spectrum.magnitudes[k] * spectrum.magnitudes[k];
    for (std::size_t m = 0; m < n_mels; ++m) {
      const double left = edges[m], centre = edges[m + 1], right = edges[m + 2];
      double weight = 0.0;
      if (f > left && f <= centre) weight = (f - left) / (centre - left);
      else if (f > centre && f < right) weight = (right - f) / (right - centre);
      energies[m] += weight * power;
    }
  }
  for (double& e : energies) e = std::log(std::max(e, kLogFloor));
  return energies;
}

/// Orthonormal DCT-II coefficients 1..n_coeffs (coefficient 0 dropped).
inline std::vector<double> dct2_skip0(std::span<const double> x, std::size_t n_coeffs) {
  const auto m = static_cast<double>(x.size());
  std::vector<double> out(n_coeffs, 0.0);
  for (std::size_t k = 1; k <= n_coeffs; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      acc += x[i] * std::cos(std::numbers::pi * static_cast<double>(k) * (static_cast<double>(i) + 0.5) / m);
    out[k - 1] = std::sqrt(2.0 / m) * acc;
  }
  return out;
}

inline std::vector<double> mfcc(const Spectrum& spectrum, std::size_t n_mels, std::size_t n_coeffs) {
  if (n_coeffs > n_mels) throw std::invalid_argument("mfcc: n_coeffs exceeds n_mels");
  const auto logmel = log_mel_energies(spectrum, n_mels);
  return dct2_skip0(logmel, n_coeffs);
}

struct PitchConfig {
  double fmin = 50.0;
  double fmax = 500.0;
  double voicing_threshold = 0.3;
};

namespace detail {

// Normalized cross-correlation between x[0..n-lag) and x[lag..n); energy[i]
// is the running sum of x^2 over x[0..i).
inline double nccf(std::span<const double> x, std::span<const double> energy, std::size_t lag) {
  const std::size_t n = x.size();
  double cross = 0.0;
  for (std::size_t i = 0; i + lag < n; ++i) cross += x[i] * x[i + lag];
  const double e0 = energy[n - lag];
  const double e1 = energy[n] - energy[lag];
  const double denom = std::sqrt(e0 * e1);
  return denom > 0.0 ? cross / denom : 0.0;
}

}  // namespace detail

/// Autocorrelation pitch estimate in Hz, 0 when unvoiced.
///
/// Candidate lags run from sample_rate/fmax to sample_rate/fmin, capped at half
/// the frame so every candidate period fits twice. The chosen lag is the first
/// local maximum reaching 90% of the best correlation (guards against picking a
/// multiple of the period), refined by parabolic interpolation.
inline double f0_autocorrelation(std::span<const double> frame, int sample_rate, const PitchConfig& cfg = {}) {
  if (!(cfg.fmin > 0.0) || !(cfg.fmin < cfg.fmax) || !(cfg.fmax < sample_rate / 2.0))
    throw std::invalid_argument("f0_autocorrelation: need 0 < fmin < fmax < sample_rate/2");
  const auto lag_min = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(sample_rate / cfg.fmax)));
  const auto lag_max = std::min(static_cast<std::size_t>(std::ceil(sample_rate / cfg.fmin)), frame.size() / 2);
  if (lag_max < lag_min + 1) return 0.0;

  // r[i] holds the correlation at lag_min - 1 + i so that every searched lag has neighbours.
  std::vector<double> energy(frame.size() + 1, 0.0);
  for (std::size_t i = 0; i < frame.size(); ++i) energy[i + 1] = energy[i] + frame[i] * frame[i];
  std::vector<double> r(lag_max - lag_min + 3);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = detail::nccf(frame, energy, lag_min - 1 + i);

  double best = 0.0;
  for (std::size_t i = 1; i + 1 < r.size(); ++i) best = std::max(best, r[i]);
  if (best < cfg.voicing_threshold) return 0.0;

  std::size_t pick = 0;
  for (std::size_t i = 1; i + 1 < r.size(); ++i) {
    if (r[i] >= 0.9 * best && r[i] >= r[i - 1] && r[i] >= r[i + 1]) {
      pick = i;
      break;
    }
  }
  if (pick == 0) return 0.0;

  double offset = 0.0;
  const double curvature = r[pick - 1] - 2.0 * r[pick] + r[pick + 1];
  if (curvature < 0.0) offset = 0.5 * (r[pick - 1] - r[pick + 1]) / curvature;
  const double lag = static_cast<double>(lag_min - 1 + pick) + std::clamp(offset, -0.5, 0.5);
  return static_cast<double>(sample_rate) / lag;
}

/// Least-squares slope (dB per Hz) of the log magnitude over [band_lo, band_hi].
inline double spectral_slope(const Spectrum& spectrum, double band_lo, double band_hi) {
  if (!(band_lo < band_hi) || band_hi > spectrum.nyquist() + 1e-9)
    throw std::invalid_argument("spectral_slope: need band_lo < band_hi <= Nyquist");
  double n = 0.0, sx = 0.0, sy = 0.0;
  std::vector<std::pair<double, double>> points;
  for (std::size_t k = 0; k < spectrum.magnitudes.size(); ++k) {
    const double f = spectrum.bin_hz * static_cast<double>(k);
    if (f < band_lo || f > band_hi) continue;
    const double db = 20.0 * std::log10(spectrum.magnitudes[k] + kLogFloor);
    points.emplace_back(f, db);
    n += 1.0;
    sx += f;
    sy += db;
  }
  if (points.size() < 2) throw std::invalid_argument("spectral_slope: band holds fewer than 2 bins");
  const double mx = sx / n, my = sy / n;
  double sxy = 0.0, sxx = 0.0;
  for (const auto& [f, db] : points) {
    sxy += (f - mx) * (db - my);
    sxx += (f - mx) * (f - mx);
  }
  return sxy / sxx;
}

/// Distance between L2-normalized magnitude vectors; a zero spectrum
/// normalizes to the zero vector. Result lies in [0, 2].
inline double spectral_flux(const Spectrum& current, const Spectrum& previous) {
  if (current.magnitudes.size() != previous.magnitudes.size())
    throw std::invalid_argument("spectral_flux: bin count mismatch");
  auto norm = [](const std::vector<double>& v) {
    double acc = 0.0;
    for (double x : v) acc += x * x;
    return std::sqrt(acc);
  };
  const double nc = norm(current.magnitudes), np = norm(previous.magnitudes);
  double acc = 0.0;
  for (std::size_t k = 0; k < current.magnitudes.size(); ++k) {
    const double a = nc > 0.0 ? current.magnitudes[k] / nc : 0.0;
    const double b = np > 0.0 ? previous.magnitudes[k] / np : 0.0;
    acc += (a - b) * (a - b);
  }
  return std::sqrt(acc);
}

}  // namespace deepser
