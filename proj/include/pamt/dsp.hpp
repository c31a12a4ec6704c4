#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace pamt {

inline constexpr double kPi = 3.141592653589793238462643383279502884;

// In-place iterative radix-2 FFT. n must be a power of two.
inline void fft(std::vector<std::complex<double>>& a, bool inverse = false) {
  const std::size_t n = a.size();
  if (n == 0 || (n & (n - 1)) != 0)
    throw std::invalid_argument("fft length must be a power of two");
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    std::complex<double> wl(std::cos(ang), std::sin(ang));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<double> w(1.0, 0.0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<double> u = a[i + k];
        std::complex<double> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wl;
      }
    }
  }
  if (inverse)
    for (auto& x : a) x /= static_cast<double>(n);
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

inline std::vector<double> hann_window(std::size_t n) {
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i)
    w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) /
                                static_cast<double>(n));
  return w;
}

// Magnitude spectrum of x zero-padded to a power of two (bins 0..n/2).
inline std::vector<double> magnitude_spectrum(const std::vector<double>& x,
                                              std::size_t min_len = 0) {
  std::size_t n = next_pow2(std::max(x.size(), std::max<std::size_t>(min_len, 2)));
  std::vector<std::complex<double>> a(n);
  for (std::size_t i = 0; i < x.size(); ++i) a[i] = x[i];
  fft(a);
  std::vector<double> mag(n / 2 + 1);
  for (std::size_t i = 0; i <= n / 2; ++i) mag[i] = std::abs(a[i]);
  return mag;
}

// Dominant-frequency estimate in Hz via FFT peak with parabolic interpolation.
inline double dominant_frequency_hz(const std::vector<double>& x, int sample_rate) {
  auto w = hann_window(x.size());
  std::vector<double> xs(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) xs[i] = x[i] * w[i];
  std::size_t n = next_pow2(std::max<std::size_t>(xs.size() * 4, 8));
  auto mag = magnitude_spectrum(xs, n);
  std::size_t peak = 1;
  for (std::size_t i = 1; i + 1 < mag.size(); ++i)
    if (mag[i] > mag[peak]) peak = i;
  double alpha = mag[peak - 1], beta = mag[peak], gamma = mag[peak + 1];
  double denom = alpha - 2.0 * beta + gamma;
  double delta = std::abs(denom) > 1e-30 ? 0.5 * (alpha - gamma) / denom : 0.0;
  delta = std::clamp(delta, -0.5, 0.5);
  std::size_t nfft = 2 * (mag.size() - 1);
  return (static_cast<double>(peak) + delta) * sample_rate /
         static_cast<double>(nfft);
}

// Windowed-sinc resampling: output[i] = x(i * step). step > 1 compresses
// (fewer output samples); the kernel cutoff is lowered for anti-aliasing.
inline std::vector<double> resample_by_step(const std::vector<double>& x,
                                            double step,
                                            std::size_t out_len) {
  const int kHalfWidth = 24;
  const double cutoff = std::min(1.0, 1.0 / step) * 0.97;
  std::vector<double> y(out_len, 0.0);
  const std::ptrdiff_t n = static_cast<std::ptrdiff_t>(x.size());
  for (std::size_t i = 0; i < out_len; ++i) {
    double pos = static_cast<double>(i) * step;
    std::ptrdiff_t center = static_cast<std::ptrdiff_t>(std::floor(pos));
    double acc = 0.0;
    for (std::ptrdiff_t k = center - kHalfWidth + 1; k <= center + kHalfWidth; ++k) {
      if (k < 0 || k >= n) continue;
      double t = pos - static_cast<double>(k);
      double sinc = (std::abs(t) < 1e-12)
                        ? cutoff
                        : std::sin(kPi * cutoff * t) / (kPi * t);
      double u = t / kHalfWidth;  // Hann-windowed kernel
      double win = (std::abs(u) >= 1.0) ? 0.0 : 0.5 + 0.5 * std::cos(kPi * u);
      acc += x[k] * sinc * win;
    }
    y[i] = acc;
  }
  return y;
}

// Phase-vocoder time stretch to an exact target length.
// Analysis/synthesis window 1024, synthesis hop 256, Hann.
inline std::vector<double> phase_vocoder_stretch(const std::vector<double>& x,
                                                 std::size_t target_len) {
  const std::size_t win = 1024, hop = 256;
  if (x.size() < win)
    throw std::invalid_argument("phase vocoder input shorter than one window");
  const double ratio = static_cast<double>(target_len) / x.size();
  const auto w = hann_window(win);
  const std::size_t bins = win / 2 + 1;
  const std::size_t frames =
      target_len > win ? (target_len - win) / hop + 2 : 2;

  std::vector<double> out(target_len + win, 0.0), wsum(target_len + win, 1e-12);
  std::vector<double> prev_phase(bins, 0.0), out_phase(bins, 0.0);

  auto analyze = [&](std::size_t start, std::vector<std::complex<double>>& spec) {
    spec.assign(win, {0.0, 0.0});
    for (std::size_t i = 0; i < win; ++i) {
      double v = (start + i < x.size()) ? x[start + i] : 0.0;
      spec[i] = v * w[i];
    }
    fft(spec);
  };

  std::vector<std::complex<double>> spec, spec_next, syn(win);
  for (std::size_t m = 0; m < frames; ++m) {
    double a_pos = static_cast<double>(m) * hop / ratio;
    std::size_t a0 = static_cast<std::size_t>(a_pos);
    if (a0 + win > x.size()) a0 = x.size() - win;
    analyze(a0, spec);

    if (m == 0) {
      for (std::size_t b = 0; b < bins; ++b) {
        out_phase[b] = std::arg(spec[b]);
        prev_phase[b] = out_phase[b];
      }
    } else {
      // Instantaneous frequency from the analysis hop, re-applied at the
      // synthesis hop.
      std::size_t a_prev = (a0 >= hop) ? a0 - hop : 0;
      analyze(a_prev, spec_next);
      for (std::size_t b = 0; b < bins; ++b) {
        double expected = 2.0 * kPi * static_cast<double>(b) * hop / win;
        double dphi = std::arg(spec[b]) - std::arg(spec_next[b]) - expected;
        dphi -= 2.0 * kPi * std::round(dphi / (2.0 * kPi));
        out_phase[b] += expected + dphi;
      }
    }

    for (std::size_t b = 0; b < bins; ++b) {
      double mag = std::abs(spec[b]);
      syn[b] = std::polar(mag, out_phase[b]);
      if (b > 0 && b < win / 2) syn[win - b] = std::conj(syn[b]);
    }
    fft(syn, true);
    std::size_t s0 = m * hop;
    for (std::size_t i = 0; i < win && s0 + i < out.size(); ++i) {
      out[s0 + i] += syn[i].real() * w[i];
      wsum[s0 + i] += w[i] * w[i];
    }
  }

  std::vector<double> y(target_len);
  for (std::size_t i = 0; i < target_len; ++i) y[i] = out[i] / wsum[i];
  return y;
}

}  // namespace pamt
