#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pamt/audio.hpp"
#include "pamt/dsp.hpp"
#include "pamt/rng.hpp"

namespace pamt {

enum class PerturbationKind : int {
  L2Noise = 0,
  LInfNoise = 1,
  BarkBandNoise = 2,
  PitchShift = 3,
  SpeedChange = 4,
  DynRangeCompression = 5,
};

inline constexpr int kNumPerturbationKinds = 6;
inline constexpr int kParamVectorLength = 10;

inline const char* kind_name(PerturbationKind k) {
  switch (k) {
    case PerturbationKind::L2Noise: return "L2Noise";
    case PerturbationKind::LInfNoise: return "LInfNoise";
    case PerturbationKind::BarkBandNoise: return "BarkBandNoise";
    case PerturbationKind::PitchShift: return "PitchShift";
    case PerturbationKind::SpeedChange: return "SpeedChange";
    case PerturbationKind::DynRangeCompression: return "DynRangeCompression";
  }
  return "?";
}

inline PerturbationKind kind_from_name(const std::string& s) {
  for (int i = 0; i < kNumPerturbationKinds; ++i) {
    auto k = static_cast<PerturbationKind>(i);
    if (s == kind_name(k)) return k;
  }
  throw std::invalid_argument("unknown perturbation kind: " + s);
}

// One perturbation instance. Parameter ranges:
//   L2Noise:   eps_rel in [0.01, 1.0] (noise RMS relative to signal RMS)
//   LInfNoise: eta_rel in [0.001, 0.01] (relative to peak)
//   BarkBandNoise: band_index in {0..23}, scale in [0.1, 0.5]
//   PitchShift: semitones in [-5, 5]
//   SpeedChange: factor in [0.80, 1.20]
//   DynRangeCompression: threshold_dbfs in [-30, -10], ratio in [2, 8]
struct PerturbationSpec {
  PerturbationKind kind = PerturbationKind::L2Noise;
  double eps_rel = 0.1;
  double eta_rel = 0.005;
  int band_index = 0;
  double scale = 0.3;
  double semitones = 0.0;
  double factor = 1.0;
  double threshold_dbfs = -20.0;
  double ratio = 4.0;
  std::uint64_t seed = 0;
};

inline void to_json(nlohmann::json& j, const PerturbationSpec& s) {
  nlohmann::json params;
  switch (s.kind) {
    case PerturbationKind::L2Noise: params["eps_rel"] = s.eps_rel; break;
    case PerturbationKind::LInfNoise: params["eta_rel"] = s.eta_rel; break;
    case PerturbationKind::BarkBandNoise:
      params["band_index"] = s.band_index;
      params["scale"] = s.scale;
      break;
    case PerturbationKind::PitchShift: params["semitones"] = s.semitones; break;
    case PerturbationKind::SpeedChange: params["factor"] = s.factor; break;
    case PerturbationKind::DynRangeCompression:
      params["threshold_dbfs"] = s.threshold_dbfs;
      params["ratio"] = s.ratio;
      break;
  }
  j = nlohmann::json{{"kind", kind_name(s.kind)}, {"params", params},
                     {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, PerturbationSpec& s) {
  s = PerturbationSpec{};
  s.kind = kind_from_name(j.at("kind").get<std::string>());
  s.seed = j.at("seed").get<std::uint64_t>();
  const auto& p = j.at("params");
  switch (s.kind) {
    case PerturbationKind::L2Noise: s.eps_rel = p.at("eps_rel"); break;
    case PerturbationKind::LInfNoise: s.eta_rel = p.at("eta_rel"); break;
    case PerturbationKind::BarkBandNoise:
      s.band_index = p.at("band_index");
      s.scale = p.at("scale");
      break;
    case PerturbationKind::PitchShift: s.semitones = p.at("semitones"); break;
    case PerturbationKind::SpeedChange: s.factor = p.at("factor"); break;
    case PerturbationKind::DynRangeCompression:
      s.threshold_dbfs = p.at("threshold_dbfs");
      s.ratio = p.at("ratio");
      break;
  }
}

inline PerturbationSpec sample_spec(std::uint64_t seed,
                                    int fixed_kind = -1) {
  Rng rng = Rng::keyed(seed, 0x70657274);
  PerturbationSpec s;
  s.seed = rng.next_u64();
  int k = fixed_kind >= 0 ? fixed_kind
                          : static_cast<int>(rng.next_below(kNumPerturbationKinds));
  s.kind = static_cast<PerturbationKind>(k);
  switch (s.kind) {
    case PerturbationKind::L2Noise: s.eps_rel = rng.uniform(0.01, 1.0); break;
    case PerturbationKind::LInfNoise: s.eta_rel = rng.uniform(0.001, 0.01); break;
    case PerturbationKind::BarkBandNoise:
      s.band_index = static_cast<int>(rng.next_below(24));
      s.scale = rng.uniform(0.1, 0.5);
      break;
    case PerturbationKind::PitchShift: s.semitones = rng.uniform(-5.0, 5.0); break;
    case PerturbationKind::SpeedChange: s.factor = rng.uniform(0.80, 1.20); break;
    case PerturbationKind::DynRangeCompression:
      s.threshold_dbfs = rng.uniform(-30.0, -10.0);
      s.ratio = rng.uniform(2.0, 8.0);
      break;
  }
  return s;
}

// One-hot kind [6] followed by the kind's parameters mapped affinely from
// their ranges to [0,1]; unused slots zero. The all-zero vector is reserved
// as the NULL conditioning input.
inline std::array<double, kParamVectorLength> vectorize(
    const PerturbationSpec& s) {
  std::array<double, kParamVectorLength> v{};
  v[static_cast<int>(s.kind)] = 1.0;
  double* p = v.data() + kNumPerturbationKinds;
  switch (s.kind) {
    case PerturbationKind::L2Noise: p[0] = (s.eps_rel - 0.01) / 0.99; break;
    case PerturbationKind::LInfNoise: p[0] = (s.eta_rel - 0.001) / 0.009; break;
    case PerturbationKind::BarkBandNoise:
      p[0] = s.band_index / 23.0;
      p[1] = (s.scale - 0.1) / 0.4;
      break;
    case PerturbationKind::PitchShift: p[0] = (s.semitones + 5.0) / 10.0; break;
    case PerturbationKind::SpeedChange: p[0] = (s.factor - 0.80) / 0.40; break;
    case PerturbationKind::DynRangeCompression:
      p[0] = (s.threshold_dbfs + 30.0) / 20.0;
      p[1] = (s.ratio - 2.0) / 6.0;
      break;
  }
  return v;
}

// Zwicker critical bands. Band 0 is (20, 100) Hz. Bands whose table edges
// exceed Nyquist are re-spaced geometrically between the last in-range edge
// and sr/2 so that 24 strictly increasing bands always come back.
inline std::vector<std::pair<double, double>> bark_band_edges(int sample_rate_hz) {
  if (sample_rate_hz < 16000)
    throw std::invalid_argument("bark_band_edges requires sr >= 16000");
  static const double kEdges[25] = {20,   100,  200,  300,  400,  510,  630,
                                    770,  920,  1080, 1270, 1480, 1720, 2000,
                                    2320, 2700, 3150, 3700, 4400, 5300, 6400,
                                    7700, 9500, 12000, 15500};
  const double nyq = sample_rate_hz / 2.0;
  std::array<double, 25> e{};
  int last_ok = 0;
  for (int i = 0; i < 25; ++i) {
    e[i] = kEdges[i];
    if (kEdges[i] < nyq) last_ok = i;
  }
  if (kEdges[24] >= nyq) {
    int tail = 24 - last_ok;
    double lo = e[last_ok];
    for (int t = 1; t <= tail; ++t)
      e[last_ok + t] = lo * std::pow(nyq / lo, static_cast<double>(t) / tail);
  }
  std::vector<std::pair<double, double>> bands(24);
  for (int i = 0; i < 24; ++i) bands[i] = {e[i], e[i + 1]};
  return bands;
}

namespace detail {

// Exact-length DFT coefficients on the bin range [k_lo, k_hi].
inline std::vector<std::complex<double>> dft_bins(const std::vector<double>& x,
                                                  std::size_t k_lo,
                                                  std::size_t k_hi) {
  const std::size_t n = x.size();
  std::vector<std::complex<double>> out;
  out.reserve(k_hi - k_lo + 1);
  for (std::size_t k = k_lo; k <= k_hi; ++k) {
    double ang = -2.0 * kPi * static_cast<double>(k) / static_cast<double>(n);
    std::complex<double> rot(std::cos(ang), std::sin(ang)), w(1.0, 0.0);
    std::complex<double> acc(0.0, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
      acc += x[t] * w;
      w *= rot;
    }
    out.push_back(acc);
  }
  return out;
}

// Bin indices (positive frequencies, excluding DC and k = n/2) covered by a
// frequency band for an exact-length DFT.
inline std::pair<std::size_t, std::size_t> band_bins(std::size_t n, int sr,
                                                     double lo_hz, double hi_hz) {
  std::size_t k_lo = static_cast<std::size_t>(std::ceil(lo_hz * n / sr));
  std::size_t k_hi = static_cast<std::size_t>(std::floor(hi_hz * n / sr));
  k_lo = std::max<std::size_t>(k_lo, 1);
  if (k_hi >= n / 2) k_hi = n / 2 - 1;
  return {k_lo, k_hi};
}

// Time-domain signal energy attributable to the band (Parseval).
inline double band_energy(const std::vector<double>& x, int sr, double lo_hz,
                          double hi_hz) {
  auto [k_lo, k_hi] = band_bins(x.size(), sr, lo_hz, hi_hz);
  if (k_hi < k_lo) return 0.0;
  auto bins = dft_bins(x, k_lo, k_hi);
  double e = 0.0;
  for (const auto& b : bins) e += std::norm(b);
  return 2.0 * e / static_cast<double>(x.size());
}

inline std::vector<double> apply_l2_noise(const std::vector<double>& x,
                                          const PerturbationSpec& s) {
  Rng rng = Rng::keyed(s.seed, 0x6c32);
  std::vector<double> noise(x.size());
  double nsq = 0.0, xsq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    noise[i] = rng.normal();
    nsq += noise[i] * noise[i];
    xsq += x[i] * x[i];
  }
  // Budget: ||delta||_2 = eps_rel * RMS(x) * sqrt(len), length-invariant.
  double budget = s.eps_rel * std::sqrt(xsq);
  double g = nsq > 0 ? budget / std::sqrt(nsq) : 0.0;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + g * noise[i];
  return y;
}

inline std::vector<double> apply_linf_noise(const std::vector<double>& x,
                                            const PerturbationSpec& s) {
  Rng rng = Rng::keyed(s.seed, 0x6c696e66);
  double peak = 0.0;
  for (double v : x) peak = std::max(peak, std::abs(v));
  double eta = s.eta_rel * peak;
  std::vector<double> y(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] + rng.uniform(-eta, eta);
  return y;
}

// Band-limited noise synthesized as a sum of exact DFT-bin cosines, so in the
// length-n DFT sense the added energy is confined to the band and scaled to
// exactly `scale` times the original in-band energy.
inline std::vector<double> apply_bark_noise(const std::vector<double>& x, int sr,
                                            const PerturbationSpec& s) {
  auto bands = bark_band_edges(sr);
  auto [lo, hi] = bands[static_cast<std::size_t>(s.band_index)];
  auto [k_lo, k_hi] = band_bins(x.size(), sr, lo, hi);
  if (k_hi < k_lo) return x;
  double e_band = band_energy(x, sr, lo, hi);
  const std::size_t nbins = k_hi - k_lo + 1;
  const std::size_t n = x.size();
  // Per-bin cosine amplitude a: total energy = n * nbins * a^2 / 2.
  double a = std::sqrt(2.0 * s.scale * e_band /
                       (static_cast<double>(n) * static_cast<double>(nbins)));
  Rng rng = Rng::keyed(s.seed, 0x6261726b);
  std::vector<double> phase(nbins);
  for (auto& p : phase) p = rng.uniform(0.0, 2.0 * kPi);
  std::vector<double> y = x;
  for (std::size_t bi = 0; bi < nbins; ++bi) {
    double w = 2.0 * kPi * static_cast<double>(k_lo + bi) / static_cast<double>(n);
    double c = std::cos(w), sn = std::sin(w);
    double cr = std::cos(phase[bi]), ci = std::sin(phase[bi]);
    for (std::size_t t = 0; t < n; ++t) {
      y[t] += a * cr;
      double nr = cr * c - ci * sn;  // rotate phase by w
      ci = cr * sn + ci * c;
      cr = nr;
    }
  }
  return y;
}

inline std::vector<double> apply_pitch_shift(const std::vector<double>& x,
                                             const PerturbationSpec& s) {
  double r = std::pow(2.0, s.semitones / 12.0);
  if (std::abs(r - 1.0) < 1e-9) {
    // Still run the vocoder so n = 0 matches the quality of nearby shifts.
    return phase_vocoder_stretch(x, x.size());
  }
  std::size_t mid_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(x.size()) / r));
  auto shifted = resample_by_step(x, r, mid_len);
  return phase_vocoder_stretch(shifted, x.size());
}

inline std::vector<double> apply_speed_change(const std::vector<double>& x,
                                              const PerturbationSpec& s) {
  std::size_t out_len = static_cast<std::size_t>(
      std::llround(static_cast<double>(x.size()) / s.factor));
  return resample_by_step(x, s.factor, out_len);
}

// Feed-forward compressor: RMS detector (5 ms attack, 50 ms release),
// hard knee, no makeup gain. Levels are RMS dBFS.
inline std::vector<double> apply_drc(const std::vector<double>& x, int sr,
                                     const PerturbationSpec& s) {
  // Mean-square detector with a single averaging pole: a linear smoother
  // preserves the mean of x^2, so a steady tone reads its true RMS and the
  // static curve holds exactly in steady state. Attack/release ballistics
  // are applied to the gain (attack when reduction deepens).
  const double a_env = std::exp(-1.0 / (0.005 * sr));
  const double a_att = std::exp(-1.0 / (0.005 * sr));
  const double a_rel = std::exp(-1.0 / (0.050 * sr));
  double env = 0.0, gain_db = 0.0;
  std::vector<double> y(x.size());
  for (std::size_t t = 0; t < x.size(); ++t) {
    env = a_env * env + (1.0 - a_env) * x[t] * x[t];
    double level_db = 10.0 * std::log10(env + 1e-12);
    double target_db = 0.0;
    if (level_db > s.threshold_dbfs) {
      double out_db =
          s.threshold_dbfs + (level_db - s.threshold_dbfs) / s.ratio;
      target_db = out_db - level_db;
    }
    double a = target_db < gain_db ? a_att : a_rel;
    gain_db = a * gain_db + (1.0 - a) * target_db;
    y[t] = x[t] * std::pow(10.0, gain_db / 20.0);
  }
  return y;
}

}  // namespace detail

// Perturbation before the [-1, 1] clipping stage; budget post-conditions
// hold exactly on this output.
inline AudioClip apply_unclipped(const PerturbationSpec& s, const AudioClip& clip) {
  if (clip.size() < 2048)
    throw std::invalid_argument("clip too short to perturb (< 2048 samples)");
  AudioClip out;
  out.sample_rate_hz = clip.sample_rate_hz;
  switch (s.kind) {
    case PerturbationKind::L2Noise:
      out.samples = detail::apply_l2_noise(clip.samples, s);
      break;
    case PerturbationKind::LInfNoise:
      out.samples = detail::apply_linf_noise(clip.samples, s);
      break;
    case PerturbationKind::BarkBandNoise:
      out.samples = detail::apply_bark_noise(clip.samples, clip.sample_rate_hz, s);
      break;
    case PerturbationKind::PitchShift:
      out.samples = detail::apply_pitch_shift(clip.samples, s);
      break;
    case PerturbationKind::SpeedChange:
      out.samples = detail::apply_speed_change(clip.samples, s);
      break;
    case PerturbationKind::DynRangeCompression:
      out.samples = detail::apply_drc(clip.samples, clip.sample_rate_hz, s);
      break;
  }
  return out;
}

inline AudioClip apply(const PerturbationSpec& s, const AudioClip& clip) {
  AudioClip out = apply_unclipped(s, clip);
  out.clamp();
  return out;
}

}  // namespace pamt
