#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <complex>
#include <vector>

#include "pamt/audio.hpp"
#include "pamt/dsp.hpp"
#include "pamt/perturb.hpp"

using namespace pamt;

namespace {

AudioClip test_clip(std::uint64_t seed) {
  // two partials plus a little noise so every band has some energy
  AudioClip c = synth_tone(330.0, 2.0, 0.3, 16000);
  AudioClip d = synth_tone(1250.0, 2.0, 0.15, 16000);
  Rng rng = Rng::keyed(seed, 0xC11);
  for (std::size_t i = 0; i < c.samples.size(); ++i)
    c.samples[i] += d.samples[i] + 1e-3 * rng.normal();
  return c;
}

// brute-force band energy via full-length DFT (independent of the
// implementation's helpers)
double band_energy_oracle(const std::vector<double>& x, int sr, double lo,
                          double hi) {
  std::size_t n = x.size();
  double total = 0.0;
  // O(n) per bin; restrict to bins inside the band
  std::size_t k_lo = static_cast<std::size_t>(std::ceil(lo * n / sr));
  std::size_t k_hi = static_cast<std::size_t>(std::floor(hi * n / sr));
  for (std::size_t k = k_lo; k <= k_hi && k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
      double ang = -2.0 * kPi * static_cast<double>(k) * static_cast<double>(t) /
                   static_cast<double>(n);
      acc += x[t] * std::complex<double>(std::cos(ang), std::sin(ang));
    }
    double w = (k == 0 || k == n / 2) ? 1.0 : 2.0;
    total += w * std::norm(acc) / static_cast<double>(n);
  }
  return total;
}

}  // namespace

TEST_CASE("sample_spec ranges and determinism") {
  Rng rng = Rng::keyed(3, 0);
  double mn = 1e9, mx = -1e9, mean = 0.0;
  for (int i = 0; i < 10000; ++i) {
    auto s = sample_spec(rng.next_u64(), static_cast<int>(PerturbationKind::PitchShift));
    REQUIRE(s.kind == PerturbationKind::PitchShift);
    mn = std::min(mn, s.semitones);
    mx = std::max(mx, s.semitones);
    mean += s.semitones / 10000.0;
  }
  CHECK(mn >= -5.0);
  CHECK(mx <= 5.0);
  CHECK(std::abs(mean) < 0.1);

  Rng rng2 = Rng::keyed(4, 0);
  for (int i = 0; i < 10000; ++i) {
    auto s = sample_spec(rng2.next_u64(),
                         static_cast<int>(PerturbationKind::DynRangeCompression));
    REQUIRE(s.ratio >= 2.0);
    REQUIRE(s.ratio <= 8.0);
    REQUIRE(s.threshold_dbfs >= -30.0);
    REQUIRE(s.threshold_dbfs <= -10.0);
  }

  auto a = sample_spec(42);
  auto b = sample_spec(42);
  CHECK(a.kind == b.kind);
  CHECK(nlohmann::json(a) == nlohmann::json(b));
}

TEST_CASE("spec JSON round trip") {
  Rng rng = Rng::keyed(9, 1);
  for (int i = 0; i < 50; ++i) {
    auto s = sample_spec(rng.next_u64());
    nlohmann::json j = s;
    auto back = j.get<PerturbationSpec>();
    CHECK(nlohmann::json(back) == j);
  }
}

TEST_CASE("vectorize layout") {
  PerturbationSpec s;
  s.kind = PerturbationKind::PitchShift;
  s.semitones = -5.0;
  auto v = vectorize(s);
  REQUIRE(v.size() == 10);
  CHECK(v[3] == 1.0);
  CHECK(v[0] + v[1] + v[2] + v[4] + v[5] == 0.0);
  CHECK(v[6] == 0.0);

  s.semitones = 0.0;
  CHECK(vectorize(s)[6] == 0.5);

  PerturbationSpec d;
  d.kind = PerturbationKind::DynRangeCompression;
  d.threshold_dbfs = -10.0;
  d.ratio = 8.0;
  auto vd = vectorize(d);
  CHECK(vd[5] == 1.0);
  CHECK(vd[6] == 1.0);
  CHECK(vd[7] == 1.0);
  CHECK(vd[8] == 0.0);
  CHECK(vd[9] == 0.0);
}

TEST_CASE("bark band edges") {
  auto bands = bark_band_edges(16000);
  REQUIRE(bands.size() == 24);
  CHECK(bands[0].first == 20.0);
  CHECK(bands[0].second == 100.0);
  double prev = 0.0;
  for (auto [lo, hi] : bands) {
    CHECK(lo >= prev);
    CHECK(hi > lo);
    prev = hi;
  }
  CHECK(bands.back().second <= 8000.0);

  auto wide = bark_band_edges(48000);
  CHECK(wide.back().second <= 24000.0);
  CHECK(wide[0].first == 20.0);
}

TEST_CASE("apply rejects short clips") {
  AudioClip c;
  c.sample_rate_hz = 16000;
  c.samples.assign(1000, 0.1);
  CHECK_THROWS(apply(sample_spec(1), c));
}

TEST_CASE("L2 noise budget is exact") {
  AudioClip c = test_clip(1);
  PerturbationSpec s;
  s.kind = PerturbationKind::L2Noise;
  s.eps_rel = 0.1;
  s.seed = 77;
  AudioClip out = apply_unclipped(s, c);
  double d2 = 0.0, x2 = 0.0;
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    double d = out.samples[i] - c.samples[i];
    d2 += d * d;
    x2 += c.samples[i] * c.samples[i];
  }
  double budget = std::sqrt(d2) / (c.rms() * std::sqrt(double(c.samples.size())));
  CHECK(std::abs(budget - 0.1) < 1e-6);
  (void)x2;
}

TEST_CASE("pitch shift moves the FFT peak by the expected ratio") {
  AudioClip c = synth_tone(440.0, 2.0, 0.5, 16000);
  for (double n : {0.0, 12.0 / 2.0, 12.0}) {
    PerturbationSpec s;
    s.kind = PerturbationKind::PitchShift;
    s.semitones = n;
    s.seed = 5;
    AudioClip out = apply(s, c);
    // duration preserved within 1%
    CHECK(std::abs(double(out.samples.size()) - double(c.samples.size())) <=
          0.01 * double(c.samples.size()));
    double expect = 440.0 * std::pow(2.0, n / 12.0);
    double peak = dominant_frequency_hz(out.samples, 16000);
    double tol = (n == 0.0) ? 2.0 : 4.0;
    INFO("n=" << n << " peak=" << peak);
    CHECK(std::abs(peak - expect) <= tol);
  }
}

TEST_CASE("speed change length contract") {
  AudioClip c = test_clip(2);
  for (double f : {0.80, 0.95, 1.20}) {
    PerturbationSpec s;
    s.kind = PerturbationKind::SpeedChange;
    s.factor = f;
    AudioClip out = apply(s, c);
    double expect = std::round(double(c.samples.size()) / f);
    CHECK(std::abs(double(out.samples.size()) - expect) <= 1.0);
  }
}

TEST_CASE("DRC static curve on steady tones") {
  // -8 dBFS RMS tone through T=-20, ratio 4 -> -17 dBFS RMS
  double amp = std::pow(10.0, -8.0 / 20.0) * std::sqrt(2.0);
  AudioClip c = synth_tone(440.0, 2.0, amp, 16000);
  PerturbationSpec s;
  s.kind = PerturbationKind::DynRangeCompression;
  s.threshold_dbfs = -20.0;
  s.ratio = 4.0;
  AudioClip out = apply(s, c);
  // skip the attack transient when measuring
  double e = 0.0;
  std::size_t skip = 4000;
  for (std::size_t i = skip; i < out.samples.size(); ++i)
    e += out.samples[i] * out.samples[i];
  double level = 10.0 * std::log10(e / double(out.samples.size() - skip));
  CHECK(std::abs(level - (-17.0)) < 0.5);

  // below threshold: unchanged
  double amp2 = std::pow(10.0, -40.0 / 20.0) * std::sqrt(2.0);
  AudioClip q = synth_tone(440.0, 2.0, amp2, 16000);
  AudioClip qo = apply(s, q);
  double e2 = 0.0, r2 = 0.0;
  for (std::size_t i = skip; i < q.samples.size(); ++i) {
    e2 += qo.samples[i] * qo.samples[i];
    r2 += q.samples[i] * q.samples[i];
  }
  CHECK(std::abs(10.0 * std::log10(e2 / r2)) < 0.1);
}

TEST_CASE("bark noise energy placement") {
  AudioClip c = test_clip(3);
  auto bands = bark_band_edges(16000);
  PerturbationSpec s;
  s.kind = PerturbationKind::BarkBandNoise;
  s.band_index = 8;
  s.scale = 0.4;
  s.seed = 11;
  AudioClip out = apply_unclipped(s, c);
  auto [lo, hi] = bands[8];

  double before = band_energy_oracle(c.samples, 16000, lo, hi);
  double after = band_energy_oracle(out.samples, 16000, lo, hi);
  // added-noise energy = scale * original band energy (cross terms cancel in
  // expectation; the added component itself is exact, so compare residual)
  std::vector<double> resid(c.samples.size());
  for (std::size_t i = 0; i < resid.size(); ++i)
    resid[i] = out.samples[i] - c.samples[i];
  double noise_in_band = band_energy_oracle(resid, 16000, lo, hi);
  CHECK(noise_in_band / before == Catch::Approx(0.4).margin(0.02));
  (void)after;

  // out-of-band energy change <= 0.5 dB: check a far-away band
  auto [lo2, hi2] = bands[16];
  double b2 = band_energy_oracle(c.samples, 16000, lo2, hi2);
  double a2 = band_energy_oracle(out.samples, 16000, lo2, hi2);
  CHECK(std::abs(10.0 * std::log10(a2 / b2)) <= 0.5);
}

TEST_CASE("budget suite over random specs") {
  // trimmed-down version of the acceptance sweep: exactness per kind
  AudioClip c = test_clip(4);
  Rng rng = Rng::keyed(21, 7);
  for (int i = 0; i < 40; ++i) {
    auto s = sample_spec(rng.next_u64(), static_cast<int>(PerturbationKind::LInfNoise));
    AudioClip out = apply_unclipped(s, c);
    double eta = s.eta_rel * c.peak();
    double linf = 0.0;
    for (std::size_t k = 0; k < c.samples.size(); ++k)
      linf = std::max(linf, std::abs(out.samples[k] - c.samples[k]));
    REQUIRE(linf <= eta * (1.0 + 1e-12));
  }
  for (int i = 0; i < 40; ++i) {
    auto s = sample_spec(rng.next_u64(), static_cast<int>(PerturbationKind::L2Noise));
    AudioClip out = apply_unclipped(s, c);
    double d2 = 0.0;
    for (std::size_t k = 0; k < c.samples.size(); ++k) {
      double d = out.samples[k] - c.samples[k];
      d2 += d * d;
    }
    double rel = std::sqrt(d2) / (c.rms() * std::sqrt(double(c.samples.size())));
    REQUIRE(rel == Catch::Approx(s.eps_rel).epsilon(1e-9));
  }
}

TEST_CASE("apply is deterministic and length preserving") {
  AudioClip c = test_clip(5);
  Rng rng = Rng::keyed(31, 7);
  for (int i = 0; i < 30; ++i) {
    auto s = sample_spec(rng.next_u64());
    AudioClip a = apply(s, c);
    AudioClip b = apply(s, c);
    REQUIRE(a.samples == b.samples);
    if (s.kind != PerturbationKind::SpeedChange)
      REQUIRE(a.samples.size() == c.samples.size());
    for (double v : a.samples) {
      REQUIRE(v <= 1.0);
      REQUIRE(v >= -1.0);
    }
  }
}
