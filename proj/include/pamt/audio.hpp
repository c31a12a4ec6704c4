#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pamt/rng.hpp"

namespace pamt {

struct AudioError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Mono audio in [-1, 1]. Canonical internal rate is 16 kHz.
struct AudioClip {
  std::vector<double> samples;
  int sample_rate_hz = 16000;

  std::size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate_hz;
  }

  double rms() const {
    double acc = 0.0;
    for (double s : samples) acc += s * s;
    return std::sqrt(acc / std::max<std::size_t>(1, samples.size()));
  }

  double peak() const {
    double m = 0.0;
    for (double s : samples) m = std::max(m, std::abs(s));
    return m;
  }

  void clamp() {
    for (double& s : samples) s = std::clamp(s, -1.0, 1.0);
  }
};

namespace detail {

inline std::uint32_t read_u32le(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 |
         std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
inline std::uint16_t read_u16le(const unsigned char* p) {
  return std::uint16_t(p[0]) | std::uint16_t(p[1]) << 8;
}
inline void put_u32le(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
  v.push_back((x >> 16) & 0xff);
  v.push_back((x >> 24) & 0xff);
}
inline void put_u16le(std::vector<unsigned char>& v, std::uint16_t x) {
  v.push_back(x & 0xff);
  v.push_back((x >> 8) & 0xff);
}

}  // namespace detail

// 16-bit PCM RIFF/WAVE reader. Stereo is downmixed by channel mean.
inline AudioClip read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError("cannot open WAV file: " + path);
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  if (buf.size() < 12) throw AudioError("WAV too short: " + path);
  if (std::memcmp(buf.data(), "RIFF", 4) != 0)
    throw AudioError("not a RIFF file: " + path);
  if (std::memcmp(buf.data() + 8, "WAVE", 4) != 0)
    throw AudioError("not a WAVE file: " + path);

  int channels = 0;
  int sample_rate = 0;
  int bits = 0;
  bool have_fmt = false;
  std::size_t data_off = 0, data_len = 0;

  std::size_t pos = 12;
  while (pos + 8 <= buf.size()) {
    std::uint32_t chunk_len = detail::read_u32le(buf.data() + pos + 4);
    const unsigned char* body = buf.data() + pos + 8;
    if (pos + 8 + chunk_len > buf.size())
      throw AudioError("truncated chunk in WAV: " + path);
    if (std::memcmp(buf.data() + pos, "fmt ", 4) == 0) {
      if (chunk_len < 16) throw AudioError("malformed fmt chunk");
      int format = detail::read_u16le(body);
      channels = detail::read_u16le(body + 2);
      sample_rate = static_cast<int>(detail::read_u32le(body + 4));
      bits = detail::read_u16le(body + 14);
      if (format != 1) throw AudioError("only PCM WAV supported");
      if (bits != 16) throw AudioError("only 16-bit WAV supported");
      if (channels < 1 || channels > 2) throw AudioError("unsupported channel count");
      have_fmt = true;
    } else if (std::memcmp(buf.data() + pos, "data", 4) == 0) {
      data_off = pos + 8;
      data_len = chunk_len;
    }
    pos += 8 + chunk_len + (chunk_len & 1);  // chunks are word-aligned
  }
  if (!have_fmt || data_len == 0) throw AudioError("missing fmt/data chunk");

  std::size_t frames = data_len / (2 * channels);
  if (frames == 0) throw AudioError("empty data chunk");
  AudioClip clip;
  clip.sample_rate_hz = sample_rate;
  clip.samples.resize(frames);
  const unsigned char* d = buf.data() + data_off;
  for (std::size_t i = 0; i < frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      std::int16_t v = static_cast<std::int16_t>(
          detail::read_u16le(d + 2 * (i * channels + c)));
      acc += v / 32768.0;
    }
    clip.samples[i] = acc / channels;
  }
  return clip;
}

inline void write_wav(const AudioClip& clip, const std::string& path) {
  std::vector<unsigned char> out;
  out.reserve(44 + clip.samples.size() * 2);
  std::uint32_t data_len = static_cast<std::uint32_t>(clip.samples.size() * 2);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  detail::put_u32le(out, 36 + data_len);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::put_u32le(out, 16);
  detail::put_u16le(out, 1);  // PCM
  detail::put_u16le(out, 1);  // mono
  detail::put_u32le(out, static_cast<std::uint32_t>(clip.sample_rate_hz));
  detail::put_u32le(out, static_cast<std::uint32_t>(clip.sample_rate_hz * 2));
  detail::put_u16le(out, 2);
  detail::put_u16le(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  detail::put_u32le(out, data_len);
  for (double s : clip.samples) {
    double scaled = std::round(s * 32768.0);
    int v = static_cast<int>(std::clamp(scaled, -32768.0, 32767.0));
    detail::put_u16le(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(v)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw AudioError("cannot open for writing: " + path);
  f.write(reinterpret_cast<const char*>(out.data()),
          static_cast<std::streamsize>(out.size()));
  if (!f) throw AudioError("write failed: " + path);
}

inline AudioClip synth_tone(double freq_hz, double duration_s, double amplitude,
                            int sample_rate_hz) {
  if (freq_hz <= 0 || freq_hz >= sample_rate_hz / 2.0)
    throw AudioError("tone frequency must lie in (0, Nyquist)");
  if (amplitude <= 0 || amplitude > 1)
    throw AudioError("amplitude must lie in (0, 1]");
  AudioClip clip;
  clip.sample_rate_hz = sample_rate_hz;
  std::size_t n = static_cast<std::size_t>(std::llround(duration_s * sample_rate_hz));
  clip.samples.resize(n);
  const double w = 2.0 * 3.141592653589793 * freq_hz / sample_rate_hz;
  for (std::size_t t = 0; t < n; ++t)
    clip.samples[t] = amplitude * std::sin(w * static_cast<double>(t));
  return clip;
}

struct CorpusConfig {
  int num_classes = 4;
  int clips_per_class = 8;
  double clip_seconds = 2.0;
  int sample_rate_hz = 16000;
  double partial_amplitude = 0.18;
  double noise_floor = 1e-4;
};

struct LabeledClip {
  AudioClip clip;
  int label = 0;
};

// Deterministic toy corpus: each class has a distinct set of partials so the
// classes are separable by a linear probe on band energies. A very low noise
// floor keeps quiet bands near silence, so small additive perturbations are
// plainly visible in log-energy features.
inline std::vector<LabeledClip> synth_corpus(const CorpusConfig& cfg,
                                             std::uint64_t seed) {
  // Class partial sets chosen away from Bark band edges, mutually disjoint.
  static const double kPartials[8][3] = {
      {330.0, 1150.0, 2900.0}, {480.0, 1700.0, 4200.0},
      {620.0, 2300.0, 5600.0}, {840.0, 3300.0, 7000.0},
      {260.0, 980.0, 2500.0},  {540.0, 1950.0, 4800.0},
      {710.0, 2650.0, 6200.0}, {920.0, 3600.0, 7500.0}};
  std::vector<LabeledClip> corpus;
  for (int k = 0; k < cfg.num_classes; ++k) {
    for (int i = 0; i < cfg.clips_per_class; ++i) {
      Rng rng = Rng::keyed(seed, static_cast<std::uint64_t>(k) * 100003 + i);
      AudioClip clip;
      clip.sample_rate_hz = cfg.sample_rate_hz;
      std::size_t n = static_cast<std::size_t>(
          std::llround(cfg.clip_seconds * cfg.sample_rate_hz));
      clip.samples.assign(n, 0.0);
      const double* partials = kPartials[k % 8];
      for (int p = 0; p < 3; ++p) {
        double detune = 1.0 + 0.01 * (rng.next_double() - 0.5);
        double amp = cfg.partial_amplitude * (0.7 + 0.6 * rng.next_double());
        double phase = rng.uniform(0.0, 6.283185307179586);
        double w = 2.0 * 3.141592653589793 * partials[p] * detune /
                   cfg.sample_rate_hz;
        for (std::size_t t = 0; t < n; ++t)
          clip.samples[t] += amp * std::sin(w * static_cast<double>(t) + phase);
      }
      for (std::size_t t = 0; t < n; ++t)
        clip.samples[t] += cfg.noise_floor * rng.normal();
      clip.clamp();
      corpus.push_back({std::move(clip), k});
    }
  }
  return corpus;
}

}  // namespace pamt
