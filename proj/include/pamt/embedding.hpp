#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pamt/audio.hpp"
#include "pamt/rng.hpp"

namespace pamt {

struct EmbeddingError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// T x D sequence of frame embeddings, row = time frame.
struct EmbeddingSequence {
  Eigen::MatrixXd data;  // T x D
  double frame_rate_hz = 50.0;

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }

  Eigen::VectorXd pooled() const {
    return data.colwise().mean().transpose();
  }
};

inline constexpr int kEncoderDim = 768;
inline constexpr int kPamtDim = 128;
inline constexpr int kFrameLen = 320;   // 20 ms at 16 kHz
inline constexpr int kNumMelBands = 64;
inline constexpr int kFrameBins = kFrameLen / 2 + 1;

// Frozen feature extractor standing in for a pretrained encoder. Per
// non-overlapping 320-sample frame: rectangular-window power spectrum,
// 64 triangular mel-band energies, natural log, then a fixed random
// projection to 768 dims. Everything is a pure function of (clip, seed);
// the matrices are drawn once from the seed and never change.
class ToyEncoder {
 public:
  explicit ToyEncoder(std::uint64_t seed) : seed_(seed) {
    build_dft();
    build_mel();
    build_projection(seed);
  }

  std::uint64_t seed() const { return seed_; }

  EmbeddingSequence encode(const AudioClip& clip) const {
    const std::size_t n = clip.size();
    if (n < kFrameLen)
      throw EmbeddingError("clip shorter than one encoder frame (320 samples)");
    const Eigen::Index frames = static_cast<Eigen::Index>(n / kFrameLen);
    Eigen::MatrixXd x(frames, kFrameLen);
    for (Eigen::Index f = 0; f < frames; ++f)
      for (int t = 0; t < kFrameLen; ++t)
        x(f, t) = clip.samples[static_cast<std::size_t>(f) * kFrameLen + t];
    Eigen::MatrixXd re = x * dft_re_;
    Eigen::MatrixXd im = x * dft_im_;
    Eigen::MatrixXd power = re.cwiseProduct(re) + im.cwiseProduct(im);
    Eigen::MatrixXd band = power * mel_;
    Eigen::MatrixXd logband =
        (band.array() + kLogFloor).log().matrix();
    EmbeddingSequence seq;
    seq.data = logband * proj_;
    seq.frame_rate_hz = static_cast<double>(clip.sample_rate_hz) / kFrameLen;
    return seq;
  }

  // Constant matrices, exposed for the differentiable attack path which
  // rebuilds the same computation inside an autodiff graph.
  const Eigen::MatrixXd& dft_re() const { return dft_re_; }    // 320 x 161
  const Eigen::MatrixXd& dft_im() const { return dft_im_; }    // 320 x 161
  const Eigen::MatrixXd& mel() const { return mel_; }          // 161 x 64
  const Eigen::MatrixXd& projection() const { return proj_; }  // 64 x 768

  static constexpr double kLogFloor = 1e-8;

 private:
  void build_dft() {
    dft_re_.resize(kFrameLen, kFrameBins);
    dft_im_.resize(kFrameLen, kFrameBins);
    for (int t = 0; t < kFrameLen; ++t) {
      for (int k = 0; k < kFrameBins; ++k) {
        double ang = -2.0 * 3.141592653589793 * k * t / kFrameLen;
        dft_re_(t, k) = std::cos(ang);
        dft_im_(t, k) = std::sin(ang);
      }
    }
  }

  void build_mel() {
    auto hz_to_mel = [](double f) { return 2595.0 * std::log10(1.0 + f / 700.0); };
    auto mel_to_hz = [](double m) {
      return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0);
    };
    const double lo = hz_to_mel(40.0), hi = hz_to_mel(8000.0);
    std::vector<double> centers(kNumMelBands + 2);
    for (int i = 0; i < kNumMelBands + 2; ++i)
      centers[i] = mel_to_hz(lo + (hi - lo) * i / (kNumMelBands + 1));
    mel_ = Eigen::MatrixXd::Zero(kFrameBins, kNumMelBands);
    for (int b = 0; b < kNumMelBands; ++b) {
      double fl = centers[b], fc = centers[b + 1], fr = centers[b + 2];
      for (int k = 0; k < kFrameBins; ++k) {
        double f = 50.0 * k;  // bin spacing for 320 samples at 16 kHz
        double w = 0.0;
        if (f > fl && f < fc) w = (f - fl) / (fc - fl);
        else if (f >= fc && f < fr) w = (fr - f) / (fr - fc);
        mel_(k, b) = w;
      }
    }
  }

  void build_projection(std::uint64_t seed) {
    Rng rng = Rng::keyed(seed, 0x746f79);
    proj_.resize(kNumMelBands, kEncoderDim);
    const double s = 1.0 / std::sqrt(static_cast<double>(kNumMelBands));
    for (int i = 0; i < kNumMelBands; ++i)
      for (int j = 0; j < kEncoderDim; ++j) proj_(i, j) = s * rng.normal();
  }

  std::uint64_t seed_;
  Eigen::MatrixXd dft_re_, dft_im_, mel_, proj_;
};

inline EmbeddingSequence toy_encode(const AudioClip& clip, std::uint64_t seed) {
  return ToyEncoder(seed).encode(clip);
}

namespace detail {
inline void put_f32(std::ofstream& f, float v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}
inline void put_u32(std::ofstream& f, std::uint32_t v) {
  f.write(reinterpret_cast<const char*>(&v), 4);
}
}  // namespace detail

// "PEMB" | u32 version=1 | u32 T | u32 D | f32 frame_rate | T*D f32 LE
// row-major.
inline void write_embeddings(const EmbeddingSequence& seq, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw EmbeddingError("cannot open for writing: " + path);
  f.write("PEMB", 4);
  detail::put_u32(f, 1);
  detail::put_u32(f, static_cast<std::uint32_t>(seq.frames()));
  detail::put_u32(f, static_cast<std::uint32_t>(seq.dim()));
  detail::put_f32(f, static_cast<float>(seq.frame_rate_hz));
  for (Eigen::Index r = 0; r < seq.frames(); ++r)
    for (Eigen::Index c = 0; c < seq.dim(); ++c)
      detail::put_f32(f, static_cast<float>(seq.data(r, c)));
  if (!f) throw EmbeddingError("write failed: " + path);
}

inline EmbeddingSequence read_embeddings(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw EmbeddingError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "PEMB", 4) != 0)
    throw EmbeddingError("bad magic in embedding file: " + path);
  std::uint32_t version = 0, t = 0, d = 0;
  float rate = 0.0f;
  f.read(reinterpret_cast<char*>(&version), 4);
  f.read(reinterpret_cast<char*>(&t), 4);
  f.read(reinterpret_cast<char*>(&d), 4);
  f.read(reinterpret_cast<char*>(&rate), 4);
  if (!f || version != 1)
    throw EmbeddingError("unsupported embedding file version");
  if (t == 0 || d == 0) throw EmbeddingError("empty embedding file");
  EmbeddingSequence seq;
  seq.frame_rate_hz = rate;
  seq.data.resize(t, d);
  std::vector<float> row(d);
  for (std::uint32_t r = 0; r < t; ++r) {
    f.read(reinterpret_cast<char*>(row.data()), 4 * static_cast<std::streamsize>(d));
    if (!f) throw EmbeddingError("truncated embedding payload: " + path);
    for (std::uint32_t c = 0; c < d; ++c) seq.data(r, c) = row[c];
  }
  return seq;
}

}  // namespace pamt
