#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <functional>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pamt/autodiff.hpp"
#include "pamt/rng.hpp"

namespace pamt {

// Multi-head self-attention over a T x d_model sequence, built from graph
// primitives. Wq/Wk/Wv/Wo are d_model x d_model, biases 1 x d_model.
template <typename S>
int multi_head_self_attention(Graph<S>& g, int x, int wq, int bq, int wk, int bk,
                              int wv, int bv, int wo, int bo, int heads) {
  const Eigen::Index d_model = g.value(x).cols();
  if (d_model % heads != 0)
    throw std::invalid_argument("d_model must be divisible by head count");
  const Eigen::Index dh = d_model / heads;
  int q = g.add_rowvec(g.matmul(x, wq), bq);
  int k = g.add_rowvec(g.matmul(x, wk), bk);
  int v = g.add_rowvec(g.matmul(x, wv), bv);
  std::vector<int> outs;
  const S inv_sqrt_dh = S(1) / std::sqrt(static_cast<S>(dh));
  for (int h = 0; h < heads; ++h) {
    int qh = g.slice_cols(q, h * dh, dh);
    int kh = g.slice_cols(k, h * dh, dh);
    int vh = g.slice_cols(v, h * dh, dh);
    int scores = g.scale(g.matmul(qh, kh, false, true), inv_sqrt_dh);
    int attn = g.softmax_rows(scores);
    outs.push_back(g.matmul(attn, vh));
  }
  int concat = g.concat_cols(outs);
  return g.add_rowvec(g.matmul(concat, wo), bo);
}

inline double cosine_warmup_lr(std::int64_t step, std::int64_t total_steps,
                               double base_lr, double warmup_frac = 0.1) {
  if (total_steps <= 0) return base_lr;
  double warmup_steps = warmup_frac * static_cast<double>(total_steps);
  double s = static_cast<double>(step);
  if (warmup_steps > 0 && s < warmup_steps) return base_lr * s / warmup_steps;
  double progress = (s - warmup_steps) /
                    std::max(1.0, static_cast<double>(total_steps) - warmup_steps);
  progress = std::min(1.0, std::max(0.0, progress));
  return 0.5 * base_lr * (1.0 + std::cos(3.141592653589793 * progress));
}

// AdamW over a flat list of parameter matrices. Weight decay is decoupled
// from the moment update.
template <typename S>
class AdamW {
 public:
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;

  AdamW(double weight_decay = 1e-5, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8)
      : wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(std::vector<Mat>& params, const std::vector<Mat>& grads, double lr) {
    if (m_.empty()) {
      for (const auto& p : params) {
        m_.push_back(Mat::Zero(p.rows(), p.cols()));
        v_.push_back(Mat::Zero(p.rows(), p.cols()));
      }
    }
    ++t_;
    const S bc1 = S(1) - static_cast<S>(std::pow(beta1_, t_));
    const S bc2 = S(1) - static_cast<S>(std::pow(beta2_, t_));
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i] = S(beta1_) * m_[i] + S(1 - beta1_) * grads[i];
      v_[i] = (S(beta2_) * v_[i].array() +
               S(1 - beta2_) * grads[i].array().square()).matrix();
      auto mhat = m_[i].array() / bc1;
      auto vhat = v_[i].array() / bc2;
      params[i].array() -= S(lr) * mhat / (vhat.sqrt() + S(eps_));
      params[i].array() -= S(lr * wd_) * params[i].array();
    }
  }

  std::int64_t steps_taken() const { return t_; }

 private:
  double wd_, beta1_, beta2_, eps_;
  std::int64_t t_ = 0;
  std::vector<Mat> m_, v_;
};

// Central-difference gradient check. `f(params, grads)` returns the scalar
// value and, when `grads` is non-null, fills analytic gradients. Coordinates
// are sampled per tensor (all of them when coords_per_tensor <= 0 or the
// tensor is smaller).
inline double gradcheck(
    const std::function<double(const std::vector<Eigen::MatrixXd>&,
                               std::vector<Eigen::MatrixXd>*)>& f,
    std::vector<Eigen::MatrixXd> params, double h = 1e-5,
    int coords_per_tensor = -1, std::uint64_t seed = 7) {
  std::vector<Eigen::MatrixXd> grads(params.size());
  double base = f(params, &grads);
  if (!std::isfinite(base)) throw std::domain_error("gradcheck: non-finite value");
  Rng rng = Rng::keyed(seed, 0x67636b);
  double max_rel = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    const Eigen::Index n = params[p].size();
    std::vector<Eigen::Index> coords;
    if (coords_per_tensor <= 0 || n <= coords_per_tensor) {
      for (Eigen::Index i = 0; i < n; ++i) coords.push_back(i);
    } else {
      for (int i = 0; i < coords_per_tensor; ++i)
        coords.push_back(static_cast<Eigen::Index>(
            rng.next_below(static_cast<std::uint64_t>(n))));
    }
    for (Eigen::Index c : coords) {
      double orig = params[p](c);
      params[p](c) = orig + h;
      double up = f(params, nullptr);
      params[p](c) = orig - h;
      double down = f(params, nullptr);
      params[p](c) = orig;
      double numeric = (up - down) / (2.0 * h);
      double analytic = grads[p](c);
      // The denominator floor scales with |f|: central-difference noise is
      // roughly eps_machine * |f| / h, so tiny true gradients would otherwise
      // register as large relative errors.
      double rel = std::abs(analytic - numeric) /
                   std::max({1e-8, 1e-6 * (1.0 + std::abs(base)),
                             std::abs(analytic) + std::abs(numeric)});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

// ---- checkpoint I/O ----
// "PCKP" | u32 version | u32 tensor count | per tensor:
//   u32 name length, name bytes, u32 rank, u32 dims[rank], f32 LE payload.

using TensorMap = std::map<std::string, Eigen::MatrixXd>;

inline void write_checkpoint(const TensorMap& tensors, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  auto put_u32 = [&f](std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), 4);
  };
  f.write("PCKP", 4);
  put_u32(1);
  put_u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, mat] : tensors) {
    put_u32(static_cast<std::uint32_t>(name.size()));
    f.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(2);
    put_u32(static_cast<std::uint32_t>(mat.rows()));
    put_u32(static_cast<std::uint32_t>(mat.cols()));
    for (Eigen::Index r = 0; r < mat.rows(); ++r)
      for (Eigen::Index c = 0; c < mat.cols(); ++c) {
        float v = static_cast<float>(mat(r, c));
        f.write(reinterpret_cast<const char*>(&v), 4);
      }
  }
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

inline TensorMap read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "PCKP", 4) != 0)
    throw std::runtime_error("bad checkpoint magic: " + path);
  auto get_u32 = [&f]() {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), 4);
    return v;
  };
  std::uint32_t version = get_u32();
  if (version != 1) throw std::runtime_error("unsupported checkpoint version");
  std::uint32_t count = get_u32();
  TensorMap out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::uint32_t name_len = get_u32();
    std::string name(name_len, '\0');
    f.read(name.data(), name_len);
    std::uint32_t rank = get_u32();
    if (rank != 2) throw std::runtime_error("unsupported tensor rank");
    std::uint32_t rows = get_u32(), cols = get_u32();
    Eigen::MatrixXd mat(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c) {
        float v = 0.0f;
        f.read(reinterpret_cast<char*>(&v), 4);
        mat(r, c) = v;
      }
    if (!f) throw std::runtime_error("truncated checkpoint: " + path);
    out[name] = std::move(mat);
  }
  return out;
}

// Symmetric-uniform init scaled by 1/sqrt(fan_in).
inline Eigen::MatrixXd init_linear_weight(Eigen::Index fan_in, Eigen::Index fan_out,
                                          Rng& rng) {
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Eigen::MatrixXd w(fan_in, fan_out);
  for (Eigen::Index i = 0; i < w.size(); ++i)
    w(i) = rng.uniform(-bound, bound);
  return w;
}

// Sinusoidal positional encoding, T x d.
inline Eigen::MatrixXd sinusoidal_positions(Eigen::Index t, Eigen::Index d) {
  Eigen::MatrixXd pe(t, d);
  for (Eigen::Index pos = 0; pos < t; ++pos) {
    for (Eigen::Index i = 0; i < d; i += 2) {
      double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      pe(pos, i) = std::sin(pos * freq);
      if (i + 1 < d) pe(pos, i + 1) = std::cos(pos * freq);
    }
  }
  return pe;
}

}  // namespace pamt
