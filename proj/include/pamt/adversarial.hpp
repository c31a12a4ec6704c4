#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pamt/audio.hpp"
#include "pamt/autodiff.hpp"
#include "pamt/embedding.hpp"
#include "pamt/metrics.hpp"
#include "pamt/nn.hpp"
#include "pamt/pcsct.hpp"
#include "pamt/perturb.hpp"
#include "pamt/rng.hpp"

namespace pamt {

enum class AttackFamily {
  PgdLinfAudio,     // L-inf ball in waveform space
  PgdDpamt,         // d_PAMT ball, radial projection by bisection
  BarkConstrained,  // gradient masked to one Bark band, L-inf budget
};

inline const char* family_name(AttackFamily f) {
  switch (f) {
    case AttackFamily::PgdLinfAudio: return "pgd_linf_audio";
    case AttackFamily::PgdDpamt: return "pgd_dpamt";
    case AttackFamily::BarkConstrained: return "bark_constrained";
  }
  return "?";
}

struct AttackConfig {
  AttackFamily family = AttackFamily::PgdLinfAudio;
  double epsilon = 0.0;      // L-inf budget in waveform units, or d_PAMT units
  int steps = 20;
  double alpha = 0.0;        // 0 -> epsilon / 8
  double alpha_wave = 0.0;   // waveform step for the d_PAMT family; <= 0: 0.02 * clip peak
  int bark_band = 4;         // band for BarkConstrained
  std::uint64_t seed = 0;
};

// Linear probe on pooled PAMT embeddings.
struct Classifier {
  Eigen::MatrixXd w;  // 128 x K
  Eigen::MatrixXd b;  // 1 x K

  static Classifier init(int dim, int classes, std::uint64_t seed) {
    Rng rng = Rng::keyed(seed, 0x636c66);
    Classifier c;
    c.w = init_linear_weight(dim, classes, rng);
    c.b = Eigen::MatrixXd::Zero(1, classes);
    return c;
  }

  int classes() const { return static_cast<int>(w.cols()); }

  Eigen::RowVectorXd logits(const Eigen::VectorXd& z) const {
    return z.transpose() * w + b.row(0);
  }

  int predict(const Eigen::VectorXd& z) const {
    Eigen::Index arg = 0;
    logits(z).maxCoeff(&arg);
    return static_cast<int>(arg);
  }
};

namespace detail {

// Single-precision context for the hot attack loops: float copies of the
// PCSCT parameters and the encoder's constant matrices.
struct AttackContext {
  const PCSCTModel* model;
  const ToyEncoder* encoder;
  FloatParams fp;
  Eigen::MatrixXf dft_re, dft_im, mel, proj;
  Eigen::RowVectorXf null_c;

  AttackContext(const PCSCTModel& m, const ToyEncoder& enc)
      : model(&m),
        encoder(&enc),
        fp(m),
        dft_re(enc.dft_re().cast<float>()),
        dft_im(enc.dft_im().cast<float>()),
        mel(enc.mel().cast<float>()),
        proj(enc.projection().cast<float>()),
        null_c(null_conditioning(m).cast<float>()) {}

  Eigen::MatrixXf encode(const Eigen::VectorXf& wave) const {
    const Eigen::Index frames = wave.size() / kFrameLen;
    Eigen::MatrixXf x(frames, kFrameLen);
    for (Eigen::Index f = 0; f < frames; ++f)
      x.row(f) = wave.segment(f * kFrameLen, kFrameLen).transpose();
    Eigen::MatrixXf re = x * dft_re, im = x * dft_im;
    Eigen::MatrixXf band =
        (re.cwiseProduct(re) + im.cwiseProduct(im)) * mel;
    return (band.array() + float(ToyEncoder::kLogFloor)).log().matrix() * proj;
  }

  Eigen::VectorXf pooled_pamt(const Eigen::VectorXf& wave) const {
    Eigen::MatrixXf z = pcsct_forward_numeric_f(fp, encode(wave), null_c);
    return z.colwise().mean().transpose();
  }
};

// Differentiable path waveform -> cross-entropy of the classifier; returns
// d(CE)/d(waveform).
inline Eigen::VectorXf ce_gradient_wrt_wave(const AttackContext& ctx,
                                            const Classifier& clf,
                                            const Eigen::VectorXf& wave,
                                            int label, float* ce_out = nullptr) {
  using G = Graph<float>;
  G g;
  const Eigen::Index usable = (wave.size() / kFrameLen) * kFrameLen;
  Eigen::MatrixXf wrow(1, usable);
  wrow.row(0) = wave.head(usable).transpose();
  int w_id = g.leaf(wrow, true);
  int frames = g.frames(w_id, kFrameLen);
  int re = g.matmul(frames, g.leaf(ctx.dft_re));
  int im = g.matmul(frames, g.leaf(ctx.dft_im));
  int power = g.add(g.square(re), g.square(im));
  int band = g.matmul(power, g.leaf(ctx.mel));
  int logband = g.log(g.add_const(band, float(ToyEncoder::kLogFloor)));
  int emb = g.matmul(logband, g.leaf(ctx.proj));

  ParamLeaves<float> leaves;
  leaves.model = ctx.model;
  for (const auto& name : ctx.model->names())
    leaves.ids.push_back(g.leaf(ctx.fp(name)));
  int cond = g.leaf(ctx.null_c);
  int z = pcsct_forward(g, leaves, emb, cond);
  int pooled = g.mean_rows(z);
  int logits = g.add_rowvec(g.matmul(pooled, g.leaf(clf.w.cast<float>())),
                            g.leaf(clf.b.cast<float>()));
  int ce = g.sub(g.logsumexp_rows(logits), g.slice_cols(logits, label, 1));
  g.backward(ce);
  if (ce_out) *ce_out = g.value(ce)(0, 0);
  Eigen::VectorXf grad = Eigen::VectorXf::Zero(wave.size());
  grad.head(usable) = g.grad(w_id).row(0).transpose();
  return grad;
}

// Confine a perturbation to one Bark band with an FFT mask.
inline Eigen::VectorXf bark_bandpass(const Eigen::VectorXf& x, int sample_rate,
                                     int band) {
  auto bands = bark_band_edges(sample_rate);
  auto [lo, hi] = bands[static_cast<std::size_t>(band)];
  std::size_t n = next_pow2(static_cast<std::size_t>(x.size()));
  std::vector<std::complex<double>> spec(n);
  for (Eigen::Index i = 0; i < x.size(); ++i) spec[static_cast<std::size_t>(i)] = x(i);
  fft(spec);
  for (std::size_t k = 0; k <= n / 2; ++k) {
    double f = static_cast<double>(k) * sample_rate / static_cast<double>(n);
    if (f < lo || f > hi) {
      spec[k] = 0.0;
      if (k > 0 && k < n / 2) spec[n - k] = 0.0;
    }
  }
  fft(spec, true);
  Eigen::VectorXf y(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i)
    y(i) = static_cast<float>(spec[static_cast<std::size_t>(i)].real());
  return y;
}

}  // namespace detail

// Iterative signed-gradient ascent on the classifier's cross-entropy, with
// per-family constraint enforcement after each step.
inline AudioClip attack(const AudioClip& clip, int label, const Classifier& clf,
                        const PCSCTModel& model, const ToyEncoder& encoder,
                        const AttackConfig& cfg) {
  if (cfg.epsilon <= 0.0) return clip;  // empty feasible ball
  detail::AttackContext ctx(model, encoder);
  const Eigen::Index n = static_cast<Eigen::Index>(clip.size());
  Eigen::VectorXf x(n);
  for (Eigen::Index i = 0; i < n; ++i) x(i) = static_cast<float>(clip.samples[i]);
  Eigen::VectorXf delta = Eigen::VectorXf::Zero(n);
  Eigen::VectorXf pooled_clean;
  if (cfg.family == AttackFamily::PgdDpamt) pooled_clean = ctx.pooled_pamt(x);

  const float eps = static_cast<float>(cfg.epsilon);
  float alpha;
  if (cfg.alpha > 0.0) alpha = static_cast<float>(cfg.alpha);
  else if (cfg.family == AttackFamily::PgdDpamt) {
    // The budget is in embedding units, so the waveform step cannot be
    // derived from eps; scale it to the clip instead (explicit override via
    // alpha_wave). The radial projection below keeps iterates feasible.
    alpha = cfg.alpha_wave > 0.0
                ? static_cast<float>(cfg.alpha_wave)
                : 0.02f * static_cast<float>(std::max(clip.peak(), 1e-3));
  } else alpha = eps / 8.0f;

  auto clamp_wave = [](Eigen::VectorXf v) {
    return v.cwiseMax(-1.0f).cwiseMin(1.0f);
  };
  auto dpamt_of = [&](const Eigen::VectorXf& cand) {
    return (ctx.pooled_pamt(cand) - pooled_clean).norm();
  };

  for (int step = 0; step < cfg.steps; ++step) {
    Eigen::VectorXf cur = clamp_wave(x + delta);
    Eigen::VectorXf grad = detail::ce_gradient_wrt_wave(ctx, clf, cur, label);
    if (!grad.allFinite()) throw std::domain_error("attack: non-finite gradients");
    Eigen::VectorXf dir = grad.array().sign().matrix();
    if (cfg.family == AttackFamily::BarkConstrained)
      dir = detail::bark_bandpass(dir, clip.sample_rate_hz, cfg.bark_band);
    delta += alpha * dir;

    switch (cfg.family) {
      case AttackFamily::PgdLinfAudio:
      case AttackFamily::BarkConstrained:
        delta = delta.cwiseMax(-eps).cwiseMin(eps);
        break;
      case AttackFamily::PgdDpamt: {
        if (dpamt_of(clamp_wave(x + delta)) > eps) {
          // Radial bisection toward the clean clip; d(clean) = 0 so a
          // feasible scale always exists.
          float lo = 0.0f, hi = 1.0f;
          for (int it = 0; it < 30; ++it) {
            float mid = 0.5f * (lo + hi);
            float d = dpamt_of(clamp_wave(x + mid * delta));
            if (d > eps) hi = mid;
            else lo = mid;
            if (eps - dpamt_of(clamp_wave(x + lo * delta)) < 1e-3f * eps) break;
          }
          delta *= lo;
        }
        break;
      }
    }
  }

  AudioClip out;
  out.sample_rate_hz = clip.sample_rate_hz;
  Eigen::VectorXf fin = clamp_wave(x + delta);
  out.samples.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) out.samples[static_cast<std::size_t>(i)] = fin(i);
  return out;
}

// Post-hoc budget check for an emitted adversarial example.
inline bool constraint_satisfied(const AudioClip& clean, const AudioClip& adv,
                                 const PCSCTModel& model, const ToyEncoder& encoder,
                                 const AttackConfig& cfg, double tol = 1e-3) {
  if (cfg.family == AttackFamily::PgdDpamt) {
    double d = d_pamt(clean, adv, model, encoder);
    return d <= cfg.epsilon * (1.0 + tol);
  }
  double linf = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i)
    linf = std::max(linf, std::abs(adv.samples[i] - clean.samples[i]));
  return linf <= cfg.epsilon * (1.0 + tol) + 1.0 / 32768.0;
}

struct LabeledEmbedding {
  Eigen::VectorXd pooled;
  int label;
};

inline Eigen::VectorXd pooled_pamt_embedding(const AudioClip& clip,
                                             const PCSCTModel& model,
                                             const ToyEncoder& encoder) {
  Eigen::RowVectorXd c = null_conditioning(model);
  return embed_pamt(encoder.encode(clip), model, &c).pooled();
}

struct ClassifierTrainConfig {
  int epochs = 30;
  int batch_size = 8;
  double lr = 5e-3;
  double weight_decay = 0.0;
  AttackConfig attack;       // attack.steps == 0 -> standard training
  std::uint64_t seed = 1;
};

struct ClassifierTrainResult {
  Classifier classifier;
  std::vector<double> epoch_losses;
};

// Min-max loop: the inner max is realized by `attack`, the outer
// step updates only the linear probe. The PCSCT model and encoder stay
// frozen throughout.
inline ClassifierTrainResult adversarial_train(
    const std::vector<LabeledClip>& corpus, const PCSCTModel& model,
    const ToyEncoder& encoder, int num_classes,
    const ClassifierTrainConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("empty labeled corpus");
  Classifier clf = Classifier::init(model.dims.output, num_classes, cfg.seed);
  AdamW<double> opt(cfg.weight_decay);

  // Clean embeddings are reusable across epochs.
  std::vector<Eigen::VectorXd> clean_emb;
  for (const auto& item : corpus)
    clean_emb.push_back(pooled_pamt_embedding(item.clip, model, encoder));

  const bool adversarial = cfg.attack.steps > 0 && cfg.attack.epsilon > 0.0;
  ClassifierTrainResult result;
  Rng shuffle_rng = Rng::keyed(cfg.seed, 0x61747261696e);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> idx(corpus.size());
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[shuffle_rng.next_below(i)]);
    double epoch_loss = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < idx.size();
         start += static_cast<std::size_t>(cfg.batch_size)) {
      std::size_t end =
          std::min(idx.size(), start + static_cast<std::size_t>(cfg.batch_size));
      Eigen::MatrixXd dw = Eigen::MatrixXd::Zero(clf.w.rows(), clf.w.cols());
      Eigen::MatrixXd db = Eigen::MatrixXd::Zero(1, clf.b.cols());
      double loss = 0.0;
      for (std::size_t ii = start; ii < end; ++ii) {
        std::size_t i = idx[ii];
        Eigen::VectorXd z;
        if (adversarial) {
          AttackConfig acfg = cfg.attack;
          acfg.seed = cfg.seed ^ (epoch * 1009ull + i);
          AudioClip adv = attack(corpus[i].clip, corpus[i].label, clf, model,
                                 encoder, acfg);
          z = pooled_pamt_embedding(adv, model, encoder);
        } else {
          z = clean_emb[i];
        }
        Eigen::RowVectorXd logits = clf.logits(z);
        double mx = logits.maxCoeff();
        Eigen::RowVectorXd p = (logits.array() - mx).exp();
        p /= p.sum();
        loss += -std::log(std::max(1e-30, p(corpus[i].label)));
        Eigen::RowVectorXd err = p;
        err(corpus[i].label) -= 1.0;
        dw += z * err;
        db += err;
      }
      double inv = 1.0 / static_cast<double>(end - start);
      std::vector<Eigen::MatrixXd> params = {clf.w, clf.b};
      std::vector<Eigen::MatrixXd> grads = {dw * inv, db * inv};
      opt.step(params, grads, cfg.lr);
      clf.w = params[0];
      clf.b = params[1];
      epoch_loss += loss * inv;
      ++batches;
    }
    result.epoch_losses.push_back(epoch_loss / std::max(1, batches));
  }
  result.classifier = clf;
  return result;
}

struct RobustReport {
  double clean_accuracy = 0.0;
  std::vector<std::pair<std::string, double>> per_family;
  double union_accuracy = 0.0;
};

// A test item is union-correct only if it is classified correctly under
// every attack family.
inline RobustReport union_robust_accuracy(
    const Classifier& clf, const PCSCTModel& model, const ToyEncoder& encoder,
    const std::vector<LabeledClip>& test_set,
    const std::vector<AttackConfig>& families) {
  if (test_set.empty()) throw std::invalid_argument("empty test set");
  if (families.empty()) throw std::invalid_argument("no attack families");
  RobustReport report;
  std::vector<int> family_correct(families.size(), 0);
  int clean_correct = 0, union_correct = 0;
  for (std::size_t i = 0; i < test_set.size(); ++i) {
    const auto& item = test_set[i];
    Eigen::VectorXd z = pooled_pamt_embedding(item.clip, model, encoder);
    if (clf.predict(z) == item.label) ++clean_correct;
    bool all_ok = true;
    for (std::size_t f = 0; f < families.size(); ++f) {
      AttackConfig cfg = families[f];
      cfg.seed ^= 0xA77ACCull + i;
      AudioClip adv = attack(item.clip, item.label, clf, model, encoder, cfg);
      Eigen::VectorXd za = pooled_pamt_embedding(adv, model, encoder);
      bool ok = clf.predict(za) == item.label;
      if (ok) ++family_correct[f];
      all_ok = all_ok && ok;
    }
    if (all_ok) ++union_correct;
  }
  const double n = static_cast<double>(test_set.size());
  report.clean_accuracy = clean_correct / n;
  for (std::size_t f = 0; f < families.size(); ++f)
    report.per_family.emplace_back(family_name(families[f].family),
                                   family_correct[f] / n);
  report.union_accuracy = union_correct / n;
  return report;
}

}  // namespace pamt
