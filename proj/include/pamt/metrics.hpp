#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Eigenvalues>

#include "pamt/audio.hpp"
#include "pamt/dsp.hpp"
#include "pamt/embedding.hpp"
#include "pamt/judge.hpp"
#include "pamt/pcsct.hpp"
#include "pamt/perturb.hpp"
#include "pamt/stats.hpp"

namespace pamt {

// Length-changing perturbations are trimmed to the shorter clip first.
inline double snr_db(const AudioClip& ref, const AudioClip& pert) {
  std::size_t n = std::min(ref.size(), pert.size());
  if (n == 0) throw std::invalid_argument("snr_db: empty clip");
  double sig = 0.0, res = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sig += ref.samples[i] * ref.samples[i];
    double d = pert.samples[i] - ref.samples[i];
    res += d * d;
  }
  if (sig <= 0.0) throw std::domain_error("snr_db: zero-power reference");
  if (res == 0.0) return 200.0;  // cap for a bit-identical pair
  return 10.0 * std::log10(sig / res);
}

// Mean over STFT frames (1024/256, Hann) of the per-bin squared
// log10-magnitude difference.
inline double lsd(const AudioClip& ref, const AudioClip& pert) {
  const std::size_t win = 1024, hop = 256;
  const double eps0 = 1e-10;
  std::size_t n = std::min(ref.size(), pert.size());
  if (n < win) throw std::invalid_argument("lsd: clip shorter than one window");
  auto w = hann_window(win);
  double total = 0.0;
  std::size_t frames = 0;
  std::vector<std::complex<double>> a(win), b(win);
  for (std::size_t start = 0; start + win <= n; start += hop) {
    for (std::size_t i = 0; i < win; ++i) {
      a[i] = ref.samples[start + i] * w[i];
      b[i] = pert.samples[start + i] * w[i];
    }
    fft(a);
    fft(b);
    double acc = 0.0;
    for (std::size_t k = 0; k <= win / 2; ++k) {
      double d = std::log10(std::abs(a[k]) + eps0) -
                 std::log10(std::abs(b[k]) + eps0);
      acc += d * d;
    }
    total += acc / (win / 2 + 1);
    ++frames;
  }
  return total / static_cast<double>(frames);
}

struct GaussianStats {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

inline GaussianStats gaussian_stats(const std::vector<Eigen::VectorXd>& vecs) {
  if (vecs.size() < 2)
    throw std::invalid_argument("gaussian_stats: need at least 2 vectors");
  const Eigen::Index d = vecs[0].size();
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
  for (const auto& v : vecs) {
    if (v.size() != d)
      throw std::invalid_argument("gaussian_stats: dimension mismatch");
    mean += v;
  }
  mean /= static_cast<double>(vecs.size());
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
  for (const auto& v : vecs) {
    Eigen::VectorXd c = v - mean;
    cov += c * c.transpose();
  }
  cov /= static_cast<double>(vecs.size() - 1);
  cov = 0.5 * (cov + cov.transpose().eval());
  return {mean, cov};
}

namespace detail {
// PSD square root via eigendecomposition, negative eigenvalues clamped to 0.
inline Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed");
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}
}  // namespace detail

// Frechet (Wasserstein-2) distance between Gaussians:
// ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2).
inline double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.mean.size() != b.mean.size())
    throw std::invalid_argument("frechet_distance: dimension mismatch");
  Eigen::MatrixXd sa_half = detail::psd_sqrt(a.cov);
  Eigen::MatrixXd inner = sa_half * b.cov * sa_half;
  inner = 0.5 * (inner + inner.transpose().eval());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(inner);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed");
  double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  double d2 = (a.mean - b.mean).squaredNorm() + a.cov.trace() + b.cov.trace() -
              2.0 * tr_sqrt;
  return std::max(0.0, d2);
}

// Frechet distance straight from sample rows (n x D), using the n x n Gram
// spectrum instead of D x D eigendecompositions. Exact for sample
// covariances; used when D is large and n small (per-pair frame FAD).
inline double frechet_from_samples(const Eigen::MatrixXd& x,
                                   const Eigen::MatrixXd& y) {
  if (x.cols() != y.cols())
    throw std::invalid_argument("frechet_from_samples: dimension mismatch");
  if (x.rows() < 2 || y.rows() < 2)
    throw std::invalid_argument("frechet_from_samples: need >= 2 rows");
  const double nx = static_cast<double>(x.rows() - 1);
  const double ny = static_cast<double>(y.rows() - 1);
  Eigen::RowVectorXd mx = x.colwise().mean(), my = y.colwise().mean();
  Eigen::MatrixXd xc = x.rowwise() - mx, yc = y.rowwise() - my;

  double tr_x = xc.squaredNorm() / nx;
  double tr_y = yc.squaredNorm() / ny;

  Eigen::MatrixXd gram = xc * xc.transpose() / nx;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (gram + gram.transpose()));
  if (es.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed");

  // Rows of va span sqrt(Sx): va = diag(sqrt(l)) W^T with W the Sx
  // eigenvectors recovered from the Gram eigenvectors.
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i)
    if (es.eigenvalues()(i) > 1e-12) keep.push_back(i);
  Eigen::MatrixXd va(static_cast<Eigen::Index>(keep.size()), x.cols());
  for (std::size_t r = 0; r < keep.size(); ++r) {
    double l = es.eigenvalues()(keep[r]);
    Eigen::VectorXd w = xc.transpose() * es.eigenvectors().col(keep[r]);
    w /= std::sqrt(l * nx);  // unit eigenvector of Sx
    va.row(static_cast<Eigen::Index>(r)) = std::sqrt(l) * w.transpose();
  }
  // Nonzero spectrum of Sx^1/2 Sy Sx^1/2 equals that of (va yc^T)(va yc^T)^T / ny.
  Eigen::MatrixXd z = va * yc.transpose();
  Eigen::MatrixXd c = z * z.transpose() / ny;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es2(0.5 * (c + c.transpose()));
  if (es2.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed");
  double tr_sqrt = es2.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();

  double d2 = (mx - my).squaredNorm() + tr_x + tr_y - 2.0 * tr_sqrt;
  return std::max(0.0, d2);
}

// Perceptual distance: L2 between NULL-conditioned pooled PAMT
// embeddings.
inline double d_pamt(const EmbeddingSequence& x, const EmbeddingSequence& y,
                     const PCSCTModel& model) {
  Eigen::RowVectorXd c = null_conditioning(model);
  Eigen::VectorXd px = embed_pamt(x, model, &c).pooled();
  Eigen::VectorXd py = embed_pamt(y, model, &c).pooled();
  return (px - py).norm();
}

inline double d_pamt(const AudioClip& x, const AudioClip& y,
                     const PCSCTModel& model, const ToyEncoder& encoder) {
  return d_pamt(encoder.encode(x), encoder.encode(y), model);
}

// ---- evaluation protocol (Spearman rho + F1 against 2AFC scores) ----

struct MetricEval {
  double spearman = 0.0;
  double f1_percent = 0.0;
  double threshold = 0.0;
};

namespace detail {

inline double f1_score(const std::vector<int>& truth, const std::vector<int>& pred) {
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (pred[i] == 1 && truth[i] == 1) ++tp;
    else if (pred[i] == 1) ++fp;
    else if (truth[i] == 1) ++fn;
  }
  double denom = 2.0 * tp + fp + fn;
  return denom > 0 ? 2.0 * tp / denom : 0.0;
}

}  // namespace detail

// `values` must be similarity-oriented (higher = more similar); distance
// metrics are negated by the caller. Ground truth is binarized at the
// whole-dataset median 2AFC score; the decision threshold is chosen by a
// dense sweep on the train split only.
//
// When `groups` is non-empty (one group id per row, e.g. the reference index)
// both values and scores are first replaced by their tie-averaged ranks inside
// each group. 2AFC win counts only order versions of the same reference, so
// this normalization is what makes rows comparable across references.
inline MetricEval evaluate_metric(std::vector<double> values,
                                  std::vector<double> scores,
                                  std::uint64_t split_seed,
                                  const std::vector<std::size_t>& groups = {}) {
  if (values.size() != scores.size() || values.size() < 10)
    throw std::invalid_argument("evaluate_metric: need >= 10 scored pairs");
  const std::size_t n = values.size();
  if (!groups.empty()) {
    if (groups.size() != n)
      throw std::invalid_argument("evaluate_metric: group/row size mismatch");
    std::map<std::size_t, std::vector<std::size_t>> members;
    for (std::size_t i = 0; i < n; ++i) members[groups[i]].push_back(i);
    for (auto* vec : {&values, &scores}) {
      std::vector<double> ranked(n);
      for (const auto& [gid, idx] : members) {
        std::vector<double> local;
        for (std::size_t i : idx) local.push_back((*vec)[i]);
        std::vector<double> r = average_ranks(local);
        for (std::size_t k = 0; k < idx.size(); ++k) ranked[idx[k]] = r[k];
      }
      *vec = std::move(ranked);
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::keyed(split_seed, 0x6576616c);
  for (std::size_t i = n; i > 1; --i)
    std::swap(order[i - 1], order[rng.next_below(i)]);
  std::size_t n_train = static_cast<std::size_t>(0.8 * n);
  if (n_train == 0 || n_train == n)
    throw std::invalid_argument("evaluate_metric: degenerate split");

  std::vector<double> med_src = scores;
  std::nth_element(med_src.begin(), med_src.begin() + med_src.size() / 2,
                   med_src.end());
  double median = med_src[med_src.size() / 2];

  std::vector<double> train_vals;
  std::vector<int> train_truth;
  for (std::size_t i = 0; i < n_train; ++i) {
    train_vals.push_back(values[order[i]]);
    train_truth.push_back(scores[order[i]] >= median ? 1 : 0);
  }
  // Candidate thresholds: midpoints between sorted train values.
  std::vector<double> sorted = train_vals;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> cands = {sorted.front() - 1.0, sorted.back() + 1.0};
  for (std::size_t i = 0; i + 1 < sorted.size(); ++i)
    cands.push_back(0.5 * (sorted[i] + sorted[i + 1]));
  double best_f1 = -1.0, best_thr = cands.front();
  for (double thr : cands) {
    std::vector<int> pred;
    pred.reserve(train_vals.size());
    for (double v : train_vals) pred.push_back(v >= thr ? 1 : 0);
    double f1 = detail::f1_score(train_truth, pred);
    if (f1 > best_f1) {
      best_f1 = f1;
      best_thr = thr;
    }
  }

  std::vector<double> test_vals, test_scores;
  std::vector<int> test_truth, test_pred;
  for (std::size_t i = n_train; i < n; ++i) {
    test_vals.push_back(values[order[i]]);
    test_scores.push_back(scores[order[i]]);
    test_truth.push_back(scores[order[i]] >= median ? 1 : 0);
    test_pred.push_back(values[order[i]] >= best_thr ? 1 : 0);
  }
  MetricEval out;
  out.spearman = spearman_rho(test_vals, test_scores);
  out.f1_percent = 100.0 * detail::f1_score(test_truth, test_pred);
  out.threshold = best_thr;
  return out;
}

// ---- perceptual dataset: per reference, 6 perturbations + 2AFC scores ----

struct PerceptualRow {
  std::size_t ref_index = 0;
  PerturbationSpec spec;
  AudioClip pert;
  double score_2afc = 0.0;
};

struct PerceptualDataset {
  std::vector<AudioClip> refs;
  std::vector<PerceptualRow> rows;  // 6 per reference
};

inline PerceptualDataset build_perceptual_dataset(std::vector<AudioClip> clips,
                                                  std::uint64_t seed,
                                                  const JudgeConfig& judge = {}) {
  PerceptualDataset ds;
  ds.refs = std::move(clips);
  for (std::size_t i = 0; i < ds.refs.size(); ++i) {
    std::vector<std::pair<std::string, PerturbationSpec>> versions;
    std::vector<AudioClip> perts;
    for (int k = 0; k < kNumPerturbationKinds; ++k) {
      PerturbationSpec s = sample_spec(
          seed ^ (0xD5ull + i * 131 + static_cast<std::uint64_t>(k) * 9973), k);
      versions.emplace_back("v" + std::to_string(k), s);
      perts.push_back(apply(s, ds.refs[i]));
    }
    auto judgments =
        round_robin_judgments("ref", versions, seed ^ (0x2AFC00ull + i), judge);
    auto wins = derive_2afc_scores(judgments);
    for (int k = 0; k < kNumPerturbationKinds; ++k) {
      PerceptualRow row;
      row.ref_index = i;
      row.spec = versions[static_cast<std::size_t>(k)].second;
      row.pert = std::move(perts[static_cast<std::size_t>(k)]);
      row.score_2afc = wins.at("v" + std::to_string(k));
      ds.rows.push_back(std::move(row));
    }
  }
  return ds;
}

}  // namespace pamt
