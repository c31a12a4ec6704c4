#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "pamt/audio.hpp"
#include "pamt/metrics.hpp"
#include "pamt/stats.hpp"

using namespace pamt;

namespace {

// independent rank-then-Pearson oracle
double spearman_oracle(std::vector<double> a, std::vector<double> b) {
  auto ranks = [](const std::vector<double>& x) {
    std::vector<std::size_t> idx(x.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
    std::vector<double> r(x.size());
    std::size_t i = 0;
    while (i < idx.size()) {
      std::size_t j = i;
      while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
      double avg = (double(i) + double(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  std::vector<double> ra = ranks(a), rb = ranks(b);
  double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / ra.size();
  double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / rb.size();
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

}  // namespace

TEST_CASE("snr oracles") {
  AudioClip ref = synth_tone(440.0, 1.0, 1.0, 16000);
  CHECK(snr_db(ref, ref) == 200.0);

  // independent sine noise at amplitude 0.1 -> 20 dB
  AudioClip noisy = ref;
  AudioClip n = synth_tone(1333.0, 1.0, 0.1, 16000);
  for (std::size_t i = 0; i < noisy.samples.size(); ++i)
    noisy.samples[i] += n.samples[i];
  CHECK(snr_db(ref, noisy) == Catch::Approx(20.0).margin(0.1));

  AudioClip neg = ref;
  for (auto& s : neg.samples) s = -s;
  CHECK(snr_db(ref, neg) == Catch::Approx(-6.02).margin(0.1));

  AudioClip silence;
  silence.sample_rate_hz = 16000;
  silence.samples.assign(1000, 0.0);
  CHECK_THROWS(snr_db(silence, ref));
}

TEST_CASE("lsd oracles") {
  AudioClip ref = synth_tone(523.0, 1.0, 0.09, 16000);
  CHECK(lsd(ref, ref) == Catch::Approx(0.0).margin(1e-9));

  AudioClip ten = ref;
  for (auto& s : ten.samples) s *= 10.0;
  CHECK(lsd(ref, ten) == Catch::Approx(1.0).margin(1e-3));

  AudioClip other = synth_tone(997.0, 1.0, 0.4, 16000);
  CHECK(lsd(ref, other) == Catch::Approx(lsd(other, ref)));

  AudioClip tiny;
  tiny.sample_rate_hz = 16000;
  tiny.samples.assign(100, 0.1);
  CHECK_THROWS(lsd(tiny, tiny));
}

TEST_CASE("gaussian_stats hand case and sampling oracle") {
  std::vector<Eigen::VectorXd> vecs;
  Eigen::VectorXd a(2), b(2);
  a << 0, 0;
  b << 2, 0;
  vecs = {a, b};
  GaussianStats s = gaussian_stats(vecs);
  CHECK(s.mean(0) == 1.0);
  CHECK(s.mean(1) == 0.0);
  CHECK(s.cov(0, 0) == 2.0);
  CHECK(s.cov(1, 1) == 0.0);
  CHECK(gaussian_stats({b, a}).cov == s.cov);
  CHECK_THROWS(gaussian_stats({a}));

  Rng rng = Rng::keyed(12, 0);
  std::vector<Eigen::VectorXd> draws;
  for (int i = 0; i < 10000; ++i) {
    Eigen::VectorXd v(3);
    v << 1.0 + 2.0 * rng.normal(), -0.5 + 0.5 * rng.normal(), 3.0 * rng.normal();
    draws.push_back(v);
  }
  GaussianStats g = gaussian_stats(draws);
  CHECK(g.cov(0, 0) == Catch::Approx(4.0).epsilon(0.05));
  CHECK(g.cov(1, 1) == Catch::Approx(0.25).epsilon(0.05));
  CHECK(g.cov(2, 2) == Catch::Approx(9.0).epsilon(0.05));
}

TEST_CASE("frechet distance oracles") {
  GaussianStats a, b;
  a.mean = Eigen::VectorXd::Zero(1);
  a.cov = Eigen::MatrixXd::Constant(1, 1, 1.0);
  b.mean = Eigen::VectorXd::Constant(1, 3.0);
  b.cov = Eigen::MatrixXd::Constant(1, 1, 4.0);
  CHECK(frechet_distance(a, b) == Catch::Approx(10.0).margin(1e-6));
  CHECK(frechet_distance(b, a) == Catch::Approx(10.0).margin(1e-6));
  CHECK(frechet_distance(a, a) == Catch::Approx(0.0).margin(1e-8));

  // dense vs low-rank sample route agree on random data
  Rng rng = Rng::keyed(13, 0);
  Eigen::MatrixXd X(40, 6), Y(35, 6);
  for (Eigen::Index i = 0; i < X.size(); ++i) X(i) = rng.normal();
  for (Eigen::Index i = 0; i < Y.size(); ++i) Y(i) = 0.5 * rng.normal() + 0.3;
  std::vector<Eigen::VectorXd> xs, ys;
  for (int r = 0; r < X.rows(); ++r) xs.push_back(X.row(r).transpose());
  for (int r = 0; r < Y.rows(); ++r) ys.push_back(Y.row(r).transpose());
  double dense = frechet_distance(gaussian_stats(xs), gaussian_stats(ys));
  double lowrank = frechet_from_samples(X, Y);
  CHECK(lowrank == Catch::Approx(dense).margin(1e-6));
  CHECK(frechet_from_samples(X, X) == Catch::Approx(0.0).margin(1e-8));
}

TEST_CASE("spearman oracles") {
  std::vector<double> a = {1, 2, 3, 4, 5};
  CHECK(spearman_rho(a, a) == Catch::Approx(1.0));
  std::vector<double> neg = {5, 4, 3, 2, 1};
  CHECK(spearman_rho(a, neg) == Catch::Approx(-1.0));

  std::vector<double> t1 = {1, 2, 2, 4}, t2 = {10, 20, 30, 40};
  CHECK(spearman_rho(t1, t2) == Catch::Approx(spearman_oracle(t1, t2)).margin(1e-12));

  CHECK_THROWS(spearman_rho({1, 1, 1}, {1, 2, 3}));

  // 100 random tied/untied instances vs brute force
  Rng rng = Rng::keyed(14, 0);
  for (int rep = 0; rep < 100; ++rep) {
    std::size_t n = 5 + rng.next_below(20);
    std::vector<double> x(n), y(n);
    for (std::size_t i = 0; i < n; ++i) {
      x[i] = static_cast<double>(rng.next_below(8));  // ties likely
      y[i] = rng.normal();
    }
    // skip constant draws
    if (std::all_of(x.begin(), x.end(), [&](double v) { return v == x[0]; }))
      x[0] += 1.0;
    REQUIRE(spearman_rho(x, y) ==
            Catch::Approx(spearman_oracle(x, y)).margin(1e-12));
  }

  // monotone-transform invariance
  std::vector<double> u(30), w(30);
  Rng rng2 = Rng::keyed(15, 0);
  for (int i = 0; i < 30; ++i) {
    u[i] = rng2.normal();
    w[i] = rng2.normal();
  }
  std::vector<double> ue = u;
  for (auto& v : ue) v = std::exp(v);
  CHECK(spearman_rho(u, w) == Catch::Approx(spearman_rho(ue, w)).margin(1e-12));
}

TEST_CASE("d_pamt metric axioms") {
  PCSCTModel m = PCSCTModel::init(21);
  ToyEncoder enc(17);
  CorpusConfig cc;
  cc.num_classes = 2;
  cc.clips_per_class = 3;
  auto corpus = synth_corpus(cc, 3);
  std::vector<EmbeddingSequence> seqs;
  for (const auto& item : corpus) seqs.push_back(enc.encode(item.clip));

  CHECK(d_pamt(seqs[0], seqs[0], m) == 0.0);
  CHECK(d_pamt(seqs[0], seqs[1], m) == Catch::Approx(d_pamt(seqs[1], seqs[0], m)));
  Rng rng = Rng::keyed(16, 0);
  for (int rep = 0; rep < 100; ++rep) {
    std::size_t i = rng.next_below(seqs.size());
    std::size_t j = rng.next_below(seqs.size());
    std::size_t k = rng.next_below(seqs.size());
    CHECK(d_pamt(seqs[i], seqs[k], m) <=
          d_pamt(seqs[i], seqs[j], m) + d_pamt(seqs[j], seqs[k], m) + 1e-12);
  }
}

TEST_CASE("snr decreases with L2 noise strength") {
  AudioClip c = synth_tone(440.0, 2.0, 0.5, 16000);
  double prev = 1e9;
  for (double eps : {0.01, 0.05, 0.1, 0.5, 1.0}) {
    PerturbationSpec s;
    s.kind = PerturbationKind::L2Noise;
    s.eps_rel = eps;
    s.seed = 100;
    double v = snr_db(c, apply(s, c));
    CHECK(v < prev);
    prev = v;
  }
}

TEST_CASE("evaluate_metric pipeline oracles") {
  // build a synthetic dataset of severities + noiseless 2AFC scores
  CorpusConfig cc;
  cc.num_classes = 2;
  cc.clips_per_class = 5;
  auto corpus = synth_corpus(cc, 5);
  std::vector<AudioClip> clips;
  for (auto& item : corpus) clips.push_back(item.clip);
  JudgeConfig judge;
  judge.noiseless = true;
  PerceptualDataset ds = build_perceptual_dataset(clips, 77, judge);
  REQUIRE(ds.rows.size() == clips.size() * 6);

  std::vector<double> scores, g_metric;
  std::vector<std::size_t> groups;
  for (const auto& row : ds.rows) {
    scores.push_back(row.score_2afc);
    g_metric.push_back(-perceptual_severity(row.spec, judge));  // similarity-oriented
    groups.push_back(row.ref_index);
  }
  MetricEval ev = evaluate_metric(g_metric, scores, 1, groups);
  CHECK(ev.spearman >= 0.95);
  CHECK(ev.f1_percent >= 95.0);

  // random metric: rho ~ 0 averaged over seeds
  Rng rng = Rng::keyed(18, 0);
  double rho_sum = 0.0;
  for (int rep = 0; rep < 20; ++rep) {
    std::vector<double> noise(scores.size());
    for (auto& v : noise) v = rng.normal();
    MetricEval r = evaluate_metric(noise, scores, rep, groups);
    rho_sum += r.spearman;
  }
  CHECK(std::abs(rho_sum / 20.0) <= 0.15);

  std::vector<double> constant(scores.size(), 1.0);
  CHECK_THROWS(evaluate_metric(constant, scores, 1, groups));
}

TEST_CASE("per-reference 2afc conservation in the dataset builder") {
  CorpusConfig cc;
  cc.num_classes = 2;
  cc.clips_per_class = 2;
  auto corpus = synth_corpus(cc, 6);
  std::vector<AudioClip> clips;
  for (auto& item : corpus) clips.push_back(item.clip);
  PerceptualDataset ds = build_perceptual_dataset(clips, 8, JudgeConfig{});
  for (std::size_t r = 0; r < clips.size(); ++r) {
    double sum = 0.0;
    for (const auto& row : ds.rows)
      if (row.ref_index == r) sum += row.score_2afc;
    CHECK(sum == 15.0);
  }
}
