#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "pamt/adversarial.hpp"
#include "pamt/audio.hpp"

using namespace pamt;

namespace {

struct Fixture {
  PCSCTModel model = PCSCTModel::init(31);
  ToyEncoder encoder{17};
  std::vector<LabeledClip> corpus;

  Fixture() {
    CorpusConfig cc;
    cc.num_classes = 3;
    cc.clips_per_class = 4;
    cc.clip_seconds = 1.0;
    corpus = synth_corpus(cc, 5);
  }
};

double cross_entropy(const Classifier& clf, const Eigen::VectorXd& z, int label) {
  Eigen::RowVectorXd logits = clf.logits(z);
  double mx = logits.maxCoeff();
  double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits(label);
}

}  // namespace

TEST_CASE("standard training reaches high clean accuracy") {
  Fixture fx;
  ClassifierTrainConfig cfg;
  cfg.seed = 2;
  auto res = adversarial_train(fx.corpus, fx.model, fx.encoder, 3, cfg);
  int correct = 0;
  for (const auto& item : fx.corpus) {
    Eigen::VectorXd z = pooled_pamt_embedding(item.clip, fx.model, fx.encoder);
    if (res.classifier.predict(z) == item.label) ++correct;
  }
  CHECK(double(correct) / fx.corpus.size() >= 0.9);
  CHECK(res.epoch_losses.back() < res.epoch_losses.front());
}

TEST_CASE("training is deterministic under seed") {
  Fixture fx;
  ClassifierTrainConfig cfg;
  cfg.epochs = 5;
  cfg.seed = 3;
  auto a = adversarial_train(fx.corpus, fx.model, fx.encoder, 3, cfg);
  auto b = adversarial_train(fx.corpus, fx.model, fx.encoder, 3, cfg);
  REQUIRE(a.classifier.w == b.classifier.w);
  REQUIRE(a.classifier.b == b.classifier.b);
}

TEST_CASE("attack with zero budget is the identity") {
  Fixture fx;
  Classifier clf = Classifier::init(128, 3, 1);
  AttackConfig cfg;
  cfg.epsilon = 0.0;
  AudioClip out = attack(fx.corpus[0].clip, fx.corpus[0].label, clf, fx.model,
                         fx.encoder, cfg);
  REQUIRE(out.samples == fx.corpus[0].clip.samples);
}

TEST_CASE("attacks satisfy their budgets and increase the loss") {
  Fixture fx;
  ClassifierTrainConfig tcfg;
  tcfg.seed = 4;
  tcfg.epochs = 15;
  Classifier clf =
      adversarial_train(fx.corpus, fx.model, fx.encoder, 3, tcfg).classifier;

  double peak = 0.0;
  for (const auto& item : fx.corpus) peak = std::max(peak, item.clip.peak());

  // d_PAMT budget: use a representative benign-perturbation distance
  PerturbationSpec bs = sample_spec(9, static_cast<int>(PerturbationKind::LInfNoise));
  double eps_d =
      d_pamt(fx.corpus[0].clip, apply(bs, fx.corpus[0].clip), fx.model, fx.encoder);

  std::vector<AttackConfig> families(3);
  families[0].family = AttackFamily::PgdLinfAudio;
  families[0].epsilon = 0.005 * peak;
  families[0].steps = 8;
  families[1].family = AttackFamily::PgdDpamt;
  families[1].epsilon = std::max(1e-4, eps_d);
  families[1].steps = 6;
  families[2].family = AttackFamily::BarkConstrained;
  families[2].epsilon = 0.005 * peak;
  families[2].steps = 8;
  families[2].bark_band = 6;

  int ascent = 0, total = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& item = fx.corpus[i * 3];
    for (const auto& cfg : families) {
      AudioClip adv = attack(item.clip, item.label, clf, fx.model, fx.encoder, cfg);
      REQUIRE(constraint_satisfied(item.clip, adv, fx.model, fx.encoder, cfg));
      double ce_clean = cross_entropy(
          clf, pooled_pamt_embedding(item.clip, fx.model, fx.encoder), item.label);
      double ce_adv = cross_entropy(
          clf, pooled_pamt_embedding(adv, fx.model, fx.encoder), item.label);
      if (ce_adv >= ce_clean - 1e-9) ++ascent;
      ++total;
      for (double s : adv.samples) {
        REQUIRE(s <= 1.0);
        REQUIRE(s >= -1.0);
      }
    }
  }
  CHECK(double(ascent) / total >= 0.9);
}

TEST_CASE("bark-constrained attack stays within its L-inf budget") {
  Fixture fx;
  Classifier clf = Classifier::init(128, 3, 7);
  AttackConfig cfg;
  cfg.family = AttackFamily::BarkConstrained;
  cfg.epsilon = 0.003;
  cfg.steps = 5;
  cfg.bark_band = 10;
  const auto& item = fx.corpus[1];
  AudioClip adv = attack(item.clip, item.label, clf, fx.model, fx.encoder, cfg);
  double linf = 0.0;
  for (std::size_t i = 0; i < adv.samples.size(); ++i)
    linf = std::max(linf, std::abs(adv.samples[i] - item.clip.samples[i]));
  CHECK(linf <= cfg.epsilon * (1.0 + 1e-9));
  CHECK(linf > 0.0);
}

TEST_CASE("union accuracy bounds") {
  Fixture fx;
  ClassifierTrainConfig tcfg;
  tcfg.seed = 6;
  tcfg.epochs = 15;
  Classifier clf =
      adversarial_train(fx.corpus, fx.model, fx.encoder, 3, tcfg).classifier;

  std::vector<LabeledClip> test_set(fx.corpus.begin(), fx.corpus.begin() + 6);
  AttackConfig a;
  a.family = AttackFamily::PgdLinfAudio;
  a.epsilon = 0.004;
  a.steps = 5;
  AttackConfig b = a;
  b.family = AttackFamily::BarkConstrained;
  b.bark_band = 5;

  RobustReport one = union_robust_accuracy(clf, fx.model, fx.encoder, test_set, {a});
  CHECK(one.union_accuracy == one.per_family[0].second);

  RobustReport two =
      union_robust_accuracy(clf, fx.model, fx.encoder, test_set, {a, b});
  CHECK(two.union_accuracy <= two.per_family[0].second);
  CHECK(two.union_accuracy <= two.per_family[1].second);
  CHECK(two.union_accuracy <= one.union_accuracy + 1e-12);
  CHECK(two.clean_accuracy >= two.union_accuracy);
}

TEST_CASE("adversarial training keeps the PAMT model frozen") {
  Fixture fx;
  std::vector<Eigen::MatrixXd> before = fx.model.params();
  ClassifierTrainConfig cfg;
  cfg.seed = 8;
  cfg.epochs = 2;
  cfg.attack.family = AttackFamily::PgdLinfAudio;
  cfg.attack.epsilon = 0.004;
  cfg.attack.steps = 2;
  adversarial_train(fx.corpus, fx.model, fx.encoder, 3, cfg);
  for (std::size_t i = 0; i < before.size(); ++i)
    REQUIRE(fx.model.params()[i] == before[i]);
}
