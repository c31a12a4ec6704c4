// pamt: command-line front end for the perceptual audio metric toolkit.
//
// Subcommands: synth, perturb, embed, train, eval-metrics, fad, attack,
// defend. All randomness is seeded; repeated runs with the same config and
// seed produce bit-identical outputs.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "pamt/adversarial.hpp"
#include "pamt/audio.hpp"
#include "pamt/judge.hpp"
#include "pamt/metrics.hpp"
#include "pamt/pcsct.hpp"
#include "pamt/perturb.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "1.0.0";

struct RunConfig {
  // corpus
  int num_classes = 4;
  int clips_per_class = 8;
  double clip_seconds = 2.0;
  int sample_rate = 16000;
  // training
  double lr = 1e-4;
  double weight_decay = 1e-5;
  int batch_size = 32;
  int max_epochs = 100;
  double warmup_frac = 0.1;
  double temperature = 0.1;
  int patience = 10;
  std::uint64_t encoder_seed = 17;
  // attack / defense
  std::string attack_family = "pgd_linf_audio";
  double attack_epsilon = 0.0;  // 0 -> family default
  int attack_steps = 20;
  int bark_band = 4;
  int defense_epochs = 30;
};

RunConfig parse_config(const json& j) {
  RunConfig c;
  static const std::vector<std::string> known = {
      "num_classes", "clips_per_class", "clip_seconds", "sample_rate",
      "lr", "weight_decay", "batch_size", "max_epochs", "warmup_frac",
      "temperature", "patience", "encoder_seed", "attack_family",
      "attack_epsilon", "attack_steps", "bark_band", "defense_epochs"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end())
      throw std::invalid_argument("unknown config key: " + it.key());
  }
  auto get = [&](const char* key, auto& out) {
    if (j.contains(key)) out = j.at(key).get<std::decay_t<decltype(out)>>();
  };
  get("num_classes", c.num_classes);
  get("clips_per_class", c.clips_per_class);
  get("clip_seconds", c.clip_seconds);
  get("sample_rate", c.sample_rate);
  get("lr", c.lr);
  get("weight_decay", c.weight_decay);
  get("batch_size", c.batch_size);
  get("max_epochs", c.max_epochs);
  get("warmup_frac", c.warmup_frac);
  get("temperature", c.temperature);
  get("patience", c.patience);
  get("encoder_seed", c.encoder_seed);
  get("attack_family", c.attack_family);
  get("attack_epsilon", c.attack_epsilon);
  get("attack_steps", c.attack_steps);
  get("bark_band", c.bark_band);
  get("defense_epochs", c.defense_epochs);
  return c;
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  return h;
}

struct Common {
  std::string config_path;
  std::uint64_t seed = 0;
  std::string out;
  std::string embeddings_dir;
  std::string scores_csv;
  RunConfig cfg;
  std::string config_text = "{}";

  void load() {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) throw std::invalid_argument("cannot open config: " + config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      config_text = ss.str();
      cfg = parse_config(json::parse(config_text));
    }
  }

  std::string provenance() const {
    std::ostringstream os;
    os << "# pamt " << kVersion << " config_hash=" << std::hex
       << fnv1a(config_text) << std::dec << " seed=" << seed;
    return os.str();
  }
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--config", c.config_path, "JSON run configuration");
  sub->add_option("--seed", c.seed, "master RNG seed");
  sub->add_option("--out", c.out, "output file or directory");
  sub->add_option("--embeddings-dir", c.embeddings_dir,
                  "directory of .pemb embedding files");
  sub->add_option("--scores-csv", c.scores_csv, "path to a 2AFC scores CSV");
}

pamt::AttackFamily family_from_name(const std::string& s) {
  if (s == "pgd_linf_audio") return pamt::AttackFamily::PgdLinfAudio;
  if (s == "pgd_dpamt") return pamt::AttackFamily::PgdDpamt;
  if (s == "bark_constrained") return pamt::AttackFamily::BarkConstrained;
  throw std::invalid_argument("unknown attack family: " + s);
}

std::vector<pamt::LabeledClip> make_corpus(const Common& c) {
  pamt::CorpusConfig cc;
  cc.num_classes = c.cfg.num_classes;
  cc.clips_per_class = c.cfg.clips_per_class;
  cc.clip_seconds = c.cfg.clip_seconds;
  cc.sample_rate_hz = c.cfg.sample_rate;
  return pamt::synth_corpus(cc, c.seed);
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char ch : s) {
    if (ch == '"') out += '"';
    out += ch;
  }
  return out + "\"";
}

// ---- subcommand bodies ----

int run_synth(Common& c) {
  if (c.out.empty()) throw std::invalid_argument("synth requires --out");
  fs::create_directories(c.out);
  auto corpus = make_corpus(c);
  std::ofstream manifest(fs::path(c.out) / "manifest.csv");
  manifest << c.provenance() << "\n" << "file,label\n";
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    std::ostringstream name;
    name << "clip_" << std::setw(4) << std::setfill('0') << i << ".wav";
    pamt::write_wav(corpus[i].clip, (fs::path(c.out) / name.str()).string());
    manifest << name.str() << "," << corpus[i].label << "\n";
  }
  std::cout << "wrote " << corpus.size() << " clips to " << c.out << "\n";
  return 0;
}

struct PerturbFlags {
  std::string kind;
  double semitones = 0.0, eps_rel = 0.1, eta_rel = 0.005, scale = 0.3,
         factor = 1.1, threshold = -20.0, ratio = 4.0;
  int band = 4;
};

pamt::PerturbationSpec spec_from_flags(const PerturbFlags& f, std::uint64_t seed) {
  pamt::PerturbationSpec s;
  s.seed = seed;
  if (f.kind == "l2") {
    s.kind = pamt::PerturbationKind::L2Noise;
    s.eps_rel = f.eps_rel;
  } else if (f.kind == "linf") {
    s.kind = pamt::PerturbationKind::LInfNoise;
    s.eta_rel = f.eta_rel;
  } else if (f.kind == "bark") {
    s.kind = pamt::PerturbationKind::BarkBandNoise;
    s.band_index = f.band;
    s.scale = f.scale;
  } else if (f.kind == "pitch") {
    s.kind = pamt::PerturbationKind::PitchShift;
    s.semitones = f.semitones;
  } else if (f.kind == "speed") {
    s.kind = pamt::PerturbationKind::SpeedChange;
    s.factor = f.factor;
  } else if (f.kind == "drc") {
    s.kind = pamt::PerturbationKind::DynRangeCompression;
    s.threshold_dbfs = f.threshold;
    s.ratio = f.ratio;
  } else {
    throw std::invalid_argument("unknown perturbation kind: " + f.kind);
  }
  return s;
}

int run_perturb(Common& c, const std::string& in_wav, const std::string& spec_path,
                const PerturbFlags& flags) {
  if (c.out.empty()) throw std::invalid_argument("perturb requires --out");
  pamt::AudioClip clip = pamt::read_wav(in_wav);
  pamt::PerturbationSpec spec;
  if (!spec_path.empty()) {
    std::ifstream in(spec_path);
    if (!in) throw std::invalid_argument("cannot open spec: " + spec_path);
    json j = json::parse(in);
    spec = j.get<pamt::PerturbationSpec>();
  } else if (!flags.kind.empty()) {
    spec = spec_from_flags(flags, c.seed);
  } else {
    spec = pamt::sample_spec(c.seed);
  }
  pamt::write_wav(pamt::apply(spec, clip), c.out);
  std::ofstream sidecar(c.out + ".json");
  sidecar << json(spec).dump(2) << "\n";
  std::cout << json(spec).dump() << "\n";
  return 0;
}

int run_embed(Common& c, const std::string& in_path) {
  if (c.out.empty()) throw std::invalid_argument("embed requires --out");
  pamt::ToyEncoder enc(c.cfg.encoder_seed);
  auto embed_one = [&](const fs::path& wav, const fs::path& dst) {
    pamt::write_embeddings(enc.encode(pamt::read_wav(wav.string())), dst.string());
  };
  if (fs::is_directory(in_path)) {
    fs::create_directories(c.out);
    std::vector<fs::path> wavs;
    for (const auto& e : fs::directory_iterator(in_path))
      if (e.path().extension() == ".wav") wavs.push_back(e.path());
    std::sort(wavs.begin(), wavs.end());
    for (const auto& w : wavs)
      embed_one(w, fs::path(c.out) / (w.stem().string() + ".pemb"));
    std::cout << "embedded " << wavs.size() << " files\n";
  } else {
    embed_one(in_path, c.out);
  }
  return 0;
}

int run_train(Common& c) {
  if (c.out.empty()) throw std::invalid_argument("train requires --out");
  auto corpus = make_corpus(c);
  std::vector<pamt::AudioClip> clips;
  for (const auto& item : corpus) clips.push_back(item.clip);
  pamt::TrainConfig tc;
  tc.lr = c.cfg.lr;
  tc.weight_decay = c.cfg.weight_decay;
  tc.batch_size = c.cfg.batch_size;
  tc.max_epochs = c.cfg.max_epochs;
  tc.warmup_frac = c.cfg.warmup_frac;
  tc.temperature = c.cfg.temperature;
  tc.patience = c.cfg.patience;
  tc.seed = c.seed;
  tc.encoder_seed = c.cfg.encoder_seed;
  pamt::ToyEncoder enc(tc.encoder_seed);
  pamt::TrainResult res = pamt::train(clips, tc, enc);
  res.model.save(c.out);
  fs::path log_path = fs::path(c.out).replace_extension(".log.csv");
  std::ofstream log(log_path);
  log << c.provenance() << "\n" << "step,epoch,lr,loss,val_spearman\n";
  for (const auto& row : res.log)
    log << row.step << "," << row.epoch << "," << row.lr << "," << row.loss
        << "," << row.val_spearman << "\n";
  std::cout << "best_epoch=" << res.best_epoch
            << " best_val_spearman=" << res.best_val_spearman << "\n";
  return 0;
}

int run_eval_metrics(Common& c, const std::string& checkpoint) {
  if (c.out.empty()) throw std::invalid_argument("eval-metrics requires --out");
  auto corpus = make_corpus(c);
  std::vector<pamt::AudioClip> clips;
  for (const auto& item : corpus) clips.push_back(item.clip);
  pamt::ToyEncoder enc(c.cfg.encoder_seed);
  pamt::JudgeConfig judge;
  pamt::PerceptualDataset data =
      pamt::build_perceptual_dataset(clips, c.seed ^ 0xe7a1, judge);

  pamt::PCSCTModel model;
  bool have_model = !checkpoint.empty();
  if (have_model) model = pamt::PCSCTModel::load(checkpoint);

  Eigen::RowVectorXd null_c;
  if (have_model) null_c = pamt::null_conditioning(model);
  std::vector<double> scores, snr_vals, lsd_vals, fad_vals, raw_cos_vals,
      fad_pamt_vals, dpamt_vals;
  std::vector<std::size_t> groups;
  for (const auto& row : data.rows) {
    scores.push_back(row.score_2afc);
    groups.push_back(row.ref_index);
    const pamt::AudioClip& ref = clips[row.ref_index];
    snr_vals.push_back(pamt::snr_db(ref, row.pert));
    lsd_vals.push_back(-pamt::lsd(ref, row.pert));
    pamt::EmbeddingSequence er = enc.encode(ref);
    pamt::EmbeddingSequence ep = enc.encode(row.pert);
    fad_vals.push_back(-pamt::frechet_from_samples(er.data, ep.data));
    Eigen::VectorXd pr = er.pooled(), pp = ep.pooled();
    raw_cos_vals.push_back(pr.dot(pp) / (pr.norm() * pp.norm()));
    if (have_model) {
      pamt::EmbeddingSequence zr = pamt::embed_pamt(er, model, &null_c);
      pamt::EmbeddingSequence zp = pamt::embed_pamt(ep, model, &null_c);
      fad_pamt_vals.push_back(-pamt::frechet_from_samples(zr.data, zp.data));
      dpamt_vals.push_back(-(zr.pooled() - zp.pooled()).norm());
    }
  }

  std::ofstream out(c.out);
  out << c.provenance() << "\n" << "metric,spearman,f1_percent,threshold\n";
  auto emit = [&](const char* name, const std::vector<double>& vals) {
    pamt::MetricEval ev =
        pamt::evaluate_metric(vals, scores, c.seed ^ 0x511, groups);
    out << name << "," << ev.spearman << "," << ev.f1_percent << ","
        << ev.threshold << "\n";
    std::cout << name << ": rho=" << ev.spearman << " f1=" << ev.f1_percent
              << "\n";
  };
  emit("snr", snr_vals);
  emit("lsd", lsd_vals);
  emit("fad_raw", fad_vals);
  emit("raw_pooled_cos", raw_cos_vals);
  if (have_model) {
    emit("fad_pamt", fad_pamt_vals);
    emit("d_pamt", dpamt_vals);
  }
  return 0;
}

std::vector<Eigen::MatrixXd> load_embedding_dir(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ".pemb") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("no .pemb files in " + dir);
  std::vector<Eigen::MatrixXd> out;
  for (const auto& f : files)
    out.push_back(pamt::read_embeddings(f.string()).data);
  return out;
}

int run_fad(Common& c, const std::string& dir_a, const std::string& dir_b) {
  auto stack = [](const std::vector<Eigen::MatrixXd>& seqs) {
    Eigen::Index rows = 0;
    for (const auto& s : seqs) rows += s.rows();
    Eigen::MatrixXd all(rows, seqs.front().cols());
    Eigen::Index at = 0;
    for (const auto& s : seqs) {
      all.middleRows(at, s.rows()) = s;
      at += s.rows();
    }
    return all;
  };
  Eigen::MatrixXd a = stack(load_embedding_dir(dir_a));
  Eigen::MatrixXd b = stack(load_embedding_dir(dir_b));
  double fad = pamt::frechet_from_samples(a, b);
  std::cout << "fad=" << fad << "\n";
  if (!c.out.empty()) {
    std::ofstream out(c.out);
    out << c.provenance() << "\n" << "metric,value\n" << "fad," << fad << "\n";
  }
  return 0;
}

struct AttackSetup {
  pamt::PCSCTModel model;
  pamt::ToyEncoder encoder;
  std::vector<pamt::LabeledClip> train_set, test_set;
  pamt::AttackConfig attack;

  AttackSetup(Common& c, const std::string& checkpoint)
      : model(pamt::PCSCTModel::load(checkpoint)), encoder(c.cfg.encoder_seed) {
    auto corpus = make_corpus(c);
    // deterministic stratified-ish split: last quarter of each class to test
    for (std::size_t i = 0; i < corpus.size(); ++i) {
      if (i % 4 == 3) test_set.push_back(corpus[i]);
      else train_set.push_back(corpus[i]);
    }
    attack.family = family_from_name(c.cfg.attack_family);
    attack.steps = c.cfg.attack_steps;
    attack.bark_band = c.cfg.bark_band;
    attack.seed = c.seed;
    attack.epsilon = c.cfg.attack_epsilon;
    if (attack.epsilon <= 0.0) {
      double peak = 0.0;
      for (const auto& item : corpus) peak = std::max(peak, item.clip.peak());
      if (attack.family == pamt::AttackFamily::PgdDpamt) {
        // budget from the distribution of benign perturbation distances
        std::vector<double> dists;
        pamt::Rng rng = pamt::Rng::keyed(c.seed, 0xd15);
        for (int i = 0; i < 24; ++i) {
          const auto& clip = corpus[i % corpus.size()].clip;
          auto spec = pamt::sample_spec(rng.next_u64());
          dists.push_back(
              pamt::d_pamt(clip, pamt::apply(spec, clip), model, encoder));
        }
        std::sort(dists.begin(), dists.end());
        attack.epsilon = dists[dists.size() / 4];
      } else {
        attack.epsilon = 0.005 * peak;
      }
    }
  }
};

int run_attack(Common& c, const std::string& checkpoint) {
  AttackSetup setup(c, checkpoint);
  pamt::ClassifierTrainConfig ct;
  ct.seed = c.seed;
  auto trained = pamt::adversarial_train(setup.train_set, setup.model,
                                         setup.encoder, c.cfg.num_classes, ct);
  pamt::RobustReport rep = pamt::union_robust_accuracy(
      trained.classifier, setup.model, setup.encoder, setup.test_set,
      {setup.attack});
  std::cout << "clean=" << rep.clean_accuracy
            << " robust(" << rep.per_family[0].first
            << ")=" << rep.per_family[0].second << "\n";
  if (!c.out.empty()) {
    std::ofstream out(c.out);
    out << c.provenance() << "\n" << "metric,value\n";
    out << "clean_accuracy," << rep.clean_accuracy << "\n";
    out << csv_field("robust_" + rep.per_family[0].first) << ","
        << rep.per_family[0].second << "\n";
  }
  return 0;
}

int run_defend(Common& c, const std::string& checkpoint) {
  AttackSetup setup(c, checkpoint);
  pamt::ClassifierTrainConfig ct;
  ct.seed = c.seed;
  ct.epochs = c.cfg.defense_epochs;
  ct.attack = setup.attack;
  auto trained = pamt::adversarial_train(setup.train_set, setup.model,
                                         setup.encoder, c.cfg.num_classes, ct);
  pamt::RobustReport rep = pamt::union_robust_accuracy(
      trained.classifier, setup.model, setup.encoder, setup.test_set,
      {setup.attack});
  std::cout << "clean=" << rep.clean_accuracy
            << " robust(" << rep.per_family[0].first
            << ")=" << rep.per_family[0].second << "\n";
  if (!c.out.empty()) {
    std::ofstream out(c.out);
    out << c.provenance() << "\n" << "metric,value\n";
    out << "clean_accuracy," << rep.clean_accuracy << "\n";
    out << csv_field("robust_" + rep.per_family[0].first) << ","
        << rep.per_family[0].second << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"perceptual audio metric toolkit"};
  app.require_subcommand(1);
  Common c;

  std::string in_path, spec_path, checkpoint, dir_a, dir_b;

  auto* synth = app.add_subcommand("synth", "generate a synthetic corpus");
  add_common(synth, c);

  PerturbFlags pf;
  auto* perturb = app.add_subcommand("perturb", "apply a perturbation to a WAV");
  add_common(perturb, c);
  perturb->add_option("input", in_path, "input WAV")->required();
  perturb->add_option("--spec", spec_path, "perturbation spec JSON");
  perturb->add_option("--kind", pf.kind, "l2|linf|bark|pitch|speed|drc");
  perturb->add_option("--semitones", pf.semitones, "pitch shift in semitones");
  perturb->add_option("--eps-rel", pf.eps_rel, "L2 noise budget");
  perturb->add_option("--eta-rel", pf.eta_rel, "L-inf noise budget");
  perturb->add_option("--band", pf.band, "Bark band index");
  perturb->add_option("--scale", pf.scale, "Bark noise energy scale");
  perturb->add_option("--factor", pf.factor, "speed factor");
  perturb->add_option("--threshold", pf.threshold, "compressor threshold dBFS");
  perturb->add_option("--ratio", pf.ratio, "compression ratio");

  auto* embed = app.add_subcommand("embed", "encode WAVs to embeddings");
  add_common(embed, c);
  embed->add_option("input", in_path, "input WAV or directory")->required();

  auto* train = app.add_subcommand("train", "train the metric model");
  add_common(train, c);

  auto* evalm = app.add_subcommand("eval-metrics",
                                   "score objective metrics against 2AFC data");
  add_common(evalm, c);
  evalm->add_option("--checkpoint", checkpoint, "trained model checkpoint");

  auto* fad = app.add_subcommand("fad", "Frechet distance between embedding sets");
  add_common(fad, c);
  fad->add_option("dir_a", dir_a, "first embedding directory")->required();
  fad->add_option("dir_b", dir_b, "second embedding directory")->required();

  auto* atk = app.add_subcommand("attack", "attack an undefended classifier");
  add_common(atk, c);
  atk->add_option("--checkpoint", checkpoint, "trained model checkpoint")
      ->required();

  auto* def = app.add_subcommand("defend", "adversarially train a classifier");
  add_common(def, c);
  def->add_option("--checkpoint", checkpoint, "trained model checkpoint")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    c.load();
    if (*synth) return run_synth(c);
    if (*perturb) return run_perturb(c, in_path, spec_path, pf);
    if (*embed) return run_embed(c, in_path);
    if (*train) return run_train(c);
    if (*evalm) return run_eval_metrics(c, checkpoint);
    if (*fad) return run_fad(c, dir_a, dir_b);
    if (*atk) return run_attack(c, checkpoint);
    if (*def) return run_defend(c, checkpoint);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
