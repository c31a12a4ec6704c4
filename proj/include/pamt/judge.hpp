#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "pamt/perturb.hpp"
#include "pamt/rng.hpp"

namespace pamt {

// Ground-truth perceptual severity used by the synthetic judge: a fixed
// per-kind weight times the parameter magnitude normalized to [0, 1].
struct JudgeConfig {
  std::array<double, kNumPerturbationKinds> kind_weights = {
      0.8,  // L2Noise
      0.3,  // LInfNoise
      0.5,  // BarkBandNoise
      1.0,  // PitchShift
      0.9,  // SpeedChange
      0.4,  // DynRangeCompression
  };
  double sigmoid_width = 0.1;
  bool noiseless = false;
};

inline double normalized_magnitude(const PerturbationSpec& s) {
  switch (s.kind) {
    case PerturbationKind::L2Noise: return (s.eps_rel - 0.01) / 0.99;
    case PerturbationKind::LInfNoise: return (s.eta_rel - 0.001) / 0.009;
    case PerturbationKind::BarkBandNoise: return (s.scale - 0.1) / 0.4;
    case PerturbationKind::PitchShift: return std::abs(s.semitones) / 5.0;
    case PerturbationKind::SpeedChange: return std::abs(s.factor - 1.0) / 0.2;
    case PerturbationKind::DynRangeCompression:
      return 0.5 * ((-10.0 - s.threshold_dbfs) / 20.0 + (s.ratio - 2.0) / 6.0);
  }
  return 0.0;
}

inline double perceptual_severity(const PerturbationSpec& s,
                                  const JudgeConfig& cfg = {}) {
  return cfg.kind_weights[static_cast<std::size_t>(s.kind)] *
         normalized_magnitude(s);
}

enum class Winner { Left, Right };

struct JudgmentRecord {
  std::string ref_id;
  std::string left_id;
  std::string right_id;
  Winner winner = Winner::Left;
};

struct ScoreRecord {
  std::string clip_id;
  PerturbationSpec spec;
  int score_2afc = 0;            // in [0, 5]
  double score_mos = -1.0;       // optional, < 0 when absent
};

// Picks the perceptually closer (lower severity) sample; the choice flips
// with probability 1 / (1 + exp(|severity delta| / width)), seeded.
inline Winner synthetic_judge(const PerturbationSpec& a, const PerturbationSpec& b,
                              std::uint64_t seed, const JudgeConfig& cfg = {}) {
  double ga = perceptual_severity(a, cfg);
  double gb = perceptual_severity(b, cfg);
  Winner base = (gb < ga) ? Winner::Right : Winner::Left;
  if (cfg.noiseless) return base;
  double p_flip = 1.0 / (1.0 + std::exp(std::abs(ga - gb) / cfg.sigmoid_width));
  Rng rng = Rng::keyed(seed, 0x6a756467);
  if (rng.next_double() < p_flip)
    return base == Winner::Left ? Winner::Right : Winner::Left;
  return base;
}

// All C(6,2) = 15 round-robin judgments for one reference's 6 perturbations.
inline std::vector<JudgmentRecord> round_robin_judgments(
    const std::string& ref_id,
    const std::vector<std::pair<std::string, PerturbationSpec>>& versions,
    std::uint64_t seed, const JudgeConfig& cfg = {}) {
  if (versions.size() != 6)
    throw std::invalid_argument("round robin expects exactly 6 perturbed versions");
  std::vector<JudgmentRecord> out;
  std::uint64_t trial = 0;
  for (std::size_t i = 0; i < versions.size(); ++i) {
    for (std::size_t j = i + 1; j < versions.size(); ++j) {
      JudgmentRecord rec;
      rec.ref_id = ref_id;
      rec.left_id = versions[i].first;
      rec.right_id = versions[j].first;
      rec.winner = synthetic_judge(versions[i].second, versions[j].second,
                                   seed ^ (0x9E3779B97F4A7C15ull * ++trial), cfg);
      out.push_back(rec);
    }
  }
  return out;
}

// Win counts per perturbed sample. Requires exactly the 15 unique pairs over
// 6 versions per reference; per reference the six scores sum to 15.
inline std::map<std::string, int> derive_2afc_scores(
    const std::vector<JudgmentRecord>& judgments) {
  std::map<std::string, std::set<std::pair<std::string, std::string>>> pairs_seen;
  std::map<std::string, std::set<std::string>> members;
  std::map<std::string, int> wins;
  for (const auto& j : judgments) {
    if (j.left_id == j.right_id)
      throw std::invalid_argument("judgment compares a sample to itself");
    auto key = j.left_id < j.right_id ? std::make_pair(j.left_id, j.right_id)
                                      : std::make_pair(j.right_id, j.left_id);
    if (!pairs_seen[j.ref_id].insert(key).second)
      throw std::invalid_argument("duplicate judgment pair for reference " +
                                  j.ref_id);
    members[j.ref_id].insert(j.left_id);
    members[j.ref_id].insert(j.right_id);
    wins.try_emplace(j.left_id, 0);
    wins.try_emplace(j.right_id, 0);
    ++wins[j.winner == Winner::Left ? j.left_id : j.right_id];
  }
  for (const auto& [ref, ids] : members) {
    if (ids.size() != 6 || pairs_seen[ref].size() != 15)
      throw std::invalid_argument("reference " + ref +
                                  " is missing round-robin judgments");
  }
  return wins;
}

}  // namespace pamt
