#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "pamt/audio.hpp"
#include "pamt/autodiff.hpp"
#include "pamt/embedding.hpp"
#include "pamt/judge.hpp"
#include "pamt/nn.hpp"
#include "pamt/perturb.hpp"
#include "pamt/rng.hpp"
#include "pamt/stats.hpp"

namespace pamt {

struct PCSCTDims {
  int input = kEncoderDim;  // 768
  int d_model = 256;
  int heads = 4;
  int layers = 4;
  int ffn_inner = 1024;
  int output = kPamtDim;  // 128
  int cond = 64;
  int param_vec = kParamVectorLength;  // 10
};

// All learnable parameters of the projection head, PPE and FiLM generators,
// as an ordered list of named matrices (biases are 1 x D rows).
class PCSCTModel {
 public:
  PCSCTDims dims;

  PCSCTModel() = default;

  static PCSCTModel init(std::uint64_t seed, PCSCTDims dims = {}) {
    PCSCTModel m;
    m.dims = dims;
    Rng rng = Rng::keyed(seed, 0x6d6f64656c);
    auto lin = [&](const std::string& name, int in, int out) {
      m.add(name + ".w", init_linear_weight(in, out, rng));
      m.add(name + ".b", Eigen::MatrixXd::Zero(1, out));
    };
    lin("in_proj", dims.input, dims.d_model);
    for (int l = 0; l < dims.layers; ++l) {
      std::string p = "layer" + std::to_string(l) + ".";
      m.add(p + "ln1.g", Eigen::MatrixXd::Ones(1, dims.d_model));
      m.add(p + "ln1.b", Eigen::MatrixXd::Zero(1, dims.d_model));
      lin(p + "attn.q", dims.d_model, dims.d_model);
      lin(p + "attn.k", dims.d_model, dims.d_model);
      lin(p + "attn.v", dims.d_model, dims.d_model);
      lin(p + "attn.o", dims.d_model, dims.d_model);
      m.add(p + "ln2.g", Eigen::MatrixXd::Ones(1, dims.d_model));
      m.add(p + "ln2.b", Eigen::MatrixXd::Zero(1, dims.d_model));
      lin(p + "ffn.1", dims.d_model, dims.ffn_inner);
      lin(p + "ffn.2", dims.ffn_inner, dims.d_model);
      // FiLM generator starts as the identity modulation: gamma = 1, beta = 0.
      m.add(p + "film.w", Eigen::MatrixXd::Zero(dims.cond, 2 * dims.d_model));
      Eigen::MatrixXd fb = Eigen::MatrixXd::Zero(1, 2 * dims.d_model);
      fb.leftCols(dims.d_model).setOnes();
      m.add(p + "film.b", fb);
    }
    lin("out_proj", dims.d_model, dims.output);
    lin("ppe.1", dims.param_vec, dims.cond);
    lin("ppe.2", dims.cond, dims.cond);
    return m;
  }

  const std::vector<std::string>& names() const { return names_; }
  std::vector<Eigen::MatrixXd>& params() { return params_; }
  const std::vector<Eigen::MatrixXd>& params() const { return params_; }

  int index(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end())
      throw std::invalid_argument("unknown parameter: " + name);
    return it->second;
  }
  const Eigen::MatrixXd& param(const std::string& name) const {
    return params_[static_cast<std::size_t>(index(name))];
  }
  Eigen::MatrixXd& param(const std::string& name) {
    return params_[static_cast<std::size_t>(index(name))];
  }

  TensorMap to_tensor_map() const {
    TensorMap out;
    for (std::size_t i = 0; i < names_.size(); ++i) out[names_[i]] = params_[i];
    return out;
  }

  static PCSCTModel from_tensor_map(const TensorMap& tensors, PCSCTDims dims = {}) {
    PCSCTModel ref = init(0, dims);
    for (std::size_t i = 0; i < ref.names_.size(); ++i) {
      auto it = tensors.find(ref.names_[i]);
      if (it == tensors.end())
        throw std::runtime_error("checkpoint missing tensor " + ref.names_[i]);
      if (it->second.rows() != ref.params_[i].rows() ||
          it->second.cols() != ref.params_[i].cols())
        throw std::runtime_error("checkpoint shape mismatch for " + ref.names_[i]);
      ref.params_[i] = it->second;
    }
    return ref;
  }

  void save(const std::string& path) const { write_checkpoint(to_tensor_map(), path); }
  static PCSCTModel load(const std::string& path, PCSCTDims dims = {}) {
    return from_tensor_map(read_checkpoint(path), dims);
  }

 private:
  void add(const std::string& name, Eigen::MatrixXd v) {
    index_[name] = static_cast<int>(params_.size());
    names_.push_back(name);
    params_.push_back(std::move(v));
  }

  std::vector<std::string> names_;
  std::vector<Eigen::MatrixXd> params_;
  std::map<std::string, int> index_;
};

// Parameter leaves of one model inside a graph, in model parameter order.
template <typename S>
struct ParamLeaves {
  std::vector<int> ids;
  const PCSCTModel* model = nullptr;

  int at(const std::string& name) const {
    return ids[static_cast<std::size_t>(model->index(name))];
  }
};

template <typename S>
ParamLeaves<S> make_param_leaves(Graph<S>& g, const PCSCTModel& m,
                                 bool needs_grad) {
  ParamLeaves<S> leaves;
  leaves.model = &m;
  for (const auto& p : m.params())
    leaves.ids.push_back(g.leaf(p.template cast<S>(), needs_grad));
  return leaves;
}

// PPE: 2-layer MLP, ReLU after the first layer, 10 -> 64 -> 64.
template <typename S>
int ppe_forward(Graph<S>& g, const ParamLeaves<S>& p, int param_vec) {
  int h = g.relu(g.add_rowvec(g.matmul(param_vec, p.at("ppe.1.w")), p.at("ppe.1.b")));
  return g.add_rowvec(g.matmul(h, p.at("ppe.2.w")), p.at("ppe.2.b"));
}

// Pre-LN transformer with FiLM applied to the FFN output inside the residual
// branch:  x <- x + Attn(LN(x));  x <- x + FiLM(FFN(LN(x)), c).
template <typename S>
int pcsct_forward(Graph<S>& g, const ParamLeaves<S>& p, int embeddings, int cond) {
  const PCSCTDims& d = p.model->dims;
  const Eigen::Index t = g.value(embeddings).rows();
  int x = g.add_rowvec(g.matmul(embeddings, p.at("in_proj.w")), p.at("in_proj.b"));
  int pe = g.leaf(sinusoidal_positions(t, d.d_model).template cast<S>());
  x = g.add(x, pe);
  for (int l = 0; l < d.layers; ++l) {
    std::string pre = "layer" + std::to_string(l) + ".";
    try {
      int xn = g.layer_norm(x, p.at(pre + "ln1.g"), p.at(pre + "ln1.b"));
      int attn = multi_head_self_attention(
          g, xn, p.at(pre + "attn.q.w"), p.at(pre + "attn.q.b"),
          p.at(pre + "attn.k.w"), p.at(pre + "attn.k.b"),
          p.at(pre + "attn.v.w"), p.at(pre + "attn.v.b"),
          p.at(pre + "attn.o.w"), p.at(pre + "attn.o.b"), d.heads);
      x = g.add(x, attn);
      int fn = g.layer_norm(x, p.at(pre + "ln2.g"), p.at(pre + "ln2.b"));
      int h = g.gelu(g.add_rowvec(g.matmul(fn, p.at(pre + "ffn.1.w")),
                                  p.at(pre + "ffn.1.b")));
      int ffn = g.add_rowvec(g.matmul(h, p.at(pre + "ffn.2.w")),
                             p.at(pre + "ffn.2.b"));
      int gb = g.add_rowvec(g.matmul(cond, p.at(pre + "film.w")),
                            p.at(pre + "film.b"));
      int gamma = g.slice_cols(gb, 0, d.d_model);
      int beta = g.slice_cols(gb, d.d_model, d.d_model);
      x = g.add(x, g.film(ffn, gamma, beta));
    } catch (const std::domain_error& e) {
      throw std::domain_error("pcsct layer " + std::to_string(l) + ": " + e.what());
    }
  }
  return g.add_rowvec(g.matmul(x, p.at("out_proj.w")), p.at("out_proj.b"));
}

// ---- fast tape-free forward (inference) ----

// Tape-free forward, templated on scalar so the attack path can run in
// single precision. `param(name)` must return a const Matrix<S> reference.
template <typename S, typename ParamFn>
Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic> pcsct_forward_numeric_t(
    const PCSCTDims& d, ParamFn&& param,
    const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>& embeddings,
    const Eigen::Matrix<S, 1, Eigen::Dynamic>& cond) {
  using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
  const Eigen::Index t = embeddings.rows();
  Mat x = (embeddings * param("in_proj.w")).rowwise() + param("in_proj.b").row(0);
  x += sinusoidal_positions(t, d.d_model).template cast<S>();
  const Eigen::Index dh = d.d_model / d.heads;
  for (int l = 0; l < d.layers; ++l) {
    std::string p = "layer" + std::to_string(l) + ".";
    Mat xn(t, d.d_model);
    {
      const Mat& g = param(p + "ln1.g");
      const Mat& b = param(p + "ln1.b");
      for (Eigen::Index r = 0; r < t; ++r) {
        S mu = x.row(r).mean();
        S var = (x.row(r).array() - mu).square().mean();
        xn.row(r) = (((x.row(r).array() - mu) / std::sqrt(var + S(1e-5))) *
                     g.row(0).array() + b.row(0).array()).matrix();
      }
    }
    Mat q = (xn * param(p + "attn.q.w")).rowwise() + param(p + "attn.q.b").row(0);
    Mat k = (xn * param(p + "attn.k.w")).rowwise() + param(p + "attn.k.b").row(0);
    Mat v = (xn * param(p + "attn.v.w")).rowwise() + param(p + "attn.v.b").row(0);
    Mat heads_out(t, d.d_model);
    for (int h = 0; h < d.heads; ++h) {
      Mat scores = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose() /
                   std::sqrt(static_cast<S>(dh));
      for (Eigen::Index r = 0; r < t; ++r) {
        S mx = scores.row(r).maxCoeff();
        Eigen::Array<S, 1, Eigen::Dynamic> e = (scores.row(r).array() - mx).exp();
        scores.row(r) = (e / e.sum()).matrix();
      }
      heads_out.middleCols(h * dh, dh) = scores * v.middleCols(h * dh, dh);
    }
    x += (heads_out * param(p + "attn.o.w")).rowwise() + param(p + "attn.o.b").row(0);
    Mat fn(t, d.d_model);
    {
      const Mat& g = param(p + "ln2.g");
      const Mat& b = param(p + "ln2.b");
      for (Eigen::Index r = 0; r < t; ++r) {
        S mu = x.row(r).mean();
        S var = (x.row(r).array() - mu).square().mean();
        fn.row(r) = (((x.row(r).array() - mu) / std::sqrt(var + S(1e-5))) *
                     g.row(0).array() + b.row(0).array()).matrix();
      }
    }
    Mat h1 = (fn * param(p + "ffn.1.w")).rowwise() + param(p + "ffn.1.b").row(0);
    for (Eigen::Index i = 0; i < h1.size(); ++i)
      h1(i) = S(0.5) * h1(i) * (S(1) + std::erf(h1(i) / S(std::sqrt(2.0))));
    Mat ffn = (h1 * param(p + "ffn.2.w")).rowwise() + param(p + "ffn.2.b").row(0);
    Eigen::Matrix<S, 1, Eigen::Dynamic> gb =
        cond * param(p + "film.w") + param(p + "film.b").row(0);
    Mat mod = (ffn.array().rowwise() * gb.head(d.d_model).array()).matrix();
    mod.rowwise() += gb.tail(d.d_model);
    if (!mod.allFinite())
      throw std::domain_error("pcsct layer " + std::to_string(l) +
                              ": non-finite activations");
    x += mod;
  }
  return (x * param("out_proj.w")).rowwise() + param("out_proj.b").row(0);
}

inline Eigen::RowVectorXd ppe_forward_numeric(const PCSCTModel& m,
                                              const Eigen::RowVectorXd& pvec) {
  Eigen::RowVectorXd h =
      ((pvec * m.param("ppe.1.w") + m.param("ppe.1.b")).array().max(0.0)).matrix();
  return h * m.param("ppe.2.w") + m.param("ppe.2.b");
}

inline Eigen::RowVectorXd null_conditioning(const PCSCTModel& m) {
  return ppe_forward_numeric(m, Eigen::RowVectorXd::Zero(m.dims.param_vec));
}

inline Eigen::MatrixXd pcsct_forward_numeric(const PCSCTModel& m,
                                             const Eigen::MatrixXd& embeddings,
                                             const Eigen::RowVectorXd& cond) {
  auto param = [&m](const std::string& name) -> const Eigen::MatrixXd& {
    return m.param(name);
  };
  Eigen::Matrix<double, 1, Eigen::Dynamic> c = cond;
  return pcsct_forward_numeric_t<double>(m.dims, param, embeddings, c);
}

// Single-precision parameter cache for hot inference loops (attacks).
struct FloatParams {
  const PCSCTModel* model = nullptr;
  std::map<std::string, Eigen::MatrixXf> params;

  explicit FloatParams(const PCSCTModel& m) : model(&m) {
    for (const auto& name : m.names())
      params[name] = m.param(name).cast<float>();
  }

  const Eigen::MatrixXf& operator()(const std::string& name) const {
    return params.at(name);
  }
};

inline Eigen::MatrixXf pcsct_forward_numeric_f(const FloatParams& fp,
                                               const Eigen::MatrixXf& embeddings,
                                               const Eigen::RowVectorXf& cond) {
  Eigen::Matrix<float, 1, Eigen::Dynamic> c = cond;
  return pcsct_forward_numeric_t<float>(fp.model->dims, std::cref(fp), embeddings, c);
}

// Inference path. When the perturbation is unknown, pass no conditioning and
// the NULL vector (PPE of the zero parameter vector) is used.
inline EmbeddingSequence embed_pamt(const EmbeddingSequence& e,
                                    const PCSCTModel& m,
                                    const Eigen::RowVectorXd* cond = nullptr) {
  EmbeddingSequence out;
  out.frame_rate_hz = e.frame_rate_hz;
  out.data = pcsct_forward_numeric(m, e.data,
                                   cond ? *cond : null_conditioning(m));
  return out;
}

inline double pool_and_sim(const EmbeddingSequence& u, const EmbeddingSequence& v) {
  Eigen::VectorXd a = u.pooled(), b = v.pooled();
  double na = a.norm(), nb = b.norm();
  if (na < 1e-30 || nb < 1e-30)
    throw std::domain_error("pool_and_sim: zero-norm pooled vector");
  return a.dot(b) / (na * nb);
}

// Symmetric sequential InfoNCE over pooled, conditioned outputs. For anchor
// orig_i the positive is pert_i and the negatives are the other perts; a
// second term anchors each pert against the origs. Mean over both directions.
template <typename S>
int infonce_loss(Graph<S>& g, const std::vector<int>& pooled_orig,
                 const std::vector<int>& pooled_pert, double tau) {
  const std::size_t b = pooled_orig.size();
  if (b < 2 || pooled_pert.size() != b)
    throw std::invalid_argument("infonce_loss: batch size must be >= 2");
  int u = g.row_normalize(g.concat_rows(pooled_orig));
  int v = g.row_normalize(g.concat_rows(pooled_pert));
  int sim = g.scale(g.matmul(u, v, false, true), S(1.0 / tau));
  int pos = g.diag(sim);                            // B x 1
  int lse_rows = g.logsumexp_rows(sim);             // anchors = origs
  int lse_cols = g.logsumexp_rows(g.transpose(sim));  // anchors = perts
  int per_anchor = g.add(g.sub(lse_rows, pos), g.sub(lse_cols, pos));
  return g.scale(g.sum(per_anchor), S(0.5 / static_cast<double>(b)));
}

struct TrainConfig {
  double lr = 1e-4;
  double weight_decay = 1e-5;
  int batch_size = 32;
  int max_epochs = 100;
  double warmup_frac = 0.1;
  double temperature = 0.1;
  int patience = 10;
  double val_fraction = 0.2;
  std::uint64_t seed = 1;
  std::uint64_t encoder_seed = 7;
  JudgeConfig judge;
};

struct TrainLogRow {
  std::int64_t step = 0;
  int epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double val_spearman = 0.0;  // NaN while mid-epoch
};

struct TrainResult {
  PCSCTModel model;           // best checkpoint by validation Spearman
  std::vector<TrainLogRow> log;
  int best_epoch = -1;
  double best_val_spearman = 0.0;
  int epochs_run = 0;
};

namespace detail {

using TrainScalar = float;

// Validation pairs are fixed once: per held-out clip, six perturbed versions
// (one per kind) scored by the synthetic judge's round robin.
struct ValidationItem {
  EmbeddingSequence ref;
  std::vector<EmbeddingSequence> perts;
  std::vector<double> scores_2afc;
};

inline std::vector<ValidationItem> build_validation_set(
    const std::vector<AudioClip>& clips, const ToyEncoder& encoder,
    const TrainConfig& cfg) {
  std::vector<ValidationItem> items;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    ValidationItem item;
    item.ref = encoder.encode(clips[i]);
    std::vector<std::pair<std::string, PerturbationSpec>> versions;
    for (int k = 0; k < kNumPerturbationKinds; ++k) {
      PerturbationSpec s =
          sample_spec(cfg.seed ^ (0xABCDull + i * 31 + static_cast<std::uint64_t>(k) * 7919), k);
      item.perts.push_back(encoder.encode(apply(s, clips[i])));
      versions.emplace_back("v" + std::to_string(k), s);
    }
    auto judgments = round_robin_judgments("ref", versions,
                                           cfg.seed ^ (0x2AFCull + i), cfg.judge);
    auto wins = derive_2afc_scores(judgments);
    for (int k = 0; k < kNumPerturbationKinds; ++k)
      item.scores_2afc.push_back(wins.at("v" + std::to_string(k)));
    items.push_back(std::move(item));
  }
  return items;
}

inline double validation_spearman(const PCSCTModel& m,
                                  const std::vector<ValidationItem>& items) {
  Eigen::RowVectorXd null_c = null_conditioning(m);
  // Win counts only order versions of the same reference, so both sides are
  // ranked within each reference before the pooled correlation.
  std::vector<double> sims, scores;
  for (const auto& item : items) {
    EmbeddingSequence zr = embed_pamt(item.ref, m, &null_c);
    std::vector<double> local_sims;
    for (std::size_t k = 0; k < item.perts.size(); ++k) {
      EmbeddingSequence zp = embed_pamt(item.perts[k], m, &null_c);
      local_sims.push_back(pool_and_sim(zr, zp));
    }
    std::vector<double> sim_ranks = average_ranks(local_sims);
    std::vector<double> score_ranks = average_ranks(item.scores_2afc);
    sims.insert(sims.end(), sim_ranks.begin(), sim_ranks.end());
    scores.insert(scores.end(), score_ranks.begin(), score_ranks.end());
  }
  return spearman_rho(sims, scores);
}

}  // namespace detail

// One optimizer step on a batch of (orig, pert, conditioning) items.
// Both forward passes of a pair share the pair's conditioning vector.
template <typename S>
double pcsct_train_step(PCSCTModel& model, AdamW<double>& opt,
                        const std::vector<EmbeddingSequence>& origs,
                        const std::vector<EmbeddingSequence>& perts,
                        const std::vector<std::array<double, kParamVectorLength>>& pvecs,
                        double tau, double lr) {
  Graph<S> g;
  ParamLeaves<S> leaves = make_param_leaves(g, model, true);
  std::vector<int> pooled_o, pooled_p;
  for (std::size_t i = 0; i < origs.size(); ++i) {
    Eigen::Matrix<S, 1, Eigen::Dynamic> pv(1, kParamVectorLength);
    for (int j = 0; j < kParamVectorLength; ++j) pv(0, j) = S(pvecs[i][j]);
    int cond = ppe_forward(g, leaves, g.leaf(pv));
    int zo = pcsct_forward(g, leaves, g.leaf(origs[i].data.template cast<S>()), cond);
    int zp = pcsct_forward(g, leaves, g.leaf(perts[i].data.template cast<S>()), cond);
    pooled_o.push_back(g.mean_rows(zo));
    pooled_p.push_back(g.mean_rows(zp));
  }
  int loss = infonce_loss(g, pooled_o, pooled_p, tau);
  g.backward(loss);
  std::vector<Eigen::MatrixXd> grads;
  grads.reserve(leaves.ids.size());
  for (int id : leaves.ids)
    grads.push_back(g.grad(id).template cast<double>());
  opt.step(model.params(), grads, lr);
  return static_cast<double>(g.value(loss)(0, 0));
}

// Full training loop: 80/20 split, fresh perturbation pairs per epoch,
// AdamW + cosine warmup, early stop on validation Spearman.
inline TrainResult train(const std::vector<AudioClip>& corpus,
                         const TrainConfig& cfg, const ToyEncoder& encoder) {
  if (corpus.empty()) throw std::invalid_argument("empty training corpus");
  std::vector<std::size_t> order(corpus.size());
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng = Rng::keyed(cfg.seed, 0x73706c6974);
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[split_rng.next_below(i)]);
  std::size_t n_val = std::max<std::size_t>(
      1, static_cast<std::size_t>(cfg.val_fraction * corpus.size()));
  std::size_t n_train = corpus.size() - n_val;
  if (n_train < 2) throw std::invalid_argument("corpus too small to split");

  std::vector<AudioClip> val_clips;
  for (std::size_t i = n_train; i < order.size(); ++i)
    val_clips.push_back(corpus[order[i]]);
  auto val_set = detail::build_validation_set(val_clips, encoder, cfg);

  // Clean-clip embeddings never change; cache them.
  std::vector<EmbeddingSequence> train_emb;
  for (std::size_t i = 0; i < n_train; ++i)
    train_emb.push_back(encoder.encode(corpus[order[i]]));

  PCSCTModel model = PCSCTModel::init(cfg.seed);
  AdamW<double> opt(cfg.weight_decay);
  TrainResult result;
  const std::int64_t steps_per_epoch =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(n_train) / cfg.batch_size);
  const std::int64_t total_steps = steps_per_epoch * cfg.max_epochs;

  std::int64_t step = 0;
  int since_best = 0;
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    Rng erng = Rng::keyed(cfg.seed, 0xE0000 + static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> idx(n_train);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = idx.size(); i > 1; --i)
      std::swap(idx[i - 1], idx[erng.next_below(i)]);

    for (std::int64_t bstep = 0; bstep < steps_per_epoch; ++bstep) {
      std::vector<EmbeddingSequence> origs, perts;
      std::vector<std::array<double, kParamVectorLength>> pvecs;
      for (int b = 0; b < cfg.batch_size; ++b) {
        std::size_t ti = idx[(static_cast<std::size_t>(bstep) * cfg.batch_size + b) %
                             n_train];
        PerturbationSpec spec = sample_spec(erng.next_u64());
        origs.push_back(train_emb[ti]);
        perts.push_back(encoder.encode(apply(spec, corpus[order[ti]])));
        pvecs.push_back(vectorize(spec));
      }
      double lr = cosine_warmup_lr(step, total_steps, cfg.lr, cfg.warmup_frac);
      double loss = pcsct_train_step<detail::TrainScalar>(
          model, opt, origs, perts, pvecs, cfg.temperature, lr);
      if (!std::isfinite(loss)) throw std::domain_error("non-finite training loss");
      result.log.push_back({step, epoch, lr, loss,
                            std::numeric_limits<double>::quiet_NaN()});
      ++step;
    }

    double val = detail::validation_spearman(model, val_set);
    result.log.push_back({step, epoch,
                          cosine_warmup_lr(step, total_steps, cfg.lr, cfg.warmup_frac),
                          result.log.back().loss, val});
    result.epochs_run = epoch + 1;
    if (result.best_epoch < 0 || val > result.best_val_spearman) {
      result.best_epoch = epoch;
      result.best_val_spearman = val;
      result.model = model;
      since_best = 0;
    } else if (++since_best >= cfg.patience) {
      break;
    }
  }
  if (result.best_epoch < 0) result.model = model;
  return result;
}

}  // namespace pamt
