#include "sugar/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <sstream>

#include <spdlog/spdlog.h>

#include "sugar/error.hpp"
#include "sugar/json_util.hpp"
#include "sugar/nn.hpp"
#include "sugar/parallel.hpp"

namespace sugar {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5b0f;
constexpr std::uint64_t kSamplerStream = 0x5a3b0000;
constexpr std::uint64_t kDropoutStream = 0xd4000000;

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

bool all_finite(const ParamStore& p) {
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!p[i].value.allFinite()) return false;
  }
  return true;
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void SamplerConfig::validate() const {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw Error(ErrorKind::InvalidConfig, "sampler ratio must lie in (0, 1]");
}

std::string to_string(Ablation a) {
  switch (a) {
    case Ablation::SuA: return "SU-A";
    case Ablation::SuD: return "SU-D";
    case Ablation::SuS: return "SU-S";
    case Ablation::SuNone: return "SU-None";
  }
  return "SU-A";
}

Ablation ablation_from_string(const std::string& s) {
  const std::string l = lower(s);
  if (l == "su-a") return Ablation::SuA;
  if (l == "su-d") return Ablation::SuD;
  if (l == "su-s") return Ablation::SuS;
  if (l == "su-none") return Ablation::SuNone;
  throw Error(ErrorKind::InvalidConfig, "unknown ablation '" + s + "'");
}

std::string to_string(Metric m) { return m == Metric::Accuracy ? "accuracy" : "roc_auc"; }

std::string to_string(MaskMode m) {
  switch (m) {
    case MaskMode::Soft: return "soft";
    case MaskMode::TopK: return "topk";
    case MaskMode::StraightThrough: return "straight_through";
  }
  return "topk";
}

MaskMode mask_mode_from_string(const std::string& s) {
  const std::string l = lower(s);
  if (l == "soft") return MaskMode::Soft;
  if (l == "topk") return MaskMode::TopK;
  if (l == "straight_through" || l == "ste") return MaskMode::StraightThrough;
  throw Error(ErrorKind::InvalidConfig, "unknown mask_mode '" + s + "'");
}

Metric metric_from_string(const std::string& s) {
  const std::string l = lower(s);
  if (l == "accuracy") return Metric::Accuracy;
  if (l == "roc_auc" || l == "roc-auc") return Metric::RocAuc;
  throw Error(ErrorKind::InvalidConfig, "unknown metric '" + s + "'");
}

void TrainConfig::validate() const {
  if (n_models < 1) throw Error(ErrorKind::InvalidConfig, "n_models must be >= 1");
  if (epochs < 1) throw Error(ErrorKind::InvalidConfig, "epochs must be >= 1");
  if (batch_size < 1) throw Error(ErrorKind::InvalidConfig, "batch_size must be >= 1");
  if (!(lr > 0.0)) throw Error(ErrorKind::InvalidConfig, "lr must be > 0");
  if (lower(optimizer) != "adam") throw Error(ErrorKind::InvalidConfig, "only the adam optimizer is supported");
  if (!(s_c > 0.0 && s_c <= 1.0)) throw Error(ErrorKind::InvalidConfig, "s_c must lie in (0, 1]");
  if (seeds.empty()) throw Error(ErrorKind::InvalidConfig, "seeds must be nonempty");
  objective.validate();
  sampler.validate();
  model.validate();
}

TrainConfig TrainConfig::effective() const {
  TrainConfig c = *this;
  if (ablation == Ablation::SuD || ablation == Ablation::SuNone) c.objective.beta = 0.0;
  if (ablation == Ablation::SuS || ablation == Ablation::SuNone) c.sampler.enabled = false;
  return c;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"n_models", cfg.n_models},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"lr", cfg.lr},
          {"optimizer", cfg.optimizer},
          {"objective", to_json(cfg.objective)},
          {"sampler", {{"ratio", cfg.sampler.ratio}, {"enabled", cfg.sampler.enabled}}},
          {"s_c", cfg.s_c},
          {"seeds", cfg.seeds},
          {"seed", cfg.seed},
          {"ablation", to_string(cfg.ablation)},
          {"method", cfg.method == TrainMethod::Sugar ? "sugar" : "erm"},
          {"mask_mode", to_string(cfg.mask_mode)},
          {"metric", to_string(cfg.metric)},
          {"model", to_json(cfg.model)}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"n_models", "epochs", "batch_size", "lr", "optimizer", "objective", "sampler", "s_c", "seeds",
                      "seed", "ablation", "method", "mask_mode", "metric", "model"},
                     "train config");
  TrainConfig cfg;
  try {
    cfg.n_models = j.value("n_models", cfg.n_models);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.optimizer = j.value("optimizer", cfg.optimizer);
    if (j.contains("objective")) cfg.objective = objective_config_from_json(j.at("objective"));
    if (j.contains("sampler")) {
      const auto& s = j.at("sampler");
      require_known_keys(s, {"ratio", "enabled"}, "sampler config");
      cfg.sampler.ratio = s.value("ratio", cfg.sampler.ratio);
      cfg.sampler.enabled = s.value("enabled", cfg.sampler.enabled);
    }
    cfg.s_c = j.value("s_c", cfg.s_c);
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    cfg.seed = j.value("seed", cfg.seed);
    if (j.contains("ablation")) cfg.ablation = ablation_from_string(j.at("ablation").get<std::string>());
    if (j.contains("method")) {
      const auto m = lower(j.at("method").get<std::string>());
      if (m == "sugar") cfg.method = TrainMethod::Sugar;
      else if (m == "erm") cfg.method = TrainMethod::Erm;
      else throw Error(ErrorKind::InvalidConfig, "unknown method '" + m + "'");
    }
    if (j.contains("mask_mode")) cfg.mask_mode = mask_mode_from_string(j.at("mask_mode").get<std::string>());
    if (j.contains("metric")) cfg.metric = metric_from_string(j.at("metric").get<std::string>());
    if (j.contains("model")) cfg.model = model_config_from_json(j.at("model"));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::InvalidConfig, std::string("train config: ") + ex.what());
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Sampler and optimizer

Graph sample_subgraph(const Graph& graph, double r, Rng& rng) {
  if (graph.edge_count() == 0) throw Error(ErrorKind::EmptyGraph, "cannot sample edges of an edgeless graph");
  if (!(r > 0.0 && r <= 1.0)) throw Error(ErrorKind::InvalidRatio, "sample ratio must lie in (0, 1]");
  const std::size_t m = graph.edge_count();
  const std::size_t keep = ratio_to_k(r, m);
  std::vector<int> idx(m);
  std::iota(idx.begin(), idx.end(), 0);
  // Partial Fisher-Yates: the first `keep` slots form a uniform sample.
  for (std::size_t i = 0; i < keep; ++i) {
    const auto j = static_cast<std::size_t>(uniform_int(rng, static_cast<int>(i), static_cast<int>(m - 1)));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(keep);
  std::sort(idx.begin(), idx.end());
  Graph out;
  out.num_nodes = graph.num_nodes;
  out.node_features = graph.node_features;
  out.label = graph.label;
  out.env_id = graph.env_id;
  out.edges.reserve(keep);
  for (int e : idx) out.edges.push_back(graph.edges[static_cast<std::size_t>(e)]);
  if (graph.truth_edge_mask) {
    std::vector<std::uint8_t> mask;
    mask.reserve(keep);
    for (int e : idx) mask.push_back((*graph.truth_edge_mask)[static_cast<std::size_t>(e)]);
    out.truth_edge_mask = std::move(mask);
  }
  return out;
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::span<ParamStore* const> params, std::span<const ParamStore> grads) {
  if (params.size() != grads.size()) throw Error(ErrorKind::MisalignedWeights, "one gradient store per model required");
  if (m_.empty()) {
    for (const ParamStore* p : params) {
      m_.emplace_back(p->numel(), 0.0);
      v_.emplace_back(p->numel(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw Error(ErrorKind::MisalignedWeights, "optimizer model count changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t mi = 0; mi < params.size(); ++mi) {
    ParamStore& p = *params[mi];
    const ParamStore& g = grads[mi];
    auto& m = m_[mi];
    auto& v = v_[mi];
    std::size_t k = 0;
    for (std::size_t t = 0; t < p.size(); ++t) {
      double* pv = p[t].value.data();
      const double* gv = g[t].value.data();
      for (Eigen::Index i = 0; i < p[t].value.size(); ++i, ++k) {
        m[k] = beta1_ * m[k] + (1.0 - beta1_) * gv[i];
        v[k] = beta2_ * v[k] + (1.0 - beta2_) * gv[i] * gv[i];
        pv[i] -= lr_ * (m[k] / bc1) / (std::sqrt(v[k] / bc2) + eps_);
      }
    }
    p.round_to_float();
  }
}

// ---------------------------------------------------------------------------
// Joint objective

ObjectiveBreakdown joint_loss_and_grad(const std::vector<InvariantGNN>& models,
                                       std::span<const Graph* const> batch,
                                       const std::vector<std::vector<Graph>>& views, const TrainConfig& cfg,
                                       std::vector<ParamStore>* grads, std::vector<Rng>* dropout_rngs,
                                       int* degenerate_contrastive) {
  const std::size_t n = models.size();
  if (n == 0) throw Error(ErrorKind::EmptyModelList, "joint objective needs at least one model");
  if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "joint objective of an empty batch");
  if (views.size() != n) throw Error(ErrorKind::MisalignedWeights, "one view list per model required");
  const bool erm = cfg.method == TrainMethod::Erm;
  const auto lay = nn::ModelLayout::of(models[0].params(), models[0].config().num_layers);
  const nn::GraphBatch full = nn::make_batch(batch);
  const int B = full.num_graphs;
  auto rng_of = [&](std::size_t i) -> Rng* { return dropout_rngs ? &(*dropout_rngs)[i] : nullptr; };

  if (grads) {
    grads->clear();
    for (const auto& m : models) grads->push_back(m.params().zeros_like());
  }

  // Full-graph featurizer passes feed the diversity term.
  std::vector<nn::FeaturizerPass> full_pass(erm ? 0 : n);
  Eigen::MatrixXd sim = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n));
  std::vector<std::vector<double>> d_full(n);
  if (!erm) {
    parallel_for(n, [&](std::size_t i) { full_pass[i] = nn::featurizer_forward(models[i], lay, full, rng_of(i)); });
    std::vector<double> inv_edges(static_cast<std::size_t>(full.num_edges));
    for (int g = 0; g < B; ++g) {
      const int lo = full.edge_offset[static_cast<std::size_t>(g)];
      const int hi = full.edge_offset[static_cast<std::size_t>(g) + 1];
      for (int e = lo; e < hi; ++e) inv_edges[static_cast<std::size_t>(e)] = 1.0 / (static_cast<double>(hi - lo) * B);
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j) {
        const auto& wi = full_pass[i].weights();
        const auto& wj = full_pass[j].weights();
        double s = 0.0;
        for (std::size_t e = 0; e < wi.size(); ++e) s += wi[e] * wj[e] * inv_edges[e];
        sim(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = s;
        sim(static_cast<Eigen::Index>(j), static_cast<Eigen::Index>(i)) = s;
      }
    }
    if (grads && cfg.objective.beta > 0.0 && n > 1) {
      for (std::size_t i = 0; i < n; ++i) {
        d_full[i].assign(inv_edges.size(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
          if (j == i) continue;
          const auto& wj = full_pass[j].weights();
          for (std::size_t e = 0; e < wj.size(); ++e) d_full[i][e] += 2.0 * cfg.objective.beta * wj[e] * inv_edges[e];
        }
      }
    }
  }

  std::vector<double> risks(n, 0.0), contrast(n, 0.0);
  std::vector<int> degenerate(n, 0);
  parallel_for(n, [&](std::size_t i) {
    const InvariantGNN& model = models[i];
    nn::GraphBatch own;
    const nn::GraphBatch* vb = &full;
    const bool sampled = !views[i].empty();
    if (sampled) {
      if (views[i].size() != batch.size()) throw Error(ErrorKind::MisalignedWeights, "view count differs from batch");
      std::vector<const Graph*> ptrs;
      ptrs.reserve(views[i].size());
      for (const auto& g : views[i]) ptrs.push_back(&g);
      own = nn::make_batch(ptrs);
      vb = &own;
    }
    ParamStore* g = grads ? &(*grads)[i] : nullptr;

    if (erm) {
      const auto cls = nn::classifier_forward(model, lay, *vb, {}, rng_of(i));
      nn::RowMat d_logits;
      risks[i] = empirical_risk_from_logits(cls.logits, vb->labels, g ? &d_logits : nullptr);
      if (g) nn::classifier_backward(model, lay, *vb, {}, cls, d_logits, nn::RowMat(), *g, nullptr);
      return;
    }

    nn::FeaturizerPass view_pass;
    const nn::FeaturizerPass* vp = &full_pass[i];
    if (sampled) {
      view_pass = nn::featurizer_forward(model, lay, *vb, rng_of(i));
      vp = &view_pass;
    }
    const auto& w = vp->weights();
    std::vector<double> keep = cfg.mask_mode == MaskMode::Soft ? std::vector<double>(w.size(), 1.0)
                                                               : nn::hard_top_k(*vb, w, cfg.s_c);
    std::vector<double> mask(w.size());
    for (std::size_t e = 0; e < w.size(); ++e) {
      mask[e] = cfg.mask_mode == MaskMode::StraightThrough ? keep[e] : w[e] * keep[e];
    }

    const auto cls = nn::classifier_forward(model, lay, *vb, mask, rng_of(i));
    nn::RowMat d_logits;
    risks[i] = empirical_risk_from_logits(cls.logits, vb->labels, g ? &d_logits : nullptr);
    const auto con = contrastive_loss_and_grad(ContrastiveBatch{cls.embedding, vb->labels, static_cast<int>(i)},
                                               cfg.objective);
    contrast[i] = con.loss;
    degenerate[i] = con.degenerate ? 1 : 0;
    if (!g) return;

    nn::RowMat d_emb = con.grad * cfg.objective.alpha;
    std::vector<double> d_mask(mask.size(), 0.0);
    nn::classifier_backward(model, lay, *vb, mask, cls, d_logits, d_emb, *g, &d_mask);
    std::vector<double> d_w(mask.size());
    for (std::size_t e = 0; e < mask.size(); ++e) d_w[e] = d_mask[e] * keep[e];
    if (sampled) {
      nn::featurizer_backward(model, lay, *vb, view_pass, d_w, *g);
      if (!d_full[i].empty()) nn::featurizer_backward(model, lay, full, full_pass[i], d_full[i], *g);
    } else {
      if (!d_full[i].empty()) {
        for (std::size_t e = 0; e < d_w.size(); ++e) d_w[e] += d_full[i][e];
      }
      nn::featurizer_backward(model, lay, full, full_pass[i], d_w, *g);
    }
  });

  if (degenerate_contrastive) *degenerate_contrastive = std::accumulate(degenerate.begin(), degenerate.end(), 0);
  return total_objective(risks, contrast, sim, cfg.objective);
}

// ---------------------------------------------------------------------------
// Evaluation

double accuracy(const std::vector<std::vector<double>>& probs, std::span<const int> labels) {
  if (probs.empty()) throw Error(ErrorKind::EmptyBatch, "accuracy of an empty split");
  if (probs.size() != labels.size()) throw Error(ErrorKind::MisalignedWeights, "probs/labels length mismatch");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto pred = std::max_element(probs[i].begin(), probs[i].end()) - probs[i].begin();
    hit += pred == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(probs.size());
}

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw Error(ErrorKind::MisalignedWeights, "scores/labels length mismatch");
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double pos_rank_sum = 0.0;
  std::size_t pos = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + 1 + j);  // ranks i+1..j
    for (std::size_t t = i; t < j; ++t) {
      if (labels[order[t]] == 1) {
        pos_rank_sum += avg_rank;
        ++pos;
      }
    }
    i = j;
  }
  const std::size_t neg = scores.size() - pos;
  if (pos == 0 || neg == 0) throw Error(ErrorKind::RocAucUndefined, "ROC-AUC needs both classes present");
  const double p = static_cast<double>(pos);
  return (pos_rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

double roc_auc(const std::vector<std::vector<double>>& probs, std::span<const int> labels) {
  if (probs.empty()) throw Error(ErrorKind::RocAucUndefined, "ROC-AUC of an empty split");
  if (probs.size() != labels.size()) throw Error(ErrorKind::MisalignedWeights, "probs/labels length mismatch");
  const std::size_t C = probs.front().size();
  std::vector<double> scores(probs.size());
  std::vector<int> bin(probs.size());
  auto column = [&](std::size_t c) {
    for (std::size_t i = 0; i < probs.size(); ++i) {
      scores[i] = probs[i][c];
      bin[i] = labels[i] == static_cast<int>(c) ? 1 : 0;
    }
  };
  if (C == 2) {
    column(1);
    return roc_auc(scores, bin);
  }
  double sum = 0.0;
  int used = 0;
  for (std::size_t c = 0; c < C; ++c) {
    column(c);
    const auto pos = std::count(bin.begin(), bin.end(), 1);
    if (pos == 0 || pos == static_cast<long>(bin.size())) continue;
    sum += roc_auc(scores, bin);
    ++used;
  }
  if (used == 0) throw Error(ErrorKind::RocAucUndefined, "ROC-AUC needs at least two classes present");
  return sum / used;
}

double metric_value(Metric metric, const std::vector<std::vector<double>>& probs, std::span<const int> labels) {
  return metric == Metric::Accuracy ? accuracy(probs, labels) : roc_auc(probs, labels);
}

std::vector<int> labels_of(const std::vector<Graph>& graphs) {
  std::vector<int> y;
  y.reserve(graphs.size());
  for (const auto& g : graphs) y.push_back(g.label);
  return y;
}

std::vector<std::vector<double>> predict_proba(const InvariantGNN& model, const std::vector<Graph>& graphs,
                                               double s_c, bool use_selection) {
  std::vector<const Graph*> ptrs;
  ptrs.reserve(graphs.size());
  for (const auto& g : graphs) ptrs.push_back(&g);
  if (!use_selection) return model.classify_many(ptrs, {});
  const auto weights = model.featurize_many(ptrs);
  std::vector<EdgeWeights> masks;
  masks.reserve(graphs.size());
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    const std::size_t m = graphs[i].edge_count();
    masks.push_back(m == 0 ? EdgeWeights() : selection_to_hard_mask(top_k_edges(weights[i], ratio_to_k(s_c, m)), m));
  }
  return model.classify_many(ptrs, masks);
}

double validate(const InvariantGNN& model, const std::vector<Graph>& split, Metric metric, double s_c,
                bool use_selection) {
  if (split.empty()) throw Error(ErrorKind::EmptyBatch, "validation split is empty");
  return metric_value(metric, predict_proba(model, split, s_c, use_selection), labels_of(split));
}

double mean_pairwise_similarity(const std::vector<InvariantGNN>& models, const std::vector<Graph>& graphs) {
  if (models.size() < 2 || graphs.empty()) return 0.0;
  std::vector<const Graph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  std::vector<std::vector<EdgeWeights>> w(models.size());
  parallel_for(models.size(), [&](std::size_t i) { w[i] = models[i].featurize_many(ptrs); });
  const Eigen::MatrixXd sim = pairwise_similarity(w);
  double s = 0.0;
  int pairs = 0;
  for (Eigen::Index i = 0; i < sim.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < sim.cols(); ++j, ++pairs) s += sim(i, j);
  }
  return s / pairs;
}

// ---------------------------------------------------------------------------
// Training loop

TrainResult train_sugar(const TrainConfig& config, const DatasetSplit& data) {
  const TrainConfig cfg = config.effective();
  cfg.validate();
  if (data.train.empty() || data.val.empty()) throw Error(ErrorKind::EmptyBatch, "train and val splits must be nonempty");
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const auto& g : *split) {
      if (g.feature_dim() != cfg.model.feature_dim) {
        throw Error(ErrorKind::FeatureDimMismatch, "dataset feature_dim " + std::to_string(g.feature_dim()) +
                                                       " differs from model feature_dim " +
                                                       std::to_string(cfg.model.feature_dim));
      }
    }
  }
  const bool sugar = cfg.method == TrainMethod::Sugar;
  const auto n = static_cast<std::size_t>(cfg.n_models);

  TrainResult res;
  std::vector<InvariantGNN> models = init_shared(cfg.n_models, cfg.model, cfg.seed);
  res.initial = models;
  res.best = models;
  res.best_epoch.assign(n, -1);
  res.best_val.assign(n, -std::numeric_limits<double>::infinity());

  Adam opt(cfg.lr);
  std::vector<ParamStore*> param_ptrs;
  for (auto& m : models) param_ptrs.push_back(&m.params());

  std::vector<std::size_t> order(data.train.size());
  std::iota(order.begin(), order.end(), 0);
  long step = 0;
  bool warned_degenerate = false;
  const bool sample = sugar && cfg.sampler.enabled;
  const bool dropout = cfg.model.dropout_rate > 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    auto shuffle_rng = make_rng(cfg.seed, kShuffleStream, static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t lo = 0; lo < order.size(); lo += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t hi = std::min(order.size(), lo + static_cast<std::size_t>(cfg.batch_size));
      std::vector<const Graph*> batch;
      batch.reserve(hi - lo);
      for (std::size_t k = lo; k < hi; ++k) batch.push_back(&data.train[order[k]]);

      std::vector<std::vector<Graph>> views(n);
      if (sample) {
        for (std::size_t i = 0; i < n; ++i) {
          auto rng = make_rng(cfg.seed, kSamplerStream + i, static_cast<std::uint64_t>(step));
          views[i].reserve(batch.size());
          for (const Graph* g : batch) {
            views[i].push_back(g->edge_count() == 0 ? *g : sample_subgraph(*g, cfg.sampler.ratio, rng));
          }
        }
      }
      std::vector<Rng> drop_rngs;
      if (dropout) {
        for (std::size_t i = 0; i < n; ++i) {
          drop_rngs.push_back(make_rng(cfg.seed, kDropoutStream + i, static_cast<std::uint64_t>(step)));
        }
      }

      std::vector<ParamStore> grads;
      ObjectiveBreakdown bd;
      int degenerate = 0;
      try {
        bd = joint_loss_and_grad(models, batch, views, cfg, &grads, dropout ? &drop_rngs : nullptr, &degenerate);
      } catch (const Error& ex) {
        if (ex.kind() != ErrorKind::NonFiniteTerm) throw;
        nlohmann::json dump = {{"step", step}, {"epoch", epoch}, {"reason", ex.what()}};
        if (!res.log.empty()) dump["last_record"] = res.log.back();
        spdlog::error("training diverged: {}", dump.dump());
        throw Error(ErrorKind::Divergence, dump.dump());
      }
      for (std::size_t i = 0; i < n; ++i) {
        if (!all_finite(grads[i])) {
          nlohmann::json dump = to_json(bd, step);
          dump["epoch"] = epoch;
          dump["model"] = i;
          dump["reason"] = "non-finite gradient";
          spdlog::error("training diverged: {}", dump.dump());
          throw Error(ErrorKind::Divergence, dump.dump());
        }
      }
      if (degenerate > 0 && !warned_degenerate) {
        spdlog::warn("step {}: {} model(s) saw a batch without contrastive positives and negatives; term set to 0",
                     step, degenerate);
        warned_degenerate = true;
      }
      opt.step(param_ptrs, grads);
      auto rec = to_json(bd, step);
      rec["epoch"] = epoch;
      res.log.push_back(std::move(rec));
      ++step;
    }

    std::vector<double> val(n);
    parallel_for(n, [&](std::size_t i) { val[i] = validate(models[i], data.val, cfg.metric, cfg.s_c, sugar); });
    for (std::size_t i = 0; i < n; ++i) {
      if (val[i] > res.best_val[i]) {
        res.best_val[i] = val[i];
        res.best_epoch[i] = epoch;
        res.best[i] = models[i];
      }
    }
    res.val_history.push_back(val);
    spdlog::debug("epoch {} val {}", epoch, nlohmann::json(val).dump());
  }
  res.final_models = std::move(models);
  return res;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

std::filesystem::path blob_path(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

}  // namespace

void save_checkpoint(const InvariantGNN& model, const std::filesystem::path& manifest, const nlohmann::json& meta) {
  const ParamStore& p = model.params();
  nlohmann::json tensors = nlohmann::json::array();
  std::string blob;
  blob.reserve(p.numel() * 4);
  for (std::size_t t = 0; t < p.size(); ++t) {
    const auto& v = p[t].value;
    tensors.push_back({{"name", p.name(t)}, {"shape", p[t].shape}, {"offset", blob.size()}, {"count", v.size()}});
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      const float f = static_cast<float>(v.data()[i]);
      const std::uint32_t bits = to_le(std::bit_cast<std::uint32_t>(f));
      char bytes[4];
      std::memcpy(bytes, &bits, 4);
      blob.append(bytes, 4);
    }
  }
  const auto bin = blob_path(manifest);
  nlohmann::json j = {{"format", "sugar-checkpoint"},
                      {"version", 1},
                      {"dtype", "float32"},
                      {"byte_order", "little"},
                      {"layout", "column-major"},
                      {"model_config", to_json(model.config())},
                      {"fingerprint", p.fingerprint()},
                      {"blob", bin.filename().string()},
                      {"blob_bytes", blob.size()},
                      {"tensors", tensors},
                      {"meta", meta}};
  if (manifest.has_parent_path()) std::filesystem::create_directories(manifest.parent_path());
  std::ofstream b(bin, std::ios::binary);
  if (!b) throw Error(ErrorKind::Io, "cannot write " + bin.string());
  b.write(blob.data(), static_cast<std::streamsize>(blob.size()));
  std::ofstream m(manifest, std::ios::binary);
  if (!m) throw Error(ErrorKind::Io, "cannot write " + manifest.string());
  m << j.dump(2) << '\n';
  if (!b || !m) throw Error(ErrorKind::Io, "failed writing checkpoint " + manifest.string());
}

nlohmann::json read_checkpoint_meta(const std::filesystem::path& manifest) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + manifest.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::CorruptManifest, manifest.string() + ": " + ex.what());
  }
}

InvariantGNN load_checkpoint(const std::filesystem::path& manifest) {
  const nlohmann::json j = read_checkpoint_meta(manifest);
  ModelConfig cfg;
  ParamStore stored;
  std::vector<std::pair<std::size_t, std::size_t>> spans;  // offset, count
  try {
    if (j.at("format") != "sugar-checkpoint" || j.at("dtype") != "float32") {
      throw Error(ErrorKind::CorruptManifest, "unsupported checkpoint format");
    }
    cfg = model_config_from_json(j.at("model_config"));
    for (const auto& t : j.at("tensors")) {
      stored.add(t.at("name").get<std::string>(), t.at("shape").get<std::vector<int>>());
      spans.emplace_back(t.at("offset").get<std::size_t>(), t.at("count").get<std::size_t>());
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::CorruptManifest, manifest.string() + ": " + ex.what());
  } catch (const Error& ex) {
    if (ex.kind() == ErrorKind::CorruptManifest) throw;
    throw Error(ErrorKind::CorruptManifest, manifest.string() + ": " + ex.what());
  }
  if (j.value("fingerprint", std::string()) != stored.fingerprint()) {
    throw Error(ErrorKind::CorruptManifest, "fingerprint does not match the tensor list");
  }
  const auto bin = manifest.parent_path() / j.value("blob", blob_path(manifest).filename().string());
  std::ifstream in(bin, std::ios::binary);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + bin.string());
  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (blob.size() != j.value("blob_bytes", std::size_t{0})) {
    throw Error(ErrorKind::CorruptManifest, "blob size differs from manifest");
  }
  for (std::size_t t = 0; t < stored.size(); ++t) {
    auto& v = stored[t].value;
    const auto [offset, count] = spans[t];
    if (count != static_cast<std::size_t>(v.size()) || offset + 4 * count > blob.size()) {
      throw Error(ErrorKind::CorruptManifest, "tensor " + stored.name(t) + " has an inconsistent extent");
    }
    for (std::size_t i = 0; i < count; ++i) {
      std::uint32_t bits;
      std::memcpy(&bits, blob.data() + offset + 4 * i, 4);
      v.data()[i] = static_cast<double>(std::bit_cast<float>(to_le(bits)));
    }
  }
  return InvariantGNN(cfg, std::move(stored));
}

InvariantGNN load_checkpoint(const std::filesystem::path& manifest, const ModelConfig& expected) {
  InvariantGNN m = load_checkpoint(manifest);
  if (!InvariantGNN::layout(expected).same_layout(m.params())) {
    throw Error(ErrorKind::ShapeMismatch, manifest.string() + " does not match the expected model configuration");
  }
  return InvariantGNN(expected, m.params());
}

void write_train_outputs(const std::filesystem::path& out_dir, const TrainConfig& config, const TrainResult& result,
                         const DatasetSplit& data) {
  const auto ckpt = out_dir / "checkpoints";
  std::filesystem::create_directories(ckpt);
  const bool sugar = config.method == TrainMethod::Sugar;
  nlohmann::json models = nlohmann::json::array();
  for (std::size_t i = 0; i < result.best.size(); ++i) {
    const nlohmann::json meta = {{"seed", config.seed},
                                 {"model_index", i},
                                 {"best_epoch", result.best_epoch[i]},
                                 {"s_c", config.s_c},
                                 {"method", sugar ? "sugar" : "erm"}};
    save_checkpoint(result.best[i], ckpt / ("model_" + std::to_string(i) + ".json"), meta);
    nlohmann::json row = {{"model", i}, {"best_epoch", result.best_epoch[i]}, {"val", result.best_val[i]}};
    if (!data.test.empty()) row["test"] = validate(result.best[i], data.test, config.metric, config.s_c, sugar);
    models.push_back(row);
  }
  std::ofstream log(out_dir / "log.jsonl", std::ios::binary);
  if (!log) throw Error(ErrorKind::Io, "cannot write log.jsonl");
  for (const auto& rec : result.log) log << rec.dump() << '\n';
  std::ofstream summary(out_dir / "summary.json", std::ios::binary);
  if (!summary) throw Error(ErrorKind::Io, "cannot write summary.json");
  summary << nlohmann::json({{"config", to_json(config)},
                             {"metric", to_string(config.metric)},
                             {"models", models},
                             {"val_history", result.val_history}})
                 .dump(2)
          << '\n';
}

std::vector<InvariantGNN> load_checkpoint_dir(const std::filesystem::path& dir) {
  const auto base = std::filesystem::exists(dir / "checkpoints") ? dir / "checkpoints" : dir;
  std::vector<InvariantGNN> out;
  for (int i = 0;; ++i) {
    const auto p = base / ("model_" + std::to_string(i) + ".json");
    if (!std::filesystem::exists(p)) break;
    out.push_back(load_checkpoint(p));
  }
  if (out.empty()) throw Error(ErrorKind::EmptyModelList, "no checkpoints found in " + base.string());
  return out;
}

}  // namespace sugar
