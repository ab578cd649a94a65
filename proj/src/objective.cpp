#include "sugar/objective.hpp"

#include <cmath>

#include <spdlog/spdlog.h>

#include "sugar/error.hpp"
#include "sugar/json_util.hpp"

namespace sugar {

namespace {

void require_finite(double v, const char* what) {
  if (!std::isfinite(v)) throw Error(ErrorKind::NonFiniteTerm, std::string(what) + " is not finite");
}

}  // namespace

void ObjectiveConfig::validate() const {
  if (!(alpha >= 0.0)) throw Error(ErrorKind::InvalidConfig, "alpha must be >= 0");
  if (!(beta >= 0.0)) throw Error(ErrorKind::InvalidConfig, "beta must be >= 0");
  if (!(temperature > 0.0)) throw Error(ErrorKind::InvalidConfig, "temperature must be > 0");
  if (similarity != "cosine") throw Error(ErrorKind::InvalidConfig, "only cosine similarity is supported");
}

nlohmann::json to_json(const ObjectiveConfig& cfg) {
  return {{"alpha", cfg.alpha}, {"beta", cfg.beta}, {"temperature", cfg.temperature}, {"similarity", cfg.similarity}};
}

ObjectiveConfig objective_config_from_json(const nlohmann::json& j) {
  require_known_keys(j, {"alpha", "beta", "temperature", "similarity"}, "objective");
  ObjectiveConfig cfg;
  try {
    cfg.alpha = j.value("alpha", cfg.alpha);
    cfg.beta = j.value("beta", cfg.beta);
    cfg.temperature = j.value("temperature", cfg.temperature);
    cfg.similarity = j.value("similarity", cfg.similarity);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::InvalidConfig, std::string("objective config: ") + ex.what());
  }
  cfg.validate();
  return cfg;
}

double empirical_risk(const std::vector<std::vector<double>>& probs, std::span<const int> labels) {
  if (probs.empty()) throw Error(ErrorKind::EmptyBatch, "empirical risk of an empty batch");
  if (probs.size() != labels.size()) throw Error(ErrorKind::MisalignedWeights, "probs/labels length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    const auto y = static_cast<std::size_t>(labels[i]);
    if (y >= probs[i].size()) throw Error(ErrorKind::IndexOutOfRange, "label outside probability vector");
    sum -= std::log(probs[i][y]);
  }
  return sum / static_cast<double>(probs.size());
}

double empirical_risk_from_logits(const EmbeddingMatrix& logits, std::span<const int> labels,
                                  EmbeddingMatrix* d_logits) {
  const auto B = logits.rows();
  if (B == 0) throw Error(ErrorKind::EmptyBatch, "empirical risk of an empty batch");
  if (static_cast<std::size_t>(B) != labels.size()) throw Error(ErrorKind::MisalignedWeights, "logits/labels mismatch");
  if (d_logits) d_logits->resize(B, logits.cols());
  double sum = 0.0;
  for (Eigen::Index i = 0; i < B; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const Eigen::RowVectorXd ex = (logits.row(i).array() - mx).exp();
    const double z = ex.sum();
    sum += std::log(z) + mx - logits(i, labels[static_cast<std::size_t>(i)]);
    if (d_logits) {
      d_logits->row(i) = ex / z;
      (*d_logits)(i, labels[static_cast<std::size_t>(i)]) -= 1.0;
    }
  }
  if (d_logits) *d_logits /= static_cast<double>(B);
  return sum / static_cast<double>(B);
}

ContrastiveResult contrastive_loss_and_grad(const ContrastiveBatch& batch, const ObjectiveConfig& cfg) {
  const auto& U = batch.embeddings;
  const auto B = U.rows();
  if (static_cast<std::size_t>(B) != batch.labels.size()) {
    throw Error(ErrorKind::MisalignedWeights, "embeddings/labels length mismatch");
  }
  ContrastiveResult res;
  res.grad = EmbeddingMatrix::Zero(B, U.cols());
  const double tau = cfg.temperature;

  Eigen::VectorXd norm(B);
  for (Eigen::Index i = 0; i < B; ++i) norm(i) = std::max(U.row(i).norm(), 1e-12);
  EmbeddingMatrix Uhat = U;
  for (Eigen::Index i = 0; i < B; ++i) Uhat.row(i) /= norm(i);
  const Eigen::MatrixXd cos = Uhat * Uhat.transpose();
  const Eigen::MatrixXd S = cos / tau;

  // dS(a, j): derivative of the total loss w.r.t. S(a, j), before symmetrizing.
  Eigen::MatrixXd dS = Eigen::MatrixXd::Zero(B, B);
  std::vector<Eigen::Index> pos, neg;
  double total = 0.0;
  for (Eigen::Index a = 0; a < B; ++a) {
    pos.clear();
    neg.clear();
    for (Eigen::Index j = 0; j < B; ++j) {
      if (j == a) continue;
      (batch.labels[static_cast<std::size_t>(j)] == batch.labels[static_cast<std::size_t>(a)] ? pos : neg).push_back(j);
    }
    if (pos.empty() || neg.empty()) continue;
    ++res.valid_anchors;
    double m = S(a, pos[0]);
    for (auto j : pos) m = std::max(m, S(a, j));
    for (auto j : neg) m = std::max(m, S(a, j));
    double neg_sum = 0.0;
    for (auto n : neg) neg_sum += std::exp(S(a, n) - m);
    const double inv_p = 1.0 / static_cast<double>(pos.size());
    double anchor_loss = 0.0;
    for (auto p : pos) {
      const double ep = std::exp(S(a, p) - m);
      const double denom = ep + neg_sum;
      anchor_loss += -(S(a, p) - m) + std::log(denom);
      dS(a, p) += inv_p * (ep / denom - 1.0);
      for (auto n : neg) dS(a, n) += inv_p * std::exp(S(a, n) - m) / denom;
    }
    total += anchor_loss * inv_p;
  }
  if (res.valid_anchors == 0) {
    res.degenerate = true;
    return res;
  }
  const double scale = 1.0 / static_cast<double>(res.valid_anchors);
  res.loss = total * scale;
  // S is symmetric, so each entry receives gradient from both (a, j) and (j, a).
  const Eigen::MatrixXd G = (dS + dS.transpose()) * (scale / tau);
  // d cos(i,j) / d u_i = (uhat_j - cos(i,j) uhat_i) / |u_i|
  const Eigen::VectorXd row_weight = (G.array() * cos.array()).rowwise().sum();
  EmbeddingMatrix gU = G * Uhat;
  for (Eigen::Index i = 0; i < B; ++i) {
    gU.row(i) -= row_weight(i) * Uhat.row(i);
    gU.row(i) /= norm(i);
  }
  // The diagonal of G is zero, so self-similarity never contributes.
  res.grad = std::move(gU);
  return res;
}

double contrastive_loss(const ContrastiveBatch& batch, const ObjectiveConfig& cfg) {
  auto res = contrastive_loss_and_grad(batch, cfg);
  if (res.degenerate) {
    spdlog::warn("contrastive batch for model {} has no anchor with both a positive and a negative; term is 0",
                 batch.model_index);
  }
  return res.loss;
}

double diversity_similarity(std::span<const double> w1, std::span<const double> w2) {
  if (w1.size() != w2.size()) throw Error(ErrorKind::MisalignedWeights, "edge weight vectors differ in length");
  if (w1.empty()) return 0.0;
  double dot = 0.0;
  for (std::size_t k = 0; k < w1.size(); ++k) dot += w1[k] * w2[k];
  return dot / static_cast<double>(w1.size());
}

double diversity_similarity(const EdgeWeights& w1, const EdgeWeights& w2) {
  return diversity_similarity(w1.values(), w2.values());
}

nlohmann::json to_json(const ObjectiveBreakdown& b, long step) {
  return {{"step", step}, {"risk", b.risk}, {"contrastive", b.contrastive}, {"diversity", b.diversity}, {"total", b.total}};
}

ObjectiveBreakdown total_objective(std::span<const double> risks, std::span<const double> contrastive,
                                   const Eigen::MatrixXd& similarity, const ObjectiveConfig& cfg) {
  const std::size_t n = risks.size();
  if (n == 0) throw Error(ErrorKind::EmptyModelList, "objective needs at least one model");
  if (contrastive.size() != n || similarity.rows() != static_cast<Eigen::Index>(n) ||
      similarity.cols() != static_cast<Eigen::Index>(n)) {
    throw Error(ErrorKind::MisalignedWeights, "per-model terms disagree on model count");
  }
  ObjectiveBreakdown out;
  out.risk.assign(risks.begin(), risks.end());
  out.contrastive.assign(contrastive.begin(), contrastive.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    require_finite(risks[i], "risk");
    require_finite(contrastive[i], "contrastive term");
    sum += risks[i] + cfg.alpha * contrastive[i];
  }
  double div = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      require_finite(similarity(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)), "diversity term");
      div += similarity(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
    }
  }
  out.diversity = div;
  out.total = sum + cfg.beta * div;
  return out;
}

Eigen::MatrixXd pairwise_similarity(const std::vector<std::vector<EdgeWeights>>& weights) {
  const auto n = static_cast<Eigen::Index>(weights.size());
  Eigen::MatrixXd sim = Eigen::MatrixXd::Zero(n, n);
  if (n == 0) return sim;
  const std::size_t graphs = weights.front().size();
  for (const auto& w : weights) {
    if (w.size() != graphs) throw Error(ErrorKind::MisalignedWeights, "models scored different batches");
  }
  if (graphs == 0) return sim;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t g = 0; g < graphs; ++g) {
        acc += diversity_similarity(weights[static_cast<std::size_t>(i)][g], weights[static_cast<std::size_t>(j)][g]);
      }
      sim(i, j) = sim(j, i) = acc / static_cast<double>(graphs);
    }
  }
  return sim;
}

ObjectiveBreakdown total_objective(std::span<const double> risks, std::span<const double> contrastive,
                                   const std::vector<std::vector<EdgeWeights>>& weights,
                                   const ObjectiveConfig& cfg) {
  return total_objective(risks, contrastive, pairwise_similarity(weights), cfg);
}

}  // namespace sugar
