#pragma once

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sugar/graph.hpp"

namespace sugar {

struct ObjectiveConfig {
  double alpha = 1.0;        // contrastive weight
  double beta = 1.0;         // diversity weight
  double temperature = 1.0;
  std::string similarity = "cosine";

  void validate() const;
};

nlohmann::json to_json(const ObjectiveConfig& cfg);
ObjectiveConfig objective_config_from_json(const nlohmann::json& j);

using EmbeddingMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ContrastiveBatch {
  EmbeddingMatrix embeddings;  // one row per graph
  std::vector<int> labels;
  int model_index = 0;
};

struct ContrastiveResult {
  double loss = 0.0;
  EmbeddingMatrix grad;  // d loss / d embeddings
  int valid_anchors = 0;
  bool degenerate = false;
};

/// Mean negative log-likelihood of the true class.
double empirical_risk(const std::vector<std::vector<double>>& probs, std::span<const int> labels);

/// Risk computed from logits (stable), with d risk / d logits.
double empirical_risk_from_logits(const EmbeddingMatrix& logits, std::span<const int> labels,
                                  EmbeddingMatrix* d_logits);

/// Supervised InfoNCE over in-batch positives (same label) and negatives
/// (different label) with cosine similarity / temperature. A batch without a
/// valid anchor yields 0 and logs a warning.
double contrastive_loss(const ContrastiveBatch& batch, const ObjectiveConfig& cfg);
ContrastiveResult contrastive_loss_and_grad(const ContrastiveBatch& batch, const ObjectiveConfig& cfg);

/// (1/|E|) * sum_k w1_k * w2_k.
double diversity_similarity(const EdgeWeights& w1, const EdgeWeights& w2);
double diversity_similarity(std::span<const double> w1, std::span<const double> w2);

struct ObjectiveBreakdown {
  std::vector<double> risk;
  std::vector<double> contrastive;
  double diversity = 0.0;  // sum over ordered pairs i != j, before beta
  double total = 0.0;
};

nlohmann::json to_json(const ObjectiveBreakdown& b, long step);

/// sum_i (R_i + alpha L_i) + beta * sum_{i != j} similarity(i, j), where
/// similarity is an n x n matrix of batch-mean diversity similarities.
ObjectiveBreakdown total_objective(std::span<const double> risks, std::span<const double> contrastive,
                                   const Eigen::MatrixXd& similarity, const ObjectiveConfig& cfg);

/// Same, computing the similarity matrix from weights[model][graph].
ObjectiveBreakdown total_objective(std::span<const double> risks, std::span<const double> contrastive,
                                   const std::vector<std::vector<EdgeWeights>>& weights,
                                   const ObjectiveConfig& cfg);

/// n x n matrix of batch-mean diversity similarities.
Eigen::MatrixXd pairwise_similarity(const std::vector<std::vector<EdgeWeights>>& weights);

}  // namespace sugar
