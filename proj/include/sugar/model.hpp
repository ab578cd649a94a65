#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "sugar/graph.hpp"
#include "sugar/param_store.hpp"

namespace sugar {

struct ModelConfig {
  int num_layers = 3;
  int hidden_dim = 64;
  int num_classes = 3;
  int feature_dim = 4;
  double dropout_rate = 0.0;
  std::string pooling = "mean";

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

/// Invariant GNN f = f_c ∘ g. The featurizer g (GIN encoder + symmetric
/// endpoint MLP) scores every edge; the classifier f_c (separate GIN encoder,
/// mean pooling, linear head) reads the graph with messages scaled by a mask.
class InvariantGNN {
 public:
  InvariantGNN(ModelConfig config, ParamStore params);

  /// Fresh model with the parameter layout for `config` and a seeded
  /// uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization rounded to float32.
  static InvariantGNN random(const ModelConfig& config, std::uint64_t seed);

  /// Zero-valued store with this architecture's names and shapes.
  static ParamStore layout(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  const ParamStore& params() const { return params_; }
  ParamStore& params() { return params_; }

  EdgeWeights featurize(const Graph& graph) const;
  std::vector<double> classify(const Graph& graph, const EdgeWeights& mask) const;
  Eigen::VectorXd graph_embedding(const Graph& graph, const EdgeWeights& mask) const;

  /// Batched eval-mode helpers; results align with the input order.
  std::vector<EdgeWeights> featurize_many(std::span<const Graph* const> graphs) const;
  /// An empty `masks` span means all-ones masks for every graph.
  std::vector<std::vector<double>> classify_many(std::span<const Graph* const> graphs,
                                                 std::span<const EdgeWeights> masks) const;

 private:
  ModelConfig config_;
  ParamStore params_;
};

/// n element-wise identical copies of one random initialization.
std::vector<InvariantGNN> init_shared(int n, const ModelConfig& config, std::uint64_t seed);

EdgeWeights featurize(const InvariantGNN& model, const Graph& graph);
std::vector<double> classify(const InvariantGNN& model, const Graph& graph, const EdgeWeights& mask);
Eigen::VectorXd graph_embedding(const InvariantGNN& model, const Graph& graph, const EdgeWeights& mask);

/// Single-model inference: top-k of the model's own edge weights as a hard
/// mask, then the classifier.
std::vector<double> predict_with_own_selection(const InvariantGNN& model, const Graph& graph, double s_c);

}  // namespace sugar
