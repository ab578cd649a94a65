#pragma once

#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sugar/graph.hpp"
#include "sugar/model.hpp"
#include "sugar/param_store.hpp"
#include "sugar/trainer.hpp"

namespace sugar {

enum class AggMode { Ens, Wa };
enum class MergeRule { Average, Max };
enum class VoteRule { Soft, Hard };
enum class SelectionRule { Uniform, Greedy };

struct AggregationConfig {
  AggMode mode = AggMode::Ens;
  MergeRule merge = MergeRule::Average;  // ENS only
  VoteRule vote = VoteRule::Soft;        // ENS only
  SelectionRule selection = SelectionRule::Greedy;
  double s_c = 0.4;
  Metric metric = Metric::Accuracy;

  void validate() const;
};

nlohmann::json to_json(const AggregationConfig& cfg);
AggregationConfig aggregation_config_from_json(const nlohmann::json& j);
AggMode agg_mode_from_string(const std::string& s);
MergeRule merge_rule_from_string(const std::string& s);
VoteRule vote_rule_from_string(const std::string& s);
SelectionRule selection_rule_from_string(const std::string& s);

EdgeWeights merge_average(std::span<const EdgeWeights> weight_sets);
EdgeWeights merge_max(std::span<const EdgeWeights> weight_sets);
EdgeWeights merge(MergeRule rule, std::span<const EdgeWeights> weight_sets);

/// Argmax of the column means; ties go to the smallest class.
int soft_vote(const std::vector<std::vector<double>>& probs);
/// Majority of per-row argmaxes; ties are settled by soft_vote restricted to
/// the tied classes.
int hard_vote(const std::vector<std::vector<double>>& probs);
int vote(VoteRule rule, const std::vector<std::vector<double>>& probs);

struct EnsPrediction {
  int label = 0;
  std::vector<double> mean_probs;
  EdgeWeights merged_weights;
  SubgraphSelection merged;                  // empty for edgeless graphs
  std::vector<SubgraphSelection> per_model;  // each model's own top-k
};

/// Stage 1: every featurizer scores the full graph. Stage 2: merge and take
/// the top-k as a hard mask. Stage 3: every classifier reads that same masked
/// graph and the votes are combined.
EnsPrediction ens_predict(const Graph& graph, std::span<const InvariantGNN> models, const AggregationConfig& cfg);

/// Element-wise mean of same-fingerprint stores.
ParamStore weight_average(std::span<const ParamStore> stores);
InvariantGNN weight_average(std::span<const InvariantGNN> models);

struct SelectionStep {
  int candidate = 0;
  double individual = 0.0;      // candidate's own validation metric
  double with_candidate = 0.0;  // aggregate metric of M plus the candidate
  bool admitted = false;
  double current = 0.0;         // aggregate metric of M after the decision
};

struct SelectionResult {
  std::vector<int> chosen;
  std::vector<SelectionStep> trace;
  double metric = 0.0;  // aggregate validation metric of `chosen`
};

nlohmann::json to_json(const SelectionResult& r);

SelectionResult select_uniform(std::size_t num_models);

/// Ensemble predictions over a fixed split with cached stage-1 weights.
class EnsEvaluator {
 public:
  EnsEvaluator(std::span<const InvariantGNN> models, const std::vector<Graph>& graphs, AggregationConfig cfg);

  struct Output {
    std::vector<int> labels;
    std::vector<std::vector<double>> mean_probs;
    std::vector<SubgraphSelection> merged;
  };

  Output predict(std::span<const int> subset) const;
  double metric(std::span<const int> subset) const;
  /// Model i's own top-k selection on graph g.
  const SubgraphSelection& own_selection(int model, std::size_t graph) const;

 private:
  std::span<const InvariantGNN> models_;
  const std::vector<Graph>* graphs_;
  AggregationConfig cfg_;
  std::vector<std::vector<EdgeWeights>> weights_;  // [model][graph]
  std::vector<std::vector<SubgraphSelection>> own_;
};

/// Metric of the aggregate over `subset` on a split under cfg.mode. ENS
/// accuracy scores the voted labels; ENS ROC-AUC uses the mean probabilities.
double aggregate_metric(std::span<const InvariantGNN> models, std::span<const int> subset,
                        const std::vector<Graph>& split, const AggregationConfig& cfg);

/// Ranks models by individual validation metric and admits each candidate
/// whose inclusion keeps the aggregate metric at or above the current one.
SelectionResult select_greedy(std::span<const InvariantGNN> models, const std::vector<Graph>& val,
                              const AggregationConfig& cfg);

SelectionResult select(std::span<const InvariantGNN> models, const std::vector<Graph>& val,
                       const AggregationConfig& cfg);

}  // namespace sugar
