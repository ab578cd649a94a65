#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sugar/graph.hpp"
#include "sugar/model.hpp"
#include "sugar/objective.hpp"
#include "sugar/param_store.hpp"
#include "sugar/rng.hpp"
#include "sugar/synthgen.hpp"

namespace sugar {

struct SamplerConfig {
  double ratio = 0.9;
  bool enabled = true;

  void validate() const;
};

enum class Ablation { SuA, SuD, SuS, SuNone };
enum class TrainMethod { Sugar, Erm };
enum class Metric { Accuracy, RocAuc };

/// Classifier mask during training. Soft: raw edge weights. TopK: weights of
/// each graph's top-k edges, zero elsewhere. StraightThrough: the 0/1 top-k
/// mask in the forward pass, gradients routed to the top-k weights.
enum class MaskMode { Soft, TopK, StraightThrough };

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);
std::string to_string(Metric m);
std::string to_string(MaskMode m);
MaskMode mask_mode_from_string(const std::string& s);
Metric metric_from_string(const std::string& s);

struct TrainConfig {
  int n_models = 10;
  int epochs = 40;
  int batch_size = 32;
  double lr = 1e-3;
  std::string optimizer = "adam";
  ObjectiveConfig objective;
  SamplerConfig sampler;
  double s_c = 0.4;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::uint64_t seed = 1;  // seed of a single training run
  Ablation ablation = Ablation::SuA;
  TrainMethod method = TrainMethod::Sugar;
  MaskMode mask_mode = MaskMode::Soft;
  Metric metric = Metric::Accuracy;
  ModelConfig model;

  void validate() const;
  /// Copy with the ablation applied (SU-D: beta = 0, SU-S: sampler off).
  TrainConfig effective() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Keeps all nodes and a uniform sample of ceil(r * |E|) edges (original order).
Graph sample_subgraph(const Graph& graph, double r, Rng& rng);

/// Adam over a list of same-layout stores; moments kept in double. Parameters
/// are rounded to float32 after every step.
class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(std::span<ParamStore* const> params, std::span<const ParamStore> grads);
  long steps() const { return t_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

/// Joint objective over one batch. views[i] holds model i's sampled copy of
/// every batch graph, or is empty to use the full graphs. grads (if given)
/// receives one zero-initialized store per model filled with d total / d params.
/// Pass the effective config.
ObjectiveBreakdown joint_loss_and_grad(const std::vector<InvariantGNN>& models,
                                       std::span<const Graph* const> batch,
                                       const std::vector<std::vector<Graph>>& views, const TrainConfig& cfg,
                                       std::vector<ParamStore>* grads, std::vector<Rng>* dropout_rngs = nullptr,
                                       int* degenerate_contrastive = nullptr);

struct TrainResult {
  std::vector<InvariantGNN> initial;      // step-0 models
  std::vector<InvariantGNN> final_models; // after the last epoch
  std::vector<InvariantGNN> best;         // validation-best epoch per model
  std::vector<int> best_epoch;
  std::vector<double> best_val;
  std::vector<std::vector<double>> val_history;  // [epoch][model]
  std::vector<nlohmann::json> log;                // one record per step
};

/// Trains config.n_models base models jointly on data.train.
TrainResult train_sugar(const TrainConfig& config, const DatasetSplit& data);

// Evaluation.

double accuracy(const std::vector<std::vector<double>>& probs, std::span<const int> labels);
/// Binary ROC-AUC with ties counted as one half.
double roc_auc(std::span<const double> scores, std::span<const int> labels);
/// Two classes: AUC of the class-1 probability. More: macro one-vs-rest over
/// classes present with both positives and negatives.
double roc_auc(const std::vector<std::vector<double>>& probs, std::span<const int> labels);
double metric_value(Metric metric, const std::vector<std::vector<double>>& probs, std::span<const int> labels);

std::vector<int> labels_of(const std::vector<Graph>& graphs);

/// Eval-mode class probabilities. With use_selection the classifier sees the
/// model's own top-k hard mask; otherwise the full graph.
std::vector<std::vector<double>> predict_proba(const InvariantGNN& model, const std::vector<Graph>& graphs,
                                               double s_c, bool use_selection = true);

double validate(const InvariantGNN& model, const std::vector<Graph>& split, Metric metric, double s_c,
                bool use_selection = true);

/// Mean over model pairs i < j of the graph-mean diversity similarity of
/// their full-graph edge weights.
double mean_pairwise_similarity(const std::vector<InvariantGNN>& models, const std::vector<Graph>& graphs);

// Checkpoints: `manifest` is a .json file; the float32 blob sits next to it
// with the .bin extension.

void save_checkpoint(const InvariantGNN& model, const std::filesystem::path& manifest,
                     const nlohmann::json& meta = nlohmann::json::object());
InvariantGNN load_checkpoint(const std::filesystem::path& manifest);
/// Throws ShapeMismatch when the stored layout differs from `expected`.
InvariantGNN load_checkpoint(const std::filesystem::path& manifest, const ModelConfig& expected);
nlohmann::json read_checkpoint_meta(const std::filesystem::path& manifest);

/// Writes checkpoints/model_{i}.json/.bin, log.jsonl and summary.json.
void write_train_outputs(const std::filesystem::path& out_dir, const TrainConfig& config, const TrainResult& result,
                         const DatasetSplit& data);
/// Loads every checkpoints/model_{i}.json in index order.
std::vector<InvariantGNN> load_checkpoint_dir(const std::filesystem::path& dir);

}  // namespace sugar
