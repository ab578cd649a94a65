#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sugar/aggregate.hpp"
#include "sugar/graph.hpp"
#include "sugar/synthgen.hpp"
#include "sugar/trainer.hpp"

namespace sugar {

// ---------------------------------------------------------------------------
// Information-theoretic helpers
// ---------------------------------------------------------------------------

/// Nonnegative weights over tuples of small discrete variables. Weights need
/// not be integers, so exactly enumerated distributions fit as well as counts.
class DiscreteJoint {
 public:
  explicit DiscreteJoint(int num_vars);

  void add(const std::vector<int>& values, double weight = 1.0);
  int num_vars() const { return num_vars_; }
  double total() const { return total_; }
  std::size_t cells() const { return cells_.size(); }
  const std::map<std::vector<int>, double>& table() const { return cells_; }

  /// Marginal over the listed variables (in the given order).
  DiscreteJoint marginal(const std::vector<int>& vars) const;
  /// Throws InvalidConfig when empty or a weight is negative.
  void validate() const;

 private:
  int num_vars_;
  double total_ = 0.0;
  std::map<std::vector<int>, double> cells_;
};

/// Plug-in entropy of the listed variables, natural log.
double entropy(const DiscreteJoint& joint, const std::vector<int>& vars);
/// H(A | C) = H(A, C) - H(C).
double conditional_entropy(const DiscreteJoint& joint, const std::vector<int>& a, const std::vector<int>& c);
/// I(A;B|C) = sum p(a,b,c) log[p(a,b|c) / (p(a|c) p(b|c))]; clamped at 0.
double conditional_mi(const DiscreteJoint& joint, const std::vector<int>& a, const std::vector<int>& b,
                      const std::vector<int>& c);

// ---------------------------------------------------------------------------
// Planted two-subgraph toy family
// ---------------------------------------------------------------------------

/// Edge slots carry one bit each. Y is a uniform bit. Each planted block of
/// size s holds bits (a_1 .. a_{s-1}, a_1 ^ .. ^ a_{s-1} ^ Y) with fresh uniform
/// a's, so only the whole block reveals Y. Spurious slots copy Y with
/// probability `spurious_agree`, noise slots are uniform.
struct PlantedFamily {
  int num_edges = 6;
  int s_c = 2;
  std::vector<int> block_a;
  std::vector<int> block_b;
  std::vector<int> spurious;
  double spurious_agree = 0.8;

  void validate() const;
  /// Random slot layout with the given counts.
  static PlantedFamily random(int s_c, int num_spurious, int num_noise, double spurious_agree, Rng& rng);
};

/// Exact distribution over (Y, edge bits) as weighted rows.
struct PlantedOutcome {
  int y = 0;
  std::vector<int> bits;
  double prob = 0.0;
};
std::vector<PlantedOutcome> enumerate_family(const PlantedFamily& family);

/// Joint of (code(bits on S_j), code(bits on S_k), Y).
DiscreteJoint selection_joint(const std::vector<PlantedOutcome>& outcomes, const std::vector<int>& s_j,
                              const std::vector<int>& s_k);
/// Mutual information between one selection on two independent draws that
/// share the label.
double label_paired_mi(const std::vector<PlantedOutcome>& outcomes, const std::vector<int>& s);
/// I(S_j ; S_k | Y).
double pair_conditional_mi(const std::vector<PlantedOutcome>& outcomes, const std::vector<int>& s_j,
                           const std::vector<int>& s_k);
/// I(S_j u S_k ; Y).
double union_label_mi(const std::vector<PlantedOutcome>& outcomes, const std::vector<int>& s_j,
                      const std::vector<int>& s_k);

struct TheoremSolution {
  std::vector<int> first;
  std::vector<int> second;
  double invariance = 0.0;   // sum of label-paired terms
  double redundancy = 0.0;   // I(first; second | Y) + I(second; first | Y)
  double union_info = 0.0;   // I(first u second; Y)
  int candidates = 0;        // pairs compared
};

/// Lexicographic brute force over ordered pairs of slot subsets of size
/// 1..s_c: maximize invariance, then minimize redundancy, then maximize
/// union information. Ties keep the first pair in enumeration order.
TheoremSolution solve_two_subgraph_objective(const PlantedFamily& family, double tol = 1e-9);
bool recovers_planted(const PlantedFamily& family, const TheoremSolution& sol);

// ---------------------------------------------------------------------------
// Visualization
// ---------------------------------------------------------------------------

struct VizOptions {
  double min_width = 0.5;
  double max_width = 5.0;
  std::string title = "G";
};

/// Graphviz DOT export. penwidth is linear in weight; color darkens with
/// weight. Truth edges get `truth=1` and `motif=<component>`, and each truth
/// component is drawn in its own hue.
std::string subgraph_dot(const Graph& graph, const EdgeWeights& weights, const VizOptions& opts = {});
std::string subgraph_dot(const Graph& graph, const SubgraphSelection& selection, const VizOptions& opts = {});
void export_subgraph_viz(const Graph& graph, const EdgeWeights& weights, const std::filesystem::path& path,
                         const VizOptions& opts = {});
void export_subgraph_viz(const Graph& graph, const SubgraphSelection& selection,
                         const std::filesystem::path& path, const VizOptions& opts = {});

// ---------------------------------------------------------------------------
// Experiments
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  std::string name = "experiment";
  std::optional<SynthConfig> synth;              // generated per seed
  std::optional<std::filesystem::path> data_dir; // or a fixed JSONL dataset
  TrainConfig train;
  AggregationConfig aggregation;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::optional<std::filesystem::path> report_path;
  bool ablation_grid = false;  // run SU-A / SU-D / SU-S / SU-None
  bool include_erm = true;

  void validate() const;
};

nlohmann::json to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_config_from_json(const nlohmann::json& j);

struct ReportRow {
  std::string method;
  std::vector<double> values;  // one per seed, in seed order
  double mean = 0.0;
  double std = 0.0;            // population standard deviation
};

struct Report {
  std::string dataset;
  std::string metric;
  std::vector<std::uint64_t> seeds;
  std::vector<ReportRow> rows;
  nlohmann::json diagnostics = nlohmann::json::object();

  const ReportRow* find(const std::string& method) const;
};

nlohmann::json to_json(const Report& report);
Report report_from_json(const nlohmann::json& j);
ReportRow make_row(std::string method, std::vector<double> values);

/// Per-seed outcome of one trained collection.
struct SeedResult {
  std::uint64_t seed = 0;
  std::map<std::string, double> metrics;
  std::map<std::string, double> diagnostics;
};

/// Trains, selects, aggregates and evaluates one seed. Rows: ERM (optional),
/// mean-single, best-single, SuGAr(ENS), SuGAr(WA).
SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed);
/// Ablation mode: ENS metric and end-of-training similarity per variant.
SeedResult run_ablation_seed(const ExperimentConfig& cfg, std::uint64_t seed);

/// Seeds run concurrently; rows are reduced in declared order.
Report run_experiment(const ExperimentConfig& cfg);

/// One row per report, one column per method (first-seen order). Cells are
/// scale * mean ± scale * std with two decimals; missing cells print "—".
std::string metrics_table(const std::vector<Report>& reports, double scale = 100.0);

DatasetSplit load_experiment_data(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace sugar
