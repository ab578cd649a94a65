#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace sugar {

/// Undirected edge stored once with src < dst.
struct Edge {
  int src = 0;
  int dst = 0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Attributed, labeled graph. Edge order is the alignment order for every
/// per-edge quantity (weights, masks, selections).
struct Graph {
  int num_nodes = 0;
  std::vector<Edge> edges;
  Eigen::MatrixXd node_features;  // num_nodes x feature_dim
  int label = 0;
  std::optional<int> env_id;
  std::optional<std::vector<std::uint8_t>> truth_edge_mask;

  std::size_t edge_count() const { return edges.size(); }
  int feature_dim() const { return static_cast<int>(node_features.cols()); }

  /// Throws Error(InvalidGraph) on any broken invariant. A negative
  /// num_classes skips the label range check.
  void validate(int num_classes = -1) const;
};

/// Per-edge scores in [0,1], aligned to one graph's edge list.
class EdgeWeights {
 public:
  EdgeWeights() = default;
  explicit EdgeWeights(std::vector<double> values);

  static EdgeWeights constant(std::size_t edge_count, double value);

  std::size_t size() const { return values_.size(); }
  std::size_t graph_edge_count() const { return values_.size(); }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }

  /// Throws MisalignedWeights unless size() == edge_count.
  void check_aligned(std::size_t edge_count) const;

 private:
  std::vector<double> values_;
};

/// Sorted set of retained edge indices into a parent graph.
class SubgraphSelection {
 public:
  SubgraphSelection() = default;
  SubgraphSelection(std::vector<int> edge_indices, std::size_t parent_edge_count);

  const std::vector<int>& edge_indices() const { return indices_; }
  std::size_t k() const { return indices_.size(); }
  bool contains(int edge) const;

 private:
  std::vector<int> indices_;
};

/// Read-only view used by message passing: each edge's message is scaled by
/// its weight. Holds references only; the graph must outlive the view.
struct MaskedGraphView {
  const Graph* graph = nullptr;
  std::span<const double> weights;
};

/// ceil(s_c * edge_count) clamped to [1, edge_count].
std::size_t ratio_to_k(double s_c, std::size_t edge_count);

/// Indices of the k largest weights; ties go to the smaller edge index.
SubgraphSelection top_k_edges(const EdgeWeights& weights, std::size_t k);
std::vector<int> top_k_indices(std::span<const double> weights, std::size_t k);

MaskedGraphView apply_soft_mask(const Graph& graph, const EdgeWeights& weights);

EdgeWeights selection_to_hard_mask(const SubgraphSelection& sel, std::size_t edge_count);

/// |a ∩ b| / |a ∪ b| over edge index sets.
double jaccard(const std::vector<int>& a, const std::vector<int>& b);

/// Indices of edges flagged in the truth mask (empty when absent).
std::vector<int> truth_edges(const Graph& graph);

/// Connected components via BFS; returns true when the graph is connected.
bool is_connected(int num_nodes, const std::vector<Edge>& edges);

// JSON Lines serialization: one graph per line.
nlohmann::json graph_to_json(const Graph& graph);
Graph graph_from_json(const nlohmann::json& j);
std::string graph_to_jsonl_line(const Graph& graph);
std::vector<Graph> read_graphs_jsonl(const std::filesystem::path& path);
void write_graphs_jsonl(const std::filesystem::path& path, const std::vector<Graph>& graphs);

}  // namespace sugar
