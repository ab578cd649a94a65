#include "sugar/graph.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <queue>
#include <set>
#include <sstream>

#include "sugar/error.hpp"

namespace sugar {

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidRatio: return "invalid-ratio";
    case ErrorKind::EmptyGraph: return "empty-graph";
    case ErrorKind::KOutOfRange: return "k-out-of-range";
    case ErrorKind::MisalignedWeights: return "misaligned-weights";
    case ErrorKind::IndexOutOfRange: return "index-out-of-range";
    case ErrorKind::InvalidGraph: return "invalid-graph";
    case ErrorKind::SizeTooSmall: return "size-too-small";
    case ErrorKind::FeatureDimMismatch: return "feature-dim-mismatch";
    case ErrorKind::EmptyBatch: return "empty-batch";
    case ErrorKind::NonFiniteTerm: return "non-finite-term";
    case ErrorKind::Divergence: return "divergence";
    case ErrorKind::RocAucUndefined: return "roc-auc-undefined";
    case ErrorKind::CorruptManifest: return "corrupt-manifest";
    case ErrorKind::ShapeMismatch: return "shape-mismatch";
    case ErrorKind::FingerprintMismatch: return "fingerprint-mismatch";
    case ErrorKind::EmptyModelList: return "empty-model-list";
    case ErrorKind::EmptyMatrix: return "empty-matrix";
    case ErrorKind::InvalidConfig: return "invalid-config";
    case ErrorKind::Io: return "io-failure";
  }
  return "unknown";
}

void Graph::validate(int num_classes) const {
  if (num_nodes < 0) throw Error(ErrorKind::InvalidGraph, "negative node count");
  if (node_features.rows() != num_nodes) {
    throw Error(ErrorKind::InvalidGraph, "feature rows != num_nodes");
  }
  std::set<std::pair<int, int>> seen;
  for (const auto& e : edges) {
    if (e.src < 0 || e.dst < 0 || e.src >= num_nodes || e.dst >= num_nodes) {
      throw Error(ErrorKind::InvalidGraph, "edge endpoint out of range");
    }
    if (e.src >= e.dst) throw Error(ErrorKind::InvalidGraph, "edge not canonical (src < dst)");
    if (!seen.emplace(e.src, e.dst).second) throw Error(ErrorKind::InvalidGraph, "duplicate edge");
  }
  if (truth_edge_mask && truth_edge_mask->size() != edges.size()) {
    throw Error(ErrorKind::InvalidGraph, "truth mask length != edge count");
  }
  if (num_classes >= 0 && (label < 0 || label >= num_classes)) {
    throw Error(ErrorKind::InvalidGraph, "label out of range");
  }
}

EdgeWeights::EdgeWeights(std::vector<double> values) : values_(std::move(values)) {
  for (double v : values_) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorKind::MisalignedWeights, "edge weight outside [0,1]");
    }
  }
}

EdgeWeights EdgeWeights::constant(std::size_t edge_count, double value) {
  return EdgeWeights(std::vector<double>(edge_count, value));
}

void EdgeWeights::check_aligned(std::size_t edge_count) const {
  if (values_.size() != edge_count) {
    std::ostringstream os;
    os << "have " << values_.size() << " weights for " << edge_count << " edges";
    throw Error(ErrorKind::MisalignedWeights, os.str());
  }
}

SubgraphSelection::SubgraphSelection(std::vector<int> edge_indices, std::size_t parent_edge_count)
    : indices_(std::move(edge_indices)) {
  if (indices_.empty()) throw Error(ErrorKind::KOutOfRange, "selection must keep at least one edge");
  std::sort(indices_.begin(), indices_.end());
  if (std::adjacent_find(indices_.begin(), indices_.end()) != indices_.end()) {
    throw Error(ErrorKind::IndexOutOfRange, "duplicate edge index in selection");
  }
  if (indices_.front() < 0 || static_cast<std::size_t>(indices_.back()) >= parent_edge_count) {
    throw Error(ErrorKind::IndexOutOfRange, "selected edge index outside parent graph");
  }
}

bool SubgraphSelection::contains(int edge) const {
  return std::binary_search(indices_.begin(), indices_.end(), edge);
}

std::size_t ratio_to_k(double s_c, std::size_t edge_count) {
  if (!(s_c > 0.0 && s_c <= 1.0)) throw Error(ErrorKind::InvalidRatio, "ratio must lie in (0,1]");
  if (edge_count == 0) throw Error(ErrorKind::EmptyGraph, "graph has no edges");
  // Guard against 0.85 * 100 = 85.00000000000001 rounding up to 86.
  const double raw = s_c * static_cast<double>(edge_count);
  const double rounded = std::round(raw);
  const double k = std::abs(raw - rounded) < 1e-9 ? rounded : std::ceil(raw);
  return std::clamp<std::size_t>(static_cast<std::size_t>(k), 1, edge_count);
}

std::vector<int> top_k_indices(std::span<const double> weights, std::size_t k) {
  if (k < 1 || k > weights.size()) {
    throw Error(ErrorKind::KOutOfRange, "k must satisfy 1 <= k <= |E|");
  }
  std::vector<int> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](int a, int b) {
                      if (weights[a] != weights[b]) return weights[a] > weights[b];
                      return a < b;
                    });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

SubgraphSelection top_k_edges(const EdgeWeights& weights, std::size_t k) {
  return SubgraphSelection(top_k_indices(weights.values(), k), weights.size());
}

MaskedGraphView apply_soft_mask(const Graph& graph, const EdgeWeights& weights) {
  weights.check_aligned(graph.edge_count());
  return MaskedGraphView{&graph, weights.values()};
}

EdgeWeights selection_to_hard_mask(const SubgraphSelection& sel, std::size_t edge_count) {
  if (sel.k() == 0) throw Error(ErrorKind::KOutOfRange, "empty selection");
  std::vector<double> mask(edge_count, 0.0);
  for (int idx : sel.edge_indices()) {
    if (idx < 0 || static_cast<std::size_t>(idx) >= edge_count) {
      throw Error(ErrorKind::IndexOutOfRange, "selection index beyond edge count");
    }
    mask[static_cast<std::size_t>(idx)] = 1.0;
  }
  return EdgeWeights(std::move(mask));
}

double jaccard(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> sa(a), sb(b);
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  std::vector<int> inter, uni;
  std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
  std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(uni));
  if (uni.empty()) return 1.0;
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

std::vector<int> truth_edges(const Graph& graph) {
  std::vector<int> out;
  if (!graph.truth_edge_mask) return out;
  for (std::size_t i = 0; i < graph.truth_edge_mask->size(); ++i) {
    if ((*graph.truth_edge_mask)[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

bool is_connected(int num_nodes, const std::vector<Edge>& edges) {
  if (num_nodes <= 1) return true;
  std::vector<std::vector<int>> adj(static_cast<std::size_t>(num_nodes));
  for (const auto& e : edges) {
    adj[e.src].push_back(e.dst);
    adj[e.dst].push_back(e.src);
  }
  std::vector<char> seen(static_cast<std::size_t>(num_nodes), 0);
  std::queue<int> q;
  q.push(0);
  seen[0] = 1;
  int reached = 1;
  while (!q.empty()) {
    int u = q.front();
    q.pop();
    for (int v : adj[u]) {
      if (!seen[v]) {
        seen[v] = 1;
        ++reached;
        q.push(v);
      }
    }
  }
  return reached == num_nodes;
}

nlohmann::json graph_to_json(const Graph& graph) {
  nlohmann::json j;
  j["num_nodes"] = graph.num_nodes;
  auto edges = nlohmann::json::array();
  for (const auto& e : graph.edges) edges.push_back({e.src, e.dst});
  j["edges"] = std::move(edges);
  auto x = nlohmann::json::array();
  for (Eigen::Index r = 0; r < graph.node_features.rows(); ++r) {
    auto row = nlohmann::json::array();
    for (Eigen::Index c = 0; c < graph.node_features.cols(); ++c) row.push_back(graph.node_features(r, c));
    x.push_back(std::move(row));
  }
  j["x"] = std::move(x);
  j["y"] = graph.label;
  j["env"] = graph.env_id ? nlohmann::json(*graph.env_id) : nlohmann::json(nullptr);
  if (graph.truth_edge_mask) {
    auto m = nlohmann::json::array();
    for (auto b : *graph.truth_edge_mask) m.push_back(static_cast<int>(b));
    j["mask"] = std::move(m);
  } else {
    j["mask"] = nullptr;
  }
  return j;
}

Graph graph_from_json(const nlohmann::json& j) {
  Graph g;
  try {
    g.num_nodes = j.at("num_nodes").get<int>();
    for (const auto& e : j.at("edges")) {
      int s = e.at(0).get<int>();
      int d = e.at(1).get<int>();
      if (s > d) std::swap(s, d);
      g.edges.push_back({s, d});
    }
    const auto& x = j.at("x");
    const auto cols = x.empty() ? 0 : static_cast<Eigen::Index>(x.at(0).size());
    g.node_features.resize(static_cast<Eigen::Index>(x.size()), cols);
    for (std::size_t r = 0; r < x.size(); ++r) {
      if (static_cast<Eigen::Index>(x[r].size()) != cols) {
        throw Error(ErrorKind::InvalidGraph, "ragged feature matrix");
      }
      for (Eigen::Index c = 0; c < cols; ++c) {
        g.node_features(static_cast<Eigen::Index>(r), c) = x[r][static_cast<std::size_t>(c)].get<double>();
      }
    }
    g.label = j.at("y").get<int>();
    if (j.contains("env") && !j["env"].is_null()) g.env_id = j["env"].get<int>();
    if (j.contains("mask") && !j["mask"].is_null()) {
      std::vector<std::uint8_t> m;
      for (const auto& b : j["mask"]) m.push_back(static_cast<std::uint8_t>(b.get<int>() != 0));
      g.truth_edge_mask = std::move(m);
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::InvalidGraph, std::string("malformed graph record: ") + ex.what());
  }
  g.validate();
  return g;
}

std::string graph_to_jsonl_line(const Graph& graph) { return graph_to_json(graph).dump(); }

std::vector<Graph> read_graphs_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<Graph> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(graph_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& ex) {
      throw Error(ErrorKind::InvalidGraph,
                  path.string() + ":" + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

void write_graphs_jsonl(const std::filesystem::path& path, const std::vector<Graph>& graphs) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& g : graphs) out << graph_to_jsonl_line(g) << '\n';
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace sugar
