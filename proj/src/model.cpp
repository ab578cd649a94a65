#include "sugar/model.hpp"

#include <algorithm>
#include <cmath>

#include "sugar/error.hpp"
#include "sugar/nn.hpp"
#include "sugar/rng.hpp"

namespace sugar {

namespace {

constexpr std::size_t kEvalChunk = 256;

void check_features(const ModelConfig& cfg, const Graph& g) {
  if (g.feature_dim() != cfg.feature_dim) {
    throw Error(ErrorKind::FeatureDimMismatch, "graph has feature_dim " + std::to_string(g.feature_dim()) +
                                                   ", model expects " + std::to_string(cfg.feature_dim));
  }
}

}  // namespace

void ModelConfig::validate() const {
  if (num_layers < 1) throw Error(ErrorKind::InvalidConfig, "num_layers must be >= 1");
  if (hidden_dim < 1) throw Error(ErrorKind::InvalidConfig, "hidden_dim must be >= 1");
  if (num_classes < 2) throw Error(ErrorKind::InvalidConfig, "num_classes must be >= 2");
  if (feature_dim < 1) throw Error(ErrorKind::InvalidConfig, "feature_dim must be >= 1");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw Error(ErrorKind::InvalidConfig, "dropout_rate must lie in [0,1)");
  if (pooling != "mean") throw Error(ErrorKind::InvalidConfig, "only mean pooling is supported");
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"num_layers", cfg.num_layers}, {"hidden_dim", cfg.hidden_dim},   {"num_classes", cfg.num_classes},
          {"feature_dim", cfg.feature_dim}, {"dropout_rate", cfg.dropout_rate}, {"pooling", cfg.pooling}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  try {
    cfg.num_layers = j.value("num_layers", cfg.num_layers);
    cfg.hidden_dim = j.value("hidden_dim", cfg.hidden_dim);
    cfg.num_classes = j.value("num_classes", cfg.num_classes);
    cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
    cfg.dropout_rate = j.value("dropout_rate", cfg.dropout_rate);
    cfg.pooling = j.value("pooling", cfg.pooling);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::InvalidConfig, std::string("model config: ") + ex.what());
  }
  cfg.validate();
  return cfg;
}

ParamStore InvariantGNN::layout(const ModelConfig& cfg) {
  cfg.validate();
  const int H = cfg.hidden_dim;
  ParamStore p;
  for (const char* enc : {"featurizer", "classifier"}) {
    for (int l = 0; l < cfg.num_layers; ++l) {
      const std::string pre = std::string(enc) + ".gin." + std::to_string(l) + ".";
      const int in = l == 0 ? cfg.feature_dim : H;
      p.add(pre + "w1", {in, H});
      p.add(pre + "b1", {H});
      p.add(pre + "w2", {H, H});
      p.add(pre + "b2", {H});
    }
    if (std::string(enc) == "featurizer") {
      p.add("featurizer.edge.w1", {2 * H, H});
      p.add("featurizer.edge.b1", {H});
      p.add("featurizer.edge.w2", {H, 1});
      p.add("featurizer.edge.b2", {1});
    }
  }
  p.add("classifier.head.w", {H, cfg.num_classes});
  p.add("classifier.head.b", {cfg.num_classes});
  return p;
}

InvariantGNN::InvariantGNN(ModelConfig config, ParamStore params)
    : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
  const ParamStore expected = layout(config_);
  if (!expected.same_layout(params_)) {
    throw Error(ErrorKind::ShapeMismatch, "parameters do not match the model configuration");
  }
}

InvariantGNN InvariantGNN::random(const ModelConfig& config, std::uint64_t seed) {
  ParamStore p = layout(config);
  auto rng = make_rng(seed, 0x5eed);
  // Weight and bias of one linear map share the weight's fan-in.
  int fan_in = 1;
  for (std::size_t i = 0; i < p.size(); ++i) {
    Tensor& t = p[i];
    if (t.shape.size() == 2) fan_in = t.shape[0];
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (Eigen::Index k = 0; k < t.value.size(); ++k) t.value.data()[k] = dist(rng);
  }
  p.round_to_float();
  return InvariantGNN(config, std::move(p));
}

std::vector<EdgeWeights> InvariantGNN::featurize_many(std::span<const Graph* const> graphs) const {
  const auto lay = nn::ModelLayout::of(params_, config_.num_layers);
  std::vector<EdgeWeights> out;
  out.reserve(graphs.size());
  for (std::size_t lo = 0; lo < graphs.size(); lo += kEvalChunk) {
    const auto chunk = graphs.subspan(lo, std::min(kEvalChunk, graphs.size() - lo));
    for (const Graph* g : chunk) check_features(config_, *g);
    const auto batch = nn::make_batch(chunk);
    const auto pass = nn::featurizer_forward(*this, lay, batch, nullptr);
    for (int g = 0; g < batch.num_graphs; ++g) {
      const auto begin = pass.weights().begin() + batch.edge_offset[static_cast<std::size_t>(g)];
      const auto end = pass.weights().begin() + batch.edge_offset[static_cast<std::size_t>(g) + 1];
      out.emplace_back(std::vector<double>(begin, end));
    }
  }
  return out;
}

std::vector<std::vector<double>> InvariantGNN::classify_many(std::span<const Graph* const> graphs,
                                                             std::span<const EdgeWeights> masks) const {
  if (!masks.empty() && masks.size() != graphs.size()) {
    throw Error(ErrorKind::MisalignedWeights, "one mask per graph required");
  }
  const auto lay = nn::ModelLayout::of(params_, config_.num_layers);
  std::vector<std::vector<double>> out;
  out.reserve(graphs.size());
  std::vector<double> flat;
  for (std::size_t lo = 0; lo < graphs.size(); lo += kEvalChunk) {
    const std::size_t n = std::min(kEvalChunk, graphs.size() - lo);
    const auto chunk = graphs.subspan(lo, n);
    flat.clear();
    for (std::size_t i = 0; i < n; ++i) {
      check_features(config_, *chunk[i]);
      if (!masks.empty()) {
        masks[lo + i].check_aligned(chunk[i]->edge_count());
        flat.insert(flat.end(), masks[lo + i].values().begin(), masks[lo + i].values().end());
      }
    }
    const auto batch = nn::make_batch(chunk);
    const auto pass = nn::classifier_forward(*this, lay, batch, flat, nullptr);
    for (int g = 0; g < batch.num_graphs; ++g) {
      out.emplace_back(pass.probs.row(g).begin(), pass.probs.row(g).end());
    }
  }
  return out;
}

EdgeWeights InvariantGNN::featurize(const Graph& graph) const {
  const Graph* gp = &graph;
  return std::move(featurize_many(std::span<const Graph* const>(&gp, 1)).front());
}

std::vector<double> InvariantGNN::classify(const Graph& graph, const EdgeWeights& mask) const {
  mask.check_aligned(graph.edge_count());
  const Graph* gp = &graph;
  return std::move(classify_many(std::span<const Graph* const>(&gp, 1), std::span<const EdgeWeights>(&mask, 1)).front());
}

Eigen::VectorXd InvariantGNN::graph_embedding(const Graph& graph, const EdgeWeights& mask) const {
  check_features(config_, graph);
  mask.check_aligned(graph.edge_count());
  const auto lay = nn::ModelLayout::of(params_, config_.num_layers);
  const Graph* gp = &graph;
  const auto batch = nn::make_batch(std::span<const Graph* const>(&gp, 1));
  const auto pass = nn::classifier_forward(*this, lay, batch, mask.values(), nullptr);
  return pass.embedding.row(0).transpose();
}

std::vector<InvariantGNN> init_shared(int n, const ModelConfig& config, std::uint64_t seed) {
  if (n < 1) throw Error(ErrorKind::InvalidConfig, "need at least one model");
  const InvariantGNN base = InvariantGNN::random(config, seed);
  return std::vector<InvariantGNN>(static_cast<std::size_t>(n), base);
}

EdgeWeights featurize(const InvariantGNN& model, const Graph& graph) { return model.featurize(graph); }

std::vector<double> classify(const InvariantGNN& model, const Graph& graph, const EdgeWeights& mask) {
  return model.classify(graph, mask);
}

Eigen::VectorXd graph_embedding(const InvariantGNN& model, const Graph& graph, const EdgeWeights& mask) {
  return model.graph_embedding(graph, mask);
}

std::vector<double> predict_with_own_selection(const InvariantGNN& model, const Graph& graph, double s_c) {
  const EdgeWeights w = model.featurize(graph);
  if (graph.edge_count() == 0) return model.classify(graph, w);
  const auto sel = top_k_edges(w, ratio_to_k(s_c, graph.edge_count()));
  return model.classify(graph, selection_to_hard_mask(sel, graph.edge_count()));
}

}  // namespace sugar
