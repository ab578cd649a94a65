#pragma once

// Differentiable forward/backward passes behind InvariantGNN. Activations are
// row-major (one row per node / edge / graph). Backward functions accumulate
// into a gradient store laid out like the model's ParamStore.

#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sugar/graph.hpp"
#include "sugar/model.hpp"
#include "sugar/rng.hpp"

namespace sugar::nn {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Disjoint union of several graphs with global node ids.
struct GraphBatch {
  int num_graphs = 0;
  int num_nodes = 0;
  int num_edges = 0;
  RowMat x;
  std::vector<int> src, dst;
  std::vector<int> node_graph;
  std::vector<int> node_offset;  // size num_graphs + 1
  std::vector<int> edge_offset;  // size num_graphs + 1
  std::vector<int> labels;
};

GraphBatch make_batch(std::span<const Graph* const> graphs);

/// Tensor indices of one encoder inside the ParamStore.
struct EncoderLayout {
  struct Layer {
    std::size_t w1, b1, w2, b2;
  };
  std::vector<Layer> layers;
};

struct ModelLayout {
  EncoderLayout featurizer;
  std::size_t edge_w1, edge_b1, edge_w2, edge_b2;
  EncoderLayout classifier;
  std::size_t head_w, head_b;

  static ModelLayout of(const ParamStore& params, int num_layers);
};

struct EncoderLayerCache {
  RowMat in, agg, z1, z2;
  Eigen::Array<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> drop;  // empty when unused
};

struct EncoderCache {
  std::vector<EncoderLayerCache> layers;
  RowMat out;
};

/// GIN-style layer stack: h' = MLP(h + sum_{u in N(v)} w_uv h_u). ReLU
/// between layers, none after the last. Empty `weights` means all ones.
void encoder_forward(const ParamStore& p, const EncoderLayout& lay, const GraphBatch& b,
                     std::span<const double> weights, double dropout, Rng* rng, EncoderCache& cache);

/// dweights (if non-null) accumulates d/dw_e for every edge of the batch.
void encoder_backward(const ParamStore& p, const EncoderLayout& lay, const GraphBatch& b,
                      std::span<const double> weights, const EncoderCache& cache, RowMat d_out,
                      ParamStore& grads, std::vector<double>* dweights);

struct ScorerCache {
  RowMat pairs, z;     // (2E x 2H), (2E x H)
  Eigen::VectorXd s;   // (2E)
  std::vector<double> w;
};

/// Edge weight = sigmoid(0.5 * (s(h_u || h_v) + s(h_v || h_u))).
void scorer_forward(const ParamStore& p, const ModelLayout& lay, const GraphBatch& b, const RowMat& h,
                    ScorerCache& cache);
void scorer_backward(const ParamStore& p, const ModelLayout& lay, const GraphBatch& b, const ScorerCache& cache,
                     std::span<const double> d_weights, ParamStore& grads, RowMat& d_h);

struct FeaturizerPass {
  EncoderCache enc;
  ScorerCache scorer;
  const std::vector<double>& weights() const { return scorer.w; }
};

FeaturizerPass featurizer_forward(const InvariantGNN& m, const ModelLayout& lay, const GraphBatch& b,
                                  Rng* dropout_rng);
void featurizer_backward(const InvariantGNN& m, const ModelLayout& lay, const GraphBatch& b,
                         const FeaturizerPass& pass, std::span<const double> d_weights, ParamStore& grads);

struct ClassifierPass {
  EncoderCache enc;
  RowMat embedding;  // num_graphs x H (mean pooled)
  RowMat logits;     // num_graphs x C
  RowMat probs;
};

ClassifierPass classifier_forward(const InvariantGNN& m, const ModelLayout& lay, const GraphBatch& b,
                                  std::span<const double> mask, Rng* dropout_rng);
/// d_embedding may be empty (no contrastive term). dmask may be null.
void classifier_backward(const InvariantGNN& m, const ModelLayout& lay, const GraphBatch& b,
                         std::span<const double> mask, const ClassifierPass& pass, const RowMat& d_logits,
                         const RowMat& d_embedding, ParamStore& grads, std::vector<double>* dmask);

/// Keeps each graph's top ceil(s_c*|E_g|) weights and zeroes the rest.
std::vector<double> gate_top_k(const GraphBatch& b, std::span<const double> weights, double s_c);

/// Per-graph hard masks: 1 on each graph's top-k edges, 0 elsewhere.
std::vector<double> hard_top_k(const GraphBatch& b, std::span<const double> weights, double s_c);

RowMat softmax_rows(const RowMat& logits);

}  // namespace sugar::nn
