#include "sugar/nn.hpp"

#include <cmath>

#include "sugar/error.hpp"

namespace sugar::nn {

namespace {

RowMat aggregate(const RowMat& h, const GraphBatch& b, std::span<const double> w) {
  RowMat agg = h;
  for (int e = 0; e < b.num_edges; ++e) {
    const double we = w.empty() ? 1.0 : w[static_cast<std::size_t>(e)];
    if (we == 0.0) continue;
    agg.row(b.dst[e]).noalias() += we * h.row(b.src[e]);
    agg.row(b.src[e]).noalias() += we * h.row(b.dst[e]);
  }
  return agg;
}

const Eigen::MatrixXd& val(const ParamStore& p, std::size_t i) { return p[i].value; }
Eigen::MatrixXd& grad(ParamStore& g, std::size_t i) { return g[i].value; }

}  // namespace

GraphBatch make_batch(std::span<const Graph* const> graphs) {
  GraphBatch b;
  b.num_graphs = static_cast<int>(graphs.size());
  b.node_offset.reserve(graphs.size() + 1);
  b.edge_offset.reserve(graphs.size() + 1);
  b.node_offset.push_back(0);
  b.edge_offset.push_back(0);
  int feat = -1;
  for (const Graph* g : graphs) {
    if (g->num_nodes < 1) throw Error(ErrorKind::InvalidGraph, "graphs need at least one node");
    if (feat < 0) feat = g->feature_dim();
    if (g->feature_dim() != feat) throw Error(ErrorKind::FeatureDimMismatch, "mixed feature dims in batch");
    b.num_nodes += g->num_nodes;
    b.num_edges += static_cast<int>(g->edge_count());
    b.node_offset.push_back(b.num_nodes);
    b.edge_offset.push_back(b.num_edges);
  }
  b.x.resize(b.num_nodes, std::max(feat, 0));
  b.src.reserve(static_cast<std::size_t>(b.num_edges));
  b.dst.reserve(static_cast<std::size_t>(b.num_edges));
  b.node_graph.reserve(static_cast<std::size_t>(b.num_nodes));
  for (int gi = 0; gi < b.num_graphs; ++gi) {
    const Graph& g = *graphs[static_cast<std::size_t>(gi)];
    const int off = b.node_offset[static_cast<std::size_t>(gi)];
    b.x.middleRows(off, g.num_nodes) = g.node_features;
    for (const auto& e : g.edges) {
      b.src.push_back(e.src + off);
      b.dst.push_back(e.dst + off);
    }
    b.node_graph.insert(b.node_graph.end(), static_cast<std::size_t>(g.num_nodes), gi);
    b.labels.push_back(g.label);
  }
  return b;
}

ModelLayout ModelLayout::of(const ParamStore& p, int num_layers) {
  ModelLayout lay{};
  for (int l = 0; l < num_layers; ++l) {
    const std::string f = "featurizer.gin." + std::to_string(l) + ".";
    const std::string c = "classifier.gin." + std::to_string(l) + ".";
    lay.featurizer.layers.push_back({p.index_of(f + "w1"), p.index_of(f + "b1"), p.index_of(f + "w2"), p.index_of(f + "b2")});
    lay.classifier.layers.push_back({p.index_of(c + "w1"), p.index_of(c + "b1"), p.index_of(c + "w2"), p.index_of(c + "b2")});
  }
  lay.edge_w1 = p.index_of("featurizer.edge.w1");
  lay.edge_b1 = p.index_of("featurizer.edge.b1");
  lay.edge_w2 = p.index_of("featurizer.edge.w2");
  lay.edge_b2 = p.index_of("featurizer.edge.b2");
  lay.head_w = p.index_of("classifier.head.w");
  lay.head_b = p.index_of("classifier.head.b");
  return lay;
}

void encoder_forward(const ParamStore& p, const EncoderLayout& lay, const GraphBatch& b,
                     std::span<const double> weights, double dropout, Rng* rng, EncoderCache& cache) {
  const std::size_t n_layers = lay.layers.size();
  cache.layers.resize(n_layers);
  RowMat h = b.x;
  for (std::size_t l = 0; l < n_layers; ++l) {
    const auto& L = lay.layers[l];
    auto& c = cache.layers[l];
    c.agg = aggregate(h, b, weights);
    c.in = std::move(h);
    c.z1.noalias() = c.agg * val(p, L.w1);
    c.z1.rowwise() += val(p, L.b1).row(0);
    RowMat a1 = c.z1.cwiseMax(0.0);
    c.z2.noalias() = a1 * val(p, L.w2);
    c.z2.rowwise() += val(p, L.b2).row(0);
    const bool last = l + 1 == n_layers;
    if (last) {
      h = c.z2;
      c.drop.resize(0, 0);
    } else {
      h = c.z2.cwiseMax(0.0);
      if (dropout > 0.0 && rng != nullptr) {
        c.drop.resize(h.rows(), h.cols());
        const double keep = 1.0 / (1.0 - dropout);
        for (Eigen::Index i = 0; i < c.drop.size(); ++i) {
          c.drop.data()[i] = uniform01(*rng) < dropout ? 0.0 : keep;
        }
        h.array() *= c.drop;
      } else {
        c.drop.resize(0, 0);
      }
    }
  }
  cache.out = std::move(h);
}

void encoder_backward(const ParamStore& p, const EncoderLayout& lay, const GraphBatch& b,
                      std::span<const double> weights, const EncoderCache& cache, RowMat d_out,
                      ParamStore& grads, std::vector<double>* dweights) {
  const std::size_t n_layers = lay.layers.size();
  for (std::size_t li = n_layers; li-- > 0;) {
    const auto& L = lay.layers[li];
    const auto& c = cache.layers[li];
    const bool last = li + 1 == n_layers;
    RowMat dz2 = std::move(d_out);
    if (!last) {
      if (c.drop.size() > 0) dz2.array() *= c.drop;
      dz2.array() *= (c.z2.array() > 0.0).cast<double>();
    }
    RowMat a1 = c.z1.cwiseMax(0.0);
    grad(grads, L.w2).noalias() += a1.transpose() * dz2;
    grad(grads, L.b2).row(0) += dz2.colwise().sum();
    RowMat dz1 = dz2 * val(p, L.w2).transpose();
    dz1.array() *= (c.z1.array() > 0.0).cast<double>();
    grad(grads, L.w1).noalias() += c.agg.transpose() * dz1;
    grad(grads, L.b1).row(0) += dz1.colwise().sum();
    RowMat dagg = dz1 * val(p, L.w1).transpose();
    if (dweights != nullptr) {
      for (int e = 0; e < b.num_edges; ++e) {
        (*dweights)[static_cast<std::size_t>(e)] +=
            dagg.row(b.dst[e]).dot(c.in.row(b.src[e])) + dagg.row(b.src[e]).dot(c.in.row(b.dst[e]));
      }
    }
    if (li == 0) break;
    d_out = dagg;
    for (int e = 0; e < b.num_edges; ++e) {
      const double we = weights.empty() ? 1.0 : weights[static_cast<std::size_t>(e)];
      if (we == 0.0) continue;
      d_out.row(b.src[e]).noalias() += we * dagg.row(b.dst[e]);
      d_out.row(b.dst[e]).noalias() += we * dagg.row(b.src[e]);
    }
  }
}

void scorer_forward(const ParamStore& p, const ModelLayout& lay, const GraphBatch& b, const RowMat& h,
                    ScorerCache& cache) {
  const int E = b.num_edges;
  const Eigen::Index H = h.cols();
  cache.pairs.resize(2 * E, 2 * H);
  for (int e = 0; e < E; ++e) {
    cache.pairs.row(e).head(H) = h.row(b.src[e]);
    cache.pairs.row(e).tail(H) = h.row(b.dst[e]);
    cache.pairs.row(E + e).head(H) = h.row(b.dst[e]);
    cache.pairs.row(E + e).tail(H) = h.row(b.src[e]);
  }
  cache.z.noalias() = cache.pairs * val(p, lay.edge_w1);
  cache.z.rowwise() += val(p, lay.edge_b1).row(0);
  const RowMat r = cache.z.cwiseMax(0.0);
  cache.s = r * val(p, lay.edge_w2).col(0);
  cache.s.array() += val(p, lay.edge_b2)(0, 0);
  cache.w.resize(static_cast<std::size_t>(E));
  for (int e = 0; e < E; ++e) {
    const double logit = 0.5 * (cache.s(e) + cache.s(E + e));
    cache.w[static_cast<std::size_t>(e)] = 1.0 / (1.0 + std::exp(-logit));
  }
}

void scorer_backward(const ParamStore& p, const ModelLayout& lay, const GraphBatch& b, const ScorerCache& cache,
                     std::span<const double> d_weights, ParamStore& grads, RowMat& d_h) {
  const int E = b.num_edges;
  if (E == 0) return;
  const Eigen::Index H = d_h.cols();
  Eigen::VectorXd ds(2 * E);
  for (int e = 0; e < E; ++e) {
    const double w = cache.w[static_cast<std::size_t>(e)];
    const double dlogit = d_weights[static_cast<std::size_t>(e)] * w * (1.0 - w);
    ds(e) = 0.5 * dlogit;
    ds(E + e) = 0.5 * dlogit;
  }
  const RowMat r = cache.z.cwiseMax(0.0);
  grad(grads, lay.edge_w2).col(0).noalias() += r.transpose() * ds;
  grad(grads, lay.edge_b2)(0, 0) += ds.sum();
  RowMat dz = ds * val(p, lay.edge_w2).col(0).transpose();
  dz.array() *= (cache.z.array() > 0.0).cast<double>();
  grad(grads, lay.edge_w1).noalias() += cache.pairs.transpose() * dz;
  grad(grads, lay.edge_b1).row(0) += dz.colwise().sum();
  const RowMat dpairs = dz * val(p, lay.edge_w1).transpose();
  for (int e = 0; e < E; ++e) {
    d_h.row(b.src[e]) += dpairs.row(e).head(H) + dpairs.row(E + e).tail(H);
    d_h.row(b.dst[e]) += dpairs.row(e).tail(H) + dpairs.row(E + e).head(H);
  }
}

FeaturizerPass featurizer_forward(const InvariantGNN& m, const ModelLayout& lay, const GraphBatch& b,
                                  Rng* dropout_rng) {
  FeaturizerPass pass;
  encoder_forward(m.params(), lay.featurizer, b, {}, m.config().dropout_rate, dropout_rng, pass.enc);
  scorer_forward(m.params(), lay, b, pass.enc.out, pass.scorer);
  return pass;
}

void featurizer_backward(const InvariantGNN& m, const ModelLayout& lay, const GraphBatch& b,
                         const FeaturizerPass& pass, std::span<const double> d_weights, ParamStore& grads) {
  RowMat d_h = RowMat::Zero(b.num_nodes, pass.enc.out.cols());
  scorer_backward(m.params(), lay, b, pass.scorer, d_weights, grads, d_h);
  encoder_backward(m.params(), lay.featurizer, b, {}, pass.enc, std::move(d_h), grads, nullptr);
}

RowMat softmax_rows(const RowMat& logits) {
  RowMat out(logits.rows(), logits.cols());
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    const double mx = logits.row(i).maxCoeff();
    out.row(i) = (logits.row(i).array() - mx).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

ClassifierPass classifier_forward(const InvariantGNN& m, const ModelLayout& lay, const GraphBatch& b,
                                  std::span<const double> mask, Rng* dropout_rng) {
  ClassifierPass pass;
  encoder_forward(m.params(), lay.classifier, b, mask, m.config().dropout_rate, dropout_rng, pass.enc);
  const RowMat& h = pass.enc.out;
  pass.embedding = RowMat::Zero(b.num_graphs, h.cols());
  for (int v = 0; v < b.num_nodes; ++v) pass.embedding.row(b.node_graph[static_cast<std::size_t>(v)]) += h.row(v);
  for (int g = 0; g < b.num_graphs; ++g) {
    const auto n = static_cast<double>(b.node_offset[static_cast<std::size_t>(g) + 1] - b.node_offset[static_cast<std::size_t>(g)]);
    pass.embedding.row(g) /= n;
  }
  pass.logits.noalias() = pass.embedding * val(m.params(), lay.head_w);
  pass.logits.rowwise() += val(m.params(), lay.head_b).row(0);
  pass.probs = softmax_rows(pass.logits);
  return pass;
}

void classifier_backward(const InvariantGNN& m, const ModelLayout& lay, const GraphBatch& b,
                         std::span<const double> mask, const ClassifierPass& pass, const RowMat& d_logits,
                         const RowMat& d_embedding, ParamStore& grads, std::vector<double>* dmask) {
  grad(grads, lay.head_w).noalias() += pass.embedding.transpose() * d_logits;
  grad(grads, lay.head_b).row(0) += d_logits.colwise().sum();
  RowMat d_emb = d_logits * val(m.params(), lay.head_w).transpose();
  if (d_embedding.size() > 0) d_emb += d_embedding;
  RowMat d_h(b.num_nodes, d_emb.cols());
  for (int g = 0; g < b.num_graphs; ++g) {
    const int lo = b.node_offset[static_cast<std::size_t>(g)];
    const int hi = b.node_offset[static_cast<std::size_t>(g) + 1];
    const auto scaled = (d_emb.row(g) / static_cast<double>(hi - lo)).eval();
    for (int v = lo; v < hi; ++v) d_h.row(v) = scaled;
  }
  encoder_backward(m.params(), lay.classifier, b, mask, pass.enc, std::move(d_h), grads, dmask);
}

std::vector<double> gate_top_k(const GraphBatch& b, std::span<const double> weights, double s_c) {
  std::vector<double> out(weights.size(), 0.0);
  for (int g = 0; g < b.num_graphs; ++g) {
    const int lo = b.edge_offset[static_cast<std::size_t>(g)];
    const int hi = b.edge_offset[static_cast<std::size_t>(g) + 1];
    if (hi == lo) continue;
    const auto seg = weights.subspan(static_cast<std::size_t>(lo), static_cast<std::size_t>(hi - lo));
    for (int idx : top_k_indices(seg, ratio_to_k(s_c, seg.size()))) {
      out[static_cast<std::size_t>(lo + idx)] = weights[static_cast<std::size_t>(lo + idx)];
    }
  }
  return out;
}

std::vector<double> hard_top_k(const GraphBatch& b, std::span<const double> weights, double s_c) {
  std::vector<double> out(weights.size(), 0.0);
  for (int g = 0; g < b.num_graphs; ++g) {
    const int lo = b.edge_offset[static_cast<std::size_t>(g)];
    const int hi = b.edge_offset[static_cast<std::size_t>(g) + 1];
    if (hi == lo) continue;
    const auto seg = weights.subspan(static_cast<std::size_t>(lo), static_cast<std::size_t>(hi - lo));
    for (int idx : top_k_indices(seg, ratio_to_k(s_c, seg.size()))) out[static_cast<std::size_t>(lo + idx)] = 1.0;
  }
  return out;
}

}  // namespace sugar::nn
