#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "sugar/error.hpp"
#include "sugar/graph.hpp"
#include "sugar/rng.hpp"
#include "toy.hpp"

using namespace sugar;

namespace {

// Max-sum subset of size k; among equal sums the lexicographically smallest
// sorted index list.
std::vector<int> brute_top_k(const std::vector<double>& w, int k) {
  const int m = static_cast<int>(w.size());
  std::vector<int> best;
  double best_sum = -1.0;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    if (__builtin_popcount(mask) != k) continue;
    std::vector<int> s;
    double sum = 0.0;
    for (int i = 0; i < m; ++i)
      if (mask & (1u << i)) s.push_back(i), sum += w[i];
    if (sum > best_sum || (sum == best_sum && s < best)) best = s, best_sum = sum;
  }
  return best;
}

template <class F>
ErrorKind kind_of(F&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("expected an error");
  return ErrorKind::Io;
}

}  // namespace

TEST_CASE("ratio_to_k examples and errors") {
  CHECK(ratio_to_k(1.0, 7) == 7);
  CHECK(ratio_to_k(0.5, 7) == 4);
  CHECK(ratio_to_k(0.85, 100) == 85);
  CHECK(ratio_to_k(0.01, 5) == 1);
  CHECK(kind_of([] { ratio_to_k(0.0, 5); }) == ErrorKind::InvalidRatio);
  CHECK(kind_of([] { ratio_to_k(1.5, 5); }) == ErrorKind::InvalidRatio);
  CHECK(kind_of([] { ratio_to_k(0.5, 0); }) == ErrorKind::EmptyGraph);
}

TEST_CASE("ratio_to_k is monotone in both arguments") {
  for (std::size_t m = 1; m <= 40; ++m) {
    std::size_t prev = 0;
    for (int i = 1; i <= 100; ++i) {
      const std::size_t k = ratio_to_k(i / 100.0, m);
      CHECK(k >= prev);
      CHECK(k <= m);
      CHECK(ratio_to_k(i / 100.0, m + 1) >= k);
      prev = k;
    }
    CHECK(ratio_to_k(1.0, m) == m);
  }
}

TEST_CASE("top_k_edges examples") {
  CHECK(top_k_edges(EdgeWeights({0.9, 0.1, 0.5, 0.5}), 2).edge_indices() == std::vector<int>{0, 2});
  CHECK(top_k_edges(EdgeWeights({0.3, 0.3, 0.3}), 3).edge_indices() == std::vector<int>{0, 1, 2});
  CHECK(top_k_edges(EdgeWeights({0.2, 0.8}), 1).edge_indices() == std::vector<int>{1});
  CHECK(kind_of([] { top_k_edges(EdgeWeights({0.2, 0.8}), 0); }) == ErrorKind::KOutOfRange);
  CHECK(kind_of([] { top_k_edges(EdgeWeights({0.2, 0.8}), 3); }) == ErrorKind::KOutOfRange);
}

TEST_CASE("top_k_edges matches subset brute force for every size up to 10") {
  auto rng = make_rng(2024);
  int mismatches = 0, cases = 0;
  for (int m = 1; m <= 10; ++m) {
    for (int rep = 0; rep < 12; ++rep) {
      std::vector<double> w(m);
      // coarse grid on even reps forces ties
      for (auto& v : w) v = rep % 2 == 0 ? uniform_int(rng, 0, 4) / 4.0 : uniform01(rng);
      for (int k = 1; k <= m; ++k) {
        ++cases;
        if (top_k_edges(EdgeWeights(w), k).edge_indices() != brute_top_k(w, k)) ++mismatches;
      }
    }
  }
  CHECK(cases == 12 * 55);
  CHECK(mismatches == 0);
}

TEST_CASE("top_k_edges is invariant under strictly monotone transforms") {
  auto rng = make_rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    std::vector<double> w(9), t(9);
    for (int i = 0; i < 9; ++i) {
      w[i] = uniform_int(rng, 0, 6) / 6.0;
      t[i] = std::pow(w[i], 3.0) * 0.5 + 0.1;
    }
    for (int k = 1; k <= 9; ++k)
      CHECK(top_k_edges(EdgeWeights(w), k).edge_indices() == top_k_edges(EdgeWeights(t), k).edge_indices());
  }
}

TEST_CASE("selection_to_hard_mask") {
  const auto m = selection_to_hard_mask(SubgraphSelection({0, 2}, 4), 4);
  CHECK(std::vector<double>(m.values().begin(), m.values().end()) == std::vector<double>{1, 0, 1, 0});
  const auto m2 = selection_to_hard_mask(SubgraphSelection({1}, 2), 2);
  CHECK(std::vector<double>(m2.values().begin(), m2.values().end()) == std::vector<double>{0, 1});
  CHECK(kind_of([] { selection_to_hard_mask(SubgraphSelection({0, 3}, 4), 3); }) == ErrorKind::IndexOutOfRange);
  CHECK(kind_of([] { SubgraphSelection({}, 4); }) == ErrorKind::KOutOfRange);
}

TEST_CASE("edge weights must lie in the unit interval and align") {
  CHECK(kind_of([] { EdgeWeights({0.5, 1.5}); }) == ErrorKind::MisalignedWeights);
  auto rng = make_rng(3);
  const auto g = toy::random_graph(5, 1, 2, 0, rng);
  CHECK(kind_of([&] { apply_soft_mask(g, EdgeWeights::constant(g.edge_count() + 1, 1.0)); }) ==
        ErrorKind::MisalignedWeights);
  const auto view = apply_soft_mask(g, EdgeWeights::constant(g.edge_count(), 0.5));
  CHECK(view.graph == &g);
  CHECK(view.weights.size() == g.edge_count());
}

TEST_CASE("graph validation rejects broken invariants") {
  Graph g;
  g.num_nodes = 3;
  g.node_features = Eigen::MatrixXd::Zero(3, 2);
  g.edges = {{0, 1}, {1, 2}};
  CHECK_NOTHROW(g.validate(2));
  auto bad = g;
  bad.edges.push_back({0, 1});
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidGraph);
  bad = g;
  bad.edges.push_back({0, 3});
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidGraph);
  bad = g;
  bad.truth_edge_mask = std::vector<std::uint8_t>{1};
  CHECK(kind_of([&] { bad.validate(); }) == ErrorKind::InvalidGraph);
  bad = g;
  bad.label = 2;
  CHECK(kind_of([&] { bad.validate(2); }) == ErrorKind::InvalidGraph);
}

TEST_CASE("jaccard and truth edges") {
  CHECK(jaccard({0, 1, 2}, {1, 2, 3}) == doctest::Approx(0.5));
  CHECK(jaccard({}, {}) == doctest::Approx(1.0));
  Graph g;
  g.num_nodes = 3;
  g.edges = {{0, 1}, {1, 2}, {0, 2}};
  g.truth_edge_mask = std::vector<std::uint8_t>{1, 0, 1};
  CHECK(truth_edges(g) == std::vector<int>{0, 2});
}

TEST_CASE("JSON Lines round trip preserves every field") {
  auto rng = make_rng(5);
  std::vector<Graph> graphs;
  for (int i = 0; i < 4; ++i) {
    auto g = toy::random_graph(6, 3, 3, i % 2, rng);
    if (i % 2 == 0) {
      g.env_id = i;
      std::vector<std::uint8_t> mask(g.edge_count());
      for (auto& b : mask) b = uniform_int(rng, 0, 1);
      g.truth_edge_mask = mask;
    }
    graphs.push_back(g);
  }
  const auto path = std::filesystem::temp_directory_path() / "sugar_graph_roundtrip.jsonl";
  write_graphs_jsonl(path, graphs);
  const auto back = read_graphs_jsonl(path);
  REQUIRE(back.size() == graphs.size());
  for (std::size_t i = 0; i < graphs.size(); ++i) {
    CHECK(back[i].num_nodes == graphs[i].num_nodes);
    CHECK(back[i].edges == graphs[i].edges);
    CHECK(back[i].label == graphs[i].label);
    CHECK(back[i].env_id == graphs[i].env_id);
    CHECK(back[i].truth_edge_mask == graphs[i].truth_edge_mask);
    CHECK(back[i].node_features == graphs[i].node_features);
  }
  std::filesystem::remove(path);
}

TEST_CASE("JSON Lines parsing keeps file edge order and rejects malformed lines") {
  const auto j = nlohmann::json::parse(R"({"num_nodes":3,"edges":[[1,2],[0,1]],"x":[[0],[1],[2]],"y":1,"env":null,"mask":[1,0]})");
  const auto g = graph_from_json(j);
  CHECK(g.edges[0] == Edge{1, 2});
  CHECK(g.edges[1] == Edge{0, 1});
  CHECK(*g.truth_edge_mask == std::vector<std::uint8_t>{1, 0});
  CHECK(!g.env_id);
  const auto bad = nlohmann::json::parse(R"({"num_nodes":2,"edges":[[0,5]],"x":[[0],[1]],"y":0})");
  CHECK(kind_of([&] { graph_from_json(bad); }) == ErrorKind::InvalidGraph);
}
