#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "sugar/aggregate.hpp"
#include "sugar/error.hpp"
#include "sugar/objective.hpp"
#include "sugar/synthgen.hpp"
#include "toy.hpp"

using namespace sugar;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.num_layers = 2;
  c.hidden_dim = 8;
  c.num_classes = 3;
  c.feature_dim = 4;
  return c;
}

std::vector<std::vector<double>> random_probs(int rows, int classes, Rng& rng, bool coarse) {
  std::vector<std::vector<double>> p(rows, std::vector<double>(classes));
  for (auto& r : p) {
    double s = 0.0;
    for (auto& v : r) s += (v = coarse ? uniform_int(rng, 1, 3) : uniform01(rng) + 1e-3);
    for (auto& v : r) v /= s;
  }
  return p;
}

int oracle_soft(const std::vector<std::vector<double>>& p) {
  std::vector<double> mean(p[0].size(), 0.0);
  for (const auto& r : p)
    for (std::size_t c = 0; c < r.size(); ++c) mean[c] += r[c] / p.size();
  int best = 0;
  for (std::size_t c = 1; c < mean.size(); ++c)
    if (mean[c] > mean[best]) best = static_cast<int>(c);
  return best;
}

// Counts argmax votes by scanning every class; ties between vote leaders fall
// back to the largest mean probability, then the smallest class.
int oracle_hard(const std::vector<std::vector<double>>& p) {
  const std::size_t C = p[0].size();
  std::vector<int> votes(C, 0);
  for (const auto& r : p) {
    std::size_t arg = 0;
    for (std::size_t c = 0; c < C; ++c)
      if (r[c] > r[arg]) arg = c;
    ++votes[arg];
  }
  std::vector<double> mean(C, 0.0);
  for (const auto& r : p)
    for (std::size_t c = 0; c < C; ++c) mean[c] += r[c] / p.size();
  int best = -1;
  for (std::size_t c = 0; c < C; ++c) {
    const bool leader = std::all_of(votes.begin(), votes.end(), [&](int v) { return v <= votes[c]; });
    if (leader && (best < 0 || mean[c] > mean[best])) best = static_cast<int>(c);
  }
  return best;
}

// Top-k by stable descending sort: larger weight first, smaller index on ties.
std::vector<int> sort_top_k(const std::vector<double>& w, std::size_t k) {
  std::vector<int> idx(w.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return w[a] > w[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

double full_graph_risk(const InvariantGNN& m, const std::vector<Graph>& split) {
  return empirical_risk(predict_proba(m, split, 0.4, false), labels_of(split));
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

TEST_CASE("merge rules") {
  const std::vector<EdgeWeights> sets{EdgeWeights({0.2, 0.8}), EdgeWeights({0.6, 0.4})};
  const auto avg = merge_average(sets);
  CHECK(avg[0] == doctest::Approx(0.4));
  CHECK(avg[1] == doctest::Approx(0.6));
  const auto mx = merge_max(sets);
  CHECK(mx[0] == 0.6);
  CHECK(mx[1] == 0.8);
  CHECK(kind_of([] { merge_average(std::vector<EdgeWeights>{}); }) == ErrorKind::EmptyModelList);
  CHECK(kind_of([] { merge_max(std::vector<EdgeWeights>{EdgeWeights({0.1}), EdgeWeights({0.1, 0.2})}); }) ==
        ErrorKind::MisalignedWeights);

  auto rng = make_rng(3);
  for (int rep = 0; rep < 40; ++rep) {
    std::vector<EdgeWeights> s;
    for (int i = 0; i < 4; ++i) {
      std::vector<double> v(6);
      for (auto& x : v) x = uniform01(rng);
      s.emplace_back(v);
    }
    auto rev = s;
    std::reverse(rev.begin(), rev.end());
    const auto a = merge_average(s), ar = merge_average(rev), m = merge_max(s), mr = merge_max(rev);
    for (std::size_t e = 0; e < 6; ++e) {
      CHECK(a[e] == doctest::Approx(ar[e]).epsilon(1e-15));
      CHECK(m[e] == mr[e]);
      CHECK(m[e] >= a[e]);
    }
    const std::vector<EdgeWeights> same{s[0], s[0], s[0]};
    CHECK(merge_max(same).values()[0] == s[0][0]);
  }
}

TEST_CASE("votes agree with direct enumeration") {
  const std::vector<std::vector<double>> ex{{0.6, 0.3, 0.1}, {0.1, 0.5, 0.4}, {0.1, 0.45, 0.45}};
  CHECK(soft_vote(ex) == 1);
  CHECK(hard_vote(ex) == 1);
  const std::vector<std::vector<double>> split{{0.9, 0.1}, {0.4, 0.6}};
  CHECK(hard_vote(split) == 0);  // one vote each, class 0 has the larger mean
  CHECK(soft_vote({{0.5, 0.5}}) == 0);
  CHECK(kind_of([] { soft_vote({}); }) == ErrorKind::EmptyMatrix);

  auto rng = make_rng(8);
  for (int rep = 0; rep < 100; ++rep) {
    const auto p = random_probs(uniform_int(rng, 1, 6), uniform_int(rng, 2, 4), rng, rep % 2 == 0);
    CHECK(soft_vote(p) == oracle_soft(p));
    CHECK(hard_vote(p) == oracle_hard(p));
    CHECK(vote(VoteRule::Hard, p) == hard_vote(p));
  }
}

TEST_CASE("ens_predict matches an external three-stage computation") {
  const auto models = std::vector<InvariantGNN>{InvariantGNN::random(small_config(), 1),
                                                InvariantGNN::random(small_config(), 2),
                                                InvariantGNN::random(small_config(), 3)};
  auto rng = make_rng(4);
  AggregationConfig cfg;
  for (int rep = 0; rep < 10; ++rep) {
    const auto g = toy::random_graph(7 + rep, 3 + rep, 4, 0, rng);
    std::vector<double> mean(g.edge_count(), 0.0);
    for (const auto& m : models) {
      const auto w = m.featurize(g);
      for (std::size_t e = 0; e < w.size(); ++e) mean[e] += w[e] / 3.0;
    }
    const auto sel = sort_top_k(mean, ratio_to_k(cfg.s_c, g.edge_count()));
    std::vector<double> mask(g.edge_count(), 0.0);
    for (int e : sel) mask[e] = 1.0;
    std::vector<std::vector<double>> probs;
    for (const auto& m : models) probs.push_back(m.classify(g, EdgeWeights(mask)));

    const auto out = ens_predict(g, models, cfg);
    CHECK(out.merged.edge_indices() == sel);
    CHECK(out.label == oracle_soft(probs));
    for (int c = 0; c < 3; ++c) CHECK(out.mean_probs[c] == doctest::Approx((probs[0][c] + probs[1][c] + probs[2][c]) / 3));
    CHECK(out.per_model.size() == 3);
  }
}

TEST_CASE("a single-model ensemble is that model's own selection") {
  const std::vector<InvariantGNN> one{InvariantGNN::random(small_config(), 9)};
  auto rng = make_rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    const auto g = toy::random_graph(8, 4, 4, 0, rng);
    const auto out = ens_predict(g, one, AggregationConfig{});
    const auto own = predict_with_own_selection(one[0], g, 0.4);
    for (int c = 0; c < 3; ++c) CHECK(out.mean_probs[c] == doctest::Approx(own[c]).epsilon(1e-12));
    CHECK(out.merged.edge_indices() == out.per_model[0].edge_indices());
  }
  CHECK(kind_of([] { ens_predict(Graph{}, std::vector<InvariantGNN>{}, AggregationConfig{}); }) ==
        ErrorKind::EmptyModelList);
}

TEST_CASE("EnsEvaluator agrees with per-graph ens_predict") {
  const auto models = init_shared(1, small_config(), 1);
  const std::vector<InvariantGNN> ms{models[0], InvariantGNN::random(small_config(), 7)};
  const auto graphs = toy::random_graphs(12, 8, 4, 4, 3, 21);
  for (auto vote_rule : {VoteRule::Soft, VoteRule::Hard}) {
    AggregationConfig cfg;
    cfg.vote = vote_rule;
    cfg.merge = vote_rule == VoteRule::Soft ? MergeRule::Average : MergeRule::Max;
    const EnsEvaluator ev(ms, graphs, cfg);
    const std::vector<int> all{0, 1};
    const auto out = ev.predict(all);
    for (std::size_t g = 0; g < graphs.size(); ++g) {
      const auto direct = ens_predict(graphs[g], ms, cfg);
      CHECK(out.labels[g] == direct.label);
      CHECK(out.merged[g].edge_indices() == direct.merged.edge_indices());
    }
    const auto w = ms[1].featurize(graphs[3]);
    CHECK(ev.own_selection(1, 3).edge_indices() ==
          sort_top_k({w.values().begin(), w.values().end()}, ratio_to_k(cfg.s_c, graphs[3].edge_count())));
  }
}

TEST_CASE("weight averaging") {
  ParamStore a, b;
  a.add("w", {1, 2});
  b.add("w", {1, 2});
  a.at("w").value << 2, 4;
  b.at("w").value << 4, 8;
  const auto avg = weight_average(std::vector<ParamStore>{a, b});
  CHECK(avg.at("w").value(0, 0) == 3.0);
  CHECK(avg.at("w").value(0, 1) == 6.0);

  ParamStore c;
  c.add("w", {2, 1});
  CHECK(kind_of([&] { weight_average(std::vector<ParamStore>{a, c}); }) == ErrorKind::FingerprintMismatch);
  CHECK(kind_of([] { weight_average(std::vector<ParamStore>{}); }) == ErrorKind::EmptyModelList);

  const auto m = InvariantGNN::random(small_config(), 4);
  const auto same = weight_average(std::vector<InvariantGNN>{m, m, m});
  const auto x = m.params().flatten(), y = same.params().flatten();
  for (std::size_t k = 0; k < x.size(); ++k) {
    const float fx = static_cast<float>(x[k]);
    CHECK(std::fabs(y[k] - x[k]) <= std::fabs(std::nextafter(fx, 2 * fx + 1.0f) - fx));
  }
  auto other = small_config();
  other.hidden_dim = 9;
  CHECK(kind_of([&] {
    weight_average(std::vector<InvariantGNN>{m, InvariantGNN::random(other, 1)});
  }) == ErrorKind::FingerprintMismatch);
}

TEST_CASE("weight averaging commutes with the checkpoint round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "sugar_wa_ckpt_test";
  std::filesystem::remove_all(dir);
  const std::vector<InvariantGNN> ms{InvariantGNN::random(small_config(), 1), InvariantGNN::random(small_config(), 2)};
  std::vector<InvariantGNN> loaded;
  for (std::size_t i = 0; i < ms.size(); ++i) {
    save_checkpoint(ms[i], dir / ("m" + std::to_string(i) + ".json"));
    loaded.push_back(load_checkpoint(dir / ("m" + std::to_string(i) + ".json")));
  }
  CHECK(weight_average(ms).params() == weight_average(loaded).params());
  save_checkpoint(weight_average(ms), dir / "wa.json");
  CHECK(load_checkpoint(dir / "wa.json").params() == weight_average(loaded).params());
  std::filesystem::remove_all(dir);
}

TEST_CASE("greedy selection keeps useful models and drops a harmful one") {
  auto graphs = toy::random_graphs(30, 9, 5, 4, 3, 31);
  const auto good = InvariantGNN::random(small_config(), 11);
  {
    // relabel the split with the good model's own prediction
    const std::vector<InvariantGNN> solo{good};
    const auto out = EnsEvaluator(solo, graphs, AggregationConfig{}).predict(std::vector<int>{0});
    for (std::size_t g = 0; g < graphs.size(); ++g) graphs[g].label = out.labels[g];
  }
  std::vector<int> counts(3, 0);
  for (const auto& g : graphs) ++counts[g.label];
  const int majority = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  auto bad = good;
  bad.params().at("classifier.head.b").value.setZero();
  bad.params().at("classifier.head.b").value(0, (majority + 1) % 3) = 40.0;

  AggregationConfig cfg;
  const std::vector<InvariantGNN> pool{good, bad, good};
  const auto greedy = select_greedy(pool, graphs, cfg);
  CHECK(greedy.chosen == std::vector<int>{0, 2});
  CHECK(greedy.metric == 1.0);
  REQUIRE(greedy.trace.size() == 3);
  CHECK(!greedy.trace[2].admitted);
  CHECK(greedy.trace[2].candidate == 1);

  cfg.selection = SelectionRule::Uniform;
  const auto uniform = select(pool, graphs, cfg);
  CHECK(uniform.chosen == std::vector<int>{0, 1, 2});
  CHECK(uniform.metric < 1.0);

  const std::vector<InvariantGNN> twins{good, good, good};
  CHECK(select_greedy(twins, graphs, AggregationConfig{}).chosen.size() == 3);
  const std::vector<InvariantGNN> single{bad};
  CHECK(select_greedy(single, graphs, AggregationConfig{}).chosen == std::vector<int>{0});
  CHECK(kind_of([] { select_uniform(0); }) == ErrorKind::EmptyModelList);
}

TEST_CASE("greedy weight averaging never trails the best single model and stays in a low-loss basin") {
  SynthConfig sc;
  sc.mode = SynthMode::SPMotif;
  sc.bias = 0.5;
  sc.train_per_class = 10;
  sc.eval_per_class = 6;
  sc.seed = 2;
  const auto data = generate(sc);
  TrainConfig tc;
  tc.n_models = 3;
  tc.epochs = 3;
  tc.batch_size = 10;
  tc.model = small_config();
  tc.seed = 4;
  const auto res = train_sugar(tc, data);

  AggregationConfig cfg;
  cfg.mode = AggMode::Wa;
  const auto sel = select_greedy(res.best, data.val, cfg);
  double best_single = 0.0;
  for (const auto& m : res.best) best_single = std::max(best_single, validate(m, data.val, cfg.metric, cfg.s_c));
  CHECK(sel.metric >= best_single);
  CHECK(aggregate_metric(res.best, sel.chosen, data.val, cfg) == sel.metric);

  const std::vector<InvariantGNN> ends{res.final_models[0], res.final_models[1]};
  const double mid = full_graph_risk(weight_average(ends), data.val);
  const double worst = std::max(full_graph_risk(ends[0], data.val), full_graph_risk(ends[1], data.val));
  CHECK(mid <= 1.1 * worst);
}

TEST_CASE("aggregation config parsing") {
  const auto cfg = aggregation_config_from_json(nlohmann::json{{"mode", "wa"}, {"selection", "uniform"}});
  CHECK(cfg.mode == AggMode::Wa);
  CHECK(cfg.selection == SelectionRule::Uniform);
  CHECK(to_json(aggregation_config_from_json(to_json(cfg))) == to_json(cfg));
  CHECK(kind_of([] { aggregation_config_from_json(nlohmann::json{{"merge", "median"}}); }) == ErrorKind::InvalidConfig);
  CHECK(kind_of([] { aggregation_config_from_json(nlohmann::json{{"vote_rule", "soft"}}); }) ==
        ErrorKind::InvalidConfig);
  CHECK(kind_of([] { aggregation_config_from_json(nlohmann::json{{"s_c", 0.0}}); }) == ErrorKind::InvalidConfig);
}
