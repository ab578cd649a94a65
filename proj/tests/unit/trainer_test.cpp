#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "sugar/error.hpp"
#include "sugar/synthgen.hpp"
#include "sugar/trainer.hpp"
#include "toy.hpp"

using namespace sugar;

namespace {

// Counts positive-negative pairs with the positive ranked higher (ties = 1/2).
double pair_count_auc(const std::vector<double>& s, const std::vector<int>& y) {
  double wins = 0.0;
  int pairs = 0;
  for (std::size_t p = 0; p < s.size(); ++p)
    for (std::size_t q = 0; q < s.size(); ++q)
      if (y[p] == 1 && y[q] == 0) {
        ++pairs;
        wins += s[p] > s[q] ? 1.0 : s[p] == s[q] ? 0.5 : 0.0;
      }
  return wins / pairs;
}

DatasetSplit tiny_data(std::uint64_t seed = 3) {
  SynthConfig sc;
  sc.mode = SynthMode::SUMotif;
  sc.bias = 0.6;
  sc.train_per_class = 8;
  sc.eval_per_class = 4;
  sc.seed = seed;
  return generate(sc);
}

TrainConfig tiny_config() {
  TrainConfig c;
  c.n_models = 2;
  c.epochs = 2;
  c.batch_size = 8;
  c.lr = 1e-3;
  c.model.num_layers = 2;
  c.model.hidden_dim = 8;
  c.model.num_classes = 3;
  c.model.feature_dim = 4;
  c.seed = 5;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace

TEST_CASE("sample_subgraph keeps nodes and a ceil(r|E|) edge subset") {
  auto rng = make_rng(1);
  auto g = toy::random_graph(12, 9, 3, 1, rng);
  REQUIRE(g.edge_count() == 20);
  std::vector<std::uint8_t> mask(20, 0);
  for (int e = 0; e < 20; e += 3) mask[e] = 1;
  g.truth_edge_mask = mask;

  const auto full = sample_subgraph(g, 1.0, rng);
  CHECK(full.edges == g.edges);
  CHECK(full.truth_edge_mask == g.truth_edge_mask);

  const auto s = sample_subgraph(g, 0.9, rng);
  CHECK(s.edge_count() == 18);
  CHECK(s.num_nodes == g.num_nodes);
  CHECK(s.node_features == g.node_features);
  std::size_t pos = 0;
  for (std::size_t k = 0; k < s.edge_count(); ++k) {
    while (pos < g.edge_count() && !(g.edges[pos] == s.edges[k])) ++pos;
    REQUIRE(pos < g.edge_count());  // original order preserved
    CHECK((*s.truth_edge_mask)[k] == mask[pos]);
  }

  auto r1 = make_rng(9), r2 = make_rng(9);
  CHECK(sample_subgraph(g, 0.85, r1).edges == sample_subgraph(g, 0.85, r2).edges);

  Graph empty;
  empty.num_nodes = 2;
  empty.node_features = Eigen::MatrixXd::Zero(2, 3);
  CHECK_THROWS_AS(sample_subgraph(empty, 0.9, rng), Error);
  try {
    sample_subgraph(g, 0.0, rng);
    FAIL("expected invalid-ratio");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::InvalidRatio);
  }
}

TEST_CASE("roc_auc against pair counting") {
  const std::vector<double> s{0.1, 0.4, 0.35, 0.8};
  const std::vector<int> y{0, 0, 1, 1};
  CHECK(roc_auc(s, y) == doctest::Approx(0.75));
  CHECK(pair_count_auc(s, y) == doctest::Approx(0.75));

  auto rng = make_rng(2);
  for (int rep = 0; rep < 30; ++rep) {
    std::vector<double> sc(25);
    std::vector<int> yy(25);
    for (int i = 0; i < 25; ++i) {
      sc[i] = uniform_int(rng, 0, 5) / 5.0;  // many ties
      yy[i] = i < 2 ? i : uniform_int(rng, 0, 1);
    }
    CHECK(roc_auc(sc, yy) == doctest::Approx(pair_count_auc(sc, yy)).epsilon(1e-12));
  }

  std::vector<double> rs(1000);
  std::vector<int> ry(1000);
  for (int i = 0; i < 1000; ++i) rs[i] = uniform01(rng), ry[i] = i % 2;
  CHECK(std::fabs(roc_auc(rs, ry) - 0.5) <= 0.05);

  try {
    roc_auc(std::vector<double>{0.2, 0.3}, std::vector<int>{1, 1});
    FAIL("expected roc-auc-undefined");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RocAucUndefined);
  }
}

TEST_CASE("multiclass roc_auc is the macro one-vs-rest mean") {
  const std::vector<std::vector<double>> p{{0.7, 0.2, 0.1}, {0.2, 0.5, 0.3}, {0.1, 0.3, 0.6}, {0.4, 0.4, 0.2}};
  const std::vector<int> y{0, 1, 2, 1};
  double expect = 0.0;
  for (int c = 0; c < 3; ++c) {
    std::vector<double> s;
    std::vector<int> b;
    for (std::size_t i = 0; i < p.size(); ++i) s.push_back(p[i][c]), b.push_back(y[i] == c);
    expect += pair_count_auc(s, b) / 3.0;
  }
  CHECK(roc_auc(p, y) == doctest::Approx(expect));
  const std::vector<std::vector<double>> p2{{0.8, 0.2}, {0.3, 0.7}, {0.6, 0.4}};
  const std::vector<int> y2{0, 1, 1};
  CHECK(roc_auc(p2, y2) == doctest::Approx(pair_count_auc({0.2, 0.7, 0.4}, {0, 1, 1})));
}

TEST_CASE("accuracy") {
  const std::vector<int> y{0, 1, 2};
  CHECK(accuracy({{0.9, 0.05, 0.05}, {0.1, 0.8, 0.1}, {0.0, 0.1, 0.9}}, y) == 1.0);
  CHECK(accuracy({{0.9, 0.05, 0.05}, {0.9, 0.05, 0.05}, {0.9, 0.05, 0.05}}, y) == doctest::Approx(1.0 / 3));
}

TEST_CASE("first Adam step moves each coordinate by about lr against the gradient") {
  ParamStore p;
  p.add("w", {1, 3});
  p.at("w").value << 0.5, -0.25, 1.0;
  ParamStore g = p.zeros_like();
  g.at("w").value << 2.0, -0.5, 0.0;
  Adam opt(0.01);
  std::vector<ParamStore*> ps{&p};
  std::vector<ParamStore> gs{g};
  opt.step(ps, gs);
  CHECK(p.at("w").value(0, 0) == doctest::Approx(0.49).epsilon(1e-6));
  CHECK(p.at("w").value(0, 1) == doctest::Approx(-0.24).epsilon(1e-6));
  CHECK(p.at("w").value(0, 2) == 1.0);
  CHECK(opt.steps() == 1);
}

TEST_CASE("ablation modes and config parsing") {
  TrainConfig c;
  c.objective.beta = 2.0;
  c.ablation = Ablation::SuD;
  CHECK(c.effective().objective.beta == 0.0);
  CHECK(c.effective().sampler.enabled);
  c.ablation = Ablation::SuS;
  CHECK(c.effective().objective.beta == 2.0);
  CHECK(!c.effective().sampler.enabled);
  c.ablation = Ablation::SuNone;
  CHECK(c.effective().objective.beta == 0.0);
  CHECK(!c.effective().sampler.enabled);

  const auto back = train_config_from_json(to_json(tiny_config()));
  CHECK(to_json(back) == to_json(tiny_config()));
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"n_model", 3}}), Error);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"n_models", 0}}), Error);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"optimizer", "sgd"}}), Error);
  CHECK_THROWS_AS(train_config_from_json(nlohmann::json{{"sampler", {{"ratio", 1.2}}}}), Error);
  CHECK(train_config_from_json(nlohmann::json{{"ablation", "SU-None"}}).ablation == Ablation::SuNone);
}

TEST_CASE("training is deterministic, shares the initialization and keeps the validation-best epoch") {
  const auto data = tiny_data();
  auto cfg = tiny_config();
  cfg.epochs = 3;
  const auto a = train_sugar(cfg, data);
  const auto b = train_sugar(cfg, data);
  REQUIRE(a.log.size() == b.log.size());
  REQUIRE(!a.log.empty());
  for (std::size_t s = 0; s < a.log.size(); ++s) {
    const double x = a.log[s]["total"], y = b.log[s]["total"];
    CHECK(std::fabs(x - y) <= 1e-6 * std::max(1.0, std::fabs(x)));
  }
  CHECK(a.initial[0].params() == a.initial[1].params());
  CHECK(a.log[0].contains("risk"));
  CHECK(a.log[0]["risk"].size() == 2);
  for (std::size_t i = 0; i < 2; ++i) {
    for (const auto& epoch_vals : a.val_history) CHECK(a.best_val[i] >= epoch_vals[i]);
    CHECK(a.val_history[a.best_epoch[i]][i] == a.best_val[i]);
    CHECK(validate(a.best[i], data.val, Metric::Accuracy, cfg.s_c) == a.best_val[i]);
  }
}

TEST_CASE("one model without contrastive or diversity terms matches the plain single-model run") {
  const auto data = tiny_data();
  auto plain = tiny_config();
  plain.n_models = 1;
  plain.objective.alpha = 0.0;
  plain.objective.beta = 0.0;
  plain.sampler.enabled = false;
  auto ablated = plain;
  ablated.objective.beta = 3.0;
  ablated.ablation = Ablation::SuNone;
  const auto a = train_sugar(plain, data);
  const auto b = train_sugar(ablated, data);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t s = 0; s < a.log.size(); ++s) {
    CHECK(a.log[s]["total"] == b.log[s]["total"]);
    CHECK(a.log[s]["total"].get<double>() == doctest::Approx(a.log[s]["risk"][0].get<double>()));
  }
}

TEST_CASE("the diversity term lowers end-of-training similarity") {
  const auto data = tiny_data(8);
  auto cfg = tiny_config();
  cfg.epochs = 4;
  cfg.objective.beta = 0.0;
  const auto off = train_sugar(cfg, data);
  cfg.objective.beta = 1.0;
  const auto on = train_sugar(cfg, data);
  CHECK(mean_pairwise_similarity(on.final_models, data.val) < mean_pairwise_similarity(off.final_models, data.val));
}

TEST_CASE("non-finite inputs abort training with a divergence error") {
  auto data = tiny_data();
  data.train[0].node_features(0, 0) = std::nan("");
  try {
    train_sugar(tiny_config(), data);
    FAIL("expected divergence");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Divergence);
  }
  auto cfg = tiny_config();
  cfg.model.feature_dim = 5;
  try {
    train_sugar(cfg, tiny_data());
    FAIL("expected feature-dim-mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::FeatureDimMismatch);
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  const auto dir = scratch("sugar_ckpt_test");
  const auto models = init_shared(2, tiny_config().model, 17);
  auto trained = InvariantGNN::random(tiny_config().model, 4);
  save_checkpoint(trained, dir / "a.json", {{"seed", 4}});
  const auto back = load_checkpoint(dir / "a.json");
  CHECK(back.params() == trained.params());
  CHECK(back.config() == trained.config());
  save_checkpoint(back, dir / "b.json", {{"seed", 4}});
  CHECK(slurp(dir / "a.bin") == slurp(dir / "b.bin"));
  CHECK(slurp(dir / "a.json").size() == slurp(dir / "b.json").size());
  CHECK(read_checkpoint_meta(dir / "a.json")["meta"]["seed"] == 4);

  save_checkpoint(models[0], dir / "m0.json");
  save_checkpoint(models[1], dir / "m1.json");
  CHECK(load_checkpoint(dir / "m0.json").params().fingerprint() ==
        load_checkpoint(dir / "m1.json").params().fingerprint());

  auto other = tiny_config().model;
  other.hidden_dim = 9;
  try {
    load_checkpoint(dir / "a.json", other);
    FAIL("expected shape-mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::ShapeMismatch);
  }
  CHECK_NOTHROW(load_checkpoint(dir / "a.json", tiny_config().model));

  {
    std::ofstream trunc(dir / "a.bin", std::ios::binary | std::ios::trunc);
    trunc << "xx";
  }
  try {
    load_checkpoint(dir / "a.json");
    FAIL("expected corrupt-manifest");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CorruptManifest);
  }
  {
    std::ofstream bad(dir / "c.json");
    bad << "{not json";
  }
  try {
    load_checkpoint(dir / "c.json");
    FAIL("expected corrupt-manifest");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::CorruptManifest);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("train outputs can be reloaded") {
  const auto dir = scratch("sugar_train_out_test");
  const auto data = tiny_data();
  const auto cfg = tiny_config();
  const auto res = train_sugar(cfg, data);
  write_train_outputs(dir, cfg, res, data);
  CHECK(std::filesystem::exists(dir / "log.jsonl"));
  CHECK(std::filesystem::exists(dir / "summary.json"));
  const auto models = load_checkpoint_dir(dir);
  REQUIRE(models.size() == 2);
  for (std::size_t i = 0; i < 2; ++i) CHECK(models[i].params() == res.best[i].params());
  std::filesystem::remove_all(dir);
}
