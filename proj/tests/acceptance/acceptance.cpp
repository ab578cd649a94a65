// Acceptance checks 1-9. Prints one PASS/FAIL line per criterion and exits
// nonzero when any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "sugar/aggregate.hpp"
#include "sugar/error.hpp"
#include "sugar/harness.hpp"
#include "sugar/objective.hpp"
#include "sugar/synthgen.hpp"
#include "sugar/trainer.hpp"
#include "../support/fd_check.hpp"

using namespace sugar;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::vector<std::string> notes;

  void check(bool ok, std::string what) {
    if (!ok) pass = false;
    notes.push_back((ok ? "  ok   " : "  FAIL ") + what);
  }
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

Graph random_graph(int nodes, int extra, int feature_dim, int label, Rng& rng) {
  Graph g;
  g.num_nodes = nodes;
  g.label = label;
  for (int v = 1; v < nodes; ++v) g.edges.push_back({v - 1, v});
  for (int t = 0, tries = 0; t < extra && tries < 100; ++tries) {
    int a = uniform_int(rng, 0, nodes - 1), b = uniform_int(rng, 0, nodes - 1);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    if (std::any_of(g.edges.begin(), g.edges.end(), [&](const Edge& e) { return e.src == a && e.dst == b; }))
      continue;
    g.edges.push_back({a, b});
    ++t;
  }
  g.node_features.resize(nodes, feature_dim);
  for (int i = 0; i < nodes; ++i)
    for (int j = 0; j < feature_dim; ++j) g.node_features(i, j) = uniform01(rng);
  return g;
}

// Best-sum subset of size k; ties go to the lexicographically smallest.
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

std::vector<int> sort_top_k(const std::vector<double>& w, std::size_t k) {
  std::vector<int> idx(w.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return w[a] > w[b]; });
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<double> column_mean(const std::vector<std::vector<double>>& p) {
  std::vector<double> mean(p[0].size(), 0.0);
  for (const auto& r : p)
    for (std::size_t c = 0; c < r.size(); ++c) mean[c] += r[c] / static_cast<double>(p.size());
  return mean;
}

int oracle_soft(const std::vector<std::vector<double>>& p) {
  const auto mean = column_mean(p);
  int best = 0;
  for (std::size_t c = 1; c < mean.size(); ++c)
    if (mean[c] > mean[best]) best = static_cast<int>(c);
  return best;
}

int oracle_hard(const std::vector<std::vector<double>>& p) {
  const std::size_t C = p[0].size();
  std::vector<int> votes(C, 0);
  for (const auto& r : p) ++votes[std::max_element(r.begin(), r.end()) - r.begin()];
  const auto mean = column_mean(p);
  const int top = *std::max_element(votes.begin(), votes.end());
  int best = -1;
  for (std::size_t c = 0; c < C; ++c)
    if (votes[c] == top && (best < 0 || mean[c] > mean[best])) best = static_cast<int>(c);
  return best;
}

ModelConfig small_model(int classes, int features) {
  ModelConfig c;
  c.num_layers = 2;
  c.hidden_dim = 8;
  c.num_classes = classes;
  c.feature_dim = features;
  return c;
}

ExperimentConfig desk_experiment() {
  ExperimentConfig cfg;
  cfg.name = "SUMotif-0.9";
  SynthConfig s;
  s.mode = SynthMode::SUMotif;
  s.bias = 0.9;
  s.train_per_class = 300;
  s.eval_per_class = 100;
  cfg.synth = s;
  cfg.train.n_models = 5;
  cfg.train.epochs = 20;
  cfg.seeds = {1, 2, 3};
  return cfg;
}

double diag_mean(const Report& r, const std::string& key) { return r.diagnostics.at(key).at("mean").get<double>(); }
std::vector<double> diag_values(const Report& r, const std::string& key) {
  return r.diagnostics.at(key).at("values").get<std::vector<double>>();
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  Outcome out;
  for (double b : {0.33, 0.6, 0.9}) {
    SynthConfig cfg;
    cfg.mode = SynthMode::SPMotif;
    cfg.bias = b;
    cfg.train_per_class = 3000;
    cfg.eval_per_class = 1000;
    cfg.seed = 1;
    const auto data = generate(cfg);
    double worst_train = 0.0, worst_eval = 0.0;
    for (int c = 0; c < 3; ++c) {
      worst_train = std::max(worst_train, std::fabs(paired_fraction(data.train_cooccurrence, c) - b));
      worst_eval = std::max({worst_eval, std::fabs(paired_fraction(data.val_cooccurrence, c) - 1.0 / 3.0),
                             std::fabs(paired_fraction(data.test_cooccurrence, c) - 1.0 / 3.0)});
    }
    out.check(worst_train <= 0.02, fmt::format("b={}: max |train - b| = {:.4f}", b, worst_train));
    out.check(worst_eval <= 0.03, fmt::format("b={}: max |val/test - 1/3| = {:.4f}", b, worst_eval));
  }
  return out;
}

Outcome criterion2(const Report& report) {
  Outcome out;
  const double ens = report.find("SuGAr(ENS)")->mean;
  const double erm = report.find("ERM")->mean;
  const double single = report.find("mean-single")->mean;
  out.notes.push_back("\n" + metrics_table({report}));
  out.check(ens - erm >= 0.05, fmt::format("ENS {:.2f} vs ERM {:.2f}: margin {:+.2f} points (need >= 5)",
                                           100 * ens, 100 * erm, 100 * (ens - erm)));
  out.check(ens - single >= 0.05, fmt::format("ENS {:.2f} vs mean single {:.2f}: margin {:+.2f} points (need >= 5)",
                                              100 * ens, 100 * single, 100 * (ens - single)));
  return out;
}

Outcome criterion3(const Report& ablation) {
  Outcome out;
  const auto with_beta = diag_values(ablation, "similarity_end:SU-A");
  const auto without_beta = diag_values(ablation, "similarity_end:SU-D");
  for (std::size_t s = 0; s < with_beta.size(); ++s) {
    out.check(with_beta[s] < without_beta[s],
              fmt::format("seed {}: similarity beta=1 {:.6f} < beta=0 {:.6f}", ablation.seeds[s], with_beta[s],
                          without_beta[s]));
  }
  const double none = ablation.find("SU-None")->mean;
  const double best = std::max({ablation.find("SU-A")->mean, ablation.find("SU-D")->mean, ablation.find("SU-S")->mean});
  out.notes.push_back("\n" + metrics_table({ablation}));
  out.check(none <= best + 0.01, fmt::format("SU-None {:.2f} <= max(SU-A, SU-D, SU-S) {:.2f} + 1", 100 * none,
                                             100 * best));
  return out;
}

Outcome criterion4() {
  Outcome out;
  auto rng = make_rng(4);
  int topk_cases = 0, topk_bad = 0;
  for (int m = 1; m <= 10; ++m) {
    for (int rep = 0; rep < 20; ++rep) {
      std::vector<double> w(m);
      for (auto& v : w) v = rep % 2 == 0 ? uniform_int(rng, 0, 4) / 4.0 : uniform01(rng);
      for (int k = 1; k <= m; ++k, ++topk_cases)
        if (top_k_edges(EdgeWeights(w), k).edge_indices() != brute_top_k(w, k)) ++topk_bad;
    }
  }
  out.check(topk_bad == 0, fmt::format("top_k_edges vs brute force: {} mismatches in {} cases", topk_bad, topk_cases));

  const auto mc = small_model(3, 4);
  const std::vector<InvariantGNN> models{InvariantGNN::random(mc, 1), InvariantGNN::random(mc, 2),
                                         InvariantGNN::random(mc, 3)};
  int ens_bad = 0, ens_cases = 0;
  for (MergeRule rule : {MergeRule::Average, MergeRule::Max}) {
    AggregationConfig cfg;
    cfg.merge = rule;
    for (int rep = 0; rep < 50; ++rep, ++ens_cases) {
      const auto g = random_graph(5 + rep % 10, 2 + rep % 7, 4, 0, rng);
      std::vector<double> merged(g.edge_count(), rule == MergeRule::Average ? 0.0 : -1.0);
      for (const auto& m : models) {
        const auto w = m.featurize(g);
        for (std::size_t e = 0; e < w.size(); ++e)
          merged[e] = rule == MergeRule::Average ? merged[e] + w[e] / 3.0 : std::max(merged[e], w[e]);
      }
      const auto expect = sort_top_k(merged, ratio_to_k(cfg.s_c, g.edge_count()));
      if (ens_predict(g, models, cfg).merged.edge_indices() != expect) ++ens_bad;
    }
  }
  out.check(ens_bad == 0, fmt::format("ens_predict stage-2 selection vs mean/max + top-k: {} mismatches in {} graphs",
                                      ens_bad, ens_cases));

  int vote_bad = 0;
  for (int rep = 0; rep < 100; ++rep) {
    const int rows = uniform_int(rng, 1, 6), classes = uniform_int(rng, 2, 4);
    std::vector<std::vector<double>> p(rows, std::vector<double>(classes));
    for (auto& r : p) {
      double s = 0.0;
      for (auto& v : r) s += (v = rep % 2 == 0 ? uniform_int(rng, 1, 3) : uniform01(rng) + 1e-3);
      for (auto& v : r) v /= s;
    }
    if (soft_vote(p) != oracle_soft(p)) ++vote_bad;
    if (hard_vote(p) != oracle_hard(p)) ++vote_bad;
  }
  out.check(vote_bad == 0, fmt::format("soft/hard vote vs enumeration: {} mismatches over 100 matrices", vote_bad));
  return out;
}

Outcome criterion5(const Report& report) {
  Outcome out;
  const auto m = InvariantGNN::random(small_model(3, 4), 5);
  const auto avg = weight_average(std::vector<InvariantGNN>{m, m, m, m, m});
  const auto x = m.params().flatten(), y = avg.params().flatten();
  std::size_t beyond_ulp = 0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    const float fx = static_cast<float>(x[k]);
    const double ulp = std::fabs(static_cast<double>(std::nextafter(fx, 2 * fx + 1.0f)) - fx);
    if (std::fabs(y[k] - x[k]) > ulp) ++beyond_ulp;
  }
  out.check(beyond_ulp == 0, fmt::format("idempotence: {} of {} scalars beyond 1 ulp", beyond_ulp, x.size()));

  auto other = small_model(3, 4);
  other.hidden_dim = 9;
  bool rejected = false;
  try {
    weight_average(std::vector<InvariantGNN>{m, InvariantGNN::random(other, 1)});
  } catch (const Error& e) {
    rejected = e.kind() == ErrorKind::FingerprintMismatch;
  }
  out.check(rejected, "fingerprint mismatch rejected");

  const auto wa_val = diag_values(report, "wa_val");
  const auto best_val = diag_values(report, "best_single_val");
  for (std::size_t s = 0; s < wa_val.size(); ++s) {
    out.check(wa_val[s] >= best_val[s], fmt::format("seed {}: greedy WA val {:.4f} >= best single val {:.4f}",
                                                    report.seeds[s], wa_val[s], best_val[s]));
  }
  return out;
}

Outcome criterion6() {
  Outcome out;
  TrainConfig cfg;
  cfg.n_models = 2;
  cfg.model = small_model(2, 3);
  cfg.objective.alpha = 0.7;
  cfg.objective.beta = 1.3;
  cfg.s_c = 0.6;
  auto rng = make_rng(6);
  std::vector<Graph> graphs;
  for (int i = 0; i < 6; ++i) graphs.push_back(random_graph(6, 3, 3, i % 2, rng));
  for (MaskMode mode : {MaskMode::Soft, MaskMode::TopK}) {
    cfg.mask_mode = mode;
    const auto r = fdcheck::run({InvariantGNN::random(cfg.model, 11), InvariantGNN::random(cfg.model, 12)}, graphs,
                                {{}, {}}, cfg);
    out.check(r.checked > 0 && r.max_rel <= 1e-4,
              fmt::format("{} masks: max relative error {:.2e} over {} coordinates ({} at kinks skipped)",
                          to_string(mode), r.max_rel, r.checked, r.non_smooth));
  }
  return out;
}

Outcome criterion7() {
  Outcome out;
  auto rng = make_rng(2025);
  int recovered = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const int s_c = rep % 4 == 3 ? 3 : 2;
    const auto f = PlantedFamily::random(s_c, 1 + rep % 2, rep % 3 == 0 ? 1 : 0, 0.55 + 0.02 * rep, rng);
    if (recovers_planted(f, solve_two_subgraph_objective(f))) ++recovered;
  }
  out.check(recovered == 20, fmt::format("planted pair recovered in {}/20 instances", recovered));

  PlantedFamily f;
  f.num_edges = 6;
  f.s_c = 2;
  f.block_a = {0, 1};
  f.block_b = {2, 3};
  f.spurious = {4};
  const auto rows = enumerate_family(f);
  const double disjoint = pair_conditional_mi(rows, f.block_a, f.block_b);
  const double overlap = pair_conditional_mi(rows, {0, 1}, {1, 2});
  out.check(std::fabs(disjoint) <= 1e-12, fmt::format("disjoint I(Gj;Gk|Y) = {:.3e}", disjoint));
  out.check(overlap > 0.0, fmt::format("overlapping I(Gj;Gk|Y) = {:.4f}", overlap));
  return out;
}

Outcome criterion8(const Report& report) {
  Outcome out;
  const double merged = diag_mean(report, "jaccard_merged");
  const double single = diag_mean(report, "jaccard_single");
  const auto mv = diag_values(report, "jaccard_merged"), sv = diag_values(report, "jaccard_single");
  for (std::size_t s = 0; s < mv.size(); ++s)
    out.notes.push_back(fmt::format("  seed {}: merged {:.4f}, single {:.4f}", report.seeds[s], mv[s], sv[s]));
  out.check(merged > single, fmt::format("mean merged Jaccard {:.4f} > mean single Jaccard {:.4f}", merged, single));
  return out;
}

Outcome criterion9() {
  Outcome out;
  SynthConfig sc;
  sc.mode = SynthMode::SUMotif;
  sc.bias = 0.9;
  sc.train_per_class = 20;
  sc.eval_per_class = 10;
  sc.seed = 9;
  const auto data = generate(sc);

  TrainConfig tc;
  tc.n_models = 2;
  tc.epochs = 2;
  tc.batch_size = 8;
  tc.model = small_model(data.num_classes, data.feature_dim);
  const auto a = train_sugar(tc, data);
  const auto b = train_sugar(tc, data);
  double worst = 0.0;
  bool same_len = a.log.size() == b.log.size() && !a.log.empty();
  for (std::size_t s = 0; same_len && s < a.log.size(); ++s) {
    const double x = a.log[s]["total"], y = b.log[s]["total"];
    worst = std::max(worst, std::fabs(x - y) / std::max(1.0, std::fabs(x)));
  }
  out.check(same_len && worst <= 1e-6,
            fmt::format("loss traces over {} steps: max relative difference {:.2e}", a.log.size(), worst));

  const fs::path dir = fs::temp_directory_path() / "sugar_acceptance_c9";
  fs::remove_all(dir);
  save_checkpoint(a.best[0], dir / "m.json");
  const auto back = load_checkpoint(dir / "m.json");
  save_checkpoint(back, dir / "r.json");
  out.check(back.params() == a.best[0].params() && slurp(dir / "m.bin") == slurp(dir / "r.bin"),
            "checkpoint save/load is bit exact");

  write_dataset(dir / "d1", generate(sc));
  write_dataset(dir / "d2", generate(sc));
  bool identical = true;
  for (const char* f : {"train.jsonl", "val.jsonl", "test.jsonl", "meta.json"})
    identical = identical && slurp(dir / "d1" / f) == slurp(dir / "d2" / f);
  out.check(identical, "dataset files byte-identical for one seed");
  fs::remove_all(dir);
  return out;
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  using clock = std::chrono::steady_clock;
  std::vector<std::pair<int, Outcome>> results;
  auto run = [&](int id, const std::function<Outcome()>& f, double limit_secs = 0.0) {
    const auto t0 = clock::now();
    Outcome o;
    try {
      o = f();
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(clock::now() - t0).count();
    if (limit_secs > 0.0) o.check(secs <= limit_secs, fmt::format("runtime {:.1f} s <= {:.0f} s", secs, limit_secs));
    else o.notes.push_back(fmt::format("  runtime {:.1f} s", secs));
    std::printf("criterion %d details:\n", id);
    for (const auto& n : o.notes) std::printf("%s\n", n.c_str());
    std::fflush(stdout);
    results.emplace_back(id, std::move(o));
    return secs;
  };

  run(1, criterion1, 60.0);
  Report desk;
  run(2, [&] {
    desk = run_experiment(desk_experiment());
    return criterion2(desk);
  }, 1800.0);
  run(3, [] {
    auto cfg = desk_experiment();
    cfg.name = "SUMotif-0.9-ablation";
    cfg.ablation_grid = true;
    return criterion3(run_experiment(cfg));
  });
  run(4, criterion4);
  run(5, [&] { return criterion5(desk); });
  run(6, criterion6);
  run(7, criterion7, 60.0);
  run(8, [&] { return criterion8(desk); });
  run(9, criterion9);

  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
  bool all = true;
  std::printf("\n");
  for (const auto& [id, o] : results) {
    std::printf("criterion %d: %s\n", id, o.pass ? "PASS" : "FAIL");
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
