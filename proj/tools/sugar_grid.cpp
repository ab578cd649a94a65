// Multi-seed experiments, ablation grids, hyperparameter search and tables.

#include <fstream>

#include "cli_common.hpp"
#include "sugar/harness.hpp"
#include "sugar/json_util.hpp"
#include "sugar/parallel.hpp"

using namespace sugar;

namespace {

struct Grid {
  std::vector<double> alpha{0.5, 1, 2, 4, 8, 16, 32};
  std::vector<double> beta{0.01, 0.1, 1, 2, 4, 8};
  std::vector<double> ratio{0.85, 0.9, 0.95};
};

Grid grid_from_json(const nlohmann::json& j) {
  require_known_keys(j, {"alpha", "beta", "ratio"}, "grid");
  Grid g;
  if (j.contains("alpha")) g.alpha = j.at("alpha").get<std::vector<double>>();
  if (j.contains("beta")) g.beta = j.at("beta").get<std::vector<double>>();
  if (j.contains("ratio")) g.ratio = j.at("ratio").get<std::vector<double>>();
  if (g.alpha.empty() || g.beta.empty() || g.ratio.empty()) {
    throw Error(ErrorKind::InvalidConfig, "grid axes must be nonempty");
  }
  return g;
}

nlohmann::json search(const ExperimentConfig& cfg, const Grid& grid) {
  struct Cell {
    double alpha, beta, ratio;
    double val = 0.0, test = 0.0;
    std::size_t chosen = 0;
  };
  std::vector<Cell> cells;
  for (double a : grid.alpha)
    for (double b : grid.beta)
      for (double r : grid.ratio) cells.push_back({a, b, r});

  const std::uint64_t seed = cfg.seeds.front();
  const DatasetSplit data = load_experiment_data(cfg, seed);
  AggregationConfig agg = cfg.aggregation;
  agg.s_c = cfg.train.s_c;
  agg.metric = cfg.train.metric;

  parallel_for(cells.size(), [&](std::size_t c) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.objective.alpha = cells[c].alpha;
    tc.objective.beta = cells[c].beta;
    tc.sampler.ratio = cells[c].ratio;
    tc.model.feature_dim = data.feature_dim;
    tc.model.num_classes = data.num_classes;
    const auto res = train_sugar(tc, data);
    const auto sel = select(res.best, data.val, agg);
    cells[c].val = sel.metric;
    cells[c].test = aggregate_metric(res.best, sel.chosen, data.test, agg);
    cells[c].chosen = sel.chosen.size();
    spdlog::info("alpha {} beta {} r {}: val {:.4f}", cells[c].alpha, cells[c].beta, cells[c].ratio, cells[c].val);
  });

  std::size_t best = 0;
  nlohmann::json rows = nlohmann::json::array();
  for (std::size_t c = 0; c < cells.size(); ++c) {
    if (cells[c].val > cells[best].val) best = c;
    rows.push_back({{"alpha", cells[c].alpha}, {"beta", cells[c].beta}, {"ratio", cells[c].ratio},
                    {"val", cells[c].val}, {"test", cells[c].test}, {"chosen", cells[c].chosen}});
  }
  return {{"name", cfg.name},
          {"seed", seed},
          {"metric", to_string(agg.metric)},
          {"mode", agg.mode == AggMode::Ens ? "ens" : "wa"},
          {"cells", rows},
          {"best", rows[best]}};
}

Report read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot read " + path);
  try {
    return report_from_json(nlohmann::json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, path + ": " + e.what());
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Run experiments, ablations, grid search, or render report tables"};
  std::string config_path, mode = "experiment", out;
  std::vector<std::string> reports;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "experiment config (JSON); search mode also reads a \"grid\" key");
  app.add_option("--mode", mode, "experiment, ablation, search or table");
  app.add_option("--seed", seed, "run only this seed");
  app.add_option("--out", out, "report path (JSON)");
  app.add_option("--reports", reports, "report files for table mode");

  return cli::run(app, argc, argv, [&] {
    if (mode == "table") {
      if (reports.empty()) throw Error(ErrorKind::InvalidConfig, "table mode needs --reports");
      std::vector<Report> loaded;
      for (const auto& r : reports) loaded.push_back(read_report(r));
      std::cout << metrics_table(loaded);
      return;
    }
    auto j = cli::read_config(config_path);
    nlohmann::json grid_json = nlohmann::json::object();
    if (j.contains("grid")) {
      grid_json = j["grid"];
      j.erase("grid");
    }
    if (seed) j["seeds"] = {*seed};
    if (!out.empty()) j["report_path"] = out;
    if (mode == "ablation") j["ablation_grid"] = true;
    else if (mode != "experiment" && mode != "search") throw Error(ErrorKind::InvalidConfig, "unknown mode '" + mode + "'");
    ExperimentConfig cfg = experiment_config_from_json(j);

    if (mode == "search") {
      const auto result = search(cfg, grid_from_json(grid_json));
      if (cfg.report_path) cli::write_json(*cfg.report_path, result);
      std::cout << result["best"].dump() << '\n';
      return;
    }
    const Report report = run_experiment(cfg);
    std::cout << metrics_table({report});
  });
}
