// Selects and aggregates trained base models (ENS or WA) and reports metrics.

#include "cli_common.hpp"
#include "sugar/aggregate.hpp"
#include "sugar/synthgen.hpp"

using namespace sugar;

namespace {

double mean_jaccard(const std::vector<Graph>& graphs, const std::vector<SubgraphSelection>& sel) {
  double sum = 0.0;
  int n = 0;
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    if (!graphs[g].truth_edge_mask || graphs[g].edge_count() == 0) continue;
    sum += jaccard(sel[g].edge_indices(), truth_edges(graphs[g]));
    ++n;
  }
  return n ? sum / n : 0.0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Aggregate trained base models"};
  std::string config_path, mode, merge_rule, vote_rule, select_rule, metric, ckpt_dir, data_dir, out;
  std::optional<double> s_c;
  std::optional<std::uint64_t> seed;
  bool selections = false;
  app.add_option("--config", config_path, "aggregation config (JSON)");
  app.add_option("--mode", mode, "ens or wa");
  app.add_option("--merge", merge_rule, "avg or max (ENS)");
  app.add_option("--vote", vote_rule, "soft or hard (ENS)");
  app.add_option("--select", select_rule, "uniform or greedy");
  app.add_option("--s-c", s_c, "selection ratio s_c");
  app.add_option("--metric", metric, "accuracy or roc_auc");
  app.add_option("--checkpoints", ckpt_dir, "sugar-train output directory")->required();
  app.add_option("--data", data_dir, "dataset directory")->required();
  app.add_option("--out", out, "report path (JSON)")->required();
  app.add_option("--seed", seed, "accepted for interface uniformity; aggregation is deterministic");
  app.add_flag("--selections", selections, "include merged test selections per graph");

  return cli::run(app, argc, argv, [&] {
    auto j = cli::read_config(config_path);
    if (!mode.empty()) j["mode"] = mode;
    if (!merge_rule.empty()) j["merge"] = merge_rule;
    if (!vote_rule.empty()) j["vote"] = vote_rule;
    if (!select_rule.empty()) j["selection"] = select_rule;
    if (s_c) j["s_c"] = *s_c;
    if (!metric.empty()) j["metric"] = metric;
    const AggregationConfig cfg = aggregation_config_from_json(j);
    const DatasetSplit data = read_dataset(data_dir);
    const auto models = load_checkpoint_dir(cli::run_dir(ckpt_dir));

    const SelectionResult sel = select(models, data.val, cfg);
    nlohmann::json report;
    report["config"] = to_json(cfg);
    report["num_models"] = models.size();
    report["selection"] = to_json(sel);

    nlohmann::json singles = nlohmann::json::array();
    for (const auto& m : models) {
      singles.push_back({{"val", validate(m, data.val, cfg.metric, cfg.s_c)},
                         {"test", validate(m, data.test, cfg.metric, cfg.s_c)}});
    }
    report["single"] = singles;
    report["val"] = sel.metric;
    report["test"] = aggregate_metric(models, sel.chosen, data.test, cfg);

    if (cfg.mode == AggMode::Ens) {
      const EnsEvaluator ev(models, data.test, cfg);
      const auto pred = ev.predict(sel.chosen);
      std::vector<double> own;
      for (int i : sel.chosen) {
        std::vector<SubgraphSelection> s;
        for (std::size_t g = 0; g < data.test.size(); ++g) s.push_back(ev.own_selection(i, g));
        own.push_back(mean_jaccard(data.test, s));
      }
      report["stages"] = {{"merged_jaccard", mean_jaccard(data.test, pred.merged)}, {"single_jaccard", own}};
      if (selections) {
        nlohmann::json per_graph = nlohmann::json::array();
        for (std::size_t g = 0; g < data.test.size(); ++g) {
          per_graph.push_back({{"graph", g}, {"label", pred.labels[g]}, {"edges", pred.merged[g].edge_indices()}});
        }
        report["merged_selections"] = per_graph;
      }
    }
    cli::write_json(out, report);
    spdlog::info("{} over {} of {} models: val {:.4f}, test {:.4f}", cfg.mode == AggMode::Ens ? "ENS" : "WA",
                 sel.chosen.size(), models.size(), sel.metric, report["test"].get<double>());
  });
}
