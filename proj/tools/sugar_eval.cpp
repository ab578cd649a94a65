// Evaluates individual checkpoints on a dataset split.

#include "cli_common.hpp"
#include "sugar/json_util.hpp"
#include "sugar/synthgen.hpp"
#include "sugar/trainer.hpp"

using namespace sugar;

int main(int argc, char** argv) {
  CLI::App app{"Evaluate trained checkpoints"};
  std::string config_path, ckpt_dir, data_dir, out, split = "test", metric;
  std::optional<double> s_c;
  std::optional<std::uint64_t> seed;
  bool full_graph = false;
  app.add_option("--config", config_path, "evaluation config (JSON: split, metric, s_c, full_graph)");
  app.add_option("--checkpoints", ckpt_dir, "sugar-train output directory")->required();
  app.add_option("--data", data_dir, "dataset directory")->required();
  app.add_option("--split", split, "train, val or test");
  app.add_option("--metric", metric, "accuracy or roc_auc");
  app.add_option("--s-c", s_c, "selection ratio s_c");
  app.add_flag("--full-graph", full_graph, "classify the full graph instead of the model's own selection");
  app.add_option("--out", out, "optional JSON output");
  app.add_option("--seed", seed, "accepted for interface uniformity; evaluation is deterministic");

  return cli::run(app, argc, argv, [&] {
    auto j = cli::read_config(config_path);
    require_known_keys(j, {"split", "metric", "s_c", "full_graph"}, "eval config");
    if (app.count("--split") || !j.contains("split")) j["split"] = split;
    if (!metric.empty()) j["metric"] = metric;
    if (s_c) j["s_c"] = *s_c;
    if (full_graph) j["full_graph"] = true;

    const std::string which = j["split"].get<std::string>();
    const Metric m = metric_from_string(j.value("metric", std::string("accuracy")));
    const double ratio = j.value("s_c", 0.4);
    if (!(ratio > 0.0 && ratio <= 1.0)) throw Error(ErrorKind::InvalidRatio, "s_c must lie in (0, 1]");
    const bool use_selection = !j.value("full_graph", false);

    const DatasetSplit data = read_dataset(data_dir);
    const std::vector<Graph>* graphs = nullptr;
    if (which == "train") graphs = &data.train;
    else if (which == "val") graphs = &data.val;
    else if (which == "test") graphs = &data.test;
    else throw Error(ErrorKind::InvalidConfig, "unknown split '" + which + "'");

    const auto models = load_checkpoint_dir(cli::run_dir(ckpt_dir));
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t i = 0; i < models.size(); ++i) {
      const double v = validate(models[i], *graphs, m, ratio, use_selection);
      rows.push_back({{"model", i}, {"value", v}});
      std::cout << "model " << i << ' ' << to_string(m) << ' ' << v << '\n';
    }
    if (!out.empty()) {
      cli::write_json(out, {{"split", which}, {"metric", to_string(m)}, {"s_c", ratio},
                            {"full_graph", !use_selection}, {"models", rows}});
    }
  });
}
