// Exports one graph with learned edge weights or selections as Graphviz DOT.

#include "cli_common.hpp"
#include "sugar/aggregate.hpp"
#include "sugar/harness.hpp"
#include "sugar/synthgen.hpp"

using namespace sugar;

int main(int argc, char** argv) {
  CLI::App app{"Export learned subgraphs as DOT"};
  std::string config_path, ckpt_dir, data_dir, out, split = "test", source = "ens", merge_rule;
  int index = 0, model = 0;
  std::optional<double> s_c;
  std::optional<std::uint64_t> seed;
  bool as_selection = false;
  app.add_option("--config", config_path, "aggregation config (JSON) used for ENS merging");
  app.add_option("--checkpoints", ckpt_dir, "sugar-train output directory (not needed for --source truth)");
  app.add_option("--data", data_dir, "dataset directory")->required();
  app.add_option("--split", split, "train, val or test");
  app.add_option("--index", index, "graph index within the split");
  app.add_option("--source", source, "ens, model or truth");
  app.add_option("--model", model, "model index for --source model");
  app.add_option("--merge", merge_rule, "avg or max");
  app.add_option("--s-c", s_c, "selection ratio s_c");
  app.add_flag("--selection", as_selection, "draw the top-k selection instead of raw weights");
  app.add_option("--out", out, "output .dot path")->required();
  app.add_option("--seed", seed, "accepted for interface uniformity; export is deterministic");

  return cli::run(app, argc, argv, [&] {
    auto j = cli::read_config(config_path);
    if (!merge_rule.empty()) j["merge"] = merge_rule;
    if (s_c) j["s_c"] = *s_c;
    const AggregationConfig cfg = aggregation_config_from_json(j);

    const DatasetSplit data = read_dataset(data_dir);
    const std::vector<Graph>* graphs = nullptr;
    if (split == "train") graphs = &data.train;
    else if (split == "val") graphs = &data.val;
    else if (split == "test") graphs = &data.test;
    else throw Error(ErrorKind::InvalidConfig, "unknown split '" + split + "'");
    if (index < 0 || static_cast<std::size_t>(index) >= graphs->size()) {
      throw Error(ErrorKind::IndexOutOfRange, "graph index " + std::to_string(index));
    }
    const Graph& g = (*graphs)[static_cast<std::size_t>(index)];

    EdgeWeights weights;
    if (source == "truth") {
      if (!g.truth_edge_mask) throw Error(ErrorKind::InvalidConfig, "graph has no truth mask");
      std::vector<double> w(g.truth_edge_mask->begin(), g.truth_edge_mask->end());
      weights = EdgeWeights(std::move(w));
    } else if (source == "ens" || source == "model") {
      if (ckpt_dir.empty()) throw Error(ErrorKind::InvalidConfig, "--checkpoints is required for this source");
      const auto models = load_checkpoint_dir(cli::run_dir(ckpt_dir));
      if (source == "ens") {
        weights = ens_predict(g, models, cfg).merged_weights;
      } else {
        if (model < 0 || static_cast<std::size_t>(model) >= models.size()) {
          throw Error(ErrorKind::IndexOutOfRange, "model index " + std::to_string(model));
        }
        weights = models[static_cast<std::size_t>(model)].featurize(g);
      }
    } else {
      throw Error(ErrorKind::InvalidConfig, "unknown source '" + source + "'");
    }

    VizOptions opts;
    opts.title = split + "_" + std::to_string(index) + "_" + source;
    if (as_selection && g.edge_count() > 0) {
      export_subgraph_viz(g, top_k_edges(weights, ratio_to_k(cfg.s_c, g.edge_count())), out, opts);
    } else {
      export_subgraph_viz(g, weights, out, opts);
    }
    spdlog::info("wrote {}", out);
  });
}
