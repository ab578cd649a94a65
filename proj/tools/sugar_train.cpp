// Trains a collection of base models (or an ERM baseline) on a JSONL dataset.

#include "cli_common.hpp"
#include "sugar/synthgen.hpp"
#include "sugar/trainer.hpp"

using namespace sugar;

int main(int argc, char** argv) {
  CLI::App app{"Train SuGAr base models"};
  std::string config_path, data_dir, out;
  std::optional<std::uint64_t> seed;
  app.add_option("--config", config_path, "training config (JSON, TrainConfig fields)");
  app.add_option("--data", data_dir, "dataset directory from sugar-data")->required();
  app.add_option("--out", out, "output directory")->required();
  app.add_option("--seed", seed, "training seed (overrides config)");

  return cli::run(app, argc, argv, [&] {
    auto j = cli::read_config(config_path);
    if (seed) j["seed"] = *seed;
    TrainConfig cfg = train_config_from_json(j);
    const DatasetSplit data = read_dataset(data_dir);
    cfg.model.feature_dim = data.feature_dim;
    cfg.model.num_classes = data.num_classes;
    cfg.validate();
    const TrainResult res = train_sugar(cfg, data);
    write_train_outputs(out, cfg, res, data);
    for (std::size_t i = 0; i < res.best.size(); ++i) {
      spdlog::info("model {}: best epoch {}, val {} {:.4f}", i, res.best_epoch[i], to_string(cfg.metric),
                   res.best_val[i]);
    }
  });
}
