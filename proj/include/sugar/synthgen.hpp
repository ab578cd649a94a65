#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sugar/graph.hpp"
#include "sugar/rng.hpp"

namespace sugar {

enum class MotifKind { House = 0, Cycle = 1, Crane = 2 };
enum class BaseKind { Tree = 0, Ladder = 1, Wheel = 2 };
enum class SynthMode { SPMotif, SUMotif };

std::string to_string(MotifKind kind);
std::string to_string(BaseKind kind);
std::string to_string(SynthMode mode);
SynthMode synth_mode_from_string(const std::string& s);

/// Structure-only piece of a graph: nodes, edges, per-edge invariant flag.
struct GraphFragment {
  int num_nodes = 0;
  std::vector<Edge> edges;
  std::vector<std::uint8_t> invariant;
};

struct SynthConfig {
  SynthMode mode = SynthMode::SPMotif;
  double bias = 1.0 / 3.0;
  int train_per_class = 3000;
  int eval_per_class = 1000;
  int feature_dim = 4;
  int base_size_min = 8;
  int base_size_max = 15;
  std::uint64_t seed = 1;
  // Realize per-class base-kind frequencies with exact quotas (shuffled)
  // instead of independent draws.
  bool stratified = true;

  void validate() const;
};

nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

/// counts[class][base kind]
using CooccurrenceTable = std::array<std::array<int, 3>, 3>;

struct DatasetSplit {
  std::vector<Graph> train;
  std::vector<Graph> val;
  std::vector<Graph> test;
  SynthConfig config;
  CooccurrenceTable train_cooccurrence{};
  CooccurrenceTable val_cooccurrence{};
  CooccurrenceTable test_cooccurrence{};
  int num_classes = 3;
  int feature_dim = 4;
};

/// Fraction of class c's graphs whose base kind is the one paired with c.
double paired_fraction(const CooccurrenceTable& table, int cls);

GraphFragment gen_motif(MotifKind kind, Rng& rng);
GraphFragment gen_base(BaseKind kind, int size, Rng& rng);

/// Disjoint union of base and motif plus one bridge edge between a random
/// motif node and a random base node; node features i.i.d. uniform [0,1].
Graph attach(const GraphFragment& base, const GraphFragment& motif, int feature_dim, Rng& rng);

/// Same, attaching several motifs independently to the base (each bridge
/// lands on a base node, so motifs never touch each other).
Graph attach_all(const GraphFragment& base, const std::vector<GraphFragment>& motifs,
                 int feature_dim, Rng& rng);

/// Motif pair for SUMotif class c: (House,Cycle), (Cycle,Crane), (Crane,House).
std::array<MotifKind, 2> sumotif_combination(int cls);

DatasetSplit gen_spmotif(const SynthConfig& config);
DatasetSplit gen_sumotif(const SynthConfig& config);
DatasetSplit generate(const SynthConfig& config);

nlohmann::json dataset_meta(const DatasetSplit& data);

/// Writes train.jsonl / val.jsonl / test.jsonl and meta.json into dir.
void write_dataset(const std::filesystem::path& dir, const DatasetSplit& data);

/// Reads the three JSONL splits; meta.json is optional.
DatasetSplit read_dataset(const std::filesystem::path& dir);

}  // namespace sugar
