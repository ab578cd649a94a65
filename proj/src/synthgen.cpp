#include "sugar/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "sugar/error.hpp"
#include "sugar/json_util.hpp"

namespace sugar {

namespace {

constexpr int kNumClasses = 3;

enum class SplitId : std::uint64_t { Train = 0, Val = 1, Test = 2 };

// Stream tags: graph construction and base-kind assignment never share a seed.
constexpr std::uint64_t kGraphStream = 0;
constexpr std::uint64_t kQuotaStream = 1;

std::uint64_t stream_tag(SplitId split, std::uint64_t purpose) {
  return static_cast<std::uint64_t>(split) * 4 + purpose;
}

Edge canonical(int a, int b) { return a < b ? Edge{a, b} : Edge{b, a}; }

// Base kind per within-class index. Class c is paired with base kind c.
std::vector<BaseKind> assign_bases(const SynthConfig& cfg, SplitId split, int cls, int count,
                                   bool biased) {
  const double p_paired = biased ? cfg.bias : 1.0 / 3.0;
  std::vector<BaseKind> out;
  out.reserve(static_cast<std::size_t>(count));
  auto rng = make_rng(cfg.seed, stream_tag(split, kQuotaStream), static_cast<std::uint64_t>(cls));
  const auto paired = static_cast<BaseKind>(cls);
  const auto other_a = static_cast<BaseKind>((cls + 1) % 3);
  const auto other_b = static_cast<BaseKind>((cls + 2) % 3);
  if (cfg.stratified) {
    const int n_paired = static_cast<int>(std::lround(p_paired * count));
    const int rest = count - n_paired;
    // Odd remainders alternate by class so the two unpaired kinds stay balanced overall.
    const int n_a = rest / 2 + ((rest % 2 != 0 && cls % 2 == 0) ? 1 : 0);
    const int n_b = rest - n_a;
    out.insert(out.end(), static_cast<std::size_t>(n_paired), paired);
    out.insert(out.end(), static_cast<std::size_t>(n_a), other_a);
    out.insert(out.end(), static_cast<std::size_t>(n_b), other_b);
    std::shuffle(out.begin(), out.end(), rng);
  } else {
    for (int i = 0; i < count; ++i) {
      const double u = uniform01(rng);
      if (u < p_paired) {
        out.push_back(paired);
      } else {
        out.push_back(u < p_paired + (1.0 - p_paired) / 2.0 ? other_a : other_b);
      }
    }
  }
  return out;
}

template <typename MakeGraph>
std::vector<Graph> build_split(const SynthConfig& cfg, SplitId split, int per_class, bool biased,
                               CooccurrenceTable& table, MakeGraph&& make_graph) {
  std::array<std::vector<BaseKind>, kNumClasses> bases;
  for (int c = 0; c < kNumClasses; ++c) bases[c] = assign_bases(cfg, split, c, per_class, biased);
  table = {};
  std::vector<Graph> graphs;
  graphs.reserve(static_cast<std::size_t>(per_class * kNumClasses));
  // Graph i belongs to class i % 3 so every prefix of the split is class balanced.
  for (int i = 0; i < per_class * kNumClasses; ++i) {
    const int cls = i % kNumClasses;
    const BaseKind base = bases[cls][static_cast<std::size_t>(i / kNumClasses)];
    auto rng = make_rng(cfg.seed, stream_tag(split, kGraphStream), static_cast<std::uint64_t>(i));
    const int size = uniform_int(rng, cfg.base_size_min, cfg.base_size_max);
    Graph g = make_graph(cls, gen_base(base, size, rng), rng);
    g.label = cls;
    g.env_id = static_cast<int>(base);
    ++table[cls][static_cast<int>(base)];
    graphs.push_back(std::move(g));
  }
  return graphs;
}

template <typename MakeGraph>
DatasetSplit build_dataset(const SynthConfig& cfg, MakeGraph make_graph) {
  cfg.validate();
  DatasetSplit data;
  data.config = cfg;
  data.num_classes = kNumClasses;
  data.feature_dim = cfg.feature_dim;
  data.train = build_split(cfg, SplitId::Train, cfg.train_per_class, true, data.train_cooccurrence, make_graph);
  data.val = build_split(cfg, SplitId::Val, cfg.eval_per_class, false, data.val_cooccurrence, make_graph);
  data.test = build_split(cfg, SplitId::Test, cfg.eval_per_class, false, data.test_cooccurrence, make_graph);
  return data;
}

nlohmann::json table_json(const CooccurrenceTable& t) {
  auto counts = nlohmann::json::array();
  auto frac = nlohmann::json::array();
  for (const auto& row : t) {
    const int total = row[0] + row[1] + row[2];
    counts.push_back({row[0], row[1], row[2]});
    auto fr = nlohmann::json::array();
    for (int v : row) fr.push_back(total > 0 ? static_cast<double>(v) / total : 0.0);
    frac.push_back(std::move(fr));
  }
  return {{"counts", counts}, {"fractions", frac}};
}

}  // namespace

std::string to_string(MotifKind kind) {
  switch (kind) {
    case MotifKind::House: return "House";
    case MotifKind::Cycle: return "Cycle";
    case MotifKind::Crane: return "Crane";
  }
  return "?";
}

std::string to_string(BaseKind kind) {
  switch (kind) {
    case BaseKind::Tree: return "Tree";
    case BaseKind::Ladder: return "Ladder";
    case BaseKind::Wheel: return "Wheel";
  }
  return "?";
}

std::string to_string(SynthMode mode) { return mode == SynthMode::SPMotif ? "spmotif" : "sumotif"; }

SynthMode synth_mode_from_string(const std::string& s) {
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  if (lower == "spmotif") return SynthMode::SPMotif;
  if (lower == "sumotif") return SynthMode::SUMotif;
  throw Error(ErrorKind::InvalidConfig, "unknown synth mode '" + s + "'");
}

void SynthConfig::validate() const {
  // 0.33 is the conventional spelling of the unbiased setting.
  if (!(bias >= 0.33 - 1e-12 && bias < 1.0)) throw Error(ErrorKind::InvalidConfig, "bias must lie in [1/3, 1)");
  if (train_per_class < 1 || eval_per_class < 1) throw Error(ErrorKind::InvalidConfig, "per-class counts must be >= 1");
  if (feature_dim < 1) throw Error(ErrorKind::InvalidConfig, "feature_dim must be >= 1");
  if (base_size_min < 4 || base_size_max < base_size_min) {
    throw Error(ErrorKind::InvalidConfig, "base size range must satisfy 4 <= min <= max");
  }
}

nlohmann::json to_json(const SynthConfig& cfg) {
  return {{"mode", to_string(cfg.mode)},
          {"bias", cfg.bias},
          {"train_per_class", cfg.train_per_class},
          {"eval_per_class", cfg.eval_per_class},
          {"feature_dim", cfg.feature_dim},
          {"base_size_range", {cfg.base_size_min, cfg.base_size_max}},
          {"seed", cfg.seed},
          {"stratified", cfg.stratified}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"mode", "bias", "train_per_class", "eval_per_class", "feature_dim", "base_size_range", "seed",
                      "stratified"},
                     "synth config");
  SynthConfig cfg;
  try {
    if (j.contains("mode")) cfg.mode = synth_mode_from_string(j["mode"].get<std::string>());
    cfg.bias = j.value("bias", cfg.bias);
    cfg.train_per_class = j.value("train_per_class", cfg.train_per_class);
    cfg.eval_per_class = j.value("eval_per_class", cfg.eval_per_class);
    cfg.feature_dim = j.value("feature_dim", cfg.feature_dim);
    if (j.contains("base_size_range")) {
      cfg.base_size_min = j["base_size_range"].at(0).get<int>();
      cfg.base_size_max = j["base_size_range"].at(1).get<int>();
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.stratified = j.value("stratified", cfg.stratified);
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::InvalidConfig, std::string("synth config: ") + ex.what());
  }
  cfg.validate();
  return cfg;
}

double paired_fraction(const CooccurrenceTable& table, int cls) {
  const auto& row = table.at(static_cast<std::size_t>(cls));
  const int total = row[0] + row[1] + row[2];
  return total > 0 ? static_cast<double>(row[static_cast<std::size_t>(cls)]) / total : 0.0;
}

GraphFragment gen_motif(MotifKind kind, Rng& /*rng*/) {
  GraphFragment f;
  switch (kind) {
    case MotifKind::House:
      f.num_nodes = 5;
      f.edges = {{0, 1}, {1, 2}, {2, 3}, {0, 3}, {0, 4}, {1, 4}};
      break;
    case MotifKind::Cycle:
      f.num_nodes = 6;
      for (int i = 0; i < 6; ++i) f.edges.push_back(canonical(i, (i + 1) % 6));
      break;
    case MotifKind::Crane:
      f.num_nodes = 5;
      f.edges = {{0, 1}, {1, 2}, {0, 2}, {1, 3}, {2, 4}};
      break;
  }
  f.invariant.assign(f.edges.size(), 1);
  return f;
}

GraphFragment gen_base(BaseKind kind, int size, Rng& rng) {
  if (size < 4) throw Error(ErrorKind::SizeTooSmall, "base graphs need at least 4 nodes");
  GraphFragment f;
  switch (kind) {
    case BaseKind::Tree:
      f.num_nodes = size;
      for (int v = 1; v < size; ++v) f.edges.push_back(canonical(uniform_int(rng, 0, v - 1), v));
      break;
    case BaseKind::Ladder: {
      // Two rails of `rungs` nodes: rail A is 0..rungs-1, rail B is rungs..2*rungs-1.
      const int rungs = (size + 1) / 2;
      f.num_nodes = 2 * rungs;
      for (int i = 0; i + 1 < rungs; ++i) {
        f.edges.push_back({i, i + 1});
        f.edges.push_back({rungs + i, rungs + i + 1});
      }
      for (int i = 0; i < rungs; ++i) f.edges.push_back({i, rungs + i});
      break;
    }
    case BaseKind::Wheel: {
      f.num_nodes = size;
      const int rim = size - 1;
      for (int i = 1; i <= rim; ++i) f.edges.push_back({0, i});
      for (int i = 0; i < rim; ++i) f.edges.push_back(canonical(1 + i, 1 + (i + 1) % rim));
      break;
    }
  }
  f.invariant.assign(f.edges.size(), 0);
  return f;
}

Graph attach_all(const GraphFragment& base, const std::vector<GraphFragment>& motifs, int feature_dim,
                 Rng& rng) {
  if (base.num_nodes <= 0) throw Error(ErrorKind::InvalidGraph, "empty base fragment");
  Graph g;
  std::vector<std::uint8_t> mask;
  g.edges = base.edges;
  mask = base.invariant;
  int offset = base.num_nodes;
  for (const auto& motif : motifs) {
    if (motif.num_nodes <= 0) throw Error(ErrorKind::InvalidGraph, "empty motif fragment");
    for (std::size_t i = 0; i < motif.edges.size(); ++i) {
      g.edges.push_back({motif.edges[i].src + offset, motif.edges[i].dst + offset});
      mask.push_back(motif.invariant[i]);
    }
    const int motif_node = offset + uniform_int(rng, 0, motif.num_nodes - 1);
    const int base_node = uniform_int(rng, 0, base.num_nodes - 1);
    g.edges.push_back(canonical(base_node, motif_node));
    mask.push_back(0);
    offset += motif.num_nodes;
  }
  g.num_nodes = offset;
  g.node_features.resize(offset, feature_dim);
  for (int r = 0; r < offset; ++r) {
    for (int c = 0; c < feature_dim; ++c) g.node_features(r, c) = uniform01(rng);
  }
  g.truth_edge_mask = std::move(mask);
  return g;
}

Graph attach(const GraphFragment& base, const GraphFragment& motif, int feature_dim, Rng& rng) {
  return attach_all(base, {motif}, feature_dim, rng);
}

std::array<MotifKind, 2> sumotif_combination(int cls) {
  switch (cls) {
    case 0: return {MotifKind::House, MotifKind::Cycle};
    case 1: return {MotifKind::Cycle, MotifKind::Crane};
    case 2: return {MotifKind::Crane, MotifKind::House};
    default: throw Error(ErrorKind::IndexOutOfRange, "SUMotif has three classes");
  }
}

DatasetSplit gen_spmotif(const SynthConfig& config) {
  if (config.mode != SynthMode::SPMotif) throw Error(ErrorKind::InvalidConfig, "gen_spmotif needs mode spmotif");
  return build_dataset(config, [&](int cls, const GraphFragment& base, Rng& rng) {
    return attach(base, gen_motif(static_cast<MotifKind>(cls), rng), config.feature_dim, rng);
  });
}

DatasetSplit gen_sumotif(const SynthConfig& config) {
  if (config.mode != SynthMode::SUMotif) throw Error(ErrorKind::InvalidConfig, "gen_sumotif needs mode sumotif");
  return build_dataset(config, [&](int cls, const GraphFragment& base, Rng& rng) {
    const auto combo = sumotif_combination(cls);
    return attach_all(base, {gen_motif(combo[0], rng), gen_motif(combo[1], rng)}, config.feature_dim, rng);
  });
}

DatasetSplit generate(const SynthConfig& config) {
  return config.mode == SynthMode::SPMotif ? gen_spmotif(config) : gen_sumotif(config);
}

nlohmann::json dataset_meta(const DatasetSplit& data) {
  nlohmann::json meta;
  meta["config"] = to_json(data.config);
  meta["num_classes"] = data.num_classes;
  meta["feature_dim"] = data.feature_dim;
  meta["sizes"] = {{"train", data.train.size()}, {"val", data.val.size()}, {"test", data.test.size()}};
  meta["base_kinds"] = {"Tree", "Ladder", "Wheel"};
  meta["cooccurrence"] = {{"train", table_json(data.train_cooccurrence)},
                          {"val", table_json(data.val_cooccurrence)},
                          {"test", table_json(data.test_cooccurrence)}};
  return meta;
}

void write_dataset(const std::filesystem::path& dir, const DatasetSplit& data) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
  write_graphs_jsonl(dir / "train.jsonl", data.train);
  write_graphs_jsonl(dir / "val.jsonl", data.val);
  write_graphs_jsonl(dir / "test.jsonl", data.test);
  std::ofstream meta(dir / "meta.json", std::ios::binary);
  if (!meta) throw Error(ErrorKind::Io, "cannot write meta.json");
  meta << dataset_meta(data).dump(2) << '\n';
}

DatasetSplit read_dataset(const std::filesystem::path& dir) {
  DatasetSplit data;
  data.train = read_graphs_jsonl(dir / "train.jsonl");
  data.val = read_graphs_jsonl(dir / "val.jsonl");
  data.test = read_graphs_jsonl(dir / "test.jsonl");
  if (data.train.empty() || data.val.empty() || data.test.empty()) {
    throw Error(ErrorKind::InvalidConfig, "dataset splits must be nonempty: " + dir.string());
  }
  int max_label = 0;
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const auto& g : *split) max_label = std::max(max_label, g.label);
  }
  data.num_classes = max_label + 1;
  data.feature_dim = data.train.front().feature_dim();
  const auto meta_path = dir / "meta.json";
  if (std::filesystem::exists(meta_path)) {
    std::ifstream in(meta_path);
    try {
      const auto meta = nlohmann::json::parse(in);
      if (meta.contains("config")) data.config = synth_config_from_json(meta["config"]);
      data.num_classes = std::max(data.num_classes, meta.value("num_classes", data.num_classes));
    } catch (const nlohmann::json::exception& ex) {
      throw Error(ErrorKind::InvalidConfig, std::string("meta.json: ") + ex.what());
    }
  }
  for (const auto* split : {&data.train, &data.val, &data.test}) {
    for (const auto& g : *split) {
      if (g.feature_dim() != data.feature_dim) {
        throw Error(ErrorKind::FeatureDimMismatch, "inconsistent feature dims in " + dir.string());
      }
    }
  }
  return data;
}

}  // namespace sugar
