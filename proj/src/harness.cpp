#include "sugar/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "sugar/error.hpp"
#include "sugar/json_util.hpp"
#include "sugar/parallel.hpp"

namespace sugar {

// ---------------------------------------------------------------------------
// DiscreteJoint
// ---------------------------------------------------------------------------

DiscreteJoint::DiscreteJoint(int num_vars) : num_vars_(num_vars) {
  if (num_vars <= 0) throw Error(ErrorKind::InvalidConfig, "DiscreteJoint needs at least one variable");
}

void DiscreteJoint::add(const std::vector<int>& values, double weight) {
  if (static_cast<int>(values.size()) != num_vars_)
    throw Error(ErrorKind::InvalidConfig, "tuple arity does not match the joint");
  if (!(weight >= 0.0) || !std::isfinite(weight))
    throw Error(ErrorKind::InvalidConfig, "joint weights must be finite and nonnegative");
  if (weight == 0.0) return;
  cells_[values] += weight;
  total_ += weight;
}

DiscreteJoint DiscreteJoint::marginal(const std::vector<int>& vars) const {
  for (int v : vars)
    if (v < 0 || v >= num_vars_) throw Error(ErrorKind::IndexOutOfRange, "variable index out of range");
  DiscreteJoint out(std::max<int>(1, static_cast<int>(vars.size())));
  std::vector<int> key(std::max<std::size_t>(1, vars.size()), 0);
  for (const auto& [tuple, w] : cells_) {
    for (std::size_t i = 0; i < vars.size(); ++i) key[i] = tuple[vars[i]];
    out.add(key, w);
  }
  return out;
}

void DiscreteJoint::validate() const {
  if (cells_.empty() || !(total_ > 0.0)) throw Error(ErrorKind::InvalidConfig, "joint is empty");
}

namespace {

double entropy_of(const DiscreteJoint& m) {
  double h = 0.0;
  for (const auto& [_, w] : m.table()) {
    const double p = w / m.total();
    h -= p * std::log(p);
  }
  return h;
}

std::vector<int> concat(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> out = a;
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

double entropy(const DiscreteJoint& joint, const std::vector<int>& vars) {
  joint.validate();
  if (vars.empty()) return 0.0;
  return entropy_of(joint.marginal(vars));
}

double conditional_entropy(const DiscreteJoint& joint, const std::vector<int>& a, const std::vector<int>& c) {
  return entropy(joint, concat(a, c)) - entropy(joint, c);
}

double conditional_mi(const DiscreteJoint& joint, const std::vector<int>& a, const std::vector<int>& b,
                      const std::vector<int>& c) {
  joint.validate();
  const std::size_t na = a.size(), nb = b.size();
  const auto abc = joint.marginal(concat(concat(a, b), c));
  const auto ac = joint.marginal(concat(a, c));
  const auto bc = joint.marginal(concat(b, c));
  const auto cm = joint.marginal(c);
  const double total = joint.total();

  double mi = 0.0;
  std::vector<int> key_ac, key_bc, key_c;
  for (const auto& [tuple, w] : abc.table()) {
    key_ac.assign(tuple.begin(), tuple.begin() + na);
    key_bc.assign(tuple.begin() + na, tuple.begin() + na + nb);
    key_c.assign(tuple.begin() + na + nb, tuple.end());
    key_ac.insert(key_ac.end(), key_c.begin(), key_c.end());
    key_bc.insert(key_bc.end(), key_c.begin(), key_c.end());
    if (key_c.empty()) key_c.push_back(0);
    const double p_abc = w / total;
    const double p_ac = ac.table().at(key_ac) / total;
    const double p_bc = bc.table().at(key_bc) / total;
    const double p_c = cm.table().at(key_c) / total;
    mi += p_abc * std::log(p_abc * p_c / (p_ac * p_bc));
  }
  return std::max(0.0, mi);
}

// ---------------------------------------------------------------------------
// Planted family
// ---------------------------------------------------------------------------

void PlantedFamily::validate() const {
  if (s_c < 1) throw Error(ErrorKind::InvalidConfig, "s_c must be positive");
  if (static_cast<int>(block_a.size()) != s_c || static_cast<int>(block_b.size()) != s_c)
    throw Error(ErrorKind::InvalidConfig, "planted blocks must have size s_c");
  if (!(spurious_agree >= 0.0 && spurious_agree < 1.0))
    throw Error(ErrorKind::InvalidConfig, "spurious_agree must lie in [0, 1)");
  std::set<int> seen;
  for (const auto* part : {&block_a, &block_b, &spurious})
    for (int e : *part) {
      if (e < 0 || e >= num_edges) throw Error(ErrorKind::IndexOutOfRange, "slot out of range");
      if (!seen.insert(e).second) throw Error(ErrorKind::InvalidConfig, "slots overlap");
    }
}

PlantedFamily PlantedFamily::random(int s_c, int num_spurious, int num_noise, double spurious_agree, Rng& rng) {
  PlantedFamily f;
  f.s_c = s_c;
  f.num_edges = 2 * s_c + num_spurious + num_noise;
  f.spurious_agree = spurious_agree;
  std::vector<int> slots(f.num_edges);
  std::iota(slots.begin(), slots.end(), 0);
  std::shuffle(slots.begin(), slots.end(), rng);
  auto it = slots.begin();
  f.block_a.assign(it, it + s_c);
  it += s_c;
  f.block_b.assign(it, it + s_c);
  it += s_c;
  f.spurious.assign(it, it + num_spurious);
  std::sort(f.block_a.begin(), f.block_a.end());
  std::sort(f.block_b.begin(), f.block_b.end());
  std::sort(f.spurious.begin(), f.spurious.end());
  f.validate();
  return f;
}

std::vector<PlantedOutcome> enumerate_family(const PlantedFamily& family) {
  family.validate();
  const int s = family.s_c;
  std::vector<int> noise;
  {
    std::set<int> used(family.block_a.begin(), family.block_a.end());
    used.insert(family.block_b.begin(), family.block_b.end());
    used.insert(family.spurious.begin(), family.spurious.end());
    for (int e = 0; e < family.num_edges; ++e)
      if (!used.count(e)) noise.push_back(e);
  }
  const int free_bits = 2 * (s - 1);
  const int ns = static_cast<int>(family.spurious.size());
  const int nn = static_cast<int>(noise.size());
  const int latent = free_bits + ns + nn;
  if (latent > 22) throw Error(ErrorKind::InvalidConfig, "family too large to enumerate");

  std::vector<PlantedOutcome> out;
  out.reserve(std::size_t{2} << latent);
  for (int y = 0; y < 2; ++y) {
    for (std::uint32_t code = 0; code < (1u << latent); ++code) {
      PlantedOutcome o;
      o.y = y;
      o.bits.assign(family.num_edges, 0);
      double p = 0.5 / static_cast<double>(1u << (free_bits + nn));
      int bit = 0;
      for (const auto* block : {&family.block_a, &family.block_b}) {
        int parity = y;
        for (int i = 0; i + 1 < s; ++i) {
          const int v = (code >> bit++) & 1;
          o.bits[(*block)[i]] = v;
          parity ^= v;
        }
        o.bits[(*block)[s - 1]] = parity;
      }
      for (int i = 0; i < ns; ++i) {
        const int agree = (code >> bit++) & 1;
        o.bits[family.spurious[i]] = agree ? y : 1 - y;
        p *= agree ? family.spurious_agree : 1.0 - family.spurious_agree;
      }
      for (int i = 0; i < nn; ++i) o.bits[noise[i]] = (code >> bit++) & 1;
      o.prob = p;
      if (p > 0.0) out.push_back(std::move(o));
    }
  }
  return out;
}

namespace {

int encode(const std::vector<int>& bits, const std::vector<int>& slots) {
  int c = 0;
  for (int e : slots) c = (c << 1) | bits[e];
  return c;
}

std::vector<int> set_union(const std::vector<int>& a, const std::vector<int>& b) {
  std::vector<int> u;
  std::set_union(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(u));
  return u;
}

/// All sorted subsets of {0..n-1} with 1..max_size elements.
std::vector<std::vector<int>> small_subsets(int n, int max_size) {
  std::vector<std::vector<int>> out;
  std::vector<int> cur;
  auto rec = [&](auto&& self, int start) -> void {
    if (!cur.empty()) out.push_back(cur);
    if (static_cast<int>(cur.size()) == max_size) return;
    for (int e = start; e < n; ++e) {
      cur.push_back(e);
      self(self, e + 1);
      cur.pop_back();
    }
  };
  rec(rec, 0);
  return out;
}

}  // namespace

DiscreteJoint selection_joint(const std::vector<PlantedOutcome>& outcomes, const std::vector<int>& s_j,
                              const std::vector<int>& s_k) {
  DiscreteJoint joint(3);
  for (const auto& o : outcomes) joint.add({encode(o.bits, s_j), encode(o.bits, s_k), o.y}, o.prob);
  return joint;
}

double label_paired_mi(const std::vector<PlantedOutcome>& outcomes, const std::vector<int>& s) {
  std::map<int, double> p_y;
  std::map<std::pair<int, int>, double> p_cy;  // (code, y)
  for (const auto& o : outcomes) {
    p_y[o.y] += o.prob;
    p_cy[{encode(o.bits, s), o.y}] += o.prob;
  }
  DiscreteJoint joint(3);
  for (const auto& [ka, pa] : p_cy)
    for (const auto& [kb, pb] : p_cy)
      if (ka.second == kb.second) joint.add({ka.first, kb.first, 0}, pa * pb / p_y[ka.second]);
  return conditional_mi(joint, {0}, {1}, {2});
}

double pair_conditional_mi(const std::vector<PlantedOutcome>& outcomes, const std::vector<int>& s_j,
                           const std::vector<int>& s_k) {
  return conditional_mi(selection_joint(outcomes, s_j, s_k), {0}, {1}, {2});
}

double union_label_mi(const std::vector<PlantedOutcome>& outcomes, const std::vector<int>& s_j,
                      const std::vector<int>& s_k) {
  const auto u = set_union(s_j, s_k);
  DiscreteJoint joint(3);
  for (const auto& o : outcomes) joint.add({encode(o.bits, u), o.y, 0}, o.prob);
  return conditional_mi(joint, {0}, {1}, {2});
}

TheoremSolution solve_two_subgraph_objective(const PlantedFamily& family, double tol) {
  const auto outcomes = enumerate_family(family);
  const auto subsets = small_subsets(family.num_edges, family.s_c);
  std::vector<double> inv(subsets.size());
  for (std::size_t i = 0; i < subsets.size(); ++i) inv[i] = label_paired_mi(outcomes, subsets[i]);

  const double max_pair = 2.0 * *std::max_element(inv.begin(), inv.end());

  TheoremSolution best;
  bool have = false;
  for (std::size_t j = 0; j < subsets.size(); ++j) {
    for (std::size_t k = 0; k < subsets.size(); ++k) {
      ++best.candidates;
      const double invariance = inv[j] + inv[k];
      if (invariance < max_pair - tol) continue;
      if (have && invariance < best.invariance - tol) continue;
      const bool better_inv = !have || invariance > best.invariance + tol;
      const double redundancy = pair_conditional_mi(outcomes, subsets[j], subsets[k]) +
                                pair_conditional_mi(outcomes, subsets[k], subsets[j]);
      if (!better_inv && redundancy > best.redundancy + tol) continue;
      const bool better_red = better_inv || redundancy < best.redundancy - tol;
      const double union_info = union_label_mi(outcomes, subsets[j], subsets[k]);
      if (!better_red && union_info <= best.union_info + tol) continue;
      const int candidates = best.candidates;
      best = TheoremSolution{subsets[j], subsets[k], invariance, redundancy, union_info, candidates};
      have = true;
    }
  }
  return best;
}

bool recovers_planted(const PlantedFamily& family, const TheoremSolution& sol) {
  return (sol.first == family.block_a && sol.second == family.block_b) ||
         (sol.first == family.block_b && sol.second == family.block_a);
}

// ---------------------------------------------------------------------------
// Visualization
// ---------------------------------------------------------------------------

namespace {

std::string hsv_hex(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h * 6.0, 6.0);
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) r = c, g = x;
  else if (hp < 2) r = x, g = c;
  else if (hp < 3) g = c, b = x;
  else if (hp < 4) g = x, b = c;
  else if (hp < 5) r = x, b = c;
  else r = c, b = x;
  const double m = v - c;
  auto byte = [&](double u) { return static_cast<int>(std::lround(std::clamp(u + m, 0.0, 1.0) * 255.0)); };
  return fmt::format("#{:02x}{:02x}{:02x}", byte(r), byte(g), byte(b));
}

/// Component id per truth edge (-1 elsewhere), numbered by first edge.
std::vector<int> truth_components(const Graph& graph) {
  std::vector<int> comp(graph.edge_count(), -1);
  if (!graph.truth_edge_mask) return comp;
  const auto& mask = *graph.truth_edge_mask;
  std::vector<int> parent(graph.num_nodes);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (std::size_t e = 0; e < graph.edge_count(); ++e)
    if (mask[e]) parent[find(graph.edges[e].src)] = find(graph.edges[e].dst);
  std::map<int, int> ids;
  for (std::size_t e = 0; e < graph.edge_count(); ++e) {
    if (!mask[e]) continue;
    const int root = find(graph.edges[e].src);
    const auto it = ids.emplace(root, static_cast<int>(ids.size())).first;
    comp[e] = it->second;
  }
  return comp;
}

constexpr double kHues[] = {0.60, 0.00, 0.33, 0.08, 0.80, 0.50};

}  // namespace

std::string subgraph_dot(const Graph& graph, const EdgeWeights& weights, const VizOptions& opts) {
  weights.check_aligned(graph.edge_count());
  const auto comp = truth_components(graph);
  std::vector<int> node_motif(graph.num_nodes, -1);
  for (std::size_t e = 0; e < graph.edge_count(); ++e)
    if (comp[e] >= 0) node_motif[graph.edges[e].src] = node_motif[graph.edges[e].dst] = comp[e];

  std::ostringstream os;
  os << "graph \"" << opts.title << "\" {\n";
  os << "  graph [label=\"" << opts.title << " (y=" << graph.label << ")\"];\n";
  os << "  node [shape=circle, width=0.3, fontsize=8];\n";
  for (int v = 0; v < graph.num_nodes; ++v) {
    if (node_motif[v] >= 0)
      os << fmt::format("  {} [motif={}, color=\"{}\"];\n", v, node_motif[v],
                        hsv_hex(kHues[node_motif[v] % 6], 0.9, 0.7));
    else
      os << "  " << v << ";\n";
  }
  for (std::size_t e = 0; e < graph.edge_count(); ++e) {
    const double w = std::clamp(weights[e], 0.0, 1.0);
    const double width = opts.min_width + (opts.max_width - opts.min_width) * w;
    const auto& edge = graph.edges[e];
    if (comp[e] >= 0) {
      os << fmt::format("  {} -- {} [penwidth={:.3f}, score={:.4f}, color=\"{}\", truth=1, motif={}];\n",
                        edge.src, edge.dst, width, w, hsv_hex(kHues[comp[e] % 6], 0.25 + 0.75 * w, 0.95 - 0.35 * w),
                        comp[e]);
    } else {
      os << fmt::format("  {} -- {} [penwidth={:.3f}, score={:.4f}, color=\"{}\"];\n", edge.src, edge.dst,
                        width, w, hsv_hex(0.0, 0.0, 0.9 - 0.85 * w));
    }
  }
  os << "}\n";
  return os.str();
}

std::string subgraph_dot(const Graph& graph, const SubgraphSelection& selection, const VizOptions& opts) {
  return subgraph_dot(graph, selection_to_hard_mask(selection, graph.edge_count()), opts);
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::Io, "cannot open " + path.string());
  out << text;
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

}  // namespace

void export_subgraph_viz(const Graph& graph, const EdgeWeights& weights, const std::filesystem::path& path,
                         const VizOptions& opts) {
  write_text(path, subgraph_dot(graph, weights, opts));
}

void export_subgraph_viz(const Graph& graph, const SubgraphSelection& selection, const std::filesystem::path& path,
                         const VizOptions& opts) {
  write_text(path, subgraph_dot(graph, selection, opts));
}

// ---------------------------------------------------------------------------
// Experiment config
// ---------------------------------------------------------------------------

void ExperimentConfig::validate() const {
  if (seeds.empty()) throw Error(ErrorKind::InvalidConfig, "seeds must be nonempty");
  if (synth.has_value() == data_dir.has_value())
    throw Error(ErrorKind::InvalidConfig, "exactly one of synth or data_dir is required");
  if (synth) synth->validate();
  if (data_dir && !std::filesystem::is_directory(*data_dir))
    throw Error(ErrorKind::InvalidConfig, "data_dir does not exist: " + data_dir->string());
  train.validate();
  aggregation.validate();
}

nlohmann::json to_json(const ExperimentConfig& cfg) {
  nlohmann::json j;
  j["name"] = cfg.name;
  if (cfg.synth) j["synth"] = to_json(*cfg.synth);
  if (cfg.data_dir) j["data_dir"] = cfg.data_dir->string();
  j["train"] = to_json(cfg.train);
  j["aggregation"] = to_json(cfg.aggregation);
  j["seeds"] = cfg.seeds;
  if (cfg.report_path) j["report_path"] = cfg.report_path->string();
  j["ablation_grid"] = cfg.ablation_grid;
  j["include_erm"] = cfg.include_erm;
  return j;
}

ExperimentConfig experiment_config_from_json(const nlohmann::json& j) {
  require_known_keys(j,
                     {"name", "synth", "data_dir", "train", "aggregation", "seeds", "report_path", "ablation_grid",
                      "include_erm"},
                     "experiment");
  ExperimentConfig cfg;
  try {
    cfg.name = j.value("name", cfg.name);
    if (j.contains("synth")) cfg.synth = synth_config_from_json(j.at("synth"));
    if (j.contains("data_dir")) cfg.data_dir = j.at("data_dir").get<std::string>();
    if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
    if (j.contains("aggregation")) cfg.aggregation = aggregation_config_from_json(j.at("aggregation"));
    if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (j.contains("report_path")) cfg.report_path = j.at("report_path").get<std::string>();
    cfg.ablation_grid = j.value("ablation_grid", cfg.ablation_grid);
    cfg.include_erm = j.value("include_erm", cfg.include_erm);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("experiment: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

ReportRow make_row(std::string method, std::vector<double> values) {
  ReportRow row;
  row.method = std::move(method);
  row.values = std::move(values);
  if (!row.values.empty()) {
    const double n = static_cast<double>(row.values.size());
    row.mean = std::accumulate(row.values.begin(), row.values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : row.values) ss += (v - row.mean) * (v - row.mean);
    row.std = std::sqrt(ss / n);
  }
  return row;
}

const ReportRow* Report::find(const std::string& method) const {
  for (const auto& r : rows)
    if (r.method == method) return &r;
  return nullptr;
}

nlohmann::json to_json(const Report& report) {
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : report.rows)
    rows.push_back({{"method", r.method}, {"values", r.values}, {"mean", r.mean}, {"std", r.std}});
  return {{"dataset", report.dataset},
          {"metric", report.metric},
          {"seeds", report.seeds},
          {"rows", rows},
          {"diagnostics", report.diagnostics}};
}

Report report_from_json(const nlohmann::json& j) {
  try {
    Report r;
    r.dataset = j.at("dataset").get<std::string>();
    r.metric = j.value("metric", std::string("accuracy"));
    r.seeds = j.value("seeds", std::vector<std::uint64_t>{});
    for (const auto& row : j.at("rows")) {
      ReportRow rr = make_row(row.at("method").get<std::string>(), row.value("values", std::vector<double>{}));
      if (rr.values.empty()) {
        rr.mean = row.at("mean").get<double>();
        rr.std = row.value("std", 0.0);
      }
      r.rows.push_back(std::move(rr));
    }
    r.diagnostics = j.value("diagnostics", nlohmann::json::object());
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidConfig, std::string("report: ") + e.what());
  }
}

std::string metrics_table(const std::vector<Report>& reports, double scale) {
  std::vector<std::string> methods;
  for (const auto& r : reports)
    for (const auto& row : r.rows)
      if (std::find(methods.begin(), methods.end(), row.method) == methods.end()) methods.push_back(row.method);

  std::ostringstream os;
  os << "| dataset |";
  for (const auto& m : methods) os << ' ' << m << " |";
  os << "\n|---|";
  for (std::size_t i = 0; i < methods.size(); ++i) os << "---|";
  os << '\n';
  for (const auto& r : reports) {
    os << "| " << r.dataset << " |";
    for (const auto& m : methods) {
      const auto* row = r.find(m);
      if (row)
        os << fmt::format(" {:.2f}±{:.2f} |", scale * row->mean, scale * row->std);
      else
        os << " — |";
    }
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Runs
// ---------------------------------------------------------------------------

DatasetSplit load_experiment_data(const ExperimentConfig& cfg, std::uint64_t seed) {
  if (cfg.synth) {
    SynthConfig sc = *cfg.synth;
    sc.seed = seed;
    return generate(sc);
  }
  return read_dataset(*cfg.data_dir);
}

namespace {

TrainConfig seed_train_config(const ExperimentConfig& cfg, const DatasetSplit& data, std::uint64_t seed) {
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  tc.model.feature_dim = data.feature_dim;
  tc.model.num_classes = data.num_classes;
  return tc;
}

AggregationConfig seed_agg_config(const ExperimentConfig& cfg, AggMode mode) {
  AggregationConfig ac = cfg.aggregation;
  ac.mode = mode;
  ac.s_c = cfg.train.s_c;
  ac.metric = cfg.train.metric;
  return ac;
}

bool has_truth(const std::vector<Graph>& graphs) {
  return !graphs.empty() && std::all_of(graphs.begin(), graphs.end(),
                                        [](const Graph& g) { return g.truth_edge_mask.has_value(); });
}

}  // namespace

SeedResult run_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedResult out;
  out.seed = seed;
  const auto data = load_experiment_data(cfg, seed);
  const TrainConfig tc = seed_train_config(cfg, data, seed);

  if (cfg.include_erm) {
    TrainConfig ec = tc;
    ec.method = TrainMethod::Erm;
    ec.n_models = 1;
    const auto er = train_sugar(ec, data);
    out.metrics["ERM"] = validate(er.best[0], data.test, tc.metric, tc.s_c, false);
  }

  const auto res = train_sugar(tc, data);
  const std::size_t n = res.best.size();
  std::vector<double> single(n);
  for (std::size_t i = 0; i < n; ++i) single[i] = validate(res.best[i], data.test, tc.metric, tc.s_c);
  const std::size_t top =
      static_cast<std::size_t>(std::max_element(res.best_val.begin(), res.best_val.end()) - res.best_val.begin());
  out.metrics["mean-single"] = std::accumulate(single.begin(), single.end(), 0.0) / static_cast<double>(n);
  out.metrics["best-single"] = single[top];

  const auto ens_cfg = seed_agg_config(cfg, AggMode::Ens);
  const auto ens_sel = select(res.best, data.val, ens_cfg);
  const EnsEvaluator test_eval(res.best, data.test, ens_cfg);
  out.metrics["SuGAr(ENS)"] = test_eval.metric(ens_sel.chosen);

  const auto wa_cfg = seed_agg_config(cfg, AggMode::Wa);
  const auto wa_sel = select(res.best, data.val, wa_cfg);
  out.metrics["SuGAr(WA)"] = aggregate_metric(res.best, wa_sel.chosen, data.test, wa_cfg);

  out.diagnostics["ens_size"] = static_cast<double>(ens_sel.chosen.size());
  out.diagnostics["wa_size"] = static_cast<double>(wa_sel.chosen.size());
  out.diagnostics["ens_val"] = ens_sel.metric;
  out.diagnostics["wa_val"] = wa_sel.metric;
  out.diagnostics["best_single_val"] = res.best_val[top];
  out.diagnostics["similarity_end"] =
      n > 1 ? mean_pairwise_similarity(res.final_models, data.val) : 0.0;

  if (has_truth(data.test)) {
    const auto pred = test_eval.predict(ens_sel.chosen);
    double merged = 0.0, own = 0.0;
    for (std::size_t g = 0; g < data.test.size(); ++g) {
      const auto truth = truth_edges(data.test[g]);
      merged += jaccard(pred.merged[g].edge_indices(), truth);
      for (std::size_t i = 0; i < n; ++i)
        own += jaccard(test_eval.own_selection(static_cast<int>(i), g).edge_indices(), truth) /
               static_cast<double>(n);
    }
    out.diagnostics["jaccard_merged"] = merged / static_cast<double>(data.test.size());
    out.diagnostics["jaccard_single"] = own / static_cast<double>(data.test.size());
  }
  return out;
}

SeedResult run_ablation_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedResult out;
  out.seed = seed;
  const auto data = load_experiment_data(cfg, seed);
  const auto ens_cfg = seed_agg_config(cfg, AggMode::Ens);
  for (Ablation a : {Ablation::SuA, Ablation::SuD, Ablation::SuS, Ablation::SuNone}) {
    TrainConfig tc = seed_train_config(cfg, data, seed);
    tc.ablation = a;
    const auto res = train_sugar(tc, data);
    const auto sel = select(res.best, data.val, ens_cfg);
    const auto name = to_string(a);
    out.metrics[name] = aggregate_metric(res.best, sel.chosen, data.test, ens_cfg);
    out.diagnostics["similarity_end:" + name] =
        res.final_models.size() > 1 ? mean_pairwise_similarity(res.final_models, data.val) : 0.0;
  }
  return out;
}

Report run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<SeedResult> results(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), [&](std::size_t i) {
    const auto seed = cfg.seeds[i];
    try {
      spdlog::info("{}: seed {} started", cfg.name, seed);
      results[i] = cfg.ablation_grid ? run_ablation_seed(cfg, seed) : run_seed(cfg, seed);
      spdlog::info("{}: seed {} done", cfg.name, seed);
    } catch (const Error& e) {
      throw Error(e.kind(), fmt::format("{} seed {}: {}", cfg.name, seed, e.what()));
    }
  });

  Report report;
  report.dataset = cfg.name;
  report.metric = to_string(cfg.train.metric);
  report.seeds = cfg.seeds;
  std::vector<std::string> order;
  if (cfg.ablation_grid) {
    order = {"SU-A", "SU-D", "SU-S", "SU-None"};
  } else {
    if (cfg.include_erm) order.push_back("ERM");
    for (const char* m : {"mean-single", "best-single", "SuGAr(ENS)", "SuGAr(WA)"}) order.push_back(m);
  }
  for (const auto& m : order) {
    std::vector<double> vals;
    for (const auto& r : results) vals.push_back(r.metrics.at(m));
    report.rows.push_back(make_row(m, std::move(vals)));
  }
  std::set<std::string> keys;
  for (const auto& r : results)
    for (const auto& [k, _] : r.diagnostics) keys.insert(k);
  for (const auto& k : keys) {
    std::vector<double> vals;
    for (const auto& r : results)
      if (auto it = r.diagnostics.find(k); it != r.diagnostics.end()) vals.push_back(it->second);
    const auto row = make_row(k, vals);
    report.diagnostics[k] = {{"values", vals}, {"mean", row.mean}, {"std", row.std}};
  }

  if (cfg.report_path) {
    if (cfg.report_path->has_parent_path()) std::filesystem::create_directories(cfg.report_path->parent_path());
    write_text(*cfg.report_path, to_json(report).dump(2) + "\n");
  }
  return report;
}

}  // namespace sugar
