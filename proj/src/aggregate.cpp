#include "sugar/aggregate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "sugar/error.hpp"
#include "sugar/json_util.hpp"
#include "sugar/parallel.hpp"

namespace sugar {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

void check_sets(std::span<const EdgeWeights> sets) {
  if (sets.empty()) throw Error(ErrorKind::EmptyModelList, "no edge weight sets to merge");
  for (const auto& s : sets) s.check_aligned(sets.front().size());
}

void check_matrix(const std::vector<std::vector<double>>& probs) {
  if (probs.empty() || probs.front().empty()) throw Error(ErrorKind::EmptyMatrix, "empty probability matrix");
  for (const auto& row : probs) {
    if (row.size() != probs.front().size()) throw Error(ErrorKind::MisalignedWeights, "ragged probability matrix");
  }
}

std::vector<double> column_means(const std::vector<std::vector<double>>& probs) {
  std::vector<double> mean(probs.front().size(), 0.0);
  for (const auto& row : probs) {
    for (std::size_t c = 0; c < row.size(); ++c) mean[c] += row[c];
  }
  for (auto& m : mean) m /= static_cast<double>(probs.size());
  return mean;
}

int argmax(const std::vector<double>& v) {
  return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin());
}

SubgraphSelection top_selection(const EdgeWeights& w, double s_c) {
  if (w.size() == 0) return {};
  return top_k_edges(w, ratio_to_k(s_c, w.size()));
}

}  // namespace

void AggregationConfig::validate() const {
  if (!(s_c > 0.0 && s_c <= 1.0)) throw Error(ErrorKind::InvalidConfig, "s_c must lie in (0, 1]");
}

AggMode agg_mode_from_string(const std::string& s) {
  const auto l = lower(s);
  if (l == "ens") return AggMode::Ens;
  if (l == "wa") return AggMode::Wa;
  throw Error(ErrorKind::InvalidConfig, "unknown aggregation mode '" + s + "'");
}

MergeRule merge_rule_from_string(const std::string& s) {
  const auto l = lower(s);
  if (l == "avg" || l == "average") return MergeRule::Average;
  if (l == "max") return MergeRule::Max;
  throw Error(ErrorKind::InvalidConfig, "unknown merge rule '" + s + "'");
}

VoteRule vote_rule_from_string(const std::string& s) {
  const auto l = lower(s);
  if (l == "soft") return VoteRule::Soft;
  if (l == "hard") return VoteRule::Hard;
  throw Error(ErrorKind::InvalidConfig, "unknown vote rule '" + s + "'");
}

SelectionRule selection_rule_from_string(const std::string& s) {
  const auto l = lower(s);
  if (l == "uniform") return SelectionRule::Uniform;
  if (l == "greedy") return SelectionRule::Greedy;
  throw Error(ErrorKind::InvalidConfig, "unknown selection rule '" + s + "'");
}

nlohmann::json to_json(const AggregationConfig& cfg) {
  return {{"mode", cfg.mode == AggMode::Ens ? "ens" : "wa"},
          {"merge", cfg.merge == MergeRule::Average ? "avg" : "max"},
          {"vote", cfg.vote == VoteRule::Soft ? "soft" : "hard"},
          {"selection", cfg.selection == SelectionRule::Greedy ? "greedy" : "uniform"},
          {"s_c", cfg.s_c},
          {"metric", to_string(cfg.metric)}};
}

AggregationConfig aggregation_config_from_json(const nlohmann::json& j) {
  require_known_keys(j, {"mode", "merge", "vote", "selection", "s_c", "metric"}, "aggregation config");
  AggregationConfig cfg;
  try {
    if (j.contains("mode")) cfg.mode = agg_mode_from_string(j.at("mode").get<std::string>());
    if (j.contains("merge")) cfg.merge = merge_rule_from_string(j.at("merge").get<std::string>());
    if (j.contains("vote")) cfg.vote = vote_rule_from_string(j.at("vote").get<std::string>());
    if (j.contains("selection")) cfg.selection = selection_rule_from_string(j.at("selection").get<std::string>());
    cfg.s_c = j.value("s_c", cfg.s_c);
    if (j.contains("metric")) cfg.metric = metric_from_string(j.at("metric").get<std::string>());
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorKind::InvalidConfig, std::string("aggregation config: ") + ex.what());
  }
  cfg.validate();
  return cfg;
}

EdgeWeights merge_average(std::span<const EdgeWeights> weight_sets) {
  check_sets(weight_sets);
  std::vector<double> out(weight_sets.front().size(), 0.0);
  for (const auto& s : weight_sets) {
    for (std::size_t e = 0; e < out.size(); ++e) out[e] += s[e];
  }
  for (auto& v : out) v /= static_cast<double>(weight_sets.size());
  return EdgeWeights(std::move(out));
}

EdgeWeights merge_max(std::span<const EdgeWeights> weight_sets) {
  check_sets(weight_sets);
  std::vector<double> out(weight_sets.front().values().begin(), weight_sets.front().values().end());
  for (const auto& s : weight_sets) {
    for (std::size_t e = 0; e < out.size(); ++e) out[e] = std::max(out[e], s[e]);
  }
  return EdgeWeights(std::move(out));
}

EdgeWeights merge(MergeRule rule, std::span<const EdgeWeights> weight_sets) {
  return rule == MergeRule::Average ? merge_average(weight_sets) : merge_max(weight_sets);
}

int soft_vote(const std::vector<std::vector<double>>& probs) {
  check_matrix(probs);
  return argmax(column_means(probs));
}

int hard_vote(const std::vector<std::vector<double>>& probs) {
  check_matrix(probs);
  std::vector<int> votes(probs.front().size(), 0);
  for (const auto& row : probs) ++votes[static_cast<std::size_t>(argmax(row))];
  const int top = *std::max_element(votes.begin(), votes.end());
  const auto mean = column_means(probs);
  int best = -1;
  for (std::size_t c = 0; c < votes.size(); ++c) {
    if (votes[c] != top) continue;
    if (best < 0 || mean[c] > mean[static_cast<std::size_t>(best)]) best = static_cast<int>(c);
  }
  return best;
}

int vote(VoteRule rule, const std::vector<std::vector<double>>& probs) {
  return rule == VoteRule::Soft ? soft_vote(probs) : hard_vote(probs);
}

EnsPrediction ens_predict(const Graph& graph, std::span<const InvariantGNN> models, const AggregationConfig& cfg) {
  if (models.empty()) throw Error(ErrorKind::EmptyModelList, "ensemble needs at least one model");
  EnsPrediction out;
  std::vector<EdgeWeights> weights;
  weights.reserve(models.size());
  for (const auto& m : models) {
    weights.push_back(m.featurize(graph));
    out.per_model.push_back(top_selection(weights.back(), cfg.s_c));
  }
  out.merged_weights = merge(cfg.merge, weights);
  out.merged = top_selection(out.merged_weights, cfg.s_c);
  const EdgeWeights mask = graph.edge_count() == 0 ? EdgeWeights() : selection_to_hard_mask(out.merged, graph.edge_count());
  std::vector<std::vector<double>> probs;
  probs.reserve(models.size());
  for (const auto& m : models) probs.push_back(m.classify(graph, mask));
  out.mean_probs = column_means(probs);
  out.label = vote(cfg.vote, probs);
  return out;
}

ParamStore weight_average(std::span<const ParamStore> stores) {
  if (stores.empty()) throw Error(ErrorKind::EmptyModelList, "nothing to average");
  const std::string fp = stores.front().fingerprint();
  for (const auto& s : stores) {
    if (s.fingerprint() != fp) throw Error(ErrorKind::FingerprintMismatch, "stores differ in names or shapes");
  }
  ParamStore out = stores.front().zeros_like();
  for (std::size_t t = 0; t < out.size(); ++t) {
    for (const auto& s : stores) out[t].value += s[t].value;
    out[t].value /= static_cast<double>(stores.size());
  }
  out.round_to_float();
  return out;
}

InvariantGNN weight_average(std::span<const InvariantGNN> models) {
  if (models.empty()) throw Error(ErrorKind::EmptyModelList, "nothing to average");
  std::vector<ParamStore> stores;
  stores.reserve(models.size());
  for (const auto& m : models) {
    if (!(m.config() == models.front().config())) {
      throw Error(ErrorKind::FingerprintMismatch, "models differ in configuration");
    }
    stores.push_back(m.params());
  }
  return InvariantGNN(models.front().config(), weight_average(stores));
}

nlohmann::json to_json(const SelectionResult& r) {
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& s : r.trace) {
    trace.push_back({{"candidate", s.candidate},
                     {"individual", s.individual},
                     {"with_candidate", s.with_candidate},
                     {"admitted", s.admitted},
                     {"current", s.current}});
  }
  return {{"chosen", r.chosen}, {"metric", r.metric}, {"trace", trace}};
}

SelectionResult select_uniform(std::size_t num_models) {
  if (num_models == 0) throw Error(ErrorKind::EmptyModelList, "no checkpoints to select from");
  SelectionResult r;
  r.chosen.resize(num_models);
  std::iota(r.chosen.begin(), r.chosen.end(), 0);
  return r;
}

EnsEvaluator::EnsEvaluator(std::span<const InvariantGNN> models, const std::vector<Graph>& graphs,
                           AggregationConfig cfg)
    : models_(models), graphs_(&graphs), cfg_(cfg) {
  if (models.empty()) throw Error(ErrorKind::EmptyModelList, "ensemble needs at least one model");
  std::vector<const Graph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  weights_.resize(models.size());
  own_.resize(models.size());
  parallel_for(models.size(), [&](std::size_t i) {
    weights_[i] = models[i].featurize_many(ptrs);
    for (const auto& w : weights_[i]) own_[i].push_back(top_selection(w, cfg_.s_c));
  });
}

const SubgraphSelection& EnsEvaluator::own_selection(int model, std::size_t graph) const {
  return own_.at(static_cast<std::size_t>(model)).at(graph);
}

EnsEvaluator::Output EnsEvaluator::predict(std::span<const int> subset) const {
  if (subset.empty()) throw Error(ErrorKind::EmptyModelList, "empty model subset");
  for (int i : subset) {
    if (i < 0 || static_cast<std::size_t>(i) >= models_.size()) throw Error(ErrorKind::IndexOutOfRange, "model index");
  }
  const auto& graphs = *graphs_;
  Output out;
  out.merged.reserve(graphs.size());
  std::vector<EdgeWeights> masks;
  masks.reserve(graphs.size());
  std::vector<EdgeWeights> sets(subset.size());
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    for (std::size_t s = 0; s < subset.size(); ++s) sets[s] = weights_[static_cast<std::size_t>(subset[s])][g];
    out.merged.push_back(top_selection(merge(cfg_.merge, sets), cfg_.s_c));
    const std::size_t m = graphs[g].edge_count();
    masks.push_back(m == 0 ? EdgeWeights() : selection_to_hard_mask(out.merged.back(), m));
  }
  std::vector<const Graph*> ptrs;
  for (const auto& g : graphs) ptrs.push_back(&g);
  std::vector<std::vector<std::vector<double>>> probs(subset.size());  // [model][graph][class]
  parallel_for(subset.size(), [&](std::size_t s) {
    probs[s] = models_[static_cast<std::size_t>(subset[s])].classify_many(ptrs, masks);
  });
  std::vector<std::vector<double>> rows(subset.size());
  for (std::size_t g = 0; g < graphs.size(); ++g) {
    for (std::size_t s = 0; s < subset.size(); ++s) rows[s] = probs[s][g];
    out.mean_probs.push_back(column_means(rows));
    out.labels.push_back(vote(cfg_.vote, rows));
  }
  return out;
}

double EnsEvaluator::metric(std::span<const int> subset) const {
  const auto out = predict(subset);
  const auto labels = labels_of(*graphs_);
  if (cfg_.metric == Metric::RocAuc) return roc_auc(out.mean_probs, labels);
  if (labels.empty()) throw Error(ErrorKind::EmptyBatch, "accuracy of an empty split");
  std::size_t hit = 0;
  for (std::size_t g = 0; g < labels.size(); ++g) hit += out.labels[g] == labels[g] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(labels.size());
}

namespace {

std::vector<InvariantGNN> pick(std::span<const InvariantGNN> models, std::span<const int> subset) {
  std::vector<InvariantGNN> out;
  for (int i : subset) out.push_back(models[static_cast<std::size_t>(i)]);
  return out;
}

double wa_metric(std::span<const InvariantGNN> models, std::span<const int> subset, const std::vector<Graph>& split,
                 const AggregationConfig& cfg) {
  const auto chosen = pick(models, subset);
  return validate(weight_average(chosen), split, cfg.metric, cfg.s_c);
}

}  // namespace

double aggregate_metric(std::span<const InvariantGNN> models, std::span<const int> subset,
                        const std::vector<Graph>& split, const AggregationConfig& cfg) {
  if (cfg.mode == AggMode::Wa) return wa_metric(models, subset, split, cfg);
  return EnsEvaluator(models, split, cfg).metric(subset);
}

SelectionResult select_greedy(std::span<const InvariantGNN> models, const std::vector<Graph>& val,
                              const AggregationConfig& cfg) {
  if (models.empty()) throw Error(ErrorKind::EmptyModelList, "no checkpoints to select from");
  if (val.empty()) throw Error(ErrorKind::EmptyBatch, "validation split is empty");
  std::unique_ptr<EnsEvaluator> ens;
  if (cfg.mode == AggMode::Ens) ens = std::make_unique<EnsEvaluator>(models, val, cfg);
  auto eval = [&](const std::vector<int>& subset) {
    return ens ? ens->metric(subset) : wa_metric(models, subset, val, cfg);
  };

  std::vector<double> individual(models.size());
  for (std::size_t i = 0; i < models.size(); ++i) {
    individual[i] = ens ? ens->metric(std::vector<int>{static_cast<int>(i)})
                        : validate(models[i], val, cfg.metric, cfg.s_c);
  }
  std::vector<int> rank(models.size());
  std::iota(rank.begin(), rank.end(), 0);
  std::stable_sort(rank.begin(), rank.end(), [&](int a, int b) {
    return individual[static_cast<std::size_t>(a)] > individual[static_cast<std::size_t>(b)];
  });

  SelectionResult r;
  double current = -std::numeric_limits<double>::infinity();
  for (int cand : rank) {
    std::vector<int> trial = r.chosen;
    trial.push_back(cand);
    const double m = eval(trial);
    SelectionStep step{cand, individual[static_cast<std::size_t>(cand)], m, m >= current, current};
    if (step.admitted) {
      r.chosen = std::move(trial);
      current = m;
      step.current = m;
    }
    r.trace.push_back(step);
  }
  r.metric = current;
  return r;
}

SelectionResult select(std::span<const InvariantGNN> models, const std::vector<Graph>& val,
                       const AggregationConfig& cfg) {
  if (cfg.selection == SelectionRule::Greedy) return select_greedy(models, val, cfg);
  SelectionResult r = select_uniform(models.size());
  r.metric = aggregate_metric(models, r.chosen, val, cfg);
  return r;
}

}  // namespace sugar
