#include "augforest/search.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "augforest/parallel.hpp"
#include "augforest/rng.hpp"

namespace augforest {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void validate_config(const SearchConfig& config) {
  if (config.d_max < 1) throw std::invalid_argument("d_max must be >= 1");
  if (config.prob_grid.empty()) throw std::invalid_argument("probability grid is empty");
  for (double p : config.prob_grid)
    if (!(p >= 0.0 && p <= 1.0))
      throw std::invalid_argument("probability grid values must lie in [0, 1]");
  if (!(config.improvement_slack >= 0.0))
    throw std::invalid_argument("improvement slack must be non-negative");
  if (config.threads < 1) throw std::invalid_argument("threads must be >= 1");
}

std::vector<const Transformation*> resolve_candidates(const TransformRegistry& registry,
                                                      const SearchConfig& config) {
  std::vector<const Transformation*> out;
  if (config.candidates.empty()) {
    for (const Transformation& entry : registry.entries())
      if (!entry.is_identity()) out.push_back(&entry);
  } else {
    for (const std::string& id : config.candidates) {
      const Transformation& entry = registry.at(id);
      if (!entry.is_identity()) out.push_back(&entry);
    }
  }
  if (out.empty()) throw std::invalid_argument("no non-identity candidate transforms");
  return out;
}

// Deterministic preference among equal losses: identity last, then lower
// transform id, then lower probability.
bool candidate_better(const NodeCandidate& a, const NodeCandidate& b) {
  if (a.l_val != b.l_val) return a.l_val < b.l_val;
  if (a.transform.is_identity() != b.transform.is_identity())
    return !a.transform.is_identity();
  if (a.transform.transform_id != b.transform.transform_id)
    return a.transform.transform_id < b.transform.transform_id;
  return a.prob < b.prob;
}

void check_legal_index(int index, const AugTree& tree, int d_max) {
  if (index < 1) throw std::invalid_argument("node index must be >= 1");
  if (tree.contains(index))
    throw std::invalid_argument("slot " + std::to_string(index) + " is already occupied");
  if (AugTree::index_depth(index) > d_max)
    throw std::invalid_argument("slot " + std::to_string(index) + " exceeds the depth cap");
  if (index > 1 && !tree.contains(index / 2))
    throw std::invalid_argument("slot " + std::to_string(index) + " has no parent in the tree");
}

}  // namespace

double density_match_eval(const ModelSpec& spec, const Eigen::VectorXd& theta,
                          const AugTree& tree, const DatasetView& val,
                          const TransformRegistry& registry, const EncoderConfig* encoder,
                          const EvalOptions& options) {
  if (!theta.allFinite()) throw std::invalid_argument("theta must be finite");
  return group_loss(spec, theta, val, &tree, registry, encoder, options);
}

NodeRecord build_one_node(int index, const AugTree& tree, const ModelSpec& spec,
                          const DatasetView& train, const DatasetView& val,
                          const TransformRegistry& registry, const EncoderConfig* encoder,
                          const SearchConfig& config, int node_order, double l_val_global,
                          Eigen::VectorXd& theta, SearchCounters& counters) {
  validate_config(config);
  check_legal_index(index, tree, config.d_max);
  const std::vector<const Transformation*> candidates = resolve_candidates(registry, config);

  TrainOptions train_options = config.train;
  train_options.seed = mix(config.seed, 0x7411, static_cast<std::uint64_t>(node_order));
  theta = train_sgd(spec, std::move(theta), {{train, &tree, 1.0}}, registry, encoder,
                    train_options);
  counters.models_trained += 1;

  EvalOptions eval = config.eval;
  eval.seed = mix(config.seed, 0xE7A1);
  eval.threads = 1;  // parallelism lives at the candidate level

  NodeRecord record;
  record.index = index;
  const int sibling = index > 1 ? (index % 2 == 0 ? index + 1 : index - 1) : 0;
  record.sibling_constrained = sibling != 0 && tree.contains(sibling);
  const double forced =
      record.sibling_constrained ? 1.0 - tree.node(sibling)->prob : 0.0;

  // Inserting identity leaves the augmentation distribution unchanged, so its
  // value is the current tree's evaluation; it costs no candidate evaluation.
  record.base_l_val = density_match_eval(spec, theta, tree, val, registry, encoder, eval);
  const TransformRef identity_ref{TransformRegistry::kIdentityId, -1};
  record.candidates.push_back({identity_ref, record.sibling_constrained ? forced : 0.0,
                               record.base_l_val});

  // A forced probability of 0 makes every candidate coincide with the base
  // distribution, so identity wins without a scan.
  const bool degenerate = record.sibling_constrained && forced == 0.0;
  if (!degenerate) {
    std::vector<NodeCandidate> scanned;
    for (const Transformation* entry : candidates) {
      const TransformRef ref{entry->id, 0};
      if (record.sibling_constrained) {
        scanned.push_back({ref, forced, 0.0});
      } else {
        for (double p : config.prob_grid) {
          // p = 0 is distribution-identical to the base; scanning it could
          // only displace identity through a meaningless tie.
          if (p == 0.0) continue;
          scanned.push_back({ref, p, 0.0});
        }
      }
    }
    parallel_for(scanned.size(), config.threads, [&](std::size_t c) {
      const AugTree candidate_tree =
          tree.with_node(index, scanned[c].transform, scanned[c].prob);
      scanned[c].l_val =
          density_match_eval(spec, theta, candidate_tree, val, registry, encoder, eval);
    });
    counters.candidate_evals += static_cast<long long>(scanned.size());
    record.candidates.insert(record.candidates.end(), scanned.begin(), scanned.end());
  }

  const NodeCandidate* best = &record.candidates.front();
  for (const NodeCandidate& candidate : record.candidates)
    if (candidate_better(candidate, *best)) best = &candidate;

  record.chosen = best->transform;
  record.chosen_prob = best->prob;
  record.chosen_l_val = best->l_val;
  record.l_val_before = std::isfinite(l_val_global) ? l_val_global : record.base_l_val;
  record.accepted = !record.chosen.is_identity() &&
                    record.chosen_l_val < l_val_global - config.improvement_slack;
  return record;
}

SearchResult search_tree(const ModelSpec& spec, const DatasetView& train, const DatasetView& val,
                         const TransformRegistry& registry, const EncoderConfig* encoder,
                         const SearchConfig& config) {
  validate_config(config);
  validate_spec(spec);
  if (train.indices.empty() || val.indices.empty())
    throw std::invalid_argument("search needs non-empty train and val views");

  SearchResult result;
  result.tree.set_d_max(config.d_max);
  result.trace.final_l_val = kInf;

  std::deque<int> frontier{1};
  auto frontier_rng = make_engine(mix(config.seed, 0xF407));
  Eigen::VectorXd theta = init_params(spec, mix(config.seed, 0x1D17));
  double l_val = kInf;
  int node_order = 0;

  while (!frontier.empty()) {
    std::size_t pick = 0;
    if (config.frontier == FrontierOrder::random && frontier.size() > 1) {
      std::uniform_int_distribution<std::size_t> dist(0, frontier.size() - 1);
      pick = dist(frontier_rng);
    }
    const int index = frontier[pick];
    frontier.erase(frontier.begin() + static_cast<std::ptrdiff_t>(pick));

    if (!config.warm_start)
      theta = init_params(spec, mix(config.seed, 0x1D17, static_cast<std::uint64_t>(node_order)));
    NodeRecord record =
        build_one_node(index, result.tree, spec, train, val, registry, encoder, config,
                       node_order, l_val, theta, result.trace.counters);
    ++node_order;

    result.tree.insert(index, record.chosen, record.chosen_prob);
    if (record.accepted) {
      l_val = record.chosen_l_val;
      if (AugTree::index_depth(index) + 1 <= config.d_max) {
        frontier.push_back(2 * index);
        frontier.push_back(2 * index + 1);
      }
    }
    result.trace.nodes.push_back(std::move(record));
  }

  result.tree = pruned_of_identity_pairs(result.tree);
  result.trace.final_l_val =
      std::isfinite(l_val) ? l_val
                           : (result.trace.nodes.empty() ? kInf
                                                         : result.trace.nodes.front().base_l_val);
  return result;
}

std::map<std::string, double> importance_scores(const SearchTrace& trace) {
  std::map<std::string, double> scores;
  for (const NodeRecord& record : trace.nodes)
    for (const NodeCandidate& candidate : record.candidates)
      if (!candidate.transform.is_identity()) scores[candidate.transform.transform_id];
  for (const NodeRecord& record : trace.nodes) {
    if (!record.accepted) continue;
    scores[record.chosen.transform_id] +=
        std::max(0.0, record.l_val_before - record.chosen_l_val);
  }
  return scores;
}

void export_trace_csv(const SearchTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "node_index,transform,prob,l_val\n";
  char buffer[64];
  for (const NodeRecord& record : trace.nodes) {
    for (const NodeCandidate& candidate : record.candidates) {
      out << record.index << ',' << candidate.transform.transform_id << ',';
      std::snprintf(buffer, sizeof buffer, "%.17g", candidate.prob);
      out << buffer << ',';
      std::snprintf(buffer, sizeof buffer, "%.17g", candidate.l_val);
      out << buffer << '\n';
    }
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

void export_importance_csv(const std::map<std::string, double>& scores,
                           const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "transform,score\n";
  char buffer[64];
  for (const auto& [id, score] : scores) {
    std::snprintf(buffer, sizeof buffer, "%.17g", score);
    out << id << ',' << buffer << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace augforest
