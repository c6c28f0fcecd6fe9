#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "augforest/data.hpp"
#include "augforest/model.hpp"
#include "augforest/policy.hpp"
#include "augforest/transforms.hpp"

namespace augforest {

enum class FrontierOrder { fifo, random };

struct SearchConfig {
  int d_max = 2;
  // Probability grid scanned at unconstrained slots.
  std::vector<double> prob_grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  // Non-identity transform ids to consider; empty means every non-identity
  // registry entry.
  std::vector<std::string> candidates;
  FrontierOrder frontier = FrontierOrder::fifo;
  bool warm_start = true;
  double improvement_slack = 1e-9;
  TrainOptions train;
  EvalOptions eval;
  std::uint64_t seed = 0;
  int threads = 1;
};

struct NodeCandidate {
  TransformRef transform;
  double prob = 0.0;
  double l_val = 0.0;
};

struct NodeRecord {
  int index = 0;
  bool sibling_constrained = false;
  // Scanned candidates in evaluation order; the identity/base entry is first.
  std::vector<NodeCandidate> candidates;
  TransformRef chosen;
  double chosen_prob = 0.0;
  double base_l_val = 0.0;
  double chosen_l_val = 0.0;
  // Finite reference the improvement is measured against (the running L_val,
  // or this node's base value when nothing was accepted yet).
  double l_val_before = 0.0;
  bool accepted = false;
};

struct SearchCounters {
  int models_trained = 0;
  long long candidate_evals = 0;
};

struct SearchTrace {
  std::vector<NodeRecord> nodes;
  SearchCounters counters;
  double final_l_val = 0.0;
};

struct SearchResult {
  AugTree tree;
  SearchTrace trace;
};

// Validation objective of theta under the tree's augmentation distribution;
// exactly group_loss on the same inputs, plus a finiteness check on theta.
// Trains nothing.
double density_match_eval(const ModelSpec& spec, const Eigen::VectorXd& theta,
                          const AugTree& tree, const DatasetView& val,
                          const TransformRegistry& registry, const EncoderConfig* encoder,
                          const EvalOptions& options);

// Processes one frontier slot: trains one model on the current tree (theta is
// the warm start and receives the trained parameters), evaluates the base and
// every legal (transform, prob) candidate, and returns the record of the
// deterministic argmin. l_val_global is the running best (+inf initially).
NodeRecord build_one_node(int index, const AugTree& tree, const ModelSpec& spec,
                          const DatasetView& train, const DatasetView& val,
                          const TransformRegistry& registry, const EncoderConfig* encoder,
                          const SearchConfig& config, int node_order, double l_val_global,
                          Eigen::VectorXd& theta, SearchCounters& counters);

// Greedy top-down construction: pop a slot from the frontier, build one node,
// insert it, and on strict improvement push the slot's children (the depth
// cap permitting). Identity results never spawn children and never update the
// running best. All-identity sibling pairs are pruned from the final tree.
SearchResult search_tree(const ModelSpec& spec, const DatasetView& train, const DatasetView& val,
                         const TransformRegistry& registry, const EncoderConfig* encoder,
                         const SearchConfig& config);

// Per transform id: total validation-loss reduction over accepted nodes.
// Every non-identity transform that was scanned appears (0 when never
// accepted), so an identity-only tree reports all zeros.
std::map<std::string, double> importance_scores(const SearchTrace& trace);

// One row per evaluated candidate: node_index,transform,prob,l_val.
void export_trace_csv(const SearchTrace& trace, const std::filesystem::path& path);
void export_importance_csv(const std::map<std::string, double>& scores,
                           const std::filesystem::path& path);

}  // namespace augforest
