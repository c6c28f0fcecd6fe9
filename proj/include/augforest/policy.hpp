#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "augforest/transforms.hpp"

namespace augforest {

// Reference into a TransformRegistry: entry id plus an index into that
// entry's magnitude list. The identity entry has no magnitudes and uses
// level -1.
struct TransformRef {
  std::string transform_id;
  int magnitude_level = -1;

  bool is_identity() const { return transform_id == TransformRegistry::kIdentityId; }
  bool operator==(const TransformRef& o) const {
    return transform_id == o.transform_id && magnitude_level == o.magnitude_level;
  }
};

struct TreeNode {
  int index = 0;  // heap position: children of i are 2i and 2i+1
  TransformRef transform;
  double prob = 0.0;
};

/**
 * Heap-indexed probabilistic augmentation tree.
 *
 * Traversal semantics:
 *  - the root's transform is applied with prob p_1, otherwise nothing is
 *    applied; both outcomes continue to the root's children;
 *  - at a full sibling pair (2i, 2i+1) exactly one child is selected (left
 *    with prob p_2i, right with prob p_2i+1 = 1 - p_2i), its transform is
 *    applied, and traversal descends into the selected child's subtree;
 *  - a single present child c is applied with prob p_c, otherwise traversal
 *    terminates;
 *  - an identity node terminates traversal when reached.
 *
 * insert() enforces the structural invariants eagerly: root first, parent
 * present, prob in [0, 1], depth <= d_max, and sibling probs summing to 1
 * within 1e-12. Trees are treated as immutable once built.
 */
class AugTree {
 public:
  static constexpr double kSiblingSumTol = 1e-12;

  AugTree() = default;
  explicit AugTree(int d_max) : d_max_(d_max) {}

  void insert(int index, TransformRef transform, double prob);
  AugTree with_node(int index, TransformRef transform, double prob) const;
  void remove_subtree(int index);

  bool contains(int index) const { return nodes_.count(index) > 0; }
  const TreeNode* node(int index) const;
  const std::map<int, TreeNode>& nodes() const { return nodes_; }
  bool empty() const { return nodes_.empty(); }
  std::size_t size() const { return nodes_.size(); }

  // Depth of the deepest present node; 0 for the empty tree.
  int depth() const;
  int d_max() const { return d_max_; }
  void set_d_max(int d) { d_max_ = d; }

  // Depth of a heap index: 1 for the root, floor(log2(i)) + 1 in general.
  static int index_depth(int index);

  // Unchecked construction for loaders; pair with validate().
  static AugTree from_nodes(std::vector<TreeNode> nodes, int d_max);

 private:
  std::map<int, TreeNode> nodes_;
  int d_max_ = 8;
};

// nullopt when all invariants hold, otherwise the first violation.
std::optional<std::string> validate(const AugTree& tree);

/**
 * One realizable outcome of a traversal: the transforms applied in order and
 * the total probability of every decision path producing that sequence.
 * enumerate_paths lists all realizations with probability > 0; probabilities
 * sum to 1.
 */
struct PathRealization {
  std::vector<TransformRef> applied;
  double probability = 0.0;
};

std::vector<PathRealization> enumerate_paths(const AugTree& tree);

// Walks the tree once with seeded draws. The returned probability is the
// product of the branch/application probabilities realized along the walk.
PathRealization sample_path(const AugTree& tree, std::uint64_t seed);

/**
 * Samples a path with substream mix(seed, 0) and applies its transforms left
 * to right; the k-th applied transform draws from substream mix(seed, 1 + k).
 */
Sample apply_policy(const AugTree& tree, const Sample& sample, const TransformRegistry& registry,
                    std::uint64_t seed);

// Applies a fixed transform sequence (e.g. one enumerated realization) with
// the same per-step substream convention as apply_policy.
Sample apply_realization(const std::vector<TransformRef>& applied, const Sample& sample,
                         const TransformRegistry& registry, std::uint64_t seed);

// True when any node's transform is stochastic per the registry.
bool tree_has_stochastic_transform(const AugTree& tree, const TransformRegistry& registry);

// Removes sibling pairs whose transforms are both identity (with their
// subtrees), bottom-up; such branches never change a traversal's output.
AugTree pruned_of_identity_pairs(const AugTree& tree);

// ---------------------------------------------------------------------------
// Forest
// ---------------------------------------------------------------------------

/** Per-group trees plus a weight simplex over groups. */
struct Forest {
  std::vector<int> group_ids;
  std::vector<AugTree> trees;
  std::vector<double> weights;

  const AugTree* tree_for(int group_id) const;
};

std::optional<std::string> validate(const Forest& forest);

/**
 * Applies the tree of `group_id` to the sample. A group id absent from the
 * forest throws unless mixture_fallback is set, in which case a tree is
 * selected with probability w_g first.
 */
Sample sample_from_forest(const Forest& forest, int group_id, const Sample& sample,
                          const TransformRegistry& registry, std::uint64_t seed,
                          bool mixture_fallback = false);

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

nlohmann::json tree_to_json(const AugTree& tree);
AugTree tree_from_json(const nlohmann::json& j);  // throws on schema errors
void save_tree(const std::string& path, const AugTree& tree);
AugTree load_tree(const std::string& path);

nlohmann::json forest_to_json(const Forest& forest);
Forest forest_from_json(const nlohmann::json& j);
void save_forest(const std::string& path, const Forest& forest);
Forest load_forest(const std::string& path);

// Graphviz export: one node per TreeNode labeled "name(mag) p=<prob>",
// identity nodes double-circled, solid edges into full sibling pairs and
// dashed edges into single children. Names resolve through the registry when
// one is supplied.
std::string tree_to_dot(const AugTree& tree, const TransformRegistry* registry = nullptr);

}  // namespace augforest
