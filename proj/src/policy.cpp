#include "augforest/policy.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "augforest/rng.hpp"

namespace augforest {

// ---------------------------------------------------------------------------
// AugTree
// ---------------------------------------------------------------------------

int AugTree::index_depth(int index) {
  if (index < 1) throw std::invalid_argument("tree index must be >= 1");
  int depth = 0;
  while (index > 0) {
    index >>= 1;
    ++depth;
  }
  return depth;
}

void AugTree::insert(int index, TransformRef transform, double prob) {
  if (index < 1) throw std::invalid_argument("tree index must be >= 1");
  if (!(prob >= 0.0 && prob <= 1.0))
    throw std::invalid_argument("node prob must be in [0, 1], got " + std::to_string(prob));
  if (contains(index)) throw std::invalid_argument("index " + std::to_string(index) + " occupied");
  if (index > 1 && !contains(index / 2))
    throw std::invalid_argument("parent of index " + std::to_string(index) + " absent");
  if (index_depth(index) > d_max_)
    throw std::invalid_argument("index " + std::to_string(index) + " exceeds d_max " +
                                std::to_string(d_max_));
  // Sibling pair probs must sum to 1; checked here, not lazily.
  const int sibling = (index % 2 == 0) ? index + 1 : index - 1;
  if (sibling >= 2 && contains(sibling)) {
    const double sum = prob + nodes_.at(sibling).prob;
    if (std::abs(sum - 1.0) > kSiblingSumTol)
      throw std::invalid_argument("sibling probs at (" + std::to_string(sibling) + ", " +
                                  std::to_string(index) + ") sum to " + std::to_string(sum));
  }
  nodes_[index] = TreeNode{index, std::move(transform), prob};
}

AugTree AugTree::with_node(int index, TransformRef transform, double prob) const {
  AugTree copy = *this;
  copy.insert(index, std::move(transform), prob);
  return copy;
}

void AugTree::remove_subtree(int index) {
  if (!contains(index)) return;
  remove_subtree(2 * index);
  remove_subtree(2 * index + 1);
  nodes_.erase(index);
}

const TreeNode* AugTree::node(int index) const {
  auto it = nodes_.find(index);
  return it == nodes_.end() ? nullptr : &it->second;
}

int AugTree::depth() const {
  int d = 0;
  for (const auto& [index, _] : nodes_) d = std::max(d, index_depth(index));
  return d;
}

AugTree AugTree::from_nodes(std::vector<TreeNode> nodes, int d_max) {
  AugTree tree(d_max);
  for (auto& n : nodes) {
    const int index = n.index;
    tree.nodes_[index] = std::move(n);
  }
  return tree;
}

std::optional<std::string> validate(const AugTree& tree) {
  if (tree.empty()) return std::nullopt;
  if (!tree.contains(1)) return "nonempty tree without a root";
  for (const auto& [index, node] : tree.nodes()) {
    if (index < 1) return "invalid index " + std::to_string(index);
    if (node.index != index)
      return "node at " + std::to_string(index) + " carries index " + std::to_string(node.index);
    if (index > 1 && !tree.contains(index / 2))
      return "node " + std::to_string(index) + " has no parent";
    if (!(node.prob >= 0.0 && node.prob <= 1.0))
      return "node " + std::to_string(index) + " prob outside [0, 1]";
    if (node.transform.transform_id.empty())
      return "node " + std::to_string(index) + " has empty transform id";
    if (node.transform.is_identity() != (node.transform.magnitude_level < 0))
      return "node " + std::to_string(index) +
             " magnitude_level inconsistent with its transform (identity uses -1)";
    if (AugTree::index_depth(index) > tree.d_max())
      return "node " + std::to_string(index) + " deeper than d_max " +
             std::to_string(tree.d_max());
    if (index % 2 == 0 && tree.contains(index + 1)) {
      const double sum = node.prob + tree.node(index + 1)->prob;
      if (std::abs(sum - 1.0) > AugTree::kSiblingSumTol)
        return "sibling probs at (" + std::to_string(index) + ", " + std::to_string(index + 1) +
               ") sum to " + std::to_string(sum);
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Traversal
// ---------------------------------------------------------------------------

namespace {

struct PathCollector {
  std::vector<PathRealization> out;

  // Realizations with the same applied sequence are merged; zero-probability
  // branches are dropped.
  void emit(const std::vector<TransformRef>& seq, double prob) {
    if (prob <= 0.0) return;
    for (auto& r : out) {
      if (r.applied == seq) {
        r.probability += prob;
        return;
      }
    }
    out.push_back(PathRealization{seq, prob});
  }
};

void enumerate_children(const AugTree& tree, int parent, double prob,
                        std::vector<TransformRef>& seq, PathCollector& collect);

// A selected pair child's transform is applied unconditionally.
void enumerate_selected(const AugTree& tree, int child, double prob,
                        std::vector<TransformRef>& seq, PathCollector& collect) {
  const TreeNode& node = *tree.node(child);
  if (node.transform.is_identity()) {
    collect.emit(seq, prob);
    return;
  }
  seq.push_back(node.transform);
  enumerate_children(tree, child, prob, seq, collect);
  seq.pop_back();
}

void enumerate_single(const AugTree& tree, int child, double prob, std::vector<TransformRef>& seq,
                      PathCollector& collect) {
  const TreeNode& node = *tree.node(child);
  if (node.transform.is_identity()) {
    // Applied or not, an identity single child terminates: p + (1 - p).
    collect.emit(seq, prob);
    return;
  }
  seq.push_back(node.transform);
  enumerate_children(tree, child, prob * node.prob, seq, collect);
  seq.pop_back();
  collect.emit(seq, prob * (1.0 - node.prob));
}

void enumerate_children(const AugTree& tree, int parent, double prob,
                        std::vector<TransformRef>& seq, PathCollector& collect) {
  const int left = 2 * parent, right = 2 * parent + 1;
  const bool has_left = tree.contains(left), has_right = tree.contains(right);
  if (has_left && has_right) {
    enumerate_selected(tree, left, prob * tree.node(left)->prob, seq, collect);
    enumerate_selected(tree, right, prob * tree.node(right)->prob, seq, collect);
  } else if (has_left) {
    enumerate_single(tree, left, prob, seq, collect);
  } else if (has_right) {
    enumerate_single(tree, right, prob, seq, collect);
  } else {
    collect.emit(seq, prob);
  }
}

}  // namespace

std::vector<PathRealization> enumerate_paths(const AugTree& tree) {
  PathCollector collect;
  std::vector<TransformRef> seq;
  if (tree.empty()) {
    collect.emit(seq, 1.0);
    return collect.out;
  }
  const TreeNode& root = *tree.node(1);
  if (root.transform.is_identity()) {
    collect.emit(seq, root.prob);
    enumerate_children(tree, 1, 1.0 - root.prob, seq, collect);
  } else {
    seq.push_back(root.transform);
    enumerate_children(tree, 1, root.prob, seq, collect);
    seq.pop_back();
    enumerate_children(tree, 1, 1.0 - root.prob, seq, collect);
  }
  return collect.out;
}

PathRealization sample_path(const AugTree& tree, std::uint64_t seed) {
  PathRealization result;
  result.probability = 1.0;
  if (tree.empty()) return result;

  auto eng = make_engine(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto bernoulli = [&](double p) { return unit(eng) < p; };

  const TreeNode& root = *tree.node(1);
  int cursor = 1;  // node whose children are inspected next
  if (bernoulli(root.prob)) {
    result.probability *= root.prob;
    if (root.transform.is_identity()) return result;
    result.applied.push_back(root.transform);
  } else {
    result.probability *= 1.0 - root.prob;  // both root outcomes proceed to children
  }

  while (true) {
    const int left = 2 * cursor, right = 2 * cursor + 1;
    const bool has_left = tree.contains(left), has_right = tree.contains(right);
    if (!has_left && !has_right) return result;
    if (has_left && has_right) {
      const int chosen = bernoulli(tree.node(left)->prob) ? left : right;
      const TreeNode& node = *tree.node(chosen);
      result.probability *= node.prob;
      if (node.transform.is_identity()) return result;
      result.applied.push_back(node.transform);
      cursor = chosen;
      continue;
    }
    const int child = has_left ? left : right;
    const TreeNode& node = *tree.node(child);
    if (!bernoulli(node.prob)) {  // single child skipped: traversal ends
      result.probability *= 1.0 - node.prob;
      return result;
    }
    result.probability *= node.prob;
    if (node.transform.is_identity()) return result;
    result.applied.push_back(node.transform);
    cursor = child;
  }
}

Sample apply_policy(const AugTree& tree, const Sample& sample, const TransformRegistry& registry,
                    std::uint64_t seed) {
  const PathRealization path = sample_path(tree, mix(seed, 0));
  return apply_realization(path.applied, sample, registry, seed);
}

Sample apply_realization(const std::vector<TransformRef>& applied, const Sample& sample,
                         const TransformRegistry& registry, std::uint64_t seed) {
  Sample current = sample;
  for (std::size_t k = 0; k < applied.size(); ++k) {
    const TransformRef& ref = applied[k];
    const Transformation& entry = registry.at(ref.transform_id);
    if (ref.magnitude_level < 0 ||
        ref.magnitude_level >= static_cast<int>(entry.magnitudes.size()))
      throw std::out_of_range("magnitude_level " + std::to_string(ref.magnitude_level) +
                              " invalid for transform '" + ref.transform_id + "'");
    const double magnitude = entry.magnitudes[static_cast<std::size_t>(ref.magnitude_level)];
    current = entry.apply(current, magnitude, mix(seed, 1 + k));
  }
  return current;
}

bool tree_has_stochastic_transform(const AugTree& tree, const TransformRegistry& registry) {
  for (const auto& [index, node] : tree.nodes()) {
    if (node.transform.is_identity()) continue;
    if (registry.at(node.transform.transform_id).stochastic) return true;
  }
  return false;
}

AugTree pruned_of_identity_pairs(const AugTree& tree) {
  AugTree out = tree;
  // Descending order removes deeper pairs first.
  std::vector<int> even_indices;
  for (const auto& [index, _] : out.nodes())
    if (index % 2 == 0) even_indices.push_back(index);
  for (auto it = even_indices.rbegin(); it != even_indices.rend(); ++it) {
    const int left = *it, right = *it + 1;
    if (!out.contains(left) || !out.contains(right)) continue;
    if (out.node(left)->transform.is_identity() && out.node(right)->transform.is_identity()) {
      out.remove_subtree(left);
      out.remove_subtree(right);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forest
// ---------------------------------------------------------------------------

const AugTree* Forest::tree_for(int group_id) const {
  for (std::size_t i = 0; i < group_ids.size(); ++i)
    if (group_ids[i] == group_id) return &trees[i];
  return nullptr;
}

std::optional<std::string> validate(const Forest& forest) {
  if (forest.group_ids.empty()) return "forest has no groups";
  if (forest.trees.size() != forest.group_ids.size() ||
      forest.weights.size() != forest.group_ids.size())
    return "group_ids, trees and weights must have equal length";
  double sum = 0.0;
  for (double w : forest.weights) {
    if (!(w >= 0.0)) return "negative or non-finite weight";
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) return "weights sum to " + std::to_string(sum);
  for (std::size_t i = 0; i < forest.group_ids.size(); ++i) {
    for (std::size_t j = i + 1; j < forest.group_ids.size(); ++j)
      if (forest.group_ids[i] == forest.group_ids[j])
        return "duplicate group id " + std::to_string(forest.group_ids[i]);
    if (auto err = validate(forest.trees[i]))
      return "tree for group " + std::to_string(forest.group_ids[i]) + ": " + *err;
  }
  return std::nullopt;
}

Sample sample_from_forest(const Forest& forest, int group_id, const Sample& sample,
                          const TransformRegistry& registry, std::uint64_t seed,
                          bool mixture_fallback) {
  const AugTree* tree = forest.tree_for(group_id);
  if (tree != nullptr) return apply_policy(*tree, sample, registry, seed);
  if (!mixture_fallback)
    throw std::out_of_range("group " + std::to_string(group_id) + " not in forest");
  auto eng = make_engine(mix(seed, 0xF02E57));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double u = unit(eng);
  double cumulative = 0.0;
  std::size_t pick = forest.trees.size() - 1;
  for (std::size_t i = 0; i < forest.weights.size(); ++i) {
    cumulative += forest.weights[i];
    if (u < cumulative) {
      pick = i;
      break;
    }
  }
  return apply_policy(forest.trees[pick], sample, registry, mix(seed, 0xA11));
}

// ---------------------------------------------------------------------------
// Serialization
// ---------------------------------------------------------------------------

namespace {
constexpr int kFormatVersion = 1;
}

nlohmann::json tree_to_json(const AugTree& tree) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& [index, node] : tree.nodes()) {
    nodes.push_back({{"index", index},
                     {"transform_id", node.transform.transform_id},
                     {"magnitude_level", node.transform.magnitude_level},
                     {"prob", node.prob}});
  }
  return {{"version", kFormatVersion}, {"d_max", tree.d_max()}, {"nodes", std::move(nodes)}};
}

AugTree tree_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("version").get<int>();
    if (version != kFormatVersion)
      throw std::runtime_error("unsupported tree format version " + std::to_string(version));
    std::vector<TreeNode> nodes;
    for (const auto& n : j.at("nodes")) {
      TreeNode node;
      node.index = n.at("index").get<int>();
      node.transform.transform_id = n.at("transform_id").get<std::string>();
      node.transform.magnitude_level = n.at("magnitude_level").get<int>();
      node.prob = n.at("prob").get<double>();
      nodes.push_back(std::move(node));
    }
    return AugTree::from_nodes(std::move(nodes), j.at("d_max").get<int>());
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed tree file: ") + e.what());
  }
}

namespace {

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed JSON in '" + path + "': " + e.what());
  }
}

}  // namespace

void save_tree(const std::string& path, const AugTree& tree) {
  write_text_file(path, tree_to_json(tree).dump(2) + "\n");
}

AugTree load_tree(const std::string& path) { return tree_from_json(read_json_file(path)); }

nlohmann::json forest_to_json(const Forest& forest) {
  nlohmann::json trees = nlohmann::json::array();
  for (std::size_t i = 0; i < forest.group_ids.size(); ++i)
    trees.push_back({{"group_id", forest.group_ids[i]}, {"tree", tree_to_json(forest.trees[i])}});
  return {{"version", kFormatVersion}, {"weights", forest.weights}, {"trees", std::move(trees)}};
}

Forest forest_from_json(const nlohmann::json& j) {
  try {
    const int version = j.at("version").get<int>();
    if (version != kFormatVersion)
      throw std::runtime_error("unsupported forest format version " + std::to_string(version));
    Forest forest;
    forest.weights = j.at("weights").get<std::vector<double>>();
    for (const auto& entry : j.at("trees")) {
      forest.group_ids.push_back(entry.at("group_id").get<int>());
      forest.trees.push_back(tree_from_json(entry.at("tree")));
    }
    return forest;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed forest file: ") + e.what());
  }
}

void save_forest(const std::string& path, const Forest& forest) {
  write_text_file(path, forest_to_json(forest).dump(2) + "\n");
}

Forest load_forest(const std::string& path) { return forest_from_json(read_json_file(path)); }

namespace {

// "family@mag" renders as "family(mag)" when no registry is available.
std::string display_name(const TransformRef& ref, const TransformRegistry* registry) {
  if (registry != nullptr) {
    if (const Transformation* t = registry->find(ref.transform_id)) return t->name;
  }
  const auto at = ref.transform_id.find('@');
  if (at == std::string::npos) return ref.transform_id;
  return ref.transform_id.substr(0, at) + "(" + ref.transform_id.substr(at + 1) + ")";
}

std::string format_prob(double p) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", p);
  return buf;
}

}  // namespace

std::string tree_to_dot(const AugTree& tree, const TransformRegistry* registry) {
  std::ostringstream dot;
  dot << "digraph augtree {\n  rankdir=TB;\n";
  for (const auto& [index, node] : tree.nodes()) {
    dot << "  n" << index << " [label=\"" << display_name(node.transform, registry)
        << " p=" << format_prob(node.prob) << "\"";
    if (node.transform.is_identity()) dot << ", shape=doublecircle";
    dot << "];\n";
  }
  for (const auto& [index, node] : tree.nodes()) {
    if (index == 1) continue;
    const int sibling = (index % 2 == 0) ? index + 1 : index - 1;
    const char* style = tree.contains(sibling) ? "solid" : "dashed";
    dot << "  n" << index / 2 << " -> n" << index << " [style=" << style << "];\n";
  }
  dot << "}\n";
  return dot.str();
}

}  // namespace augforest
