#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "augforest/transforms.hpp"

namespace augforest {

enum class Split { train, val, test };

const char* split_name(Split s);
std::optional<Split> split_from_name(const std::string& name);

/**
 * Sample container shared by vector and graph tasks.
 *
 * Parallel arrays: samples, labels, group_ids and splits all have one entry
 * per example. Labels are class indices; multilabel tasks additionally fill
 * `multilabels` (one bit row per example) and ignore `labels`. Group ids
 * start at 1.
 */
struct Dataset {
  Domain domain = Domain::vector_data;
  std::vector<Sample> samples;
  std::vector<int> labels;
  std::vector<std::vector<std::uint8_t>> multilabels;
  std::vector<int> group_ids;
  std::vector<Split> splits;
  int num_classes = 0;

  std::size_t size() const { return samples.size(); }
  bool multilabel() const { return !multilabels.empty(); }
};

std::optional<std::string> validate_dataset(const Dataset& ds);

// Sorted unique group ids present in the dataset.
std::vector<int> group_list(const Dataset& ds);

/** Index view into one dataset; all ops below are non-owning. */
struct DatasetView {
  const Dataset* data = nullptr;
  std::vector<int> indices;

  std::size_t size() const { return indices.size(); }
  bool empty() const { return indices.empty(); }
};

DatasetView view_of(const Dataset& ds, Split split);
DatasetView view_of(const Dataset& ds, Split split, int group_id);

// Deterministic subsample without replacement; returns the view itself when
// max_count >= size. Used by the --search-subset knob.
DatasetView subsample_view(const DatasetView& view, int max_count, std::uint64_t seed);

struct GroupStats {
  int group_id = 0;
  int train_count = 0;
  int val_count = 0;
  double q = 0.0;  // train-proportion weight; sums to 1 over groups
};

std::vector<GroupStats> compute_group_stats(const Dataset& ds);

// 75/25 per group, stratified by label; deterministic per seed.
void assign_splits(Dataset& ds, double train_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Group partitioning for graph datasets
// ---------------------------------------------------------------------------

struct PartitionResult {
  std::vector<int> group_ids;  // one per sample, 1-based flattened bin index
  int size_bins = 0;           // effective bin counts after merging ties
  int degree_bins = 0;
  bool merged = false;  // true when duplicate quantile edges collapsed bins
};

/**
 * Bins graphs by (node-count quantile) x (average-degree quantile) and
 * returns the flattened bin id per sample. Quantile edges with duplicate
 * values are merged (fewer effective bins) and reported via `merged`.
 */
PartitionResult partition_by_intervals(const Dataset& ds, int size_bins, int degree_bins);

// ---------------------------------------------------------------------------
// Synthetic generators
// ---------------------------------------------------------------------------

/**
 * Per-group geometry of the 2-D two-class Gaussian generator. The class-mean
 * axis sits at boundary_deg; val samples are additionally rotated (ccw),
 * scaled and translated, so the transform undoing that shift is the group's
 * optimal augmentation by construction. All-default shifts make train and
 * val identically distributed.
 */
struct GroupShift {
  double boundary_deg = 0.0;
  double val_rotate_deg = 0.0;
  double val_scale = 1.0;
  double val_translate = 0.0;
};

struct GaussianGroupsSpec {
  int groups = 2;
  int n_per_group = 200;
  std::vector<GroupShift> shifts;  // empty => all defaults; else one per group
  double mean_dist = 1.0;
  double noise_std = 0.35;
  double train_fraction = 0.75;
};

Dataset synth_gaussian_groups(const GaussianGroupsSpec& spec, std::uint64_t seed);

enum class GraphLabelRule { by_avg_degree, by_density };

struct RandomGraphsSpec {
  int count = 200;
  int min_nodes = 16;
  int max_nodes = 600;
  double min_edge_prob = 0.02;
  double max_edge_prob = 0.3;
  GraphLabelRule label_rule = GraphLabelRule::by_avg_degree;
  double label_threshold = 8.0;
  double train_fraction = 0.75;
};

/**
 * Erdos-Renyi graphs with sizes and edge probabilities spanning the given
 * ranges. Labels come from structural statistics (average degree or density
 * vs threshold) so structure-destroying transforms damage label fidelity.
 * Node features are [1, degree/(n-1)].
 */
Dataset synth_random_graphs(const RandomGraphsSpec& spec, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/**
 * Vector datasets round-trip through CSV with header
 * feat_0,...,feat_{d-1},label,group,split. Loading rejects malformed rows
 * with line/field diagnostics (wrong arity, non-numeric or NaN features,
 * unknown split names, missing required columns).
 */
void save_csv(const Dataset& ds, const std::string& path);
Dataset load_csv(const std::string& path);

/**
 * Graph datasets persist as one JSON file per graph
 * ({"nodes": n, "features": [...], "edges": [[u,v],...]}) plus a manifest
 * listing {path, label, group, split} per sample; multilabel rows store the
 * label as a bit array.
 */
void save_graph_dataset(const Dataset& ds, const std::string& dir);
Dataset load_graph_dataset(const std::string& manifest_path);

nlohmann::json graph_to_json(const Graph& g);
Graph graph_from_json(const nlohmann::json& j);

}  // namespace augforest
