#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

namespace augforest {

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

/**
 * Undirected graph with per-node feature rows.
 *
 * Invariants: features.size() == node_count; every edge (u, v) satisfies
 * 0 <= u < v < node_count; edges are sorted and unique (canonical form).
 * All transforms below preserve canonical form and never mutate their input.
 */
struct Graph {
  int node_count = 0;
  std::vector<std::vector<double>> features;
  std::vector<std::pair<int, int>> edges;

  double avg_degree() const {
    return node_count == 0 ? 0.0 : 2.0 * static_cast<double>(edges.size()) / node_count;
  }
  double edge_density() const;
  bool has_edge(int u, int v) const;
};

// nullopt when valid, otherwise a description of the first violation.
std::optional<std::string> validate_graph(const Graph& g);

// Sorts, canonicalizes (u < v) and dedupes edges; rejects self-loops and
// out-of-range endpoints.
void canonicalize_edges(Graph& g);

using VectorSample = std::vector<double>;
using Sample = std::variant<VectorSample, Graph>;

enum class Domain { vector_data, graph_data };

inline Domain sample_domain(const Sample& s) {
  return std::holds_alternative<VectorSample>(s) ? Domain::vector_data : Domain::graph_data;
}

// ---------------------------------------------------------------------------
// Graph transforms
//
// Magnitudes are fractions of the graph that gets perturbed; counts round
// down (floor) except the walk target, which rounds up so the subgraph is
// never empty. Same (input, magnitude, seed) always yields the same output.
// ---------------------------------------------------------------------------

/**
 * Removes floor(m * node_count) uniformly sampled nodes and reindexes the
 * survivors stably (relative order preserved). Graphs with fewer than two
 * nodes are returned unchanged and flagged.
 */
Graph drop_nodes(const Graph& g, double magnitude, std::uint64_t seed, bool* flagged = nullptr);

/**
 * Deletes floor(m * edge_count) sampled edges and inserts the same number of
 * edges sampled from the complement of the ORIGINAL edge set (fewer when the
 * complement is exhausted, e.g. complete graphs). Node set unchanged; a
 * deleted edge is never re-inserted.
 */
Graph permute_edges(const Graph& g, double magnitude, std::uint64_t seed);

/**
 * Uniform random walk from a uniformly chosen start node until
 * ceil(m * node_count) distinct nodes are visited; a dead end restarts the
 * walk at the start node. Returns the induced subgraph on the visited set.
 * When the target is unreachable (disconnected graph) the walk returns the
 * start node's component and sets *flagged.
 */
Graph subgraph_random_walk(const Graph& g, double magnitude, std::uint64_t seed,
                           bool* flagged = nullptr);

/** Zeroes the feature rows of floor(m * node_count) sampled nodes. */
Graph mask_node_features(const Graph& g, double magnitude, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Vector transforms
// ---------------------------------------------------------------------------

// Rotates coordinates (0, 1) counterclockwise by angle_rad; needs dim >= 2.
VectorSample rotate2d(const VectorSample& x, double angle_rad);

// Adds iid N(0, stddev^2) noise to every coordinate.
VectorSample jitter_gaussian(const VectorSample& x, double stddev, std::uint64_t seed);

// Multiplies every coordinate by factor.
VectorSample scale_coords(const VectorSample& x, double factor);

// Adds offset to every coordinate.
VectorSample translate(const VectorSample& x, double offset);

// Negates coordinate 0; an involution.
VectorSample axis_flip(const VectorSample& x);

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

/**
 * One candidate transformation. Non-identity entries carry a strictly
 * increasing magnitude list; the default registries flatten each
 * (family, magnitude) pair into its own single-magnitude entry so the entry
 * count is the candidate count k. The identity entry has no magnitudes.
 */
struct Transformation {
  std::string id;      // unique key, e.g. "drop_nodes@0.3"
  std::string name;    // unique display name, e.g. "drop_nodes(0.3)"
  std::string family;  // e.g. "drop_nodes"
  Domain domain = Domain::vector_data;
  std::vector<double> magnitudes;
  bool stochastic = false;
  std::function<Sample(const Sample&, double magnitude, std::uint64_t seed)> apply;

  bool is_identity() const { return id == "identity"; }
};

class TransformRegistry {
 public:
  static constexpr const char* kIdentityId = "identity";

  // Validates unique id/name, strictly increasing magnitudes, non-null apply.
  const Transformation& add(Transformation t);

  const Transformation* find(const std::string& id) const;
  const Transformation& at(const std::string& id) const;  // throws on miss

  const std::vector<Transformation>& entries() const { return entries_; }
  std::size_t size() const { return entries_.size(); }

  // Position of an entry in registration order; used as the deterministic
  // transform ordering for tie-breaks.
  int order_of(const std::string& id) const;

 private:
  std::vector<Transformation> entries_;
};

Transformation make_identity(Domain domain);

// Builds a single-magnitude entry for one of the families above.
Transformation make_graph_transform(const std::string& family, double magnitude);
Transformation make_vector_transform(const std::string& family, double magnitude);

// identity + 4 graph families x magnitudes {0.1, 0.2, 0.3, 0.4, 0.5} = 21 entries.
TransformRegistry default_graph_registry();

// identity + rotate2d/scale_coords/translate x {0.1..0.5} + jitter_gaussian
// x {0.1, 0.2, 0.3} + axis_flip = 20 entries.
TransformRegistry default_vector_registry();

}  // namespace augforest
