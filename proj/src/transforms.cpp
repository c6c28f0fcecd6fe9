#include "augforest/transforms.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <queue>
#include <set>
#include <stdexcept>

#include "augforest/rng.hpp"

namespace augforest {

namespace {

// Samples `count` distinct values from [0, n) via partial Fisher-Yates.
std::vector<int> sample_distinct(int n, int count, std::mt19937_64& eng) {
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<int> pick(i, n - 1);
    std::swap(pool[i], pool[pick(eng)]);
  }
  pool.resize(count);
  return pool;
}

std::vector<std::vector<int>> adjacency(const Graph& g) {
  std::vector<std::vector<int>> adj(g.node_count);
  for (const auto& [u, v] : g.edges) {
    adj[u].push_back(v);
    adj[v].push_back(u);
  }
  return adj;
}

Graph induced_subgraph(const Graph& g, const std::vector<int>& kept_sorted) {
  Graph out;
  out.node_count = static_cast<int>(kept_sorted.size());
  out.features.reserve(kept_sorted.size());
  std::vector<int> remap(g.node_count, -1);
  for (int i = 0; i < out.node_count; ++i) {
    remap[kept_sorted[i]] = i;
    out.features.push_back(g.features[kept_sorted[i]]);
  }
  for (const auto& [u, v] : g.edges) {
    if (remap[u] >= 0 && remap[v] >= 0) out.edges.emplace_back(remap[u], remap[v]);
  }
  canonicalize_edges(out);
  return out;
}

void check_magnitude(double m) {
  if (!(m > 0.0) || m > 1.0) throw std::invalid_argument("magnitude must be in (0, 1]");
}

}  // namespace

double Graph::edge_density() const {
  if (node_count < 2) return 0.0;
  const double pairs = 0.5 * node_count * (node_count - 1);
  return static_cast<double>(edges.size()) / pairs;
}

bool Graph::has_edge(int u, int v) const {
  if (u > v) std::swap(u, v);
  return std::binary_search(edges.begin(), edges.end(), std::make_pair(u, v));
}

std::optional<std::string> validate_graph(const Graph& g) {
  if (g.node_count < 0) return "negative node_count";
  if (static_cast<int>(g.features.size()) != g.node_count)
    return "feature row count " + std::to_string(g.features.size()) + " != node_count " +
           std::to_string(g.node_count);
  std::pair<int, int> prev{-1, -1};
  for (const auto& e : g.edges) {
    if (e.first < 0 || e.second >= g.node_count)
      return "edge endpoint out of range: (" + std::to_string(e.first) + ", " +
             std::to_string(e.second) + ")";
    if (e.first >= e.second)
      return "edge not canonical (need u < v): (" + std::to_string(e.first) + ", " +
             std::to_string(e.second) + ")";
    if (!(prev < e)) return "edges not sorted/unique";
    prev = e;
  }
  return std::nullopt;
}

void canonicalize_edges(Graph& g) {
  for (auto& e : g.edges) {
    if (e.first == e.second) throw std::invalid_argument("self-loop rejected");
    if (e.first > e.second) std::swap(e.first, e.second);
    if (e.first < 0 || e.second >= g.node_count)
      throw std::invalid_argument("edge endpoint out of range");
  }
  std::sort(g.edges.begin(), g.edges.end());
  g.edges.erase(std::unique(g.edges.begin(), g.edges.end()), g.edges.end());
}

// ---------------------------------------------------------------------------
// Graph transforms
// ---------------------------------------------------------------------------

Graph drop_nodes(const Graph& g, double magnitude, std::uint64_t seed, bool* flagged) {
  check_magnitude(magnitude);
  if (flagged) *flagged = false;
  if (g.node_count < 2) {
    if (flagged) *flagged = true;
    return g;
  }
  const int count = static_cast<int>(std::floor(magnitude * g.node_count));
  if (count == 0) return g;
  auto eng = make_engine(seed);
  std::vector<int> dropped = sample_distinct(g.node_count, count, eng);
  std::vector<char> is_dropped(g.node_count, 0);
  for (int v : dropped) is_dropped[v] = 1;
  std::vector<int> kept;
  kept.reserve(g.node_count - count);
  for (int v = 0; v < g.node_count; ++v)
    if (!is_dropped[v]) kept.push_back(v);
  return induced_subgraph(g, kept);
}

Graph permute_edges(const Graph& g, double magnitude, std::uint64_t seed) {
  check_magnitude(magnitude);
  const int e = static_cast<int>(g.edges.size());
  const int count = static_cast<int>(std::floor(magnitude * e));
  if (count == 0) return g;
  auto eng = make_engine(seed);

  std::vector<int> delete_idx = sample_distinct(e, count, eng);
  std::vector<char> deleted(e, 0);
  for (int i : delete_idx) deleted[i] = 1;

  // Insertions come from the complement of the original edge set, so a
  // deleted edge can never come back.
  std::vector<std::pair<int, int>> complement;
  for (int u = 0; u < g.node_count; ++u)
    for (int v = u + 1; v < g.node_count; ++v)
      if (!g.has_edge(u, v)) complement.emplace_back(u, v);
  const int add_count = std::min<int>(count, static_cast<int>(complement.size()));
  std::vector<int> add_idx = sample_distinct(static_cast<int>(complement.size()), add_count, eng);

  Graph out;
  out.node_count = g.node_count;
  out.features = g.features;
  for (int i = 0; i < e; ++i)
    if (!deleted[i]) out.edges.push_back(g.edges[i]);
  for (int i : add_idx) out.edges.push_back(complement[i]);
  canonicalize_edges(out);
  return out;
}

Graph subgraph_random_walk(const Graph& g, double magnitude, std::uint64_t seed, bool* flagged) {
  check_magnitude(magnitude);
  if (flagged) *flagged = false;
  if (g.node_count == 0) return g;
  const int target = static_cast<int>(std::ceil(magnitude * g.node_count));
  auto eng = make_engine(seed);
  std::uniform_int_distribution<int> pick_start(0, g.node_count - 1);
  const int start = pick_start(eng);

  const auto adj = adjacency(g);
  // The reachable component bounds the walk so an unreachable target
  // terminates instead of spinning.
  std::vector<char> reachable(g.node_count, 0);
  std::queue<int> bfs;
  bfs.push(start);
  reachable[start] = 1;
  int component_size = 0;
  while (!bfs.empty()) {
    const int u = bfs.front();
    bfs.pop();
    ++component_size;
    for (int v : adj[u])
      if (!reachable[v]) {
        reachable[v] = 1;
        bfs.push(v);
      }
  }
  const int effective_target = std::min(target, component_size);
  if (flagged && component_size < target) *flagged = true;

  std::vector<char> visited(g.node_count, 0);
  visited[start] = 1;
  int visited_count = 1;
  int cur = start;
  while (visited_count < effective_target) {
    if (adj[cur].empty()) {  // dead end: restart at the start node
      cur = start;
      continue;
    }
    std::uniform_int_distribution<int> step(0, static_cast<int>(adj[cur].size()) - 1);
    cur = adj[cur][step(eng)];
    if (!visited[cur]) {
      visited[cur] = 1;
      ++visited_count;
    }
  }
  std::vector<int> kept;
  kept.reserve(visited_count);
  for (int v = 0; v < g.node_count; ++v)
    if (visited[v]) kept.push_back(v);
  return induced_subgraph(g, kept);
}

Graph mask_node_features(const Graph& g, double magnitude, std::uint64_t seed) {
  check_magnitude(magnitude);
  const int count = static_cast<int>(std::floor(magnitude * g.node_count));
  if (count == 0) return g;
  auto eng = make_engine(seed);
  Graph out = g;
  for (int v : sample_distinct(g.node_count, count, eng))
    std::fill(out.features[v].begin(), out.features[v].end(), 0.0);
  return out;
}

// ---------------------------------------------------------------------------
// Vector transforms
// ---------------------------------------------------------------------------

VectorSample rotate2d(const VectorSample& x, double angle_rad) {
  if (x.size() < 2) throw std::invalid_argument("rotate2d needs at least 2 coordinates");
  VectorSample out = x;
  const double c = std::cos(angle_rad), s = std::sin(angle_rad);
  out[0] = c * x[0] - s * x[1];
  out[1] = s * x[0] + c * x[1];
  return out;
}

VectorSample jitter_gaussian(const VectorSample& x, double stddev, std::uint64_t seed) {
  auto eng = make_engine(seed);
  std::normal_distribution<double> noise(0.0, stddev);
  VectorSample out = x;
  for (double& v : out) v += noise(eng);
  return out;
}

VectorSample scale_coords(const VectorSample& x, double factor) {
  VectorSample out = x;
  for (double& v : out) v *= factor;
  return out;
}

VectorSample translate(const VectorSample& x, double offset) {
  VectorSample out = x;
  for (double& v : out) v += offset;
  return out;
}

VectorSample axis_flip(const VectorSample& x) {
  if (x.empty()) throw std::invalid_argument("axis_flip needs at least 1 coordinate");
  VectorSample out = x;
  out[0] = -out[0];
  return out;
}

// ---------------------------------------------------------------------------
// Registry
// ---------------------------------------------------------------------------

const Transformation& TransformRegistry::add(Transformation t) {
  if (t.id.empty()) throw std::invalid_argument("transformation id empty");
  if (!t.apply) throw std::invalid_argument("transformation '" + t.id + "' has no apply");
  for (std::size_t i = 1; i < t.magnitudes.size(); ++i)
    if (!(t.magnitudes[i - 1] < t.magnitudes[i]))
      throw std::invalid_argument("magnitudes not strictly increasing for '" + t.id + "'");
  for (const auto& existing : entries_) {
    if (existing.id == t.id) throw std::invalid_argument("duplicate transform id '" + t.id + "'");
    if (existing.name == t.name)
      throw std::invalid_argument("duplicate transform name '" + t.name + "'");
  }
  entries_.push_back(std::move(t));
  return entries_.back();
}

const Transformation* TransformRegistry::find(const std::string& id) const {
  for (const auto& t : entries_)
    if (t.id == id) return &t;
  return nullptr;
}

const Transformation& TransformRegistry::at(const std::string& id) const {
  const Transformation* t = find(id);
  if (t == nullptr) throw std::out_of_range("unknown transform id '" + id + "'");
  return *t;
}

int TransformRegistry::order_of(const std::string& id) const {
  for (std::size_t i = 0; i < entries_.size(); ++i)
    if (entries_[i].id == id) return static_cast<int>(i);
  throw std::out_of_range("unknown transform id '" + id + "'");
}

namespace {

std::string format_magnitude(double m) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%g", m);
  return buf;
}

const VectorSample& as_vector(const Sample& s, const std::string& id) {
  if (!std::holds_alternative<VectorSample>(s))
    throw std::invalid_argument("transform '" + id + "' expects vector samples");
  return std::get<VectorSample>(s);
}

const Graph& as_graph(const Sample& s, const std::string& id) {
  if (!std::holds_alternative<Graph>(s))
    throw std::invalid_argument("transform '" + id + "' expects graph samples");
  return std::get<Graph>(s);
}

}  // namespace

Transformation make_identity(Domain domain) {
  Transformation t;
  t.id = TransformRegistry::kIdentityId;
  t.name = "identity";
  t.family = "identity";
  t.domain = domain;
  t.stochastic = false;
  t.apply = [](const Sample& s, double, std::uint64_t) { return s; };
  return t;
}

Transformation make_graph_transform(const std::string& family, double magnitude) {
  check_magnitude(magnitude);
  Transformation t;
  t.id = family + "@" + format_magnitude(magnitude);
  t.name = family + "(" + format_magnitude(magnitude) + ")";
  t.family = family;
  t.domain = Domain::graph_data;
  t.magnitudes = {magnitude};
  t.stochastic = true;
  const std::string id = t.id;
  if (family == "drop_nodes") {
    t.apply = [id](const Sample& s, double m, std::uint64_t seed) -> Sample {
      return drop_nodes(as_graph(s, id), m, seed);
    };
  } else if (family == "permute_edges") {
    t.apply = [id](const Sample& s, double m, std::uint64_t seed) -> Sample {
      return permute_edges(as_graph(s, id), m, seed);
    };
  } else if (family == "subgraph_random_walk") {
    t.apply = [id](const Sample& s, double m, std::uint64_t seed) -> Sample {
      return subgraph_random_walk(as_graph(s, id), m, seed);
    };
  } else if (family == "mask_node_features") {
    t.apply = [id](const Sample& s, double m, std::uint64_t seed) -> Sample {
      return mask_node_features(as_graph(s, id), m, seed);
    };
  } else {
    throw std::invalid_argument("unknown graph transform family '" + family + "'");
  }
  return t;
}

Transformation make_vector_transform(const std::string& family, double magnitude) {
  check_magnitude(magnitude);
  Transformation t;
  t.id = family + "@" + format_magnitude(magnitude);
  t.name = family + "(" + format_magnitude(magnitude) + ")";
  t.family = family;
  t.domain = Domain::vector_data;
  t.magnitudes = {magnitude};
  t.stochastic = false;
  const std::string id = t.id;
  if (family == "rotate2d") {
    // magnitude 1 is a half turn
    t.apply = [id](const Sample& s, double m, std::uint64_t) -> Sample {
      return rotate2d(as_vector(s, id), m * 3.14159265358979323846);
    };
  } else if (family == "jitter_gaussian") {
    t.stochastic = true;
    t.apply = [id](const Sample& s, double m, std::uint64_t seed) -> Sample {
      return jitter_gaussian(as_vector(s, id), m, seed);
    };
  } else if (family == "scale_coords") {
    t.apply = [id](const Sample& s, double m, std::uint64_t) -> Sample {
      return scale_coords(as_vector(s, id), 1.0 + m);
    };
  } else if (family == "translate") {
    t.apply = [id](const Sample& s, double m, std::uint64_t) -> Sample {
      return translate(as_vector(s, id), m);
    };
  } else if (family == "axis_flip") {
    t.apply = [id](const Sample& s, double, std::uint64_t) -> Sample {
      return axis_flip(as_vector(s, id));
    };
  } else {
    throw std::invalid_argument("unknown vector transform family '" + family + "'");
  }
  return t;
}

TransformRegistry default_graph_registry() {
  TransformRegistry reg;
  reg.add(make_identity(Domain::graph_data));
  for (const char* family :
       {"drop_nodes", "permute_edges", "subgraph_random_walk", "mask_node_features"})
    for (double m : {0.1, 0.2, 0.3, 0.4, 0.5}) reg.add(make_graph_transform(family, m));
  return reg;
}

TransformRegistry default_vector_registry() {
  TransformRegistry reg;
  reg.add(make_identity(Domain::vector_data));
  for (const char* family : {"rotate2d", "scale_coords", "translate"})
    for (double m : {0.1, 0.2, 0.3, 0.4, 0.5}) reg.add(make_vector_transform(family, m));
  for (double m : {0.1, 0.2, 0.3}) reg.add(make_vector_transform("jitter_gaussian", m));
  reg.add(make_vector_transform("axis_flip", 1.0));
  return reg;
}

}  // namespace augforest
