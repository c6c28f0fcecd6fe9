#include "augforest/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "augforest/rng.hpp"

namespace augforest {

const char* split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

std::optional<Split> split_from_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  return std::nullopt;
}

std::optional<std::string> validate_dataset(const Dataset& ds) {
  const std::size_t n = ds.samples.size();
  if (ds.group_ids.size() != n || ds.splits.size() != n)
    return "samples, group_ids and splits must have equal length";
  if (ds.multilabel()) {
    if (ds.multilabels.size() != n) return "multilabels length mismatch";
    for (std::size_t i = 1; i < n; ++i)
      if (ds.multilabels[i].size() != ds.multilabels[0].size())
        return "ragged multilabel rows";
  } else {
    if (ds.labels.size() != n) return "labels length mismatch";
    for (std::size_t i = 0; i < n; ++i) {
      if (ds.labels[i] < 0) return "negative label at sample " + std::to_string(i);
      if (ds.num_classes > 0 && ds.labels[i] >= ds.num_classes)
        return "label out of range at sample " + std::to_string(i);
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (ds.group_ids[i] < 1) return "group id < 1 at sample " + std::to_string(i);
    const bool is_vec = std::holds_alternative<VectorSample>(ds.samples[i]);
    if (is_vec != (ds.domain == Domain::vector_data))
      return "sample " + std::to_string(i) + " does not match dataset domain";
    if (!is_vec) {
      if (auto err = validate_graph(std::get<Graph>(ds.samples[i])))
        return "graph sample " + std::to_string(i) + ": " + *err;
    }
  }
  return std::nullopt;
}

std::vector<int> group_list(const Dataset& ds) {
  std::set<int> ids(ds.group_ids.begin(), ds.group_ids.end());
  return std::vector<int>(ids.begin(), ids.end());
}

DatasetView view_of(const Dataset& ds, Split split) {
  DatasetView v;
  v.data = &ds;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.splits[i] == split) v.indices.push_back(static_cast<int>(i));
  return v;
}

DatasetView view_of(const Dataset& ds, Split split, int group_id) {
  DatasetView v;
  v.data = &ds;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.splits[i] == split && ds.group_ids[i] == group_id)
      v.indices.push_back(static_cast<int>(i));
  return v;
}

DatasetView subsample_view(const DatasetView& view, int max_count, std::uint64_t seed) {
  if (max_count < 0 || view.indices.size() <= static_cast<std::size_t>(max_count)) return view;
  DatasetView out;
  out.data = view.data;
  std::vector<int> pool = view.indices;
  auto eng = make_engine(seed);
  for (int i = 0; i < max_count; ++i) {
    std::uniform_int_distribution<int> pick(i, static_cast<int>(pool.size()) - 1);
    std::swap(pool[i], pool[pick(eng)]);
  }
  pool.resize(max_count);
  std::sort(pool.begin(), pool.end());
  out.indices = std::move(pool);
  return out;
}

std::vector<GroupStats> compute_group_stats(const Dataset& ds) {
  std::map<int, GroupStats> by_group;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    GroupStats& s = by_group[ds.group_ids[i]];
    s.group_id = ds.group_ids[i];
    if (ds.splits[i] == Split::train) ++s.train_count;
    if (ds.splits[i] == Split::val) ++s.val_count;
  }
  int total_train = 0;
  for (const auto& [_, s] : by_group) total_train += s.train_count;
  std::vector<GroupStats> out;
  for (auto& [_, s] : by_group) {
    s.q = total_train == 0 ? 0.0 : static_cast<double>(s.train_count) / total_train;
    out.push_back(s);
  }
  return out;
}

void assign_splits(Dataset& ds, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::invalid_argument("train_fraction must be in (0, 1)");
  // Stratified per (group, label) bucket so class balance survives the split.
  std::map<std::pair<int, int>, std::vector<int>> buckets;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int label = ds.multilabel() ? 0 : ds.labels[i];
    buckets[{ds.group_ids[i], label}].push_back(static_cast<int>(i));
  }
  for (auto& [key, members] : buckets) {
    auto eng = make_engine(mix(seed, static_cast<std::uint64_t>(key.first) * 1315423911ULL +
                                         static_cast<std::uint64_t>(key.second)));
    std::shuffle(members.begin(), members.end(), eng);
    const auto cut = static_cast<std::size_t>(
        std::llround(train_fraction * static_cast<double>(members.size())));
    for (std::size_t i = 0; i < members.size(); ++i)
      ds.splits[members[i]] = i < cut ? Split::train : Split::val;
  }
}

// ---------------------------------------------------------------------------
// Partitioning
// ---------------------------------------------------------------------------

namespace {

// Quantile edges; duplicate edge values merge (fewer bins).
std::vector<double> quantile_edges(std::vector<double> values, int bins, bool* merged) {
  std::sort(values.begin(), values.end());
  std::vector<double> edges;
  for (int j = 1; j < bins; ++j) {
    const auto at = std::min(values.size() - 1, j * values.size() / bins);
    edges.push_back(values[at]);
  }
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
  // An edge equal to the global maximum would leave its upper bin empty.
  while (!edges.empty() && edges.back() >= values.back()) edges.pop_back();
  if (edges.size() + 1 < static_cast<std::size_t>(bins)) *merged = true;
  return edges;
}

int bin_of(const std::vector<double>& edges, double x) {
  return static_cast<int>(std::upper_bound(edges.begin(), edges.end(), x) - edges.begin());
}

}  // namespace

PartitionResult partition_by_intervals(const Dataset& ds, int size_bins, int degree_bins) {
  if (ds.domain != Domain::graph_data)
    throw std::invalid_argument("partition_by_intervals needs a graph dataset");
  if (size_bins < 1 || degree_bins < 1) throw std::invalid_argument("bin counts must be >= 1");
  if (ds.size() == 0) throw std::invalid_argument("empty dataset");

  std::vector<double> sizes, degrees;
  sizes.reserve(ds.size());
  degrees.reserve(ds.size());
  for (const auto& s : ds.samples) {
    const Graph& g = std::get<Graph>(s);
    sizes.push_back(static_cast<double>(g.node_count));
    degrees.push_back(g.avg_degree());
  }

  PartitionResult result;
  const auto size_edges = quantile_edges(sizes, size_bins, &result.merged);
  const auto degree_edges = quantile_edges(degrees, degree_bins, &result.merged);
  result.size_bins = static_cast<int>(size_edges.size()) + 1;
  result.degree_bins = static_cast<int>(degree_edges.size()) + 1;
  result.group_ids.reserve(ds.size());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const int sb = bin_of(size_edges, sizes[i]);
    const int db = bin_of(degree_edges, degrees[i]);
    result.group_ids.push_back(sb * result.degree_bins + db + 1);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Generators
// ---------------------------------------------------------------------------

Dataset synth_gaussian_groups(const GaussianGroupsSpec& spec, std::uint64_t seed) {
  if (spec.groups < 1) throw std::invalid_argument("need at least one group");
  if (spec.n_per_group < 4) throw std::invalid_argument("need at least 4 samples per group");
  if (!spec.shifts.empty() && static_cast<int>(spec.shifts.size()) != spec.groups)
    throw std::invalid_argument("shift spec size must match group count");

  constexpr double kPi = 3.14159265358979323846;
  Dataset ds;
  ds.domain = Domain::vector_data;
  ds.num_classes = 2;
  for (int g = 0; g < spec.groups; ++g) {
    const GroupShift shift = spec.shifts.empty() ? GroupShift{} : spec.shifts[g];
    const double phi = shift.boundary_deg * kPi / 180.0;
    const double ux = std::cos(phi), uy = std::sin(phi);
    auto eng = make_engine(mix(seed, static_cast<std::uint64_t>(g)));
    std::normal_distribution<double> noise(0.0, spec.noise_std);
    for (int i = 0; i < spec.n_per_group; ++i) {
      const int label = i % 2;
      const double sign = label == 0 ? -1.0 : 1.0;
      VectorSample x = {sign * spec.mean_dist * ux + noise(eng),
                        sign * spec.mean_dist * uy + noise(eng)};
      ds.samples.emplace_back(std::move(x));
      ds.labels.push_back(label);
      ds.group_ids.push_back(g + 1);
      ds.splits.push_back(Split::train);
    }
  }
  assign_splits(ds, spec.train_fraction, mix(seed, 0x5911));

  // The val-side shift is what makes a specific transform optimal per group.
  for (std::size_t i = 0; i < ds.size(); ++i) {
    if (ds.splits[i] == Split::train) continue;
    const GroupShift shift =
        spec.shifts.empty() ? GroupShift{} : spec.shifts[ds.group_ids[i] - 1];
    VectorSample& x = std::get<VectorSample>(ds.samples[i]);
    if (shift.val_rotate_deg != 0.0) x = rotate2d(x, shift.val_rotate_deg * kPi / 180.0);
    if (shift.val_scale != 1.0) x = scale_coords(x, shift.val_scale);
    if (shift.val_translate != 0.0) x = translate(x, shift.val_translate);
  }
  return ds;
}

namespace {

// G(n, p) via geometric skips over the linearized upper triangle.
std::vector<std::pair<int, int>> erdos_renyi_edges(int n, double p, std::mt19937_64& eng) {
  std::vector<std::pair<int, int>> edges;
  if (n < 2 || p <= 0.0) return edges;
  const std::int64_t total = static_cast<std::int64_t>(n) * (n - 1) / 2;
  if (p >= 1.0) {
    for (int u = 0; u < n; ++u)
      for (int v = u + 1; v < n; ++v) edges.emplace_back(u, v);
    return edges;
  }
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double log_q = std::log1p(-p);
  std::int64_t idx = -1;
  while (true) {
    const double u = std::max(unit(eng), 1e-300);
    idx += 1 + static_cast<std::int64_t>(std::floor(std::log(u) / log_q));
    if (idx >= total) break;
    // Invert idx -> (row, col) in the upper triangle.
    std::int64_t remaining = idx;
    int row = 0;
    std::int64_t row_len = n - 1;
    while (remaining >= row_len) {
      remaining -= row_len;
      ++row;
      --row_len;
    }
    edges.emplace_back(row, row + 1 + static_cast<int>(remaining));
  }
  return edges;
}

}  // namespace

Dataset synth_random_graphs(const RandomGraphsSpec& spec, std::uint64_t seed) {
  if (spec.count < 1) throw std::invalid_argument("need at least one graph");
  if (spec.min_nodes < 1 || spec.max_nodes < spec.min_nodes)
    throw std::invalid_argument("invalid node range");
  if (spec.min_edge_prob < 0.0 || spec.max_edge_prob > 1.0 ||
      spec.max_edge_prob < spec.min_edge_prob)
    throw std::invalid_argument("invalid edge probability range");

  Dataset ds;
  ds.domain = Domain::graph_data;
  ds.num_classes = 2;
  for (int i = 0; i < spec.count; ++i) {
    auto eng = make_engine(mix(seed, static_cast<std::uint64_t>(i)));
    std::uniform_int_distribution<int> pick_n(spec.min_nodes, spec.max_nodes);
    std::uniform_real_distribution<double> pick_p(spec.min_edge_prob, spec.max_edge_prob);
    Graph g;
    g.node_count = pick_n(eng);
    const double p = pick_p(eng);
    g.edges = erdos_renyi_edges(g.node_count, p, eng);
    canonicalize_edges(g);
    std::vector<int> degree(g.node_count, 0);
    for (const auto& [u, v] : g.edges) {
      ++degree[u];
      ++degree[v];
    }
    g.features.reserve(g.node_count);
    for (int v = 0; v < g.node_count; ++v)
      g.features.push_back(
          {1.0, static_cast<double>(degree[v]) / std::max(1, g.node_count - 1)});

    const double stat =
        spec.label_rule == GraphLabelRule::by_avg_degree ? g.avg_degree() : g.edge_density();
    ds.labels.push_back(stat > spec.label_threshold ? 1 : 0);
    ds.samples.emplace_back(std::move(g));
    ds.group_ids.push_back(1);
    ds.splits.push_back(Split::train);
  }
  assign_splits(ds, spec.train_fraction, mix(seed, 0x6EA9));
  return ds;
}

// ---------------------------------------------------------------------------
// CSV persistence
// ---------------------------------------------------------------------------

void save_csv(const Dataset& ds, const std::string& path) {
  if (ds.domain != Domain::vector_data)
    throw std::invalid_argument("CSV persistence is for vector datasets; use the graph manifest");
  if (ds.multilabel()) throw std::invalid_argument("CSV persistence needs class-index labels");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  const std::size_t dim =
      ds.size() == 0 ? 0 : std::get<VectorSample>(ds.samples[0]).size();
  for (std::size_t d = 0; d < dim; ++d) out << "feat_" << d << ",";
  out << "label,group,split\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& x = std::get<VectorSample>(ds.samples[i]);
    if (x.size() != dim)
      throw std::invalid_argument("ragged feature row at sample " + std::to_string(i));
    for (double v : x) {
      std::snprintf(buf, sizeof(buf), "%.17g", v);
      out << buf << ",";
    }
    out << ds.labels[i] << "," << ds.group_ids[i] << "," << split_name(ds.splits[i]) << "\n";
  }
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

[[noreturn]] void csv_error(const std::string& path, std::size_t line_no, const std::string& what) {
  throw std::runtime_error(path + ":" + std::to_string(line_no) + ": " + what);
}

}  // namespace

Dataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error(path + ": empty file");

  const auto header = split_fields(line);
  std::vector<int> feat_cols;
  int label_col = -1, group_col = -1, split_col = -1;
  for (std::size_t c = 0; c < header.size(); ++c) {
    if (header[c].rfind("feat_", 0) == 0)
      feat_cols.push_back(static_cast<int>(c));
    else if (header[c] == "label")
      label_col = static_cast<int>(c);
    else if (header[c] == "group")
      group_col = static_cast<int>(c);
    else if (header[c] == "split")
      split_col = static_cast<int>(c);
    else
      csv_error(path, 1, "unknown column '" + header[c] + "'");
  }
  if (feat_cols.empty()) csv_error(path, 1, "no feat_* columns");
  if (label_col < 0) csv_error(path, 1, "missing label column");
  if (group_col < 0) csv_error(path, 1, "missing group column");
  if (split_col < 0) csv_error(path, 1, "missing split column");

  Dataset ds;
  ds.domain = Domain::vector_data;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    if (fields.size() != header.size())
      csv_error(path, line_no,
                "expected " + std::to_string(header.size()) + " fields, got " +
                    std::to_string(fields.size()));
    VectorSample x;
    x.reserve(feat_cols.size());
    for (int c : feat_cols) {
      try {
        std::size_t used = 0;
        const double v = std::stod(fields[c], &used);
        if (used != fields[c].size()) throw std::invalid_argument("trailing junk");
        if (std::isnan(v)) csv_error(path, line_no, "NaN feature in column " + header[c]);
        x.push_back(v);
      } catch (const std::runtime_error&) {
        throw;
      } catch (const std::exception&) {
        csv_error(path, line_no, "non-numeric value '" + fields[c] + "' in column " + header[c]);
      }
    }
    try {
      ds.labels.push_back(std::stoi(fields[label_col]));
      ds.group_ids.push_back(std::stoi(fields[group_col]));
    } catch (const std::exception&) {
      csv_error(path, line_no, "non-integer label or group");
    }
    const auto split = split_from_name(fields[split_col]);
    if (!split) csv_error(path, line_no, "unknown split '" + fields[split_col] + "'");
    ds.splits.push_back(*split);
    ds.samples.emplace_back(std::move(x));
  }
  for (int label : ds.labels) ds.num_classes = std::max(ds.num_classes, label + 1);
  if (auto err = validate_dataset(ds)) throw std::runtime_error(path + ": " + *err);
  return ds;
}

// ---------------------------------------------------------------------------
// Graph persistence
// ---------------------------------------------------------------------------

nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [u, v] : g.edges) edges.push_back({u, v});
  return {{"nodes", g.node_count}, {"features", g.features}, {"edges", std::move(edges)}};
}

Graph graph_from_json(const nlohmann::json& j) {
  try {
    Graph g;
    g.node_count = j.at("nodes").get<int>();
    g.features = j.at("features").get<std::vector<std::vector<double>>>();
    for (const auto& e : j.at("edges")) {
      if (!e.is_array() || e.size() != 2)
        throw std::runtime_error("edge entries must be [u, v] pairs");
      g.edges.emplace_back(e[0].get<int>(), e[1].get<int>());
    }
    canonicalize_edges(g);
    if (auto err = validate_graph(g)) throw std::runtime_error(*err);
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("malformed graph: ") + e.what());
  }
}

void save_graph_dataset(const Dataset& ds, const std::string& dir) {
  if (ds.domain != Domain::graph_data)
    throw std::invalid_argument("graph persistence needs a graph dataset");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(dir) / "graphs");
  nlohmann::json manifest = nlohmann::json::array();
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const std::string rel = "graphs/graph_" + std::to_string(i) + ".json";
    std::ofstream out(fs::path(dir) / rel, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write graph file " + rel);
    out << graph_to_json(std::get<Graph>(ds.samples[i])).dump() << "\n";
    nlohmann::json row = {{"path", rel},
                          {"group", ds.group_ids[i]},
                          {"split", split_name(ds.splits[i])}};
    if (ds.multilabel())
      row["label"] = ds.multilabels[i];
    else
      row["label"] = ds.labels[i];
    manifest.push_back(std::move(row));
  }
  std::ofstream out(fs::path(dir) / "manifest.json", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write manifest in '" + dir + "'");
  out << manifest.dump(2) << "\n";
}

Dataset load_graph_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + manifest_path + "'");
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error("malformed manifest '" + manifest_path + "': " + e.what());
  }
  if (!manifest.is_array()) throw std::runtime_error("manifest must be a JSON array");

  const fs::path base = fs::path(manifest_path).parent_path();
  Dataset ds;
  ds.domain = Domain::graph_data;
  bool multilabel = false;
  for (std::size_t i = 0; i < manifest.size(); ++i) {
    const auto& row = manifest[i];
    try {
      const std::string rel = row.at("path").get<std::string>();
      std::ifstream gin(base / rel, std::ios::binary);
      if (!gin) throw std::runtime_error("cannot open graph file '" + rel + "'");
      ds.samples.emplace_back(graph_from_json(nlohmann::json::parse(gin)));
      if (row.at("label").is_array()) {
        multilabel = true;
        ds.multilabels.push_back(row.at("label").get<std::vector<std::uint8_t>>());
      } else {
        ds.labels.push_back(row.at("label").get<int>());
      }
      ds.group_ids.push_back(row.at("group").get<int>());
      const auto split = split_from_name(row.at("split").get<std::string>());
      if (!split) throw std::runtime_error("unknown split name");
      ds.splits.push_back(*split);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(manifest_path + ": entry " + std::to_string(i) + ": " + e.what());
    } catch (const std::exception& e) {
      throw std::runtime_error(manifest_path + ": entry " + std::to_string(i) + ": " + e.what());
    }
  }
  if (multilabel && !ds.labels.empty())
    throw std::runtime_error(manifest_path + ": mixed class and multilabel entries");
  if (!multilabel)
    for (int label : ds.labels) ds.num_classes = std::max(ds.num_classes, label + 1);
  if (auto err = validate_dataset(ds)) throw std::runtime_error(manifest_path + ": " + *err);
  return ds;
}

}  // namespace augforest
