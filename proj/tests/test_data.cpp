#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include <doctest.h>

#include "augforest/data.hpp"
#include "augforest/rng.hpp"

using namespace augforest;

namespace {

Graph graph_of(int n, std::vector<std::pair<int, int>> edges) {
  Graph g;
  g.node_count = n;
  for (int i = 0; i < n; ++i) g.features.push_back({1.0, static_cast<double>(i)});
  g.edges = std::move(edges);
  canonicalize_edges(g);
  return g;
}

Graph complete(int n) {
  std::vector<std::pair<int, int>> edges;
  for (int u = 0; u < n; ++u)
    for (int v = u + 1; v < n; ++v) edges.emplace_back(u, v);
  return graph_of(n, std::move(edges));
}

// Two groups x two labels x 20 samples each, all initially train.
Dataset four_bucket_dataset() {
  Dataset ds;
  ds.domain = Domain::vector_data;
  ds.num_classes = 2;
  for (int group = 1; group <= 2; ++group) {
    for (int label = 0; label < 2; ++label) {
      for (int i = 0; i < 20; ++i) {
        ds.samples.emplace_back(VectorSample{static_cast<double>(i), static_cast<double>(label)});
        ds.labels.push_back(label);
        ds.group_ids.push_back(group);
        ds.splits.push_back(Split::train);
      }
    }
  }
  return ds;
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("dataset validation catches parallel-array breakage") {
  Dataset ds = four_bucket_dataset();
  CHECK(!validate_dataset(ds).has_value());
  CHECK(group_list(ds) == std::vector<int>{1, 2});

  Dataset broken = ds;
  broken.labels.pop_back();
  CHECK(validate_dataset(broken).has_value());
  broken = ds;
  broken.labels[0] = 7;  // outside num_classes
  CHECK(validate_dataset(broken).has_value());
  broken = ds;
  broken.group_ids[0] = 0;  // groups are 1-based
  CHECK(validate_dataset(broken).has_value());
}

TEST_CASE("assign_splits is stratified per group and label and seed-deterministic") {
  Dataset ds = four_bucket_dataset();
  assign_splits(ds, 0.75, 31);

  for (int group = 1; group <= 2; ++group) {
    for (int label = 0; label < 2; ++label) {
      int train = 0, val = 0;
      for (std::size_t i = 0; i < ds.size(); ++i) {
        if (ds.group_ids[i] != group || ds.labels[i] != label) continue;
        ds.splits[i] == Split::train ? ++train : ++val;
      }
      CHECK(train == 15);
      CHECK(val == 5);
    }
  }

  Dataset again = four_bucket_dataset();
  assign_splits(again, 0.75, 31);
  CHECK(again.splits == ds.splits);
  Dataset other = four_bucket_dataset();
  assign_splits(other, 0.75, 32);
  CHECK(other.splits != ds.splits);

  CHECK_THROWS_AS(assign_splits(ds, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(assign_splits(ds, 1.0, 1), std::invalid_argument);
}

TEST_CASE("views filter by split and group; subsampling is deterministic") {
  Dataset ds = four_bucket_dataset();
  assign_splits(ds, 0.75, 31);

  const DatasetView train = view_of(ds, Split::train);
  const DatasetView val = view_of(ds, Split::val);
  CHECK(train.size() == 60);
  CHECK(val.size() == 20);
  const DatasetView g2_val = view_of(ds, Split::val, 2);
  CHECK(g2_val.size() == 10);
  for (int idx : g2_val.indices) {
    CHECK(ds.group_ids[idx] == 2);
    CHECK(ds.splits[idx] == Split::val);
  }

  const DatasetView small = subsample_view(train, 10, 5);
  CHECK(small.size() == 10);
  const std::set<int> unique(small.indices.begin(), small.indices.end());
  CHECK(unique.size() == 10);
  for (int idx : small.indices)
    CHECK(std::find(train.indices.begin(), train.indices.end(), idx) != train.indices.end());
  CHECK(subsample_view(train, 10, 5).indices == small.indices);
  CHECK(subsample_view(train, 100, 5).size() == 60);

  const std::vector<GroupStats> stats = compute_group_stats(ds);
  REQUIRE(stats.size() == 2);
  CHECK(stats[0].group_id == 1);
  CHECK(stats[0].train_count == 30);
  CHECK(stats[0].val_count == 10);
  CHECK(stats[0].q == doctest::Approx(0.5));
  CHECK(stats[1].q == doctest::Approx(0.5));
}

TEST_CASE("partition_by_intervals bins by size and degree quantiles") {
  Dataset ds;
  ds.domain = Domain::graph_data;
  ds.num_classes = 2;
  // Sizes 4, 9 | 21, 30 and average degrees 0, 8 | 0, 29: a clean 2x2 grid.
  ds.samples = {graph_of(4, {}), complete(9), graph_of(21, {}), complete(30)};
  ds.labels = {0, 1, 0, 1};
  ds.group_ids = {1, 1, 1, 1};
  ds.splits = {Split::train, Split::train, Split::train, Split::train};

  const PartitionResult part = partition_by_intervals(ds, 2, 2);
  CHECK(part.size_bins == 2);
  CHECK(part.degree_bins == 2);
  CHECK(!part.merged);
  CHECK(part.group_ids == std::vector<int>{1, 2, 3, 4});

  // Constant node counts collapse the size axis.
  Dataset flat = ds;
  flat.samples = {graph_of(5, {}), graph_of(5, {{0, 1}, {2, 3}}),
                  graph_of(5, {{0, 1}, {0, 2}, {0, 3}, {0, 4}, {1, 2}}), complete(5)};
  const PartitionResult merged = partition_by_intervals(flat, 2, 2);
  CHECK(merged.size_bins == 1);
  CHECK(merged.degree_bins == 2);
  CHECK(merged.merged);
  CHECK(merged.group_ids == std::vector<int>{1, 1, 2, 2});

  CHECK_THROWS_AS(partition_by_intervals(four_bucket_dataset(), 2, 2), std::invalid_argument);
}

TEST_CASE("gaussian generator shapes, shifts and determinism") {
  GaussianGroupsSpec spec;
  spec.groups = 2;
  spec.n_per_group = 40;
  const Dataset ds = synth_gaussian_groups(spec, 7);
  CHECK(ds.size() == 80);
  CHECK(ds.num_classes == 2);
  CHECK(!validate_dataset(ds).has_value());
  CHECK(group_list(ds) == std::vector<int>{1, 2});
  CHECK(view_of(ds, Split::train).size() == 60);

  const Dataset same = synth_gaussian_groups(spec, 7);
  CHECK(std::get<VectorSample>(same.samples[0]) == std::get<VectorSample>(ds.samples[0]));
  const Dataset other = synth_gaussian_groups(spec, 8);
  CHECK(std::get<VectorSample>(other.samples[0]) != std::get<VectorSample>(ds.samples[0]));

  // A pure val-side translation moves every val sample by exactly the offset.
  GaussianGroupsSpec shifted = spec;
  shifted.groups = 1;
  shifted.shifts = {GroupShift{0.0, 0.0, 1.0, 10.0}};
  const Dataset moved = synth_gaussian_groups(shifted, 7);
  GaussianGroupsSpec plain = spec;
  plain.groups = 1;
  const Dataset base = synth_gaussian_groups(plain, 7);
  for (std::size_t i = 0; i < moved.size(); ++i) {
    const auto& a = std::get<VectorSample>(base.samples[i]);
    const auto& b = std::get<VectorSample>(moved.samples[i]);
    if (moved.splits[i] == Split::train)
      CHECK(b == a);
    else
      for (std::size_t d = 0; d < a.size(); ++d) CHECK(b[d] == doctest::Approx(a[d] + 10.0));
  }

  GaussianGroupsSpec bad = spec;
  bad.shifts = {GroupShift{}};  // one shift for two groups
  CHECK_THROWS_AS(synth_gaussian_groups(bad, 7), std::invalid_argument);
}

TEST_CASE("random graph generator respects ranges and label rules") {
  RandomGraphsSpec spec;
  spec.count = 30;
  spec.min_nodes = 8;
  spec.max_nodes = 20;
  spec.min_edge_prob = 0.1;
  spec.max_edge_prob = 0.5;
  spec.label_threshold = 3.0;
  const Dataset ds = synth_random_graphs(spec, 11);
  CHECK(ds.size() == 30);
  CHECK(ds.domain == Domain::graph_data);
  CHECK(!validate_dataset(ds).has_value());
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Graph& g = std::get<Graph>(ds.samples[i]);
    CHECK(g.node_count >= 8);
    CHECK(g.node_count <= 20);
    CHECK(!validate_graph(g).has_value());
    CHECK(g.features[0].size() == 2);
    CHECK(ds.labels[i] == (g.avg_degree() > 3.0 ? 1 : 0));
  }

  RandomGraphsSpec by_density = spec;
  by_density.label_rule = GraphLabelRule::by_density;
  by_density.label_threshold = 0.3;
  const Dataset dens = synth_random_graphs(by_density, 11);
  for (std::size_t i = 0; i < dens.size(); ++i) {
    const Graph& g = std::get<Graph>(dens.samples[i]);
    CHECK(dens.labels[i] == (g.edge_density() > 0.3 ? 1 : 0));
  }

  RandomGraphsSpec bad = spec;
  bad.max_nodes = 4;
  CHECK_THROWS_AS(synth_random_graphs(bad, 11), std::invalid_argument);
}

TEST_CASE("vector datasets round-trip through CSV exactly") {
  Dataset ds = four_bucket_dataset();
  std::get<VectorSample>(ds.samples[0])[0] = 0.12345678901234567;  // full precision survives
  assign_splits(ds, 0.75, 3);
  const std::string path = temp_path("augforest_roundtrip.csv");
  save_csv(ds, path);
  const Dataset loaded = load_csv(path);
  std::filesystem::remove(path);

  REQUIRE(loaded.size() == ds.size());
  CHECK(loaded.labels == ds.labels);
  CHECK(loaded.group_ids == ds.group_ids);
  CHECK(loaded.splits == ds.splits);
  CHECK(loaded.num_classes == ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i)
    CHECK(std::get<VectorSample>(loaded.samples[i]) == std::get<VectorSample>(ds.samples[i]));
}

TEST_CASE("CSV loader reports line-numbered diagnostics") {
  const std::string path = temp_path("augforest_bad.csv");
  const auto expect_error = [&](const std::string& content, const char* needle) {
    std::ofstream(path) << content;
    try {
      load_csv(path);
      FAIL((std::string("expected load_csv to reject: ") + needle));
    } catch (const std::runtime_error& error) {
      const std::string what = error.what();
      CHECK(what.find(needle) != std::string::npos);
      CHECK(what.find(path) != std::string::npos);
    }
  };

  expect_error("feat_0,label,group,split\n1.0,0,1,train\n1.0,0,1\n", ":3: ");
  expect_error("feat_0,label,group,split\n1.0,0,1,train\nabc,0,1,val\n", "non-numeric value");
  expect_error("feat_0,label,group,split\nnan,0,1,train\n", "NaN feature");
  expect_error("feat_0,label,group,split\n1.0,0,1,nowhere\n", "unknown split");
  expect_error("feat_0,group,split\n1.0,1,train\n", "missing label column");
  expect_error("feat_0,label,group,split,bogus\n", "unknown column 'bogus'");
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_csv("/nonexistent/augforest.csv"), std::runtime_error);
}

TEST_CASE("graph datasets round-trip through the manifest format") {
  RandomGraphsSpec spec;
  spec.count = 6;
  spec.min_nodes = 4;
  spec.max_nodes = 10;
  spec.min_edge_prob = 0.2;
  spec.max_edge_prob = 0.5;
  spec.label_threshold = 2.0;
  const Dataset ds = synth_random_graphs(spec, 13);

  const std::string dir = temp_path("augforest_graph_ds");
  std::filesystem::remove_all(dir);
  save_graph_dataset(ds, dir);
  const Dataset loaded = load_graph_dataset((std::filesystem::path(dir) / "manifest.json").string());
  std::filesystem::remove_all(dir);

  REQUIRE(loaded.size() == ds.size());
  CHECK(loaded.labels == ds.labels);
  CHECK(loaded.group_ids == ds.group_ids);
  CHECK(loaded.splits == ds.splits);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const Graph& a = std::get<Graph>(ds.samples[i]);
    const Graph& b = std::get<Graph>(loaded.samples[i]);
    CHECK(a.node_count == b.node_count);
    CHECK(a.edges == b.edges);
    CHECK(a.features == b.features);
  }
}
