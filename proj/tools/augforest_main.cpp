// Command-line driver: search | forest | benchmark | eval.
// Exit codes: 0 ok, 2 usage/config error, 3 runtime error.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "augforest/data.hpp"
#include "augforest/forest.hpp"
#include "augforest/log.hpp"
#include "augforest/model.hpp"
#include "augforest/oracle.hpp"
#include "augforest/policy.hpp"
#include "augforest/rng.hpp"
#include "augforest/search.hpp"
#include "augforest/transforms.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace augforest;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Run configuration (config file keys mirror the flags; flags win)
// ---------------------------------------------------------------------------

struct DatasetConfig {
  std::string kind = "synth_gaussian";  // synth_gaussian | synth_graphs | csv | graph_manifest
  std::string path;
  GaussianGroupsSpec gaussian;
  RandomGraphsSpec graphs;
  std::optional<std::pair<int, int>> partition;  // (size_bins, degree_bins)
};

struct ModelConfig {
  int hidden_dim = 0;
  int num_outputs = 0;  // 0 => from dataset
  std::string loss;     // empty => from dataset (multilabel => bce)
  double lambda_reg = 1e-3;
};

struct EvalFilesConfig {
  std::string policy;
  std::string checkpoint;
  bool similarity = false;
};

struct RunConfig {
  DatasetConfig dataset;
  std::string registry;  // vector | graph | empty => by domain
  ModelConfig model;
  EncoderConfig encoder;
  SearchConfig search;
  BilevelConfig bilevel;
  std::vector<std::string> benchmark_methods = {"greedy", "exhaustive"};
  EvalFilesConfig eval_files;
  std::optional<std::uint64_t> seed;
  std::string out = "runs";
  std::string name;
  int threads = 1;
};

template <typename T>
T get_or(const json& doc, const char* key, T fallback) {
  if (!doc.contains(key)) return fallback;
  try {
    return doc.at(key).get<T>();
  } catch (const json::exception& error) {
    throw ConfigError(std::string("config key '") + key + "': " + error.what());
  }
}

void parse_dataset(const json& doc, DatasetConfig& out) {
  out.kind = get_or<std::string>(doc, "kind", out.kind);
  out.path = get_or<std::string>(doc, "path", out.path);
  out.gaussian.groups = get_or(doc, "groups", out.gaussian.groups);
  out.gaussian.n_per_group = get_or(doc, "n_per_group", out.gaussian.n_per_group);
  out.gaussian.mean_dist = get_or(doc, "mean_dist", out.gaussian.mean_dist);
  out.gaussian.noise_std = get_or(doc, "noise_std", out.gaussian.noise_std);
  out.gaussian.train_fraction = get_or(doc, "train_fraction", out.gaussian.train_fraction);
  if (doc.contains("shifts")) {
    for (const json& entry : doc.at("shifts")) {
      GroupShift shift;
      shift.boundary_deg = get_or(entry, "boundary_deg", 0.0);
      shift.val_rotate_deg = get_or(entry, "val_rotate_deg", 0.0);
      shift.val_scale = get_or(entry, "val_scale", 1.0);
      shift.val_translate = get_or(entry, "val_translate", 0.0);
      out.gaussian.shifts.push_back(shift);
    }
  }
  out.graphs.count = get_or(doc, "count", out.graphs.count);
  out.graphs.min_nodes = get_or(doc, "min_nodes", out.graphs.min_nodes);
  out.graphs.max_nodes = get_or(doc, "max_nodes", out.graphs.max_nodes);
  out.graphs.min_edge_prob = get_or(doc, "min_edge_prob", out.graphs.min_edge_prob);
  out.graphs.max_edge_prob = get_or(doc, "max_edge_prob", out.graphs.max_edge_prob);
  out.graphs.label_threshold = get_or(doc, "label_threshold", out.graphs.label_threshold);
  out.graphs.train_fraction = get_or(doc, "train_fraction", out.graphs.train_fraction);
  const std::string rule = get_or<std::string>(doc, "label_rule", "avg_degree");
  if (rule == "avg_degree")
    out.graphs.label_rule = GraphLabelRule::by_avg_degree;
  else if (rule == "density")
    out.graphs.label_rule = GraphLabelRule::by_density;
  else
    throw ConfigError("unknown label_rule '" + rule + "'");
  if (doc.contains("partition")) {
    const json& part = doc.at("partition");
    out.partition = {get_or(part, "size_bins", 2), get_or(part, "degree_bins", 2)};
  }
}

void parse_search(const json& doc, SearchConfig& out) {
  out.d_max = get_or(doc, "d_max", out.d_max);
  out.prob_grid = get_or(doc, "prob_grid", out.prob_grid);
  out.candidates = get_or(doc, "candidates", out.candidates);
  const std::string frontier = get_or<std::string>(doc, "frontier", "fifo");
  if (frontier == "fifo")
    out.frontier = FrontierOrder::fifo;
  else if (frontier == "random")
    out.frontier = FrontierOrder::random;
  else
    throw ConfigError("unknown frontier '" + frontier + "'");
  out.warm_start = get_or(doc, "warm_start", out.warm_start);
  out.improvement_slack = get_or(doc, "improvement_slack", out.improvement_slack);
  if (doc.contains("train")) {
    const json& train = doc.at("train");
    out.train.steps = get_or(train, "steps", out.train.steps);
    out.train.lr = get_or(train, "lr", out.train.lr);
    out.train.batch_size = get_or(train, "batch_size", out.train.batch_size);
  }
  if (doc.contains("eval")) {
    const json& eval = doc.at("eval");
    const std::string mode = get_or<std::string>(eval, "mode", "exact");
    if (mode == "exact")
      out.eval.mode = EvalMode::exact;
    else if (mode == "mc")
      out.eval.mode = EvalMode::mc;
    else
      throw ConfigError("unknown eval mode '" + mode + "'");
    out.eval.mc_draws = get_or(eval, "mc_draws", out.eval.mc_draws);
  }
}

void parse_bilevel(const json& doc, BilevelConfig& out) {
  out.outer_iters = get_or(doc, "outer_iters", out.outer_iters);
  out.inner_steps = get_or(doc, "inner_steps", out.inner_steps);
  out.inner_lr = get_or(doc, "inner_lr", out.inner_lr);
  out.eta = get_or(doc, "eta", out.eta);
  out.lambda_damp = get_or(doc, "lambda_damp", out.lambda_damp);
  out.neumann_terms = get_or(doc, "neumann_terms", out.neumann_terms);
  out.gamma = get_or(doc, "gamma", out.gamma);
  out.batch_size = get_or(doc, "batch_size", out.batch_size);
  out.q = get_or(doc, "q", out.q);
}

RunConfig load_run_config(const std::string& path) {
  RunConfig config;
  if (path.empty()) return config;
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& error) {
    throw ConfigError("malformed config file " + path + ": " + error.what());
  }
  if (doc.contains("dataset")) parse_dataset(doc.at("dataset"), config.dataset);
  config.registry = get_or<std::string>(doc, "registry", config.registry);
  if (doc.contains("model")) {
    const json& model = doc.at("model");
    config.model.hidden_dim = get_or(model, "hidden_dim", config.model.hidden_dim);
    config.model.num_outputs = get_or(model, "num_outputs", config.model.num_outputs);
    config.model.loss = get_or<std::string>(model, "loss", config.model.loss);
    config.model.lambda_reg = get_or(model, "lambda_reg", config.model.lambda_reg);
  }
  if (doc.contains("encoder"))
    config.encoder.rounds = get_or(doc.at("encoder"), "rounds", config.encoder.rounds);
  if (doc.contains("search")) parse_search(doc.at("search"), config.search);
  if (doc.contains("bilevel")) parse_bilevel(doc.at("bilevel"), config.bilevel);
  if (doc.contains("benchmark"))
    config.benchmark_methods =
        get_or(doc.at("benchmark"), "methods", config.benchmark_methods);
  if (doc.contains("eval")) {
    const json& eval = doc.at("eval");
    config.eval_files.policy = get_or<std::string>(eval, "policy", "");
    config.eval_files.checkpoint = get_or<std::string>(eval, "checkpoint", "");
    config.eval_files.similarity = get_or(eval, "similarity", false);
  }
  if (doc.contains("seed")) config.seed = doc.at("seed").get<std::uint64_t>();
  config.out = get_or<std::string>(doc, "out", config.out);
  config.name = get_or<std::string>(doc, "name", config.name);
  config.threads = get_or(doc, "threads", config.threads);
  return config;
}

json config_to_json(const RunConfig& config) {
  json shifts = json::array();
  for (const GroupShift& shift : config.dataset.gaussian.shifts)
    shifts.push_back({{"boundary_deg", shift.boundary_deg},
                      {"val_rotate_deg", shift.val_rotate_deg},
                      {"val_scale", shift.val_scale},
                      {"val_translate", shift.val_translate}});
  json dataset = {
      {"kind", config.dataset.kind},
      {"path", config.dataset.path},
      {"groups", config.dataset.gaussian.groups},
      {"n_per_group", config.dataset.gaussian.n_per_group},
      {"shifts", std::move(shifts)},
      {"mean_dist", config.dataset.gaussian.mean_dist},
      {"noise_std", config.dataset.gaussian.noise_std},
      {"train_fraction", config.dataset.gaussian.train_fraction},
      {"count", config.dataset.graphs.count},
      {"min_nodes", config.dataset.graphs.min_nodes},
      {"max_nodes", config.dataset.graphs.max_nodes},
      {"min_edge_prob", config.dataset.graphs.min_edge_prob},
      {"max_edge_prob", config.dataset.graphs.max_edge_prob},
      {"label_rule",
       config.dataset.graphs.label_rule == GraphLabelRule::by_avg_degree ? "avg_degree"
                                                                         : "density"},
      {"label_threshold", config.dataset.graphs.label_threshold}};
  if (config.dataset.partition)
    dataset["partition"] = {{"size_bins", config.dataset.partition->first},
                            {"degree_bins", config.dataset.partition->second}};
  json doc = {
      {"dataset", std::move(dataset)},
      {"registry", config.registry},
      {"model",
       {{"hidden_dim", config.model.hidden_dim},
        {"num_outputs", config.model.num_outputs},
        {"loss", config.model.loss},
        {"lambda_reg", config.model.lambda_reg}}},
      {"encoder", {{"rounds", config.encoder.rounds}}},
      {"search",
       {{"d_max", config.search.d_max},
        {"prob_grid", config.search.prob_grid},
        {"candidates", config.search.candidates},
        {"frontier", config.search.frontier == FrontierOrder::fifo ? "fifo" : "random"},
        {"warm_start", config.search.warm_start},
        {"improvement_slack", config.search.improvement_slack},
        {"train",
         {{"steps", config.search.train.steps},
          {"lr", config.search.train.lr},
          {"batch_size", config.search.train.batch_size}}},
        {"eval",
         {{"mode", config.search.eval.mode == EvalMode::exact ? "exact" : "mc"},
          {"mc_draws", config.search.eval.mc_draws}}}}},
      {"bilevel",
       {{"outer_iters", config.bilevel.outer_iters},
        {"inner_steps", config.bilevel.inner_steps},
        {"inner_lr", config.bilevel.inner_lr},
        {"eta", config.bilevel.eta},
        {"lambda_damp", config.bilevel.lambda_damp},
        {"neumann_terms", config.bilevel.neumann_terms},
        {"gamma", config.bilevel.gamma},
        {"batch_size", config.bilevel.batch_size},
        {"q", config.bilevel.q}}},
      {"benchmark", {{"methods", config.benchmark_methods}}},
      {"seed", config.seed.value_or(0)},
      {"out", config.out},
      {"name", config.name},
      {"threads", config.threads}};
  if (!config.eval_files.policy.empty() || !config.eval_files.checkpoint.empty())
    doc["eval"] = {{"policy", config.eval_files.policy},
                   {"checkpoint", config.eval_files.checkpoint},
                   {"similarity", config.eval_files.similarity}};
  return doc;
}

// ---------------------------------------------------------------------------
// Run context assembly
// ---------------------------------------------------------------------------

struct RunContext {
  RunConfig config;
  Dataset dataset;
  TransformRegistry registry;
  ModelSpec spec;
  EncoderConfig encoder;
  std::uint64_t seed = 0;
  fs::path run_dir;
};

Dataset build_dataset(const RunConfig& config, std::uint64_t seed) {
  const DatasetConfig& dc = config.dataset;
  Dataset ds;
  if (dc.kind == "synth_gaussian") {
    ds = synth_gaussian_groups(dc.gaussian, mix(seed, 0xD474));
  } else if (dc.kind == "synth_graphs") {
    ds = synth_random_graphs(dc.graphs, mix(seed, 0xD474));
    if (dc.partition) {
      const PartitionResult part =
          partition_by_intervals(ds, dc.partition->first, dc.partition->second);
      ds.group_ids = part.group_ids;
    }
  } else if (dc.kind == "csv") {
    if (dc.path.empty()) throw ConfigError("dataset kind 'csv' needs a path");
    if (!fs::exists(dc.path)) throw ConfigError("dataset path does not exist: " + dc.path);
    try {
      ds = load_csv(dc.path);
    } catch (const std::exception& error) {
      throw ConfigError(error.what());
    }
  } else if (dc.kind == "graph_manifest") {
    if (dc.path.empty()) throw ConfigError("dataset kind 'graph_manifest' needs a path");
    if (!fs::exists(dc.path)) throw ConfigError("dataset path does not exist: " + dc.path);
    try {
      ds = load_graph_dataset(dc.path);
    } catch (const std::exception& error) {
      throw ConfigError(error.what());
    }
  } else {
    throw ConfigError("unknown dataset kind '" + dc.kind + "'");
  }
  return ds;
}

int sample_width(const Dataset& ds) {
  if (ds.domain == Domain::vector_data)
    return static_cast<int>(std::get<VectorSample>(ds.samples.front()).size());
  const Graph& g = std::get<Graph>(ds.samples.front());
  if (g.features.empty()) throw ConfigError("graph dataset has featureless graphs");
  return encoded_dim(static_cast<int>(g.features.front().size()));
}

RunContext make_context(RunConfig config) {
  if (!config.seed) throw ConfigError("a seed is required (--seed or config key 'seed')");
  if (config.threads < 1) throw ConfigError("--threads must be >= 1");

  RunContext ctx;
  ctx.seed = *config.seed;
  ctx.dataset = build_dataset(config, ctx.seed);
  if (const auto problem = validate_dataset(ctx.dataset))
    throw ConfigError("dataset invalid: " + *problem);

  std::string registry_kind = config.registry;
  if (registry_kind.empty())
    registry_kind = ctx.dataset.domain == Domain::vector_data ? "vector" : "graph";
  if (registry_kind == "vector")
    ctx.registry = default_vector_registry();
  else if (registry_kind == "graph")
    ctx.registry = default_graph_registry();
  else
    throw ConfigError("unknown registry '" + registry_kind + "'");
  config.registry = registry_kind;

  ctx.encoder = config.encoder;
  ctx.spec.input_dim = sample_width(ctx.dataset);
  ctx.spec.hidden_dim = config.model.hidden_dim;
  ctx.spec.num_outputs =
      config.model.num_outputs > 0 ? config.model.num_outputs : ctx.dataset.num_classes;
  if (config.model.loss.empty())
    ctx.spec.loss = ctx.dataset.multilabel() ? LossKind::multilabel_bce
                                             : LossKind::softmax_cross_entropy;
  else
    ctx.spec.loss = loss_kind_from_name(config.model.loss);
  ctx.spec.lambda_reg = config.model.lambda_reg;
  try {
    validate_spec(ctx.spec);
  } catch (const std::exception& error) {
    throw ConfigError(std::string("model config invalid: ") + error.what());
  }

  config.search.seed = ctx.seed;
  config.search.threads = config.threads;
  config.bilevel.seed = ctx.seed;
  config.bilevel.threads = config.threads;
  ctx.config = std::move(config);
  return ctx;
}

std::string default_run_name() {
  const auto now = std::chrono::system_clock::now();
  const std::time_t stamp = std::chrono::system_clock::to_time_t(now);
  char buffer[32];
  std::tm parts{};
  localtime_r(&stamp, &parts);
  std::strftime(buffer, sizeof buffer, "%Y%m%d_%H%M%S", &parts);
  return buffer;
}

fs::path prepare_run_dir(RunContext& ctx, const char* command) {
  const std::string name = ctx.config.name.empty() ? default_run_name() : ctx.config.name;
  fs::path dir = fs::path(ctx.config.out) / ("run_" + name);
  fs::create_directories(dir);
  std::ofstream snapshot(dir / "config.json");
  if (!snapshot) throw std::runtime_error("cannot write config snapshot");
  json doc = config_to_json(ctx.config);
  doc["command"] = command;
  snapshot << doc.dump(2) << "\n";
  ctx.run_dir = dir;
  return dir;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_search(RunContext& ctx) {
  const fs::path dir = prepare_run_dir(ctx, "search");
  const DatasetView train = view_of(ctx.dataset, Split::train);
  const DatasetView val = view_of(ctx.dataset, Split::val);
  AF_LOG_INFO("search: %zu train / %zu val samples", train.size(), val.size());

  SearchResult result = search_tree(ctx.spec, train, val, ctx.registry, &ctx.encoder,
                                    ctx.config.search);
  save_tree((dir / "tree.json").string(), result.tree);
  export_trace_csv(result.trace, dir / "trace.csv");
  export_importance_csv(importance_scores(result.trace), dir / "importance.csv");
  std::ofstream dot(dir / "tree.dot");
  if (!dot) throw std::runtime_error("cannot write tree.dot");
  dot << tree_to_dot(result.tree, &ctx.registry);
  AF_LOG_INFO("search: final L_val %.6f, %d models, %lld candidate evals",
              result.trace.final_l_val, result.trace.counters.models_trained,
              result.trace.counters.candidate_evals);
  std::cout << dir.string() << "\n";
  return 0;
}

int cmd_forest(RunContext& ctx) {
  const fs::path dir = prepare_run_dir(ctx, "forest");
  ForestResult result = learn_forest(ctx.spec, ctx.dataset, ctx.registry, &ctx.encoder,
                                     ctx.config.search, ctx.config.bilevel);
  save_forest((dir / "forest.json").string(), result.forest);
  export_history_csv(result.history, dir / "history.csv");
  for (std::size_t g = 0; g < result.forest.trees.size(); ++g)
    save_tree(
        (dir / ("tree_group_" + std::to_string(result.forest.group_ids[g]) + ".json")).string(),
        result.forest.trees[g]);
  Checkpoint checkpoint;
  checkpoint.spec = ctx.spec;
  checkpoint.theta = result.theta;
  checkpoint.step =
      static_cast<long>(ctx.config.bilevel.outer_iters) * ctx.config.bilevel.inner_steps;
  checkpoint.seed = ctx.seed;
  save_checkpoint(dir / "checkpoint.json", checkpoint);
  AF_LOG_INFO("forest: %zu groups, final val loss %.6f", result.forest.trees.size(),
              result.history.back().val_loss);
  std::cout << dir.string() << "\n";
  return 0;
}

int cmd_benchmark(RunContext& ctx) {
  const fs::path dir = prepare_run_dir(ctx, "benchmark");
  const DatasetView train = view_of(ctx.dataset, Split::train);
  const DatasetView val = view_of(ctx.dataset, Split::val);

  struct Row {
    std::string method;
    long long candidate_evals = 0;
    int models_trained = 0;
    double best_l_val = 0.0;
    double wall_seconds = 0.0;
  };
  std::vector<Row> rows;
  for (const std::string& method : ctx.config.benchmark_methods) {
    const auto start = std::chrono::steady_clock::now();
    Row row;
    row.method = method;
    if (method == "greedy") {
      const SearchResult result = search_tree(ctx.spec, train, val, ctx.registry, &ctx.encoder,
                                              ctx.config.search);
      row.candidate_evals = result.trace.counters.candidate_evals;
      row.models_trained = result.trace.counters.models_trained;
      row.best_l_val = result.trace.final_l_val;
    } else if (method == "exhaustive") {
      const ExhaustiveResult result = exhaustive_search(ctx.spec, train, val, ctx.registry,
                                                        &ctx.encoder, ctx.config.search);
      row.candidate_evals = result.candidates;
      row.models_trained = 1;
      row.best_l_val = result.l_val;
    } else {
      throw ConfigError("unknown benchmark method '" + method + "'");
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
                           .count();
    rows.push_back(std::move(row));
  }

  std::ofstream out(dir / "benchmark.csv");
  if (!out) throw std::runtime_error("cannot write benchmark.csv");
  out << "method,candidate_evals,models_trained,best_l_val,wall_seconds\n";
  char buffer[64];
  for (const Row& row : rows) {
    std::snprintf(buffer, sizeof buffer, "%.17g", row.best_l_val);
    out << row.method << ',' << row.candidate_evals << ',' << row.models_trained << ','
        << buffer << ',' << row.wall_seconds << '\n';
    std::printf("%-12s candidate_evals=%-8lld models_trained=%-4d best_l_val=%.6f (%.2fs)\n",
                row.method.c_str(), row.candidate_evals, row.models_trained, row.best_l_val,
                row.wall_seconds);
  }
  return 0;
}

int cmd_eval(RunContext& ctx) {
  const EvalFilesConfig& files = ctx.config.eval_files;
  if (files.policy.empty()) throw ConfigError("eval needs --policy FILE");
  if (files.checkpoint.empty()) throw ConfigError("eval needs --checkpoint FILE");
  if (!fs::exists(files.policy)) throw ConfigError("policy file does not exist: " + files.policy);
  if (!fs::exists(files.checkpoint))
    throw ConfigError("checkpoint file does not exist: " + files.checkpoint);

  // A forest file carries weights; a tree file does not.
  std::optional<Forest> forest;
  std::optional<AugTree> tree;
  try {
    std::ifstream probe(files.policy);
    const json doc = json::parse(probe);
    if (doc.contains("weights"))
      forest = load_forest(files.policy);
    else
      tree = load_tree(files.policy);
  } catch (const std::exception& error) {
    throw ConfigError("policy file " + files.policy + ": " + error.what());
  }
  Checkpoint checkpoint;
  try {
    checkpoint = load_checkpoint(files.checkpoint);
  } catch (const std::exception& error) {
    throw ConfigError(error.what());
  }

  const fs::path dir = prepare_run_dir(ctx, "eval");
  const std::vector<GroupStats> stats = compute_group_stats(ctx.dataset);
  EvalOptions eval;
  eval.mode = EvalMode::exact;
  eval.seed = mix(ctx.seed, 0xEA7);
  eval.threads = ctx.config.threads;

  std::ofstream out(dir / "eval.csv");
  if (!out) throw std::runtime_error("cannot write eval.csv");
  out << "group,val_loss,q\n";
  char buffer[64];
  double weighted = 0.0;
  for (const GroupStats& group : stats) {
    const DatasetView val = view_of(ctx.dataset, Split::val, group.group_id);
    const AugTree* policy = nullptr;
    if (forest) {
      policy = forest->tree_for(group.group_id);
      if (policy == nullptr)
        throw ConfigError("forest has no tree for group " + std::to_string(group.group_id));
    } else {
      policy = &*tree;
    }
    const double loss = group_loss(checkpoint.spec, checkpoint.theta, val, policy, ctx.registry,
                                   &ctx.encoder, eval);
    weighted += group.q * loss;
    std::snprintf(buffer, sizeof buffer, "%.17g", loss);
    out << group.group_id << ',' << buffer << ',' << group.q << '\n';
    std::printf("group %d val_loss %.6f (q=%.4f)\n", group.group_id, loss, group.q);
  }
  std::snprintf(buffer, sizeof buffer, "%.17g", weighted);
  out << "weighted," << buffer << ",1\n";
  std::printf("weighted val_loss %.6f\n", weighted);

  if (files.similarity) {
    std::vector<Eigen::MatrixXd> features;
    for (const GroupStats& group : stats) {
      const DatasetView val = view_of(ctx.dataset, Split::val, group.group_id);
      Eigen::MatrixXd matrix(static_cast<Eigen::Index>(val.size()),
                             checkpoint.spec.hidden_dim > 0 ? checkpoint.spec.hidden_dim
                                                            : checkpoint.spec.input_dim);
      for (std::size_t i = 0; i < val.size(); ++i) {
        const Eigen::VectorXd x =
            encode_sample(checkpoint.spec, &ctx.encoder, val.data->samples[val.indices[i]]);
        matrix.row(static_cast<Eigen::Index>(i)) =
            last_layer_features(checkpoint.spec, checkpoint.theta, x).transpose();
      }
      features.push_back(std::move(matrix));
    }
    std::ofstream sim(dir / "similarity.csv");
    if (!sim) throw std::runtime_error("cannot write similarity.csv");
    sim << "group_i,group_j,similarity\n";
    for (std::size_t i = 0; i < features.size(); ++i) {
      for (std::size_t j = 0; j < features.size(); ++j) {
        const double s = feature_similarity(features[i], features[j]);
        std::snprintf(buffer, sizeof buffer, "%.17g", s);
        sim << stats[i].group_id << ',' << stats[j].group_id << ',' << buffer << '\n';
        std::printf("similarity(%d, %d) = %.6f\n", stats[i].group_id, stats[j].group_id, s);
      }
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Augmentation-policy search and group-weighted forest training"};
  app.require_subcommand(1);

  std::string config_path, out_dir, run_name, synth, policy_file, checkpoint_file;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads, groups;
  bool similarity = false;

  const auto add_shared = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "JSON config file");
    cmd->add_option("--seed", seed, "Master seed (mandatory here or in the config)");
    cmd->add_option("--out", out_dir, "Output root directory");
    cmd->add_option("--name", run_name, "Run directory name (default: timestamp)");
    cmd->add_option("--threads", threads, "Worker threads (default 1, deterministic)");
    cmd->add_option("--synth", synth, "Synthetic dataset kind: gaussian | graphs");
    cmd->add_option("--groups", groups, "Group count for the gaussian synthetic");
  };
  CLI::App* search_cmd = app.add_subcommand("search", "Greedy augmentation-tree search");
  CLI::App* forest_cmd = app.add_subcommand("forest", "Per-group trees + weight learning");
  CLI::App* bench_cmd = app.add_subcommand("benchmark", "Greedy vs exhaustive comparison");
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a saved tree or forest");
  for (CLI::App* cmd : {search_cmd, forest_cmd, bench_cmd, eval_cmd}) add_shared(cmd);
  eval_cmd->add_option("--policy", policy_file, "tree.json or forest.json to evaluate");
  eval_cmd->add_option("--checkpoint", checkpoint_file, "Model checkpoint to evaluate with");
  eval_cmd->add_flag("--similarity", similarity, "Emit the group feature-similarity matrix");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& help) {
    return app.exit(help);
  } catch (const CLI::ParseError& error) {
    app.exit(error);
    return 2;
  }

  try {
    RunConfig config = load_run_config(config_path);
    if (seed) config.seed = *seed;
    if (!out_dir.empty()) config.out = out_dir;
    if (!run_name.empty()) config.name = run_name;
    if (threads) config.threads = *threads;
    if (!synth.empty()) {
      if (synth == "gaussian")
        config.dataset.kind = "synth_gaussian";
      else if (synth == "graphs")
        config.dataset.kind = "synth_graphs";
      else
        throw ConfigError("unknown --synth kind '" + synth + "'");
    }
    if (groups) config.dataset.gaussian.groups = *groups;
    if (!policy_file.empty()) config.eval_files.policy = policy_file;
    if (!checkpoint_file.empty()) config.eval_files.checkpoint = checkpoint_file;
    if (similarity) config.eval_files.similarity = true;

    RunContext ctx = make_context(std::move(config));
    if (*search_cmd) return cmd_search(ctx);
    if (*forest_cmd) return cmd_forest(ctx);
    if (*bench_cmd) return cmd_benchmark(ctx);
    if (*eval_cmd) return cmd_eval(ctx);
    throw ConfigError("no subcommand given");
  } catch (const ConfigError& error) {
    std::cerr << "config error: " << error.what() << "\n";
    return 2;
  } catch (const std::exception& error) {
    std::cerr << "error: " << error.what() << "\n";
    return 3;
  }
}
