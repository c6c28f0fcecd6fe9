#include "augforest/forest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <random>
#include <stdexcept>

#include "augforest/rng.hpp"

namespace augforest {

namespace {

void validate_bilevel(const BilevelConfig& config) {
  if (config.outer_iters < 0) throw std::invalid_argument("outer_iters must be >= 0");
  if (config.inner_steps < 0) throw std::invalid_argument("inner_steps must be >= 0");
  if (!(config.inner_lr > 0.0)) throw std::invalid_argument("inner_lr must be positive");
  if (!(config.eta >= 0.0)) throw std::invalid_argument("eta must be non-negative");
  if (!(config.lambda_damp > 0.0)) throw std::invalid_argument("lambda_damp must be positive");
  if (config.neumann_terms < 0) throw std::invalid_argument("neumann_terms must be >= 0");
  if (!(config.gamma >= 0.0 && config.gamma <= 1.0))
    throw std::invalid_argument("gamma must be 0 (auto) or in (0, 1]");
  if (config.batch_size < 0) throw std::invalid_argument("batch_size must be >= 0");
  if (config.threads < 1) throw std::invalid_argument("threads must be >= 1");
}

void check_simplex(const std::vector<double>& w, const char* what) {
  if (w.empty()) throw std::invalid_argument(std::string(what) + " is empty");
  double sum = 0.0;
  for (double value : w) {
    if (!(value >= 0.0)) throw std::invalid_argument(std::string(what) + " has negative entries");
    sum += value;
  }
  if (std::abs(sum - 1.0) > 1e-9)
    throw std::invalid_argument(std::string(what) + " must sum to 1");
}

}  // namespace

Eigen::VectorXd inv_hvp(const HvpOperator& op, const Eigen::VectorXd& v,
                        const InvHvpConfig& config) {
  if (!v.allFinite()) throw std::invalid_argument("inv_hvp input must be finite");
  if (!(config.gamma > 0.0 && config.gamma <= 1.0))
    throw std::invalid_argument("gamma must lie in (0, 1]");
  if (config.terms < 0) throw std::invalid_argument("terms must be >= 0");
  if (!(config.lambda_damp >= 0.0))
    throw std::invalid_argument("lambda_damp must be non-negative");
  const double guard = 1e6 * std::max(1.0, v.norm());
  Eigen::VectorXd a = v;
  for (int j = 1; j <= config.terms; ++j) {
    const Eigen::VectorXd damped = op(a, j) + config.lambda_damp * a;
    a = v + a - config.gamma * damped;
    if (!a.allFinite() || a.norm() > guard)
      throw std::runtime_error(
          "inverse-HVP recursion diverged; decrease gamma (the damped operator must contract)");
  }
  return config.gamma * a;
}

double auto_gamma(const HvpOperator& op, int dim, double lambda_damp, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("auto_gamma needs a positive dimension");
  auto eng = make_engine(mix(seed, 0x6A3));
  std::bernoulli_distribution coin(0.5);
  double curvature = 0.0;
  for (int probe = 0; probe < 10; ++probe) {
    Eigen::VectorXd v(dim);
    for (int i = 0; i < dim; ++i) v(i) = coin(eng) ? 1.0 : -1.0;
    const double quotient = v.dot(op(v, -(1 + probe))) / v.squaredNorm();
    curvature = std::max(curvature, quotient);
  }
  return 1.0 / (1.0 + lambda_damp + curvature);
}

std::vector<double> implicit_grad_core(const std::vector<Eigen::VectorXd>& group_grads,
                                       const std::vector<double>& q, const HvpOperator& op,
                                       const InvHvpConfig& config) {
  if (group_grads.empty()) throw std::invalid_argument("no group gradients");
  if (q.size() != group_grads.size())
    throw std::invalid_argument("q length does not match the number of groups");
  for (const Eigen::VectorXd& grad : group_grads)
    if (!grad.allFinite()) throw std::runtime_error("non-finite group gradient");

  Eigen::VectorXd v = Eigen::VectorXd::Zero(group_grads.front().size());
  for (std::size_t g = 0; g < group_grads.size(); ++g) v += q[g] * group_grads[g];
  const Eigen::VectorXd u = inv_hvp(op, v, config);
  std::vector<double> d(group_grads.size());
  for (std::size_t g = 0; g < group_grads.size(); ++g) d[g] = -group_grads[g].dot(u);
  return d;
}

std::vector<double> implicit_grad(const ModelSpec& spec, const Eigen::VectorXd& theta,
                                  const std::vector<GroupBinding>& groups,
                                  const std::vector<double>& q, const std::vector<double>& w,
                                  const TransformRegistry& registry, const EncoderConfig* encoder,
                                  const BilevelConfig& config) {
  validate_bilevel(config);
  if (groups.empty()) throw std::invalid_argument("implicit_grad needs at least one group");
  if (q.size() != groups.size() || w.size() != groups.size())
    throw std::invalid_argument("q and w must have one entry per group");
  check_simplex(q, "q");
  check_simplex(w, "w");

  const std::size_t m = groups.size();
  std::vector<EncodedBatch> batches(m);
  std::vector<Eigen::VectorXd> grads(m);
  for (std::size_t g = 0; g < m; ++g) {
    batches[g] = expand_policy_batch(spec, groups[g].train, groups[g].tree, registry, encoder,
                                     mix(config.seed, 0xE4B, g));
    grads[g] = batch_grad(spec, theta, batches[g]);
  }

  HvpOperator op;
  if (config.batch_size == 0) {
    // Each group's HVP carries the L2 term; the w-weighted sum keeps it
    // counted once because w sums to 1.
    op = [&](const Eigen::VectorXd& x, int) {
      Eigen::VectorXd total = Eigen::VectorXd::Zero(x.size());
      for (std::size_t g = 0; g < m; ++g) total += w[g] * batch_hvp(spec, theta, batches[g], x);
      return total;
    };
  } else {
    op = [&, b = config.batch_size](const Eigen::VectorXd& x, int term) {
      auto eng = make_engine(mix(config.seed, 0x48B7, static_cast<std::uint64_t>(term)));
      std::discrete_distribution<std::size_t> pick_group(w.begin(), w.end());
      EncodedBatch mini;
      mini.xs.reserve(static_cast<std::size_t>(b));
      const bool multilabel = spec.loss == LossKind::multilabel_bce;
      for (int i = 0; i < b; ++i) {
        const std::size_t g = pick_group(eng);
        std::discrete_distribution<std::size_t> pick_row(batches[g].weights.begin(),
                                                         batches[g].weights.end());
        const std::size_t row = pick_row(eng);
        mini.xs.push_back(batches[g].xs[row]);
        if (multilabel)
          mini.bits.push_back(batches[g].bits[row]);
        else
          mini.labels.push_back(batches[g].labels[row]);
      }
      return batch_hvp(spec, theta, mini, x);
    };
  }

  InvHvpConfig inv_config;
  inv_config.lambda_damp = config.lambda_damp;
  inv_config.terms = config.neumann_terms;
  inv_config.gamma = config.gamma;
  if (inv_config.gamma == 0.0)
    inv_config.gamma = auto_gamma(op, spec.param_count(), config.lambda_damp,
                                  mix(config.seed, 0x6A3));
  return implicit_grad_core(grads, q, op, inv_config);
}

std::vector<double> mirror_descent_step(const std::vector<double>& w,
                                        const std::vector<double>& d, double eta) {
  check_simplex(w, "w");
  if (d.size() != w.size()) throw std::invalid_argument("d length does not match w");
  for (double value : d)
    if (!std::isfinite(value)) throw std::invalid_argument("non-finite mirror-descent gradient");
  if (!(eta >= 0.0)) throw std::invalid_argument("eta must be non-negative");

  double max_exponent = -std::numeric_limits<double>::infinity();
  for (double value : d) max_exponent = std::max(max_exponent, -eta * value);
  std::vector<double> next(w.size());
  double z = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    next[i] = w[i] * std::exp(-eta * d[i] - max_exponent);
    z += next[i];
  }
  if (!(z > 0.0)) throw std::runtime_error("mirror-descent update collapsed to zero");
  for (double& value : next) value /= z;
  return next;
}

double effective_sample_size(const std::vector<double>& w,
                             const std::vector<std::size_t>& sizes) {
  check_simplex(w, "w");
  if (sizes.size() != w.size()) throw std::invalid_argument("sizes length does not match w");
  double total = 0.0;
  for (std::size_t g = 0; g < w.size(); ++g) {
    if (sizes[g] == 0) throw std::invalid_argument("group sizes must be >= 1");
    total += w[g] * w[g] / static_cast<double>(sizes[g]);
  }
  return 1.0 / total;
}

ForestResult learn_forest(const ModelSpec& spec, const Dataset& dataset,
                          const TransformRegistry& registry, const EncoderConfig* encoder,
                          const SearchConfig& search_config, const BilevelConfig& config) {
  validate_bilevel(config);
  validate_spec(spec);
  validate_dataset(dataset);

  const std::vector<int> group_ids = group_list(dataset);
  const std::size_t m = group_ids.size();
  if (m == 0) throw std::invalid_argument("dataset has no groups");

  ForestResult result;
  result.forest.group_ids = group_ids;

  std::vector<GroupBinding> bindings;
  bindings.reserve(m);
  for (int group : group_ids) {
    GroupBinding binding;
    binding.group_id = group;
    binding.train = view_of(dataset, Split::train, group);
    binding.val = view_of(dataset, Split::val, group);
    if (binding.train.indices.empty() || binding.val.indices.empty())
      throw std::invalid_argument("group " + std::to_string(group) +
                                  " needs train and val samples");
    bindings.push_back(std::move(binding));
  }

  // Independent per-group searches; nothing is shared between groups.
  for (std::size_t g = 0; g < m; ++g) {
    SearchConfig per_group = search_config;
    per_group.seed = mix(config.seed, static_cast<std::uint64_t>(group_ids[g]));
    SearchResult search = search_tree(spec, bindings[g].train, bindings[g].val, registry,
                                      encoder, per_group);
    result.forest.trees.push_back(std::move(search.tree));
    result.traces.push_back(std::move(search.trace));
  }
  for (std::size_t g = 0; g < m; ++g) bindings[g].tree = &result.forest.trees[g];

  // q: empirical training proportions unless overridden.
  if (config.q.empty()) {
    const std::vector<GroupStats> stats = compute_group_stats(dataset);
    result.q.resize(m);
    for (std::size_t g = 0; g < m; ++g) {
      const auto found = std::find_if(stats.begin(), stats.end(), [&](const GroupStats& s) {
        return s.group_id == group_ids[g];
      });
      result.q[g] = found->q;
    }
  } else {
    if (config.q.size() != m) throw std::invalid_argument("q override length mismatch");
    check_simplex(config.q, "q");
    result.q = config.q;
  }

  std::vector<double> w(m, 1.0 / static_cast<double>(m));
  Eigen::VectorXd theta = init_params(spec, mix(config.seed, 0xF0E3));

  EvalOptions eval;
  eval.mode = EvalMode::exact;
  eval.seed = mix(config.seed, 0xEA7);
  eval.threads = config.threads;

  std::vector<std::size_t> train_sizes(m);
  for (std::size_t g = 0; g < m; ++g) train_sizes[g] = bindings[g].train.indices.size();

  const auto record_row = [&](int iter) {
    ForestHistoryRow row;
    row.iter = iter;
    for (std::size_t g = 0; g < m; ++g) {
      row.weighted_train_loss += w[g] * group_loss(spec, theta, bindings[g].train,
                                                   bindings[g].tree, registry, encoder, eval);
      row.val_loss += result.q[g] * group_loss(spec, theta, bindings[g].val, bindings[g].tree,
                                               registry, encoder, eval);
    }
    row.weights = w;
    row.effective_n = effective_sample_size(w, train_sizes);
    result.history.push_back(std::move(row));
  };

  record_row(0);
  for (int t = 1; t <= config.outer_iters; ++t) {
    std::vector<PolicyGroup> policy_groups;
    policy_groups.reserve(m);
    for (std::size_t g = 0; g < m; ++g)
      policy_groups.push_back({bindings[g].train, bindings[g].tree, w[g]});
    TrainOptions train_options;
    train_options.steps = config.inner_steps;
    train_options.lr = config.inner_lr;
    train_options.batch_size = config.batch_size == 0 ? 32 : config.batch_size;
    train_options.seed = mix(config.seed, 0x7D1, static_cast<std::uint64_t>(t));
    theta = train_sgd(spec, std::move(theta), policy_groups, registry, encoder, train_options);

    if (config.eta > 0.0 && m > 1) {
      BilevelConfig step_config = config;
      step_config.seed = mix(config.seed, 0x16B, static_cast<std::uint64_t>(t));
      const std::vector<double> d =
          implicit_grad(spec, theta, bindings, result.q, w, registry, encoder, step_config);
      w = mirror_descent_step(w, d, config.eta);
    }
    record_row(t);
  }

  result.forest.weights = w;
  result.theta = theta;
  if (const auto problem = validate(result.forest))
    throw std::logic_error("internal forest invariant violation: " + *problem);
  return result;
}

void export_history_csv(const std::vector<ForestHistoryRow>& history,
                        const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::size_t m = history.empty() ? 0 : history.front().weights.size();
  out << "iter,weighted_train_loss,val_loss";
  for (std::size_t g = 1; g <= m; ++g) out << ",w_" << g;
  out << ",N_w\n";
  char buffer[64];
  const auto emit = [&](double value) {
    std::snprintf(buffer, sizeof buffer, "%.17g", value);
    out << buffer;
  };
  for (const ForestHistoryRow& row : history) {
    out << row.iter << ',';
    emit(row.weighted_train_loss);
    out << ',';
    emit(row.val_loss);
    for (double weight : row.weights) {
      out << ',';
      emit(weight);
    }
    out << ',';
    emit(row.effective_n);
    out << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

}  // namespace augforest
