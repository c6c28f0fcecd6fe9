#include "augforest/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "augforest/parallel.hpp"
#include "augforest/rng.hpp"

namespace augforest {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// One enumerated tree: transform/prob indices per slot, -1 when absent.
// Shapes: 0 = empty, 1 = {1}, 2 = {1,2}, 3 = {1,2,3}.
struct CandidateSpec {
  int shape = 0;
  int a1 = -1, p1 = -1;
  int a2 = -1, p2 = -1;
  int a3 = -1;
};

AugTree materialize(const CandidateSpec& c, const std::vector<const Transformation*>& pool,
                    const std::vector<double>& probs, int d_max) {
  AugTree tree;
  tree.set_d_max(d_max);
  if (c.shape >= 1) tree.insert(1, {pool[c.a1]->id, 0}, probs[c.p1]);
  if (c.shape >= 2) tree.insert(2, {pool[c.a2]->id, 0}, probs[c.p2]);
  if (c.shape >= 3) tree.insert(3, {pool[c.a3]->id, 0}, 1.0 - probs[c.p2]);
  return tree;
}

std::string label_of(const AugTree& tree) {
  if (tree.empty()) return "empty";
  std::string label;
  char buffer[64];
  for (const auto& [index, node] : tree.nodes()) {
    if (!label.empty()) label += '|';
    std::snprintf(buffer, sizeof buffer, "%d:%s@%g", index, node.transform.transform_id.c_str(),
                  node.prob);
    label += buffer;
  }
  return label;
}

double weighted_loss(const ModelSpec& spec, const VectorXd& theta,
                     const std::vector<EncodedBatch>& batches, const std::vector<double>& w) {
  double total = 0.0;
  for (std::size_t g = 0; g < batches.size(); ++g)
    total += w[g] * batch_loss(spec, theta, batches[g]);
  return total;
}

VectorXd weighted_grad(const ModelSpec& spec, const VectorXd& theta,
                       const std::vector<EncodedBatch>& batches, const std::vector<double>& w) {
  VectorXd total = VectorXd::Zero(spec.param_count());
  for (std::size_t g = 0; g < batches.size(); ++g)
    total += w[g] * batch_grad(spec, theta, batches[g]);
  return total;
}

// Damped Newton with Armijo backtracking; strictly convex objectives only.
VectorXd solve_inner(const ModelSpec& spec, const std::vector<EncodedBatch>& batches,
                     const std::vector<double>& w, double tol, int max_iters) {
  const int p = spec.param_count();
  if (p > 500) throw std::invalid_argument("inner solve limited to 500 parameters");
  VectorXd theta = VectorXd::Zero(p);
  for (int iter = 0; iter < max_iters; ++iter) {
    const VectorXd grad = weighted_grad(spec, theta, batches, w);
    if (grad.norm() <= tol) return theta;
    MatrixXd hessian(p, p);
    for (int j = 0; j < p; ++j) {
      VectorXd basis = VectorXd::Zero(p);
      basis(j) = 1.0;
      VectorXd column = VectorXd::Zero(p);
      for (std::size_t g = 0; g < batches.size(); ++g)
        column += w[g] * batch_hvp(spec, theta, batches[g], basis);
      hessian.col(j) = column;
    }
    hessian = 0.5 * (hessian + hessian.transpose());
    const VectorXd step = hessian.ldlt().solve(grad);
    const double base = weighted_loss(spec, theta, batches, w);
    const double slope = grad.dot(step);
    double scale = 1.0;
    bool moved = false;
    for (int half = 0; half < 40; ++half) {
      const VectorXd candidate = theta - scale * step;
      if (weighted_loss(spec, candidate, batches, w) <= base - 1e-4 * scale * slope) {
        theta = candidate;
        moved = true;
        break;
      }
      scale *= 0.5;
    }
    if (!moved) throw std::runtime_error("inner solve stalled before reaching tolerance");
  }
  const VectorXd grad = weighted_grad(spec, theta, batches, w);
  if (grad.norm() <= tol) return theta;
  throw std::runtime_error("inner solve failed to reach tolerance");
}

}  // namespace

long long exhaustive_candidate_count(int num_transforms_excl_identity, int num_probs,
                                     int d_max) {
  const long long K = num_transforms_excl_identity;
  const long long P = num_probs;
  if (d_max == 1) return 1 + K * P;
  return 1 + K * P + K * K * P * P + K * K * K * P * P;
}

ExhaustiveResult exhaustive_search(const ModelSpec& spec, const DatasetView& train,
                                   const DatasetView& val, const TransformRegistry& registry,
                                   const EncoderConfig* encoder, const SearchConfig& config) {
  validate_spec(spec);
  if (config.d_max < 1 || config.d_max > 2)
    throw std::invalid_argument("exhaustive search supports d_max 1 or 2 only");
  if (config.prob_grid.empty()) throw std::invalid_argument("probability grid is empty");
  if (train.indices.empty() || val.indices.empty())
    throw std::invalid_argument("exhaustive search needs non-empty train and val views");

  std::vector<const Transformation*> pool;
  if (config.candidates.empty()) {
    for (const Transformation& entry : registry.entries())
      if (!entry.is_identity()) pool.push_back(&entry);
  } else {
    for (const std::string& id : config.candidates) {
      const Transformation& entry = registry.at(id);
      if (!entry.is_identity()) pool.push_back(&entry);
    }
  }
  if (pool.empty()) throw std::invalid_argument("no non-identity candidate transforms");

  const int K = static_cast<int>(pool.size());
  const int P = static_cast<int>(config.prob_grid.size());
  const long long total = exhaustive_candidate_count(K, P, config.d_max);
  if (total > 100000)
    throw std::runtime_error("exhaustive budget exceeded: " + std::to_string(total) +
                             " candidates (limit 100000)");

  // Canonical order: empty, single node, chain {1,2}, full pair {1,2,3};
  // inner loops run transforms then probabilities, slot by slot.
  std::vector<CandidateSpec> candidates;
  candidates.reserve(static_cast<std::size_t>(total));
  candidates.push_back({});
  for (int a1 = 0; a1 < K; ++a1)
    for (int p1 = 0; p1 < P; ++p1) candidates.push_back({1, a1, p1, -1, -1, -1});
  if (config.d_max == 2) {
    for (int a1 = 0; a1 < K; ++a1)
      for (int p1 = 0; p1 < P; ++p1)
        for (int a2 = 0; a2 < K; ++a2)
          for (int p2 = 0; p2 < P; ++p2) candidates.push_back({2, a1, p1, a2, p2, -1});
    for (int a1 = 0; a1 < K; ++a1)
      for (int p1 = 0; p1 < P; ++p1)
        for (int a2 = 0; a2 < K; ++a2)
          for (int p2 = 0; p2 < P; ++p2)
            for (int a3 = 0; a3 < K; ++a3) candidates.push_back({3, a1, p1, a2, p2, a3});
  }

  ExhaustiveResult result;
  result.candidates = total;

  TrainOptions train_options = config.train;
  train_options.seed = mix(config.seed, 0x7411);
  result.theta = train_sgd(spec, init_params(spec, mix(config.seed, 0x1D17)),
                           {{train, nullptr, 1.0}}, registry, encoder, train_options);

  EvalOptions eval = config.eval;
  eval.seed = mix(config.seed, 0xE7A1);
  eval.threads = 1;

  result.l_vals.assign(candidates.size(), 0.0);
  parallel_for(candidates.size(), config.threads, [&](std::size_t c) {
    const AugTree tree = materialize(candidates[c], pool, config.prob_grid, config.d_max);
    result.l_vals[c] = density_match_eval(spec, result.theta, tree, val, registry, encoder, eval);
  });

  std::size_t best = 0;
  for (std::size_t c = 1; c < candidates.size(); ++c)
    if (result.l_vals[c] < result.l_vals[best]) best = c;
  result.tree = materialize(candidates[best], pool, config.prob_grid, config.d_max);
  result.l_val = result.l_vals[best];

  result.labels.reserve(candidates.size());
  for (const CandidateSpec& c : candidates)
    result.labels.push_back(label_of(materialize(c, pool, config.prob_grid, config.d_max)));
  return result;
}

void export_exhaustive_csv(const ExhaustiveResult& result, const std::filesystem::path& path) {
  std::vector<std::size_t> order(result.l_vals.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return result.l_vals[a] < result.l_vals[b];
  });
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "candidate,l_val,rank\n";
  char buffer[64];
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    std::snprintf(buffer, sizeof buffer, "%.17g", result.l_vals[order[rank]]);
    out << result.labels[order[rank]] << ',' << buffer << ',' << rank + 1 << '\n';
  }
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

double fd_implicit_grad(const ModelSpec& spec, const std::vector<GroupBinding>& groups,
                        const std::vector<double>& q, const std::vector<double>& w,
                        std::size_t i, const TransformRegistry& registry,
                        const EncoderConfig* encoder, const FdGradConfig& config) {
  if (groups.empty()) throw std::invalid_argument("fd_implicit_grad needs groups");
  if (q.size() != groups.size() || w.size() != groups.size())
    throw std::invalid_argument("q and w must have one entry per group");
  if (i >= groups.size()) throw std::invalid_argument("group index out of range");
  if (!(config.epsilon > 0.0)) throw std::invalid_argument("epsilon must be positive");
  if (!(w[i] > config.epsilon))
    throw std::invalid_argument("w_i must exceed epsilon for the downward perturbation");
  if (!(spec.lambda_reg > 0.0))
    throw std::invalid_argument("fd_implicit_grad needs a strictly convex inner problem");

  // Same expansion seeds as implicit_grad so both differentiate one function.
  std::vector<EncodedBatch> batches(groups.size());
  for (std::size_t g = 0; g < groups.size(); ++g)
    batches[g] = expand_policy_batch(spec, groups[g].train, groups[g].tree, registry, encoder,
                                     mix(config.seed, 0xE4B, g));

  const auto objective_at = [&](double t) {
    std::vector<double> shifted = w;
    shifted[i] += t;
    for (double& value : shifted) value /= 1.0 + t;
    const VectorXd theta =
        solve_inner(spec, batches, shifted, config.inner_tol, config.max_newton_iters);
    return weighted_loss(spec, theta, batches, q);
  };

  const double plus = objective_at(config.epsilon);
  const double minus = objective_at(-config.epsilon);
  return (plus - minus) / (2.0 * config.epsilon);
}

Eigen::VectorXd exact_inv_hvp(const HvpOperator& op, int dim, const Eigen::VectorXd& v,
                              double lambda_damp) {
  if (dim < 1 || dim > 500) throw std::invalid_argument("exact_inv_hvp needs 1 <= dim <= 500");
  if (v.size() != dim) throw std::invalid_argument("v dimension mismatch");
  MatrixXd hessian(dim, dim);
  for (int j = 0; j < dim; ++j) {
    VectorXd basis = VectorXd::Zero(dim);
    basis(j) = 1.0;
    hessian.col(j) = op(basis, 0);
  }
  hessian = 0.5 * (hessian + hessian.transpose());
  Eigen::SelfAdjointEigenSolver<MatrixXd> eigen(hessian);
  if (eigen.info() != Eigen::Success)
    throw std::runtime_error("eigendecomposition failed");
  const VectorXd damped = eigen.eigenvalues().array() + lambda_damp;
  if (damped.minCoeff() <= 0.0)
    throw std::runtime_error("indefinite damped matrix: smallest damped eigenvalue is " +
                             std::to_string(damped.minCoeff()));
  const VectorXd projected = eigen.eigenvectors().transpose() * v;
  return eigen.eigenvectors() * (projected.array() / damped.array()).matrix();
}

namespace {

// Top eigenpairs of X'X holding >= 99% of the eigenvalue sum.
std::pair<MatrixXd, VectorXd> truncated_basis(const MatrixXd& features) {
  if (features.rows() < 1) throw std::invalid_argument("feature matrix needs rows");
  if (!features.allFinite()) throw std::invalid_argument("feature matrix must be finite");
  const MatrixXd covariance = features.transpose() * features;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eigen(covariance);
  VectorXd values = eigen.eigenvalues().cwiseMax(0.0);
  const double total = values.sum();
  if (!(total > 0.0)) throw std::invalid_argument("zero feature matrix");
  // Eigenvalues come back ascending; walk from the top.
  const int d = static_cast<int>(values.size());
  double mass = 0.0;
  int rank = 0;
  for (int j = d - 1; j >= 0; --j) {
    mass += values(j);
    ++rank;
    if (mass >= 0.99 * total) break;
  }
  MatrixXd basis(features.cols(), rank);
  VectorXd kept(rank);
  for (int r = 0; r < rank; ++r) {
    basis.col(r) = eigen.eigenvectors().col(d - 1 - r);
    kept(r) = values(d - 1 - r);
  }
  return {std::move(basis), std::move(kept)};
}

}  // namespace

double feature_similarity(const Eigen::MatrixXd& features_i, const Eigen::MatrixXd& features_j) {
  if (features_i.cols() != features_j.cols())
    throw std::invalid_argument("feature matrices must share a dimension");
  const auto [basis_i, values_i] = truncated_basis(features_i);
  const auto [basis_j, values_j] = truncated_basis(features_j);
  const MatrixXd m_i = basis_i * values_i.cwiseSqrt().asDiagonal();
  const MatrixXd m_j = basis_j * values_j.cwiseSqrt().asDiagonal();
  const double numerator = (m_i.transpose() * m_j).norm();
  const double denominator = m_i.norm() * m_j.norm();
  return std::min(numerator / denominator, 1.0);
}

McEnumReport mc_vs_enum_check(const ModelSpec& spec, const Eigen::VectorXd& theta,
                              const DatasetView& val, const AugTree& tree,
                              const TransformRegistry& registry, const EncoderConfig* encoder,
                              int draws, std::uint64_t seed, int threads) {
  validate_spec(spec);
  if (draws < 1) throw std::invalid_argument("draws must be positive");
  if (val.indices.empty()) throw std::invalid_argument("empty validation view");
  if (tree_has_stochastic_transform(tree, registry))
    throw std::invalid_argument("mc_vs_enum_check needs a deterministic-transform tree");

  const std::vector<PathRealization> paths =
      tree.empty() ? std::vector<PathRealization>{{{}, 1.0}} : enumerate_paths(tree);
  const std::size_t n = val.indices.size();
  const bool multilabel = spec.loss == LossKind::multilabel_bce;

  std::vector<double> exact_i(n, 0.0), mc_i(n, 0.0), dev_sum(n, 0.0), dev_sq(n, 0.0);
  parallel_for(n, threads, [&](std::size_t i) {
    const Sample& original = val.data->samples[val.indices[i]];
    const int label = val.data->labels.empty() ? -1 : val.data->labels[val.indices[i]];
    const std::vector<std::uint8_t>* bits =
        multilabel ? &val.data->multilabels[val.indices[i]] : nullptr;
    const auto loss_of = [&](const Sample& sample) {
      const VectorXd x = encode_sample(spec, encoder, sample);
      return sample_data_loss(spec, theta, x, label, bits);
    };
    double exact = 0.0;
    for (const PathRealization& path : paths) {
      const Sample transformed =
          path.applied.empty() ? original : apply_realization(path.applied, original, registry, 0);
      exact += path.probability * loss_of(transformed);
    }
    // Deviations accumulate around the exact value so a deterministic tree
    // (every draw identical) yields mc == exact bit for bit.
    double deviation_sum = 0.0, deviation_sq = 0.0;
    for (int r = 0; r < draws; ++r) {
      const Sample transformed =
          tree.empty() ? original
                       : apply_policy(tree, original, registry,
                                      mix(seed, i, static_cast<std::uint64_t>(r)));
      const double deviation = loss_of(transformed) - exact;
      deviation_sum += deviation;
      deviation_sq += deviation * deviation;
    }
    exact_i[i] = exact;
    mc_i[i] = exact + deviation_sum / draws;
    dev_sum[i] = deviation_sum;
    dev_sq[i] = deviation_sq;
  });

  McEnumReport report;
  report.draws = draws;
  double total_sum = 0.0, total_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    report.exact += exact_i[i];
    report.mc += mc_i[i];
    total_sum += dev_sum[i];
    total_sq += dev_sq[i];
  }
  report.exact /= static_cast<double>(n);
  report.mc /= static_cast<double>(n);
  report.gap = std::abs(report.mc - report.exact);
  const double count = static_cast<double>(n) * draws;
  if (count > 1.5) {
    const double variance =
        std::max(0.0, (total_sq - total_sum * total_sum / count) / (count - 1.0));
    report.sigma_hat = std::sqrt(variance);
  }
  report.bound = 3.0 * report.sigma_hat / std::sqrt(static_cast<double>(draws));
  report.ok = report.gap <= report.bound;
  return report;
}

}  // namespace augforest
