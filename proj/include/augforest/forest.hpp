#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "augforest/data.hpp"
#include "augforest/model.hpp"
#include "augforest/policy.hpp"
#include "augforest/search.hpp"
#include "augforest/transforms.hpp"

namespace augforest {

// Outer/inner loop sizes for the alternating weight optimization. gamma = 0
// selects the probe-based automatic scaling; batch_size = 0 uses full
// deterministic batches in the Hessian recursion.
struct BilevelConfig {
  int outer_iters = 10;
  int inner_steps = 50;
  double inner_lr = 0.1;
  double eta = 0.1;
  double lambda_damp = 1e-3;
  int neumann_terms = 20;
  double gamma = 0.0;
  int batch_size = 32;
  std::vector<double> q;  // empirical train proportions when empty
  std::uint64_t seed = 0;
  int threads = 1;
};

// Raw Hessian-vector product for the mini-batch of the given recursion term.
// Implementations must be deterministic in (x, term).
using HvpOperator = std::function<Eigen::VectorXd(const Eigen::VectorXd& x, int term)>;

struct InvHvpConfig {
  double lambda_damp = 1e-3;
  int terms = 20;
  double gamma = 1.0;
};

// Neumann estimate of (H + lambda_damp I)^{-1} v: runs
//   A_0 = v,  A_j = v + A_{j-1} - gamma * (H_j + lambda_damp I) A_{j-1}
// and returns gamma * A_n. Errors out when an iterate norm exceeds
// 1e6 * max(1, ||v||), which indicates gamma is too large to contract.
Eigen::VectorXd inv_hvp(const HvpOperator& op, const Eigen::VectorXd& v,
                        const InvHvpConfig& config);

// gamma = 1 / (1 + lambda_damp + c) where c is the largest of 10 Rademacher
// curvature probes v' H v / v' v on the raw operator (clamped at 0).
double auto_gamma(const HvpOperator& op, int dim, double lambda_damp, std::uint64_t seed);

// d_i = -(sum_g q_g grad_g)' (H + lambda_damp I)^{-1} grad_i with the inverse
// applied by inv_hvp. Abstract core shared with the quadratic oracle.
std::vector<double> implicit_grad_core(const std::vector<Eigen::VectorXd>& group_grads,
                                       const std::vector<double>& q, const HvpOperator& op,
                                       const InvHvpConfig& config);

// One data group bound to its augmentation tree.
struct GroupBinding {
  int group_id = 0;
  DatasetView train;
  DatasetView val;
  const AugTree* tree = nullptr;
};

// Model-facing implicit gradient: per-group gradients and the weighted
// Hessian are taken on policy-expanded training batches (losses include the
// L2 term), mini-batched per recursion term from the w-weighted group
// mixture when batch_size > 0.
std::vector<double> implicit_grad(const ModelSpec& spec, const Eigen::VectorXd& theta,
                                  const std::vector<GroupBinding>& groups,
                                  const std::vector<double>& q, const std::vector<double>& w,
                                  const TransformRegistry& registry, const EncoderConfig* encoder,
                                  const BilevelConfig& config);

// Multiplicative-weights update w'_i proportional to w_i exp(-eta d_i),
// computed with max-subtraction and renormalized exactly.
std::vector<double> mirror_descent_step(const std::vector<double>& w,
                                        const std::vector<double>& d, double eta);

// N_w = (sum_g w_g^2 / n_g)^{-1}.
double effective_sample_size(const std::vector<double>& w, const std::vector<std::size_t>& sizes);

struct ForestHistoryRow {
  int iter = 0;
  double weighted_train_loss = 0.0;
  double val_loss = 0.0;
  std::vector<double> weights;
  double effective_n = 0.0;
};

struct ForestResult {
  Forest forest;
  Eigen::VectorXd theta;
  std::vector<double> q;
  std::vector<ForestHistoryRow> history;
  std::vector<SearchTrace> traces;
};

// Per-group tree search (independent seeds mixed from the master seed by
// group id), then outer_iters rounds of inner_steps SGD steps on the
// w-weighted mixture followed by one implicit-gradient mirror-descent update.
// eta = 0 skips the gradient entirely and reduces to uniform-weighted
// training. History row 0 records the state before any training.
ForestResult learn_forest(const ModelSpec& spec, const Dataset& dataset,
                          const TransformRegistry& registry, const EncoderConfig* encoder,
                          const SearchConfig& search_config, const BilevelConfig& config);

// CSV columns: iter,weighted_train_loss,val_loss,w_1..w_m,N_w.
void export_history_csv(const std::vector<ForestHistoryRow>& history,
                        const std::filesystem::path& path);

}  // namespace augforest
