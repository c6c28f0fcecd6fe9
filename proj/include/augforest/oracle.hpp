#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "augforest/forest.hpp"
#include "augforest/model.hpp"
#include "augforest/policy.hpp"
#include "augforest/search.hpp"

namespace augforest {

struct ExhaustiveResult {
  AugTree tree;
  double l_val = 0.0;
  long long candidates = 0;
  Eigen::VectorXd theta;
  // Canonical-order labels and losses for the comparison report.
  std::vector<std::string> labels;
  std::vector<double> l_vals;
};

// Enumerates every depth <= d_max tree over the non-identity candidates and
// the probability grid (sibling probability forced to the complement),
// evaluates each against one converged model trained on unaugmented data,
// and returns the canonical-order argmin. d_max must be 1 or 2 and the
// candidate count is capped at 1e5.
ExhaustiveResult exhaustive_search(const ModelSpec& spec, const DatasetView& train,
                                   const DatasetView& val, const TransformRegistry& registry,
                                   const EncoderConfig* encoder, const SearchConfig& config);

// Closed-form candidate count for the exhaustive enumeration.
long long exhaustive_candidate_count(int num_transforms_excl_identity, int num_probs, int d_max);

// candidate,l_val,rank rows sorted by loss.
void export_exhaustive_csv(const ExhaustiveResult& result, const std::filesystem::path& path);

struct FdGradConfig {
  double epsilon = 1e-3;
  double inner_tol = 1e-9;   // gradient-norm target of the inner Newton solve
  int max_newton_iters = 100;
  std::uint64_t seed = 0;    // policy-expansion seeds, matching implicit_grad
};

// Central difference of the outer objective F(w) = sum_g q_g L_g(theta*(w))
// along the renormalized perturbation w(t) = (w + t e_i)/(1 + t), i.e. an
// estimate of grad F . (e_i - w). The inner problem is re-solved to
// inner_tol by damped Newton for each of the two perturbed weights.
double fd_implicit_grad(const ModelSpec& spec, const std::vector<GroupBinding>& groups,
                        const std::vector<double>& q, const std::vector<double>& w,
                        std::size_t i, const TransformRegistry& registry,
                        const EncoderConfig* encoder, const FdGradConfig& config);

// Dense solve of (H + lambda_damp I) x = v. H is materialized column by
// column through the operator (term 0), symmetrized, and eigendecomposed;
// a non-positive damped spectrum is an error. dim must be <= 500.
Eigen::VectorXd exact_inv_hvp(const HvpOperator& op, int dim, const Eigen::VectorXd& v,
                              double lambda_damp);

// Subspace similarity of two feature matrices (rows = examples): truncated
// eigendecompositions of X'X keep the smallest rank holding 99% of the
// eigenvalue sum; s = ||M_i' M_j||_F / (||M_i||_F ||M_j||_F) with
// M = U_r diag(lambda_r)^{1/2}. Symmetric, in [0, 1], 0 on orthogonal
// supports, invariant under a common orthogonal rotation.
double feature_similarity(const Eigen::MatrixXd& features_i, const Eigen::MatrixXd& features_j);

struct McEnumReport {
  double mc = 0.0;     // Monte Carlo estimate (data loss)
  double exact = 0.0;  // enumeration value (data loss)
  double gap = 0.0;
  double sigma_hat = 0.0;  // pooled std of per-draw deviations from exact
  double bound = 0.0;      // 3 sigma_hat / sqrt(draws)
  bool ok = false;
  int draws = 0;
};

// Compares mc(draws) against exact enumeration on a deterministic-transform
// tree. A fully deterministic tree yields a gap of exactly 0.
McEnumReport mc_vs_enum_check(const ModelSpec& spec, const Eigen::VectorXd& theta,
                              const DatasetView& val, const AugTree& tree,
                              const TransformRegistry& registry, const EncoderConfig* encoder,
                              int draws, std::uint64_t seed, int threads = 1);

}  // namespace augforest
