#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "augforest/data.hpp"
#include "augforest/policy.hpp"
#include "augforest/transforms.hpp"

namespace augforest {

enum class LossKind { softmax_cross_entropy, multilabel_bce };

std::string loss_kind_name(LossKind kind);
LossKind loss_kind_from_name(const std::string& name);

// hidden_dim == 0 means a linear model (logits = W x + b); otherwise a single
// tanh hidden layer. lambda_reg scales the L2 penalty ||theta||^2 / 2, which
// every loss/gradient/HVP routine counts exactly once per batch.
struct ModelSpec {
  int input_dim = 0;
  int hidden_dim = 0;
  int num_outputs = 2;
  LossKind loss = LossKind::softmax_cross_entropy;
  double lambda_reg = 0.0;

  int param_count() const;
};

void validate_spec(const ModelSpec& spec);

// Mean-neighbor message passing: `rounds` updates of
//   h_v <- (h_v + mean_{u in N(v)} h_u) / 2    (isolated nodes keep h_v),
// then mean pooling over nodes plus [log1p(n), avg_degree, edge_density].
// Encoded dimension is feature_dim + 3. There are no learned parameters.
struct EncoderConfig {
  int rounds = 2;
};

int encoded_dim(int feature_dim);
Eigen::VectorXd encode_graph(const EncoderConfig& config, const Graph& graph);

// Vector samples pass through (dimension must equal spec.input_dim); graph
// samples are encoded, which requires a non-null encoder config.
Eigen::VectorXd encode_sample(const ModelSpec& spec, const EncoderConfig* encoder,
                              const Sample& sample);

// One evaluation batch in encoded space. `weights` must sum to 1 (uniform
// 1/n when empty); `bits` is used instead of `labels` for multilabel loss.
struct EncodedBatch {
  std::vector<Eigen::VectorXd> xs;
  std::vector<int> labels;
  std::vector<std::vector<std::uint8_t>> bits;
  std::vector<double> weights;

  std::size_t size() const { return xs.size(); }
};

Eigen::VectorXd init_params(const ModelSpec& spec, std::uint64_t seed);

Eigen::VectorXd forward(const ModelSpec& spec, const Eigen::VectorXd& theta,
                        const Eigen::VectorXd& x);

// Penultimate representation used for feature-space comparisons: the tanh
// hidden activation, or the input itself for linear models.
Eigen::VectorXd last_layer_features(const ModelSpec& spec, const Eigen::VectorXd& theta,
                                    const Eigen::VectorXd& x);

double sample_data_loss(const ModelSpec& spec, const Eigen::VectorXd& theta,
                        const Eigen::VectorXd& x, int label,
                        const std::vector<std::uint8_t>* bits);

// Weighted data loss plus the L2 penalty (added once).
double batch_loss(const ModelSpec& spec, const Eigen::VectorXd& theta, const EncodedBatch& batch);

// Exact analytic gradient of batch_loss.
Eigen::VectorXd batch_grad(const ModelSpec& spec, const Eigen::VectorXd& theta,
                           const EncodedBatch& batch);

// Hessian-vector product of batch_loss. Exact closed form for linear models;
// central finite differences of batch_grad with step 1e-5 * (1 + ||theta||)
// along the normalized direction otherwise.
Eigen::VectorXd batch_hvp(const ModelSpec& spec, const Eigen::VectorXd& theta,
                          const EncodedBatch& batch, const Eigen::VectorXd& v);

// A data group bound to the augmentation policy used when sampling from it.
// tree == nullptr means no augmentation. Weights are mixture coefficients for
// the training objective and must sum to 1 across groups.
struct PolicyGroup {
  DatasetView view;
  const AugTree* tree = nullptr;
  double weight = 1.0;
};

struct TrainOptions {
  int steps = 400;
  double lr = 0.1;
  int batch_size = 32;
  std::uint64_t seed = 0;
};

// Plain SGD on the weighted group mixture: each step draws one batch per
// group (uniform with replacement), pushes every drawn sample through that
// group's policy, and descends sum_g w_g grad_g. Deterministic in the seed.
Eigen::VectorXd train_sgd(const ModelSpec& spec, Eigen::VectorXd theta,
                          const std::vector<PolicyGroup>& groups,
                          const TransformRegistry& registry, const EncoderConfig* encoder,
                          const TrainOptions& options);

enum class EvalMode { exact, mc };

// `seed` feeds stochastic transforms (exact mode) and path draws (mc mode).
// Exact mode without a seed is allowed only for deterministic trees.
struct EvalOptions {
  EvalMode mode = EvalMode::exact;
  int mc_draws = 100;
  std::optional<std::uint64_t> seed;
  int threads = 1;
};

// Expected loss of the policy-augmented group:
//   exact: per sample, sum over enumerated realizations weighted by their
//     probabilities (sample i uses per-step substreams of mix(seed, i));
//   mc: mean over mc_draws policy applications per sample, draw r of sample i
//     seeded mix(seed, i, r) so candidate policies share random numbers.
double group_loss(const ModelSpec& spec, const Eigen::VectorXd& theta, const DatasetView& view,
                  const AugTree* tree, const TransformRegistry& registry,
                  const EncoderConfig* encoder, const EvalOptions& options);

// Expands a group into one encoded row per (sample, realization) with weight
// P(realization)/n, so batch_loss/grad/hvp on the result equal the exact
// policy-augmented quantities. Stochastic transforms require a seed.
EncodedBatch expand_policy_batch(const ModelSpec& spec, const DatasetView& view,
                                 const AugTree* tree, const TransformRegistry& registry,
                                 const EncoderConfig* encoder, std::optional<std::uint64_t> seed);

struct Checkpoint {
  ModelSpec spec;
  Eigen::VectorXd theta;
  long step = 0;
  std::uint64_t seed = 0;
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace augforest
