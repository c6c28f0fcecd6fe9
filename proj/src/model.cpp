#include "augforest/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "augforest/parallel.hpp"
#include "augforest/rng.hpp"

namespace augforest {

namespace {

constexpr int kCheckpointVersion = 1;

using Eigen::Map;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Parameter layout: [W1 (h x in), b1, W2 (out x h), b2] for hidden models,
// [W (out x in), b] for linear ones. Matrices are column-major.
struct ParamView {
  Map<const MatrixXd> W1, W2;
  Map<const VectorXd> b1, b2;
};

ParamView view_params(const ModelSpec& spec, const double* p) {
  const int in = spec.input_dim, h = spec.hidden_dim, out = spec.num_outputs;
  if (h > 0) {
    return {Map<const MatrixXd>(p, h, in), Map<const MatrixXd>(p + h * in + h, out, h),
            Map<const VectorXd>(p + h * in, h), Map<const VectorXd>(p + h * in + h + out * h, out)};
  }
  return {Map<const MatrixXd>(p, out, in), Map<const MatrixXd>(p, 0, 0),
          Map<const VectorXd>(p + out * in, out), Map<const VectorXd>(p, 0)};
}

struct MutableParamView {
  Map<MatrixXd> W1, W2;
  Map<VectorXd> b1, b2;
};

MutableParamView view_params_mut(const ModelSpec& spec, double* p) {
  const int in = spec.input_dim, h = spec.hidden_dim, out = spec.num_outputs;
  if (h > 0) {
    return {Map<MatrixXd>(p, h, in), Map<MatrixXd>(p + h * in + h, out, h),
            Map<VectorXd>(p + h * in, h), Map<VectorXd>(p + h * in + h + out * h, out)};
  }
  return {Map<MatrixXd>(p, out, in), Map<MatrixXd>(p, 0, 0), Map<VectorXd>(p + out * in, out),
          Map<VectorXd>(p, 0)};
}

struct ForwardCache {
  VectorXd hidden;  // tanh activations, empty for linear models
  VectorXd z;       // logits
};

ForwardCache forward_cached(const ModelSpec& spec, const Eigen::VectorXd& theta,
                            const VectorXd& x) {
  const ParamView view = view_params(spec, theta.data());
  ForwardCache cache;
  if (spec.hidden_dim > 0) {
    cache.hidden = (view.W1 * x + view.b1).array().tanh().matrix();
    cache.z = view.W2 * cache.hidden + view.b2;
  } else {
    cache.z = view.W1 * x + view.b1;
  }
  return cache;
}

VectorXd softmax_of(const VectorXd& z) {
  const double m = z.maxCoeff();
  VectorXd s = (z.array() - m).exp();
  return s / s.sum();
}

double log_sum_exp(const VectorXd& z) {
  const double m = z.maxCoeff();
  return m + std::log((z.array() - m).exp().sum());
}

double stable_softplus(double z) { return std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z))); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

void check_targets(const ModelSpec& spec, int label, const std::vector<std::uint8_t>* bits) {
  if (spec.loss == LossKind::softmax_cross_entropy) {
    if (label < 0 || label >= spec.num_outputs)
      throw std::out_of_range("class label " + std::to_string(label) + " outside [0, " +
                              std::to_string(spec.num_outputs) + ")");
  } else {
    if (bits == nullptr) throw std::invalid_argument("multilabel loss needs multilabel targets");
    if (static_cast<int>(bits->size()) != spec.num_outputs)
      throw std::invalid_argument("multilabel target has " + std::to_string(bits->size()) +
                                  " entries, model expects " + std::to_string(spec.num_outputs));
  }
}

double data_loss_of(const ModelSpec& spec, const VectorXd& z, int label,
                    const std::vector<std::uint8_t>* bits) {
  if (spec.loss == LossKind::softmax_cross_entropy) return log_sum_exp(z) - z(label);
  double total = 0.0;
  for (int c = 0; c < spec.num_outputs; ++c) {
    const double y = (*bits)[static_cast<std::size_t>(c)] ? 1.0 : 0.0;
    total += stable_softplus(z(c)) - y * z(c);
  }
  return total / spec.num_outputs;
}

// d(data loss)/dz.
VectorXd loss_dz(const ModelSpec& spec, const VectorXd& z, int label,
                 const std::vector<std::uint8_t>* bits) {
  if (spec.loss == LossKind::softmax_cross_entropy) {
    VectorXd dz = softmax_of(z);
    dz(label) -= 1.0;
    return dz;
  }
  VectorXd dz(spec.num_outputs);
  for (int c = 0; c < spec.num_outputs; ++c) {
    const double y = (*bits)[static_cast<std::size_t>(c)] ? 1.0 : 0.0;
    dz(c) = (sigmoid(z(c)) - y) / spec.num_outputs;
  }
  return dz;
}

void check_batch(const ModelSpec& spec, const EncodedBatch& batch) {
  const std::size_t n = batch.xs.size();
  const bool multilabel = spec.loss == LossKind::multilabel_bce;
  if (multilabel ? batch.bits.size() != n : batch.labels.size() != n)
    throw std::invalid_argument("batch targets do not match batch size");
  if (!batch.weights.empty() && batch.weights.size() != n)
    throw std::invalid_argument("batch weights do not match batch size");
}

double batch_weight(const EncodedBatch& batch, std::size_t i) {
  return batch.weights.empty() ? 1.0 / static_cast<double>(batch.xs.size()) : batch.weights[i];
}

// Accumulates weight * d(data loss)/dtheta for one example into grad.
void accumulate_grad(const ModelSpec& spec, const Eigen::VectorXd& theta, const VectorXd& x,
                     const ForwardCache& cache, const VectorXd& dz, double weight,
                     Eigen::VectorXd& grad) {
  MutableParamView g = view_params_mut(spec, grad.data());
  if (spec.hidden_dim > 0) {
    const ParamView view = view_params(spec, theta.data());
    g.W2.noalias() += weight * dz * cache.hidden.transpose();
    g.b2 += weight * dz;
    const VectorXd dh = view.W2.transpose() * dz;
    const VectorXd da =
        (dh.array() * (1.0 - cache.hidden.array() * cache.hidden.array())).matrix();
    g.W1.noalias() += weight * da * x.transpose();
    g.b1 += weight * da;
  } else {
    g.W1.noalias() += weight * dz * x.transpose();
    g.b1 += weight * dz;
  }
}

const Sample& view_sample(const DatasetView& view, std::size_t position) {
  return view.data->samples[view.indices[position]];
}

int view_label(const DatasetView& view, std::size_t position) {
  const auto& labels = view.data->labels;
  return labels.empty() ? -1 : labels[view.indices[position]];
}

const std::vector<std::uint8_t>* view_bits(const DatasetView& view, std::size_t position) {
  const auto& multi = view.data->multilabels;
  return multi.empty() ? nullptr : &multi[view.indices[position]];
}

std::vector<PathRealization> realizations_of(const AugTree* tree) {
  if (tree == nullptr || tree->empty()) return {PathRealization{{}, 1.0}};
  return enumerate_paths(*tree);
}

void require_eval_seed(const AugTree* tree, const TransformRegistry& registry,
                       const std::optional<std::uint64_t>& seed) {
  if (seed.has_value()) return;
  if (tree != nullptr && tree_has_stochastic_transform(*tree, registry))
    throw std::invalid_argument("exact evaluation of a stochastic policy needs a seed");
}

}  // namespace

std::string loss_kind_name(LossKind kind) {
  return kind == LossKind::softmax_cross_entropy ? "softmax_cross_entropy" : "multilabel_bce";
}

LossKind loss_kind_from_name(const std::string& name) {
  if (name == "softmax_cross_entropy") return LossKind::softmax_cross_entropy;
  if (name == "multilabel_bce") return LossKind::multilabel_bce;
  throw std::invalid_argument("unknown loss kind '" + name + "'");
}

int ModelSpec::param_count() const {
  if (hidden_dim > 0)
    return hidden_dim * input_dim + hidden_dim + num_outputs * hidden_dim + num_outputs;
  return num_outputs * input_dim + num_outputs;
}

void validate_spec(const ModelSpec& spec) {
  if (spec.input_dim < 1) throw std::invalid_argument("input_dim must be positive");
  if (spec.hidden_dim < 0) throw std::invalid_argument("hidden_dim must be non-negative");
  const int min_outputs = spec.loss == LossKind::softmax_cross_entropy ? 2 : 1;
  if (spec.num_outputs < min_outputs)
    throw std::invalid_argument("num_outputs too small for the chosen loss");
  if (!(spec.lambda_reg >= 0.0)) throw std::invalid_argument("lambda_reg must be non-negative");
}

int encoded_dim(int feature_dim) { return feature_dim + 3; }

Eigen::VectorXd encode_graph(const EncoderConfig& config, const Graph& graph) {
  if (config.rounds < 0) throw std::invalid_argument("encoder rounds must be non-negative");
  const int n = graph.node_count;
  if (n == 0) return VectorXd::Zero(3);
  const int d = static_cast<int>(graph.features.front().size());
  MatrixXd h(n, d);
  for (int v = 0; v < n; ++v)
    for (int j = 0; j < d; ++j) h(v, j) = graph.features[static_cast<std::size_t>(v)][j];

  std::vector<std::vector<int>> neighbors(static_cast<std::size_t>(n));
  for (const auto& [a, b] : graph.edges) {
    neighbors[static_cast<std::size_t>(a)].push_back(b);
    neighbors[static_cast<std::size_t>(b)].push_back(a);
  }
  for (int round = 0; round < config.rounds; ++round) {
    MatrixXd next(n, d);
    for (int v = 0; v < n; ++v) {
      const auto& adj = neighbors[static_cast<std::size_t>(v)];
      if (adj.empty()) {
        next.row(v) = h.row(v);
        continue;
      }
      Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
      for (int u : adj) mean += h.row(u);
      mean /= static_cast<double>(adj.size());
      next.row(v) = 0.5 * (h.row(v) + mean);
    }
    h = std::move(next);
  }

  VectorXd out(d + 3);
  out.head(d) = h.colwise().mean().transpose();
  out(d) = std::log1p(static_cast<double>(n));
  out(d + 1) = graph.avg_degree();
  out(d + 2) = graph.edge_density();
  return out;
}

Eigen::VectorXd encode_sample(const ModelSpec& spec, const EncoderConfig* encoder,
                              const Sample& sample) {
  VectorXd x;
  if (std::holds_alternative<VectorSample>(sample)) {
    const auto& values = std::get<VectorSample>(sample);
    x = Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
  } else {
    if (encoder == nullptr)
      throw std::invalid_argument("graph samples need an encoder config");
    x = encode_graph(*encoder, std::get<Graph>(sample));
  }
  if (x.size() != spec.input_dim)
    throw std::invalid_argument("encoded dimension " + std::to_string(x.size()) +
                                " does not match model input_dim " +
                                std::to_string(spec.input_dim));
  return x;
}

Eigen::VectorXd init_params(const ModelSpec& spec, std::uint64_t seed) {
  validate_spec(spec);
  VectorXd theta = VectorXd::Zero(spec.param_count());
  if (spec.hidden_dim == 0) return theta;  // convex problem, zero start
  auto eng = make_engine(mix(seed, 0x1217));
  std::normal_distribution<double> normal(0.0, 1.0);
  MutableParamView view = view_params_mut(spec, theta.data());
  const double s1 = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(spec.hidden_dim));
  for (int j = 0; j < view.W1.cols(); ++j)
    for (int i = 0; i < view.W1.rows(); ++i) view.W1(i, j) = s1 * normal(eng);
  for (int j = 0; j < view.W2.cols(); ++j)
    for (int i = 0; i < view.W2.rows(); ++i) view.W2(i, j) = s2 * normal(eng);
  return theta;
}

Eigen::VectorXd forward(const ModelSpec& spec, const Eigen::VectorXd& theta,
                        const Eigen::VectorXd& x) {
  if (theta.size() != spec.param_count())
    throw std::invalid_argument("theta size does not match model spec");
  if (x.size() != spec.input_dim)
    throw std::invalid_argument("input dimension does not match model spec");
  return forward_cached(spec, theta, x).z;
}

Eigen::VectorXd last_layer_features(const ModelSpec& spec, const Eigen::VectorXd& theta,
                                    const Eigen::VectorXd& x) {
  if (spec.hidden_dim == 0) return x;
  return forward_cached(spec, theta, x).hidden;
}

double sample_data_loss(const ModelSpec& spec, const Eigen::VectorXd& theta,
                        const Eigen::VectorXd& x, int label,
                        const std::vector<std::uint8_t>* bits) {
  check_targets(spec, label, bits);
  return data_loss_of(spec, forward_cached(spec, theta, x).z, label, bits);
}

double batch_loss(const ModelSpec& spec, const Eigen::VectorXd& theta, const EncodedBatch& batch) {
  check_batch(spec, batch);
  double total = 0.0;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int label = batch.labels.empty() ? -1 : batch.labels[i];
    const std::vector<std::uint8_t>* bits = batch.bits.empty() ? nullptr : &batch.bits[i];
    check_targets(spec, label, bits);
    total += batch_weight(batch, i) *
             data_loss_of(spec, forward_cached(spec, theta, batch.xs[i]).z, label, bits);
  }
  return total + 0.5 * spec.lambda_reg * theta.squaredNorm();
}

Eigen::VectorXd batch_grad(const ModelSpec& spec, const Eigen::VectorXd& theta,
                           const EncodedBatch& batch) {
  check_batch(spec, batch);
  VectorXd grad = VectorXd::Zero(spec.param_count());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const int label = batch.labels.empty() ? -1 : batch.labels[i];
    const std::vector<std::uint8_t>* bits = batch.bits.empty() ? nullptr : &batch.bits[i];
    check_targets(spec, label, bits);
    const ForwardCache cache = forward_cached(spec, theta, batch.xs[i]);
    const VectorXd dz = loss_dz(spec, cache.z, label, bits);
    accumulate_grad(spec, theta, batch.xs[i], cache, dz, batch_weight(batch, i), grad);
  }
  grad += spec.lambda_reg * theta;
  return grad;
}

Eigen::VectorXd batch_hvp(const ModelSpec& spec, const Eigen::VectorXd& theta,
                          const EncodedBatch& batch, const Eigen::VectorXd& v) {
  check_batch(spec, batch);
  if (v.size() != spec.param_count())
    throw std::invalid_argument("direction size does not match model spec");
  const double norm = v.norm();
  if (norm == 0.0) return VectorXd::Zero(v.size());

  if (spec.hidden_dim == 0) {
    // Exact Gauss form: H_data v = sum_i w_i (J_i' dz_i) with
    // dz_i = d2(loss)/dz2 applied to (V x_i + vb).
    const ParamView dir = view_params(spec, v.data());
    VectorXd out = VectorXd::Zero(v.size());
    MutableParamView acc = view_params_mut(spec, out.data());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const int label = batch.labels.empty() ? -1 : batch.labels[i];
      const std::vector<std::uint8_t>* bits = batch.bits.empty() ? nullptr : &batch.bits[i];
      check_targets(spec, label, bits);
      const VectorXd& x = batch.xs[i];
      const VectorXd z = forward_cached(spec, theta, x).z;
      const VectorXd dzv = dir.W1 * x + dir.b1;
      VectorXd u(spec.num_outputs);
      if (spec.loss == LossKind::softmax_cross_entropy) {
        const VectorXd s = softmax_of(z);
        u = (s.array() * dzv.array()).matrix() - s * s.dot(dzv);
      } else {
        for (int c = 0; c < spec.num_outputs; ++c) {
          const double s = sigmoid(z(c));
          u(c) = s * (1.0 - s) / spec.num_outputs * dzv(c);
        }
      }
      const double w = batch_weight(batch, i);
      acc.W1.noalias() += w * u * x.transpose();
      acc.b1 += w * u;
    }
    out += spec.lambda_reg * v;
    return out;
  }

  const VectorXd unit = v / norm;
  const double h = 1e-5 * (1.0 + theta.norm());
  const VectorXd plus = batch_grad(spec, theta + h * unit, batch);
  const VectorXd minus = batch_grad(spec, theta - h * unit, batch);
  return (plus - minus) * (norm / (2.0 * h));
}

Eigen::VectorXd train_sgd(const ModelSpec& spec, Eigen::VectorXd theta,
                          const std::vector<PolicyGroup>& groups,
                          const TransformRegistry& registry, const EncoderConfig* encoder,
                          const TrainOptions& options) {
  validate_spec(spec);
  if (theta.size() != spec.param_count())
    throw std::invalid_argument("theta size does not match model spec");
  if (groups.empty()) throw std::invalid_argument("train_sgd needs at least one group");
  if (options.steps < 0 || options.batch_size < 1 || !(options.lr > 0.0))
    throw std::invalid_argument("invalid training options");
  double weight_sum = 0.0;
  for (const PolicyGroup& group : groups) {
    if (group.view.indices.empty()) throw std::invalid_argument("training group is empty");
    if (!(group.weight >= 0.0)) throw std::invalid_argument("group weight must be non-negative");
    weight_sum += group.weight;
  }
  if (std::abs(weight_sum - 1.0) > 1e-9)
    throw std::invalid_argument("group weights must sum to 1");

  auto eng = make_engine(mix(options.seed, 0x7EA1));
  const double inv_batch = 1.0 / static_cast<double>(options.batch_size);
  for (int step = 0; step < options.steps; ++step) {
    VectorXd grad = spec.lambda_reg * theta;
    for (const PolicyGroup& group : groups) {
      if (group.weight == 0.0) {
        // Keep the draw count fixed so zero-weight groups do not shift RNG.
        std::uniform_int_distribution<std::size_t> pick(0, group.view.indices.size() - 1);
        for (int b = 0; b < options.batch_size; ++b) {
          (void)pick(eng);
          (void)eng();
        }
        continue;
      }
      std::uniform_int_distribution<std::size_t> pick(0, group.view.indices.size() - 1);
      for (int b = 0; b < options.batch_size; ++b) {
        const std::size_t position = pick(eng);
        const std::uint64_t policy_seed = eng();
        Sample sample = view_sample(group.view, position);
        if (group.tree != nullptr && !group.tree->empty())
          sample = apply_policy(*group.tree, sample, registry, policy_seed);
        const VectorXd x = encode_sample(spec, encoder, sample);
        const int label = view_label(group.view, position);
        const std::vector<std::uint8_t>* bits = view_bits(group.view, position);
        check_targets(spec, label, bits);
        const ForwardCache cache = forward_cached(spec, theta, x);
        const VectorXd dz = loss_dz(spec, cache.z, label, bits);
        accumulate_grad(spec, theta, x, cache, dz, group.weight * inv_batch, grad);
      }
    }
    theta -= options.lr * grad;
  }
  return theta;
}

double group_loss(const ModelSpec& spec, const Eigen::VectorXd& theta, const DatasetView& view,
                  const AugTree* tree, const TransformRegistry& registry,
                  const EncoderConfig* encoder, const EvalOptions& options) {
  validate_spec(spec);
  const std::size_t n = view.indices.size();
  if (n == 0) throw std::invalid_argument("group_loss needs a non-empty view");

  std::vector<double> per_sample(n, 0.0);
  if (options.mode == EvalMode::exact) {
    require_eval_seed(tree, registry, options.seed);
    const std::vector<PathRealization> paths = realizations_of(tree);
    const std::uint64_t base = options.seed.value_or(0);
    parallel_for(n, options.threads, [&](std::size_t i) {
      const Sample& original = view_sample(view, i);
      const int label = view_label(view, i);
      const std::vector<std::uint8_t>* bits = view_bits(view, i);
      check_targets(spec, label, bits);
      double total = 0.0;
      for (const PathRealization& path : paths) {
        const Sample transformed =
            path.applied.empty()
                ? original
                : apply_realization(path.applied, original, registry, mix(base, i));
        const VectorXd x = encode_sample(spec, encoder, transformed);
        total += path.probability *
                 data_loss_of(spec, forward_cached(spec, theta, x).z, label, bits);
      }
      per_sample[i] = total;
    });
  } else {
    if (!options.seed.has_value())
      throw std::invalid_argument("Monte Carlo evaluation needs a seed");
    if (options.mc_draws < 1) throw std::invalid_argument("mc_draws must be positive");
    const std::uint64_t base = *options.seed;
    parallel_for(n, options.threads, [&](std::size_t i) {
      const Sample& original = view_sample(view, i);
      const int label = view_label(view, i);
      const std::vector<std::uint8_t>* bits = view_bits(view, i);
      check_targets(spec, label, bits);
      double total = 0.0;
      for (int r = 0; r < options.mc_draws; ++r) {
        // Draw seeds depend only on (sample, draw), so alternative policies
        // evaluated with the same options share random numbers.
        const Sample transformed = tree == nullptr || tree->empty()
                                       ? original
                                       : apply_policy(*tree, original, registry, mix(base, i, r));
        const VectorXd x = encode_sample(spec, encoder, transformed);
        total += data_loss_of(spec, forward_cached(spec, theta, x).z, label, bits);
      }
      per_sample[i] = total / options.mc_draws;
    });
  }

  double mean = 0.0;
  for (double value : per_sample) mean += value;
  mean /= static_cast<double>(n);
  return mean + 0.5 * spec.lambda_reg * theta.squaredNorm();
}

EncodedBatch expand_policy_batch(const ModelSpec& spec, const DatasetView& view,
                                 const AugTree* tree, const TransformRegistry& registry,
                                 const EncoderConfig* encoder,
                                 std::optional<std::uint64_t> seed) {
  validate_spec(spec);
  require_eval_seed(tree, registry, seed);
  const std::vector<PathRealization> paths = realizations_of(tree);
  const std::size_t n = view.indices.size();
  const std::uint64_t base = seed.value_or(0);
  const bool multilabel = spec.loss == LossKind::multilabel_bce;

  EncodedBatch batch;
  batch.xs.reserve(n * paths.size());
  batch.weights.reserve(n * paths.size());
  for (std::size_t i = 0; i < n; ++i) {
    const Sample& original = view_sample(view, i);
    const int label = view_label(view, i);
    const std::vector<std::uint8_t>* bits = view_bits(view, i);
    check_targets(spec, label, bits);
    for (const PathRealization& path : paths) {
      const Sample transformed =
          path.applied.empty() ? original
                               : apply_realization(path.applied, original, registry, mix(base, i));
      batch.xs.push_back(encode_sample(spec, encoder, transformed));
      batch.weights.push_back(path.probability / static_cast<double>(n));
      if (multilabel)
        batch.bits.push_back(*bits);
      else
        batch.labels.push_back(label);
    }
  }
  return batch;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  validate_spec(checkpoint.spec);
  if (checkpoint.theta.size() != checkpoint.spec.param_count())
    throw std::invalid_argument("checkpoint theta does not match its spec");
  nlohmann::json doc = {
      {"version", kCheckpointVersion},
      {"spec",
       {{"input_dim", checkpoint.spec.input_dim},
        {"hidden_dim", checkpoint.spec.hidden_dim},
        {"num_outputs", checkpoint.spec.num_outputs},
        {"loss", loss_kind_name(checkpoint.spec.loss)},
        {"lambda_reg", checkpoint.spec.lambda_reg}}},
      {"theta", std::vector<double>(checkpoint.theta.data(),
                                    checkpoint.theta.data() + checkpoint.theta.size())},
      {"step", checkpoint.step},
      {"seed", checkpoint.seed}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << doc.dump(2) << "\n";
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  try {
    const nlohmann::json doc = nlohmann::json::parse(in);
    if (doc.at("version").get<int>() != kCheckpointVersion)
      throw std::runtime_error("unsupported checkpoint version");
    const nlohmann::json& spec_doc = doc.at("spec");
    Checkpoint checkpoint;
    checkpoint.spec.input_dim = spec_doc.at("input_dim").get<int>();
    checkpoint.spec.hidden_dim = spec_doc.at("hidden_dim").get<int>();
    checkpoint.spec.num_outputs = spec_doc.at("num_outputs").get<int>();
    checkpoint.spec.loss = loss_kind_from_name(spec_doc.at("loss").get<std::string>());
    checkpoint.spec.lambda_reg = spec_doc.at("lambda_reg").get<double>();
    validate_spec(checkpoint.spec);
    const auto values = doc.at("theta").get<std::vector<double>>();
    if (static_cast<int>(values.size()) != checkpoint.spec.param_count())
      throw std::runtime_error("checkpoint theta does not match its spec");
    checkpoint.theta =
        Map<const VectorXd>(values.data(), static_cast<Eigen::Index>(values.size()));
    checkpoint.step = doc.at("step").get<long>();
    checkpoint.seed = doc.at("seed").get<std::uint64_t>();
    return checkpoint;
  } catch (const nlohmann::json::exception& error) {
    throw std::runtime_error("malformed checkpoint file " + path.string() + ": " + error.what());
  }
}

}  // namespace augforest
