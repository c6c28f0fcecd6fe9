#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "augforest/oracle.hpp"
#include "augforest/rng.hpp"

using namespace augforest;

namespace {

ModelSpec linear_spec(double lambda_reg = 1e-3) {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.hidden_dim = 0;
  spec.num_outputs = 2;
  spec.loss = LossKind::softmax_cross_entropy;
  spec.lambda_reg = lambda_reg;
  return spec;
}

Dataset rotated_dataset(std::uint64_t seed) {
  GaussianGroupsSpec spec;
  spec.groups = 1;
  spec.n_per_group = 120;
  spec.mean_dist = 2.0;
  spec.noise_std = 0.25;
  spec.shifts = {{0.0, -36.0, 1.0, 0.0}};
  return synth_gaussian_groups(spec, seed);
}

Dataset unshifted_dataset(std::uint64_t seed) {
  GaussianGroupsSpec spec;
  spec.groups = 1;
  spec.n_per_group = 120;
  spec.mean_dist = 2.0;
  spec.noise_std = 0.25;
  return synth_gaussian_groups(spec, seed);
}

// Two groups whose class boundaries disagree, so the group gradients differ
// and the projected implicit gradient has signal.
Dataset two_group_dataset(std::uint64_t seed) {
  GaussianGroupsSpec spec;
  spec.groups = 2;
  spec.n_per_group = 40;
  spec.mean_dist = 1.5;
  spec.noise_std = 0.4;
  spec.shifts = {{0.0, 0.0, 1.0, 0.0}, {60.0, 0.0, 1.0, 0.0}};
  return synth_gaussian_groups(spec, seed);
}

HvpOperator diag_operator(const Eigen::VectorXd& diag) {
  return [diag](const Eigen::VectorXd& x, int) -> Eigen::VectorXd {
    return diag.cwiseProduct(x);
  };
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

// Newton solve of the w-weighted inner problem on the given expanded
// batches; requires a strictly convex spec.
Eigen::VectorXd newton_optimum(const ModelSpec& spec, const std::vector<EncodedBatch>& batches,
                               const std::vector<double>& w) {
  const int p = spec.param_count();
  Eigen::VectorXd theta = Eigen::VectorXd::Zero(p);
  for (int iter = 0; iter < 100; ++iter) {
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(p);
    for (std::size_t g = 0; g < batches.size(); ++g)
      grad += w[g] * batch_grad(spec, theta, batches[g]);
    if (grad.norm() < 1e-12) return theta;
    Eigen::MatrixXd hess(p, p);
    for (int j = 0; j < p; ++j) {
      Eigen::VectorXd basis = Eigen::VectorXd::Zero(p);
      basis[j] = 1.0;
      Eigen::VectorXd column = Eigen::VectorXd::Zero(p);
      for (std::size_t g = 0; g < batches.size(); ++g)
        column += w[g] * batch_hvp(spec, theta, batches[g], basis);
      hess.col(j) = column;
    }
    theta -= hess.ldlt().solve(grad);
  }
  return theta;
}

}  // namespace

TEST_CASE("exhaustive candidate counts") {
  CHECK(exhaustive_candidate_count(2, 3, 1) == 7);
  CHECK(exhaustive_candidate_count(2, 3, 2) == 115);
  CHECK(exhaustive_candidate_count(5, 5, 2) == 3776);
  CHECK(exhaustive_candidate_count(2, 2, 2) == 1 + 4 + 16 + 32);
}

TEST_CASE("exhaustive search finds the corrective rotation at depth one") {
  const Dataset ds = rotated_dataset(21);
  const DatasetView train = view_of(ds, Split::train);
  const DatasetView val = view_of(ds, Split::val);
  const ModelSpec spec = linear_spec();
  const TransformRegistry registry = default_vector_registry();

  SearchConfig config;
  config.d_max = 1;
  config.candidates = {"rotate2d@0.1", "rotate2d@0.2"};
  config.prob_grid = {0.5, 1.0};
  config.train.steps = 300;
  config.train.batch_size = 16;
  config.seed = 7;

  const ExhaustiveResult result = exhaustive_search(spec, train, val, registry, nullptr, config);
  CHECK(result.candidates == 5);
  REQUIRE(result.l_vals.size() == 5);
  REQUIRE(result.labels.size() == 5);
  CHECK(result.labels.front() == "empty");

  double min_l = result.l_vals.front();
  for (double l : result.l_vals) min_l = std::min(min_l, l);
  CHECK(result.l_val == min_l);

  REQUIRE(result.tree.contains(1));
  CHECK(result.tree.node(1)->transform.transform_id == "rotate2d@0.2");
  CHECK(result.tree.node(1)->prob == 1.0);
  CHECK(validate(result.tree) == std::nullopt);

  const ExhaustiveResult again = exhaustive_search(spec, train, val, registry, nullptr, config);
  CHECK(again.l_val == result.l_val);
  CHECK(tree_to_json(again.tree) == tree_to_json(result.tree));
}

TEST_CASE("exhaustive search returns the empty tree when nothing helps") {
  const Dataset ds = unshifted_dataset(13);
  const DatasetView train = view_of(ds, Split::train);
  const DatasetView val = view_of(ds, Split::val);
  const ModelSpec spec = linear_spec();
  const TransformRegistry registry = default_vector_registry();

  SearchConfig config;
  config.d_max = 1;
  config.candidates = {"translate@0.5"};
  config.prob_grid = {0.5, 1.0};
  config.train.steps = 300;
  config.train.batch_size = 16;
  config.seed = 7;

  const ExhaustiveResult result = exhaustive_search(spec, train, val, registry, nullptr, config);
  CHECK(result.tree.empty());
  CHECK(result.l_val == result.l_vals.front());
}

TEST_CASE("exhaustive search guards its budget and depth") {
  const Dataset ds = unshifted_dataset(13);
  const DatasetView train = view_of(ds, Split::train);
  const DatasetView val = view_of(ds, Split::val);
  const ModelSpec spec = linear_spec();
  const TransformRegistry registry = default_vector_registry();

  SearchConfig config;  // default grid, every registry transform
  config.d_max = 2;
  CHECK_THROWS_WITH_AS(exhaustive_search(spec, train, val, registry, nullptr, config),
                       doctest::Contains("exhaustive budget exceeded"), std::runtime_error);

  config.candidates = {"rotate2d@0.2"};
  config.prob_grid = {0.5, 1.0};
  config.d_max = 3;
  CHECK_THROWS_AS(exhaustive_search(spec, train, val, registry, nullptr, config),
                  std::invalid_argument);
}

TEST_CASE("exhaustive CSV is sorted by loss with dense ranks") {
  ExhaustiveResult result;
  result.labels = {"empty", "1:rotate2d@0.2@1", "1:translate@0.3@0.5"};
  result.l_vals = {0.5, 0.25, 0.75};
  const auto path = std::filesystem::temp_directory_path() / "augforest_exhaustive_test.csv";
  export_exhaustive_csv(result, path);
  const std::string text = read_file(path);
  CHECK(text.find("candidate,l_val,rank\n") == 0);
  CHECK(text.find("1:rotate2d@0.2@1,0.25,1\n") != std::string::npos);
  CHECK(text.find("empty,0.5,2\n") != std::string::npos);
  CHECK(text.find("1:translate@0.3@0.5,0.75,3\n") != std::string::npos);
  std::filesystem::remove(path);
}

TEST_CASE("dense inverse HVP solves damped diagonal systems") {
  Eigen::VectorXd diag(4);
  diag << 0.5, 1.0, 2.0, 4.0;
  Eigen::VectorXd v(4);
  v << 1.0, -1.0, 2.0, 0.5;
  const double lambda = 0.25;

  const Eigen::VectorXd x = exact_inv_hvp(diag_operator(diag), 4, v, lambda);
  const Eigen::VectorXd expected = v.cwiseQuotient(diag.array().operator+(lambda).matrix());
  CHECK((x - expected).norm() <= 1e-10);

  // Residual of the damped system is tiny.
  const Eigen::VectorXd residual = diag.cwiseProduct(x) + lambda * x - v;
  CHECK(residual.norm() <= 1e-10);
}

TEST_CASE("dense inverse HVP rejects indefinite and oversized systems") {
  Eigen::VectorXd negative(3);
  negative << 1.0, -2.0, 0.5;
  Eigen::VectorXd v = Eigen::VectorXd::Ones(3);
  CHECK_THROWS_WITH_AS(exact_inv_hvp(diag_operator(negative), 3, v, 1e-3),
                       doctest::Contains("indefinite damped matrix"), std::runtime_error);

  CHECK_THROWS_AS(exact_inv_hvp(diag_operator(v), 3, Eigen::VectorXd::Ones(2), 1e-3),
                  std::invalid_argument);
  const auto identity_op = [](const Eigen::VectorXd& x, int) { return x; };
  CHECK_THROWS_AS(exact_inv_hvp(identity_op, 501, Eigen::VectorXd::Ones(501), 1e-3),
                  std::invalid_argument);
}

TEST_CASE("finite differences confirm the implicit gradient") {
  const Dataset ds = two_group_dataset(31);
  const ModelSpec spec = linear_spec(0.1);
  const TransformRegistry registry = default_vector_registry();

  std::vector<GroupBinding> groups;
  for (int id : {1, 2}) {
    GroupBinding binding;
    binding.group_id = id;
    binding.train = view_of(ds, Split::train, id);
    binding.val = view_of(ds, Split::val, id);
    binding.tree = nullptr;
    groups.push_back(std::move(binding));
  }
  const std::vector<double> q = {0.6, 0.4};
  const std::vector<double> w = {0.5, 0.5};

  BilevelConfig config;
  config.lambda_damp = 1e-4;
  config.neumann_terms = 800;
  config.gamma = 0.0;  // probe-based automatic step
  config.batch_size = 0;
  config.seed = 31;

  // The implicit formula assumes theta solves the w-weighted inner problem.
  std::vector<EncodedBatch> batches;
  for (std::size_t g = 0; g < groups.size(); ++g)
    batches.push_back(expand_policy_batch(spec, groups[g].train, groups[g].tree, registry,
                                          nullptr, mix(config.seed, 0xE4B, g)));
  const Eigen::VectorXd theta_star = newton_optimum(spec, batches, w);

  const std::vector<double> d =
      implicit_grad(spec, theta_star, groups, q, w, registry, nullptr, config);
  REQUIRE(d.size() == 2);
  const double drift = d[0] * w[0] + d[1] * w[1];

  FdGradConfig fd_config;
  fd_config.epsilon = 1e-3;
  fd_config.seed = config.seed;
  for (std::size_t i = 0; i < groups.size(); ++i) {
    const double fd = fd_implicit_grad(spec, groups, q, w, i, registry, nullptr, fd_config);
    const double projected = d[i] - drift;
    const double scale = std::max({std::abs(fd), std::abs(projected), 1e-3});
    CHECK(std::abs(fd - projected) <= 0.05 * scale);
  }
}

TEST_CASE("finite-difference oracle validates its inputs") {
  const Dataset ds = two_group_dataset(31);
  const TransformRegistry registry = default_vector_registry();
  std::vector<GroupBinding> groups;
  for (int id : {1, 2}) {
    GroupBinding binding;
    binding.group_id = id;
    binding.train = view_of(ds, Split::train, id);
    binding.val = view_of(ds, Split::val, id);
    groups.push_back(std::move(binding));
  }

  FdGradConfig config;
  CHECK_THROWS_WITH_AS(
      fd_implicit_grad(linear_spec(0.0), groups, {0.5, 0.5}, {0.5, 0.5}, 0, registry, nullptr,
                       config),
      doctest::Contains("strictly convex"), std::invalid_argument);

  config.epsilon = 0.6;  // larger than w_i
  CHECK_THROWS_AS(fd_implicit_grad(linear_spec(0.1), groups, {0.5, 0.5}, {0.5, 0.5}, 0, registry,
                                   nullptr, config),
                  std::invalid_argument);
  config.epsilon = 1e-3;
  CHECK_THROWS_AS(fd_implicit_grad(linear_spec(0.1), groups, {1.0}, {0.5, 0.5}, 0, registry,
                                   nullptr, config),
                  std::invalid_argument);
  CHECK_THROWS_AS(fd_implicit_grad(linear_spec(0.1), groups, {0.5, 0.5}, {0.5, 0.5}, 2, registry,
                                   nullptr, config),
                  std::invalid_argument);
}

TEST_CASE("feature similarity is a symmetric rotation-invariant score") {
  std::mt19937_64 engine(5);
  std::normal_distribution<double> dist(0.0, 1.0);
  Eigen::MatrixXd a(40, 6), b(40, 6);
  for (int i = 0; i < 40; ++i)
    for (int j = 0; j < 6; ++j) {
      a(i, j) = dist(engine);
      b(i, j) = dist(engine);
    }

  const double ab = feature_similarity(a, b);
  const double ba = feature_similarity(b, a);
  CHECK(ab == doctest::Approx(ba).epsilon(1e-12));
  CHECK(ab >= 0.0);
  CHECK(ab <= 1.0);

  // A shared rank-one structure scores exactly 1.
  Eigen::MatrixXd rank_one = Eigen::MatrixXd::Zero(10, 4);
  for (int i = 0; i < 10; ++i) rank_one(i, 1) = static_cast<double>(i + 1);
  CHECK(feature_similarity(rank_one, 2.0 * rank_one) == doctest::Approx(1.0).epsilon(1e-10));

  // Orthogonal supports score exactly 0.
  Eigen::MatrixXd left = Eigen::MatrixXd::Zero(8, 4);
  Eigen::MatrixXd right = Eigen::MatrixXd::Zero(8, 4);
  for (int i = 0; i < 8; ++i) {
    left(i, 0) = 1.0 + i;
    left(i, 1) = 2.0 - i;
    right(i, 2) = 1.0 + i;
    right(i, 3) = 0.5 * i;
  }
  CHECK(feature_similarity(left, right) == doctest::Approx(0.0).epsilon(1e-12));

  // A common orthogonal rotation of the feature space changes nothing.
  Eigen::MatrixXd rotation(6, 6);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j) rotation(i, j) = dist(engine);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(rotation);
  const Eigen::MatrixXd orthogonal = qr.householderQ();
  CHECK(feature_similarity(a * orthogonal, b * orthogonal) ==
        doctest::Approx(ab).epsilon(1e-10));

  CHECK_THROWS_WITH_AS(feature_similarity(Eigen::MatrixXd::Zero(5, 6), a),
                       doctest::Contains("zero feature matrix"), std::invalid_argument);
  Eigen::MatrixXd narrow = Eigen::MatrixXd::Ones(5, 3);
  CHECK_THROWS_AS(feature_similarity(narrow, a), std::invalid_argument);
}

TEST_CASE("Monte Carlo and enumeration agree") {
  const Dataset ds = unshifted_dataset(17);
  const DatasetView val = view_of(ds, Split::val);
  const ModelSpec spec = linear_spec();
  const TransformRegistry registry = default_vector_registry();
  // Distinct entries keep the per-path losses genuinely different; a
  // constant theta would collapse every softmax loss to ln 2.
  Eigen::VectorXd theta = init_params(spec, 3);
  for (int i = 0; i < theta.size(); ++i) theta[i] = 0.3 * std::sin(1.7 * i + 0.4);

  // Probability-one chain: every draw realizes the same path, so the Monte
  // Carlo average equals the enumeration bit for bit.
  AugTree chain;
  chain.insert(1, {"rotate2d@0.2", 0}, 1.0);
  const McEnumReport exact_report =
      mc_vs_enum_check(spec, theta, val, chain, registry, nullptr, 50, 7);
  CHECK(exact_report.gap == 0.0);
  CHECK(exact_report.sigma_hat == 0.0);
  CHECK(exact_report.ok);
  CHECK(exact_report.draws == 50);
  CHECK(exact_report.mc == exact_report.exact);

  // Branching tree: the gap is statistical and bounded by three sigmas.
  AugTree branching;
  branching.insert(1, {"rotate2d@0.2", 0}, 0.6);
  branching.insert(2, {"translate@0.3", 0}, 0.5);
  const McEnumReport stochastic_report =
      mc_vs_enum_check(spec, theta, val, branching, registry, nullptr, 2000, 7);
  CHECK(stochastic_report.ok);
  CHECK(stochastic_report.sigma_hat > 0.0);
  CHECK(std::abs(stochastic_report.gap) <= stochastic_report.bound);

  const McEnumReport replay =
      mc_vs_enum_check(spec, theta, val, branching, registry, nullptr, 2000, 7);
  CHECK(replay.mc == stochastic_report.mc);

  // The empty tree degenerates to the plain loss.
  AugTree empty;
  const McEnumReport empty_report =
      mc_vs_enum_check(spec, theta, val, empty, registry, nullptr, 10, 7);
  CHECK(empty_report.gap == 0.0);
  CHECK(empty_report.ok);

  AugTree stochastic_tree;
  stochastic_tree.insert(1, {"jitter_gaussian@0.2", 0}, 0.5);
  CHECK_THROWS_AS(mc_vs_enum_check(spec, theta, val, stochastic_tree, registry, nullptr, 10, 7),
                  std::invalid_argument);
  CHECK_THROWS_AS(mc_vs_enum_check(spec, theta, val, chain, registry, nullptr, 0, 7),
                  std::invalid_argument);
}
