#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "augforest/forest.hpp"
#include "augforest/rng.hpp"

using namespace augforest;

namespace {

ModelSpec linear_spec() {
  ModelSpec spec;
  spec.input_dim = 2;
  spec.hidden_dim = 0;
  spec.num_outputs = 2;
  spec.loss = LossKind::softmax_cross_entropy;
  spec.lambda_reg = 1e-3;
  return spec;
}

// Two groups with byte-identical samples and split patterns, so any
// group-asymmetric behaviour can only come from the algorithm itself.
Dataset mirrored_two_group_dataset() {
  Dataset ds;
  ds.num_classes = 2;
  std::mt19937_64 engine(99);
  std::normal_distribution<double> noise(0.0, 0.3);
  std::vector<VectorSample> base;
  std::vector<int> labels;
  for (int i = 0; i < 40; ++i) {
    const int label = i % 2;
    const double center = label == 0 ? -1.0 : 1.0;
    base.push_back({center + noise(engine), noise(engine)});
    labels.push_back(label);
  }
  for (int group : {1, 2}) {
    for (int i = 0; i < 40; ++i) {
      ds.samples.push_back(base[i]);
      ds.labels.push_back(labels[i]);
      ds.group_ids.push_back(group);
      ds.splits.push_back(i < 30 ? Split::train : Split::val);
    }
  }
  return ds;
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

}  // namespace

TEST_CASE("mirror descent matches the hand-computed exponential update") {
  // w = (1/2, 1/2), d = (1, 0), eta = ln 2: exp factors (1/2, 1) give
  // (1/4, 1/2) before normalization, hence (1/3, 2/3).
  const auto next = mirror_descent_step({0.5, 0.5}, {1.0, 0.0}, std::log(2.0));
  REQUIRE(next.size() == 2);
  CHECK(next[0] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(next[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  CHECK(next[0] + next[1] == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("mirror descent input validation") {
  CHECK_THROWS_AS(mirror_descent_step({0.5, 0.5}, {1.0}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(
      mirror_descent_step({0.5, 0.5}, {std::numeric_limits<double>::quiet_NaN(), 0.0}, 0.1),
      std::invalid_argument);
  CHECK_THROWS_AS(
      mirror_descent_step({0.5, 0.5}, {std::numeric_limits<double>::infinity(), 0.0}, 0.1),
      std::invalid_argument);
  CHECK_THROWS_AS(mirror_descent_step({0.7, 0.7}, {0.0, 0.0}, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(mirror_descent_step({0.5, 0.5}, {0.0, 0.0}, -0.1), std::invalid_argument);

  // eta = 0 leaves the weights unchanged.
  const auto same = mirror_descent_step({0.25, 0.75}, {3.0, -1.0}, 0.0);
  CHECK(same[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(same[1] == doctest::Approx(0.75).epsilon(1e-15));

  // Large exponents survive thanks to max subtraction.
  const auto extreme = mirror_descent_step({0.5, 0.5}, {5000.0, -5000.0}, 1.0);
  CHECK(extreme[1] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::isfinite(extreme[0]));
}

TEST_CASE("effective sample size") {
  // (0.8, 0.2) over two groups of 100: 1 / (0.64/100 + 0.04/100) = 100/0.68.
  CHECK(effective_sample_size({0.8, 0.2}, {100, 100}) ==
        doctest::Approx(100.0 / 0.68).epsilon(1e-12));
  // Uniform weights over m groups of n recover the full count m * n.
  CHECK(effective_sample_size({0.25, 0.25, 0.25, 0.25}, {50, 50, 50, 50}) ==
        doctest::Approx(200.0).epsilon(1e-12));
  CHECK_THROWS_AS(effective_sample_size({1.0}, {10, 10}), std::invalid_argument);
  CHECK_THROWS_AS(effective_sample_size({0.5, 0.5}, {0, 10}), std::invalid_argument);
}

TEST_CASE("inverse-Hessian recursion is exact for the identity operator") {
  Eigen::VectorXd v(4);
  v << 1.0, -2.0, 0.5, 3.0;
  const HvpOperator op = [](const Eigen::VectorXd& x, int) { return x; };

  InvHvpConfig config;
  config.lambda_damp = 0.0;
  config.gamma = 1.0;
  for (int terms : {0, 1, 5, 50}) {
    config.terms = terms;
    const Eigen::VectorXd out = inv_hvp(op, v, config);
    if (terms == 0) {
      CHECK((out - config.gamma * v).norm() == 0.0);
    } else {
      CHECK((out - v).norm() == 0.0);
    }
  }

  // terms = 0 returns gamma * v for any gamma.
  config.terms = 0;
  config.gamma = 0.25;
  CHECK((inv_hvp(op, v, config) - 0.25 * v).norm() == 0.0);
}

TEST_CASE("inverse-Hessian recursion converges monotonically on a diagonal system") {
  const int dim = 50;
  Eigen::VectorXd diag(dim);
  std::mt19937_64 engine(7);
  std::uniform_real_distribution<double> dist(0.1, 1.5);
  for (int i = 0; i < dim; ++i) diag[i] = dist(engine);
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = dist(engine) - 0.75;

  const double lambda = 1e-3;
  const Eigen::VectorXd exact = v.cwiseQuotient(diag.array().operator+(lambda).matrix());

  InvHvpConfig config;
  config.lambda_damp = lambda;
  config.gamma = 1.0 / (1.0 + lambda + diag.maxCoeff());
  const HvpOperator op = diag_operator(diag);

  double previous = std::numeric_limits<double>::infinity();
  double last = previous;
  for (int terms : {1, 5, 20, 80, 320, 1280, 5120}) {
    config.terms = terms;
    const double err = (inv_hvp(op, v, config) - exact).norm() / exact.norm();
    CHECK(err <= previous + 1e-15);
    previous = err;
    last = err;
  }
  CHECK(last <= 1e-3);
}

TEST_CASE("a non-contracting operator trips the divergence guard") {
  Eigen::VectorXd v = Eigen::VectorXd::Ones(3);
  const HvpOperator op = [](const Eigen::VectorXd& x, int) -> Eigen::VectorXd {
    return 10.0 * x;  // damped multiplier |1 - gamma * 10| = 9 amplifies every term
  };
  InvHvpConfig config;
  config.lambda_damp = 0.0;
  config.gamma = 1.0;
  config.terms = 50;
  CHECK_THROWS_WITH_AS(inv_hvp(op, v, config),
                       doctest::Contains("gamma"), std::runtime_error);

  InvHvpConfig bad;
  bad.gamma = 10.0;
  CHECK_THROWS_AS(inv_hvp(op, v, bad), std::invalid_argument);
}

TEST_CASE("automatic step size uses the largest curvature probe") {
  // H = 2I: every Rademacher probe returns exactly 2, so
  // gamma = 1 / (1 + lambda + 2).
  const HvpOperator op = [](const Eigen::VectorXd& x, int) -> Eigen::VectorXd {
    return 2.0 * x;
  };
  const double lambda = 0.5;
  CHECK(auto_gamma(op, 16, lambda, 3) == doctest::Approx(1.0 / 3.5).epsilon(1e-14));

  // A negative-curvature operator clamps at zero: gamma = 1 / (1 + lambda).
  const HvpOperator negative = [](const Eigen::VectorXd& x, int) -> Eigen::VectorXd {
    return -3.0 * x;
  };
  CHECK(auto_gamma(negative, 16, lambda, 3) == doctest::Approx(1.0 / 1.5).epsilon(1e-14));
}

TEST_CASE("implicit gradient core matches the closed form on a quadratic") {
  const int dim = 12;
  std::mt19937_64 engine(11);
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  Eigen::VectorXd diag(dim);
  for (int i = 0; i < dim; ++i) diag[i] = 0.5 + std::abs(dist(engine));

  std::vector<Eigen::VectorXd> grads;
  for (int g = 0; g < 3; ++g) {
    Eigen::VectorXd grad(dim);
    for (int i = 0; i < dim; ++i) grad[i] = dist(engine);
    grads.push_back(grad);
  }
  const std::vector<double> q = {0.5, 0.3, 0.2};
  const double lambda = 1e-2;

  InvHvpConfig config;
  config.lambda_damp = lambda;
  config.gamma = 1.0 / (1.0 + lambda + diag.maxCoeff());
  config.terms = 4000;

  const auto d = implicit_grad_core(grads, q, diag_operator(diag), config);
  REQUIRE(d.size() == 3);

  Eigen::VectorXd weighted = Eigen::VectorXd::Zero(dim);
  for (int g = 0; g < 3; ++g) weighted += q[g] * grads[g];
  const Eigen::VectorXd solved =
      weighted.cwiseQuotient(diag.array().operator+(lambda).matrix());
  for (int g = 0; g < 3; ++g) {
    const double expected = -solved.dot(grads[g]);
    CHECK(d[g] == doctest::Approx(expected).epsilon(1e-8));
  }
}

TEST_CASE("forest learning produces a valid forest with full history") {
  const Dataset ds = mirrored_two_group_dataset();
  const ModelSpec spec = linear_spec();
  const TransformRegistry registry = default_vector_registry();

  SearchConfig search_config;
  search_config.d_max = 1;
  search_config.candidates = {"translate@0.5"};
  search_config.prob_grid = {0.5, 1.0};
  search_config.train.steps = 120;
  search_config.train.batch_size = 16;
  search_config.seed = 5;

  BilevelConfig config;
  config.outer_iters = 3;
  config.inner_steps = 40;
  config.inner_lr = 0.1;
  config.eta = 0.5;
  config.batch_size = 0;  // deterministic full-batch Hessian recursion
  config.neumann_terms = 30;
  config.seed = 17;

  const ForestResult result = learn_forest(spec, ds, registry, nullptr, search_config, config);

  CHECK(validate(result.forest) == std::nullopt);
  REQUIRE(result.forest.group_ids == std::vector<int>{1, 2});
  CHECK(result.traces.size() == 2);
  REQUIRE(result.q.size() == 2);
  CHECK(result.q[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(result.q[1] == doctest::Approx(0.5).epsilon(1e-12));

  REQUIRE(result.history.size() == 4);  // row 0 plus one per outer iteration
  CHECK(result.history.front().iter == 0);
  CHECK(result.history.front().weights == std::vector<double>{0.5, 0.5});
  for (const ForestHistoryRow& row : result.history) {
    REQUIRE(row.weights.size() == 2);
    double sum = 0.0;
    for (double w : row.weights) {
      CHECK(w >= 0.0);
      sum += w;
    }
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(std::isfinite(row.weighted_train_loss));
    CHECK(std::isfinite(row.val_loss));
    CHECK(row.effective_n > 0.0);
  }

  // Byte-identical groups receive identical implicit gradients, so the
  // mirror steps never break the symmetry.
  for (const ForestHistoryRow& row : result.history)
    CHECK(row.weights[0] == doctest::Approx(row.weights[1]).epsilon(1e-12));
}

TEST_CASE("eta = 0 reduces to uniform training, reproducible by hand") {
  const Dataset ds = mirrored_two_group_dataset();
  const ModelSpec spec = linear_spec();
  const TransformRegistry registry = default_vector_registry();

  SearchConfig search_config;
  search_config.d_max = 1;
  search_config.candidates = {"translate@0.5"};
  search_config.prob_grid = {0.5, 1.0};
  search_config.train.steps = 120;
  search_config.train.batch_size = 16;
  search_config.seed = 5;

  BilevelConfig config;
  config.outer_iters = 3;
  config.inner_steps = 40;
  config.inner_lr = 0.1;
  config.eta = 0.0;
  config.batch_size = 16;
  config.seed = 17;

  const ForestResult result = learn_forest(spec, ds, registry, nullptr, search_config, config);
  for (const ForestHistoryRow& row : result.history)
    CHECK(row.weights == std::vector<double>{0.5, 0.5});

  // Replay the uniform-weight inner loop with the published seed layout.
  Eigen::VectorXd theta = init_params(spec, mix(config.seed, 0xF0E3));
  const DatasetView train_1 = view_of(ds, Split::train, 1);
  const DatasetView train_2 = view_of(ds, Split::train, 2);
  for (int t = 1; t <= config.outer_iters; ++t) {
    TrainOptions options;
    options.steps = config.inner_steps;
    options.lr = config.inner_lr;
    options.batch_size = config.batch_size;
    options.seed = mix(config.seed, 0x7D1, static_cast<std::uint64_t>(t));
    theta = train_sgd(spec, std::move(theta),
                      {{train_1, &result.forest.trees[0], 0.5},
                       {train_2, &result.forest.trees[1], 0.5}},
                      registry, nullptr, options);
  }
  CHECK((theta - result.theta).norm() == 0.0);
}

TEST_CASE("history CSV lists weights per group") {
  std::vector<ForestHistoryRow> history;
  ForestHistoryRow row;
  row.iter = 0;
  row.weighted_train_loss = 0.75;
  row.val_loss = 0.5;
  row.weights = {0.25, 0.75};
  row.effective_n = 120.0;
  history.push_back(row);

  const auto path = std::filesystem::temp_directory_path() / "augforest_history_test.csv";
  export_history_csv(history, path);
  const std::string text = read_file(path);
  CHECK(text.find("iter,weighted_train_loss,val_loss,w_1,w_2,N_w\n") == 0);
  CHECK(text.find("0,0.75,0.5,0.25,0.75,120") != std::string::npos);
  std::filesystem::remove(path);
}
