#include "doctest.h"
#include "support.hpp"

#include "pfnm/mlp.hpp"

using namespace pfnm;

namespace {

Dataset random_dataset(int n, int d, int k, std::uint64_t seed) {
  Dataset data;
  data.features = testing::random_inputs(n, d, seed);
  data.num_classes = k;
  std::mt19937_64 rng(seed + 1);
  std::uniform_int_distribution<int> label(0, k - 1);
  for (int i = 0; i < n; ++i) data.labels.push_back(label(rng));
  return data;
}

// Central differences on every parameter, compared against the analytic
// gradient entry by entry.
void check_gradient(const Mlp& net, const Dataset& data, double l2) {
  Gradients g;
  loss_and_gradient(net, data.features, data.labels, l2, &g);
  const double h = 1e-6;
  auto probe = [&](auto&& get, double analytic) {
    Mlp plus = net, minus = net;
    get(plus) += h;
    get(minus) -= h;
    const double numeric = (loss_and_gradient(plus, data.features, data.labels, l2, nullptr) -
                            loss_and_gradient(minus, data.features, data.labels, l2, nullptr)) /
                           (2 * h);
    CHECK(std::abs(numeric - analytic) <= 1e-6 + 1e-5 * std::abs(numeric));
  };
  for (std::size_t c = 0; c < net.weights.size(); ++c) {
    for (Eigen::Index i = 0; i < net.weights[c].rows(); ++i)
      for (Eigen::Index k = 0; k < net.weights[c].cols(); ++k)
        probe([&](Mlp& m) -> double& { return m.weights[c](i, k); }, g.weights[c](i, k));
    for (Eigen::Index k = 0; k < net.biases[c].size(); ++k)
      probe([&](Mlp& m) -> double& { return m.biases[c](k); }, g.biases[c](k));
  }
}

}  // namespace

TEST_CASE("zero epochs leaves parameters untouched") {
  const Mlp net = testing::random_mlp(4, {6}, 3, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  const Mlp out = train(net, random_dataset(20, 4, 3, 2), cfg);
  for (std::size_t c = 0; c < net.weights.size(); ++c) {
    CHECK(out.weights[c] == net.weights[c]);
    CHECK(out.biases[c] == net.biases[c]);
  }
}

TEST_CASE("separable blobs are learned") {
  const Dataset data = testing::two_blobs(200, 4.0, 0.5, 3);
  REQUIRE(testing::perceptron_separates(data));
  TrainConfig cfg;
  cfg.seed = 5;
  cfg.epochs = 20;
  const Mlp net = train(initialize_mlp(2, {16}, 2, Activation::relu, cfg), data, cfg);
  CHECK(evaluate(net, data) >= 0.99);
}

TEST_CASE("analytic gradients match finite differences") {
  const Dataset data = random_dataset(12, 5, 4, 9);
  for (Activation act : {Activation::relu, Activation::sigmoid}) {
    CAPTURE(to_string(act));
    check_gradient(testing::random_mlp(5, {7}, 4, 10, act, 0.5), data, 0.0);
    check_gradient(testing::random_mlp(5, {7}, 4, 11, act, 0.5), data, 0.3);
    check_gradient(testing::random_mlp(5, {6, 4}, 4, 12, act, 0.5), data, 0.01);
  }
}

TEST_CASE("accuracy counting") {
  CHECK(accuracy({0, 1, 2, 1}, {0, 1, 1, 1}) == 0.75);
  CHECK(accuracy({3}, {3}) == 1.0);
  CHECK(accuracy({0, 0}, {1, 1}) == 0.0);
  CHECK_THROWS_AS(accuracy({}, {}), std::invalid_argument);
  CHECK_THROWS_AS(accuracy({0}, {0, 1}), std::invalid_argument);
}

TEST_CASE("hand-built network predicts by sign") {
  // One hidden relu unit copies x0; the output prefers class 1 when it fires.
  Mlp net;
  net.weights = {Eigen::MatrixXd(2, 1), Eigen::MatrixXd(1, 2)};
  net.weights[0] << 1, 0;
  net.weights[1] << 0, 1;
  net.biases = {Eigen::VectorXd::Zero(1), Eigen::VectorXd::Zero(2)};
  net.biases[1] << 0.5, 0;
  Dataset data;
  data.num_classes = 2;
  data.features.resize(5, 2);
  data.features << -1, 3, 0.2, 0, 2, 1, 0.7, -4, -0.1, 9;
  data.labels = {0, 1, 1, 0, 1};
  // Predictions: 0, 0, 1, 1, 0 -> hits at rows 0 and 2.
  CHECK(predict(net, data.features) == std::vector<int>{0, 0, 1, 1, 0});
  CHECK(evaluate(net, data) == doctest::Approx(0.4));
  const Eigen::MatrixXd p = predict_proba(net, data.features);
  for (Eigen::Index i = 0; i < p.rows(); ++i) CHECK(p.row(i).sum() == doctest::Approx(1.0));
}

TEST_CASE("atom layout for one hidden layer") {
  const Mlp net = testing::random_mlp(3, {4}, 2, 20);
  const auto atoms = to_atoms(net);
  REQUIRE(atoms.size() == 1);
  REQUIRE(atoms[0].size() == 4);
  for (int l = 0; l < 4; ++l) {
    const AtomVector& a = atoms[0][l];
    REQUIRE(a.size() == 3 + 1 + 2);
    CHECK(a.head(3) == net.weights[0].col(l));
    CHECK(a(3) == net.biases[0](l));
    CHECK(a.tail(2) == net.weights[1].row(l).transpose());
  }
}

TEST_CASE("atoms round trip exactly") {
  for (const std::vector<int>& widths : {std::vector<int>{5}, std::vector<int>{5, 3}, std::vector<int>{2, 4, 3}}) {
    const Mlp net = testing::random_mlp(6, widths, 3, 21);
    const Mlp back = from_atoms(to_atoms(net), 6, 3, net.biases.back(), net.activation);
    REQUIRE(back.weights.size() == net.weights.size());
    for (std::size_t c = 0; c < net.weights.size(); ++c) {
      CHECK(back.weights[c] == net.weights[c]);
      CHECK(back.biases[c] == net.biases[c]);
    }
  }
}

TEST_CASE("zero atoms give the uniform distribution") {
  const AtomList zeros(3, AtomVector::Zero(4 + 1 + 5));
  const Mlp net = from_atoms({zeros}, 4, 5, Eigen::VectorXd::Zero(5), Activation::relu);
  const Eigen::MatrixXd p = predict_proba(net, testing::random_inputs(7, 4, 1));
  CHECK((p.array() - 0.2).abs().maxCoeff() < 1e-15);
}

TEST_CASE("from_atoms rejects inconsistent atoms") {
  CHECK_THROWS_AS(from_atoms({}, 2, 2, Eigen::VectorXd::Zero(2), Activation::relu), std::invalid_argument);
  CHECK_THROWS_AS(from_atoms({{AtomVector::Zero(4)}}, 2, 2, Eigen::VectorXd::Zero(2), Activation::relu),
                  std::invalid_argument);
  CHECK_THROWS_AS(from_atoms({{AtomVector::Zero(5)}}, 2, 2, Eigen::VectorXd::Zero(3), Activation::relu),
                  std::invalid_argument);
}

TEST_CASE("hidden permutations do not change the function") {
  std::mt19937_64 rng(30);
  const FeatureMatrix x = testing::random_inputs(25, 6, 31);
  for (Activation act : {Activation::relu, Activation::sigmoid}) {
    const Mlp net = testing::random_mlp(6, {8, 5}, 4, 32, act);
    const Mlp perm = testing::permuted_copy(net, rng);
    CHECK((logits(perm, x) - logits(net, x)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("a permutation followed by its inverse is the identity") {
  std::mt19937_64 rng(40);
  const Mlp net = testing::random_mlp(3, {9}, 2, 41);
  const auto p = testing::random_permutation(9, rng);
  const Mlp back = apply_permutation(apply_permutation(net, 1, p), 1, testing::inverse_permutation(p));
  CHECK(back.weights[0] == net.weights[0]);
  CHECK(back.weights[1] == net.weights[1]);
  CHECK(back.biases[0] == net.biases[0]);
  CHECK_THROWS_AS(apply_permutation(net, 1, {0, 0, 1, 2, 3, 4, 5, 6, 7}), std::invalid_argument);
  CHECK_THROWS_AS(apply_permutation(net, 2, p), std::invalid_argument);
}

TEST_CASE("training is deterministic for a seed") {
  const Dataset data = random_dataset(100, 5, 3, 50);
  for (Optimizer opt : {Optimizer::amsgrad, Optimizer::sgd}) {
    TrainConfig cfg;
    cfg.seed = 51;
    cfg.epochs = 3;
    cfg.optimizer = opt;
    const Mlp a = train(initialize_mlp(5, {10}, 3, Activation::relu, cfg), data, cfg);
    const Mlp b = train(initialize_mlp(5, {10}, 3, Activation::relu, cfg), data, cfg);
    for (std::size_t c = 0; c < a.weights.size(); ++c) {
      CHECK(a.weights[c] == b.weights[c]);
      CHECK(a.biases[c] == b.biases[c]);
    }
  }
}

TEST_CASE("training lowers the objective") {
  const Dataset data = testing::two_blobs(100, 2.0, 1.0, 60);
  for (Optimizer opt : {Optimizer::amsgrad, Optimizer::sgd}) {
    TrainConfig cfg;
    cfg.seed = 61;
    cfg.epochs = 5;
    cfg.optimizer = opt;
    TrainLog log;
    train(initialize_mlp(2, {8}, 2, Activation::relu, cfg), data, cfg, &log);
    REQUIRE(log.epoch_loss.size() == 5);
    CHECK(log.epoch_loss.back() < log.initial_loss);
  }
}

TEST_CASE("non-finite loss aborts training") {
  Dataset data = random_dataset(10, 3, 2, 70);
  data.features(4, 1) = std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.minibatch_size = 100;
  try {
    train(initialize_mlp(3, {4}, 2, Activation::relu, cfg), data, cfg);
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("epoch 0, minibatch 0") != std::string::npos);
  }
}

TEST_CASE("initialisation uses the configured scale") {
  TrainConfig cfg;
  cfg.seed = 80;
  const Mlp net = initialize_mlp(200, {300}, 10, Activation::relu, cfg);
  const double var = net.weights[0].array().square().mean();
  CHECK(var == doctest::Approx(0.01).epsilon(0.05));
  CHECK((net.biases[0].array() == 0.1).all());
  CHECK_THROWS_AS(initialize_mlp(3, {0}, 2, Activation::relu, cfg), std::invalid_argument);
}
