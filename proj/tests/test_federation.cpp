#include "doctest.h"
#include "support.hpp"

#include "pfnm/federation.hpp"
#include "pfnm/kmeans.hpp"

#include <iostream>
#include <set>

using namespace pfnm;

namespace {

Dataset balanced(int per_class, int k) {
  Dataset d;
  d.num_classes = k;
  d.features = testing::random_inputs(per_class * k, 3, 1);
  for (int i = 0; i < per_class * k; ++i) d.labels.push_back(i % k);
  return d;
}

void check_cover(const Partition& p, const Dataset& data) {
  std::vector<int> seen(data.size(), 0);
  for (const auto& b : p.batches)
    for (int i : b) ++seen.at(i);
  for (int s : seen) CHECK(s == 1);
  std::vector<int> totals(data.num_classes, 0);
  for (const auto& b : split(data, p)) {
    const auto counts = class_counts(b);
    for (std::size_t k = 0; k < counts.size(); ++k) totals[k] += counts[k];
  }
  CHECK(totals == class_counts(data));
}

// Network whose output probabilities are `p` for every input.
Mlp constant_net(const std::vector<double>& p) {
  Mlp net;
  const int k = static_cast<int>(p.size());
  net.weights = {Eigen::MatrixXd::Zero(1, 1), Eigen::MatrixXd::Zero(1, k)};
  net.biases = {Eigen::VectorXd::Zero(1), Eigen::VectorXd(k)};
  for (int i = 0; i < k; ++i) net.biases[1](i) = std::log(p[i]);
  return net;
}

TrainConfig quick_train(int epochs = 3) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  return cfg;
}

TrainTest small_synthetic(std::uint64_t seed) {
  SyntheticSpec spec;
  spec.dim = 8;
  spec.num_classes = 3;
  spec.train_per_class = 60;
  spec.test_per_class = 20;
  spec.mean_scale = 2.0;
  spec.seed = seed;
  return generate_synthetic(spec);
}

}  // namespace

TEST_CASE("homogeneous partition") {
  const Dataset data = balanced(100, 3);
  SUBCASE("one batch holds everything") {
    const Partition p = partition_homogeneous(data, 1, 7);
    REQUIRE(p.num_batches() == 1);
    CHECK(p.batches[0].size() == 300);
  }
  SUBCASE("divisible counts split exactly") {
    const Partition p = partition_homogeneous(data, 4, 7);
    for (const auto& b : split(data, p)) CHECK(class_counts(b) == std::vector<int>{25, 25, 25});
    check_cover(p, data);
  }
  SUBCASE("per-class counts differ by at most one") {
    const Dataset odd = balanced(37, 4);
    const Partition p = partition_homogeneous(odd, 5, 3);
    check_cover(p, odd);
    const auto parts = split(odd, p);
    for (int k = 0; k < 4; ++k) {
      int lo = 1 << 30, hi = 0;
      for (const auto& b : parts) {
        lo = std::min(lo, class_counts(b)[k]);
        hi = std::max(hi, class_counts(b)[k]);
      }
      CHECK(hi - lo <= 1);
    }
    int lo = 1 << 30, hi = 0;
    for (const auto& b : parts) {
      lo = std::min(lo, b.size());
      hi = std::max(hi, b.size());
    }
    CHECK(hi - lo <= 1);
  }
  SUBCASE("fixed seed, fixed partition") {
    CHECK(partition_homogeneous(data, 4, 9).batches == partition_homogeneous(data, 4, 9).batches);
    CHECK(partition_homogeneous(data, 4, 9).batches != partition_homogeneous(data, 4, 10).batches);
  }
  CHECK_THROWS_AS(partition_homogeneous(data, 0, 1), std::invalid_argument);
}

TEST_CASE("heterogeneous partition") {
  const Dataset data = balanced(200, 4);
  SUBCASE("exact class totals") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      try {
        check_cover(partition_heterogeneous(data, 5, 0.5, seed), data);
      } catch (const EmptyBatchError&) {
      }
    }
  }
  SUBCASE("large concentration approaches equal proportions") {
    const Partition p = partition_heterogeneous(data, 5, 1e6, 3);
    for (const auto& b : split(data, p))
      for (int c : class_counts(b)) CHECK(std::abs(c / 200.0 - 0.2) < 0.01);
  }
  SUBCASE("an empty batch is rejected") {
    Dataset tiny = balanced(1, 2);
    bool thrown = false;
    for (std::uint64_t seed = 0; seed < 20 && !thrown; ++seed) {
      try {
        partition_heterogeneous(tiny, 5, 0.5, seed);
      } catch (const EmptyBatchError& e) {
        thrown = true;
        CHECK(std::string(e.what()).find("reseed") != std::string::npos);
      }
    }
    CHECK(thrown);
  }
  CHECK_THROWS_AS(partition_heterogeneous(data, 3, 0.0, 1), std::invalid_argument);
}

TEST_CASE("Dirichlet(0.5) over ten batches leaves classes missing on MNIST") {
  if (!testing::have_mnist()) {
    MESSAGE("MNIST not found at " << testing::mnist_dir() << "; skipped");
    return;
  }
  const Dataset train = head(load_mnist(testing::mnist_dir()).train, 6000);
  int with_gap = 0, drawn = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Partition p;
    try {
      p = partition_heterogeneous(train, 10, 0.5, seed);
    } catch (const EmptyBatchError&) {
      std::cout << "seed " << seed << ": empty batch\n";
      continue;
    }
    ++drawn;
    int zero_pairs = 0;
    for (const auto& b : split(train, p))
      for (int c : class_counts(b)) zero_pairs += c == 0;
    std::cout << "seed " << seed << ": " << zero_pairs << " empty (batch, class) pairs\n";
    with_gap += zero_pairs > 0;
  }
  CHECK(drawn == 10);
  CHECK(with_gap >= 8);
}

TEST_CASE("ensemble averages probabilities") {
  const std::vector<Mlp> members{constant_net({0.6, 0.4}), constant_net({0.2, 0.8})};
  const FeatureMatrix x = testing::random_inputs(3, 1, 2);
  const Eigen::MatrixXd p = ensemble_proba(members, x);
  CHECK(p(0, 0) == doctest::Approx(0.4));
  CHECK(p(0, 1) == doctest::Approx(0.6));
  CHECK(aggregate_ensemble(members, x) == std::vector<int>{1, 1, 1});

  const Mlp one = testing::random_mlp(4, {5}, 3, 3);
  const FeatureMatrix y = testing::random_inputs(20, 4, 4);
  CHECK(aggregate_ensemble({one}, y) == predict(one, y));
  CHECK(aggregate_ensemble({one, one, one}, y) == predict(one, y));
}

TEST_CASE("weighted average of models") {
  Mlp a;
  a.weights = {Eigen::MatrixXd::Constant(1, 1, 1.0), Eigen::MatrixXd::Constant(1, 1, 1.0)};
  a.biases = {Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 1.0)};
  Mlp b = a;
  for (auto& w : b.weights) w.setConstant(3.0);
  for (auto& v : b.biases) v.setConstant(3.0);
  const Mlp avg = average_models({a, b}, {0.25, 0.75});
  for (const auto& w : avg.weights) CHECK(w(0, 0) == 2.5);
  for (const auto& v : avg.biases) CHECK(v(0) == 2.5);

  const Mlp m = testing::random_mlp(3, {4}, 2, 5);
  const Mlp same = average_models({m, m}, {0.5, 0.5});
  for (std::size_t c = 0; c < m.weights.size(); ++c) CHECK(same.weights[c] == m.weights[c]);
  CHECK_THROWS_AS(average_models({m, testing::random_mlp(3, {5}, 2, 6)}, {0.5, 0.5}), std::invalid_argument);
}

TEST_CASE("federated averaging with one client is plain training") {
  const TrainTest data = small_synthetic(10);
  const NetSpec spec{{12}, Activation::relu};
  TrainConfig cfg = quick_train();
  cfg.optimizer = Optimizer::sgd;
  FedAvgConfig fa;
  fa.rounds = 2;
  fa.first_epochs = 3;
  fa.later_epochs = 2;
  const std::uint64_t seed = 11;
  const Mlp fed = aggregate_fedavg({data.train}, 3, spec, cfg, fa, seed);

  TrainConfig c = cfg;
  c.seed = derive_seed(seed, {0});
  Mlp plain = initialize_mlp(8, spec.widths, 3, spec.activation, c);
  c.epochs = 3;
  c.seed = derive_seed(seed, {1, 0});
  plain = train(plain, data.train, c);
  c.epochs = 2;
  c.seed = derive_seed(seed, {2, 0});
  plain = train(plain, data.train, c);
  for (std::size_t i = 0; i < fed.weights.size(); ++i) {
    CHECK(fed.weights[i] == plain.weights[i]);
    CHECK(fed.biases[i] == plain.biases[i]);
  }
}

TEST_CASE("k-means baseline") {
  CHECK(default_kmeans_clusters(2) == 100);
  CHECK(default_kmeans_clusters(20) == 500);

  SUBCASE("default cluster count for two networks of fifty") {
    const std::vector<Mlp> locals{testing::random_mlp(3, {50}, 2, 1), testing::random_mlp(3, {50}, 2, 2)};
    const GlobalNetwork net = aggregate_kmeans(locals, 0, 3);
    CHECK(net.layer_sizes() == std::vector<int>{100});
  }
  SUBCASE("distinct atoms are their own centroids") {
    const std::vector<Mlp> locals{testing::random_mlp(3, {4}, 2, 4), testing::random_mlp(3, {5}, 2, 5)};
    const GlobalNetwork net = aggregate_kmeans(locals, 9, 6);
    std::multiset<std::vector<double>> expected, got;
    for (const auto& m : locals) {
      const auto layers = to_atoms(m);
      for (const auto& a : layers[0]) expected.insert(std::vector<double>(a.data(), a.data() + a.size()));
    }
    const auto fused = to_atoms(net.model);
    for (const auto& a : fused[0]) got.insert(std::vector<double>(a.data(), a.data() + a.size()));
    CHECK(got == expected);
  }
  SUBCASE("two clouds give their means") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> noise(0.0, 1e-3);
    std::vector<Eigen::VectorXd> points;
    Eigen::Vector3d mean_a = Eigen::Vector3d::Zero(), mean_b = Eigen::Vector3d::Zero();
    for (int i = 0; i < 40; ++i) {
      Eigen::Vector3d a(noise(rng), noise(rng), noise(rng));
      Eigen::Vector3d b(100 + noise(rng), -50 + noise(rng), noise(rng));
      mean_a += a / 40.0;
      mean_b += b / 40.0;
      points.push_back(a);
      points.push_back(b);
    }
    const KMeansResult km = kmeans(points, 2, 8);
    REQUIRE(km.centroids.size() == 2);
    const bool first_is_a = km.centroids[0].norm() < km.centroids[1].norm();
    CHECK((km.centroids[first_is_a ? 0 : 1] - mean_a).norm() < 1e-8);
    CHECK((km.centroids[first_is_a ? 1 : 0] - mean_b).norm() < 1e-8);
    CHECK(km.sizes == std::vector<int>{40, 40});
  }
  SUBCASE("too many clusters are clamped") {
    const GlobalNetwork net = aggregate_kmeans({testing::random_mlp(3, {4}, 2, 9)}, 50, 1);
    CHECK(net.layer_sizes() == std::vector<int>{4});
  }
  CHECK_THROWS_AS(aggregate_kmeans({testing::random_mlp(3, {4, 2}, 2, 9)}, 0, 1), std::invalid_argument);
}

TEST_CASE("one round is train then match") {
  const TrainTest data = small_synthetic(20);
  const auto batches = split(data.train, partition_homogeneous(data.train, 3, 21));
  const NetSpec spec{{10}, Activation::relu};
  const TrainConfig cfg = quick_train();
  const auto locals = train_locals(batches, 3, spec, cfg, 22);
  PriorConfig prior;
  RoundsConfig rc;
  const PfnmResult r = federate_pfnm(locals, batches, data.test, {prior}, rc, cfg, 23);
  Schedule s;
  s.seed = derive_seed(23, {1, 0xa11});
  const GlobalNetwork direct = match_multilayer(locals, {prior}, s);
  CHECK(r.network.model.weights == direct.model.weights);
  CHECK(r.network.model.biases == direct.model.biases);
  REQUIRE(r.logs.size() == 1);
  CHECK(r.logs[0].round == 1);
  CHECK(r.logs[0].global_accuracy == evaluate(direct.model, data.test));
  CHECK(r.logs[0].log_size_ratio == std::log(direct.model.hidden_size() / 30.0));
}

TEST_CASE("rounds keep local widths and log every round") {
  const TrainTest data = small_synthetic(30);
  const auto batches = split(data.train, partition_homogeneous(data.train, 3, 31));
  const NetSpec spec{{6, 5}, Activation::relu};
  const TrainConfig cfg = quick_train(2);
  const auto locals = train_locals(batches, 3, spec, cfg, 32);
  RoundsConfig rc;
  rc.rounds = 3;
  rc.later_epochs = 1;
  int seen = 0;
  const PfnmResult r = federate_pfnm(locals, batches, data.test, {PriorConfig{}}, rc, cfg, 33,
                                     [&](const RoundLog& log, const GlobalNetwork& net) {
                                       ++seen;
                                       CHECK(log.round == seen);
                                       CHECK(log.local_size_total == 33);
                                       CHECK(log.layer_sizes == net.layer_sizes());
                                       for (int j = 0; j < 3; ++j)
                                         CHECK(reinitialize_local(net, j).widths() == std::vector<int>{6, 5});
                                     });
  CHECK(seen == 3);
  CHECK(r.logs.size() == 3);
}

TEST_CASE("seed derivation separates streams") {
  CHECK(derive_seed(1, {2}) == derive_seed(1, {2}));
  CHECK(derive_seed(1, {2}) != derive_seed(1, {3}));
  CHECK(derive_seed(1, {2, 3}) != derive_seed(1, {3, 2}));
  CHECK(derive_seed(1, {2}) != derive_seed(2, {2}));
}
