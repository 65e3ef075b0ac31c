#pragma once

#include "pfnm/dataset.hpp"
#include "pfnm/matching.hpp"
#include "pfnm/mlp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

namespace testing {

inline std::string mnist_dir() {
#ifdef PFNM_TEST_DATA_DIR
  return PFNM_TEST_DATA_DIR;
#else
  return "data/mnist";
#endif
}

inline bool have_mnist() {
  return std::filesystem::exists(std::filesystem::path(mnist_dir()) / "train-images-idx3-ubyte.gz") ||
         std::filesystem::exists(std::filesystem::path(mnist_dir()) / "train-images-idx3-ubyte");
}

// Exhaustive search over all column-to-row injections. Returns the minimum
// total and the lexicographically smallest row sequence attaining it. Totals
// are accumulated in column order, as assignment_cost does.
struct BruteForce {
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> rows;
};

inline BruteForce brute_force_assignment(const Eigen::MatrixXd& cost) {
  const int m = static_cast<int>(cost.rows());
  const int n = static_cast<int>(cost.cols());
  BruteForce out;
  std::vector<int> current(n);
  std::vector<char> used(m, 0);
  std::function<void(int, double)> rec = [&](int col, double total) {
    if (col == n) {
      if (total < out.best) {
        out.best = total;
        out.rows = current;
      }
      return;
    }
    for (int r = 0; r < m; ++r) {
      if (used[r]) continue;
      used[r] = 1;
      current[col] = r;
      rec(col + 1, total + cost(r, col));
      used[r] = 0;
    }
  };
  rec(0, 0.0);
  return out;
}

inline std::vector<int> random_permutation(int n, std::mt19937_64& rng) {
  std::vector<int> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

inline std::vector<int> inverse_permutation(const std::vector<int>& p) {
  std::vector<int> inv(p.size());
  for (std::size_t i = 0; i < p.size(); ++i) inv[p[i]] = static_cast<int>(i);
  return inv;
}

// Copy of `net` with every hidden layer independently permuted.
inline pfnm::Mlp permuted_copy(const pfnm::Mlp& net, std::mt19937_64& rng) {
  pfnm::Mlp out = net;
  for (int c = 1; c <= net.depth(); ++c) out = pfnm::apply_permutation(out, c, random_permutation(net.width(c), rng));
  return out;
}

inline pfnm::Mlp random_mlp(int d, const std::vector<int>& widths, int k, std::uint64_t seed,
                            pfnm::Activation act = pfnm::Activation::relu, double scale = 1.0) {
  pfnm::TrainConfig cfg;
  cfg.seed = seed;
  cfg.init_scale = scale;
  cfg.init_is_std = true;
  pfnm::Mlp net = pfnm::initialize_mlp(d, widths, k, act, cfg);
  std::mt19937_64 rng(seed + 17);
  std::normal_distribution<double> normal(0.0, scale);
  for (auto& b : net.biases)
    for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = normal(rng);
  return net;
}

inline pfnm::FeatureMatrix random_inputs(int n, int d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  pfnm::FeatureMatrix x(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) x(i, j) = normal(rng);
  return x;
}

// Batches of noisy copies of a few shared "true" atoms, so that matching has
// real choices to make. Used by the monotonicity checks.
inline std::vector<pfnm::AtomList> clustered_instance(std::mt19937_64& rng, int max_batches = 5,
                                                      int max_local = 10, int max_dim = 5) {
  std::uniform_int_distribution<int> pick_j(2, max_batches), pick_l(1, max_local), pick_d(1, max_dim);
  const int J = pick_j(rng);
  const int D = pick_d(rng);
  const int pool = pick_l(rng) + 2;
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<Eigen::VectorXd> centres(pool);
  for (auto& c : centres) {
    c.resize(D);
    for (int d = 0; d < D; ++d) c(d) = 3.0 * normal(rng);
  }
  std::uniform_real_distribution<double> noise_scale(0.2, 1.5);
  std::vector<pfnm::AtomList> sets(J);
  for (auto& set : sets) {
    const int L = std::min(pick_l(rng), pool);
    const double s = noise_scale(rng);
    std::vector<int> chosen = random_permutation(pool, rng);
    for (int l = 0; l < L; ++l) {
      Eigen::VectorXd v = centres[chosen[l]];
      for (int d = 0; d < D; ++d) v(d) += s * normal(rng);
      set.push_back(v);
    }
  }
  return sets;
}

// Explicit log posterior of one atom theta given its matched observations.
inline double atom_log_posterior(const Eigen::VectorXd& theta, const std::vector<Eigen::VectorXd>& obs,
                                 const Eigen::VectorXd& mu0, double sigma0_sq, double sigma_sq) {
  double lp = -(theta - mu0).squaredNorm() / (2.0 * sigma0_sq);
  for (const auto& v : obs) lp -= (v - theta).squaredNorm() / (2.0 * sigma_sq);
  return lp;
}

// Perceptron run to convergence; returns true iff it separates the data.
inline bool perceptron_separates(const pfnm::Dataset& data, int max_epochs = 1000) {
  Eigen::VectorXd w = Eigen::VectorXd::Zero(data.dim() + 1);
  for (int e = 0; e < max_epochs; ++e) {
    int mistakes = 0;
    for (int i = 0; i < data.size(); ++i) {
      Eigen::VectorXd x(data.dim() + 1);
      x << data.features.row(i).transpose(), 1.0;
      const double y = data.labels[i] == 1 ? 1.0 : -1.0;
      if (y * w.dot(x) <= 0) {
        w += y * x;
        ++mistakes;
      }
    }
    if (mistakes == 0) return true;
  }
  return false;
}

inline pfnm::Dataset two_blobs(int per_class, double gap, double noise, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, noise);
  pfnm::Dataset d;
  d.num_classes = 2;
  d.features.resize(2 * per_class, 2);
  for (int i = 0; i < 2 * per_class; ++i) {
    const int k = i % 2;
    const double centre = k == 0 ? -gap / 2 : gap / 2;
    d.features(i, 0) = centre + normal(rng);
    d.features(i, 1) = centre + normal(rng);
    d.labels.push_back(k);
  }
  return d;
}

}  // namespace testing
