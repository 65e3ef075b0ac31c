#include "pfnm/kmeans.hpp"

#include <limits>
#include <random>
#include <stdexcept>

namespace pfnm {

KMeansResult kmeans(const std::vector<Eigen::VectorXd>& points, int k, std::uint64_t seed,
                    int max_iter, double tol) {
  const int n = static_cast<int>(points.size());
  if (n == 0) throw std::invalid_argument("kmeans: no points");
  if (k < 1) throw std::invalid_argument("kmeans: k must be >= 1");
  k = std::min(k, n);
  const Eigen::Index dim = points.front().size();
  for (const auto& p : points)
    if (p.size() != dim) throw std::invalid_argument("kmeans: points differ in dimension");

  std::mt19937_64 rng(seed);
  std::vector<Eigen::VectorXd> centres;
  centres.push_back(points[std::uniform_int_distribution<int>(0, n - 1)(rng)]);
  std::vector<double> d2(n);
  for (int i = 0; i < n; ++i) d2[i] = (points[i] - centres[0]).squaredNorm();
  while (static_cast<int>(centres.size()) < k) {
    double total = 0.0;
    for (double v : d2) total += v;
    int pick = 0;
    if (total > 0.0) {
      double target = std::uniform_real_distribution<double>(0.0, total)(rng);
      pick = n - 1;
      for (int i = 0; i < n; ++i) {
        target -= d2[i];
        if (target < 0.0) {
          pick = i;
          break;
        }
      }
    } else {
      // All remaining points coincide with a centre.
      pick = std::uniform_int_distribution<int>(0, n - 1)(rng);
    }
    centres.push_back(points[pick]);
    for (int i = 0; i < n; ++i) d2[i] = std::min(d2[i], (points[i] - centres.back()).squaredNorm());
  }

  KMeansResult res;
  res.labels.assign(n, 0);
  double previous = std::numeric_limits<double>::infinity();
  for (int iter = 1; iter <= max_iter; ++iter) {
    res.iterations = iter;
    double inertia = 0.0;
    for (int i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (int c = 0; c < static_cast<int>(centres.size()); ++c) {
        const double dist = (points[i] - centres[c]).squaredNorm();
        if (dist < best) {
          best = dist;
          res.labels[i] = c;
        }
      }
      inertia += best;
    }
    std::vector<Eigen::VectorXd> sums(centres.size(), Eigen::VectorXd::Zero(dim));
    std::vector<int> counts(centres.size(), 0);
    for (int i = 0; i < n; ++i) {
      sums[res.labels[i]] += points[i];
      ++counts[res.labels[i]];
    }
    for (std::size_t c = 0; c < centres.size(); ++c)
      if (counts[c] > 0) centres[c] = sums[c] / counts[c];
    res.inertia = inertia;
    const double change = std::abs(previous - inertia) / std::max(inertia, 1e-300);
    previous = inertia;
    if (change < tol) break;
  }

  // Final assignment against the last centres, then drop empty clusters.
  std::vector<int> counts(centres.size(), 0);
  res.inertia = 0.0;
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int c = 0; c < static_cast<int>(centres.size()); ++c) {
      const double dist = (points[i] - centres[c]).squaredNorm();
      if (dist < best) {
        best = dist;
        res.labels[i] = c;
      }
    }
    res.inertia += best;
    ++counts[res.labels[i]];
  }
  std::vector<int> remap(centres.size(), -1);
  for (std::size_t c = 0; c < centres.size(); ++c) {
    if (counts[c] == 0) continue;
    remap[c] = static_cast<int>(res.centroids.size());
    res.centroids.push_back(centres[c]);
    res.sizes.push_back(counts[c]);
  }
  for (int& l : res.labels) l = remap[l];
  return res;
}

}  // namespace pfnm
