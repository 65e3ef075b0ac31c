#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <vector>

namespace pfnm {

struct KMeansResult {
  std::vector<Eigen::VectorXd> centroids;  // empty clusters removed
  std::vector<int> sizes;
  std::vector<int> labels;  // index into centroids
  double inertia = 0.0;
  int iterations = 0;
};

/// Lloyd's algorithm with k-means++ seeding. Stops when the relative change
/// in inertia drops below `tol` or after `max_iter` iterations.
/// k larger than the point count is clamped.
KMeansResult kmeans(const std::vector<Eigen::VectorXd>& points, int k, std::uint64_t seed,
                    int max_iter = 300, double tol = 1e-6);

}  // namespace pfnm
