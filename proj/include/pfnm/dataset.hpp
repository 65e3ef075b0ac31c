#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace pfnm {

using FeatureMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Labelled examples, one row per example.
struct Dataset {
  FeatureMatrix features;
  std::vector<int> labels;
  int num_classes = 0;

  int size() const { return static_cast<int>(labels.size()); }
  int dim() const { return static_cast<int>(features.cols()); }
  void validate() const;
};

struct TrainTest {
  Dataset train;
  Dataset test;
};

/// Rows selected by `indices`, in the given order.
Dataset subset(const Dataset& data, const std::vector<int>& indices);
/// First `n` rows (all of them when n <= 0 or n >= size).
Dataset head(const Dataset& data, int n);

std::vector<int> class_counts(const Dataset& data);

/// FNV-1a over shape, labels and feature bytes. Used as a cache key.
std::uint64_t dataset_hash(const Dataset& data);

/// Parses an IDX image file (magic 0x00000803), optionally gzip-compressed.
/// Pixels are scaled by 1/255.
FeatureMatrix read_idx_images(const std::string& path);
/// Parses an IDX label file (magic 0x00000801), optionally gzip-compressed.
std::vector<int> read_idx_labels(const std::string& path);

/// Same parsers over an in-memory (already decompressed) byte buffer; `name`
/// only appears in diagnostics.
FeatureMatrix parse_idx_images(const std::vector<unsigned char>& bytes, const std::string& name);
std::vector<int> parse_idx_labels(const std::vector<unsigned char>& bytes, const std::string& name);

/// Loads the four standard MNIST files from `dir`. Accepts both the
/// `train-images-idx3-ubyte` and `train-images.idx3-ubyte` spellings, with or
/// without a `.gz` suffix.
TrainTest load_mnist(const std::string& dir);

struct SyntheticSpec {
  int dim = 20;
  int num_classes = 5;
  int train_per_class = 200;
  int test_per_class = 50;
  double spread = 1.0;      // per-coordinate std of each blob
  double mean_scale = 1.0;  // per-coordinate std of the blob centres
  std::uint64_t seed = 0;
};

/// Gaussian blobs, one per class. Train and test are drawn from the same blobs.
TrainTest generate_synthetic(const SyntheticSpec& spec);

}  // namespace pfnm
