#include "pfnm/dataset.hpp"

#include <zlib.h>

#include <filesystem>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pfnm {

void Dataset::validate() const {
  if (features.rows() != static_cast<Eigen::Index>(labels.size())) {
    std::ostringstream msg;
    msg << "dataset has " << features.rows() << " feature rows but " << labels.size() << " labels";
    throw std::invalid_argument(msg.str());
  }
  if (num_classes < 1) throw std::invalid_argument("dataset: num_classes must be >= 1");
  for (std::size_t i = 0; i < labels.size(); ++i)
    if (labels[i] < 0 || labels[i] >= num_classes) {
      std::ostringstream msg;
      msg << "dataset: label " << labels[i] << " at row " << i << " outside [0," << num_classes << ")";
      throw std::invalid_argument(msg.str());
    }
}

Dataset subset(const Dataset& data, const std::vector<int>& indices) {
  Dataset out;
  out.num_classes = data.num_classes;
  out.features.resize(static_cast<Eigen::Index>(indices.size()), data.features.cols());
  out.labels.resize(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int i = indices[r];
    if (i < 0 || i >= data.size()) throw std::out_of_range("subset: index out of range");
    out.features.row(static_cast<Eigen::Index>(r)) = data.features.row(i);
    out.labels[r] = data.labels[i];
  }
  return out;
}

Dataset head(const Dataset& data, int n) {
  if (n <= 0 || n >= data.size()) return data;
  Dataset out;
  out.num_classes = data.num_classes;
  out.features = data.features.topRows(n);
  out.labels.assign(data.labels.begin(), data.labels.begin() + n);
  return out;
}

std::vector<int> class_counts(const Dataset& data) {
  std::vector<int> counts(data.num_classes, 0);
  for (int y : data.labels) ++counts.at(y);
  return counts;
}

std::uint64_t dataset_hash(const Dataset& data) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  const std::int64_t shape[3] = {data.features.rows(), data.features.cols(), data.num_classes};
  mix(shape, sizeof shape);
  mix(data.labels.data(), data.labels.size() * sizeof(int));
  mix(data.features.data(), static_cast<std::size_t>(data.features.size()) * sizeof(double));
  return h;
}

namespace {

// gzread passes uncompressed files through unchanged.
std::vector<unsigned char> read_file_bytes(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw std::runtime_error("cannot open " + path);
  std::vector<unsigned char> bytes;
  unsigned char buf[1 << 16];
  while (true) {
    const int n = gzread(f, buf, sizeof buf);
    if (n < 0) {
      int code = 0;
      const std::string what = gzerror(f, &code);
      gzclose(f);
      throw std::runtime_error("error reading " + path + ": " + what);
    }
    if (n == 0) break;
    bytes.insert(bytes.end(), buf, buf + n);
  }
  gzclose(f);
  return bytes;
}

std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t offset, const std::string& name) {
  if (offset + 4 > b.size()) {
    std::ostringstream msg;
    msg << name << ": truncated header, need 4 bytes at offset " << offset << " but file has "
        << b.size() << " bytes";
    throw std::runtime_error(msg.str());
  }
  return (std::uint32_t(b[offset]) << 24) | (std::uint32_t(b[offset + 1]) << 16) |
         (std::uint32_t(b[offset + 2]) << 8) | std::uint32_t(b[offset + 3]);
}

void check_magic(std::uint32_t magic, std::uint32_t expected, const std::string& name) {
  if (magic == expected) return;
  std::ostringstream msg;
  msg << name << ": bad magic 0x" << std::hex << magic << " at offset 0, expected 0x" << expected;
  throw std::runtime_error(msg.str());
}

void check_payload(std::size_t have, std::size_t header, std::size_t need, const std::string& name) {
  if (have >= header + need) return;
  std::ostringstream msg;
  msg << name << ": truncated payload, expected " << need << " bytes from offset " << header
      << " but data ends at offset " << have;
  throw std::runtime_error(msg.str());
}

std::string find_idx(const std::string& dir, const std::vector<std::string>& stems) {
  namespace fs = std::filesystem;
  for (const auto& stem : stems)
    for (const char* suffix : {"", ".gz"}) {
      const fs::path p = fs::path(dir) / (stem + suffix);
      if (fs::exists(p)) return p.string();
    }
  throw std::runtime_error("no " + stems.front() + "[.gz] in " + dir);
}

}  // namespace

FeatureMatrix parse_idx_images(const std::vector<unsigned char>& bytes, const std::string& name) {
  check_magic(read_be32(bytes, 0, name), 0x00000803u, name);
  const std::size_t n = read_be32(bytes, 4, name);
  const std::size_t rows = read_be32(bytes, 8, name);
  const std::size_t cols = read_be32(bytes, 12, name);
  const std::size_t dim = rows * cols;
  check_payload(bytes.size(), 16, n * dim, name);
  FeatureMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
  const unsigned char* p = bytes.data() + 16;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dim; ++d)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = p[i * dim + d] / 255.0;
  return x;
}

std::vector<int> parse_idx_labels(const std::vector<unsigned char>& bytes, const std::string& name) {
  check_magic(read_be32(bytes, 0, name), 0x00000801u, name);
  const std::size_t n = read_be32(bytes, 4, name);
  check_payload(bytes.size(), 8, n, name);
  return std::vector<int>(bytes.begin() + 8, bytes.begin() + 8 + static_cast<std::ptrdiff_t>(n));
}

FeatureMatrix read_idx_images(const std::string& path) {
  return parse_idx_images(read_file_bytes(path), path);
}

std::vector<int> read_idx_labels(const std::string& path) {
  return parse_idx_labels(read_file_bytes(path), path);
}

TrainTest load_mnist(const std::string& dir) {
  auto load = [&](const char* prefix) {
    const std::string p = prefix;
    const std::string images_path =
        find_idx(dir, {p + "-images-idx3-ubyte", p + "-images.idx3-ubyte"});
    const std::string labels_path =
        find_idx(dir, {p + "-labels-idx1-ubyte", p + "-labels.idx1-ubyte"});
    Dataset d;
    d.features = read_idx_images(images_path);
    d.labels = read_idx_labels(labels_path);
    if (d.features.rows() != static_cast<Eigen::Index>(d.labels.size())) {
      std::ostringstream msg;
      msg << labels_path << " holds " << d.labels.size() << " labels but " << images_path
          << " holds " << d.features.rows() << " images";
      throw std::runtime_error(msg.str());
    }
    d.num_classes = 10;
    d.validate();
    return d;
  };
  return {load("train"), load("t10k")};
}

TrainTest generate_synthetic(const SyntheticSpec& spec) {
  if (spec.num_classes < 2) throw std::invalid_argument("generate_synthetic: need K >= 2");
  if (spec.dim < 2) throw std::invalid_argument("generate_synthetic: need D >= 2");
  if (spec.spread < 0) throw std::invalid_argument("generate_synthetic: negative spread");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> normal(0.0, 1.0);

  Eigen::MatrixXd means(spec.num_classes, spec.dim);
  for (int k = 0; k < spec.num_classes; ++k)
    for (int d = 0; d < spec.dim; ++d) means(k, d) = spec.mean_scale * normal(rng);

  auto draw = [&](int per_class) {
    Dataset out;
    out.num_classes = spec.num_classes;
    out.features.resize(per_class * spec.num_classes, spec.dim);
    out.labels.resize(per_class * spec.num_classes);
    int row = 0;
    // Interleave classes so that prefixes stay balanced.
    for (int i = 0; i < per_class; ++i)
      for (int k = 0; k < spec.num_classes; ++k, ++row) {
        for (int d = 0; d < spec.dim; ++d)
          out.features(row, d) = means(k, d) + spec.spread * normal(rng);
        out.labels[row] = k;
      }
    return out;
  };
  TrainTest tt;
  tt.train = draw(spec.train_per_class);
  tt.test = draw(spec.test_per_class);
  return tt;
}

}  // namespace pfnm
