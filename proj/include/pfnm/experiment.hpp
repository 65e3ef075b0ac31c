#pragma once

#include "pfnm/dataset.hpp"
#include "pfnm/deep_matching.hpp"
#include "pfnm/federation.hpp"
#include "pfnm/mlp.hpp"

#include <json.hpp>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace pfnm {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PriorSettings {
  double sigma0_sq = 10.0;
  double sigma_sq = 1.0;
  double gamma0 = 1.0;

  PriorConfig prior() const;
};

struct ExperimentConfig {
  std::string dataset = "mnist";  // mnist | synthetic
  std::string data_dir;
  int train_subset = 6000;  // first N examples, <= 0 keeps everything
  int test_subset = 1000;
  SyntheticSpec synthetic;

  PartitionStrategy partition = PartitionStrategy::homogeneous;
  int batches = 5;
  double concentration = 0.5;

  std::vector<std::string> methods{"pfnm"};
  NetSpec net;
  TrainConfig train;

  PriorSettings prior;                       // single-communication matching
  PriorSettings rounds_prior{1.0, 1.0, 1.0};  // pfnm_rounds
  std::vector<double> sigma_sq_grid;          // empty: use prior.sigma_sq
  int max_passes = 10;

  int rounds = 1;
  int later_epochs = 5;
  double lr_decay = 0.99;

  Optimizer fedavg_optimizer = Optimizer::sgd;
  bool fedavg_weighted = true;
  int kmeans_clusters = 0;  // 0: min(500, 50 J)

  std::vector<std::uint64_t> seeds{0};
  std::string out_dir = "results";
  bool csv_wall_clock = false;

  void validate() const;
};

extern const std::vector<std::string> kMethods;

/// Keys mirror the struct fields; unknown keys are rejected.
ExperimentConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const ExperimentConfig& cfg);
/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const ExperimentConfig& cfg);

struct MetricRow {
  std::uint64_t seed = 0;
  int round = 1;
  std::string method;
  double accuracy = 0.0;
  double global_size = 0.0;
  std::vector<int> layer_sizes;
  double log_size_ratio = 0.0;
  double seconds = 0.0;
  std::vector<double> local_accuracies;
};

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::uint64_t partition_seed = 0;
  std::vector<int> batch_sizes;
  std::optional<double> selected_sigma_sq;
  std::vector<MetricRow> rows;
};

struct Aggregate {
  std::string method;
  int round = 1;
  int count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for one seed
};

struct SavedModel {
  Mlp model;
  std::uint64_t seed = 0;
  std::string method;
  double accuracy = 0.0;
};

struct ResultRecord {
  std::string config_hash;
  ExperimentConfig config;
  std::vector<SeedResult> seeds;
  std::vector<Aggregate> aggregates;
  std::optional<SavedModel> model;

  int failed_seeds() const;
};

std::vector<Aggregate> aggregate_rows(const std::vector<SeedResult>& seeds);

/// Loads and subsets the configured dataset.
TrainTest load_dataset(const ExperimentConfig& cfg);

/// Runs every seed. Errors inside a seed are recorded and the next seed runs.
ResultRecord run_experiment(const ExperimentConfig& cfg);
ResultRecord run_experiment(const ExperimentConfig& cfg, const TrainTest& data);

/// Writes results.json, rounds.csv and (when a model exists) model.json.
void emit_results(const ResultRecord& record, const std::string& dir);

std::string format_double(double v);
std::string rounds_csv(const ResultRecord& record);
nlohmann::json results_json(const ResultRecord& record);

nlohmann::json model_to_json(const Mlp& net);
Mlp model_from_json(const nlohmann::json& j);
void save_model(const Mlp& net, const std::string& path);
Mlp load_model(const std::string& path);

struct BenchConfig {
  std::vector<int> sizes{64, 128, 256};  // L_j
  int batches = 4;
  int dim = 48;
  int repeats = 5;
  std::uint64_t seed = 0;
};

struct BenchPoint {
  int local_size = 0;
  int total_atoms = 0;  // J * L_j
  int global_atoms = 0;  // equals total_atoms when nothing matched
  double cost_seconds = 0.0;   // median over repeats
  double solve_seconds = 0.0;  // median over repeats
};

struct BenchResult {
  std::vector<BenchPoint> points;
  double cost_slope = 0.0;  // log-log least squares against J * L_j
  double solve_slope = 0.0;
};

/// Matching wall-clock on inputs where no two neurons should ever be
/// matched: atoms ~ N(0, 100^2 I), sigma0_sq = 1e4, sigma_sq = 1.
BenchResult benchmark_matching(const BenchConfig& cfg);
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace pfnm
