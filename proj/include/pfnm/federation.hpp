#pragma once

#include "pfnm/dataset.hpp"
#include "pfnm/deep_matching.hpp"
#include "pfnm/mlp.hpp"

#include <cstdint>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace pfnm {

/// Independent sub-stream seed for (base, tags...), via splitmix64.
std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags);

enum class PartitionStrategy { homogeneous, heterogeneous };

std::string to_string(PartitionStrategy s);
PartitionStrategy parse_partition(const std::string& name);

struct Partition {
  std::vector<std::vector<int>> batches;
  PartitionStrategy strategy = PartitionStrategy::homogeneous;
  double concentration = 0.5;
  std::uint64_t seed = 0;

  int num_batches() const { return static_cast<int>(batches.size()); }
  /// Disjoint cover of [0, n).
  void validate(int n) const;
};

/// Raised when a heterogeneous draw leaves some batch without examples.
class EmptyBatchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Each class is shuffled and dealt into J parts whose sizes differ by at
/// most one; which parts get the extra example rotates across classes.
Partition partition_homogeneous(const Dataset& data, int num_batches, std::uint64_t seed);

/// Per class, batch proportions ~ Dir_J(concentration), rounded to counts by
/// largest remainder.
Partition partition_heterogeneous(const Dataset& data, int num_batches, double concentration,
                                  std::uint64_t seed);

std::vector<Dataset> split(const Dataset& data, const Partition& partition);

struct NetSpec {
  std::vector<int> widths{100};
  Activation activation = Activation::relu;
};

/// Trains one network per batch from fresh initialisations. Batch j uses
/// seed derive_seed(seed, {j}) for both its init and shuffle streams.
std::vector<Mlp> train_locals(const std::vector<Dataset>& batches, int num_classes,
                              const NetSpec& spec, const TrainConfig& cfg, std::uint64_t seed);

struct RoundLog {
  int round = 1;
  std::vector<int> layer_sizes;
  int global_size = 0;
  int local_size_total = 0;
  double log_size_ratio = 0.0;
  double global_accuracy = 0.0;
  std::vector<double> local_accuracies;
  double seconds = 0.0;
};

double log_size_ratio(int global_size, int local_size_total);

struct RoundsConfig {
  int rounds = 1;
  int later_epochs = 5;
  double lr_decay = 0.99;
  int max_passes = 10;
};

struct PfnmResult {
  GlobalNetwork network;
  std::vector<RoundLog> logs;
};

/// Thrown when a later round fails; carries the rounds that completed.
class RoundFailure : public std::runtime_error {
 public:
  RoundFailure(const std::string& what, std::vector<RoundLog> done)
      : std::runtime_error(what), logs(std::move(done)) {}
  std::vector<RoundLog> logs;
};

/// Communication rounds starting from already trained round-1 locals. Round
/// t > 1 re-initialises each local from its matched global atoms, trains
/// `later_epochs` with the learning rate scaled by lr_decay^(t-1) and fresh
/// optimizer state, then rematches. `on_round` sees every completed round.
PfnmResult federate_pfnm(std::vector<Mlp> locals, const std::vector<Dataset>& batches,
                         const Dataset& test, const std::vector<PriorConfig>& priors,
                         const RoundsConfig& rounds, const TrainConfig& train_cfg,
                         std::uint64_t seed,
                         const std::function<void(const RoundLog&, const GlobalNetwork&)>& on_round = {});

Eigen::MatrixXd ensemble_proba(const std::vector<Mlp>& locals, const Eigen::Ref<const FeatureMatrix>& x);
/// Argmax of the mean member probability vector.
std::vector<int> aggregate_ensemble(const std::vector<Mlp>& locals, const Eigen::Ref<const FeatureMatrix>& x);

/// Coordinate-wise sum_j weights[j] * model_j. Architectures must agree.
Mlp average_models(const std::vector<Mlp>& models, const std::vector<double>& weights);

struct FedAvgConfig {
  int rounds = 1;
  int first_epochs = 10;
  int later_epochs = 5;
  bool weighted = true;  // n_j / n, otherwise 1 / J
};

/// All clients start each round from the current global model; round 1 from
/// one shared initialisation (seed derive_seed(seed, {0})). Client j in round
/// t shuffles with derive_seed(seed, {t, j}).
Mlp aggregate_fedavg(const std::vector<Dataset>& batches, int num_classes, const NetSpec& spec,
                     const TrainConfig& train_cfg, const FedAvgConfig& cfg, std::uint64_t seed,
                     const std::function<void(int, const Mlp&)>& on_round = {});

/// Default cluster count min(500, 50 J).
int default_kmeans_clusters(int num_batches);

/// Pools every local atom of single-hidden-layer networks and replaces the
/// hidden layer by k-means centroids. k <= 0 selects the default.
GlobalNetwork aggregate_kmeans(const std::vector<Mlp>& locals, int k, std::uint64_t seed);

}  // namespace pfnm
