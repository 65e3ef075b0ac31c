#include "pfnm/federation.hpp"

#include "pfnm/kmeans.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>

namespace pfnm {

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::vector<std::vector<int>> indices_by_class(const Dataset& data) {
  std::vector<std::vector<int>> by_class(data.num_classes);
  for (int i = 0; i < data.size(); ++i) by_class.at(data.labels[i]).push_back(i);
  return by_class;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t base, std::initializer_list<std::uint64_t> tags) {
  std::uint64_t h = splitmix64(base);
  for (std::uint64_t t : tags) h = splitmix64(h ^ splitmix64(t + 0x632be59bd9b4e019ULL));
  return h;
}

std::string to_string(PartitionStrategy s) {
  return s == PartitionStrategy::homogeneous ? "homogeneous" : "heterogeneous";
}

PartitionStrategy parse_partition(const std::string& name) {
  if (name == "homogeneous" || name == "homo") return PartitionStrategy::homogeneous;
  if (name == "heterogeneous" || name == "hetero") return PartitionStrategy::heterogeneous;
  throw std::invalid_argument("unknown partition '" + name + "' (homogeneous|heterogeneous)");
}

void Partition::validate(int n) const {
  std::vector<char> seen(n, 0);
  int total = 0;
  for (std::size_t j = 0; j < batches.size(); ++j)
    for (int i : batches[j]) {
      if (i < 0 || i >= n) throw std::logic_error("partition index out of range");
      if (seen[i]) {
        std::ostringstream msg;
        msg << "partition: example " << i << " appears twice (batch " << j << ")";
        throw std::logic_error(msg.str());
      }
      seen[i] = 1;
      ++total;
    }
  if (total != n) throw std::logic_error("partition does not cover the dataset");
}

Partition partition_homogeneous(const Dataset& data, int num_batches, std::uint64_t seed) {
  if (num_batches < 1) throw std::invalid_argument("partition: need J >= 1");
  Partition part;
  part.strategy = PartitionStrategy::homogeneous;
  part.seed = seed;
  part.batches.resize(num_batches);
  std::mt19937_64 rng(seed);
  auto by_class = indices_by_class(data);
  int offset = 0;
  for (std::size_t k = 0; k < by_class.size(); ++k) {
    auto& idx = by_class[k];
    const int n = static_cast<int>(idx.size());
    if (n > 0 && n < num_batches)
      std::cerr << "warning: class " << k << " has " << n << " examples for " << num_batches
                << " batches; some batches will lack it\n";
    std::shuffle(idx.begin(), idx.end(), rng);
    const int base = n / num_batches;
    const int extra = n % num_batches;
    int pos = 0;
    for (int j = 0; j < num_batches; ++j) {
      const int take = base + (((j - offset) % num_batches + num_batches) % num_batches < extra ? 1 : 0);
      part.batches[j].insert(part.batches[j].end(), idx.begin() + pos, idx.begin() + pos + take);
      pos += take;
    }
    offset = (offset + extra) % num_batches;
  }
  for (auto& b : part.batches) std::sort(b.begin(), b.end());
  part.validate(data.size());
  return part;
}

Partition partition_heterogeneous(const Dataset& data, int num_batches, double concentration,
                                  std::uint64_t seed) {
  if (num_batches < 1) throw std::invalid_argument("partition: need J >= 1");
  if (!(concentration > 0)) throw std::invalid_argument("partition: concentration must be > 0");
  Partition part;
  part.strategy = PartitionStrategy::heterogeneous;
  part.concentration = concentration;
  part.seed = seed;
  part.batches.resize(num_batches);
  std::mt19937_64 rng(seed);
  std::gamma_distribution<double> gamma(concentration, 1.0);
  auto by_class = indices_by_class(data);
  for (auto& idx : by_class) {
    const int n = static_cast<int>(idx.size());
    std::vector<double> p(num_batches);
    double total = 0.0;
    for (double& v : p) total += (v = gamma(rng));
    if (!(total > 0.0)) {
      std::fill(p.begin(), p.end(), 1.0);
      total = num_batches;
    }
    std::vector<int> count(num_batches);
    std::vector<double> frac(num_batches);
    int assigned = 0;
    for (int j = 0; j < num_batches; ++j) {
      const double quota = p[j] / total * n;
      count[j] = static_cast<int>(std::floor(quota));
      frac[j] = quota - count[j];
      assigned += count[j];
    }
    std::vector<int> order(num_batches);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
    for (int r = 0; r < n - assigned; ++r) ++count[order[r % num_batches]];

    std::shuffle(idx.begin(), idx.end(), rng);
    int pos = 0;
    for (int j = 0; j < num_batches; ++j) {
      part.batches[j].insert(part.batches[j].end(), idx.begin() + pos, idx.begin() + pos + count[j]);
      pos += count[j];
    }
  }
  for (auto& b : part.batches) std::sort(b.begin(), b.end());
  part.validate(data.size());
  for (int j = 0; j < num_batches; ++j)
    if (part.batches[j].empty()) {
      std::ostringstream msg;
      msg << "heterogeneous partition left batch " << j << " empty (seed " << seed
          << "); reseed the partition";
      throw EmptyBatchError(msg.str());
    }
  return part;
}

std::vector<Dataset> split(const Dataset& data, const Partition& partition) {
  std::vector<Dataset> out;
  for (const auto& idx : partition.batches) out.push_back(subset(data, idx));
  return out;
}

std::vector<Mlp> train_locals(const std::vector<Dataset>& batches, int num_classes,
                              const NetSpec& spec, const TrainConfig& cfg, std::uint64_t seed) {
  std::vector<Mlp> locals;
  for (std::size_t j = 0; j < batches.size(); ++j) {
    TrainConfig c = cfg;
    c.seed = derive_seed(seed, {j});
    Mlp init = initialize_mlp(batches[j].dim(), spec.widths, num_classes, spec.activation, c);
    locals.push_back(train(std::move(init), batches[j], c));
  }
  return locals;
}

double log_size_ratio(int global_size, int local_size_total) {
  return std::log(static_cast<double>(global_size) / static_cast<double>(local_size_total));
}

PfnmResult federate_pfnm(std::vector<Mlp> locals, const std::vector<Dataset>& batches,
                         const Dataset& test, const std::vector<PriorConfig>& priors,
                         const RoundsConfig& rounds, const TrainConfig& train_cfg,
                         std::uint64_t seed,
                         const std::function<void(const RoundLog&, const GlobalNetwork&)>& on_round) {
  if (rounds.rounds < 1) throw std::invalid_argument("federate_pfnm: need at least one round");
  if (locals.size() != batches.size())
    throw std::invalid_argument("federate_pfnm: one local network per batch required");
  std::vector<std::vector<int>> widths;
  for (const auto& m : locals) widths.push_back(m.widths());

  using clock = std::chrono::steady_clock;
  PfnmResult result;
  for (int t = 1; t <= rounds.rounds; ++t) {
    const auto start = clock::now();
    try {
      if (t > 1) {
        TrainConfig cfg = train_cfg;
        cfg.epochs = rounds.later_epochs;
        cfg.learning_rate = train_cfg.learning_rate * std::pow(rounds.lr_decay, t - 1);
        for (std::size_t j = 0; j < locals.size(); ++j) {
          cfg.seed = derive_seed(seed, {static_cast<std::uint64_t>(t), j});
          locals[j] = train(reinitialize_local(result.network, static_cast<int>(j)), batches[j], cfg);
          if (locals[j].widths() != widths[j]) throw std::logic_error("local width changed across rounds");
        }
      }
      Schedule schedule;
      schedule.seed = derive_seed(seed, {static_cast<std::uint64_t>(t), 0xa11ULL});
      schedule.max_passes = rounds.max_passes;
      result.network = match_multilayer(locals, priors, schedule);
    } catch (const std::exception& e) {
      std::ostringstream msg;
      msg << "round " << t << " failed: " << e.what();
      throw RoundFailure(msg.str(), result.logs);
    }

    RoundLog log;
    log.round = t;
    log.layer_sizes = result.network.layer_sizes();
    log.global_size = result.network.model.hidden_size();
    for (const auto& m : locals) log.local_size_total += m.hidden_size();
    log.log_size_ratio = log_size_ratio(log.global_size, log.local_size_total);
    log.global_accuracy = evaluate(result.network.model, test);
    for (const auto& m : locals) log.local_accuracies.push_back(evaluate(m, test));
    log.seconds = std::chrono::duration<double>(clock::now() - start).count();
    result.logs.push_back(log);
    if (on_round) on_round(log, result.network);
  }
  return result;
}

Eigen::MatrixXd ensemble_proba(const std::vector<Mlp>& locals, const Eigen::Ref<const FeatureMatrix>& x) {
  if (locals.empty()) throw std::invalid_argument("ensemble: no members");
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(x.rows(), locals.front().output_dim());
  for (const auto& m : locals) {
    if (m.output_dim() != mean.cols()) throw std::invalid_argument("ensemble: members disagree on K");
    mean += predict_proba(m, x);
  }
  return mean / static_cast<double>(locals.size());
}

std::vector<int> aggregate_ensemble(const std::vector<Mlp>& locals, const Eigen::Ref<const FeatureMatrix>& x) {
  return argmax_rows(ensemble_proba(locals, x));
}

Mlp average_models(const std::vector<Mlp>& models, const std::vector<double>& weights) {
  if (models.empty() || models.size() != weights.size())
    throw std::invalid_argument("average_models: need one weight per model");
  Mlp out = models.front();
  for (std::size_t c = 0; c < out.weights.size(); ++c) {
    out.weights[c].setZero();
    out.biases[c].setZero();
  }
  for (std::size_t j = 0; j < models.size(); ++j) {
    const Mlp& m = models[j];
    if (m.weights.size() != out.weights.size())
      throw std::invalid_argument("average_models: architecture mismatch");
    for (std::size_t c = 0; c < out.weights.size(); ++c) {
      if (m.weights[c].rows() != out.weights[c].rows() || m.weights[c].cols() != out.weights[c].cols())
        throw std::invalid_argument("average_models: architecture mismatch");
      out.weights[c] += weights[j] * m.weights[c];
      out.biases[c] += weights[j] * m.biases[c];
    }
  }
  return out;
}

Mlp aggregate_fedavg(const std::vector<Dataset>& batches, int num_classes, const NetSpec& spec,
                     const TrainConfig& train_cfg, const FedAvgConfig& cfg, std::uint64_t seed,
                     const std::function<void(int, const Mlp&)>& on_round) {
  if (batches.empty()) throw std::invalid_argument("fedavg: no batches");
  if (cfg.rounds < 1) throw std::invalid_argument("fedavg: need at least one round");
  TrainConfig c = train_cfg;
  c.seed = derive_seed(seed, {0});
  Mlp global = initialize_mlp(batches.front().dim(), spec.widths, num_classes, spec.activation, c);

  std::vector<double> weights(batches.size());
  double total = 0.0;
  for (const auto& b : batches) total += b.size();
  for (std::size_t j = 0; j < batches.size(); ++j)
    weights[j] = cfg.weighted ? batches[j].size() / total : 1.0 / static_cast<double>(batches.size());

  for (int t = 1; t <= cfg.rounds; ++t) {
    c.epochs = t == 1 ? cfg.first_epochs : cfg.later_epochs;
    std::vector<Mlp> clients;
    for (std::size_t j = 0; j < batches.size(); ++j) {
      c.seed = derive_seed(seed, {static_cast<std::uint64_t>(t), j});
      clients.push_back(train(global, batches[j], c));
    }
    global = average_models(clients, weights);
    if (on_round) on_round(t, global);
  }
  return global;
}

int default_kmeans_clusters(int num_batches) { return std::min(500, 50 * num_batches); }

GlobalNetwork aggregate_kmeans(const std::vector<Mlp>& locals, int k, std::uint64_t seed) {
  if (locals.empty()) throw std::invalid_argument("kmeans aggregation: no local networks");
  std::vector<Eigen::VectorXd> pooled;
  Eigen::VectorXd output_bias = Eigen::VectorXd::Zero(locals.front().output_dim());
  for (const auto& m : locals) {
    if (m.depth() != 1)
      throw std::invalid_argument("kmeans aggregation supports single-hidden-layer networks only");
    std::vector<AtomList> layers = to_atoms(m);
    for (auto& a : layers.front()) pooled.push_back(std::move(a));
    output_bias += m.biases.back();
  }
  output_bias /= static_cast<double>(locals.size());
  if (k <= 0) k = default_kmeans_clusters(static_cast<int>(locals.size()));
  if (k > static_cast<int>(pooled.size())) {
    std::cerr << "warning: k-means cluster count " << k << " exceeds " << pooled.size()
              << " pooled neurons; clamping\n";
    k = static_cast<int>(pooled.size());
  }
  KMeansResult km = kmeans(pooled, k, seed);

  GlobalNetwork net;
  GlobalAtoms layer;
  layer.atoms = km.centroids;
  layer.match_counts = km.sizes;
  net.layers.push_back(std::move(layer));
  net.model = from_atoms({km.centroids}, locals.front().input_dim(), locals.front().output_dim(),
                         output_bias, locals.front().activation);
  return net;
}

}  // namespace pfnm
