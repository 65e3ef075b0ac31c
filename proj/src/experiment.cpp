#include "pfnm/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace pfnm {

const std::vector<std::string> kMethods{"pfnm", "pfnm_rounds", "fedavg", "ensemble", "kmeans", "local"};

PriorConfig PriorSettings::prior() const {
  PriorConfig p;
  p.sigma0_sq = sigma0_sq;
  p.sigma_sq = sigma_sq;
  p.gamma0 = gamma0;
  return p;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (dataset != "mnist" && dataset != "synthetic") fail("dataset must be mnist or synthetic");
  if (dataset == "mnist" && !data_dir.empty() && !std::filesystem::is_directory(data_dir))
    fail("data_dir '" + data_dir + "' is not a directory");
  if (batches < 1) fail("batches must be >= 1");
  if (!(concentration > 0)) fail("concentration must be > 0");
  if (methods.empty()) fail("at least one method is required");
  for (const auto& m : methods)
    if (std::find(kMethods.begin(), kMethods.end(), m) == kMethods.end())
      fail("unknown method '" + m + "'");
  if (std::set<std::string>(methods.begin(), methods.end()).size() != methods.size())
    fail("methods listed twice");
  if (net.widths.empty()) fail("need at least one hidden layer");
  for (int w : net.widths)
    if (w < 1) fail("hidden widths must be >= 1");
  if (net.widths.size() > 1 && std::find(methods.begin(), methods.end(), "kmeans") != methods.end())
    fail("kmeans supports a single hidden layer only");
  try {
    train.validate();
    for (const auto* p : {&prior, &rounds_prior}) p->prior().validate();
  } catch (const std::invalid_argument& e) {
    fail(e.what());
  }
  for (double s : sigma_sq_grid)
    if (!(s > 0)) fail("sigma_sq_grid entries must be > 0");
  if (max_passes < 0) fail("max_passes must be >= 0");
  if (rounds < 1) fail("rounds must be >= 1");
  if (later_epochs < 0) fail("later_epochs must be >= 0");
  if (!(lr_decay > 0)) fail("lr_decay must be > 0");
  if (seeds.empty()) fail("seeds must be non-empty");
  if (synthetic.num_classes < 2 || synthetic.dim < 2) fail("synthetic needs K >= 2 and D >= 2");
}

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!known.count(key)) throw ConfigError("unknown config key '" + where + key + "'");
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void read_prior(const json& j, const char* key, PriorSettings& p) {
  if (!j.contains(key)) return;
  const json& o = j.at(key);
  reject_unknown(o, {"sigma0_sq", "sigma_sq", "gamma0"}, std::string(key) + ".");
  read(o, "sigma0_sq", p.sigma0_sq);
  read(o, "sigma_sq", p.sigma_sq);
  read(o, "gamma0", p.gamma0);
}

json prior_json(const PriorSettings& p) {
  return {{"sigma0_sq", p.sigma0_sq}, {"sigma_sq", p.sigma_sq}, {"gamma0", p.gamma0}};
}

std::string hex64(std::uint64_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << v;
  return out.str();
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  reject_unknown(j,
                 {"dataset", "data_dir", "train_subset", "test_subset", "synthetic", "partition",
                  "batches", "concentration", "methods", "layers", "neurons", "widths", "activation",
                  "train", "prior", "rounds_prior", "sigma_sq_grid", "max_passes", "rounds",
                  "later_epochs", "lr_decay", "fedavg_optimizer", "fedavg_weighted",
                  "kmeans_clusters", "seeds", "out_dir", "csv_wall_clock"},
                 "");
  ExperimentConfig c;
  read(j, "dataset", c.dataset);
  read(j, "data_dir", c.data_dir);
  read(j, "train_subset", c.train_subset);
  read(j, "test_subset", c.test_subset);
  if (j.contains("synthetic")) {
    const json& s = j.at("synthetic");
    reject_unknown(s, {"dim", "num_classes", "train_per_class", "test_per_class", "spread", "mean_scale", "seed"},
                   "synthetic.");
    read(s, "dim", c.synthetic.dim);
    read(s, "num_classes", c.synthetic.num_classes);
    read(s, "train_per_class", c.synthetic.train_per_class);
    read(s, "test_per_class", c.synthetic.test_per_class);
    read(s, "spread", c.synthetic.spread);
    read(s, "mean_scale", c.synthetic.mean_scale);
    read(s, "seed", c.synthetic.seed);
  }
  try {
    if (j.contains("partition")) c.partition = parse_partition(j.at("partition").get<std::string>());
    if (j.contains("activation")) c.net.activation = parse_activation(j.at("activation").get<std::string>());
    if (j.contains("fedavg_optimizer"))
      c.fedavg_optimizer = parse_optimizer(j.at("fedavg_optimizer").get<std::string>());
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  read(j, "batches", c.batches);
  read(j, "concentration", c.concentration);
  if (j.contains("methods") && j.at("methods").is_string())
    c.methods = {j.at("methods").get<std::string>()};
  else
    read(j, "methods", c.methods);

  if (j.contains("widths")) {
    if (j.contains("layers") || j.contains("neurons")) throw ConfigError("give widths or layers/neurons, not both");
    read(j, "widths", c.net.widths);
  } else {
    int layers = static_cast<int>(c.net.widths.size());
    int neurons = c.net.widths.front();
    read(j, "layers", layers);
    read(j, "neurons", neurons);
    if (layers < 1) throw ConfigError("layers must be >= 1");
    c.net.widths.assign(layers, neurons);
  }

  if (j.contains("train")) {
    const json& t = j.at("train");
    reject_unknown(t,
                   {"learning_rate", "l2_coefficient", "minibatch_size", "epochs", "init_scale",
                    "init_is_std", "bias_init", "optimizer", "beta1", "beta2", "epsilon"},
                   "train.");
    read(t, "learning_rate", c.train.learning_rate);
    read(t, "l2_coefficient", c.train.l2_coefficient);
    read(t, "minibatch_size", c.train.minibatch_size);
    read(t, "epochs", c.train.epochs);
    read(t, "init_scale", c.train.init_scale);
    read(t, "init_is_std", c.train.init_is_std);
    read(t, "bias_init", c.train.bias_init);
    read(t, "beta1", c.train.beta1);
    read(t, "beta2", c.train.beta2);
    read(t, "epsilon", c.train.epsilon);
    try {
      if (t.contains("optimizer")) c.train.optimizer = parse_optimizer(t.at("optimizer").get<std::string>());
    } catch (const std::exception& e) {
      throw ConfigError(e.what());
    }
  }
  read_prior(j, "prior", c.prior);
  read_prior(j, "rounds_prior", c.rounds_prior);
  read(j, "sigma_sq_grid", c.sigma_sq_grid);
  read(j, "max_passes", c.max_passes);
  read(j, "rounds", c.rounds);
  read(j, "later_epochs", c.later_epochs);
  read(j, "lr_decay", c.lr_decay);
  read(j, "fedavg_weighted", c.fedavg_weighted);
  read(j, "kmeans_clusters", c.kmeans_clusters);
  read(j, "seeds", c.seeds);
  read(j, "out_dir", c.out_dir);
  read(j, "csv_wall_clock", c.csv_wall_clock);
  return c;
}

json config_to_json(const ExperimentConfig& c) {
  const auto& s = c.synthetic;
  const auto& t = c.train;
  return {
      {"dataset", c.dataset},
      {"data_dir", c.data_dir},
      {"train_subset", c.train_subset},
      {"test_subset", c.test_subset},
      {"synthetic",
       {{"dim", s.dim}, {"num_classes", s.num_classes}, {"train_per_class", s.train_per_class},
        {"test_per_class", s.test_per_class}, {"spread", s.spread}, {"mean_scale", s.mean_scale},
        {"seed", s.seed}}},
      {"partition", to_string(c.partition)},
      {"batches", c.batches},
      {"concentration", c.concentration},
      {"methods", c.methods},
      {"widths", c.net.widths},
      {"activation", to_string(c.net.activation)},
      {"train",
       {{"learning_rate", t.learning_rate}, {"l2_coefficient", t.l2_coefficient},
        {"minibatch_size", t.minibatch_size}, {"epochs", t.epochs}, {"init_scale", t.init_scale},
        {"init_is_std", t.init_is_std}, {"bias_init", t.bias_init}, {"optimizer", to_string(t.optimizer)},
        {"beta1", t.beta1}, {"beta2", t.beta2}, {"epsilon", t.epsilon}}},
      {"prior", prior_json(c.prior)},
      {"rounds_prior", prior_json(c.rounds_prior)},
      {"sigma_sq_grid", c.sigma_sq_grid},
      {"max_passes", c.max_passes},
      {"rounds", c.rounds},
      {"later_epochs", c.later_epochs},
      {"lr_decay", c.lr_decay},
      {"fedavg_optimizer", to_string(c.fedavg_optimizer)},
      {"fedavg_weighted", c.fedavg_weighted},
      {"kmeans_clusters", c.kmeans_clusters},
      {"seeds", c.seeds},
      {"out_dir", c.out_dir},
      {"csv_wall_clock", c.csv_wall_clock},
  };
}

std::string config_hash(const ExperimentConfig& cfg) {
  json j = config_to_json(cfg);
  j.erase("out_dir");  // where results go does not change them
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return hex64(h);
}

int ResultRecord::failed_seeds() const {
  int n = 0;
  for (const auto& s : seeds) n += !s.ok;
  return n;
}

std::vector<Aggregate> aggregate_rows(const std::vector<SeedResult>& seeds) {
  std::vector<Aggregate> out;
  std::map<std::pair<std::string, int>, std::size_t> index;
  std::vector<std::vector<double>> values;
  for (const auto& s : seeds) {
    if (!s.ok) continue;
    for (const auto& r : s.rows) {
      const auto key = std::make_pair(r.method, r.round);
      auto it = index.find(key);
      if (it == index.end()) {
        it = index.emplace(key, out.size()).first;
        out.push_back({r.method, r.round, 0, 0.0, 0.0});
        values.emplace_back();
      }
      values[it->second].push_back(r.accuracy);
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto& v = values[i];
    out[i].count = static_cast<int>(v.size());
    double sum = 0.0;
    for (double x : v) sum += x;
    out[i].mean = sum / v.size();
    double ss = 0.0;
    for (double x : v) ss += (x - out[i].mean) * (x - out[i].mean);
    out[i].std = v.size() > 1 ? std::sqrt(ss / (v.size() - 1)) : 0.0;
  }
  return out;
}

TrainTest load_dataset(const ExperimentConfig& cfg) {
  TrainTest tt;
  if (cfg.dataset == "synthetic") {
    tt = generate_synthetic(cfg.synthetic);
  } else {
    std::string dir = cfg.data_dir;
    if (dir.empty()) {
      const char* env = std::getenv("PFNM_DATA_DIR");
      dir = env ? env : "data/mnist";
    }
    tt = load_mnist(dir);
  }
  tt.train = head(tt.train, cfg.train_subset);
  tt.test = head(tt.test, cfg.test_subset);
  return tt;
}

namespace {

struct SeedContext {
  const ExperimentConfig& cfg;
  const TrainTest& data;
  std::uint64_t seed;
  Partition partition;
  std::vector<Dataset> batches;
  std::vector<Mlp> locals;
  std::uint64_t data_hash = 0;
};

// Trained locals keyed by (dataset hash, partition seed, training settings).
class LocalCache {
 public:
  const std::vector<Mlp>& get(SeedContext& ctx) {
    json key = {{"data", ctx.data_hash},
                {"partition", ctx.partition.seed},
                {"strategy", to_string(ctx.partition.strategy)},
                {"train", config_to_json(ctx.cfg)["train"]},
                {"widths", ctx.cfg.net.widths},
                {"activation", to_string(ctx.cfg.net.activation)},
                {"seed", ctx.seed}};
    const std::string k = key.dump();
    auto it = cache_.find(k);
    if (it == cache_.end())
      it = cache_.emplace(k, train_locals(ctx.batches, ctx.data.train.num_classes, ctx.cfg.net, ctx.cfg.train,
                                          derive_seed(ctx.seed, {0x10ca1}))).first;
    return it->second;
  }

 private:
  std::map<std::string, std::vector<Mlp>> cache_;
};

std::vector<PriorConfig> one_prior(const PriorSettings& p) { return {p.prior()}; }

Dataset concatenate(const std::vector<Dataset>& batches, int num_classes) {
  Dataset out;
  out.num_classes = num_classes;
  int n = 0;
  for (const auto& b : batches) n += b.size();
  out.features.resize(n, batches.front().dim());
  int row = 0;
  for (const auto& b : batches) {
    out.features.middleRows(row, b.size()) = b.features;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    row += b.size();
  }
  return out;
}

void repeat_rows(SeedResult& res, MetricRow row, int rounds) {
  for (int t = 1; t <= rounds; ++t) {
    row.round = t;
    res.rows.push_back(row);
  }
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

}  // namespace

ResultRecord run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  return run_experiment(cfg, load_dataset(cfg));
}

ResultRecord run_experiment(const ExperimentConfig& cfg, const TrainTest& data) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  ResultRecord record;
  record.config = cfg;
  record.config_hash = config_hash(cfg);
  LocalCache cache;
  const std::uint64_t data_hash = dataset_hash(data.train);
  const Dataset& test = data.test;

  for (std::uint64_t seed : cfg.seeds) {
    SeedResult res;
    res.seed = seed;
    try {
      SeedContext ctx{cfg, data, seed, {}, {}, {}, data_hash};
      if (cfg.partition == PartitionStrategy::homogeneous) {
        ctx.partition = partition_homogeneous(data.train, cfg.batches, derive_seed(seed, {0x9a27}));
      } else {
        for (int attempt = 0;; ++attempt) {
          try {
            ctx.partition = partition_heterogeneous(data.train, cfg.batches, cfg.concentration,
                                                    derive_seed(seed, {0x9a27, static_cast<std::uint64_t>(attempt)}));
            break;
          } catch (const EmptyBatchError& e) {
            if (attempt == 9) throw;
            std::cerr << "warning: " << e.what() << "; retrying with a derived seed\n";
          }
        }
      }
      res.partition_seed = ctx.partition.seed;
      ctx.batches = split(data.train, ctx.partition);
      for (const auto& b : ctx.batches) res.batch_sizes.push_back(b.size());

      for (const std::string& method : cfg.methods) {
        const auto start = clock::now();
        MetricRow row;
        row.seed = seed;
        row.method = method;
        if (method == "fedavg") {
          TrainConfig t = cfg.train;
          t.optimizer = cfg.fedavg_optimizer;
          FedAvgConfig f;
          f.rounds = cfg.rounds;
          f.first_epochs = cfg.train.epochs;
          f.later_epochs = cfg.later_epochs;
          f.weighted = cfg.fedavg_weighted;
          auto round_start = clock::now();
          Mlp final_model;
          aggregate_fedavg(ctx.batches, data.train.num_classes, cfg.net, t, f, derive_seed(seed, {0xfeda}),
                           [&](int round, const Mlp& g) {
                             row.round = round;
                             row.accuracy = evaluate(g, test);
                             row.global_size = g.hidden_size();
                             row.layer_sizes = g.widths();
                             row.log_size_ratio = log_size_ratio(g.hidden_size(), g.hidden_size() * cfg.batches);
                             row.seconds = seconds_since(round_start);
                             round_start = clock::now();
                             res.rows.push_back(row);
                             final_model = g;
                           });
          if (!record.model) record.model = SavedModel{final_model, seed, method, row.accuracy};
          continue;
        }

        const std::vector<Mlp>& locals = cache.get(ctx);
        int local_total = 0;
        for (const auto& m : locals) local_total += m.hidden_size();

        if (method == "local" || method == "ensemble") {
          if (method == "local") {
            double sum = 0.0;
            for (const auto& m : locals) {
              row.local_accuracies.push_back(evaluate(m, test));
              sum += row.local_accuracies.back();
            }
            row.accuracy = sum / locals.size();
            row.global_size = static_cast<double>(local_total) / locals.size();
          } else {
            row.accuracy = accuracy(aggregate_ensemble(locals, test.features), test.labels);
            row.global_size = local_total;
          }
          row.log_size_ratio = std::log(row.global_size / local_total);
          row.seconds = seconds_since(start);
          repeat_rows(res, row, cfg.rounds);
        } else if (method == "kmeans") {
          const GlobalNetwork net = aggregate_kmeans(locals, cfg.kmeans_clusters, derive_seed(seed, {0x4b}));
          row.accuracy = evaluate(net.model, test);
          row.layer_sizes = net.layer_sizes();
          row.global_size = net.model.hidden_size();
          row.log_size_ratio = log_size_ratio(net.model.hidden_size(), local_total);
          row.seconds = seconds_since(start);
          repeat_rows(res, row, cfg.rounds);
          if (!record.model) record.model = SavedModel{net.model, seed, method, row.accuracy};
        } else {
          const bool multi = method == "pfnm_rounds";
          PriorSettings prior = multi ? cfg.rounds_prior : cfg.prior;
          RoundsConfig rc;
          rc.rounds = multi ? cfg.rounds : 1;
          rc.later_epochs = cfg.later_epochs;
          rc.lr_decay = cfg.lr_decay;
          rc.max_passes = cfg.max_passes;
          if (!multi && !cfg.sigma_sq_grid.empty()) {
            const Dataset pooled = concatenate(ctx.batches, data.train.num_classes);
            double best = -1.0;
            for (double s : cfg.sigma_sq_grid) {
              PriorSettings trial = prior;
              trial.sigma_sq = s;
              Schedule sch;
              sch.seed = derive_seed(seed, {0x5e1ec7});
              sch.max_passes = cfg.max_passes;
              const double acc = evaluate(match_multilayer(locals, one_prior(trial), sch).model, pooled);
              if (acc > best) {
                best = acc;
                prior.sigma_sq = s;
              }
            }
            res.selected_sigma_sq = prior.sigma_sq;
          }
          const PfnmResult out =
              federate_pfnm(locals, ctx.batches, test, one_prior(prior), rc, cfg.train, derive_seed(seed, {0x3f1}));
          for (const RoundLog& log : out.logs) {
            row.round = log.round;
            row.accuracy = log.global_accuracy;
            row.layer_sizes = log.layer_sizes;
            row.global_size = log.global_size;
            row.log_size_ratio = log.log_size_ratio;
            row.seconds = log.seconds;
            row.local_accuracies = log.local_accuracies;
            if (multi) res.rows.push_back(row);
          }
          if (!multi) {
            row.seconds = seconds_since(start);
            repeat_rows(res, row, cfg.rounds);
          }
          if (!record.model) record.model = SavedModel{out.network.model, seed, method, row.accuracy};
        }
      }
      res.ok = true;
    } catch (const std::exception& e) {
      res.ok = false;
      res.error = e.what();
      res.rows.clear();
      std::cerr << "seed " << seed << " failed: " << e.what() << "\n";
    }
    record.seeds.push_back(std::move(res));
  }
  record.aggregates = aggregate_rows(record.seeds);
  return record;
}

double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw std::invalid_argument("loglog_slope: need >= 2 points");
  const std::size_t n = x.size();
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= n;
  my /= n;
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = std::log(x[i]) - mx;
    sxy += dx * (std::log(y[i]) - my);
    sxx += dx * dx;
  }
  return sxy / sxx;
}

BenchResult benchmark_matching(const BenchConfig& cfg) {
  if (cfg.sizes.size() < 2 || cfg.batches < 1 || cfg.dim < 1 || cfg.repeats < 1)
    throw std::invalid_argument("benchmark_matching: bad configuration");
  BenchResult result;
  std::vector<double> xs, cost, solve;
  for (int size : cfg.sizes) {
    std::vector<double> c_times, s_times;
    BenchPoint point;
    point.local_size = size;
    point.total_atoms = size * cfg.batches;
    for (int r = 0; r < cfg.repeats; ++r) {
      std::mt19937_64 rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(size), static_cast<std::uint64_t>(r)}));
      std::normal_distribution<double> normal(0.0, 100.0);
      std::vector<AtomList> sets(cfg.batches);
      for (auto& set : sets)
        for (int l = 0; l < size; ++l) {
          AtomVector a(cfg.dim);
          for (int d = 0; d < cfg.dim; ++d) a(d) = normal(rng);
          set.push_back(std::move(a));
        }
      PriorConfig prior;
      prior.sigma0_sq = 1e4;
      prior.sigma_sq = 1.0;
      prior.gamma0 = 1.0;
      prior.num_batches = cfg.batches;
      Schedule schedule;
      schedule.seed = derive_seed(cfg.seed, {0xbe7c4});
      const GlobalAtoms g = match_single_layer(sets, prior, schedule);
      c_times.push_back(g.stats.cost_seconds);
      s_times.push_back(g.stats.solve_seconds);
      point.global_atoms = g.size();
    }
    auto median = [](std::vector<double> v) {
      std::sort(v.begin(), v.end());
      const std::size_t m = v.size() / 2;
      return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
    };
    point.cost_seconds = median(c_times);
    point.solve_seconds = median(s_times);
    result.points.push_back(point);
    xs.push_back(point.total_atoms);
    cost.push_back(point.cost_seconds);
    solve.push_back(point.solve_seconds);
  }
  result.cost_slope = loglog_slope(xs, cost);
  result.solve_slope = loglog_slope(xs, solve);
  return result;
}

}  // namespace pfnm
