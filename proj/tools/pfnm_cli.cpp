#include "pfnm/experiment.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

struct RunOptions {
  std::string config;
  std::optional<std::string> dataset, data_dir, partition, method, seeds, out;
  std::optional<int> subset, test_subset, batches, layers, neurons, rounds;
  std::optional<double> concentration, sigma0_sq, sigma_sq, gamma0;
  std::optional<std::uint64_t> seed;
  bool wall_clock = false;
};

pfnm::ExperimentConfig build_config(const RunOptions& o) {
  nlohmann::json j = nlohmann::json::object();
  if (!o.config.empty()) {
    std::ifstream in(o.config);
    if (!in) throw pfnm::ConfigError("cannot open config " + o.config);
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw pfnm::ConfigError(o.config + ": " + e.what());
    }
  }
  if (o.dataset) j["dataset"] = *o.dataset;
  if (o.data_dir) j["data_dir"] = *o.data_dir;
  if (o.subset) j["train_subset"] = *o.subset;
  if (o.test_subset) j["test_subset"] = *o.test_subset;
  if (o.partition) j["partition"] = *o.partition;
  if (o.batches) j["batches"] = *o.batches;
  if (o.concentration) j["concentration"] = *o.concentration;
  if (o.method) j["methods"] = split_list(*o.method);
  if (o.layers || o.neurons) {
    const int layers = o.layers ? *o.layers : (j.contains("widths") ? static_cast<int>(j["widths"].size()) : j.value("layers", 1));
    const int neurons = o.neurons ? *o.neurons
                                  : (j.contains("widths") ? j["widths"].at(0).get<int>() : j.value("neurons", 100));
    j.erase("widths");
    j["layers"] = layers;
    j["neurons"] = neurons;
  }
  if (o.rounds) j["rounds"] = *o.rounds;
  for (auto [key, value] : {std::pair{"sigma0_sq", o.sigma0_sq}, {"sigma_sq", o.sigma_sq}, {"gamma0", o.gamma0}}) {
    if (!value) continue;
    j["prior"][key] = *value;
    j["rounds_prior"][key] = *value;
  }
  if (o.seed) j["seeds"] = {*o.seed};
  if (o.seeds) {
    std::vector<std::uint64_t> seeds;
    for (const auto& s : split_list(*o.seeds)) {
      try {
        seeds.push_back(std::stoull(s));
      } catch (const std::exception&) {
        throw pfnm::ConfigError("bad seed '" + s + "'");
      }
    }
    j["seeds"] = seeds;
  }
  if (o.out) j["out_dir"] = *o.out;
  if (o.wall_clock) j["csv_wall_clock"] = true;
  pfnm::ExperimentConfig cfg = pfnm::config_from_json(j);
  cfg.validate();
  return cfg;
}

int run_command(const RunOptions& o) {
  pfnm::ExperimentConfig cfg;
  try {
    cfg = build_config(o);
  } catch (const pfnm::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  pfnm::TrainTest data;
  try {
    data = pfnm::load_dataset(cfg);
  } catch (const std::exception& e) {
    std::cerr << "cannot load data: " << e.what() << "\n";
    return 2;
  }
  const pfnm::ResultRecord record = pfnm::run_experiment(cfg, data);
  try {
    pfnm::emit_results(record, cfg.out_dir);
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  for (const auto& a : record.aggregates)
    if (a.round == cfg.rounds || a.round == 1)
      std::cout << a.method << " round " << a.round << ": accuracy " << a.mean << " +- " << a.std << " ("
                << a.count << " seeds)\n";
  std::cout << "wrote " << cfg.out_dir << "/results.json, rounds.csv"
            << (record.model ? ", model.json" : "") << "\n";
  return record.failed_seeds() > 0 ? 1 : 0;
}

int bench_command(const pfnm::BenchConfig& cfg, const std::string& out) {
  const pfnm::BenchResult r = pfnm::benchmark_matching(cfg);
  std::ostringstream csv;
  csv << "local_size,total_atoms,global_atoms,cost_seconds,solve_seconds\n";
  for (const auto& p : r.points)
    csv << p.local_size << ',' << p.total_atoms << ',' << p.global_atoms << ','
        << pfnm::format_double(p.cost_seconds) << ',' << pfnm::format_double(p.solve_seconds) << '\n';
  std::cout << csv.str() << "cost slope " << r.cost_slope << ", solve slope " << r.solve_slope << "\n";
  if (!out.empty()) {
    std::filesystem::create_directories(out);
    std::ofstream(std::filesystem::path(out) / "bench.csv") << csv.str();
  }
  return 0;
}

int eval_command(const std::string& model_path, const std::string& data_dir, int test_subset) {
  const pfnm::Mlp net = pfnm::load_model(model_path);
  pfnm::Dataset test = pfnm::head(pfnm::load_mnist(data_dir).test, test_subset);
  std::cout << pfnm::format_double(pfnm::evaluate(net, test)) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated neural matching experiments"};
  app.require_subcommand(1);

  RunOptions ro;
  auto* run = app.add_subcommand("run", "Run an experiment and write results.json, rounds.csv, model.json");
  run->add_option("--config", ro.config, "JSON config file");
  run->add_option("--dataset", ro.dataset, "mnist or synthetic");
  run->add_option("--data-dir", ro.data_dir, "Directory with MNIST IDX files");
  run->add_option("--subset", ro.subset, "Number of training examples (first N)");
  run->add_option("--test-subset", ro.test_subset, "Number of test examples (first N)");
  run->add_option("--partition", ro.partition, "homogeneous or heterogeneous");
  run->add_option("--batches", ro.batches, "Number of batches J");
  run->add_option("--concentration", ro.concentration, "Dirichlet concentration");
  run->add_option("--method", ro.method, "Comma list of pfnm,pfnm_rounds,fedavg,ensemble,kmeans,local");
  run->add_option("--layers", ro.layers, "Hidden layers");
  run->add_option("--neurons", ro.neurons, "Neurons per hidden layer");
  run->add_option("--rounds", ro.rounds, "Communication rounds");
  run->add_option("--sigma0-sq", ro.sigma0_sq, "Prior variance");
  run->add_option("--sigma-sq", ro.sigma_sq, "Observation variance");
  run->add_option("--gamma0", ro.gamma0, "Mass parameter");
  run->add_option("--seed", ro.seed, "Single seed");
  run->add_option("--seeds", ro.seeds, "Comma list of seeds");
  run->add_option("--out", ro.out, "Output directory");
  run->add_flag("--wall-clock", ro.wall_clock, "Fill the seconds column of rounds.csv");

  pfnm::BenchConfig bc;
  std::string bench_out;
  auto* bench = app.add_subcommand("bench", "Time matching on inputs where nothing should match");
  bench->add_option("--sizes", bc.sizes, "Local sizes L_j")->delimiter(',');
  bench->add_option("--batches", bc.batches, "Number of batches J");
  bench->add_option("--dim", bc.dim, "Atom dimension");
  bench->add_option("--repeats", bc.repeats, "Repeats per size (median reported)");
  bench->add_option("--seed", bc.seed, "Seed");
  bench->add_option("--out", bench_out, "Directory for bench.csv");

  std::string model_path, eval_dir = "data/mnist";
  int eval_subset = 1000;
  auto* eval = app.add_subcommand("eval", "Test accuracy of a saved model.json on MNIST");
  eval->add_option("--model", model_path, "model.json")->required();
  eval->add_option("--data-dir", eval_dir, "Directory with MNIST IDX files");
  eval->add_option("--test-subset", eval_subset, "Number of test examples (first N)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  try {
    if (*run) return run_command(ro);
    if (*bench) return bench_command(bc, bench_out);
    return eval_command(model_path, eval_dir, eval_subset);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
