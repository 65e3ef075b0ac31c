#include "pfnm/experiment.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace pfnm {

using nlohmann::json;

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string rounds_csv(const ResultRecord& record) {
  std::ostringstream out;
  out << "seed,round,method,accuracy,global_size,log_size_ratio,seconds\n";
  for (const auto& s : record.seeds) {
    if (!s.ok) continue;
    for (const auto& r : s.rows) {
      out << r.seed << ',' << r.round << ',' << r.method << ',' << format_double(r.accuracy) << ','
          << format_double(r.global_size) << ',' << format_double(r.log_size_ratio) << ',';
      if (record.config.csv_wall_clock) out << format_double(r.seconds);
      out << '\n';
    }
  }
  return out.str();
}

json results_json(const ResultRecord& record) {
  json seeds = json::array();
  for (const auto& s : record.seeds) {
    json rows = json::array();
    for (const auto& r : s.rows)
      rows.push_back({{"round", r.round},
                      {"method", r.method},
                      {"accuracy", r.accuracy},
                      {"global_size", r.global_size},
                      {"layer_sizes", r.layer_sizes},
                      {"log_size_ratio", r.log_size_ratio},
                      {"seconds", r.seconds},
                      {"local_accuracies", r.local_accuracies}});
    json entry = {{"seed", s.seed},
                  {"ok", s.ok},
                  {"partition_seed", s.partition_seed},
                  {"batch_sizes", s.batch_sizes},
                  {"rows", rows}};
    if (!s.ok) entry["error"] = s.error;
    if (s.selected_sigma_sq) entry["selected_sigma_sq"] = *s.selected_sigma_sq;
    seeds.push_back(entry);
  }
  json aggregates = json::array();
  for (const auto& a : record.aggregates)
    aggregates.push_back(
        {{"method", a.method}, {"round", a.round}, {"seeds", a.count}, {"accuracy_mean", a.mean}, {"accuracy_std", a.std}});
  json out = {{"config_hash", record.config_hash},
              {"config", config_to_json(record.config)},
              {"seeds", seeds},
              {"aggregates", aggregates}};
  if (record.model)
    out["model"] = {{"file", "model.json"},
                    {"seed", record.model->seed},
                    {"method", record.model->method},
                    {"accuracy", record.model->accuracy}};
  return out;
}

json model_to_json(const Mlp& net) {
  json layers = json::array();
  for (std::size_t c = 0; c < net.weights.size(); ++c) {
    const Eigen::MatrixXd& w = net.weights[c];
    std::vector<double> flat;
    flat.reserve(static_cast<std::size_t>(w.size()));
    for (Eigen::Index i = 0; i < w.rows(); ++i)
      for (Eigen::Index k = 0; k < w.cols(); ++k) flat.push_back(w(i, k));
    const Eigen::VectorXd& b = net.biases[c];
    layers.push_back({{"shape", {w.rows(), w.cols()}},
                      {"weights", flat},
                      {"bias", std::vector<double>(b.data(), b.data() + b.size())}});
  }
  return {{"format", "pfnm-mlp"},
          {"activation", to_string(net.activation)},
          {"input_dim", net.input_dim()},
          {"output_dim", net.output_dim()},
          {"widths", net.widths()},
          {"layers", layers}};
}

Mlp model_from_json(const json& j) {
  try {
    if (j.at("format") != "pfnm-mlp") throw std::runtime_error("model: unexpected format tag");
    Mlp net;
    net.activation = parse_activation(j.at("activation").get<std::string>());
    for (const auto& layer : j.at("layers")) {
      const auto shape = layer.at("shape").get<std::vector<Eigen::Index>>();
      const auto flat = layer.at("weights").get<std::vector<double>>();
      const auto bias = layer.at("bias").get<std::vector<double>>();
      if (shape.size() != 2 || static_cast<Eigen::Index>(flat.size()) != shape[0] * shape[1])
        throw std::runtime_error("model: weight array does not match its shape");
      Eigen::MatrixXd w(shape[0], shape[1]);
      for (Eigen::Index i = 0; i < shape[0]; ++i)
        for (Eigen::Index k = 0; k < shape[1]; ++k) w(i, k) = flat[i * shape[1] + k];
      net.weights.push_back(std::move(w));
      net.biases.push_back(Eigen::Map<const Eigen::VectorXd>(bias.data(), static_cast<Eigen::Index>(bias.size())));
    }
    net.validate();
    return net;
  } catch (const json::exception& e) {
    throw std::runtime_error(std::string("model: ") + e.what());
  }
}

namespace {

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("error writing " + path.string());
}

}  // namespace

void save_model(const Mlp& net, const std::string& path) { write_text(path, model_to_json(net).dump() + "\n"); }

Mlp load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  try {
    return model_from_json(json::parse(in));
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path + ": " + e.what());
  }
}

void emit_results(const ResultRecord& record, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir);
  write_text(fs::path(dir) / "results.json", results_json(record).dump(2) + "\n");
  write_text(fs::path(dir) / "rounds.csv", rounds_csv(record));
  if (record.model) save_model(record.model->model, (fs::path(dir) / "model.json").string());
}

}  // namespace pfnm
