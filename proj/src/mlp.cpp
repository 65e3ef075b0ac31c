#include "pfnm/mlp.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pfnm {

std::string to_string(Activation a) { return a == Activation::relu ? "relu" : "sigmoid"; }

Activation parse_activation(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "sigmoid") return Activation::sigmoid;
  throw std::invalid_argument("unknown activation '" + name + "' (relu|sigmoid)");
}

std::string to_string(Optimizer o) { return o == Optimizer::amsgrad ? "amsgrad" : "sgd"; }

Optimizer parse_optimizer(const std::string& name) {
  if (name == "amsgrad") return Optimizer::amsgrad;
  if (name == "sgd") return Optimizer::sgd;
  throw std::invalid_argument("unknown optimizer '" + name + "' (amsgrad|sgd)");
}

std::vector<int> Mlp::widths() const {
  std::vector<int> w;
  for (int c = 1; c <= depth(); ++c) w.push_back(width(c));
  return w;
}

int Mlp::hidden_size() const {
  int total = 0;
  for (int c = 1; c <= depth(); ++c) total += width(c);
  return total;
}

void Mlp::validate() const {
  if (weights.empty() || weights.size() != biases.size())
    throw std::invalid_argument("Mlp: need matching weight and bias lists");
  for (std::size_t c = 0; c < weights.size(); ++c) {
    if (biases[c].size() != weights[c].cols()) {
      std::ostringstream msg;
      msg << "Mlp: layer " << c << " bias has " << biases[c].size() << " entries, weights have "
          << weights[c].cols() << " columns";
      throw std::invalid_argument(msg.str());
    }
    if (c > 0 && weights[c].rows() != weights[c - 1].cols()) {
      std::ostringstream msg;
      msg << "Mlp: layer " << c << " expects " << weights[c].rows() << " inputs, previous layer has "
          << weights[c - 1].cols();
      throw std::invalid_argument(msg.str());
    }
    if (!weights[c].allFinite() || !biases[c].allFinite())
      throw std::invalid_argument("Mlp: non-finite parameter in layer " + std::to_string(c));
  }
}

double TrainConfig::init_std() const { return init_is_std ? init_scale : std::sqrt(init_scale); }

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("TrainConfig: learning_rate must be > 0");
  if (l2_coefficient < 0) throw std::invalid_argument("TrainConfig: l2_coefficient must be >= 0");
  if (minibatch_size < 1) throw std::invalid_argument("TrainConfig: minibatch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (!(init_scale >= 0)) throw std::invalid_argument("TrainConfig: init_scale must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw std::invalid_argument("TrainConfig: betas must lie in [0,1)");
  if (!(epsilon > 0)) throw std::invalid_argument("TrainConfig: epsilon must be > 0");
}

Mlp initialize_mlp(int input_dim, const std::vector<int>& widths, int output_dim,
                   Activation activation, const TrainConfig& cfg) {
  cfg.validate();
  if (input_dim < 1 || output_dim < 1) throw std::invalid_argument("initialize_mlp: empty io");
  std::vector<int> sizes{input_dim};
  for (int w : widths) {
    if (w < 1) throw std::invalid_argument("initialize_mlp: hidden widths must be >= 1");
    sizes.push_back(w);
  }
  sizes.push_back(output_dim);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, cfg.init_std());
  Mlp net;
  net.activation = activation;
  net.meta.seed = cfg.seed;
  for (std::size_t c = 0; c + 1 < sizes.size(); ++c) {
    Eigen::MatrixXd w(sizes[c], sizes[c + 1]);
    for (Eigen::Index j = 0; j < w.cols(); ++j)
      for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = normal(rng);
    net.weights.push_back(std::move(w));
    net.biases.push_back(Eigen::VectorXd::Constant(sizes[c + 1], cfg.bias_init));
  }
  return net;
}

namespace {

Eigen::MatrixXd activate(const Eigen::MatrixXd& z, Activation a) {
  if (a == Activation::relu) return z.cwiseMax(0.0);
  return (1.0 + (-z.array()).exp()).inverse().matrix();
}

// Derivative expressed through the pre-activation z and activation h.
Eigen::MatrixXd activation_slope(const Eigen::MatrixXd& z, const Eigen::MatrixXd& h, Activation a) {
  if (a == Activation::relu) return (z.array() > 0.0).cast<double>().matrix();
  return (h.array() * (1.0 - h.array())).matrix();
}

void check_input(const Mlp& net, const Eigen::Ref<const FeatureMatrix>& x) {
  if (x.cols() != net.input_dim()) {
    std::ostringstream msg;
    msg << "network expects " << net.input_dim() << " input features, got " << x.cols();
    throw std::invalid_argument(msg.str());
  }
}

void softmax_rows(Eigen::MatrixXd& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

}  // namespace

Eigen::MatrixXd logits(const Mlp& net, const Eigen::Ref<const FeatureMatrix>& x) {
  check_input(net, x);
  Eigen::MatrixXd h = x;
  for (int c = 0; c < net.depth(); ++c) {
    Eigen::MatrixXd z = h * net.weights[c];
    z.rowwise() += net.biases[c].transpose();
    h = activate(z, net.activation);
  }
  Eigen::MatrixXd out = h * net.weights.back();
  out.rowwise() += net.biases.back().transpose();
  return out;
}

Eigen::MatrixXd predict_proba(const Mlp& net, const Eigen::Ref<const FeatureMatrix>& x) {
  Eigen::MatrixXd p = logits(net, x);
  softmax_rows(p);
  return p;
}

std::vector<int> argmax_rows(const Eigen::MatrixXd& scores) {
  std::vector<int> out(scores.rows());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index k = 0;
    scores.row(i).maxCoeff(&k);
    out[i] = static_cast<int>(k);
  }
  return out;
}

std::vector<int> predict(const Mlp& net, const Eigen::Ref<const FeatureMatrix>& x) {
  return argmax_rows(logits(net, x));
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels) {
  if (labels.empty()) throw std::invalid_argument("accuracy: empty data");
  if (predicted.size() != labels.size()) throw std::invalid_argument("accuracy: size mismatch");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) hits += predicted[i] == labels[i];
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double evaluate(const Mlp& net, const Dataset& data) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty data");
  return accuracy(predict(net, data.features), data.labels);
}

double loss_and_gradient(const Mlp& net, const Eigen::Ref<const FeatureMatrix>& x,
                         const std::vector<int>& y, double l2, Gradients* grad) {
  check_input(net, x);
  const Eigen::Index n = x.rows();
  if (n == 0 || static_cast<std::size_t>(n) != y.size())
    throw std::invalid_argument("loss_and_gradient: need matching non-empty inputs and labels");
  const int depth = net.depth();

  std::vector<Eigen::MatrixXd> h(depth + 1), z(depth);
  h[0] = x;
  for (int c = 0; c < depth; ++c) {
    z[c] = h[c] * net.weights[c];
    z[c].rowwise() += net.biases[c].transpose();
    h[c + 1] = activate(z[c], net.activation);
  }
  Eigen::MatrixXd out = h[depth] * net.weights.back();
  out.rowwise() += net.biases.back().transpose();

  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int k = y[i];
    if (k < 0 || k >= out.cols()) throw std::invalid_argument("loss_and_gradient: label out of range");
    const double mx = out.row(i).maxCoeff();
    const double lse = mx + std::log((out.row(i).array() - mx).exp().sum());
    loss -= out(i, k) - lse;
  }
  loss /= static_cast<double>(n);
  double penalty = 0.0;
  for (const auto& w : net.weights) penalty += w.squaredNorm();
  loss += 0.5 * l2 * penalty;

  if (!grad) return loss;

  softmax_rows(out);
  for (Eigen::Index i = 0; i < n; ++i) out(i, y[i]) -= 1.0;
  out /= static_cast<double>(n);

  grad->weights.assign(depth + 1, {});
  grad->biases.assign(depth + 1, {});
  Eigen::MatrixXd delta = std::move(out);
  for (int c = depth; c >= 0; --c) {
    grad->weights[c] = h[c].transpose() * delta + l2 * net.weights[c];
    grad->biases[c] = delta.colwise().sum().transpose();
    if (c == 0) break;
    Eigen::MatrixXd back = delta * net.weights[c].transpose();
    delta = back.cwiseProduct(activation_slope(z[c - 1], h[c], net.activation));
  }
  return loss;
}

namespace {

struct MomentState {
  Eigen::MatrixXd m, v, vmax;
};

void amsgrad_step(Eigen::Ref<Eigen::MatrixXd> p, const Eigen::MatrixXd& g, MomentState& s,
                  const TrainConfig& cfg, long step) {
  if (s.m.size() == 0) {
    s.m = Eigen::MatrixXd::Zero(p.rows(), p.cols());
    s.v = s.m;
    s.vmax = s.m;
  }
  s.m = cfg.beta1 * s.m + (1.0 - cfg.beta1) * g;
  s.v = cfg.beta2 * s.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
  s.vmax = s.vmax.cwiseMax(s.v);
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
  const Eigen::ArrayXXd denom = s.vmax.array().sqrt() / std::sqrt(c2) + cfg.epsilon;
  p.array() -= (cfg.learning_rate / c1) * s.m.array() / denom;
}

}  // namespace

Mlp train(Mlp net, const Dataset& data, const TrainConfig& cfg, TrainLog* log) {
  cfg.validate();
  net.validate();
  if (data.size() == 0) throw std::invalid_argument("train: empty data");
  if (data.dim() != net.input_dim()) throw std::invalid_argument("train: input dimension mismatch");
  for (int y : data.labels)
    if (y < 0 || y >= net.output_dim()) throw std::invalid_argument("train: label out of range");

  if (log) log->initial_loss = loss_and_gradient(net, data.features, data.labels, cfg.l2_coefficient, nullptr);

  const int layers = static_cast<int>(net.weights.size());
  std::vector<MomentState> w_state(layers), b_state(layers);
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<int> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  long step = 0;
  FeatureMatrix xb;
  std::vector<int> yb;
  Gradients g;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    int batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.minibatch_size, ++batch_index) {
      const std::size_t stop = std::min(order.size(), start + cfg.minibatch_size);
      xb.resize(static_cast<Eigen::Index>(stop - start), data.dim());
      yb.resize(stop - start);
      for (std::size_t r = start; r < stop; ++r) {
        xb.row(static_cast<Eigen::Index>(r - start)) = data.features.row(order[r]);
        yb[r - start] = data.labels[order[r]];
      }
      const double loss = loss_and_gradient(net, xb, yb, cfg.l2_coefficient, &g);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "train: non-finite loss at epoch " << epoch << ", minibatch " << batch_index;
        throw std::runtime_error(msg.str());
      }
      ++step;
      for (int c = 0; c < layers; ++c) {
        if (cfg.optimizer == Optimizer::sgd) {
          net.weights[c] -= cfg.learning_rate * g.weights[c];
          net.biases[c] -= cfg.learning_rate * g.biases[c];
        } else {
          amsgrad_step(net.weights[c], g.weights[c], w_state[c], cfg, step);
          amsgrad_step(net.biases[c], g.biases[c], b_state[c], cfg, step);
        }
      }
    }
    if (log) log->epoch_loss.push_back(loss_and_gradient(net, data.features, data.labels, cfg.l2_coefficient, nullptr));
  }
  net.meta.epochs += cfg.epochs;
  net.meta.seed = cfg.seed;
  net.meta.num_examples = data.size();
  return net;
}

std::vector<AtomList> to_atoms(const Mlp& net) {
  net.validate();
  const int depth = net.depth();
  const int d = net.input_dim();
  std::vector<AtomList> out(depth);
  for (int c = 1; c <= depth; ++c) {
    const Eigen::MatrixXd& outgoing = net.weights[c];
    const int head = c == 1 ? d : 0;
    for (int l = 0; l < net.width(c); ++l) {
      AtomVector atom(head + 1 + outgoing.cols());
      if (c == 1) atom.head(d) = net.weights[0].col(l);
      atom(head) = net.biases[c - 1](l);
      atom.tail(outgoing.cols()) = outgoing.row(l).transpose();
      out[c - 1].push_back(std::move(atom));
    }
  }
  return out;
}

Mlp from_atoms(const std::vector<AtomList>& atoms, int input_dim, int output_dim,
               const Eigen::VectorXd& output_bias, Activation activation) {
  const int depth = static_cast<int>(atoms.size());
  if (depth < 1) throw std::invalid_argument("from_atoms: need at least one hidden layer");
  if (output_bias.size() != output_dim) throw std::invalid_argument("from_atoms: output bias size");
  Mlp net;
  net.activation = activation;
  net.weights.resize(depth + 1);
  net.biases.resize(depth + 1);
  net.weights[0].resize(input_dim, static_cast<Eigen::Index>(atoms[0].size()));
  for (int c = 1; c <= depth; ++c) {
    const AtomList& layer = atoms[c - 1];
    const int width = static_cast<int>(layer.size());
    const int next = c == depth ? output_dim : static_cast<int>(atoms[c].size());
    const int head = c == 1 ? input_dim : 0;
    net.biases[c - 1].resize(width);
    net.weights[c].resize(width, next);
    for (int l = 0; l < width; ++l) {
      const AtomVector& a = layer[l];
      if (a.size() != head + 1 + next) {
        std::ostringstream msg;
        msg << "from_atoms: layer " << c << " atom " << l << " has dimension " << a.size()
            << ", expected " << head + 1 + next;
        throw std::invalid_argument(msg.str());
      }
      if (c == 1) net.weights[0].col(l) = a.head(input_dim);
      net.biases[c - 1](l) = a(head);
      net.weights[c].row(l) = a.tail(next).transpose();
    }
  }
  net.biases[depth] = output_bias;
  net.validate();
  return net;
}

Mlp apply_permutation(const Mlp& net, int layer, const std::vector<int>& perm) {
  if (layer < 1 || layer > net.depth()) throw std::invalid_argument("apply_permutation: bad layer");
  const int width = net.width(layer);
  if (static_cast<int>(perm.size()) != width)
    throw std::invalid_argument("apply_permutation: permutation length differs from layer width");
  std::vector<char> seen(width, 0);
  for (int p : perm) {
    if (p < 0 || p >= width || seen[p]) throw std::invalid_argument("apply_permutation: not a permutation");
    seen[p] = 1;
  }
  Mlp out = net;
  for (int i = 0; i < width; ++i) {
    out.weights[layer - 1].col(i) = net.weights[layer - 1].col(perm[i]);
    out.biases[layer - 1](i) = net.biases[layer - 1](perm[i]);
    out.weights[layer].row(i) = net.weights[layer].row(perm[i]);
  }
  return out;
}

}  // namespace pfnm
