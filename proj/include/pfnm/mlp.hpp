#pragma once

#include "pfnm/dataset.hpp"
#include "pfnm/matching.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace pfnm {

enum class Activation { relu, sigmoid };

std::string to_string(Activation a);
Activation parse_activation(const std::string& name);

struct TrainingMeta {
  int epochs = 0;
  std::uint64_t seed = 0;
  int num_examples = 0;
};

/// Fully connected network with C hidden layers and a softmax output.
///
/// weights[c] maps layer c to layer c+1 and has shape (in x out): weights[0]
/// is D x L^1, weights[C] is L^C x K. biases[c] has the output width of
/// weights[c]. Hidden layer c (1-based) owns column c-1 of weights[c-1],
/// biases[c-1] and row block weights[c].
struct Mlp {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
  Activation activation = Activation::relu;
  TrainingMeta meta;

  int depth() const { return static_cast<int>(weights.size()) - 1; }
  int input_dim() const { return static_cast<int>(weights.front().rows()); }
  int output_dim() const { return static_cast<int>(weights.back().cols()); }
  int width(int c) const { return static_cast<int>(weights.at(c - 1).cols()); }
  std::vector<int> widths() const;
  int hidden_size() const;  // sum of hidden widths
  void validate() const;
};

enum class Optimizer { amsgrad, sgd };

std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& name);

struct TrainConfig {
  double learning_rate = 0.01;
  double l2_coefficient = 1e-6;
  int minibatch_size = 32;
  int epochs = 10;
  // Table value "N(0, 0.01)". Read as a variance unless init_is_std is set.
  double init_scale = 0.01;
  bool init_is_std = false;
  double bias_init = 0.1;
  Optimizer optimizer = Optimizer::amsgrad;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;

  double init_std() const;
  void validate() const;
};

Mlp initialize_mlp(int input_dim, const std::vector<int>& widths, int output_dim,
                   Activation activation, const TrainConfig& cfg);

Eigen::MatrixXd logits(const Mlp& net, const Eigen::Ref<const FeatureMatrix>& x);
Eigen::MatrixXd predict_proba(const Mlp& net, const Eigen::Ref<const FeatureMatrix>& x);
std::vector<int> predict(const Mlp& net, const Eigen::Ref<const FeatureMatrix>& x);
std::vector<int> argmax_rows(const Eigen::MatrixXd& scores);
double accuracy(const std::vector<int>& predicted, const std::vector<int>& labels);
double evaluate(const Mlp& net, const Dataset& data);

struct Gradients {
  std::vector<Eigen::MatrixXd> weights;
  std::vector<Eigen::VectorXd> biases;
};

/// Mean cross-entropy plus 0.5 * l2 * sum of squared weights (biases are
/// not penalised), and its gradient.
double loss_and_gradient(const Mlp& net, const Eigen::Ref<const FeatureMatrix>& x,
                         const std::vector<int>& y, double l2, Gradients* grad);

struct TrainLog {
  double initial_loss = 0.0;
  std::vector<double> epoch_loss;  // full-data objective after each epoch
};

/// Minibatch training from the given parameters. Optimizer state starts
/// fresh on every call.
Mlp train(Mlp net, const Dataset& data, const TrainConfig& cfg, TrainLog* log = nullptr);

/// Per hidden layer, one atom per neuron: [incoming D weights (layer 1
/// only)] [bias] [outgoing weights, local order]. For one hidden layer this
/// is the D+1+K layout.
std::vector<AtomList> to_atoms(const Mlp& net);

/// Inverse of to_atoms. The incoming weights of layer c > 1 are read from
/// the outgoing block of layer c-1, so counts must chain.
Mlp from_atoms(const std::vector<AtomList>& atoms, int input_dim, int output_dim,
               const Eigen::VectorXd& output_bias, Activation activation);

/// Reorders hidden layer `layer` (1-based): new neuron i is old neuron perm[i].
Mlp apply_permutation(const Mlp& net, int layer, const std::vector<int>& perm);

}  // namespace pfnm
