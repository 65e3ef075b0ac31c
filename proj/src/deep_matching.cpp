#include "pfnm/deep_matching.hpp"

#include <sstream>
#include <stdexcept>

namespace pfnm {

Eigen::VectorXd scatter(const Eigen::VectorXd& local, const AssignmentMatrix& upper) {
  if (local.size() != upper.cols()) throw std::invalid_argument("scatter: size differs from assignment");
  Eigen::VectorXd out = Eigen::VectorXd::Zero(upper.rows());
  for (int l = 0; l < upper.cols(); ++l) out(upper.row_of(l)) = local(l);
  return out;
}

Eigen::VectorXd gather(const Eigen::VectorXd& global, const AssignmentMatrix& upper) {
  if (global.size() != upper.rows()) throw std::invalid_argument("gather: size differs from assignment");
  Eigen::VectorXd out(upper.cols());
  for (int l = 0; l < upper.cols(); ++l) out(l) = global(upper.row_of(l));
  return out;
}

namespace {

void check_compatible(const std::vector<Mlp>& locals) {
  if (locals.empty()) throw std::invalid_argument("need at least one local network");
  const Mlp& first = locals.front();
  for (std::size_t j = 0; j < locals.size(); ++j) {
    const Mlp& m = locals[j];
    m.validate();
    if (m.depth() != first.depth()) {
      std::ostringstream msg;
      msg << "local network " << j << " has " << m.depth() << " hidden layers, network 0 has "
          << first.depth();
      throw std::invalid_argument(msg.str());
    }
    if (m.input_dim() != first.input_dim() || m.output_dim() != first.output_dim())
      throw std::invalid_argument("local networks disagree on input or output dimension");
    if (m.activation != first.activation)
      throw std::invalid_argument("local networks use different activations");
  }
}

}  // namespace

LayerAtomSet extract_layer_atoms(const std::vector<Mlp>& locals, int layer,
                                 const std::vector<AssignmentMatrix>& upper_assignments) {
  check_compatible(locals);
  const int depth = locals.front().depth();
  if (layer < 1 || layer > depth) throw std::invalid_argument("extract_layer_atoms: bad layer index");
  if (upper_assignments.size() != locals.size())
    throw std::invalid_argument("extract_layer_atoms: one upper assignment per batch required");

  LayerAtomSet set;
  set.layer = layer;
  set.upper_assignments = upper_assignments;
  const int d = locals.front().input_dim();
  const int head = layer == 1 ? d : 0;
  const int upper_size = upper_assignments.front().rows();
  set.atom_dim = head + 1 + upper_size;

  for (std::size_t j = 0; j < locals.size(); ++j) {
    const Mlp& m = locals[j];
    const AssignmentMatrix& up = upper_assignments[j];
    if (up.rows() != upper_size) throw std::invalid_argument("extract_layer_atoms: upper sizes differ");
    if (up.cols() != m.weights[layer].cols()) {
      std::ostringstream msg;
      msg << "extract_layer_atoms: batch " << j << " layer " << layer << " feeds "
          << m.weights[layer].cols() << " neurons but its upper assignment has " << up.cols()
          << " columns";
      throw std::invalid_argument(msg.str());
    }
    AtomList atoms;
    for (int l = 0; l < m.width(layer); ++l) {
      AtomVector a(set.atom_dim);
      if (layer == 1) a.head(d) = m.weights[0].col(l);
      a(head) = m.biases[layer - 1](l);
      a.tail(upper_size) = scatter(m.weights[layer].row(l).transpose(), up);
      atoms.push_back(std::move(a));
    }
    set.atoms.push_back(std::move(atoms));
  }
  return set;
}

GlobalNetwork match_multilayer(const std::vector<Mlp>& locals, const std::vector<PriorConfig>& priors,
                               const Schedule& schedule) {
  check_compatible(locals);
  const int depth = locals.front().depth();
  const int J = static_cast<int>(locals.size());
  const int d = locals.front().input_dim();
  const int k = locals.front().output_dim();
  if (priors.size() != 1 && static_cast<int>(priors.size()) != depth)
    throw std::invalid_argument("match_multilayer: need one prior or one per hidden layer");

  GlobalNetwork net;
  net.layers.resize(depth);
  std::vector<AssignmentMatrix> upper(J, AssignmentMatrix::identity(k));
  for (int c = depth; c >= 1; --c) {
    PriorConfig prior = priors.size() == 1 ? priors.front() : priors[c - 1];
    prior.num_batches = J;
    const LayerAtomSet set = extract_layer_atoms(locals, c, upper);
    net.layers[c - 1] = match_single_layer(set.atoms, prior, schedule);
    upper = net.layers[c - 1].assignments;
  }

  Eigen::VectorXd output_bias = Eigen::VectorXd::Zero(k);
  for (const Mlp& m : locals) output_bias += m.biases.back();
  output_bias /= static_cast<double>(J);

  std::vector<AtomList> atoms;
  for (const auto& layer : net.layers) atoms.push_back(layer.atoms);
  net.model = from_atoms(atoms, d, k, output_bias, locals.front().activation);
  return net;
}

Eigen::MatrixXd forward_global(const GlobalNetwork& net, const Eigen::Ref<const FeatureMatrix>& x) {
  if (!x.allFinite()) throw std::invalid_argument("forward_global: non-finite input");
  return predict_proba(net.model, x);
}

Mlp reinitialize_local(const GlobalNetwork& net, int batch) {
  const Mlp& g = net.model;
  const int depth = g.depth();
  if (static_cast<int>(net.layers.size()) != depth)
    throw std::invalid_argument("reinitialize_local: network has no matching record");
  std::vector<std::vector<int>> rows(depth + 1);
  for (int c = 1; c <= depth; ++c) rows[c - 1] = net.layers[c - 1].assignments.at(batch).col_to_row();
  rows[depth].resize(g.output_dim());
  for (int i = 0; i < g.output_dim(); ++i) rows[depth][i] = i;

  Mlp local;
  local.activation = g.activation;
  local.weights.resize(depth + 1);
  local.biases.resize(depth + 1);
  local.weights[0].resize(g.input_dim(), static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t l = 0; l < rows[0].size(); ++l) local.weights[0].col(l) = g.weights[0].col(rows[0][l]);
  for (int c = 1; c <= depth; ++c) {
    const auto& own = rows[c - 1];
    const auto& up = rows[c];
    local.biases[c - 1].resize(static_cast<Eigen::Index>(own.size()));
    for (std::size_t l = 0; l < own.size(); ++l) local.biases[c - 1](l) = g.biases[c - 1](own[l]);
    local.weights[c].resize(static_cast<Eigen::Index>(own.size()), static_cast<Eigen::Index>(up.size()));
    for (std::size_t l = 0; l < own.size(); ++l)
      for (std::size_t u = 0; u < up.size(); ++u) local.weights[c](l, u) = g.weights[c](own[l], up[u]);
  }
  local.biases[depth] = g.biases[depth];
  local.validate();
  return local;
}

}  // namespace pfnm
