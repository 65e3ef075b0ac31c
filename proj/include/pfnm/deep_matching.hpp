#pragma once

#include "pfnm/matching.hpp"
#include "pfnm/mlp.hpp"

#include <vector>

namespace pfnm {

/// Atoms of hidden layer c for every batch, expressed in the global frame of
/// layer c+1. Layout: [incoming D weights (c = 1 only)] [bias] [outgoing
/// weights scattered to L^{c+1} global slots]. Slots of upper global neurons
/// that a batch does not own are exactly zero.
struct LayerAtomSet {
  int layer = 1;
  int atom_dim = 0;
  std::vector<AtomList> atoms;
  std::vector<AssignmentMatrix> upper_assignments;
};

/// Fused network. `model` holds the assembled weights; `layers[c-1]` keeps
/// the matching result of hidden layer c (atoms, counts, per-batch
/// assignments) so locals can be re-initialised from it.
struct GlobalNetwork {
  Mlp model;
  std::vector<GlobalAtoms> layers;

  int input_dim() const { return model.input_dim(); }
  int output_dim() const { return model.output_dim(); }
  std::vector<int> layer_sizes() const { return model.widths(); }
};

/// Scatters `local` (one value per local upper neuron) into `upper.rows()`
/// global slots.
Eigen::VectorXd scatter(const Eigen::VectorXd& local, const AssignmentMatrix& upper);
/// Reads back the slots owned by the batch, in local order.
Eigen::VectorXd gather(const Eigen::VectorXd& global, const AssignmentMatrix& upper);

LayerAtomSet extract_layer_atoms(const std::vector<Mlp>& locals, int layer,
                                 const std::vector<AssignmentMatrix>& upper_assignments);

/// Greedy top-down matching. `priors` holds one entry per hidden layer (a
/// single entry is reused for all layers); num_batches is set to J.
GlobalNetwork match_multilayer(const std::vector<Mlp>& locals, const std::vector<PriorConfig>& priors,
                               const Schedule& schedule);

Eigen::MatrixXd forward_global(const GlobalNetwork& net, const Eigen::Ref<const FeatureMatrix>& x);

/// Local network for `batch` whose every parameter is the matched global
/// parameter: neuron l of layer c takes the global atom it was assigned to.
/// The output bias is the global one.
Mlp reinitialize_local(const GlobalNetwork& net, int batch);

}  // namespace pfnm
