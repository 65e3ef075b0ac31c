#pragma once

#include "pfnm/linear_assignment.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <vector>

namespace pfnm {

using AtomVector = Eigen::VectorXd;
using AtomList = std::vector<AtomVector>;

/// Hyperparameters of the Beta-Bernoulli process model for one layer.
///
/// Covariances are isotropic: Sigma0 = I*sigma0_sq, Sigma_j = I*sigma_sq for
/// every batch. An empty `mu0` stands for the zero vector of whatever atom
/// dimension is being matched.
struct PriorConfig {
  Eigen::VectorXd mu0;
  double sigma0_sq = 10.0;
  double sigma_sq = 1.0;
  double gamma0 = 1.0;
  int num_batches = 1;

  void validate() const;
  void validate(Eigen::Index atom_dim) const;
  Eigen::VectorXd mean(Eigen::Index atom_dim) const;
};

/// Per-atom sufficient statistics of the batches currently counted.
///
/// natural[i] = mu0/sigma0_sq + sum of matched v / sigma_sq, and
/// precision[i] = 1/sigma0_sq + counts[i]/sigma_sq. Built by
/// `collect_statistics`, typically with one batch excluded (the "-j" state).
struct AtomPosteriorStats {
  std::vector<Eigen::VectorXd> natural;
  std::vector<double> precision;
  std::vector<int> counts;

  int size() const { return static_cast<int>(counts.size()); }
};

struct MatchStats {
  int passes = 0;  // refinement passes after the initial sequential pass
  bool converged = false;
  double cost_seconds = 0.0;
  double solve_seconds = 0.0;
};

/// Result of matching one layer: MAP atoms, popularity counts m_i and the
/// per-batch assignments into the global index set.
struct GlobalAtoms {
  AtomList atoms;
  std::vector<int> match_counts;
  std::vector<AssignmentMatrix> assignments;
  MatchStats stats;

  int size() const { return static_cast<int>(atoms.size()); }
};

struct StepEvent {
  bool refinement = false;  // false during the initial sequential pass
  int pass = 0;
  int batch = 0;
  bool changed = false;
  // Row per local neuron for each batch; an empty vector marks a batch not yet
  // added during the initial pass.
  const std::vector<std::vector<int>>* assignment = nullptr;
  int num_atoms = 0;
};

/// Pass control for `match_single_layer`.
///
/// The first pass adds batches one at a time in a seeded random order. Up to
/// `max_passes` refinement passes follow, each revisiting every batch in a
/// freshly shuffled order, stopping early once a pass changes nothing.
/// `max_passes = 0` gives the single-shot variant.
struct Schedule {
  std::uint64_t seed = 0;
  int max_passes = 10;
  std::function<void(const StepEvent&)> observer;
};

AtomPosteriorStats collect_statistics(const std::vector<std::vector<int>>& assignment,
                                      const std::vector<AtomList>& local_atoms,
                                      const PriorConfig& prior, int exclude_batch,
                                      int num_atoms);

/// Assignment cost for one batch, shape (L_others + L_j) x L_j.
///
/// Rows [0, L_others) are existing atoms, the rest is the new-atom block whose
/// penalty grows with the row offset. Every atom in `others` must have a
/// positive count.
Eigen::MatrixXd build_cost_matrix(const AtomList& local_atoms, const AtomPosteriorStats& others,
                                  const PriorConfig& prior);

/// MAP atoms given assignments. Rows that receive no neuron anywhere are
/// dropped and the assignments reindexed.
GlobalAtoms map_atoms(const std::vector<AssignmentMatrix>& assignments,
                      const std::vector<AtomList>& local_atoms, const PriorConfig& prior);

/// Assignment-dependent log posterior, up to an additive constant.
double log_posterior(const GlobalAtoms& state, const std::vector<AtomList>& local_atoms,
                     const PriorConfig& prior);
double log_posterior(const std::vector<std::vector<int>>& assignment,
                     const std::vector<AtomList>& local_atoms, const PriorConfig& prior);

/// The objective optimised exactly by one reassignment of `batch`:
/// log_posterior minus log(s!) where s counts atoms owned by `batch` alone.
double batch_conditional_log_posterior(const std::vector<std::vector<int>>& assignment,
                                       const std::vector<AtomList>& local_atoms,
                                       const PriorConfig& prior, int batch);

GlobalAtoms match_single_layer(const std::vector<AtomList>& local_atom_sets,
                               const PriorConfig& prior, const Schedule& schedule);

}  // namespace pfnm
