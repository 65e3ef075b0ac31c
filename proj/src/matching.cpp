#include "pfnm/matching.hpp"

#include <algorithm>
#include <cassert>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

namespace pfnm {

void PriorConfig::validate() const {
  if (!(sigma0_sq > 0.0) || !std::isfinite(sigma0_sq))
    throw std::invalid_argument("PriorConfig: sigma0_sq must be positive and finite");
  if (!(sigma_sq > 0.0) || !std::isfinite(sigma_sq))
    throw std::invalid_argument("PriorConfig: sigma_sq must be positive and finite");
  if (!(gamma0 > 0.0) || !std::isfinite(gamma0))
    throw std::invalid_argument("PriorConfig: gamma0 must be positive and finite");
  if (num_batches < 1) throw std::invalid_argument("PriorConfig: num_batches must be >= 1");
  if (!mu0.allFinite()) throw std::invalid_argument("PriorConfig: mu0 has non-finite entries");
}

void PriorConfig::validate(Eigen::Index atom_dim) const {
  validate();
  if (mu0.size() != 0 && mu0.size() != atom_dim) {
    std::ostringstream msg;
    msg << "PriorConfig: mu0 has dimension " << mu0.size() << " but atoms have dimension "
        << atom_dim;
    throw std::invalid_argument(msg.str());
  }
}

Eigen::VectorXd PriorConfig::mean(Eigen::Index atom_dim) const {
  if (mu0.size() == 0) return Eigen::VectorXd::Zero(atom_dim);
  return mu0;
}

namespace {

Eigen::Index common_dimension(const std::vector<AtomList>& sets) {
  Eigen::Index dim = -1;
  for (std::size_t j = 0; j < sets.size(); ++j) {
    for (std::size_t l = 0; l < sets[j].size(); ++l) {
      const auto& v = sets[j][l];
      if (dim < 0) dim = v.size();
      if (v.size() != dim) {
        std::ostringstream msg;
        msg << "atom (" << j << "," << l << ") has dimension " << v.size() << ", expected " << dim;
        throw std::invalid_argument(msg.str());
      }
      if (!v.allFinite()) {
        std::ostringstream msg;
        msg << "atom (" << j << "," << l << ") has non-finite entries";
        throw std::invalid_argument(msg.str());
      }
    }
  }
  return dim;
}

std::vector<std::vector<int>> to_rows(const std::vector<AssignmentMatrix>& assignments) {
  std::vector<std::vector<int>> rows;
  rows.reserve(assignments.size());
  for (const auto& b : assignments) rows.push_back(b.col_to_row());
  return rows;
}

int atom_count(const std::vector<std::vector<int>>& assignment) {
  int count = 0;
  for (const auto& rows : assignment)
    for (int r : rows) count = std::max(count, r + 1);
  return count;
}

}  // namespace

AtomPosteriorStats collect_statistics(const std::vector<std::vector<int>>& assignment,
                                      const std::vector<AtomList>& local_atoms,
                                      const PriorConfig& prior, int exclude_batch,
                                      int num_atoms) {
  if (assignment.size() != local_atoms.size())
    throw std::invalid_argument("collect_statistics: assignment/batch count mismatch");
  const Eigen::Index dim = common_dimension(local_atoms);
  const Eigen::VectorXd prior_natural = prior.mean(dim) / prior.sigma0_sq;

  AtomPosteriorStats stats;
  stats.natural.assign(num_atoms, prior_natural);
  stats.precision.assign(num_atoms, 1.0 / prior.sigma0_sq);
  stats.counts.assign(num_atoms, 0);
  for (std::size_t j = 0; j < assignment.size(); ++j) {
    if (static_cast<int>(j) == exclude_batch) continue;
    const auto& rows = assignment[j];
    if (rows.empty()) continue;
    if (rows.size() != local_atoms[j].size())
      throw std::invalid_argument("collect_statistics: assignment does not cover batch");
    for (std::size_t l = 0; l < rows.size(); ++l) {
      const int i = rows[l];
      if (i < 0 || i >= num_atoms) throw std::out_of_range("collect_statistics: row index");
      stats.natural[i] += local_atoms[j][l] / prior.sigma_sq;
      stats.precision[i] += 1.0 / prior.sigma_sq;
      stats.counts[i] += 1;
    }
  }
  return stats;
}

Eigen::MatrixXd build_cost_matrix(const AtomList& local_atoms, const AtomPosteriorStats& others,
                                  const PriorConfig& prior) {
  const int num_local = static_cast<int>(local_atoms.size());
  const int num_existing = others.size();
  if (num_local == 0) return Eigen::MatrixXd(num_existing, 0);

  const Eigen::Index dim = local_atoms.front().size();
  for (int l = 0; l < num_local; ++l) {
    if (local_atoms[l].size() != dim) {
      std::ostringstream msg;
      msg << "build_cost_matrix: local atom " << l << " has dimension " << local_atoms[l].size()
          << ", expected " << dim;
      throw std::invalid_argument(msg.str());
    }
  }
  for (int i = 0; i < num_existing; ++i) {
    if (others.natural[i].size() != dim) {
      std::ostringstream msg;
      msg << "build_cost_matrix: global atom " << i << " has dimension "
          << others.natural[i].size() << ", expected " << dim;
      throw std::invalid_argument(msg.str());
    }
    if (others.counts[i] <= 0) {
      std::ostringstream msg;
      msg << "build_cost_matrix: global atom " << i
          << " has zero count outside the batch; compact before building costs";
      throw std::invalid_argument(msg.str());
    }
  }
  prior.validate(dim);

  const double J = prior.num_batches;
  const double s2 = prior.sigma_sq;
  const double s02 = prior.sigma0_sq;
  const Eigen::VectorXd prior_natural = prior.mean(dim) / s02;
  const double prior_term = prior_natural.squaredNorm() / (1.0 / s02);

  std::vector<double> existing_norm(num_existing);
  std::vector<double> popularity(num_existing);
  for (int i = 0; i < num_existing; ++i) {
    const int m = others.counts[i];
    assert(m < prior.num_batches && "counts exclude the batch being matched");
    if (m >= prior.num_batches)
      throw std::logic_error("build_cost_matrix: count equals J, batch was not excluded");
    existing_norm[i] = others.natural[i].squaredNorm() / others.precision[i];
    popularity[i] = 2.0 * std::log(m / (J - m));
  }

  Eigen::MatrixXd cost(num_existing + num_local, num_local);
  for (int l = 0; l < num_local; ++l) {
    const Eigen::VectorXd scaled = local_atoms[l] / s2;
    for (int i = 0; i < num_existing; ++i) {
      const double joined =
          (others.natural[i] + scaled).squaredNorm() / (others.precision[i] + 1.0 / s2);
      cost(i, l) = -(joined - existing_norm[i] + popularity[i]);
    }
    const double fresh = (prior_natural + scaled).squaredNorm() / (1.0 / s02 + 1.0 / s2);
    for (int k = 1; k <= num_local; ++k) {
      cost(num_existing + k - 1, l) =
          -(fresh - prior_term - 2.0 * std::log(k / (prior.gamma0 / J)));
    }
  }
  return cost;
}

GlobalAtoms map_atoms(const std::vector<AssignmentMatrix>& assignments,
                      const std::vector<AtomList>& local_atoms, const PriorConfig& prior) {
  if (assignments.size() != local_atoms.size())
    throw std::invalid_argument("map_atoms: assignment/batch count mismatch");
  for (std::size_t j = 0; j < assignments.size(); ++j)
    if (assignments[j].cols() != static_cast<int>(local_atoms[j].size()))
      throw std::invalid_argument("map_atoms: assignment columns differ from batch size");

  const auto rows = to_rows(assignments);
  const int num_rows = atom_count(rows);
  const Eigen::Index dim = common_dimension(local_atoms);
  if (dim >= 0) prior.validate(dim);
  const AtomPosteriorStats stats = collect_statistics(rows, local_atoms, prior, -1, num_rows);

  std::vector<int> remap(num_rows, -1);
  GlobalAtoms out;
  for (int i = 0; i < num_rows; ++i) {
    if (stats.counts[i] == 0) continue;
    remap[i] = out.size();
    out.atoms.push_back(stats.natural[i] / stats.precision[i]);
    out.match_counts.push_back(stats.counts[i]);
  }
  out.assignments.reserve(rows.size());
  for (const auto& batch_rows : rows) {
    std::vector<int> mapped(batch_rows.size());
    for (std::size_t l = 0; l < batch_rows.size(); ++l) mapped[l] = remap[batch_rows[l]];
    out.assignments.emplace_back(out.size(), std::move(mapped));
  }
  return out;
}

double log_posterior(const std::vector<std::vector<int>>& assignment,
                     const std::vector<AtomList>& local_atoms, const PriorConfig& prior) {
  const int num_rows = atom_count(assignment);
  const Eigen::Index dim = common_dimension(local_atoms);
  if (dim >= 0) prior.validate(dim);
  const AtomPosteriorStats stats = collect_statistics(assignment, local_atoms, prior, -1, num_rows);

  const double J = prior.num_batches;
  const double s02 = prior.sigma0_sq;
  const double prior_term = (prior.mean(std::max<Eigen::Index>(dim, 0)) / s02).squaredNorm() / (1.0 / s02);
  std::vector<double> terms;
  terms.reserve(num_rows);
  for (int i = 0; i < num_rows; ++i) {
    const int m = stats.counts[i];
    if (m == 0) continue;
    const double gaussian = 0.5 * (stats.natural[i].squaredNorm() / stats.precision[i] - prior_term);
    const double ibp = std::log(prior.gamma0) + std::lgamma(J - m + 1.0) + std::lgamma(double(m)) -
                       std::lgamma(J + 1.0);
    terms.push_back(gaussian + ibp);
  }
  // Summation in sorted order makes the value independent of atom indexing.
  std::sort(terms.begin(), terms.end());
  return std::accumulate(terms.begin(), terms.end(), 0.0);
}

double log_posterior(const GlobalAtoms& state, const std::vector<AtomList>& local_atoms,
                     const PriorConfig& prior) {
  return log_posterior(to_rows(state.assignments), local_atoms, prior);
}

double batch_conditional_log_posterior(const std::vector<std::vector<int>>& assignment,
                                       const std::vector<AtomList>& local_atoms,
                                       const PriorConfig& prior, int batch) {
  const int num_rows = atom_count(assignment);
  std::vector<int> counts(num_rows, 0);
  for (const auto& rows : assignment)
    for (int r : rows) ++counts[r];
  int owned = 0;
  for (int r : assignment.at(batch))
    if (counts[r] == 1) ++owned;
  return log_posterior(assignment, local_atoms, prior) - std::lgamma(owned + 1.0);
}

GlobalAtoms match_single_layer(const std::vector<AtomList>& local_atom_sets,
                               const PriorConfig& prior, const Schedule& schedule) {
  const int J = static_cast<int>(local_atom_sets.size());
  if (J < 1) throw std::invalid_argument("match_single_layer: need at least one batch");
  for (int j = 0; j < J; ++j)
    if (local_atom_sets[j].empty()) {
      std::ostringstream msg;
      msg << "match_single_layer: batch " << j << " has no neurons";
      throw std::invalid_argument(msg.str());
    }
  if (prior.num_batches != J) {
    std::ostringstream msg;
    msg << "match_single_layer: prior.num_batches=" << prior.num_batches << " but " << J
        << " batches supplied";
    throw std::invalid_argument(msg.str());
  }
  if (schedule.max_passes < 0) throw std::invalid_argument("match_single_layer: max_passes < 0");
  prior.validate(common_dimension(local_atom_sets));

  using clock = std::chrono::steady_clock;
  MatchStats stats;
  std::vector<std::vector<int>> assignment(J);
  int num_atoms = 0;

  auto step = [&](int j, bool refinement, int pass) {
    AtomPosteriorStats others = collect_statistics(assignment, local_atom_sets, prior, j, num_atoms);

    std::vector<int> remap(num_atoms, -1);
    AtomPosteriorStats kept;
    for (int i = 0; i < num_atoms; ++i) {
      if (others.counts[i] == 0) continue;
      remap[i] = kept.size();
      kept.natural.push_back(std::move(others.natural[i]));
      kept.precision.push_back(others.precision[i]);
      kept.counts.push_back(others.counts[i]);
    }
    for (int b = 0; b < J; ++b) {
      if (b == j) continue;
      for (int& r : assignment[b]) r = remap[r];
    }

    const auto t0 = clock::now();
    const Eigen::MatrixXd cost = build_cost_matrix(local_atom_sets[j], kept, prior);
    const auto t1 = clock::now();
    const AssignmentMatrix solved = solve_assignment(cost);
    const auto t2 = clock::now();
    stats.cost_seconds += std::chrono::duration<double>(t1 - t0).count();
    stats.solve_seconds += std::chrono::duration<double>(t2 - t1).count();

    const int num_kept = kept.size();
    const std::vector<int>& rows = solved.col_to_row();
    int num_new = 0;
    for (int r : rows)
      if (r >= num_kept) num_new = std::max(num_new, r - num_kept + 1);
    assert(std::count_if(rows.begin(), rows.end(), [&](int r) { return r >= num_kept; }) == num_new &&
           "new atoms form a contiguous prefix of the new-atom block");

    bool changed = assignment[j].empty();
    if (!changed) {
      for (std::size_t l = 0; l < rows.size(); ++l) {
        const int before = remap[assignment[j][l]];
        const bool same = before >= 0 ? rows[l] == before : rows[l] >= num_kept;
        if (!same) {
          changed = true;
          break;
        }
      }
    }
    assignment[j] = rows;
    num_atoms = num_kept + num_new;

    if (schedule.observer) {
      StepEvent ev;
      ev.refinement = refinement;
      ev.pass = pass;
      ev.batch = j;
      ev.changed = changed;
      ev.assignment = &assignment;
      ev.num_atoms = num_atoms;
      schedule.observer(ev);
    }
    return changed;
  };

  std::mt19937_64 rng(schedule.seed);
  std::vector<int> order(J);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  for (int j : order) step(j, false, 0);

  for (int pass = 1; pass <= schedule.max_passes; ++pass) {
    std::shuffle(order.begin(), order.end(), rng);
    bool any_change = false;
    for (int j : order) any_change = step(j, true, pass) || any_change;
    stats.passes = pass;
    if (!any_change) {
      stats.converged = true;
      break;
    }
  }

  std::vector<AssignmentMatrix> matrices;
  matrices.reserve(J);
  for (auto& rows : assignment) matrices.emplace_back(num_atoms, rows);
  GlobalAtoms result = map_atoms(matrices, local_atom_sets, prior);
  result.stats = stats;
  return result;
}

}  // namespace pfnm
