#include "pfnm/linear_assignment.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace pfnm {

AssignmentMatrix::AssignmentMatrix(int rows, std::vector<int> col_to_row)
    : rows_(rows), col_to_row_(std::move(col_to_row)) {
  if (rows_ < 0) throw std::invalid_argument("AssignmentMatrix: negative row count");
  std::vector<char> seen(rows_, 0);
  for (std::size_t l = 0; l < col_to_row_.size(); ++l) {
    const int r = col_to_row_[l];
    if (r < 0 || r >= rows_) {
      std::ostringstream msg;
      msg << "AssignmentMatrix: column " << l << " maps to row " << r << " outside [0," << rows_
          << ")";
      throw std::invalid_argument(msg.str());
    }
    if (seen[r]) {
      std::ostringstream msg;
      msg << "AssignmentMatrix: row " << r << " receives more than one column";
      throw std::invalid_argument(msg.str());
    }
    seen[r] = 1;
  }
}

AssignmentMatrix AssignmentMatrix::identity(int n) {
  std::vector<int> rows(n);
  for (int i = 0; i < n; ++i) rows[i] = i;
  return AssignmentMatrix(n, std::move(rows));
}

int AssignmentMatrix::row_sum(int row) const {
  return static_cast<int>(std::count(col_to_row_.begin(), col_to_row_.end(), row));
}

int AssignmentMatrix::col_sum(int col) const {
  return (col >= 0 && col < cols()) ? 1 : 0;
}

Eigen::MatrixXi AssignmentMatrix::dense() const {
  Eigen::MatrixXi b = Eigen::MatrixXi::Zero(rows_, cols());
  for (int l = 0; l < cols(); ++l) b(row_of(l), l) = 1;
  return b;
}

double assignment_cost(const Eigen::MatrixXd& cost, const AssignmentMatrix& assignment) {
  if (assignment.rows() != cost.rows() || assignment.cols() != cost.cols())
    throw std::invalid_argument("assignment_cost: shape mismatch");
  double total = 0.0;
  for (int l = 0; l < assignment.cols(); ++l) total += cost(assignment.row_of(l), l);
  return total;
}

namespace {

struct HungarianSolution {
  std::vector<int> col_to_row;
  std::vector<double> col_potential;  // dual of each column (always assigned)
  std::vector<double> row_potential;  // dual of each row, <= 0, 0 when unassigned
};

// Shortest augmenting path Hungarian method. Columns of `cost` play the role
// of the side that must be fully assigned (n <= m).
HungarianSolution hungarian(const Eigen::MatrixXd& cost) {
  const int m = static_cast<int>(cost.rows());
  const int n = static_cast<int>(cost.cols());
  const double inf = std::numeric_limits<double>::infinity();

  std::vector<double> u(n + 1, 0.0);
  std::vector<double> v(m + 1, 0.0);
  std::vector<int> p(m + 1, 0);
  std::vector<int> way(m + 1, 0);
  std::vector<double> minv(m + 1);
  std::vector<char> used(m + 1);

  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      double delta = inf;
      int j1 = 0;
      const double ui0 = u[i0];
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = cost(j - 1, i0 - 1) - ui0 - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  HungarianSolution sol;
  sol.col_to_row.assign(n, -1);
  for (int j = 1; j <= m; ++j)
    if (p[j] != 0)
      sol.col_to_row[p[j] - 1] = j - 1;
  sol.col_potential.assign(u.begin() + 1, u.end());
  sol.row_potential.assign(v.begin() + 1, v.end());
  return sol;
}

// Moves an optimal assignment to the lexicographically smallest optimal one.
//
// With optimal duals fixed, an assignment is optimal iff it uses only tight
// edges and leaves unassigned only rows whose dual is zero. Columns are fixed
// in order; for each, smaller tight rows are tried and accepted when the rest
// can be repaired by at most one augmenting path for the displaced column plus
// one alternating path re-covering the released row when its dual is nonzero.
class LexicographicRefiner {
 public:
  LexicographicRefiner(const Eigen::MatrixXd& cost, const HungarianSolution& sol, double tol)
      : cost_(cost), sol_(sol), tol_(tol), m_(static_cast<int>(cost.rows())),
        n_(static_cast<int>(cost.cols())) {}

  std::vector<int> run() {
    row_of_ = sol_.col_to_row;
    col_of_.assign(m_, -1);
    for (int l = 0; l < n_; ++l) col_of_[row_of_[l]] = l;

    // Bail out (keep the Hungarian answer) if rounding broke complementary
    // slackness; the refinement would not be sound then.
    for (int l = 0; l < n_; ++l)
      if (!tight(row_of_[l], l)) return row_of_;
    for (int r = 0; r < m_; ++r)
      if (col_of_[r] < 0 && must_cover(r)) return row_of_;

    frozen_row_.assign(m_, 0);
    for (int l = 0; l < n_; ++l) {
      const int cur = row_of_[l];
      for (int r = 0; r < cur; ++r) {
        if (frozen_row_[r] || !tight(r, l)) continue;
        if (try_move(l, r)) break;
      }
      frozen_row_[row_of_[l]] = 1;
    }
    return row_of_;
  }

 private:
  bool tight(int r, int l) const {
    const double reduced = cost_(r, l) - sol_.col_potential[l] -
                           sol_.row_potential[r];
    return std::abs(reduced) <= tol_;
  }
  bool must_cover(int r) const { return sol_.row_potential[r] < -tol_; }

  bool try_move(int l, int r) {
    std::vector<int> row_of = row_of_;
    std::vector<int> col_of = col_of_;
    const int freed = row_of[l];
    const int displaced = col_of[r];
    col_of[freed] = -1;
    row_of[l] = r;
    col_of[r] = l;

    // Columns <= l and their rows are frozen from here on.
    auto row_frozen = [&](int row) {
      return frozen_row_[row] || row == r;
    };

    if (displaced >= 0) {
      if (!augment_column(displaced, l, row_of, col_of, row_frozen)) return false;
    }
    if (col_of[freed] < 0 && must_cover(freed)) {
      if (!recover_row(freed, l, row_of, col_of)) return false;
    }
    row_of_ = std::move(row_of);
    col_of_ = std::move(col_of);
    return true;
  }

  // BFS over tight edges from an unassigned column to any free, unfrozen row.
  template <class Frozen>
  bool augment_column(int start, int fixed_upto, std::vector<int>& row_of, std::vector<int>& col_of,
                      const Frozen& row_frozen) const {
    std::vector<int> parent_col(m_, -2);  // row -> column reaching it
    std::deque<int> queue{start};
    std::vector<char> col_seen(n_, 0);
    col_seen[start] = 1;
    while (!queue.empty()) {
      const int c = queue.front();
      queue.pop_front();
      for (int x = 0; x < m_; ++x) {
        if (row_frozen(x) || parent_col[x] != -2 || !tight(x, c)) continue;
        parent_col[x] = c;
        const int owner = col_of[x];
        if (owner < 0) {
          int row = x;
          int col = c;
          while (true) {
            const int prev_row = row_of[col];
            row_of[col] = row;
            col_of[row] = col;
            if (col == start) break;
            row = prev_row;
            col = parent_col[row];
          }
          return true;
        }
        if (owner > fixed_upto && !col_seen[owner]) {
          col_seen[owner] = 1;
          queue.push_back(owner);
        }
      }
    }
    return false;
  }

  // Alternating path from an uncovered row with nonzero dual: take a tight
  // unfrozen column, release its row, and so on until the released row may
  // legitimately stay unassigned.
  bool recover_row(int start, int fixed_upto, std::vector<int>& row_of, std::vector<int>& col_of) const {
    std::vector<int> parent_row(n_, -1);  // column -> row reaching it
    std::vector<int> reached_by(m_, -1);  // row -> column holding it
    std::vector<char> row_seen(m_, 0);
    std::deque<int> queue{start};
    row_seen[start] = 1;
    while (!queue.empty()) {
      const int x = queue.front();
      queue.pop_front();
      for (int c = fixed_upto + 1; c < n_; ++c) {
        if (parent_row[c] >= 0 || !tight(x, c)) continue;
        parent_row[c] = x;
        const int z = row_of[c];
        if (row_seen[z]) continue;
        row_seen[z] = 1;
        reached_by[z] = c;
        if (must_cover(z)) {
          queue.push_back(z);
          continue;
        }
        col_of[z] = -1;
        int col = c;
        while (true) {
          const int row = parent_row[col];
          row_of[col] = row;
          col_of[row] = col;
          if (row == start) return true;
          col = reached_by[row];
        }
      }
    }
    return false;
  }

  const Eigen::MatrixXd& cost_;
  const HungarianSolution& sol_;
  double tol_;
  int m_;
  int n_;
  std::vector<int> row_of_;
  std::vector<int> col_of_;
  std::vector<char> frozen_row_;
};

}  // namespace

AssignmentMatrix solve_assignment(const Eigen::MatrixXd& cost) {
  const auto rows = cost.rows();
  const auto cols = cost.cols();
  if (rows < cols) {
    std::ostringstream msg;
    msg << "solve_assignment: cost matrix has " << rows << " rows but " << cols
        << " columns; need rows >= columns";
    throw std::invalid_argument(msg.str());
  }
  if (!cost.allFinite()) throw std::invalid_argument("solve_assignment: non-finite cost entry");
  if (cols == 0) return AssignmentMatrix(static_cast<int>(rows), {});

  const HungarianSolution sol = hungarian(cost);
  const double scale = 1.0 + cost.cwiseAbs().maxCoeff();
  LexicographicRefiner refiner(cost, sol, 1e-9 * scale);
  return AssignmentMatrix(static_cast<int>(rows), refiner.run());
}

}  // namespace pfnm
