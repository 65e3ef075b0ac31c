#pragma once

#include <Eigen/Dense>

#include <vector>

namespace pfnm {

/// Binary matrix mapping local neurons (columns) to global atoms (rows).
///
/// Stored sparsely as one row index per column. Construction enforces the
/// matching invariants: every column is assigned exactly one row and no row
/// receives more than one column.
class AssignmentMatrix {
 public:
  AssignmentMatrix() = default;
  AssignmentMatrix(int rows, std::vector<int> col_to_row);

  static AssignmentMatrix identity(int n);

  int rows() const { return rows_; }
  int cols() const { return static_cast<int>(col_to_row_.size()); }
  int row_of(int col) const { return col_to_row_.at(col); }
  const std::vector<int>& col_to_row() const { return col_to_row_; }

  bool operator()(int row, int col) const { return row_of(col) == row; }
  int row_sum(int row) const;
  int col_sum(int col) const;

  Eigen::MatrixXi dense() const;

  bool operator==(const AssignmentMatrix&) const = default;

 private:
  int rows_ = 0;
  std::vector<int> col_to_row_;
};

/// Minimum-cost injection of columns into rows for a rows >= cols matrix.
///
/// Hungarian algorithm (shortest augmenting paths with potentials) on the
/// rectangular problem directly. Among all optimal assignments the one with
/// the lexicographically smallest row sequence (column 0 first) is returned,
/// found by a post-pass over the tight subgraph of the optimal duals.
AssignmentMatrix solve_assignment(const Eigen::MatrixXd& cost);

/// Sum of cost(row_of(l), l) over columns in order.
double assignment_cost(const Eigen::MatrixXd& cost, const AssignmentMatrix& assignment);

}  // namespace pfnm
