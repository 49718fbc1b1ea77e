#pragma once

#include <Eigen/Dense>

#include <vector>

namespace dtn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Rank-revealing factorization H ~= L * R with L of size M x k.
struct LowRank {
  Matrix L;  // M x k
  Matrix R;  // k x N

  Eigen::Index rows() const { return L.rows(); }
  Eigen::Index cols() const { return R.cols(); }
  Eigen::Index rank() const { return L.cols(); }

  Matrix dense() const { return L * R; }
  Matrix apply(const Matrix& x) const { return L * (R * x); }
  Matrix apply_transpose(const Matrix& x) const {
    return R.transpose() * (L.transpose() * x);
  }

  LowRank block(Eigen::Index r0, Eigen::Index nr, Eigen::Index c0,
                Eigen::Index nc) const {
    return {L.middleRows(r0, nr), R.middleCols(c0, nc)};
  }

  static LowRank zero(Eigen::Index m, Eigen::Index n) {
    return {Matrix::Zero(m, 0), Matrix::Zero(0, n)};
  }
};

/// Left singular vectors spanning the column space of X to the relative
/// spectral tolerance eps (singular values > eps * sigma_max are kept).
Matrix svd_column_basis(const Matrix& X, double eps);

/// Truncated SVD factorization of a dense matrix at relative tolerance eps.
LowRank lowrank_from_dense(const Matrix& X, double eps);

/// Sum of low-rank terms, re-minimized at relative tolerance eps.
/// Terms are placed at (row_offset, col_offset) inside an m x n result.
struct PlacedLowRank {
  Eigen::Index row_offset = 0;
  Eigen::Index col_offset = 0;
  LowRank lr;
};

LowRank lowrank_sum(Eigen::Index m, Eigen::Index n,
                    const std::vector<PlacedLowRank>& terms, double eps);

/// Re-minimizes the rank of an existing factorization at tolerance eps.
LowRank lowrank_recompress(const LowRank& x, double eps);

}  // namespace dtn
