#include "dtn/lowrank.hpp"

#include <Eigen/QR>
#include <Eigen/SVD>

namespace dtn {

namespace {

Eigen::Index truncation_rank(const Vector& sigma, double eps) {
  if (sigma.size() == 0 || sigma(0) <= 0.0) return 0;
  const double cut = eps * sigma(0);
  Eigen::Index k = 0;
  while (k < sigma.size() && sigma(k) > cut) ++k;
  return k;
}

}  // namespace

Matrix svd_column_basis(const Matrix& X, double eps) {
  if (X.rows() == 0 || X.cols() == 0) return Matrix(X.rows(), 0);
  Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU);
  const Eigen::Index k = truncation_rank(svd.singularValues(), eps);
  return svd.matrixU().leftCols(k);
}

LowRank lowrank_from_dense(const Matrix& X, double eps) {
  if (X.rows() == 0 || X.cols() == 0) return LowRank::zero(X.rows(), X.cols());
  Eigen::BDCSVD<Matrix> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::Index k = truncation_rank(svd.singularValues(), eps);
  LowRank out;
  out.L = svd.matrixU().leftCols(k);
  out.R = svd.singularValues().head(k).asDiagonal() *
          svd.matrixV().leftCols(k).transpose();
  return out;
}

LowRank lowrank_recompress(const LowRank& x, double eps) {
  if (x.rank() == 0) return x;
  Eigen::HouseholderQR<Matrix> qrl(x.L);
  Eigen::HouseholderQR<Matrix> qrr(x.R.transpose());
  const Eigen::Index kl = std::min(x.L.rows(), x.L.cols());
  const Eigen::Index kr = std::min(x.R.cols(), x.R.rows());
  Matrix rl = qrl.matrixQR().topRows(kl).triangularView<Eigen::Upper>();
  Matrix rr = qrr.matrixQR().topRows(kr).triangularView<Eigen::Upper>();
  Eigen::BDCSVD<Matrix> svd(rl * rr.transpose(),
                            Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::Index k = truncation_rank(svd.singularValues(), eps);
  Matrix ql = qrl.householderQ() * Matrix::Identity(x.L.rows(), kl);
  Matrix qr = qrr.householderQ() * Matrix::Identity(x.R.cols(), kr);
  LowRank out;
  out.L = ql * svd.matrixU().leftCols(k);
  out.R = svd.singularValues().head(k).asDiagonal() *
          (qr * svd.matrixV().leftCols(k)).transpose();
  return out;
}

LowRank lowrank_sum(Eigen::Index m, Eigen::Index n,
                    const std::vector<PlacedLowRank>& terms, double eps) {
  Eigen::Index ktot = 0;
  for (const auto& t : terms) ktot += t.lr.rank();
  if (ktot == 0) return LowRank::zero(m, n);
  Matrix l = Matrix::Zero(m, ktot), r = Matrix::Zero(ktot, n);
  Eigen::Index at = 0;
  for (const auto& t : terms) {
    const Eigen::Index k = t.lr.rank();
    l.block(t.row_offset, at, t.lr.rows(), k) = t.lr.L;
    r.block(at, t.col_offset, k, t.lr.cols()) = t.lr.R;
    at += k;
  }
  return lowrank_recompress({std::move(l), std::move(r)}, eps);
}

}  // namespace dtn
