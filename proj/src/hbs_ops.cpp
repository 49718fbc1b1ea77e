#include "dtn/hbs_ops.hpp"

#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <stdexcept>

namespace dtn {

namespace {

Eigen::Index svd_rank(const Vector& sigma, double eps, double floor = 0.0) {
  if (sigma.size() == 0 || sigma(0) <= floor) return 0;
  const double cut = std::max(eps * sigma(0), floor);
  Eigen::Index k = 0;
  while (k < sigma.size() && sigma(k) > cut) ++k;
  return k;
}

Matrix hcat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out.leftCols(a.cols()) = a;
  out.rightCols(b.cols()) = b;
  return out;
}

Matrix checked_inverse(const Matrix& m, const char* what,
                       const std::string& where) {
  if (m.rows() == 0) return m;
  Eigen::FullPivLU<Matrix> lu(m);
  if (!lu.isInvertible()) {
    throw FactorizationError(std::string(what) + " is singular", where);
  }
  return lu.inverse();
}

}  // namespace

// --------------------------------------------------------------------------
// One-level block separable.

std::vector<Eigen::Index> BlockSeparable::block_sizes() const {
  std::vector<Eigen::Index> sizes;
  sizes.reserve(D.size());
  for (const auto& d : D) sizes.push_back(d.rows());
  return sizes;
}

Eigen::Index BlockSeparable::size() const {
  Eigen::Index m = 0;
  for (const auto& d : D) m += d.rows();
  return m;
}

Matrix BlockSeparable::dense() const {
  const Eigen::Index m = size();
  Matrix out = Matrix::Zero(m, m);
  Eigen::Index ro = 0, ko_r = 0;
  for (std::size_t i = 0; i < D.size(); ++i) {
    out.block(ro, ro, D[i].rows(), D[i].cols()) = D[i];
    Eigen::Index co = 0, ko_c = 0;
    for (std::size_t j = 0; j < D.size(); ++j) {
      if (i != j) {
        out.block(ro, co, D[i].rows(), D[j].cols()) +=
            U[i] * coupling.block(ko_r, ko_c, U[i].cols(), V[j].cols()) *
            V[j].transpose();
      }
      co += D[j].cols();
      ko_c += V[j].cols();
    }
    ro += D[i].rows();
    ko_r += U[i].cols();
  }
  return out;
}

BlockSeparableInverse invert_bs_onelevel(const BlockSeparable& H) {
  const std::size_t p = H.D.size();
  BlockSeparableInverse inv;
  inv.E.resize(p);
  inv.F.resize(p);
  inv.G.resize(p);
  inv.ranks.resize(p);

  Eigen::Index ktot = 0;
  for (std::size_t i = 0; i < p; ++i) ktot += H.U[i].cols();
  Matrix core = H.coupling;
  if (core.rows() != ktot) {
    throw std::invalid_argument("invert_bs_onelevel: coupling size mismatch");
  }

  Eigen::Index ko = 0;
  for (std::size_t i = 0; i < p; ++i) {
    const std::string where = "block " + std::to_string(i);
    const Matrix dinv = checked_inverse(H.D[i], "D", where);
    const Matrix w = dinv * H.U[i];
    const Matrix dhat =
        checked_inverse(H.V[i].transpose() * w, "Dhat = (V^T D^{-1} U)^{-1}",
                        where);
    inv.E[i] = w * dhat;
    inv.F[i] = dinv.transpose() * H.V[i] * dhat.transpose();
    inv.G[i] = dinv - inv.E[i] * (H.V[i].transpose() * dinv);
    inv.ranks[i] = H.U[i].cols();
    core.block(ko, ko, H.U[i].cols(), H.U[i].cols()) += dhat;
    ko += H.U[i].cols();
  }
  inv.core_inverse = checked_inverse(core, "(Htilde + Dhat)", "core");
  return inv;
}

Matrix BlockSeparableInverse::apply(const Matrix& x) const {
  const std::size_t p = E.size();
  Eigen::Index ktot = 0;
  for (auto k : ranks) ktot += k;
  Matrix xhat(ktot, x.cols());
  Eigen::Index ro = 0, ko = 0;
  for (std::size_t i = 0; i < p; ++i) {
    xhat.middleRows(ko, ranks[i]) =
        F[i].transpose() * x.middleRows(ro, F[i].rows());
    ro += F[i].rows();
    ko += ranks[i];
  }
  const Matrix yhat = core_inverse * xhat;
  Matrix y(x.rows(), x.cols());
  ro = 0;
  ko = 0;
  for (std::size_t i = 0; i < p; ++i) {
    y.middleRows(ro, E[i].rows()) =
        E[i] * yhat.middleRows(ko, ranks[i]) +
        G[i] * x.middleRows(ro, E[i].rows());
    ro += E[i].rows();
    ko += ranks[i];
  }
  return y;
}

Matrix BlockSeparableInverse::dense() const {
  Eigen::Index m = 0;
  for (const auto& g : G) m += g.rows();
  return apply(Matrix::Identity(m, m));
}

// --------------------------------------------------------------------------
// Multi-level inversion (finer to coarser sweep).

InverseFactors invert_hbs(const HbsMatrix& H) {
  InverseFactors inv;
  auto& rep = inv.rep;
  rep.tree = H.tree;
  const int N = H.tree.num_nodes();
  rep.D.resize(N);
  rep.U.resize(N);
  rep.V.resize(N);
  rep.B.resize(N);

  if (N == 1) {
    rep.D[0] = checked_inverse(H.D[0], "D", "root leaf");
    return inv;
  }

  std::vector<Matrix> dhat(N);
  for (int t : H.tree.bottom_up()) {
    const std::string where =
        "node " + std::to_string(t) + " level " +
        std::to_string(H.tree.nodes[t].level);
    Matrix dtilde;
    if (H.tree.is_leaf(t)) {
      dtilde = H.D[t];
    } else {
      const int c1 = H.tree.nodes[t].left, c2 = H.tree.nodes[t].right;
      const Eigen::Index k1 = H.rank(c1), k2 = H.rank(c2);
      dtilde = H.B[t];
      dtilde.block(0, 0, k1, k1) += dhat[c1];
      dtilde.block(k1, k1, k2, k2) += dhat[c2];
    }
    if (t == 0) {
      rep.B[0] = checked_inverse(dtilde, "root coupling block", where);
      break;
    }
    Eigen::FullPivLU<Matrix> lu(dtilde);
    if (!lu.isInvertible()) {
      throw FactorizationError("Dtilde is singular", where);
    }
    const Matrix dinv = lu.inverse();
    const Matrix w = dinv * H.U[t];
    dhat[t] = checked_inverse(H.V[t].transpose() * w,
                              "reduced block (V^T Dtilde^{-1} U)", where);
    const Matrix e = w * dhat[t];
    rep.U[t] = e;
    rep.V[t] = dinv.transpose() * H.V[t] * dhat[t].transpose();
    Matrix g = dinv - e * (H.V[t].transpose() * dinv);
    if (H.tree.is_leaf(t)) {
      rep.D[t] = std::move(g);
    } else {
      rep.B[t] = std::move(g);
    }
  }
  return inv;
}

Matrix apply_inverse(const InverseFactors& inv, const Matrix& x) {
  return apply(inv.rep, x);
}

// --------------------------------------------------------------------------
// Addition with recompression.

namespace {

// Exact union representation of A + B: summed diagonal blocks, stacked
// bases, couplings embedded block diagonally per child slot.
HbsMatrix stack_sum(const HbsMatrix& A, const HbsMatrix& B) {
  HbsMatrix C;
  C.tree = A.tree;
  const int N = C.tree.num_nodes();
  C.D.resize(N);
  C.U.resize(N);
  C.V.resize(N);
  C.B.resize(N);
  for (int t = 0; t < N; ++t) {
    if (C.tree.is_leaf(t)) {
      C.D[t] = A.D[t] + B.D[t];
      if (t != 0) {
        C.U[t] = hcat(A.U[t], B.U[t]);
        C.V[t] = hcat(A.V[t], B.V[t]);
      }
      continue;
    }
    const int c1 = C.tree.nodes[t].left, c2 = C.tree.nodes[t].right;
    const Eigen::Index ka1 = A.rank(c1), kb1 = B.rank(c1);
    const Eigen::Index ka2 = A.rank(c2), kb2 = B.rank(c2);
    const Eigen::Index rows = ka1 + kb1 + ka2 + kb2;
    if (t != 0) {
      const Eigen::Index ka = A.rank(t), kb = B.rank(t);
      Matrix u = Matrix::Zero(rows, ka + kb), v = Matrix::Zero(rows, ka + kb);
      u.block(0, 0, ka1, ka) = A.U[t].topRows(ka1);
      u.block(ka1, ka, kb1, kb) = B.U[t].topRows(kb1);
      u.block(ka1 + kb1, 0, ka2, ka) = A.U[t].bottomRows(ka2);
      u.block(ka1 + kb1 + ka2, ka, kb2, kb) = B.U[t].bottomRows(kb2);
      v.block(0, 0, ka1, ka) = A.V[t].topRows(ka1);
      v.block(ka1, ka, kb1, kb) = B.V[t].topRows(kb1);
      v.block(ka1 + kb1, 0, ka2, ka) = A.V[t].bottomRows(ka2);
      v.block(ka1 + kb1 + ka2, ka, kb2, kb) = B.V[t].bottomRows(kb2);
      C.U[t] = std::move(u);
      C.V[t] = std::move(v);
    }
    Matrix bn = Matrix::Zero(rows, rows);
    bn.block(0, 0, ka1, ka1) = A.B[t].block(0, 0, ka1, ka1);
    bn.block(0, ka1 + kb1, ka1, ka2) = A.B[t].block(0, ka1, ka1, ka2);
    bn.block(ka1 + kb1, 0, ka2, ka1) = A.B[t].block(ka1, 0, ka2, ka1);
    bn.block(ka1 + kb1, ka1 + kb1, ka2, ka2) =
        A.B[t].block(ka1, ka1, ka2, ka2);
    bn.block(ka1, ka1, kb1, kb1) = B.B[t].block(0, 0, kb1, kb1);
    bn.block(ka1, ka1 + kb1 + ka2, kb1, kb2) = B.B[t].block(0, kb1, kb1, kb2);
    bn.block(ka1 + kb1 + ka2, ka1, kb2, kb1) = B.B[t].block(kb1, 0, kb2, kb1);
    bn.block(ka1 + kb1 + ka2, ka1 + kb1 + ka2, kb2, kb2) =
        B.B[t].block(kb1, kb1, kb2, kb2);
    C.B[t] = std::move(bn);
  }
  return C;
}

// Replaces this parent's factors after its children changed rank, given
// row transforms tu and column transforms tv (new_k x old_k per child).
void fold_child_transforms(HbsMatrix& H, int t, const std::vector<Matrix>& tu,
                           const std::vector<Matrix>& tv) {
  const int c1 = H.tree.nodes[t].left, c2 = H.tree.nodes[t].right;
  const Eigen::Index o1 = tu[c1].cols(), o2 = tu[c2].cols();
  const Eigen::Index n1 = tu[c1].rows(), n2 = tu[c2].rows();
  if (t != 0) {
    Matrix u(n1 + n2, H.U[t].cols()), v(n1 + n2, H.V[t].cols());
    u.topRows(n1) = tu[c1] * H.U[t].topRows(o1);
    u.bottomRows(n2) = tu[c2] * H.U[t].bottomRows(o2);
    v.topRows(n1) = tv[c1] * H.V[t].topRows(o1);
    v.bottomRows(n2) = tv[c2] * H.V[t].bottomRows(o2);
    H.U[t] = std::move(u);
    H.V[t] = std::move(v);
  }
  Matrix b(n1 + n2, n1 + n2);
  b.block(0, 0, n1, n1) =
      tu[c1] * H.B[t].block(0, 0, o1, o1) * tv[c1].transpose();
  b.block(0, n1, n1, n2) =
      tu[c1] * H.B[t].block(0, o1, o1, o2) * tv[c2].transpose();
  b.block(n1, 0, n2, n1) =
      tu[c2] * H.B[t].block(o1, 0, o2, o1) * tv[c1].transpose();
  b.block(n1, n1, n2, n2) =
      tu[c2] * H.B[t].block(o1, o1, o2, o2) * tv[c2].transpose();
  H.B[t] = std::move(b);
}

std::pair<Matrix, Matrix> thin_qr(const Matrix& a) {
  const Eigen::Index r = std::min(a.rows(), a.cols());
  if (a.cols() == 0) return {Matrix(a.rows(), 0), Matrix(0, 0)};
  Eigen::HouseholderQR<Matrix> qr(a);
  Matrix q = qr.householderQ() * Matrix::Identity(a.rows(), r);
  Matrix rr = Matrix(qr.matrixQR().topRows(r).triangularView<Eigen::Upper>());
  return {std::move(q), std::move(rr)};
}

// Exact re-orthogonalization: every U/V becomes orthonormal, triangular
// factors migrate into parents and coupling blocks.
void orthonormalize(HbsMatrix& H) {
  if (H.tree.num_nodes() == 1) return;
  const int N = H.tree.num_nodes();
  std::vector<Matrix> tu(N), tv(N);
  for (int t : H.tree.bottom_up()) {
    if (!H.tree.is_leaf(t)) fold_child_transforms(H, t, tu, tv);
    if (t == 0) break;
    auto [qu, ru] = thin_qr(H.U[t]);
    auto [qv, rv] = thin_qr(H.V[t]);
    H.U[t] = std::move(qu);
    H.V[t] = std::move(qv);
    tu[t] = std::move(ru);
    tv[t] = std::move(rv);
  }
}

// Rank truncation against the coupling content each basis carries. The
// per-node proxies wrow/wcol hold the exact content expressed through the
// node's basis: sibling coupling, the node's own diagonal coupling block,
// and everything cascading from above. `floor` is an absolute singular
// value cutoff so that content cancelled down to roundoff (A + (-A))
// recompresses to rank zero.
void truncate(HbsMatrix& H, double eps, double floor) {
  if (H.tree.num_nodes() == 1) return;
  const auto& tree = H.tree;
  const int N = tree.num_nodes();
  std::vector<Matrix> wrow(N), wcol(N);
  for (int t : tree.top_down()) {
    if (tree.is_leaf(t)) continue;
    const int c1 = tree.nodes[t].left, c2 = tree.nodes[t].right;
    const Eigen::Index k1 = H.rank(c1), k2 = H.rank(c2);
    const Eigen::Index wp = (t == 0) ? 0 : wrow[t].cols();
    const Matrix& bt = H.B[t];

    wrow[c1].resize(k1, k2 + k1 + wp);
    wrow[c1].leftCols(k2) = bt.block(0, k1, k1, k2);
    wrow[c1].middleCols(k2, k1) = bt.block(0, 0, k1, k1);
    wrow[c2].resize(k2, k1 + k2 + wp);
    wrow[c2].leftCols(k1) = bt.block(k1, 0, k2, k1);
    wrow[c2].middleCols(k1, k2) = bt.block(k1, k1, k2, k2);

    wcol[c1].resize(k1, k2 + k1 + wp);
    wcol[c1].leftCols(k2) = bt.block(k1, 0, k2, k1).transpose();
    wcol[c1].middleCols(k2, k1) = bt.block(0, 0, k1, k1).transpose();
    wcol[c2].resize(k2, k1 + k2 + wp);
    wcol[c2].leftCols(k1) = bt.block(0, k1, k1, k2).transpose();
    wcol[c2].middleCols(k1, k2) = bt.block(k1, k1, k2, k2).transpose();

    if (t != 0) {
      wrow[c1].rightCols(wp) = H.U[t].topRows(k1) * wrow[t];
      wrow[c2].rightCols(wp) = H.U[t].bottomRows(k2) * wrow[t];
      wcol[c1].rightCols(wp) = H.V[t].topRows(k1) * wcol[t];
      wcol[c2].rightCols(wp) = H.V[t].bottomRows(k2) * wcol[t];
    }
  }

  std::vector<Matrix> tu(N), tv(N);
  for (int t : tree.bottom_up()) {
    if (!tree.is_leaf(t)) fold_child_transforms(H, t, tu, tv);
    if (t == 0) break;
    const Matrix cr = H.U[t] * wrow[t];
    const Matrix cc = H.V[t] * wcol[t];
    Eigen::Index k = 0;
    Matrix un(cr.rows(), 0), vn(cc.rows(), 0);
    if (cr.cols() > 0 && cr.rows() > 0) {
      Eigen::BDCSVD<Matrix> su(cr, Eigen::ComputeThinU);
      Eigen::BDCSVD<Matrix> sv(cc, Eigen::ComputeThinU);
      k = std::max(svd_rank(su.singularValues(), eps, floor),
                   svd_rank(sv.singularValues(), eps, floor));
      k = std::min({k, su.matrixU().cols(), sv.matrixU().cols()});
      un = su.matrixU().leftCols(k);
      vn = sv.matrixU().leftCols(k);
    }
    tu[t] = un.transpose() * H.U[t];
    tv[t] = vn.transpose() * H.V[t];
    H.U[t] = std::move(un);
    H.V[t] = std::move(vn);
  }
}

}  // namespace

HbsMatrix add_hbs(const HbsMatrix& A, const HbsMatrix& B, double eps) {
  if (!(A.tree == B.tree)) {
    throw std::invalid_argument("add_hbs: operands use different index trees");
  }
  // absolute cutoff at roundoff relative to the operand magnitudes
  double scale = 0.0;
  for (const auto* h : {&A, &B}) {
    for (const auto& m : h->D) {
      if (m.size() > 0) scale = std::max(scale, m.cwiseAbs().maxCoeff());
    }
    for (const auto& m : h->B) {
      if (m.size() > 0) scale = std::max(scale, m.cwiseAbs().maxCoeff());
    }
  }
  HbsMatrix C = stack_sum(A, B);
  orthonormalize(C);
  truncate(C, eps, 1e-13 * scale);
  return C;
}

// --------------------------------------------------------------------------
// Low-rank conversion.

HbsMatrix lowrank_to_bs(const Matrix& Q, const Matrix& R,
                        const IndexTree& tree) {
  if (Q.rows() != tree.size() || R.cols() != tree.size() ||
      Q.cols() != R.rows()) {
    throw std::invalid_argument("lowrank_to_bs: dimension mismatch");
  }
  const int N = tree.num_nodes();
  HbsMatrix out;
  out.tree = tree;
  out.D.resize(N);
  out.U.resize(N);
  out.V.resize(N);
  out.B.resize(N);
  if (N == 1) {
    out.D[0] = Q * R;
    return out;
  }

  // sq[t] and cf[t] express Q(I_t,:) = Ubig_t sq[t] and R(:,I_t) = cf[t] Vbig_t^T.
  std::vector<Matrix> sq(N), cf(N);
  for (int t : tree.bottom_up()) {
    if (tree.is_leaf(t)) {
      const auto& nd = tree.nodes[t];
      const auto qt = Q.middleRows(nd.begin, tree.node_size(t));
      const auto rt = R.middleCols(nd.begin, tree.node_size(t));
      out.D[t] = qt * rt;
      if (t == 0) break;
      auto [uq, ur] = thin_qr(qt);
      out.U[t] = std::move(uq);
      sq[t] = std::move(ur);
      auto [vq, vr] = thin_qr(rt.transpose());
      out.V[t] = std::move(vq);
      cf[t] = vr.transpose();
      continue;
    }
    const int c1 = tree.nodes[t].left, c2 = tree.nodes[t].right;
    const Eigen::Index k1 = sq[c1].rows(), k2 = sq[c2].rows();
    Matrix b = Matrix::Zero(k1 + k2, k1 + k2);
    b.block(0, k1, k1, k2) = sq[c1] * cf[c2];
    b.block(k1, 0, k2, k1) = sq[c2] * cf[c1];
    out.B[t] = std::move(b);
    if (t == 0) break;
    Matrix qstack(k1 + k2, Q.cols());
    qstack.topRows(k1) = sq[c1];
    qstack.bottomRows(k2) = sq[c2];
    auto [uq, ur] = thin_qr(qstack);
    out.U[t] = std::move(uq);
    sq[t] = std::move(ur);
    Matrix cstack(R.rows(), k1 + k2);
    cstack.leftCols(k1) = cf[c1];
    cstack.rightCols(k2) = cf[c2];
    auto [vq, vr] = thin_qr(cstack.transpose());
    out.V[t] = std::move(vq);
    cf[t] = vr.transpose();
  }
  return out;
}

HbsMatrix add_lowrank(const HbsMatrix& A, const Matrix& Q, const Matrix& R,
                      double eps) {
  return add_hbs(A, lowrank_to_bs(Q, R, A.tree), eps);
}

// --------------------------------------------------------------------------
// Splitting across a cut.

namespace {

constexpr double kExactTol = 1e-14;

void require_zero_diag(const HbsMatrix& H, int t) {
  const int c1 = H.tree.nodes[t].left;
  const Eigen::Index k1 = H.rank(c1);
  const Eigen::Index k2 = H.rank(H.tree.nodes[t].right);
  if (!H.B[t].block(0, 0, k1, k1).isZero(1e-300) ||
      !H.B[t].block(k1, k1, k2, k2).isZero(1e-300)) {
    throw std::logic_error(
        "split_at: nonzero diagonal coupling blocks cannot be split");
  }
}

struct SplitState {
  SplitParts parts;
  Eigen::Index pos = 0;
};

void emit_piece(SplitState& st, const HbsMatrix& H, int t) {
  const Eigen::Index begin = H.tree.nodes[t].begin;
  if (begin >= st.pos) {
    st.parts.hi.piece_offsets.push_back(begin - st.pos);
    st.parts.hi.pieces.push_back(subtree_matrix(H, t));
  } else {
    st.parts.lo.piece_offsets.push_back(begin);
    st.parts.lo.pieces.push_back(subtree_matrix(H, t));
  }
}

// Sibling coupling restricted to the cut: rows of `row_node`, columns of
// `col_node`, low-rank factors L (placed rows) x Rm (placed cols).
void emit_coupling(SplitState& st, const HbsMatrix& H, int row_node,
                   int col_node, const Matrix& bblock) {
  const Eigen::Index k = bblock.cols();
  if (k == 0 || H.rank(row_node) == 0) return;
  Matrix L = apply_col_basis(H, row_node, bblock);
  Matrix Rm =
      apply_row_basis(H, col_node, Matrix::Identity(k, k)).transpose();
  const Eigen::Index rb = H.tree.nodes[row_node].begin,
                     re = H.tree.nodes[row_node].end;
  const Eigen::Index cb = H.tree.nodes[col_node].begin,
                     ce = H.tree.nodes[col_node].end;
  const Eigen::Index pos = st.pos;

  // row/col ranges may straddle the cut; fan out into <= 4 placed terms
  struct Range {
    Eigen::Index begin, len, offset;  // offset local to the side
    bool hi;
  };
  auto split_range = [&](Eigen::Index b, Eigen::Index e) {
    std::vector<Range> rs;
    if (b < pos) rs.push_back({b, std::min(e, pos) - b, b, false});
    if (e > pos) {
      const Eigen::Index s = std::max(b, pos);
      rs.push_back({s, e - s, s - pos, true});
    }
    return rs;
  };
  for (const auto& rr : split_range(rb, re)) {
    for (const auto& cr : split_range(cb, ce)) {
      LowRank lr{L.middleRows(rr.begin - rb, rr.len),
                 Rm.middleCols(cr.begin - cb, cr.len)};
      PlacedLowRank placed{rr.offset, cr.offset, std::move(lr)};
      if (!rr.hi && !cr.hi) {
        st.parts.lo.corrections.push_back(std::move(placed));
      } else if (rr.hi && cr.hi) {
        st.parts.hi.corrections.push_back(std::move(placed));
      } else if (!rr.hi && cr.hi) {
        st.parts.lo_hi.push_back(std::move(placed));
      } else {
        st.parts.hi_lo.push_back(std::move(placed));
      }
    }
  }
}

void split_node(SplitState& st, const HbsMatrix& H, int t) {
  const auto& nd = H.tree.nodes[t];
  if (st.pos <= nd.begin || st.pos >= nd.end) {
    throw std::logic_error("split_at: cut position left the node range");
  }
  if (H.tree.is_leaf(t)) {
    const Eigen::Index p = st.pos - nd.begin, sz = nd.end - nd.begin;
    HbsMatrix lo, hi;
    lo.tree = single_node_tree(p);
    lo.D = {H.D[t].topLeftCorner(p, p)};
    lo.U = {Matrix()};
    lo.V = {Matrix()};
    lo.B = {Matrix()};
    hi.tree = single_node_tree(sz - p);
    hi.D = {H.D[t].bottomRightCorner(sz - p, sz - p)};
    hi.U = {Matrix()};
    hi.V = {Matrix()};
    hi.B = {Matrix()};
    st.parts.lo.piece_offsets.push_back(nd.begin);
    st.parts.lo.pieces.push_back(std::move(lo));
    st.parts.hi.piece_offsets.push_back(0);
    st.parts.hi.pieces.push_back(std::move(hi));
    const LowRank up = lowrank_from_dense(H.D[t].topRightCorner(p, sz - p),
                                          kExactTol);
    const LowRank dn = lowrank_from_dense(H.D[t].bottomLeftCorner(sz - p, p),
                                          kExactTol);
    st.parts.lo_hi.push_back({nd.begin, 0, up});
    st.parts.hi_lo.push_back({0, nd.begin, dn});
    return;
  }

  require_zero_diag(H, t);
  const int c1 = nd.left, c2 = nd.right;
  const Eigen::Index mid = H.tree.nodes[c1].end;
  const Eigen::Index k1 = H.rank(c1), k2 = H.rank(c2);
  emit_coupling(st, H, c1, c2, H.B[t].block(0, k1, k1, k2));
  emit_coupling(st, H, c2, c1, H.B[t].block(k1, 0, k2, k1));
  if (st.pos == mid) {
    emit_piece(st, H, c1);
    emit_piece(st, H, c2);
  } else if (st.pos < mid) {
    split_node(st, H, c1);
    emit_piece(st, H, c2);
  } else {
    emit_piece(st, H, c1);
    split_node(st, H, c2);
  }
}

void sort_pieces(HbsAccumulation& acc) {
  std::vector<std::size_t> order(acc.pieces.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return acc.piece_offsets[a] < acc.piece_offsets[b];
  });
  std::vector<Eigen::Index> offs;
  std::vector<HbsMatrix> ps;
  for (auto i : order) {
    offs.push_back(acc.piece_offsets[i]);
    ps.push_back(std::move(acc.pieces[i]));
  }
  acc.piece_offsets = std::move(offs);
  acc.pieces = std::move(ps);
}

}  // namespace

SplitParts split_at(const HbsMatrix& H, Eigen::Index pos) {
  if (pos < 0 || pos > H.size()) {
    throw std::invalid_argument("split_at: cut out of range");
  }
  SplitState st;
  st.pos = pos;
  st.parts.lo.size = pos;
  st.parts.hi.size = H.size() - pos;
  if (pos == 0) {
    st.parts.hi.piece_offsets.push_back(0);
    st.parts.hi.pieces.push_back(H);
  } else if (pos == H.size()) {
    st.parts.lo.piece_offsets.push_back(0);
    st.parts.lo.pieces.push_back(H);
  } else {
    split_node(st, H, 0);
  }
  sort_pieces(st.parts.lo);
  sort_pieces(st.parts.hi);
  return st.parts;
}

// --------------------------------------------------------------------------
// Assembly of an accumulation into one proper HBS matrix.

namespace {

// Block diagonal join: pieces become whole subtrees under a spine whose
// internal nodes carry zero-rank bases.
void graft_piece(HbsMatrix& dst, const HbsMatrix& src, int s, int parent,
                 int level, Eigen::Index offset) {
  const auto& n = src.tree.nodes[s];
  const int id = int(dst.tree.nodes.size());
  dst.tree.nodes.push_back(
      {n.begin + offset, n.end + offset, -1, -1, parent, level});
  dst.tree.depth = std::max(dst.tree.depth, level);
  dst.D.push_back(src.D[s]);
  if (s == 0) {
    // piece root joins the spine with rank zero
    dst.U.push_back(Matrix::Zero(src.node_rows(0), 0));
    dst.V.push_back(Matrix::Zero(src.node_rows(0), 0));
  } else {
    dst.U.push_back(src.U[s]);
    dst.V.push_back(src.V[s]);
  }
  dst.B.push_back(src.B[s]);
  if (n.left >= 0) {
    graft_piece(dst, src, n.left, id, level + 1, offset);
    const int l = id + 1;
    const int r = int(dst.tree.nodes.size());
    graft_piece(dst, src, n.right, id, level + 1, offset);
    dst.tree.nodes[id].left = l;
    dst.tree.nodes[id].right = r;
  }
}

int build_spine(HbsMatrix& dst, const HbsAccumulation& acc, std::size_t lo,
                std::size_t hi, int parent, int level) {
  if (hi - lo == 1) {
    const int id = int(dst.tree.nodes.size());
    graft_piece(dst, acc.pieces[lo], 0, parent, level, acc.piece_offsets[lo]);
    return id;
  }
  const Eigen::Index begin = acc.piece_offsets[lo];
  const Eigen::Index end =
      acc.piece_offsets[hi - 1] + acc.pieces[hi - 1].size();
  const Eigen::Index target = begin + (end - begin + 1) / 2;
  std::size_t best = lo + 1;
  for (std::size_t s = lo + 1; s < hi; ++s) {
    if (std::abs(acc.piece_offsets[s] - target) <
        std::abs(acc.piece_offsets[best] - target)) {
      best = s;
    }
  }
  const int id = int(dst.tree.nodes.size());
  dst.tree.nodes.push_back({begin, end, -1, -1, parent, level});
  dst.tree.depth = std::max(dst.tree.depth, level);
  dst.D.push_back(Matrix());
  dst.U.push_back(Matrix::Zero(0, 0));
  dst.V.push_back(Matrix::Zero(0, 0));
  dst.B.push_back(Matrix::Zero(0, 0));
  const int l = build_spine(dst, acc, lo, best, id, level + 1);
  const int r = build_spine(dst, acc, best, hi, id, level + 1);
  dst.tree.nodes[id].left = l;
  dst.tree.nodes[id].right = r;
  return id;
}

}  // namespace

HbsMatrix consolidate(const HbsAccumulation& acc, double eps) {
  if (acc.pieces.empty()) {
    throw std::invalid_argument("consolidate: accumulation has no pieces");
  }
  Eigen::Index covered = 0;
  for (std::size_t i = 0; i < acc.pieces.size(); ++i) {
    if (acc.piece_offsets[i] != covered) {
      throw std::invalid_argument("consolidate: pieces do not tile the range");
    }
    covered += acc.pieces[i].size();
  }
  if (covered != acc.size) {
    throw std::invalid_argument("consolidate: pieces do not cover the range");
  }

  HbsMatrix joined;
  if (acc.pieces.size() == 1) {
    joined = acc.pieces[0];
  } else {
    build_spine(joined, acc, 0, acc.pieces.size(), -1, 0);
  }
  if (acc.corrections.empty()) return joined;
  const LowRank corr = lowrank_sum(acc.size, acc.size, acc.corrections, eps);
  if (corr.rank() == 0) return joined;
  return add_lowrank(joined, corr.L, corr.R, eps);
}

HbsMatrix rebase(const HbsMatrix& H, const IndexTree& target, double eps) {
  if (H.tree == target) return H;
  if (H.size() != target.size()) {
    throw std::invalid_argument("rebase: size mismatch");
  }
  return compress(reconstruct(H), target, eps);
}

}  // namespace dtn
