#pragma once

#include "dtn/errors.hpp"
#include "dtn/hbs.hpp"
#include "dtn/lowrank.hpp"

#include <vector>

namespace dtn {

// --------------------------------------------------------------------------
// One-level block separable matrices: H = U Htilde V^T + D with block
// diagonal U, V, D over p blocks of size m.

struct BlockSeparable {
  std::vector<Matrix> D, U, V;  // per block: m x m, m x k, m x k
  Matrix coupling;              // kp x kp, zero diagonal blocks
  std::vector<Eigen::Index> block_sizes() const;
  Eigen::Index size() const;
  Matrix dense() const;
};

struct BlockSeparableInverse {
  std::vector<Matrix> E, F, G;  // shapes mirror U, V, D
  Matrix core_inverse;          // (Htilde + Dhat)^{-1}, kp x kp
  std::vector<Eigen::Index> ranks;
  Matrix dense() const;
  Matrix apply(const Matrix& x) const;
};

/// Woodbury-style inversion H^{-1} = E (Htilde + Dhat)^{-1} F^T + G with
///   Dhat = (V^T D^{-1} U)^{-1},  E = D^{-1} U Dhat,
///   F^T = Dhat V^T D^{-1},       G = D^{-1} - D^{-1} U Dhat V^T D^{-1}.
/// Reduces an mp x mp inversion to a kp x kp one. Throws
/// FactorizationError naming which of D, Dhat, or (Htilde + Dhat) failed.
BlockSeparableInverse invert_bs_onelevel(const BlockSeparable& H);

// --------------------------------------------------------------------------
// Multi-level inversion.

/// Factors {E_t, F_t, G_t} (plus the root core block) representing the
/// inverse of an HbsMatrix. They form a telescoping factorization of the
/// same shape as the input, stored in `rep` with E in the U slots, F in
/// the V slots, per-node G in the D/B slots and the root core inverse in
/// the root B slot, so application reuses the HBS apply sweep.
struct InverseFactors {
  HbsMatrix rep;

  Eigen::Index size() const { return rep.size(); }
  const Matrix& E(int t) const { return rep.U[t]; }
  const Matrix& F(int t) const { return rep.V[t]; }
  const Matrix& G(int t) const {
    return rep.tree.is_leaf(t) ? rep.D[t] : rep.B[t];
  }
};

/// Inversion sweep over all levels, finer to coarser:
///   leaf:   Dtilde_t = D_t
///   parent: Dtilde_t = B_t + diag(Dhat_c1, Dhat_c2)
///   Dhat_t = (V_t^T Dtilde_t^{-1} U_t)^{-1}, E/F/G as in the one-level
///   formulas, root core = Dtilde_root^{-1}.
/// Cost is linear in the matrix dimension for bounded ranks. Throws
/// FactorizationError naming the node id and level of any singular block.
InverseFactors invert_hbs(const HbsMatrix& H);

/// y = H^{-1} x via the upward sweep (xhat = F^T ...), the root core
/// solve, and the downward sweep.
Matrix apply_inverse(const InverseFactors& inv, const Matrix& x);

// --------------------------------------------------------------------------
// Addition and low-rank conversion.

/// Structural sum of two HBS matrices on the same tree, ranks re-minimized
/// at relative tolerance eps (stacked bases are re-orthogonalized, then
/// truncated against the actual coupling content). Throws
/// std::invalid_argument on tree mismatch.
HbsMatrix add_hbs(const HbsMatrix& A, const HbsMatrix& B, double eps);

/// Exact block separable form of the rank-k product Q * R on the given
/// tree; per-node ranks are at most k and the reconstruction is exact to
/// roundoff.
HbsMatrix lowrank_to_bs(const Matrix& Q, const Matrix& R,
                        const IndexTree& tree);

/// A + Q R, recompressed at eps.
HbsMatrix add_lowrank(const HbsMatrix& A, const Matrix& Q, const Matrix& R,
                      double eps);

// --------------------------------------------------------------------------
// Splitting and assembly (building blocks of the accelerated merge).

/// A matrix distributed over an index range as block diagonal pieces plus
/// low-rank corrections: sum_i diag(piece_i) + sum_j placed low-rank.
struct HbsAccumulation {
  Eigen::Index size = 0;
  std::vector<Eigen::Index> piece_offsets;
  std::vector<HbsMatrix> pieces;
  std::vector<PlacedLowRank> corrections;
};

/// Decomposition of H across the cut position `pos`: H restricted to
/// [0,pos) and [pos,M) as accumulations, plus the two off-diagonal
/// coupling blocks in low-rank form (offsets local to each side).
/// Requires zero diagonal sub-blocks in all B factors along the descent.
struct SplitParts {
  HbsAccumulation lo, hi;
  std::vector<PlacedLowRank> lo_hi;  // rows in [0,pos), cols in [pos,M)
  std::vector<PlacedLowRank> hi_lo;
};

SplitParts split_at(const HbsMatrix& H, Eigen::Index pos);

/// Flattens an accumulation into one proper HBS matrix: the pieces become
/// subtrees of a spine tree and the corrections are folded in through a
/// single low-rank addition at tolerance eps.
HbsMatrix consolidate(const HbsAccumulation& acc, double eps);

/// Re-expresses H on a different tree over the same index range. Used
/// where two operands of add_hbs were built with unrelated trees; goes
/// through a dense intermediate, so it is reserved for interface-sized
/// blocks.
HbsMatrix rebase(const HbsMatrix& H, const IndexTree& target, double eps);

}  // namespace dtn
