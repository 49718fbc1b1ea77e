#pragma once

#include "dtn/index_tree.hpp"
#include "dtn/lowrank.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <string>
#include <vector>

namespace dtn {

/// Hierarchically block separable matrix over an IndexTree.
///
/// Stored factors, per node tau:
///   leaf:        D (n x n), U (n x k), V (n x k)
///   parent:      B ((k1+k2) x (k1+k2)), and for non-root parents
///                U ((k1+k2) x k), V ((k1+k2) x k)
/// where k1, k2 are the children's ranks. B holds the coupling between the
/// children expressed in their U/V bases; for matrices produced by
/// compression its diagonal sub-blocks are zero, but the format allows
/// them to be populated (inverses produced by the fast inversion sweep
/// carry their per-level blocks there).
///
/// The matrix is recovered by the telescoping expansion
///   H(I_c1, I_c2) = Ubig_c1 * B[c1,c2] * Vbig_c2^T  (per parent)
///   H(I_leaf, I_leaf) += D_leaf
/// with Ubig the basis cascade U_leaf ... U_ancestor.
struct HbsMatrix {
  IndexTree tree;
  std::vector<Matrix> D;  // indexed by node id; leaves only
  std::vector<Matrix> U;  // non-root nodes
  std::vector<Matrix> V;  // non-root nodes
  std::vector<Matrix> B;  // parent nodes (root included)

  Eigen::Index size() const { return tree.size(); }
  Eigen::Index rank(int t) const {
    return (t == 0) ? 0 : U[t].cols();
  }
  /// Row dimension of the node's own factors (n for leaves, k1+k2 else).
  Eigen::Index node_rows(int t) const {
    return tree.is_leaf(t) ? tree.node_size(t)
                           : rank(tree.nodes[t].left) + rank(tree.nodes[t].right);
  }
  Eigen::Index max_rank() const;

  /// Total bytes of factor payloads (doubles only, excluding tree
  /// structure); the serialized form adds a fixed-size header per node.
  std::uint64_t payload_bytes() const;
};

/// Compresses a dense matrix onto the given tree. For every node the
/// column basis U spans the off-diagonal block row H(I_t, I \ I_t) to the
/// relative spectral tolerance eps (V likewise for block columns); ranks
/// are minimal for that tolerance.
HbsMatrix compress(const Matrix& H, const IndexTree& tree, double eps);

/// Convenience overload using build_index_tree(M, leaf_cap).
HbsMatrix compress(const Matrix& H, double eps, Eigen::Index leaf_cap = 64);

/// H * x through the telescoping factorization; cost O(M k^2) for bounded
/// ranks. Panels are applied column-block-wise.
Matrix apply(const HbsMatrix& H, const Matrix& x);

/// Exact dense evaluation of the stored factorization (testing aid).
Matrix reconstruct(const HbsMatrix& H);

/// Ubig_t * X and Vbig_t * X: cascaded basis application for node t.
Matrix apply_col_basis(const HbsMatrix& H, int t, const Matrix& X);
Matrix apply_row_basis(const HbsMatrix& H, int t, const Matrix& X);

/// The subtree rooted at node t as a standalone matrix over its range
/// (the node's own U/V, which express coupling to the rest of H, are
/// dropped). Requires zero diagonal sub-blocks in the B factors above t.
HbsMatrix subtree_matrix(const HbsMatrix& H, int t);

/// Reversal of the index order: reconstruct(flip(H)) equals
/// reconstruct(H) with both dimensions reversed, on mirror(H.tree).
HbsMatrix flip(const HbsMatrix& H);

/// Diagonal row/column scalings and scalar multiples, applied in place.
void scale_rows(HbsMatrix& H, const Vector& w);
void scale_cols(HbsMatrix& H, const Vector& w);
void scale(HbsMatrix& H, double s);

/// max_t ||U_t^T U_t - I||_max over all nodes (and V alike); compression
/// and addition keep this at roundoff level.
double basis_orthonormality_defect(const HbsMatrix& H);

/// Binary serialization; the layout is documented in docs/formats.md and
/// is byte-for-byte stable for a fixed input.
std::vector<std::uint8_t> serialize(const HbsMatrix& H);
HbsMatrix deserialize(const std::uint8_t* data, std::size_t size);
void write_hbs(const HbsMatrix& H, const std::string& path);
HbsMatrix read_hbs(const std::string& path);

}  // namespace dtn
