#pragma once

#include "dtn/dense_nd.hpp"
#include "dtn/grid.hpp"
#include "dtn/hbs_ops.hpp"
#include "dtn/solution_operator.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace dtn {

struct AccelOptions {
  double epsilon = 1e-7;
  Index crossover = 1024;  // boundary size at which boxes turn structured
  Index hbs_leaf = 64;
  Index rank_warn_cap = 4096;
  int threads = 1;
  // receives a diagnostic line when a compressed rank exceeds the cap
  std::function<void(const std::string&)> warn;
};

/// Which edge of a box is eliminated at its upcoming merge.
enum class JSide { none, south, north, west, east };

/// Schur complement of a box in compressed form. The boundary is stored
/// in [J; K] order: J is the interior of the box's J-edge traversed
/// counterclockwise, K the rest of the perimeter continuing CCW. The
/// diagonal blocks are HBS, the off-diagonal blocks low rank.
struct StructuredSchur {
  int box_id = -1;
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;
  JSide j_side = JSide::none;
  std::vector<Index> boundary;  // [J; K]
  Index j_size = 0;

  HbsMatrix s_jj, s_kk;
  LowRank s_jk, s_kj;
  Matrix rhs;  // |boundary| x n_loads, rows in [J; K] order

  Index size() const { return Index(boundary.size()); }
  Index k_size() const { return size() - j_size; }
  Index max_rank() const;
  /// Dense Schur complement in canonical CCW-from-southwest order
  /// (testing aid).
  SchurData densify(const Lattice& lat) const;
};

/// Either representation of a box during the upward sweep; dense below
/// the crossover, structured at and above it.
struct BoxOperand {
  bool structured = false;
  SchurData dense;
  StructuredSchur comp;

  Index boundary_size() const {
    return structured ? comp.size() : dense.size();
  }
};

/// Boundary node list of a rectangle in [J; K] order (the full CCW
/// perimeter rotated so the J-edge interior comes first). JSide::none
/// yields the canonical CCW-from-southwest order.
std::vector<Index> arc_boundary(const Lattice& lat, int x0, int x1, int y0,
                                int y1, JSide j_side, Index& j_size);

/// Compresses a dense box into the structured form (the crossover birth).
StructuredSchur compress_box(const SchurData& dense, JSide j_side,
                             const Lattice& lat, const AccelOptions& opt);

/// Anti-diagonal interface couplings between the J sets of two merging
/// boxes: alpha[s] = A(J4[s], J3[|J|-1-s]) and beta[t] = A(J3[t],
/// J4[|J|-1-t]). Verifies each interface node couples to exactly one node
/// across the interface.
void interface_coupling(const DiscreteOperator& op, const StructuredSchur& b3,
                        const StructuredSchur& b4, Vector& alpha,
                        Vector& beta);

/// Structured merge: eliminates the shared interface of two structured
/// boxes with HBS/low-rank arithmetic (block interface solve, low-rank
/// product assembly, compressed updates of the kept blocks). The output
/// agrees with the dense merge to the tolerance budget. `out_side` names
/// the J-edge of the union box (none for the root).
StructuredSchur accel_merge(const StructuredSchur& b3,
                            const StructuredSchur& b4,
                            const DiscreteOperator& op, JSide out_side,
                            const AccelOptions& opt, int level = -1,
                            int box = -1);

/// Full accelerated build: upward sweep with the dense/structured
/// crossover, root compression, and the root inversion sweep.
SolutionOperator build_root_accel(const DiscreteOperator& op,
                                  const BoxTree& tree, const AccelOptions& opt,
                                  const LoadPanel& loads = {});

/// Dense engine wrapped in the same result type.
SolutionOperator build_root_dense_op(const DiscreteOperator& op,
                                     const BoxTree& tree,
                                     const LoadPanel& loads = {});

}  // namespace dtn
