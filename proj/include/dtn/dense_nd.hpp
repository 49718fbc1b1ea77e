#pragma once

#include "dtn/errors.hpp"
#include "dtn/grid.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dtn {

/// Dense Schur complement of a rectangular sub-box: the matrix left on the
/// box boundary after eliminating the box interior,
///   S = A_bb - A_bi A_ii^{-1} A_ib.
/// The boundary list fixes the row/column order of S (CCW from the
/// southwest corner). `rhs` carries accumulated boundary load panels when
/// body loads are active (one column per load).
struct SchurData {
  int box_id = -1;
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;  // unknown rectangle, inclusive
  std::vector<Index> boundary;           // unknown ids, CCW from SW corner
  Matrix S;
  Matrix rhs;  // |P_b| x n_loads, empty when no loads

  Index size() const { return Index(boundary.size()); }
};

/// Maps unit loads at `load_ids` into per-box right-hand-side columns.
struct LoadPanel {
  std::vector<Index> load_ids;  // distinct unknown ids
  bool empty() const { return load_ids.empty(); }
};

/// Schur complement of a leaf box; interior elimination uses a sparse
/// factorization of A_ii. When loads are present the rhs update
/// f_b - A_bi A_ii^{-1} f_i is carried along.
/// Throws FactorizationError naming the box if A_ii is singular.
SchurData leaf_schur(const GridBox& box, const DiscreteOperator& op,
                     const LoadPanel& loads = {});

/// Merges two adjacent boxes whose union is a rectangle: assembles the
/// system over both boundaries plus the original cross couplings, then
/// eliminates the nodes interior to the union. The result boundary is
/// ordered CCW from the union's southwest corner. level/box tags only
/// label error reports.
SchurData merge_two(const SchurData& a, const SchurData& b,
                    const DiscreteOperator& op, int level = -1, int box = -1);

/// Merge of four children = three pairwise merges: west pair, east pair,
/// then west|east.
SchurData merge_four(const SchurData& sw, const SchurData& se,
                     const SchurData& nw, const SchurData& ne,
                     const DiscreteOperator& op, int level = -1, int box = -1);

/// Root Schur complement and its dense inverse by the full upward sweep.
struct DenseRoot {
  SchurData root;
  Matrix G;               // S^{-1}
  double cond_estimate;   // one-norm condition estimate of S
};

DenseRoot build_root_dense(const DiscreteOperator& op, const BoxTree& tree,
                           const LoadPanel& loads = {});

/// Binary dump of a box's S: int64 rows, int64 cols, row-major float64
/// values (little endian). See docs/formats.md.
void dump_schur(const SchurData& s, const std::string& path);
Matrix load_schur(const std::string& path);

}  // namespace dtn
