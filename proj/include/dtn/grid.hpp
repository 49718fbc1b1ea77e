#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace dtn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;
using SparseMatrix = Eigen::SparseMatrix<double>;

/// Node of the n x n grid, x grows east, y grows north.
struct GridPoint {
  int x = 0;
  int y = 0;
  friend bool operator==(const GridPoint&, const GridPoint&) = default;
};

enum class ProblemMode { continuum, network };

/// One discretized elliptic problem on the unit square:
///   -Lap u + b u_x + c u_y + d u = f,  u = g on the outer ring.
/// The outer ring of the n x n grid carries Dirichlet data; the
/// (n-2) x (n-2) interior nodes are the unknowns.
struct ProblemSpec {
  std::string name;
  int n = 0;
  double h = 0.0;  // 1/(n-1)
  ProblemMode mode = ProblemMode::continuum;

  // Coefficient fields, evaluated at physical coordinates in [0,1]^2.
  std::function<double(double, double)> b, c, d;

  // Network mode: per-link conductivities drawn uniformly from
  // [conductivity_lo, conductivity_hi], derived from `seed`.
  double conductivity_lo = 1.0;
  double conductivity_hi = 1.0;
  std::uint64_t seed = 0;

  static ProblemSpec continuum(std::string name, int n,
                               std::function<double(double, double)> b,
                               std::function<double(double, double)> c,
                               std::function<double(double, double)> d);
  static ProblemSpec network(std::string name, int n, double lo, double hi,
                             std::uint64_t seed);
};

/// Bookkeeping for the unknown lattice of an n x n grid.
struct Lattice {
  int n = 0;

  int side() const { return n - 2; }
  Index num_unknowns() const { return Index(side()) * side(); }
  bool is_unknown(int x, int y) const {
    return x >= 1 && x <= n - 2 && y >= 1 && y <= n - 2;
  }
  bool is_dirichlet(int x, int y) const {
    return (x == 0 || y == 0 || x == n - 1 || y == n - 1) && x >= 0 &&
           y >= 0 && x < n && y < n;
  }
  Index unknown_id(int x, int y) const {
    return Index(y - 1) * side() + (x - 1);
  }
  GridPoint point_of(Index id) const {
    return {int(id % side()) + 1, int(id / side()) + 1};
  }
  /// Position of a Dirichlet node in the outer-ring enumeration
  /// (counterclockwise from (0,0)); the ring has 4(n-1) nodes.
  Index ring_id(int x, int y) const;
  Index ring_size() const { return 4 * Index(n - 1); }
};

/// One assembled equation row: center node plus up to four compass
/// neighbors, coefficients in the units of the discretized operator.
struct StencilRow {
  Index center = 0;
  std::vector<std::pair<Index, double>> entries;            // unknown couplings
  std::vector<std::pair<Index, double>> dirichlet_entries;  // ring couplings
};

/// Sparse five-point operator over the unknowns, together with the
/// boundary-forcing map from prescribed ring values into the equations
/// (moved to the right hand side at solve time: rhs -= dirichlet * g).
struct DiscreteOperator {
  int n = 0;
  double h = 0.0;
  ProblemMode mode = ProblemMode::continuum;
  Eigen::SparseMatrix<double, Eigen::RowMajor> A;          // nu x nu
  Eigen::SparseMatrix<double, Eigen::RowMajor> dirichlet;  // nu x 4(n-1)

  Lattice lattice() const { return Lattice{n}; }
  /// A(row, col); zero when the entry is not stored.
  double coeff(Index row, Index col) const;
  StencilRow row(Index id) const;
};

/// Assembles the five-point discretization of `spec`:
///   (1/h^2)[4u(k)-u(k_n)-u(k_s)-u(k_w)-u(k_e)]
///   + (1/h) b(k)[u(k_e)-u(k_w)] + (1/h) c(k)[u(k_n)-u(k_s)] + d(k) u(k).
/// Network mode assembles conductivity-weighted equilibrium equations with
/// the diagonal equal to the sum of incident conductivities.
/// Throws std::invalid_argument for n < 4 and std::domain_error for
/// non-finite coefficient evaluations.
DiscreteOperator discretize(const ProblemSpec& spec);

/// Per-link conductivities of a network problem, in assembly order:
/// horizontal links (x,y)-(x+1,y) row-major, then vertical links.
std::vector<double> link_conductivities(const ProblemSpec& spec);

// --------------------------------------------------------------------------
// Quadtree of nested boxes.

struct GridBox {
  int id = -1;
  int level = 0;
  int parent = -1;
  std::array<int, 4> children{-1, -1, -1, -1};  // SW, SE, NW, NE

  // Grid region covered by the box, half-open in full-grid coordinates.
  int gx0 = 0, gx1 = 0, gy0 = 0, gy1 = 0;
  // Unknown nodes inside the region form the rectangle [x0,x1] x [y0,y1].
  int x0 = 0, x1 = -1, y0 = 0, y1 = -1;

  std::vector<Index> interior;  // P_i, row-major
  std::vector<Index> boundary;  // P_b, CCW from the southwest corner

  bool is_leaf() const { return children[0] < 0; }
  Index grid_node_count() const {
    return Index(gx1 - gx0) * (gy1 - gy0);
  }
  Index rect_width() const { return x1 - x0 + 1; }
  Index rect_height() const { return y1 - y0 + 1; }
  Index num_nodes() const {
    return Index(interior.size() + boundary.size());
  }
};

struct BoxTree {
  int n = 0;
  int n_leaf = 0;
  int depth = 0;  // leaves live on level `depth`, the root on level 0
  std::vector<GridBox> boxes;
  std::vector<std::vector<int>> levels;  // box ids per level

  const GridBox& root() const { return boxes[0]; }
};

/// Partitions the n x n grid into 4^L equisized boxes where L is the
/// smallest integer with n^2 / 4^L <= n_leaf, then assembles the quadtree
/// with per-box interior/boundary index sets over the unknowns.
/// Requires n >= 4 and n_leaf >= 16.
BoxTree build_tree(int n, int n_leaf);

/// Perimeter of an inclusive rectangle of unknowns, counterclockwise from
/// the southwest corner; degenerates to a single row/column scan for
/// one-wide rectangles.
std::vector<GridPoint> rect_perimeter_ccw(int x0, int x1, int y0, int y1);

// --------------------------------------------------------------------------
// Plain-text problem configuration (key=value lines).

struct ProblemConfig {
  std::string problem = "laplace";
  int n = 64;
  int n_leaf = 4096;
  double tolerance = 1e-7;
  std::uint64_t seed = 0;
};

ProblemConfig read_config(const std::string& path);

}  // namespace dtn
