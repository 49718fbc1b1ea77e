#pragma once

#include "dtn/accel_nd.hpp"
#include "dtn/grid.hpp"
#include "dtn/solution_operator.hpp"

#include <string>
#include <vector>

namespace dtn {

/// Fixed set of interior nodes carrying point loads. Nodes must be
/// distinct and strictly interior to the root box (not on the ring that
/// carries the solution operator).
struct BodyLoadSet {
  std::vector<Index> ids;
  Index count() const { return Index(ids.size()); }
};

BodyLoadSet make_load_set(const Lattice& lat,
                          const std::vector<GridPoint>& points);

/// Plain-text list of grid coordinates, one "i j" pair per line
/// (# comments allowed).
BodyLoadSet read_load_set(const std::string& path, const Lattice& lat);

/// Builds the boundary operator together with the N_boundary x N_body map
/// F from unit loads to boundary response: all load columns propagate
/// through one upward sweep, and F is truncated at the build tolerance.
/// The result carries F in `body_map`.
SolutionOperator build_with_loads(const DiscreteOperator& op,
                                  const BoxTree& tree,
                                  const BodyLoadSet& loads, Engine engine,
                                  const AccelOptions& opt);

/// Standalone F factors (column j = boundary response to a unit load at
/// load node j).
LowRank build_body_operator(const DiscreteOperator& op, const BoxTree& tree,
                            const BodyLoadSet& loads, Engine engine,
                            const AccelOptions& opt);

/// v = G g + F fhat.
Vector solve_with_load(const SolutionOperator& op, const Vector& g,
                       const Vector& fhat);

}  // namespace dtn
