#pragma once

#include "dtn/grid.hpp"
#include "dtn/solution_operator.hpp"

#include <cstdint>
#include <optional>

namespace dtn {

enum class OracleBackend { direct, gmres };

struct SolveReport {
  Vector x;
  double residual = 0.0;  // ||A x - rhs|| / ||rhs||
  int iterations = 0;     // gmres only
};

/// Solves the full sparse system A x = rhs to relative residual
/// `residual_tol` (default 1e-10). `direct` factorizes with sparse LU and
/// refines iteratively; `gmres` runs unpreconditioned restarted GMRES
/// (restart 50, tolerance 1e-12). Throws FactorizationError /
/// std::runtime_error with the achieved residual on failure. Near-singular
/// systems are condition-limited: callers comparing at coarser scales may
/// relax the tolerance instead of failing.
SolveReport full_solve(const DiscreteOperator& op, const Vector& rhs,
                       OracleBackend backend = OracleBackend::direct,
                       double residual_tol = 1e-10);

/// Boundary restriction of the full-system solve with load r placed on
/// the ring `boundary` (zero elsewhere): the reference value of G r.
Vector reference_dtn_apply(const DiscreteOperator& op,
                           const std::vector<Index>& boundary,
                           const Vector& r,
                           OracleBackend backend = OracleBackend::direct,
                           double residual_tol = 1e-10);

/// Relative l2 errors of the built operator against the full-system
/// reference: e1 uses a seeded random unit boundary vector, e2 the smooth
/// profile sin(2 pi t) over normalized perimeter arclength.
struct ErrorMetrics {
  double e1 = 0.0;
  double e2 = 0.0;
};

ErrorMetrics error_metrics(const SolutionOperator& op,
                           const DiscreteOperator& system,
                           std::uint64_t seed = 0);

/// The two probe vectors used by error_metrics (unit norm).
Vector random_unit_boundary(Index size, std::uint64_t seed);
Vector smooth_boundary(Index size);

}  // namespace dtn
