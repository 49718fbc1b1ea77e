#pragma once

#include "dtn/dense_nd.hpp"
#include "dtn/grid.hpp"
#include "dtn/hbs_ops.hpp"
#include "dtn/lowrank.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace dtn {

enum class Engine { dense, accel };

/// Per-level build diagnostics of the accelerated engine.
struct LevelStats {
  int level = 0;
  Eigen::Index max_rank = 0;
  std::uint64_t bytes = 0;
  double seconds = 0.0;
};

/// The boundary solution operator of the root box: the Schur complement S
/// (discrete Dirichlet-to-Neumann map) and its inverse G = S^{-1}, acting
/// on the outermost ring of unknowns ordered CCW from the southwest
/// corner. Holds either dense factors or the compressed pair, plus the
/// optional body-load map F.
struct SolutionOperator {
  Engine engine = Engine::dense;
  int n = 0;
  std::vector<Index> boundary;  // canonical CCW ring of root unknowns

  // dense engine
  Matrix S_dense, G_dense;

  // accelerated engine; stored in the build's representation order,
  // rep_to_canonical maps rep position -> canonical position
  std::optional<HbsMatrix> S_hbs;
  std::optional<InverseFactors> G_hbs;
  std::vector<Index> rep_to_canonical;

  double cond_estimate = 0.0;
  std::vector<LevelStats> level_stats;

  // body-load map, canonical row order (see bodyload.hpp)
  std::optional<LowRank> body_map;

  Index boundary_size() const { return Index(boundary.size()); }
  /// Serialized byte size of every retained factor payload (S, G, F).
  std::uint64_t memory_bytes() const;
};

/// v = G g: boundary potentials for boundary data g (canonical order).
Vector apply_dtn(const SolutionOperator& op, const Vector& g);

/// S g without inverting (dense or compressed route).
Vector apply_schur(const SolutionOperator& op, const Vector& g);

/// Dense image of G in canonical ordering (testing aid; applies the
/// compressed inverse columnwise for the accelerated engine).
Matrix densify_dtn(const SolutionOperator& op);

/// Canonical CCW boundary ring of the root box.
std::vector<Index> root_boundary(const BoxTree& tree);

}  // namespace dtn
