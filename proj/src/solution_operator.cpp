#include "dtn/solution_operator.hpp"

namespace dtn {

std::uint64_t SolutionOperator::memory_bytes() const {
  std::uint64_t bytes = 0;
  if (engine == Engine::dense) {
    bytes += std::uint64_t(S_dense.size() + G_dense.size()) * sizeof(double);
  } else {
    if (S_hbs) bytes += serialize(*S_hbs).size();
    if (G_hbs) bytes += serialize(G_hbs->rep).size();
  }
  if (body_map) {
    bytes += std::uint64_t(body_map->L.size() + body_map->R.size()) *
             sizeof(double);
  }
  return bytes;
}

namespace {

Vector to_rep(const SolutionOperator& op, const Vector& g) {
  Vector out(g.size());
  for (Index i = 0; i < g.size(); ++i) out(i) = g(op.rep_to_canonical[i]);
  return out;
}

Vector from_rep(const SolutionOperator& op, const Vector& y) {
  Vector out(y.size());
  for (Index i = 0; i < y.size(); ++i) out(op.rep_to_canonical[i]) = y(i);
  return out;
}

}  // namespace

Vector apply_dtn(const SolutionOperator& op, const Vector& g) {
  if (g.size() != op.boundary_size()) {
    throw std::invalid_argument("apply_dtn: boundary vector size mismatch");
  }
  // an accelerated build whose root stayed below the crossover holds
  // dense factors
  if (!op.G_hbs.has_value()) return op.G_dense * g;
  return from_rep(op, apply_inverse(*op.G_hbs, to_rep(op, g)));
}

Vector apply_schur(const SolutionOperator& op, const Vector& g) {
  if (g.size() != op.boundary_size()) {
    throw std::invalid_argument("apply_schur: boundary vector size mismatch");
  }
  if (!op.S_hbs.has_value()) return op.S_dense * g;
  return from_rep(op, apply(*op.S_hbs, to_rep(op, g)));
}

Matrix densify_dtn(const SolutionOperator& op) {
  if (!op.G_hbs.has_value()) return op.G_dense;
  const Index m = op.boundary_size();
  const Matrix g_rep = apply_inverse(*op.G_hbs, Matrix::Identity(m, m));
  Matrix out(m, m);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) {
      out(op.rep_to_canonical[i], op.rep_to_canonical[j]) = g_rep(i, j);
    }
  }
  return out;
}

std::vector<Index> root_boundary(const BoxTree& tree) {
  return tree.root().boundary;
}

}  // namespace dtn
