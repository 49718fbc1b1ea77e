#include "dtn/dense_nd.hpp"

#include "dtn/problems.hpp"
#include "dtn/reference.hpp"

#include <Eigen/LU>

#include <doctest.h>

#include <cstdio>

using namespace dtn;

namespace {

GridBox box_for_rect(const Lattice& lat, int x0, int x1, int y0, int y1) {
  GridBox box;
  box.x0 = x0;
  box.x1 = x1;
  box.y0 = y0;
  box.y1 = y1;
  for (const auto& p : rect_perimeter_ccw(x0, x1, y0, y1)) {
    box.boundary.push_back(lat.unknown_id(p.x, p.y));
  }
  for (int y = y0 + 1; y <= y1 - 1; ++y) {
    for (int x = x0 + 1; x <= x1 - 1; ++x) {
      box.interior.push_back(lat.unknown_id(x, y));
    }
  }
  return box;
}

// Independent oracle: Schur complement of the assembled sparse matrix by
// one dense elimination of the given interior set.
Matrix brute_schur(const DiscreteOperator& op, const std::vector<Index>& b,
                   const std::vector<Index>& i) {
  const Index nb = Index(b.size()), ni = Index(i.size());
  Matrix abb(nb, nb), abi(nb, ni), aib(ni, nb), aii(ni, ni);
  for (Index r = 0; r < nb; ++r) {
    for (Index c = 0; c < nb; ++c) abb(r, c) = op.coeff(b[r], b[c]);
    for (Index c = 0; c < ni; ++c) abi(r, c) = op.coeff(b[r], i[c]);
  }
  for (Index r = 0; r < ni; ++r) {
    for (Index c = 0; c < nb; ++c) aib(r, c) = op.coeff(i[r], b[c]);
    for (Index c = 0; c < ni; ++c) aii(r, c) = op.coeff(i[r], i[c]);
  }
  if (ni == 0) return abb;
  return abb - abi * aii.partialPivLu().solve(aib);
}

Matrix root_brute(const DiscreteOperator& op, const BoxTree& tree) {
  const auto& root = tree.root();
  return brute_schur(op, root.boundary, root.interior);
}

double rel_fro(const Matrix& a, const Matrix& b) {
  return (a - b).norm() / b.norm();
}

}  // namespace

TEST_CASE("a leaf with no interior returns A_bb unchanged") {
  const auto op = discretize(catalog("laplace", 8));
  const Lattice lat = op.lattice();
  const GridBox box = box_for_rect(lat, 2, 3, 2, 5);  // 2-wide: no interior
  REQUIRE(box.interior.empty());
  const SchurData s = leaf_schur(box, op);
  const Matrix expected = brute_schur(op, box.boundary, {});
  CHECK(rel_fro(s.S, expected) == doctest::Approx(0.0).epsilon(1e-14));
}

TEST_CASE("single interior node eliminates by hand: S = A_bb - a a^T / 4") {
  // uniform network = unit-spacing convention, center coefficient 4
  const auto op = discretize(ProblemSpec::network("uniform", 8, 1, 1, 0));
  const Lattice lat = op.lattice();
  const GridBox box = box_for_rect(lat, 2, 4, 2, 4);
  REQUIRE(box.interior.size() == 1);
  const Index center = box.interior[0];
  const Index nb = Index(box.boundary.size());
  Matrix abb(nb, nb);
  Vector a(nb);
  for (Index r = 0; r < nb; ++r) {
    a(r) = op.coeff(box.boundary[r], center);
    for (Index c = 0; c < nb; ++c) {
      abb(r, c) = op.coeff(box.boundary[r], box.boundary[c]);
    }
  }
  const Matrix expected = abb - a * a.transpose() / 4.0;
  CHECK(rel_fro(leaf_schur(box, op).S, expected) <= 1e-14);
}

TEST_CASE("leaf Schur complements match the brute-force oracle") {
  const auto op = discretize(catalog("diffconv3", 16));
  const BoxTree tree = build_tree(16, 64);
  for (int id : tree.levels[tree.depth]) {
    const auto& box = tree.boxes[id];
    const SchurData s = leaf_schur(box, op);
    CHECK(rel_fro(s.S, brute_schur(op, box.boundary, box.interior)) <= 1e-12);
  }
}

TEST_CASE("merging with an empty interface assembles without elimination") {
  const auto op = discretize(catalog("laplace", 8));
  const Lattice lat = op.lattice();
  const SchurData a = leaf_schur(box_for_rect(lat, 2, 2, 2, 5), op);
  const SchurData b = leaf_schur(box_for_rect(lat, 3, 3, 2, 5), op);
  const SchurData u = merge_two(a, b, op);
  const GridBox ub = box_for_rect(lat, 2, 3, 2, 5);
  CHECK(rel_fro(u.S, brute_schur(op, ub.boundary, {})) <= 1e-14);
}

TEST_CASE("merge of two leaves equals the union box built from scratch") {
  const auto op = discretize(catalog("laplace", 8));
  const Lattice lat = op.lattice();
  const SchurData west = leaf_schur(box_for_rect(lat, 1, 3, 1, 6), op);
  const SchurData east = leaf_schur(box_for_rect(lat, 4, 6, 1, 6), op);
  const SchurData u = merge_two(west, east, op);
  const SchurData direct = leaf_schur(box_for_rect(lat, 1, 6, 1, 6), op);
  REQUIRE(u.boundary == direct.boundary);
  CHECK(rel_fro(u.S, direct.S) <= 1e-12);
}

TEST_CASE("hierarchical root S equals the global brute-force Schur complement") {
  for (int n : {8, 16, 24, 32}) {
    for (const char* name : {"laplace", "diffconv1", "random1"}) {
      const auto op = discretize(catalog(name, n, 3));
      const BoxTree tree = build_tree(n, 16);
      const DenseRoot root = build_root_dense(op, tree);
      CHECK(rel_fro(root.root.S, root_brute(op, tree)) <= 1e-10);
    }
  }
}

TEST_CASE("pairing order of the four children does not matter") {
  const auto op = discretize(catalog("helmholtz1", 16));
  const BoxTree tree = build_tree(16, 64);
  std::vector<SchurData> kids;
  for (int id : tree.root().children) {
    kids.push_back(leaf_schur(tree.boxes[id], op));
  }
  // west|east pairing vs south|north pairing
  const SchurData we = merge_two(merge_two(kids[0], kids[2], op),
                                 merge_two(kids[1], kids[3], op), op);
  const SchurData sn = merge_two(merge_two(kids[0], kids[1], op),
                                 merge_two(kids[2], kids[3], op), op);
  REQUIRE(we.boundary == sn.boundary);
  CHECK(rel_fro(we.S, sn.S) <= 1e-10);
}

TEST_CASE("symmetric problems yield symmetric Schur complements") {
  const auto op = discretize(catalog("random2", 16, 9));
  const BoxTree tree = build_tree(16, 16);
  const DenseRoot root = build_root_dense(op, tree);
  CHECK((root.root.S - root.root.S.transpose()).cwiseAbs().maxCoeff() <=
        1e-10 * root.root.S.norm());
}

TEST_CASE("G S = I at the root") {
  const auto op = discretize(catalog("laplace", 16));
  const DenseRoot root = build_root_dense(op, build_tree(16, 16));
  const Matrix gs = root.G * root.root.S;
  CHECK((gs - Matrix::Identity(gs.rows(), gs.cols())).cwiseAbs().maxCoeff() <=
        1e-10);
}

TEST_CASE("G r matches the boundary restriction of a full sparse solve") {
  const auto op = discretize(catalog("laplace", 32));
  const BoxTree tree = build_tree(32, 64);
  const DenseRoot root = build_root_dense(op, tree);
  const Vector r = random_unit_boundary(root.root.size(), 17);
  const Vector ref = reference_dtn_apply(op, root.root.boundary, r);
  CHECK((root.G * r - ref).norm() / ref.norm() <= 1e-10);
}

TEST_CASE("a point load propagates to the correct root right-hand side") {
  const auto op = discretize(catalog("random1", 16, 5));
  const BoxTree tree = build_tree(16, 16);
  const Lattice lat{16};
  LoadPanel loads;
  loads.load_ids = {lat.unknown_id(7, 6)};
  const DenseRoot root = build_root_dense(op, tree, loads);
  REQUIRE(root.root.rhs.cols() == 1);
  // with zero Dirichlet data: u_b = G rhs; reference from the full solve
  const Vector u_b = root.G * root.root.rhs.col(0);
  Vector full_rhs = Vector::Zero(op.A.rows());
  full_rhs(loads.load_ids[0]) = 1.0;
  const Vector x = full_solve(op, full_rhs).x;
  Vector ref(root.root.size());
  for (Index i = 0; i < root.root.size(); ++i) {
    ref(i) = x(root.root.boundary[i]);
  }
  CHECK((u_b - ref).norm() / ref.norm() <= 1e-10);
}

TEST_CASE("the near-resonant build completes and reports a large condition") {
  const auto h3 = build_root_dense(discretize(catalog("helmholtz3", 32)),
                                   build_tree(32, 64));
  const auto lap = build_root_dense(discretize(catalog("laplace", 32)),
                                    build_tree(32, 64));
  CHECK(h3.cond_estimate > 100.0 * lap.cond_estimate);
}

TEST_CASE("binary Schur dumps round trip") {
  const auto op = discretize(catalog("laplace", 8));
  const Lattice lat = op.lattice();
  const SchurData s = leaf_schur(box_for_rect(lat, 1, 6, 1, 6), op);
  const std::string path = "schur_dump.tmp";
  dump_schur(s, path);
  const Matrix back = load_schur(path);
  CHECK((back - s.S).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}
