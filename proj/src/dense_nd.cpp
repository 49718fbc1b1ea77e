#include "dtn/dense_nd.hpp"

#include <Eigen/LU>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <unordered_map>

namespace dtn {

namespace {

std::string box_label(int level, int box) {
  return "level " + std::to_string(level) + " box " + std::to_string(box);
}

// Unit-load columns restricted to `ids`: entry (i,j) = 1 iff ids[i] is the
// j-th load node.
Matrix load_columns(const std::vector<Index>& ids, const LoadPanel& loads) {
  Matrix f = Matrix::Zero(Index(ids.size()), Index(loads.load_ids.size()));
  std::unordered_map<Index, Index> col;
  for (std::size_t j = 0; j < loads.load_ids.size(); ++j) {
    col[loads.load_ids[j]] = Index(j);
  }
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto it = col.find(ids[i]);
    if (it != col.end()) f(Index(i), it->second) = 1.0;
  }
  return f;
}

}  // namespace

SchurData leaf_schur(const GridBox& box, const DiscreteOperator& op,
                     const LoadPanel& loads) {
  SchurData out;
  out.box_id = box.id;
  out.x0 = box.x0;
  out.x1 = box.x1;
  out.y0 = box.y0;
  out.y1 = box.y1;
  out.boundary = box.boundary;

  const Index nb = Index(box.boundary.size());
  const Index ni = Index(box.interior.size());

  // A restricted to the box, blocked [boundary; interior].
  Matrix a_bb(nb, nb);
  for (Index i = 0; i < nb; ++i) {
    for (Index j = 0; j < nb; ++j) {
      a_bb(i, j) = op.coeff(box.boundary[i], box.boundary[j]);
    }
  }
  if (ni == 0) {
    out.S = std::move(a_bb);
    if (!loads.empty()) out.rhs = load_columns(box.boundary, loads);
    return out;
  }

  std::unordered_map<Index, Index> ipos;
  for (Index i = 0; i < ni; ++i) ipos[box.interior[i]] = i;

  std::vector<Eigen::Triplet<double>> tii;
  Matrix a_bi = Matrix::Zero(nb, ni), a_ib = Matrix::Zero(ni, nb);
  std::unordered_map<Index, Index> bpos;
  for (Index i = 0; i < nb; ++i) bpos[box.boundary[i]] = i;
  for (Index i = 0; i < ni; ++i) {
    const Index row = box.interior[i];
    for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(op.A,
                                                                        row);
         it; ++it) {
      const auto ii = ipos.find(it.col());
      if (ii != ipos.end()) {
        tii.emplace_back(i, ii->second, it.value());
        continue;
      }
      const auto bb = bpos.find(it.col());
      if (bb != bpos.end()) {
        a_ib(i, bb->second) = it.value();
        a_bi(bb->second, i) = op.coeff(it.col(), row);
      }
      // couplings leaving the box belong to later merges
    }
  }
  SparseMatrix a_ii(ni, ni);
  a_ii.setFromTriplets(tii.begin(), tii.end());

  Eigen::SparseLU<SparseMatrix> lu;
  lu.compute(a_ii);
  if (lu.info() != Eigen::Success) {
    throw FactorizationError("interior block A_ii is singular",
                             "leaf box " + std::to_string(box.id));
  }
  out.S = a_bb - a_bi * lu.solve(a_ib);
  if (!loads.empty()) {
    const Matrix f_i = load_columns(box.interior, loads);
    out.rhs = load_columns(box.boundary, loads) - a_bi * lu.solve(f_i);
  }
  return out;
}

SchurData merge_two(const SchurData& a, const SchurData& b,
                    const DiscreteOperator& op, int level, int box) {
  const Lattice lat = op.lattice();
  SchurData out;
  out.x0 = std::min(a.x0, b.x0);
  out.x1 = std::max(a.x1, b.x1);
  out.y0 = std::min(a.y0, b.y0);
  out.y1 = std::max(a.y1, b.y1);

  // Union boundary in canonical order, interior = remaining child nodes.
  std::unordered_map<Index, Index> pos;  // union index of every node
  std::vector<Index> nodes;
  for (const auto& gp : rect_perimeter_ccw(out.x0, out.x1, out.y0, out.y1)) {
    const Index id = lat.unknown_id(gp.x, gp.y);
    pos[id] = Index(nodes.size());
    nodes.push_back(id);
    out.boundary.push_back(id);
  }
  const Index nb = Index(out.boundary.size());
  for (const auto* child : {&a, &b}) {
    for (Index id : child->boundary) {
      if (!pos.count(id)) {
        pos[id] = Index(nodes.size());
        nodes.push_back(id);
      }
    }
  }
  const Index total = Index(nodes.size());
  const Index ni = total - nb;

  Matrix m = Matrix::Zero(total, total);
  const Index ncols = std::max(a.rhs.cols(), b.rhs.cols());
  Matrix rhs = Matrix::Zero(total, ncols);
  for (const auto* child : {&a, &b}) {
    const Index cn = child->size();
    for (Index i = 0; i < cn; ++i) {
      const Index pi = pos.at(child->boundary[i]);
      for (Index j = 0; j < cn; ++j) {
        m(pi, pos.at(child->boundary[j])) += child->S(i, j);
      }
      if (child->rhs.cols() > 0) rhs.row(pi) += child->rhs.row(i);
    }
  }
  // Original couplings across the child interface (adjacent node pairs
  // belonging to different children).
  std::unordered_map<Index, char> in_a;
  for (Index id : a.boundary) in_a[id] = 1;
  for (Index id : b.boundary) {
    const GridPoint gp = lat.point_of(id);
    const std::array<GridPoint, 4> nbs{GridPoint{gp.x + 1, gp.y},
                                       GridPoint{gp.x - 1, gp.y},
                                       GridPoint{gp.x, gp.y + 1},
                                       GridPoint{gp.x, gp.y - 1}};
    for (const auto& q : nbs) {
      if (!lat.is_unknown(q.x, q.y)) continue;
      const Index qid = lat.unknown_id(q.x, q.y);
      if (!in_a.count(qid)) continue;
      m(pos.at(id), pos.at(qid)) += op.coeff(id, qid);
      m(pos.at(qid), pos.at(id)) += op.coeff(qid, id);
    }
  }

  if (ni == 0) {
    out.S = m.topLeftCorner(nb, nb);
    if (ncols > 0) out.rhs = rhs.topRows(nb);
    return out;
  }
  const auto m_bi = m.topRightCorner(nb, ni);
  const auto m_ib = m.bottomLeftCorner(ni, nb);
  Eigen::PartialPivLU<Matrix> lu(m.bottomRightCorner(ni, ni));
  const double pivot_min = lu.matrixLU().diagonal().cwiseAbs().minCoeff();
  const double pivot_max = lu.matrixLU().diagonal().cwiseAbs().maxCoeff();
  if (!(pivot_min > pivot_max * 1e-300) || !std::isfinite(pivot_max)) {
    throw FactorizationError("interface block is singular",
                             box_label(level, box));
  }
  out.S = m.topLeftCorner(nb, nb) - m_bi * lu.solve(Matrix(m_ib));
  if (ncols > 0) {
    out.rhs = rhs.topRows(nb) - m_bi * lu.solve(Matrix(rhs.bottomRows(ni)));
  }
  return out;
}

SchurData merge_four(const SchurData& sw, const SchurData& se,
                     const SchurData& nw, const SchurData& ne,
                     const DiscreteOperator& op, int level, int box) {
  const SchurData west = merge_two(sw, nw, op, level, box);
  const SchurData east = merge_two(se, ne, op, level, box);
  return merge_two(west, east, op, level, box);
}

DenseRoot build_root_dense(const DiscreteOperator& op, const BoxTree& tree,
                           const LoadPanel& loads) {
  std::vector<SchurData> current;
  for (int id : tree.levels[tree.depth]) {
    current.push_back(leaf_schur(tree.boxes[id], op, loads));
  }
  for (int lev = tree.depth - 1; lev >= 0; --lev) {
    std::unordered_map<int, const SchurData*> by_box;
    for (const auto& s : current) by_box[s.box_id] = &s;
    std::vector<SchurData> next;
    for (int id : tree.levels[lev]) {
      const auto& box = tree.boxes[id];
      SchurData merged =
          merge_four(*by_box.at(box.children[0]), *by_box.at(box.children[1]),
                     *by_box.at(box.children[2]), *by_box.at(box.children[3]),
                     op, lev, id);
      merged.box_id = id;
      next.push_back(std::move(merged));
    }
    current = std::move(next);  // children are discarded here
  }

  DenseRoot out;
  out.root = std::move(current.front());
  Eigen::PartialPivLU<Matrix> lu(out.root.S);
  out.G = lu.inverse();
  out.cond_estimate = out.root.S.cwiseAbs().colwise().sum().maxCoeff() *
                      out.G.cwiseAbs().colwise().sum().maxCoeff();
  return out;
}

void dump_schur(const SchurData& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("dump_schur: cannot open " + path);
  const std::int64_t rows = s.S.rows(), cols = s.S.cols();
  out.write(reinterpret_cast<const char*>(&rows), 8);
  out.write(reinterpret_cast<const char*>(&cols), 8);
  const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>
      rm = s.S;
  out.write(reinterpret_cast<const char*>(rm.data()),
            std::streamsize(sizeof(double) * rm.size()));
}

Matrix load_schur(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("load_schur: cannot open " + path);
  std::int64_t rows = 0, cols = 0;
  in.read(reinterpret_cast<char*>(&rows), 8);
  in.read(reinterpret_cast<char*>(&cols), 8);
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(
      rows, cols);
  in.read(reinterpret_cast<char*>(rm.data()),
          std::streamsize(sizeof(double) * rm.size()));
  if (!in) throw std::runtime_error("load_schur: truncated file " + path);
  return Matrix(rm);
}

}  // namespace dtn
