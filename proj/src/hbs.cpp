#include "dtn/hbs.hpp"

#include <Eigen/SVD>

#include <algorithm>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace dtn {

Eigen::Index HbsMatrix::max_rank() const {
  Eigen::Index k = 0;
  for (int t = 1; t < tree.num_nodes(); ++t) k = std::max(k, rank(t));
  return k;
}

std::uint64_t HbsMatrix::payload_bytes() const {
  std::uint64_t doubles = 0;
  auto count = [&](const Matrix& m) { doubles += std::uint64_t(m.size()); };
  for (const auto& m : D) count(m);
  for (const auto& m : U) count(m);
  for (const auto& m : V) count(m);
  for (const auto& m : B) count(m);
  return doubles * sizeof(double);
}

// --------------------------------------------------------------------------
// Compression from dense.

namespace {

Eigen::Index svd_rank(const Vector& sigma, double eps) {
  if (sigma.size() == 0 || sigma(0) <= 0.0) return 0;
  const double cut = eps * sigma(0);
  Eigen::Index k = 0;
  while (k < sigma.size() && sigma(k) > cut) ++k;
  return k;
}

// Shared per-node rank: the smallest k such that both the block row and the
// block column are spanned to tolerance eps. Bases are the leading left
// singular vectors of each side.
void node_bases(const Matrix& row_block, const Matrix& col_block, double eps,
                Matrix& U, Matrix& V) {
  if (row_block.cols() == 0 || row_block.rows() == 0) {
    U = Matrix(row_block.rows(), 0);
    V = Matrix(col_block.cols(), 0);
    return;
  }
  Eigen::BDCSVD<Matrix> su(row_block, Eigen::ComputeThinU);
  Eigen::BDCSVD<Matrix> sv(col_block.transpose(), Eigen::ComputeThinU);
  const Eigen::Index k = std::max(svd_rank(su.singularValues(), eps),
                                  svd_rank(sv.singularValues(), eps));
  U = su.matrixU().leftCols(k);
  V = sv.matrixU().leftCols(k);
}

}  // namespace

HbsMatrix compress(const Matrix& H, const IndexTree& tree, double eps) {
  if (H.rows() != H.cols() || H.rows() != tree.size()) {
    throw std::invalid_argument("compress: matrix/tree size mismatch");
  }
  const Eigen::Index M = H.rows();
  HbsMatrix out;
  out.tree = tree;
  out.D.resize(tree.num_nodes());
  out.U.resize(tree.num_nodes());
  out.V.resize(tree.num_nodes());
  out.B.resize(tree.num_nodes());

  if (tree.num_nodes() == 1) {  // stored densely
    out.D[0] = H;
    return out;
  }

  // Frontier of already-compressed nodes covering [0, M), and the reduced
  // matrix R with blocks R(f,g) = Ubig_f^T H(I_f, I_g) Vbig_g for f != g.
  std::vector<int> members;
  std::vector<Eigen::Index> offsets, ranks;
  Eigen::Index total = 0;
  Matrix R;

  // Leaf pass: bases from the full off-diagonal block rows/columns.
  for (int t = 0; t < tree.num_nodes(); ++t) {
    if (!tree.is_leaf(t)) continue;
    const auto& nd = tree.nodes[t];
    const Eigen::Index b = nd.begin, sz = nd.end - nd.begin;
    Matrix row_block(sz, M - sz), col_block(M - sz, sz);
    row_block.leftCols(b) = H.block(b, 0, sz, b);
    row_block.rightCols(M - nd.end) = H.block(b, nd.end, sz, M - nd.end);
    col_block.topRows(b) = H.block(0, b, b, sz);
    col_block.bottomRows(M - nd.end) = H.block(nd.end, b, M - nd.end, sz);
    out.D[t] = H.block(b, b, sz, sz);
    node_bases(row_block, col_block, eps, out.U[t], out.V[t]);
    members.push_back(t);
  }
  std::sort(members.begin(), members.end(), [&](int a, int b) {
    return tree.nodes[a].begin < tree.nodes[b].begin;
  });
  for (int t : members) {
    offsets.push_back(total);
    ranks.push_back(out.U[t].cols());
    total += out.U[t].cols();
  }
  R.resize(total, total);
  for (std::size_t i = 0; i < members.size(); ++i) {
    const auto& ni = tree.nodes[members[i]];
    const Matrix row_red = out.U[members[i]].transpose() *
                           H.block(ni.begin, 0, ni.end - ni.begin, M);
    for (std::size_t j = 0; j < members.size(); ++j) {
      const auto& nj = tree.nodes[members[j]];
      R.block(offsets[i], offsets[j], ranks[i], ranks[j]) =
          row_red.middleCols(nj.begin, nj.end - nj.begin) * out.V[members[j]];
    }
  }

  // Merge frontier pairs bottom-up.
  for (int t : tree.bottom_up()) {
    if (tree.is_leaf(t)) continue;
    const int c1 = tree.nodes[t].left, c2 = tree.nodes[t].right;
    std::size_t p = 0;
    while (p < members.size() && members[p] != c1) ++p;
    if (p + 1 >= members.size() || members[p + 1] != c2) {
      throw std::logic_error("compress: children not adjacent in frontier");
    }
    const Eigen::Index o1 = offsets[p], k1 = ranks[p];
    const Eigen::Index o2 = offsets[p + 1], k2 = ranks[p + 1];
    const Eigen::Index rest = total - k1 - k2;

    out.B[t] = Matrix::Zero(k1 + k2, k1 + k2);
    out.B[t].block(0, k1, k1, k2) = R.block(o1, o2, k1, k2);
    out.B[t].block(k1, 0, k2, k1) = R.block(o2, o1, k2, k1);
    if (t == 0) break;

    Matrix row_block(k1 + k2, rest), col_block(rest, k1 + k2);
    row_block.block(0, 0, k1, o1) = R.block(o1, 0, k1, o1);
    row_block.block(0, o1, k1, rest - o1) = R.block(o1, o2 + k2, k1, rest - o1);
    row_block.block(k1, 0, k2, o1) = R.block(o2, 0, k2, o1);
    row_block.block(k1, o1, k2, rest - o1) = R.block(o2, o2 + k2, k2, rest - o1);
    col_block.block(0, 0, o1, k1) = R.block(0, o1, o1, k1);
    col_block.block(0, k1, o1, k2) = R.block(0, o2, o1, k2);
    col_block.block(o1, 0, rest - o1, k1) = R.block(o2 + k2, o1, rest - o1, k1);
    col_block.block(o1, k1, rest - o1, k2) = R.block(o2 + k2, o2, rest - o1, k2);
    node_bases(row_block, col_block, eps, out.U[t], out.V[t]);
    const Eigen::Index kt = out.U[t].cols();

    // Contract the two frontier slots into one.
    Matrix Rn(rest + kt, rest + kt);
    Rn.block(0, 0, o1, o1) = R.block(0, 0, o1, o1);
    Rn.block(0, o1 + kt, o1, rest - o1) = R.block(0, o2 + k2, o1, rest - o1);
    Rn.block(o1 + kt, 0, rest - o1, o1) = R.block(o2 + k2, 0, rest - o1, o1);
    Rn.block(o1 + kt, o1 + kt, rest - o1, rest - o1) =
        R.block(o2 + k2, o2 + k2, rest - o1, rest - o1);
    const Matrix row_strip = out.U[t].transpose() * row_block;  // kt x rest
    const Matrix col_strip = col_block * out.V[t];              // rest x kt
    Rn.block(o1, 0, kt, o1) = row_strip.leftCols(o1);
    Rn.block(o1, o1 + kt, kt, rest - o1) = row_strip.rightCols(rest - o1);
    Rn.block(0, o1, o1, kt) = col_strip.topRows(o1);
    Rn.block(o1 + kt, o1, rest - o1, kt) = col_strip.bottomRows(rest - o1);
    Rn.block(o1, o1, kt, kt).setZero();

    R = std::move(Rn);
    members[p] = t;
    members.erase(members.begin() + long(p) + 1);
    ranks[p] = kt;
    ranks.erase(ranks.begin() + long(p) + 1);
    offsets.resize(members.size());
    total = rest + kt;
    Eigen::Index at = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      offsets[i] = at;
      at += ranks[i];
    }
  }
  return out;
}

HbsMatrix compress(const Matrix& H, double eps, Eigen::Index leaf_cap) {
  return compress(H, build_index_tree(H.rows(), leaf_cap), eps);
}

// --------------------------------------------------------------------------
// Apply / reconstruct.

Matrix apply(const HbsMatrix& H, const Matrix& x) {
  if (x.rows() != H.size()) {
    throw std::invalid_argument("apply: dimension mismatch");
  }
  const auto& tree = H.tree;
  if (tree.num_nodes() == 1) return H.D[0] * x;

  std::vector<Matrix> xhat(tree.num_nodes()), yhat(tree.num_nodes());

  for (int t : tree.bottom_up()) {
    if (t == 0) continue;
    if (tree.is_leaf(t)) {
      xhat[t] = H.V[t].transpose() *
                x.middleRows(tree.nodes[t].begin, tree.node_size(t));
    } else {
      const int c1 = tree.nodes[t].left, c2 = tree.nodes[t].right;
      Matrix stacked(xhat[c1].rows() + xhat[c2].rows(), x.cols());
      stacked.topRows(xhat[c1].rows()) = xhat[c1];
      stacked.bottomRows(xhat[c2].rows()) = xhat[c2];
      xhat[t] = H.V[t].transpose() * stacked;
    }
  }

  Matrix y = Matrix::Zero(x.rows(), x.cols());
  for (int t : tree.top_down()) {
    if (tree.is_leaf(t)) {
      const auto& nd = tree.nodes[t];
      y.middleRows(nd.begin, tree.node_size(t)) =
          H.D[t] * x.middleRows(nd.begin, tree.node_size(t));
      if (t != 0 && yhat[t].size() > 0) {
        y.middleRows(nd.begin, tree.node_size(t)) += H.U[t] * yhat[t];
      }
      continue;
    }
    const int c1 = tree.nodes[t].left, c2 = tree.nodes[t].right;
    const Eigen::Index k1 = H.rank(c1), k2 = H.rank(c2);
    Matrix stacked(k1 + k2, x.cols());
    stacked.topRows(k1) = xhat[c1];
    stacked.bottomRows(k2) = xhat[c2];
    Matrix given = H.B[t] * stacked;
    if (t != 0 && yhat[t].size() > 0) given += H.U[t] * yhat[t];
    yhat[c1] = given.topRows(k1);
    yhat[c2] = given.bottomRows(k2);
  }
  return y;
}

Matrix apply_col_basis(const HbsMatrix& H, int t, const Matrix& X) {
  if (H.tree.is_leaf(t)) return H.U[t] * X;
  const int c1 = H.tree.nodes[t].left, c2 = H.tree.nodes[t].right;
  const Matrix y = H.U[t] * X;
  Matrix out(H.tree.node_size(t), X.cols());
  out.topRows(H.tree.node_size(c1)) =
      apply_col_basis(H, c1, y.topRows(H.rank(c1)));
  out.bottomRows(H.tree.node_size(c2)) =
      apply_col_basis(H, c2, y.bottomRows(H.rank(c2)));
  return out;
}

Matrix apply_row_basis(const HbsMatrix& H, int t, const Matrix& X) {
  if (H.tree.is_leaf(t)) return H.V[t] * X;
  const int c1 = H.tree.nodes[t].left, c2 = H.tree.nodes[t].right;
  const Matrix y = H.V[t] * X;
  Matrix out(H.tree.node_size(t), X.cols());
  out.topRows(H.tree.node_size(c1)) =
      apply_row_basis(H, c1, y.topRows(H.rank(c1)));
  out.bottomRows(H.tree.node_size(c2)) =
      apply_row_basis(H, c2, y.bottomRows(H.rank(c2)));
  return out;
}

Matrix reconstruct(const HbsMatrix& H) {
  const auto& tree = H.tree;
  Matrix out = Matrix::Zero(H.size(), H.size());
  for (int t = 0; t < tree.num_nodes(); ++t) {
    if (tree.is_leaf(t)) {
      out.block(tree.nodes[t].begin, tree.nodes[t].begin, tree.node_size(t),
                tree.node_size(t)) += H.D[t];
      continue;
    }
    const int c[2] = {tree.nodes[t].left, tree.nodes[t].right};
    const Eigen::Index k[2] = {H.rank(c[0]), H.rank(c[1])};
    for (int i = 0; i < 2; ++i) {
      for (int j = 0; j < 2; ++j) {
        const Matrix Bij = H.B[t].block(i == 0 ? 0 : k[0], j == 0 ? 0 : k[0],
                                        k[i], k[j]);
        if (Bij.size() == 0 || Bij.isZero(0.0)) continue;
        const Matrix left = apply_col_basis(H, c[i], Bij);
        const Matrix right =
            apply_row_basis(H, c[j], Matrix::Identity(k[j], k[j]));
        out.block(tree.nodes[c[i]].begin, tree.nodes[c[j]].begin,
                  tree.node_size(c[i]), tree.node_size(c[j])) +=
            left * right.transpose();
      }
    }
  }
  return out;
}

// --------------------------------------------------------------------------
// Structural transforms.

namespace {

void copy_subtree(const HbsMatrix& src, int t, HbsMatrix& dst, int parent,
                  int level, Eigen::Index offset) {
  const auto& n = src.tree.nodes[t];
  const int id = int(dst.tree.nodes.size());
  dst.tree.nodes.push_back(
      {n.begin - offset, n.end - offset, -1, -1, parent, level});
  dst.tree.depth = std::max(dst.tree.depth, level);
  dst.D.push_back(src.D[t]);
  dst.U.push_back(id == 0 ? Matrix() : src.U[t]);
  dst.V.push_back(id == 0 ? Matrix() : src.V[t]);
  dst.B.push_back(src.B[t]);
  if (n.left >= 0) {
    copy_subtree(src, n.left, dst, id, level + 1, offset);
    const int l = id + 1;
    const int r = int(dst.tree.nodes.size());
    copy_subtree(src, n.right, dst, id, level + 1, offset);
    dst.tree.nodes[id].left = l;
    dst.tree.nodes[id].right = r;
  }
}

}  // namespace

HbsMatrix subtree_matrix(const HbsMatrix& H, int t) {
  HbsMatrix out;
  copy_subtree(H, t, out, -1, 0, H.tree.nodes[t].begin);
  return out;
}

namespace {

void flip_subtree(const HbsMatrix& src, int t, HbsMatrix& dst, int parent,
                  int level, Eigen::Index M) {
  const auto& n = src.tree.nodes[t];
  const int id = int(dst.tree.nodes.size());
  dst.tree.nodes.push_back({M - n.end, M - n.begin, -1, -1, parent, level});
  dst.tree.depth = std::max(dst.tree.depth, level);

  if (n.left < 0) {
    dst.D.push_back(src.D[t].reverse());
    dst.U.push_back(id == 0 ? Matrix() : Matrix(src.U[t].colwise().reverse()));
    dst.V.push_back(id == 0 ? Matrix() : Matrix(src.V[t].colwise().reverse()));
    dst.B.push_back(Matrix());
    return;
  }

  // Children swap; their rank coordinates are unchanged, so parent factors
  // are block-row-swapped and B is block-mirrored across the swap.
  const Eigen::Index k1 = src.rank(n.left), k2 = src.rank(n.right);
  dst.D.push_back(Matrix());
  if (id == 0) {
    dst.U.push_back(Matrix());
    dst.V.push_back(Matrix());
  } else {
    Matrix u(src.U[t].rows(), src.U[t].cols());
    u.topRows(k2) = src.U[t].bottomRows(k2);
    u.bottomRows(k1) = src.U[t].topRows(k1);
    Matrix v(src.V[t].rows(), src.V[t].cols());
    v.topRows(k2) = src.V[t].bottomRows(k2);
    v.bottomRows(k1) = src.V[t].topRows(k1);
    dst.U.push_back(std::move(u));
    dst.V.push_back(std::move(v));
  }
  Matrix b(k1 + k2, k1 + k2);
  b.block(0, 0, k2, k2) = src.B[t].block(k1, k1, k2, k2);
  b.block(0, k2, k2, k1) = src.B[t].block(k1, 0, k2, k1);
  b.block(k2, 0, k1, k2) = src.B[t].block(0, k1, k1, k2);
  b.block(k2, k2, k1, k1) = src.B[t].block(0, 0, k1, k1);
  dst.B.push_back(std::move(b));

  flip_subtree(src, n.right, dst, id, level + 1, M);
  const int l = id + 1;
  const int r = int(dst.tree.nodes.size());
  flip_subtree(src, n.left, dst, id, level + 1, M);
  dst.tree.nodes[id].left = l;
  dst.tree.nodes[id].right = r;
}

}  // namespace

HbsMatrix flip(const HbsMatrix& H) {
  HbsMatrix out;
  flip_subtree(H, 0, out, -1, 0, H.size());
  return out;
}

void scale_rows(HbsMatrix& H, const Vector& w) {
  if (w.size() != H.size()) throw std::invalid_argument("scale_rows: size");
  for (int t = 0; t < H.tree.num_nodes(); ++t) {
    if (!H.tree.is_leaf(t)) continue;
    const auto& nd = H.tree.nodes[t];
    const auto diag = w.segment(nd.begin, H.tree.node_size(t)).asDiagonal();
    H.D[t] = diag * H.D[t];
    if (t != 0) H.U[t] = diag * H.U[t];
  }
}

void scale_cols(HbsMatrix& H, const Vector& w) {
  if (w.size() != H.size()) throw std::invalid_argument("scale_cols: size");
  for (int t = 0; t < H.tree.num_nodes(); ++t) {
    if (!H.tree.is_leaf(t)) continue;
    const auto& nd = H.tree.nodes[t];
    const auto diag = w.segment(nd.begin, H.tree.node_size(t)).asDiagonal();
    H.D[t] = H.D[t] * diag;
    if (t != 0) H.V[t] = diag * H.V[t];
  }
}

void scale(HbsMatrix& H, double s) {
  for (auto& m : H.D) m *= s;
  for (auto& m : H.B) m *= s;
}

double basis_orthonormality_defect(const HbsMatrix& H) {
  double defect = 0.0;
  for (int t = 1; t < H.tree.num_nodes(); ++t) {
    for (const auto* basis : {&H.U[t], &H.V[t]}) {
      if (basis->cols() == 0) continue;
      const Matrix g = basis->transpose() * (*basis) -
                       Matrix::Identity(basis->cols(), basis->cols());
      defect = std::max(defect, g.cwiseAbs().maxCoeff());
    }
  }
  return defect;
}

// --------------------------------------------------------------------------
// Serialization. Layout documented in docs/formats.md.

namespace {

constexpr char kMagic[8] = {'D', 'T', 'N', 'H', 'B', 'S', '0', '1'};

void put_i64(std::vector<std::uint8_t>& out, std::int64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
}

void put_matrix(std::vector<std::uint8_t>& out, const Matrix& m) {
  put_i64(out, m.rows());
  put_i64(out, m.cols());
  const auto bytes = std::size_t(m.size()) * sizeof(double);
  const std::size_t at = out.size();
  out.resize(at + bytes);
  if (bytes > 0) std::memcpy(out.data() + at, m.data(), bytes);
}

struct Reader {
  const std::uint8_t* p;
  const std::uint8_t* end;

  std::int64_t i64() {
    if (end - p < 8) throw std::runtime_error("deserialize: truncated input");
    std::int64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::int64_t(p[i]) << (8 * i);
    p += 8;
    return v;
  }
  Matrix matrix() {
    const auto r = i64(), c = i64();
    Matrix m(r, c);
    const auto bytes = std::size_t(r) * std::size_t(c) * sizeof(double);
    if (std::size_t(end - p) < bytes) {
      throw std::runtime_error("deserialize: truncated input");
    }
    if (bytes > 0) std::memcpy(m.data(), p, bytes);
    p += bytes;
    return m;
  }
};

}  // namespace

std::vector<std::uint8_t> serialize(const HbsMatrix& H) {
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put_i64(out, H.size());
  put_i64(out, H.tree.num_nodes());
  put_i64(out, H.tree.depth);
  for (const auto& n : H.tree.nodes) {
    put_i64(out, n.begin);
    put_i64(out, n.end);
    put_i64(out, n.left);
    put_i64(out, n.right);
    put_i64(out, n.parent);
    put_i64(out, n.level);
  }
  for (int t = 0; t < H.tree.num_nodes(); ++t) {
    if (H.tree.is_leaf(t)) put_matrix(out, H.D[t]);
    if (t != 0) {
      put_matrix(out, H.U[t]);
      put_matrix(out, H.V[t]);
    }
    if (!H.tree.is_leaf(t)) put_matrix(out, H.B[t]);
  }
  return out;
}

HbsMatrix deserialize(const std::uint8_t* data, std::size_t size) {
  if (size < 8 || std::memcmp(data, kMagic, 8) != 0) {
    throw std::runtime_error("deserialize: bad magic");
  }
  Reader r{data + 8, data + size};
  HbsMatrix H;
  const auto M = r.i64();
  const auto num_nodes = r.i64();
  H.tree.depth = int(r.i64());
  H.tree.nodes.resize(std::size_t(num_nodes));
  for (auto& n : H.tree.nodes) {
    n.begin = r.i64();
    n.end = r.i64();
    n.left = int(r.i64());
    n.right = int(r.i64());
    n.parent = int(r.i64());
    n.level = int(r.i64());
  }
  if (H.tree.size() != M) throw std::runtime_error("deserialize: bad header");
  H.D.resize(std::size_t(num_nodes));
  H.U.resize(std::size_t(num_nodes));
  H.V.resize(std::size_t(num_nodes));
  H.B.resize(std::size_t(num_nodes));
  for (int t = 0; t < int(num_nodes); ++t) {
    if (H.tree.is_leaf(t)) H.D[t] = r.matrix();
    if (t != 0) {
      H.U[t] = r.matrix();
      H.V[t] = r.matrix();
    }
    if (!H.tree.is_leaf(t)) H.B[t] = r.matrix();
  }
  return H;
}

void write_hbs(const HbsMatrix& H, const std::string& path) {
  const auto bytes = serialize(H);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("write_hbs: cannot open " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            std::streamsize(bytes.size()));
}

HbsMatrix read_hbs(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("read_hbs: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  return deserialize(bytes.data(), bytes.size());
}

}  // namespace dtn
