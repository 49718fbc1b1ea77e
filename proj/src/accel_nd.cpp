#include "dtn/accel_nd.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <chrono>
#include <cstdio>
#include <thread>
#include <unordered_map>
#include <unordered_set>

namespace dtn {

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// diag(w) * reverse_rows(X): the action of an anti-diagonal matrix with
// weights w on a column bundle.
Matrix antidiag_apply(const Vector& w, const Matrix& x) {
  return w.asDiagonal() * Matrix(x.colwise().reverse());
}

void warn(const AccelOptions& opt, const std::string& msg) {
  if (opt.warn) {
    opt.warn(msg);
  } else {
    std::fprintf(stderr, "dtn: %s\n", msg.c_str());
  }
}

}  // namespace

Index StructuredSchur::max_rank() const {
  Index k = std::max(s_jj.max_rank(), s_kk.max_rank());
  return std::max({k, s_jk.rank(), s_kj.rank()});
}

// --------------------------------------------------------------------------
// Boundary arcs in [J; K] order.

std::vector<Index> arc_boundary(const Lattice& lat, int x0, int x1, int y0,
                                int y1, JSide j_side, Index& j_size) {
  const auto perim = rect_perimeter_ccw(x0, x1, y0, y1);
  const int n = int(perim.size());
  std::vector<Index> ids;
  ids.reserve(perim.size());
  if (j_side == JSide::none) {
    j_size = 0;
    for (const auto& p : perim) ids.push_back(lat.unknown_id(p.x, p.y));
    return ids;
  }
  auto in_j = [&](const GridPoint& p) {
    switch (j_side) {
      case JSide::north: return p.y == y1 && p.x > x0 && p.x < x1;
      case JSide::south: return p.y == y0 && p.x > x0 && p.x < x1;
      case JSide::east: return p.x == x1 && p.y > y0 && p.y < y1;
      case JSide::west: return p.x == x0 && p.y > y0 && p.y < y1;
      default: return false;
    }
  };
  int start = -1;
  Index count = 0;
  for (int i = 0; i < n; ++i) {
    if (in_j(perim[i])) {
      ++count;
      if (!in_j(perim[(i + n - 1) % n])) start = i;
    }
  }
  if (count == 0 || start < 0) {
    throw std::logic_error("arc_boundary: box too small to carry a J edge");
  }
  j_size = count;
  for (int i = 0; i < n; ++i) {
    const auto& p = perim[(start + i) % n];
    ids.push_back(lat.unknown_id(p.x, p.y));
  }
  for (Index i = 0; i < j_size; ++i) {
    if (!in_j(perim[(start + i) % n])) {
      throw std::logic_error("arc_boundary: J edge is not contiguous");
    }
  }
  return ids;
}

// --------------------------------------------------------------------------
// Crossover birth and densification.

StructuredSchur compress_box(const SchurData& dense, JSide j_side,
                             const Lattice& lat, const AccelOptions& opt) {
  StructuredSchur out;
  out.box_id = dense.box_id;
  out.x0 = dense.x0;
  out.x1 = dense.x1;
  out.y0 = dense.y0;
  out.y1 = dense.y1;
  out.j_side = j_side;
  out.boundary =
      arc_boundary(lat, dense.x0, dense.x1, dense.y0, dense.y1, j_side,
                   out.j_size);

  std::unordered_map<Index, Index> pos;
  for (std::size_t i = 0; i < dense.boundary.size(); ++i) {
    pos[dense.boundary[i]] = Index(i);
  }
  const Index m = out.size();
  std::vector<Index> perm(m);
  for (Index i = 0; i < m; ++i) perm[i] = pos.at(out.boundary[i]);

  Matrix s(m, m);
  for (Index i = 0; i < m; ++i) {
    for (Index j = 0; j < m; ++j) s(i, j) = dense.S(perm[i], perm[j]);
  }
  const Index j = out.j_size, k = m - j;
  out.s_jj = compress(s.topLeftCorner(j, j),
                      build_index_tree(j, opt.hbs_leaf), opt.epsilon);
  out.s_kk = compress(s.bottomRightCorner(k, k),
                      build_index_tree(k, opt.hbs_leaf), opt.epsilon);
  out.s_jk = lowrank_from_dense(s.topRightCorner(j, k), opt.epsilon);
  out.s_kj = lowrank_from_dense(s.bottomLeftCorner(k, j), opt.epsilon);
  if (dense.rhs.cols() > 0) {
    out.rhs.resize(m, dense.rhs.cols());
    for (Index i = 0; i < m; ++i) out.rhs.row(i) = dense.rhs.row(perm[i]);
  }
  return out;
}

SchurData StructuredSchur::densify(const Lattice& lat) const {
  const Index m = size(), j = j_size, k = k_size();
  Matrix s(m, m);
  s.topLeftCorner(j, j) = reconstruct(s_jj);
  s.bottomRightCorner(k, k) = reconstruct(s_kk);
  s.topRightCorner(j, k) = s_jk.dense();
  s.bottomLeftCorner(k, j) = s_kj.dense();

  SchurData out;
  out.box_id = box_id;
  out.x0 = x0;
  out.x1 = x1;
  out.y0 = y0;
  out.y1 = y1;
  std::unordered_map<Index, Index> pos;
  for (Index i = 0; i < m; ++i) pos[boundary[i]] = i;
  std::vector<Index> perm(m);
  Index at = 0;
  for (const auto& p : rect_perimeter_ccw(x0, x1, y0, y1)) {
    const Index id = lat.unknown_id(p.x, p.y);
    out.boundary.push_back(id);
    perm[at++] = pos.at(id);
  }
  out.S.resize(m, m);
  for (Index i = 0; i < m; ++i) {
    for (Index jj = 0; jj < m; ++jj) out.S(i, jj) = s(perm[i], perm[jj]);
  }
  if (rhs.cols() > 0) {
    out.rhs.resize(m, rhs.cols());
    for (Index i = 0; i < m; ++i) out.rhs.row(i) = rhs.row(perm[i]);
  }
  return out;
}

// --------------------------------------------------------------------------
// Interface couplings.

void interface_coupling(const DiscreteOperator& op, const StructuredSchur& b3,
                        const StructuredSchur& b4, Vector& alpha,
                        Vector& beta) {
  if (b3.j_size != b4.j_size) {
    throw std::logic_error("interface_coupling: interface length mismatch");
  }
  const Index j = b3.j_size;
  const Lattice lat = op.lattice();
  std::unordered_map<Index, Index> j3_pos, j4_pos;
  for (Index t = 0; t < j; ++t) {
    j3_pos[b3.boundary[t]] = t;
    j4_pos[b4.boundary[t]] = t;
  }
  std::unordered_set<Index> b4_all(b4.boundary.begin(), b4.boundary.end());
  std::unordered_set<Index> b3_all(b3.boundary.begin(), b3.boundary.end());

  alpha.resize(j);
  beta.resize(j);
  for (Index s = 0; s < j; ++s) {
    const Index p4 = b4.boundary[s];
    const Index q3 = b3.boundary[j - 1 - s];
    // each interface node couples across to exactly one node, its mirror
    const GridPoint gp = lat.point_of(p4);
    const std::array<GridPoint, 4> nbs{GridPoint{gp.x + 1, gp.y},
                                       GridPoint{gp.x - 1, gp.y},
                                       GridPoint{gp.x, gp.y + 1},
                                       GridPoint{gp.x, gp.y - 1}};
    int hits = 0;
    for (const auto& q : nbs) {
      if (!lat.is_unknown(q.x, q.y)) continue;
      const Index qid = lat.unknown_id(q.x, q.y);
      if (b3_all.count(qid)) {
        ++hits;
        if (qid != q3 || !j3_pos.count(qid)) {
          throw std::logic_error(
              "interface_coupling: coupling is not anti-diagonal");
        }
      }
    }
    if (hits != 1) {
      throw std::logic_error(
          "interface_coupling: interface node degree is not one");
    }
    alpha(s) = op.coeff(p4, q3);
    beta(j - 1 - s) = op.coeff(q3, p4);
  }
}

// --------------------------------------------------------------------------
// Accelerated merge.

namespace {

// Maximal ascending runs of one child's kept boundary inside the output
// ordering, tagged with the output block (J' or K') they land in.
struct Run {
  Index k_begin = 0, k_end = 0;  // range in the child's K coordinates
  bool in_j = false;
  Index out_offset = 0;  // block-local offset in the output
};

struct ChildMap {
  std::vector<Run> runs;
  std::vector<Index> cuts;  // interior run boundaries, ascending
};

// Items of a child's kept block, fanned out so nothing straddles a cut.
struct ChildItems {
  std::vector<std::pair<Index, HbsMatrix>> pieces;  // child-K offsets
  std::vector<PlacedLowRank> corrections;           // child-K coordinates
};

ChildItems split_child(const HbsMatrix& s_kk, const std::vector<Index>& cuts) {
  ChildItems items;
  items.pieces.emplace_back(0, s_kk);
  for (const Index cut : cuts) {
    std::vector<std::pair<Index, HbsMatrix>> next;
    for (auto& [off, piece] : items.pieces) {
      if (off + piece.size() <= cut || off >= cut) {
        next.emplace_back(off, std::move(piece));
        continue;
      }
      SplitParts sp = split_at(piece, cut - off);
      for (std::size_t i = 0; i < sp.lo.pieces.size(); ++i) {
        next.emplace_back(off + sp.lo.piece_offsets[i],
                          std::move(sp.lo.pieces[i]));
      }
      for (std::size_t i = 0; i < sp.hi.pieces.size(); ++i) {
        next.emplace_back(cut + sp.hi.piece_offsets[i],
                          std::move(sp.hi.pieces[i]));
      }
      for (auto& c : sp.lo.corrections) {
        items.corrections.push_back(
            {off + c.row_offset, off + c.col_offset, std::move(c.lr)});
      }
      for (auto& c : sp.hi.corrections) {
        items.corrections.push_back(
            {cut + c.row_offset, cut + c.col_offset, std::move(c.lr)});
      }
      for (auto& c : sp.lo_hi) {
        items.corrections.push_back(
            {off + c.row_offset, cut + c.col_offset, std::move(c.lr)});
      }
      for (auto& c : sp.hi_lo) {
        items.corrections.push_back(
            {cut + c.row_offset, off + c.col_offset, std::move(c.lr)});
      }
    }
    items.pieces = std::move(next);
    // corrections may still straddle this cut: slice rows and columns
    std::vector<PlacedLowRank> sliced;
    for (auto& c : items.corrections) {
      const Index r0 = c.row_offset, r1 = r0 + c.lr.rows();
      const Index c0 = c.col_offset, c1 = c0 + c.lr.cols();
      std::vector<std::pair<Index, Index>> rparts, cparts;
      if (r0 < cut && r1 > cut) {
        rparts = {{r0, cut}, {cut, r1}};
      } else {
        rparts = {{r0, r1}};
      }
      if (c0 < cut && c1 > cut) {
        cparts = {{c0, cut}, {cut, c1}};
      } else {
        cparts = {{c0, c1}};
      }
      for (const auto& [rb, re] : rparts) {
        for (const auto& [cb, ce] : cparts) {
          sliced.push_back({rb, cb,
                            c.lr.block(rb - r0, re - rb, cb - c0, ce - cb)});
        }
      }
    }
    items.corrections = std::move(sliced);
  }
  return items;
}

// Output-position bookkeeping for one merge.
struct OutputMap {
  Index out_j = 0, out_n = 0;
  std::vector<Index> boundary;  // output ids, [J'; K']
  // child index (0 for b3, 1 for b4) and K position of every output slot
  std::vector<int> child_of;
  std::vector<Index> kpos_of;
  ChildMap maps[2];

  bool in_j(Index out_pos) const { return out_pos < out_j; }
  // block-local offset of an output position
  Index local(Index out_pos) const {
    return in_j(out_pos) ? out_pos : out_pos - out_j;
  }
};

OutputMap build_output_map(const Lattice& lat, const StructuredSchur& b3,
                           const StructuredSchur& b4, int ux0, int ux1,
                           int uy0, int uy1, JSide out_side) {
  OutputMap om;
  if (out_side == JSide::none) {
    // root: representation order is simply [K3; K4]
    om.out_j = 0;
    om.boundary.insert(om.boundary.end(), b3.boundary.begin() + b3.j_size,
                       b3.boundary.end());
    om.boundary.insert(om.boundary.end(), b4.boundary.begin() + b4.j_size,
                       b4.boundary.end());
  } else {
    om.boundary =
        arc_boundary(lat, ux0, ux1, uy0, uy1, out_side, om.out_j);
  }
  om.out_n = Index(om.boundary.size());

  std::unordered_map<Index, std::pair<int, Index>> where;
  const StructuredSchur* children[2] = {&b3, &b4};
  for (int c = 0; c < 2; ++c) {
    const auto& b = *children[c];
    for (Index i = b.j_size; i < b.size(); ++i) {
      where[b.boundary[i]] = {c, i - b.j_size};
    }
  }
  om.child_of.resize(om.out_n);
  om.kpos_of.resize(om.out_n);
  std::vector<char> seen[2];
  seen[0].assign(std::size_t(b3.k_size()), 0);
  seen[1].assign(std::size_t(b4.k_size()), 0);
  for (Index p = 0; p < om.out_n; ++p) {
    const auto it = where.find(om.boundary[p]);
    if (it == where.end()) {
      throw std::logic_error("accel_merge: output node not on a child");
    }
    om.child_of[p] = it->second.first;
    om.kpos_of[p] = it->second.second;
    seen[it->second.first][std::size_t(it->second.second)] = 1;
  }
  for (int c = 0; c < 2; ++c) {
    if (std::count(seen[c].begin(), seen[c].end(), 0) != 0) {
      throw std::logic_error("accel_merge: kept boundary not fully consumed");
    }
  }

  // maximal ascending runs per child
  for (Index p = 0; p < om.out_n; ++p) {
    const int c = om.child_of[p];
    auto& runs = om.maps[c].runs;
    const bool in_j = om.in_j(p);
    if (!runs.empty() && runs.back().in_j == in_j &&
        runs.back().k_end == om.kpos_of[p] &&
        om.local(p) == runs.back().out_offset +
                           (runs.back().k_end - runs.back().k_begin) &&
        p > 0 && om.child_of[p - 1] == c) {
      runs.back().k_end += 1;
      continue;
    }
    runs.push_back({om.kpos_of[p], om.kpos_of[p] + 1, in_j, om.local(p)});
  }
  for (int c = 0; c < 2; ++c) {
    auto runs = om.maps[c].runs;
    std::sort(runs.begin(), runs.end(),
              [](const Run& a, const Run& b) { return a.k_begin < b.k_begin; });
    for (std::size_t i = 0; i + 1 < runs.size(); ++i) {
      if (runs[i].k_end != runs[i + 1].k_begin) {
        throw std::logic_error("accel_merge: child runs are not contiguous");
      }
      om.maps[c].cuts.push_back(runs[i].k_end);
    }
    const Index kn = (c == 0) ? b3.k_size() : b4.k_size();
    if (runs.empty() || runs.front().k_begin != 0 || runs.back().k_end != kn) {
      throw std::logic_error("accel_merge: child runs do not tile");
    }
  }
  return om;
}

// Locates the run containing [begin, begin+len) of child c; items produced
// by split_child never straddle run boundaries.
const Run& run_of(const OutputMap& om, int c, Index begin, Index len) {
  for (const auto& r : om.maps[c].runs) {
    if (begin >= r.k_begin && begin + len <= r.k_end) return r;
  }
  throw std::logic_error("accel_merge: item straddles a run boundary");
}

struct BlockBuckets {
  HbsAccumulation jj, kk;
  std::vector<PlacedLowRank> jk, kj;
};

void place_item(BlockBuckets& out, const OutputMap& om, int row_child,
                Index row_begin, int col_child, Index col_begin,
                PlacedLowRank&& term) {
  const Run& rr = run_of(om, row_child, row_begin, term.lr.rows());
  const Run& cr = run_of(om, col_child, col_begin, term.lr.cols());
  term.row_offset = rr.out_offset + (row_begin - rr.k_begin);
  term.col_offset = cr.out_offset + (col_begin - cr.k_begin);
  if (rr.in_j && cr.in_j) {
    out.jj.corrections.push_back(std::move(term));
  } else if (!rr.in_j && !cr.in_j) {
    out.kk.corrections.push_back(std::move(term));
  } else if (rr.in_j) {
    out.jk.push_back(std::move(term));
  } else {
    out.kj.push_back(std::move(term));
  }
}

}  // namespace

StructuredSchur accel_merge(const StructuredSchur& b3,
                            const StructuredSchur& b4,
                            const DiscreteOperator& op, JSide out_side,
                            const AccelOptions& opt, int level, int box) {
  const Lattice lat = op.lattice();
  const double eps = opt.epsilon;
  const std::string where =
      "level " + std::to_string(level) + " box " + std::to_string(box);

  // Step 1: block solve of the interface system. The interface couplings
  // are anti-diagonal, so A43 S33^{-1} A34 is a flipped, scaled copy of
  // the compressed inverse and stays in HBS form.
  Vector alpha, beta;
  interface_coupling(op, b3, b4, alpha, beta);

  InverseFactors inv33;
  try {
    inv33 = invert_hbs(b3.s_jj);
  } catch (const FactorizationError& e) {
    throw FactorizationError(std::string("step 1, S33 inversion: ") + e.what(),
                             where);
  }
  // (A43 S33^{-1} A34)[s,t] = alpha[s] S33inv[rev s, rev t] beta[rev t]
  HbsMatrix w = flip(inv33.rep);
  scale_rows(w, alpha);
  scale_cols(w, Vector(beta.reverse()));
  scale(w, -1.0);
  const HbsMatrix w2 = rebase(w, b4.s_jj.tree, eps);
  InverseFactors inv_mid;
  try {
    inv_mid = invert_hbs(add_hbs(b4.s_jj, w2, eps));
  } catch (const FactorizationError& e) {
    throw FactorizationError(
        std::string("step 1, (S44 - A43 S33^{-1} A34) inversion: ") + e.what(),
        where);
  }

  // Solutions of the interface system against the low-rank Z blocks,
  // kept as factor bundles (columns resolve through R3/R4 below).
  const Matrix y3 = apply_inverse(inv33, b3.s_jk.L);
  const Matrix x4a = -apply_inverse(inv_mid, antidiag_apply(alpha, y3));
  const Matrix x4b = apply_inverse(inv_mid, b4.s_jk.L);
  const Matrix x3a = y3 - apply_inverse(inv33, antidiag_apply(beta, x4a));
  const Matrix x3b = -apply_inverse(inv33, antidiag_apply(beta, x4b));

  // Step 2: low-rank products S_kj * X. Each term couples one child's kept
  // rows to one child's kept columns.
  struct TTerm {
    int row_child, col_child;
    LowRank lr;
  };
  const std::array<TTerm, 4> t_terms{
      TTerm{0, 0, {b3.s_kj.L * (b3.s_kj.R * x3a), b3.s_jk.R}},
      TTerm{0, 1, {b3.s_kj.L * (b3.s_kj.R * x3b), b4.s_jk.R}},
      TTerm{1, 0, {b4.s_kj.L * (b4.s_kj.R * x4a), b3.s_jk.R}},
      TTerm{1, 1, {b4.s_kj.L * (b4.s_kj.R * x4b), b4.s_jk.R}}};

  // Output layout and the kept-block decompositions.
  const int ux0 = std::min(b3.x0, b4.x0), ux1 = std::max(b3.x1, b4.x1);
  const int uy0 = std::min(b3.y0, b4.y0), uy1 = std::max(b3.y1, b4.y1);
  OutputMap om = build_output_map(lat, b3, b4, ux0, ux1, uy0, uy1, out_side);

  BlockBuckets buckets;
  buckets.jj.size = om.out_j;
  buckets.kk.size = om.out_n - om.out_j;

  // Step 3a: the kept diagonal blocks of the children, split along the
  // output runs.
  const StructuredSchur* children[2] = {&b3, &b4};
  for (int c = 0; c < 2; ++c) {
    ChildItems items = split_child(children[c]->s_kk, om.maps[c].cuts);
    for (auto& [off, piece] : items.pieces) {
      const Run& r = run_of(om, c, off, piece.size());
      auto& acc = r.in_j ? buckets.jj : buckets.kk;
      acc.piece_offsets.push_back(r.out_offset + (off - r.k_begin));
      acc.pieces.push_back(std::move(piece));
    }
    for (auto& corr : items.corrections) {
      if (corr.lr.rank() == 0) continue;
      place_item(buckets, om, c, corr.row_offset, c, corr.col_offset,
                 std::move(corr));
    }
  }

  // Step 3b: original couplings between the kept boundaries (a handful of
  // entries at the interface junctions).
  {
    std::unordered_map<Index, Index> out_pos;
    for (Index p = 0; p < om.out_n; ++p) out_pos[om.boundary[p]] = p;
    std::unordered_set<Index> k3(b3.boundary.begin() + b3.j_size,
                                 b3.boundary.end());
    for (Index i = b4.j_size; i < b4.size(); ++i) {
      const Index q = b4.boundary[i];
      const GridPoint gp = lat.point_of(q);
      const std::array<GridPoint, 4> nbs{GridPoint{gp.x + 1, gp.y},
                                         GridPoint{gp.x - 1, gp.y},
                                         GridPoint{gp.x, gp.y + 1},
                                         GridPoint{gp.x, gp.y - 1}};
      for (const auto& nb : nbs) {
        if (!lat.is_unknown(nb.x, nb.y)) continue;
        const Index p = lat.unknown_id(nb.x, nb.y);
        if (!k3.count(p)) continue;
        for (const auto& [rid, cid] : {std::pair{p, q}, std::pair{q, p}}) {
          const double v = op.coeff(rid, cid);
          if (v == 0.0) continue;
          const Index rp = out_pos.at(rid), cp = out_pos.at(cid);
          Matrix l(1, 1), r(1, 1);
          l(0, 0) = v;
          r(0, 0) = 1.0;
          PlacedLowRank term{0, 0, LowRank{l, r}};
          place_item(buckets, om, om.child_of[rp], om.kpos_of[rp],
                     om.child_of[cp], om.kpos_of[cp], std::move(term));
        }
      }
    }
  }

  // Step 3c: subtract the step-2 products from every output block.
  for (const auto& t : t_terms) {
    if (t.lr.rank() == 0) continue;
    const auto& row_runs = om.maps[t.row_child].runs;
    const auto& col_runs = om.maps[t.col_child].runs;
    for (const auto& rr : row_runs) {
      for (const auto& cr : col_runs) {
        LowRank part{t.lr.L.middleRows(rr.k_begin, rr.k_end - rr.k_begin),
                     -t.lr.R.middleCols(cr.k_begin, cr.k_end - cr.k_begin)};
        place_item(buckets, om, t.row_child, rr.k_begin, t.col_child,
                   cr.k_begin, {0, 0, std::move(part)});
      }
    }
  }

  // Assemble the output representation.
  StructuredSchur out;
  out.x0 = ux0;
  out.x1 = ux1;
  out.y0 = uy0;
  out.y1 = uy1;
  out.j_side = out_side;
  out.boundary = std::move(om.boundary);
  out.j_size = om.out_j;

  auto sort_acc = [](HbsAccumulation& acc) {
    std::vector<std::size_t> order(acc.pieces.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return acc.piece_offsets[a] < acc.piece_offsets[b];
    });
    std::vector<Eigen::Index> offs;
    std::vector<HbsMatrix> ps;
    for (auto i : order) {
      offs.push_back(acc.piece_offsets[i]);
      ps.push_back(std::move(acc.pieces[i]));
    }
    acc.piece_offsets = std::move(offs);
    acc.pieces = std::move(ps);
  };
  sort_acc(buckets.jj);
  sort_acc(buckets.kk);

  if (om.out_j > 0) out.s_jj = consolidate(buckets.jj, eps);
  out.s_kk = consolidate(buckets.kk, eps);
  out.s_jk = lowrank_sum(om.out_j, om.out_n - om.out_j, buckets.jk, eps);
  out.s_kj = lowrank_sum(om.out_n - om.out_j, om.out_j, buckets.kj, eps);

  // Right-hand-side panels ride through the same interface solve.
  if (b3.rhs.cols() > 0 || b4.rhs.cols() > 0) {
    const Index ncols = std::max(b3.rhs.cols(), b4.rhs.cols());
    auto panel = [&](const StructuredSchur& b) {
      return b.rhs.cols() > 0 ? b.rhs
                              : Matrix::Zero(b.size(), ncols).eval();
    };
    const Matrix p3 = panel(b3), p4 = panel(b4);
    const Matrix f3 = p3.topRows(b3.j_size), f4 = p4.topRows(b4.j_size);
    const Matrix y3f = apply_inverse(inv33, f3);
    const Matrix w4 =
        apply_inverse(inv_mid, f4 - antidiag_apply(alpha, y3f));
    const Matrix w3 = y3f - apply_inverse(inv33, antidiag_apply(beta, w4));
    const Matrix gk3 =
        p3.bottomRows(b3.k_size()) - b3.s_kj.L * (b3.s_kj.R * w3);
    const Matrix gk4 =
        p4.bottomRows(b4.k_size()) - b4.s_kj.L * (b4.s_kj.R * w4);
    out.rhs.resize(om.out_n, ncols);
    for (Index p = 0; p < om.out_n; ++p) {
      out.rhs.row(p) = (om.child_of[p] == 0) ? gk3.row(om.kpos_of[p])
                                             : gk4.row(om.kpos_of[p]);
    }
  }

  if (out.max_rank() > opt.rank_warn_cap) {
    warn(opt, "rank " + std::to_string(out.max_rank()) + " exceeds cap " +
                  std::to_string(opt.rank_warn_cap) + " at " + where);
  }
  return out;
}

// --------------------------------------------------------------------------
// Full build.

namespace {

void parallel_for(int count, int threads, const std::function<void(int)>& fn) {
  if (threads <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::atomic<int> next{0};
  std::vector<std::exception_ptr> errors;
  errors.resize(std::size_t(threads));
  for (int t = 0; t < threads; ++t) {
    pool.emplace_back([&, t] {
      try {
        for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) {
          fn(i);
        }
      } catch (...) {
        errors[std::size_t(t)] = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

JSide child_j_side(int child_index) {
  // SW and SE merge upward against their north siblings; NW and NE
  // downward. Children order: SW, SE, NW, NE.
  return (child_index == 0 || child_index == 1) ? JSide::north : JSide::south;
}

BoxOperand merge_pair(BoxOperand&& a, BoxOperand&& b,
                      const DiscreteOperator& op, JSide out_side,
                      const AccelOptions& opt, int level, int box) {
  const Lattice lat = op.lattice();
  if (a.structured && b.structured) {
    BoxOperand out;
    out.structured = true;
    out.comp = accel_merge(a.comp, b.comp, op, out_side, opt, level, box);
    return out;
  }
  // mixed pairs fall back to dense arithmetic
  const SchurData da = a.structured ? a.comp.densify(lat) : std::move(a.dense);
  const SchurData db = b.structured ? b.comp.densify(lat) : std::move(b.dense);
  SchurData merged = merge_two(da, db, op, level, box);
  BoxOperand out;
  if (out_side != JSide::none && merged.size() >= opt.crossover) {
    out.structured = true;
    out.comp = compress_box(merged, out_side, lat, opt);
  } else {
    out.dense = std::move(merged);
  }
  return out;
}

std::uint64_t operand_bytes(const BoxOperand& o) {
  if (!o.structured) {
    return std::uint64_t(o.dense.S.size()) * sizeof(double);
  }
  return o.comp.s_jj.payload_bytes() + o.comp.s_kk.payload_bytes() +
         std::uint64_t(o.comp.s_jk.L.size() + o.comp.s_jk.R.size() +
                       o.comp.s_kj.L.size() + o.comp.s_kj.R.size()) *
             sizeof(double);
}

Index operand_rank(const BoxOperand& o) {
  return o.structured ? o.comp.max_rank() : 0;
}

}  // namespace

SolutionOperator build_root_accel(const DiscreteOperator& op,
                                  const BoxTree& tree, const AccelOptions& opt,
                                  const LoadPanel& loads) {
  const Lattice lat = op.lattice();
  SolutionOperator out;
  out.engine = Engine::accel;
  out.n = tree.n;
  out.boundary = tree.root().boundary;

  std::unordered_map<int, BoxOperand> current;

  // leaves
  {
    const auto t0 = Clock::now();
    const auto& ids = tree.levels[tree.depth];
    std::vector<BoxOperand> slots(ids.size());
    parallel_for(int(ids.size()), opt.threads, [&](int i) {
      const auto& box = tree.boxes[ids[std::size_t(i)]];
      SchurData s = leaf_schur(box, op, loads);
      BoxOperand o;
      const JSide side = (tree.depth == 0)
                             ? JSide::none
                             : child_j_side(int(std::find(
                                                tree.boxes[box.parent]
                                                    .children.begin(),
                                                tree.boxes[box.parent]
                                                    .children.end(),
                                                box.id) -
                                            tree.boxes[box.parent]
                                                .children.begin()));
      if (side != JSide::none && s.size() >= opt.crossover) {
        o.structured = true;
        o.comp = compress_box(s, side, lat, opt);
      } else {
        o.dense = std::move(s);
      }
      slots[std::size_t(i)] = std::move(o);
    });
    LevelStats ls;
    ls.level = tree.depth;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      ls.max_rank = std::max(ls.max_rank, operand_rank(slots[i]));
      ls.bytes += operand_bytes(slots[i]);
      current[ids[i]] = std::move(slots[i]);
    }
    ls.seconds = seconds_since(t0);
    out.level_stats.push_back(ls);
  }

  for (int lev = tree.depth - 1; lev >= 0; --lev) {
    const auto t0 = Clock::now();
    const auto& ids = tree.levels[lev];
    std::vector<BoxOperand> slots(ids.size());
    parallel_for(int(ids.size()), opt.threads, [&](int i) {
      const int id = ids[std::size_t(i)];
      const auto& box = tree.boxes[id];
      const JSide my_side =
          (lev == 0) ? JSide::none
                     : child_j_side(int(std::find(
                                        tree.boxes[box.parent].children.begin(),
                                        tree.boxes[box.parent].children.end(),
                                        id) -
                                    tree.boxes[box.parent].children.begin()));
      // west pair, east pair, then west|east
      BoxOperand west =
          merge_pair(std::move(current.at(box.children[0])),
                     std::move(current.at(box.children[2])), op, JSide::east,
                     opt, lev, id);
      BoxOperand east =
          merge_pair(std::move(current.at(box.children[1])),
                     std::move(current.at(box.children[3])), op, JSide::west,
                     opt, lev, id);
      slots[std::size_t(i)] = merge_pair(std::move(west), std::move(east), op,
                                         my_side, opt, lev, id);
    });
    std::unordered_map<int, BoxOperand> next;
    LevelStats ls;
    ls.level = lev;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      ls.max_rank = std::max(ls.max_rank, operand_rank(slots[i]));
      ls.bytes += operand_bytes(slots[i]);
      next[ids[i]] = std::move(slots[i]);
    }
    ls.seconds = seconds_since(t0);
    out.level_stats.push_back(ls);
    current = std::move(next);
  }

  BoxOperand root = std::move(current.at(0));
  if (!root.structured) {
    // below the crossover the whole build is dense
    DenseRoot dense;
    dense.root = std::move(root.dense);
    Eigen::PartialPivLU<Matrix> lu(dense.root.S);
    out.S_dense = dense.root.S;
    out.G_dense = lu.inverse();
    out.engine = Engine::accel;
    out.cond_estimate =
        out.S_dense.cwiseAbs().colwise().sum().maxCoeff() *
        out.G_dense.cwiseAbs().colwise().sum().maxCoeff();
    // canonical order already
    out.rep_to_canonical.resize(out.boundary.size());
    for (Index i = 0; i < Index(out.boundary.size()); ++i) {
      out.rep_to_canonical[i] = i;
    }
    if (loads.load_ids.size() > 0) {
      const Matrix f = out.G_dense * dense.root.rhs;
      const LowRank lr = lowrank_from_dense(f, opt.epsilon);
      out.body_map = lr;
    }
    return out;
  }

  const auto t0 = Clock::now();
  out.S_hbs = std::move(root.comp.s_kk);
  out.G_hbs = invert_hbs(*out.S_hbs);

  // map representation order to the canonical ring
  std::unordered_map<Index, Index> canon;
  for (std::size_t i = 0; i < out.boundary.size(); ++i) {
    canon[out.boundary[i]] = Index(i);
  }
  out.rep_to_canonical.resize(root.comp.boundary.size());
  for (std::size_t i = 0; i < root.comp.boundary.size(); ++i) {
    out.rep_to_canonical[i] = canon.at(root.comp.boundary[i]);
  }

  // rough one-norm condition estimate from a few inverse applies
  {
    const Index m = Index(out.boundary.size());
    Vector probe = Vector::Ones(m);
    const Vector sx = apply(*out.S_hbs, probe);
    const Vector gx = apply_inverse(*out.G_hbs, probe);
    out.cond_estimate = (sx.lpNorm<1>() / m) * (gx.lpNorm<1>() / m) * m;
  }

  if (loads.load_ids.size() > 0) {
    const Matrix f_rep = apply_inverse(*out.G_hbs, root.comp.rhs);
    Matrix f(f_rep.rows(), f_rep.cols());
    for (Index i = 0; i < f_rep.rows(); ++i) {
      f.row(out.rep_to_canonical[i]) = f_rep.row(i);
    }
    out.body_map = lowrank_from_dense(f, opt.epsilon);
  }

  LevelStats ls;
  ls.level = -1;  // root inversion
  ls.max_rank = out.S_hbs->max_rank();
  ls.bytes = out.S_hbs->payload_bytes() + out.G_hbs->rep.payload_bytes();
  ls.seconds = seconds_since(t0);
  out.level_stats.push_back(ls);
  return out;
}

SolutionOperator build_root_dense_op(const DiscreteOperator& op,
                                     const BoxTree& tree,
                                     const LoadPanel& loads) {
  DenseRoot root = build_root_dense(op, tree, loads);
  SolutionOperator out;
  out.engine = Engine::dense;
  out.n = tree.n;
  out.boundary = root.root.boundary;
  out.S_dense = std::move(root.root.S);
  out.G_dense = std::move(root.G);
  out.cond_estimate = root.cond_estimate;
  if (!loads.load_ids.empty()) {
    const Matrix f = out.G_dense * root.root.rhs;
    out.body_map = lowrank_from_dense(f, 1e-14);
  }
  return out;
}

}  // namespace dtn
