#include "dtn/grid.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

namespace dtn {

ProblemSpec ProblemSpec::continuum(std::string name, int n,
                                   std::function<double(double, double)> b,
                                   std::function<double(double, double)> c,
                                   std::function<double(double, double)> d) {
  ProblemSpec s;
  s.name = std::move(name);
  s.n = n;
  s.h = 1.0 / (n - 1);
  s.mode = ProblemMode::continuum;
  s.b = std::move(b);
  s.c = std::move(c);
  s.d = std::move(d);
  return s;
}

ProblemSpec ProblemSpec::network(std::string name, int n, double lo, double hi,
                                 std::uint64_t seed) {
  ProblemSpec s;
  s.name = std::move(name);
  s.n = n;
  s.h = 1.0 / (n - 1);
  s.mode = ProblemMode::network;
  s.conductivity_lo = lo;
  s.conductivity_hi = hi;
  s.seed = seed;
  return s;
}

Index Lattice::ring_id(int x, int y) const {
  const int m = n - 1;
  if (y == 0) return x;                       // south, west to east
  if (x == m) return m + y;                   // east, south to north
  if (y == m) return 2 * m + (m - x);         // north, east to west
  if (x == 0) return 3 * m + (m - y);         // west, north to south
  throw std::logic_error("ring_id: node is not on the outer ring");
}

double DiscreteOperator::coeff(Index row, Index col) const {
  for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(A, row);
       it; ++it) {
    if (it.col() == col) return it.value();
  }
  return 0.0;
}

StencilRow DiscreteOperator::row(Index id) const {
  StencilRow r;
  r.center = id;
  for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(A, id);
       it; ++it) {
    r.entries.emplace_back(it.col(), it.value());
  }
  for (Eigen::SparseMatrix<double, Eigen::RowMajor>::InnerIterator it(dirichlet,
                                                                      id);
       it; ++it) {
    r.dirichlet_entries.emplace_back(it.col(), it.value());
  }
  return r;
}

namespace {

// Uniform double in [0,1) from the top 53 bits of the generator output;
// avoids std::uniform_real_distribution so streams are identical across
// standard library implementations.
double uniform01(std::mt19937_64& rng) {
  return double(rng() >> 11) * 0x1.0p-53;
}

double checked_eval(const std::function<double(double, double)>& f, double px,
                    double py, const char* which) {
  const double v = f ? f(px, py) : 0.0;
  if (!std::isfinite(v)) {
    throw std::domain_error(std::string("discretize: coefficient ") + which +
                            " is not finite at (" + std::to_string(px) + ", " +
                            std::to_string(py) + ")");
  }
  return v;
}

}  // namespace

std::vector<double> link_conductivities(const ProblemSpec& spec) {
  const int n = spec.n;
  std::vector<double> sigma;
  sigma.reserve(std::size_t(2) * n * (n - 1));
  std::mt19937_64 rng(spec.seed);
  const double lo = spec.conductivity_lo, hi = spec.conductivity_hi;
  for (std::size_t i = 0; i < std::size_t(2) * n * (n - 1); ++i) {
    sigma.push_back(lo + (hi - lo) * uniform01(rng));
  }
  return sigma;
}

DiscreteOperator discretize(const ProblemSpec& spec) {
  if (spec.n < 4) throw std::invalid_argument("discretize: n must be >= 4");
  const int n = spec.n;
  const double h = spec.h;
  const Lattice lat{n};

  DiscreteOperator op;
  op.n = n;
  op.h = h;
  op.mode = spec.mode;

  std::vector<Eigen::Triplet<double>> ta, td;
  ta.reserve(std::size_t(5) * lat.num_unknowns());

  // Horizontal link (x,y)-(x+1,y) sits at index y*(n-1)+x; vertical link
  // (x,y)-(x,y+1) at n*(n-1) + y*n + x.
  std::vector<double> sigma;
  if (spec.mode == ProblemMode::network) sigma = link_conductivities(spec);
  auto sig_h = [&](int x, int y) { return sigma[std::size_t(y) * (n - 1) + x]; };
  auto sig_v = [&](int x, int y) {
    return sigma[std::size_t(n) * (n - 1) + std::size_t(y) * n + x];
  };

  for (int y = 1; y <= n - 2; ++y) {
    for (int x = 1; x <= n - 2; ++x) {
      const Index row = lat.unknown_id(x, y);
      double center;
      // neighbor order: east, west, north, south
      const std::array<GridPoint, 4> nb{GridPoint{x + 1, y}, GridPoint{x - 1, y},
                                        GridPoint{x, y + 1}, GridPoint{x, y - 1}};
      std::array<double, 4> coef{};
      if (spec.mode == ProblemMode::continuum) {
        const double px = x * h, py = y * h;
        const double bv = checked_eval(spec.b, px, py, "b");
        const double cv = checked_eval(spec.c, px, py, "c");
        const double dv = checked_eval(spec.d, px, py, "d");
        const double ih2 = 1.0 / (h * h), ih = 1.0 / h;
        center = 4.0 * ih2 + dv;
        coef = {-ih2 + bv * ih, -ih2 - bv * ih, -ih2 + cv * ih, -ih2 - cv * ih};
      } else {
        const double se = sig_h(x, y), sw = sig_h(x - 1, y);
        const double sn = sig_v(x, y), ss = sig_v(x, y - 1);
        center = se + sw + sn + ss;
        coef = {-se, -sw, -sn, -ss};
      }
      ta.emplace_back(row, row, center);
      for (int i = 0; i < 4; ++i) {
        const auto [qx, qy] = nb[i];
        if (lat.is_unknown(qx, qy)) {
          ta.emplace_back(row, lat.unknown_id(qx, qy), coef[i]);
        } else {
          td.emplace_back(row, lat.ring_id(qx, qy), coef[i]);
        }
      }
    }
  }

  op.A.resize(lat.num_unknowns(), lat.num_unknowns());
  op.A.setFromTriplets(ta.begin(), ta.end());
  op.dirichlet.resize(lat.num_unknowns(), lat.ring_size());
  op.dirichlet.setFromTriplets(td.begin(), td.end());
  return op;
}

std::vector<GridPoint> rect_perimeter_ccw(int x0, int x1, int y0, int y1) {
  std::vector<GridPoint> p;
  if (x0 > x1 || y0 > y1) return p;
  if (x0 == x1 && y0 == y1) {
    p.push_back({x0, y0});
    return p;
  }
  if (x0 == x1) {
    for (int y = y0; y <= y1; ++y) p.push_back({x0, y});
    return p;
  }
  if (y0 == y1) {
    for (int x = x0; x <= x1; ++x) p.push_back({x, y0});
    return p;
  }
  for (int x = x0; x <= x1; ++x) p.push_back({x, y0});          // south
  for (int y = y0 + 1; y <= y1; ++y) p.push_back({x1, y});      // east
  for (int x = x1 - 1; x >= x0; --x) p.push_back({x, y1});      // north
  for (int y = y1 - 1; y >= y0 + 1; --y) p.push_back({x0, y});  // west
  return p;
}

namespace {

void fill_index_sets(GridBox& box, const Lattice& lat) {
  box.x0 = std::max(box.gx0, 1);
  box.y0 = std::max(box.gy0, 1);
  box.x1 = std::min(box.gx1, lat.n - 1) - 1;
  box.y1 = std::min(box.gy1, lat.n - 1) - 1;
  if (box.x0 > box.x1 || box.y0 > box.y1) return;

  for (const auto& gp : rect_perimeter_ccw(box.x0, box.x1, box.y0, box.y1)) {
    box.boundary.push_back(lat.unknown_id(gp.x, gp.y));
  }
  for (int y = box.y0 + 1; y <= box.y1 - 1; ++y) {
    for (int x = box.x0 + 1; x <= box.x1 - 1; ++x) {
      box.interior.push_back(lat.unknown_id(x, y));
    }
  }
}

}  // namespace

BoxTree build_tree(int n, int n_leaf) {
  if (n < 4) throw std::invalid_argument("build_tree: n must be >= 4");
  if (n_leaf < 16) throw std::invalid_argument("build_tree: n_leaf must be >= 16");

  int depth = 0;
  while (double(n) * n > double(n_leaf) * std::pow(4.0, depth)) ++depth;

  BoxTree tree;
  tree.n = n;
  tree.n_leaf = n_leaf;
  tree.depth = depth;
  tree.levels.resize(depth + 1);
  const Lattice lat{n};

  GridBox root;
  root.id = 0;
  root.level = 0;
  root.gx0 = 0;
  root.gx1 = n;
  root.gy0 = 0;
  root.gy1 = n;
  fill_index_sets(root, lat);
  tree.boxes.push_back(std::move(root));
  tree.levels[0].push_back(0);

  for (int lev = 0; lev < depth; ++lev) {
    for (int id : tree.levels[lev]) {
      const int gx0 = tree.boxes[id].gx0, gx1 = tree.boxes[id].gx1;
      const int gy0 = tree.boxes[id].gy0, gy1 = tree.boxes[id].gy1;
      const int xm = gx0 + (gx1 - gx0 + 1) / 2;
      const int ym = gy0 + (gy1 - gy0 + 1) / 2;
      // SW, SE, NW, NE
      const std::array<std::array<int, 4>, 4> regions{{{gx0, xm, gy0, ym},
                                                       {xm, gx1, gy0, ym},
                                                       {gx0, xm, ym, gy1},
                                                       {xm, gx1, ym, gy1}}};
      for (int c = 0; c < 4; ++c) {
        GridBox child;
        child.id = int(tree.boxes.size());
        child.level = lev + 1;
        child.parent = id;
        child.gx0 = regions[c][0];
        child.gx1 = regions[c][1];
        child.gy0 = regions[c][2];
        child.gy1 = regions[c][3];
        fill_index_sets(child, lat);
        tree.boxes[id].children[c] = child.id;
        tree.levels[lev + 1].push_back(child.id);
        tree.boxes.push_back(std::move(child));
      }
    }
  }
  return tree;
}

ProblemConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_config: cannot open " + path);
  ProblemConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    // trim
    auto is_space = [](unsigned char ch) { return std::isspace(ch); };
    line.erase(line.begin(),
               std::find_if_not(line.begin(), line.end(), is_space));
    line.erase(std::find_if_not(line.rbegin(), line.rend(), is_space).base(),
               line.end());
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error("read_config: expected key=value at line " +
                               std::to_string(lineno));
    }
    std::string key = line.substr(0, eq), value = line.substr(eq + 1);
    key.erase(std::find_if_not(key.rbegin(), key.rend(), is_space).base(),
              key.end());
    value.erase(value.begin(),
                std::find_if_not(value.begin(), value.end(), is_space));
    if (key == "problem") {
      cfg.problem = value;
    } else if (key == "n") {
      cfg.n = std::stoi(value);
    } else if (key == "nleaf" || key == "n_leaf") {
      cfg.n_leaf = std::stoi(value);
    } else if (key == "tolerance" || key == "epsilon") {
      cfg.tolerance = std::stod(value);
    } else if (key == "seed") {
      cfg.seed = std::stoull(value);
    } else {
      throw std::runtime_error("read_config: unknown key '" + key + "'");
    }
  }
  return cfg;
}

}  // namespace dtn
