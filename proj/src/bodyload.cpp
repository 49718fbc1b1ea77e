#include "dtn/bodyload.hpp"

#include <fstream>
#include <sstream>
#include <unordered_set>

namespace dtn {

BodyLoadSet make_load_set(const Lattice& lat,
                          const std::vector<GridPoint>& points) {
  BodyLoadSet set;
  std::unordered_set<Index> seen;
  for (const auto& p : points) {
    // strictly interior: an unknown that is not on the root boundary ring
    if (!lat.is_unknown(p.x, p.y) || p.x == 1 || p.y == 1 ||
        p.x == lat.n - 2 || p.y == lat.n - 2) {
      throw std::invalid_argument(
          "load node (" + std::to_string(p.x) + ", " + std::to_string(p.y) +
          ") is not strictly interior to the root box");
    }
    const Index id = lat.unknown_id(p.x, p.y);
    if (!seen.insert(id).second) {
      throw std::invalid_argument("duplicate load node (" +
                                  std::to_string(p.x) + ", " +
                                  std::to_string(p.y) + ")");
    }
    set.ids.push_back(id);
  }
  return set;
}

BodyLoadSet read_load_set(const std::string& path, const Lattice& lat) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_load_set: cannot open " + path);
  std::vector<GridPoint> pts;
  std::string line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ss(line);
    int i = 0, j = 0;
    if (ss >> i >> j) pts.push_back({i, j});
  }
  return make_load_set(lat, pts);
}

SolutionOperator build_with_loads(const DiscreteOperator& op,
                                  const BoxTree& tree,
                                  const BodyLoadSet& loads, Engine engine,
                                  const AccelOptions& opt) {
  LoadPanel panel;
  panel.load_ids = loads.ids;
  if (engine == Engine::dense) {
    return build_root_dense_op(op, tree, panel);
  }
  return build_root_accel(op, tree, opt, panel);
}

LowRank build_body_operator(const DiscreteOperator& op, const BoxTree& tree,
                            const BodyLoadSet& loads, Engine engine,
                            const AccelOptions& opt) {
  if (loads.ids.empty()) return LowRank::zero(0, 0);
  const SolutionOperator built = build_with_loads(op, tree, loads, engine, opt);
  return *built.body_map;
}

Vector solve_with_load(const SolutionOperator& op, const Vector& g,
                       const Vector& fhat) {
  Vector v = apply_dtn(op, g);
  if (fhat.size() == 0) return v;
  if (!op.body_map || op.body_map->cols() != fhat.size()) {
    throw std::invalid_argument(
        "solve_with_load: load vector does not match the built body map");
  }
  return v + op.body_map->apply(fhat);
}

}  // namespace dtn
