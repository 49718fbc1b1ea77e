#include "dtn/index_tree.hpp"

#include <algorithm>
#include <stdexcept>

namespace dtn {

std::vector<int> IndexTree::bottom_up() const {
  std::vector<int> order = top_down();
  std::reverse(order.begin(), order.end());
  return order;
}

std::vector<int> IndexTree::top_down() const {
  // preorder construction means parents always precede children
  std::vector<int> order(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) order[i] = int(i);
  return order;
}

bool operator==(const IndexTree& a, const IndexTree& b) {
  if (a.nodes.size() != b.nodes.size()) return false;
  for (std::size_t i = 0; i < a.nodes.size(); ++i) {
    const auto& x = a.nodes[i];
    const auto& y = b.nodes[i];
    if (x.begin != y.begin || x.end != y.end || x.left != y.left ||
        x.right != y.right) {
      return false;
    }
  }
  return true;
}

namespace {

int subdivide(IndexTree& tree, Eigen::Index begin, Eigen::Index end,
              Eigen::Index leaf_cap, int parent, int level) {
  const int id = int(tree.nodes.size());
  tree.nodes.push_back({begin, end, -1, -1, parent, level});
  tree.depth = std::max(tree.depth, level);
  if (end - begin > leaf_cap) {
    const Eigen::Index mid = begin + (end - begin + 1) / 2;
    const int l = subdivide(tree, begin, mid, leaf_cap, id, level + 1);
    const int r = subdivide(tree, mid, end, leaf_cap, id, level + 1);
    tree.nodes[id].left = l;
    tree.nodes[id].right = r;
  }
  return id;
}

}  // namespace

IndexTree build_index_tree(Eigen::Index M, Eigen::Index leaf_cap) {
  if (M < 1) throw std::invalid_argument("build_index_tree: M must be >= 1");
  if (leaf_cap < 2) {
    throw std::invalid_argument("build_index_tree: leaf_cap must be >= 2");
  }
  IndexTree tree;
  subdivide(tree, 0, M, leaf_cap, -1, 0);
  return tree;
}

namespace {

int mirror_node(const IndexTree& src, int t, IndexTree& dst,
                Eigen::Index M, int parent, int level) {
  const auto& n = src.nodes[t];
  const int id = int(dst.nodes.size());
  dst.nodes.push_back({M - n.end, M - n.begin, -1, -1, parent, level});
  dst.depth = std::max(dst.depth, level);
  if (n.left >= 0) {
    const int l = mirror_node(src, n.right, dst, M, id, level + 1);
    const int r = mirror_node(src, n.left, dst, M, id, level + 1);
    dst.nodes[id].left = l;
    dst.nodes[id].right = r;
  }
  return id;
}

}  // namespace

IndexTree mirror(const IndexTree& tree) {
  IndexTree out;
  if (tree.nodes.empty()) return out;
  mirror_node(tree, 0, out, tree.size(), -1, 0);
  return out;
}

IndexTree single_node_tree(Eigen::Index M) {
  IndexTree tree;
  tree.nodes.push_back({0, M, -1, -1, -1, 0});
  return tree;
}

namespace {

int graft(const IndexTree& src, int t, IndexTree& dst, Eigen::Index offset,
          int parent, int level) {
  const auto& n = src.nodes[t];
  const int id = int(dst.nodes.size());
  dst.nodes.push_back({n.begin + offset, n.end + offset, -1, -1, parent, level});
  dst.depth = std::max(dst.depth, level);
  if (n.left >= 0) {
    const int l = graft(src, n.left, dst, offset, id, level + 1);
    const int r = graft(src, n.right, dst, offset, id, level + 1);
    dst.nodes[id].left = l;
    dst.nodes[id].right = r;
  }
  return id;
}

int spine(IndexTree& dst, const std::vector<const IndexTree*>& parts,
          const std::vector<Eigen::Index>& offsets, std::size_t lo,
          std::size_t hi, int parent, int level) {
  if (hi - lo == 1) {
    return graft(*parts[lo], 0, dst, offsets[lo], parent, level);
  }
  const Eigen::Index begin = offsets[lo];
  const Eigen::Index end = offsets[hi - 1] + parts[hi - 1]->size();
  // split the part list at the boundary nearest the index midpoint
  const Eigen::Index target = begin + (end - begin + 1) / 2;
  std::size_t best = lo + 1;
  for (std::size_t s = lo + 1; s < hi; ++s) {
    if (std::abs(offsets[s] - target) < std::abs(offsets[best] - target)) {
      best = s;
    }
  }
  const int id = int(dst.nodes.size());
  dst.nodes.push_back({begin, end, -1, -1, parent, level});
  dst.depth = std::max(dst.depth, level);
  const int l = spine(dst, parts, offsets, lo, best, id, level + 1);
  const int r = spine(dst, parts, offsets, best, hi, id, level + 1);
  dst.nodes[id].left = l;
  dst.nodes[id].right = r;
  return id;
}

}  // namespace

IndexTree spine_tree(const std::vector<const IndexTree*>& parts) {
  if (parts.empty()) throw std::invalid_argument("spine_tree: no parts");
  std::vector<Eigen::Index> offsets(parts.size());
  Eigen::Index at = 0;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    offsets[i] = at;
    at += parts[i]->size();
  }
  IndexTree out;
  spine(out, parts, offsets, 0, parts.size(), -1, 0);
  return out;
}

}  // namespace dtn
