#pragma once

#include <Eigen/Dense>

#include <vector>

namespace dtn {

/// Binary tree of contiguous index ranges over [0, M). Node 0 is the root;
/// children are stored in preorder so node ids are stable for a given
/// structure. Trees may be ragged (leaves on different levels).
struct IndexTree {
  struct Node {
    Eigen::Index begin = 0;
    Eigen::Index end = 0;
    int left = -1;
    int right = -1;
    int parent = -1;
    int level = 0;
  };

  std::vector<Node> nodes;
  int depth = 0;

  Eigen::Index size() const { return nodes.empty() ? 0 : nodes[0].end; }
  int num_nodes() const { return int(nodes.size()); }
  bool is_leaf(int t) const { return nodes[t].left < 0; }
  Eigen::Index node_size(int t) const {
    return nodes[t].end - nodes[t].begin;
  }

  /// Node ids ordered so that every node appears after its children.
  std::vector<int> bottom_up() const;
  /// Node ids in top-down order (parents before children) = preorder ids.
  std::vector<int> top_down() const;

  friend bool operator==(const IndexTree& a, const IndexTree& b);
};

/// Balanced halving of [0, M): any range holding more than `leaf_cap`
/// indices splits in two, the left half taking the extra index when odd.
/// Requires M >= 1 and leaf_cap >= 2. This is the default partition used
/// for compression.
IndexTree build_index_tree(Eigen::Index M, Eigen::Index leaf_cap);

/// Tree for the reversed index order: ranges are reflected about M/2 and
/// children swapped, so mirror(mirror(t)) == t.
IndexTree mirror(const IndexTree& tree);

/// Single node covering [0, M): used for matrices stored densely inside
/// the HBS machinery.
IndexTree single_node_tree(Eigen::Index M);

/// Joins subtrees under a spine so that each input tree becomes a whole
/// subtree; sizes are the subtree index counts, in order. The spine splits
/// the subtree list at the boundary nearest the index midpoint.
IndexTree spine_tree(const std::vector<const IndexTree*>& parts);

}  // namespace dtn
