#pragma once

#include "taxograph/common.hpp"
#include "taxograph/kmeans.hpp"
#include "taxograph/taxonomy_tree.hpp"

#include <cmath>
#include <map>

namespace taxograph {

/// Target cluster counts per level, root first: [1, k_2, ..., k_L].
struct TreeShape {
  std::vector<int> level_sizes;

  int depth() const { return static_cast<int>(level_sizes.size()); }
  int leaves() const { return level_sizes.back(); }

  void validate() const {
    if (level_sizes.size() < 2) throw Error("invalid shape", "need at least a root and a leaf level");
    if (level_sizes.front() != 1) throw Error("invalid shape", "first level must be the single root");
    for (std::size_t l = 1; l < level_sizes.size(); ++l)
      if (level_sizes[l] <= level_sizes[l - 1])
        throw Error("invalid shape", "level sizes must be strictly increasing");
  }

  std::string to_string() const {
    std::string s;
    for (int v : level_sizes) s += (s.empty() ? "" : ",") + std::to_string(v);
    return s;
  }
};

/// Default taxonomy shapes used for the benchmark datasets.
inline const std::map<std::string, TreeShape>& preset_shapes() {
  static const std::map<std::string, TreeShape> presets = {
      {"cora", {{1, 7, 64}}},         {"citeseer", {{1, 6, 64}}},
      {"pubmed", {{1, 3, 16, 64}}},   {"wikics", {{1, 10, 128}}},
      {"books", {{1, 12, 64, 256}}},  {"photo", {{1, 12, 64, 256}}},
      {"computer", {{1, 10, 128, 512}}}, {"arxiv", {{1, 40, 128, 512, 2048}}},
  };
  return presets;
}

/// "1,4,16" or a preset name.
inline TreeShape parse_shape(std::string_view text) {
  auto it = preset_shapes().find(std::string(text));
  if (it != preset_shapes().end()) return it->second;
  TreeShape s;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) throw Error("invalid shape", "bad shape '" + std::string(text) + "'");
    s.level_sizes.push_back(static_cast<int>(io::detail::parse_id(cur)));
    cur.clear();
  };
  for (char c : text) {
    if (c == ',') flush();
    else if (c != ' ' && c != '(' && c != ')') cur.push_back(c);
  }
  flush();
  s.validate();
  return s;
}

/// Re-fits a shape to a leaf count that refinement moved away from k_L:
/// intermediate sizes become round(k_l * k' / k_L), clamped so the shape
/// stays strictly increasing between the root and the leaves.
inline TreeShape rescale_shape(const TreeShape& shape, int leaf_count) {
  shape.validate();
  if (leaf_count < 2) throw Error("invalid shape", "leaf level must have more than one cluster");
  TreeShape out = shape;
  const int kl = shape.leaves();
  if (leaf_count == kl) return out;
  out.level_sizes.back() = leaf_count;
  for (int l = shape.depth() - 2; l >= 1; --l) {
    const auto ul = static_cast<std::size_t>(l);
    const int hi = out.level_sizes[ul + 1] - 1;
    const int lo = l + 1;  // leaves room for the levels above (root = 1)
    if (hi < lo)
      throw Error("invalid shape", "cannot fit " + std::to_string(shape.depth()) + " levels over " +
                                       std::to_string(leaf_count) + " leaves");
    const int v = static_cast<int>(std::lround(static_cast<double>(shape.level_sizes[ul]) * leaf_count / kl));
    out.level_sizes[ul] = std::clamp(v, lo, hi);
  }
  out.validate();
  return out;
}

struct ClusterSummary {
  std::string label;
  std::string summary;
  friend bool operator==(const ClusterSummary&, const ClusterSummary&) = default;
};

struct HierarchyOptions {
  std::uint64_t seed = 0;
  int restarts = 4;
  bool weight_by_size = false;  // weight centroids by member count when clustering upward
};

/// Bottom-up construction: leaf clusters are level L; level l-1 comes from
/// k-means over the level-l centroids, and each level-l node's parent is the
/// super-cluster it was assigned to. Node ids are handed out level by level
/// (root = 0), and leaves keep the order of `leaves.assignment` indices.
inline TaxonomyTree build_hierarchy(const ClusterAssignment& leaves, const TreeShape& target,
                                    const std::vector<ClusterSummary>& summaries = {},
                                    const HierarchyOptions& opt = {}) {
  validate_assignment(leaves, static_cast<NodeId>(leaves.assignment.size()));
  const TreeShape shape = rescale_shape(target, leaves.k);
  if (shape.level_sizes != target.level_sizes)
    warn("taxonomy shape rescaled from (" + target.to_string() + ") to (" + shape.to_string() + ")");
  const int depth = shape.depth();

  // centroids[l], parents[l] for 0-based level index l.
  std::vector<Matrix> centroids(static_cast<std::size_t>(depth));
  std::vector<std::vector<int>> parent(static_cast<std::size_t>(depth));
  std::vector<std::vector<double>> weight(static_cast<std::size_t>(depth));
  centroids.back() = leaves.centroids;
  for (NodeId s : leaves.sizes()) weight.back().push_back(static_cast<double>(s));

  for (int l = depth - 1; l >= 1; --l) {
    const auto ul = static_cast<std::size_t>(l);
    const int k = shape.level_sizes[ul - 1];
    KMeansConfig cfg;
    cfg.k = k;
    cfg.seed = opt.seed + static_cast<std::uint64_t>(l) * 7919;
    cfg.restarts = opt.restarts;
    if (opt.weight_by_size) cfg.weights = weight[ul];
    auto km = kmeans(centroids[ul], cfg);
    parent[ul] = km.clusters.assignment;
    centroids[ul - 1] = km.clusters.centroids;
    weight[ul - 1].assign(static_cast<std::size_t>(k), 0.0);
    for (std::size_t i = 0; i < parent[ul].size(); ++i)
      weight[ul - 1][static_cast<std::size_t>(parent[ul][i])] += weight[ul][i];
  }

  TaxonomyTree t;
  t.depth = depth;
  t.level_sizes = shape.level_sizes;
  std::vector<int> offset(static_cast<std::size_t>(depth), 0);
  for (int l = 1; l < depth; ++l)
    offset[static_cast<std::size_t>(l)] = offset[static_cast<std::size_t>(l - 1)] + shape.level_sizes[static_cast<std::size_t>(l - 1)];
  auto members = leaves.members();
  for (int l = 0; l < depth; ++l) {
    const auto ul = static_cast<std::size_t>(l);
    for (int i = 0; i < shape.level_sizes[ul]; ++i) {
      TaxonomyNode n;
      n.id = offset[ul] + i;
      n.level = l + 1;
      if (l > 0) n.parent = offset[ul - 1] + parent[ul][static_cast<std::size_t>(i)];
      const auto row = centroids[ul].row(i);
      for (Eigen::Index j = 0; j < row.size(); ++j) n.centroid.push_back(row(j));
      if (l == depth - 1) {
        n.members = members[static_cast<std::size_t>(i)];
        if (static_cast<std::size_t>(i) < summaries.size()) {
          n.label = summaries[static_cast<std::size_t>(i)].label;
          n.summary = summaries[static_cast<std::size_t>(i)].summary;
        }
      }
      t.nodes.push_back(std::move(n));
    }
  }
  validate_tree(t);
  return t;
}

/// Hop distance between leaf clusters through their lowest common ancestor:
/// 2 * (L - level(LCA)). Indexed in leaf-cluster order.
inline Matrix cophenetic_matrix(const TaxonomyTree& t) {
  validate_tree(t);
  const auto leaves = t.leaves();
  const auto k = static_cast<Eigen::Index>(leaves.size());
  std::vector<std::vector<int>> path(leaves.size());  // ancestors, leaf first
  for (std::size_t i = 0; i < leaves.size(); ++i) {
    int cur = leaves[i];
    path[i].push_back(cur);
    while (auto p = t.node(cur).parent) {
      cur = *p;
      path[i].push_back(cur);
    }
  }
  Matrix d = Matrix::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j) {
      const auto& a = path[static_cast<std::size_t>(i)];
      const auto& b = path[static_cast<std::size_t>(j)];
      std::size_t up = 0;
      while (a[up] != b[up]) ++up;
      d(i, j) = d(j, i) = 2.0 * static_cast<double>(up);
    }
  return d;
}

struct CohesionResult {
  double value = 0;
  bool degenerate = false;
};

/// Mean cosine similarity of the member rows to the centroid.
inline CohesionResult cohesion(const Matrix& members, const Eigen::Ref<const Eigen::RowVectorXd>& centroid) {
  if (members.rows() == 0) throw Error("degenerate cluster", "cohesion of an empty cluster");
  CohesionResult r;
  const double cn = centroid.norm();
  if (cn <= kNormEps) r.degenerate = true;
  double sum = 0;
  for (Eigen::Index i = 0; i < members.rows(); ++i) {
    const double mn = members.row(i).norm();
    if (mn <= kNormEps) r.degenerate = true;
    sum += members.row(i).dot(centroid) / (mn * cn + kNormEps);
  }
  if (r.degenerate) warn("cohesion: zero-norm member or centroid");
  r.value = sum / static_cast<double>(members.rows());
  return r;
}

inline double cosine(const Eigen::Ref<const Eigen::RowVectorXd>& a, const Eigen::Ref<const Eigen::RowVectorXd>& b) {
  return a.dot(b) / (a.norm() * b.norm() + kNormEps);
}

}  // namespace taxograph
