#pragma once

#include "taxograph/common.hpp"
#include "taxograph/graph.hpp"

#include <map>

namespace taxograph {

enum class SimilarityMode { Identity, SupCon, Full };

inline std::string to_string(SimilarityMode m) {
  switch (m) {
    case SimilarityMode::Identity: return "identity";
    case SimilarityMode::SupCon: return "supcon";
    case SimilarityMode::Full: return "full";
  }
  return "full";
}

inline SimilarityMode parse_similarity_mode(std::string_view s) {
  if (s == "identity") return SimilarityMode::Identity;
  if (s == "supcon") return SimilarityMode::SupCon;
  if (s == "full") return SimilarityMode::Full;
  throw Error("invalid config", "unknown similarity mode '" + std::string(s) + "'");
}

/// Binary symmetric positive-pair indicator with implicit unit diagonal.
///
/// Stored in two disjoint parts so it never needs n^2 memory:
///  * `groups`: sets of train nodes sharing a label; every pair inside a
///    group is positive (this is the Y_l Y_l^T block structure);
///  * `extra_pairs`: remaining positive pairs (i < j), i.e. graph edges with
///    at least one endpoint outside the labeled train set.
struct SimilarityMatrix {
  NodeId n = 0;
  std::vector<std::vector<NodeId>> groups;
  std::vector<int> group_of;  // size n, -1 when the node is in no group
  std::vector<Edge> extra_pairs;

  bool contains(NodeId i, NodeId j) const {
    if (i == j) return true;
    if (i > j) std::swap(i, j);
    int gi = group_of[static_cast<std::size_t>(i)];
    if (gi >= 0 && gi == group_of[static_cast<std::size_t>(j)]) return true;
    return std::binary_search(extra_pairs.begin(), extra_pairs.end(), Edge{i, j});
  }

  /// Number of unordered off-diagonal positive pairs.
  std::size_t positive_pairs() const {
    std::size_t total = extra_pairs.size();
    for (const auto& g : groups) total += g.size() * (g.size() - 1) / 2;
    return total;
  }

  /// Explicit sorted list of unordered positive pairs (i < j).
  std::vector<Edge> positives() const {
    std::vector<Edge> out(extra_pairs.begin(), extra_pairs.end());
    for (const auto& g : groups)
      for (std::size_t a = 0; a < g.size(); ++a)
        for (std::size_t b = a + 1; b < g.size(); ++b) out.push_back({g[a], g[b]});
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Dense 0/1 matrix; refuses large n.
  Matrix dense() const {
    if (n > 5000) throw Error("too large", "refusing to densify similarity for n > 5000");
    Matrix s = Matrix::Identity(n, n);
    for (const auto& e : positives()) s(e.u, e.v) = s(e.v, e.u) = 1.0;
    return s;
  }
};

/// Positive pairs: identity -> diagonal only; supcon -> + same-label train
/// pairs; full -> + edges with at least one endpoint outside the labeled
/// train set. An edge between two differently labeled train nodes is never
/// positive.
inline SimilarityMatrix build_similarity(const TextRichGraph& g, const NodeSplit& split,
                                         SimilarityMode mode) {
  SimilarityMatrix s;
  s.n = g.n;
  s.group_of.assign(static_cast<std::size_t>(g.n), -1);
  if (mode == SimilarityMode::Identity) return s;

  std::vector<char> in_train(static_cast<std::size_t>(g.n), 0);
  std::map<int, std::vector<NodeId>> by_label;
  for (NodeId i : split.train) {
    if (!g.labeled(i)) continue;
    in_train[static_cast<std::size_t>(i)] = 1;
    by_label[g.label(i)].push_back(i);
  }
  for (auto& [label, ids] : by_label) {
    std::sort(ids.begin(), ids.end());
    ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
    int gid = static_cast<int>(s.groups.size());
    for (NodeId i : ids) s.group_of[static_cast<std::size_t>(i)] = gid;
    s.groups.push_back(std::move(ids));
  }
  if (mode == SimilarityMode::SupCon) return s;

  for (const auto& e : canonicalize_edges(g.edges)) {
    bool both_labeled = in_train[static_cast<std::size_t>(e.u)] && in_train[static_cast<std::size_t>(e.v)];
    if (both_labeled) continue;  // same label: already positive; different: never
    s.extra_pairs.push_back(e);
  }
  return s;
}

/// Fraction of edges joining same-class nodes. Requires every node labeled.
inline double edge_homophily(const TextRichGraph& g) {
  if (g.edges.empty()) throw Error("undefined homophily", "graph has no edges");
  std::size_t same = 0;
  for (const auto& e : g.edges) {
    if (!g.labeled(e.u) || !g.labeled(e.v))
      throw Error("invalid input", "edge_homophily needs full labels");
    if (g.label(e.u) == g.label(e.v)) ++same;
  }
  return static_cast<double>(same) / static_cast<double>(g.edges.size());
}

/// ||S - Y Y^T||_F^2 for binary S, computed from pair counts:
/// 2 * |pos(S) xor pos(S*)| over unordered off-diagonal pairs (diagonals agree).
inline double frobenius_error(const SimilarityMatrix& s, const std::vector<int>& full_labels) {
  if (static_cast<NodeId>(full_labels.size()) != s.n)
    throw Error("dimension mismatch", "full labels");
  std::map<int, std::size_t> class_size;
  for (int y : full_labels) {
    if (y < 0) throw Error("invalid input", "frobenius_error needs full labels");
    ++class_size[y];
  }
  std::size_t ideal = 0;
  for (auto [c, cnt] : class_size) ideal += cnt * (cnt - 1) / 2;

  std::size_t both = 0;
  for (const auto& grp : s.groups) {
    std::map<int, std::size_t> hist;
    for (NodeId i : grp) ++hist[full_labels[static_cast<std::size_t>(i)]];
    for (auto [c, cnt] : hist) both += cnt * (cnt - 1) / 2;
  }
  for (const auto& e : s.extra_pairs)
    if (full_labels[static_cast<std::size_t>(e.u)] == full_labels[static_cast<std::size_t>(e.v)]) ++both;

  std::size_t sym_diff = s.positive_pairs() + ideal - 2 * both;
  return 2.0 * static_cast<double>(sym_diff);
}

struct Theorem1Report {
  double e1 = 0, e2 = 0, e3 = 0;
  double h = 0;                    // edge homophily of the full graph
  std::size_t p_same_added = 0;    // same-class edges S3 adds over S2
  std::size_t p_diff_added = 0;    // cross-class edges S3 adds over S2
  bool precondition = false;       // h > 0.5 and p_same_added > p_diff_added
  bool holds = false;              // e3 < e2 <= e1
  bool identity_exact = false;     // e3 - e2 == 2 (p_diff_added - p_same_added)
};

/// Measures the three similarity constructions against the ideal Y Y^T on a
/// fully labeled graph, where only `split.train` labels are visible to S.
inline Theorem1Report theorem1_oracle(const TextRichGraph& g, const NodeSplit& split) {
  Theorem1Report r;
  auto s1 = build_similarity(g, split, SimilarityMode::Identity);
  auto s2 = build_similarity(g, split, SimilarityMode::SupCon);
  auto s3 = build_similarity(g, split, SimilarityMode::Full);
  r.e1 = frobenius_error(s1, g.labels);
  r.e2 = frobenius_error(s2, g.labels);
  r.e3 = frobenius_error(s3, g.labels);
  r.h = edge_homophily(g);
  for (const auto& e : s3.extra_pairs) {
    if (g.label(e.u) == g.label(e.v))
      ++r.p_same_added;
    else
      ++r.p_diff_added;
  }
  r.precondition = r.h > 0.5 && r.p_same_added > r.p_diff_added;
  r.holds = r.e3 < r.e2 && r.e2 <= r.e1;
  r.identity_exact = (r.e3 - r.e2) == 2.0 * (static_cast<double>(r.p_diff_added) -
                                             static_cast<double>(r.p_same_added));
  return r;
}

inline nlohmann::json to_json(const Theorem1Report& r) {
  return {{"e1", r.e1},
          {"e2", r.e2},
          {"e3", r.e3},
          {"h", r.h},
          {"p_same_added", r.p_same_added},
          {"p_diff_added", r.p_diff_added},
          {"precondition", r.precondition},
          {"holds", r.holds},
          {"identity_exact", r.identity_exact}};
}

}  // namespace taxograph
