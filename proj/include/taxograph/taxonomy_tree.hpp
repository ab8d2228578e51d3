#pragma once

#include "taxograph/common.hpp"
#include "taxograph/graph.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>

namespace taxograph {

struct TaxonomyNode {
  int id = 0;
  int level = 1;  // root = 1
  std::optional<int> parent;
  std::vector<double> centroid;
  std::string label;
  std::string summary;
  std::vector<NodeId> members;  // leaves only, sorted

  friend bool operator==(const TaxonomyNode&, const TaxonomyNode&) = default;
};

/// Multi-level cluster hierarchy. Nodes are kept sorted by id; leaves all sit
/// at level `depth`, and the i-th leaf in id order is leaf cluster i.
struct TaxonomyTree {
  int depth = 0;
  std::vector<int> level_sizes;
  std::vector<TaxonomyNode> nodes;

  friend bool operator==(const TaxonomyTree&, const TaxonomyTree&) = default;

  const TaxonomyNode& node(int id) const { return nodes.at(index_of(id)); }
  TaxonomyNode& node(int id) { return nodes.at(index_of(id)); }

  std::size_t index_of(int id) const {
    auto it = std::lower_bound(nodes.begin(), nodes.end(), id,
                               [](const TaxonomyNode& n, int v) { return n.id < v; });
    if (it == nodes.end() || it->id != id) throw Error("invalid tree", "unknown node id " + std::to_string(id));
    return static_cast<std::size_t>(it - nodes.begin());
  }

  int root() const {
    for (const auto& n : nodes)
      if (!n.parent) return n.id;
    throw Error("invalid tree", "no root");
  }

  std::vector<int> children(int id) const {
    std::vector<int> out;
    for (const auto& n : nodes)
      if (n.parent && *n.parent == id) out.push_back(n.id);
    return out;
  }

  /// Leaf node ids in id order (= leaf cluster order).
  std::vector<int> leaves() const {
    std::vector<int> out;
    for (const auto& n : nodes)
      if (n.level == depth) out.push_back(n.id);
    return out;
  }

  NodeId num_members() const {
    NodeId total = 0;
    for (const auto& n : nodes)
      if (n.level == depth) total += static_cast<NodeId>(n.members.size());
    return total;
  }

  /// Members of any node: union over the leaves below it, sorted.
  std::vector<NodeId> members_of(int id) const {
    const auto& nd = node(id);
    if (nd.level == depth) return nd.members;
    std::vector<NodeId> out;
    for (int c : children(id)) {
      auto sub = members_of(c);
      out.insert(out.end(), sub.begin(), sub.end());
    }
    std::sort(out.begin(), out.end());
    return out;
  }

  /// Leaf cluster assignment derived from leaf membership.
  ClusterAssignment leaf_assignment() const {
    auto lv = leaves();
    ClusterAssignment a;
    a.k = static_cast<int>(lv.size());
    a.assignment.assign(static_cast<std::size_t>(num_members()), -1);
    std::size_t d = nodes.empty() ? 0 : node(lv.front()).centroid.size();
    a.centroids = Matrix::Zero(a.k, static_cast<Eigen::Index>(d));
    for (int i = 0; i < a.k; ++i) {
      const auto& nd = node(lv[static_cast<std::size_t>(i)]);
      for (NodeId m : nd.members) a.assignment[static_cast<std::size_t>(m)] = i;
      for (std::size_t j = 0; j < nd.centroid.size() && j < d; ++j)
        a.centroids(i, static_cast<Eigen::Index>(j)) = nd.centroid[j];
    }
    return a;
  }
};

/// Throws Error on any structural invariant violation.
inline void validate_tree(const TaxonomyTree& t) {
  if (t.nodes.empty()) throw Error("invalid tree", "no nodes");
  if (t.depth < 1 || static_cast<int>(t.level_sizes.size()) != t.depth)
    throw Error("invalid tree", "depth does not match level_sizes");
  int roots = 0;
  for (const auto& n : t.nodes)
    if (!n.parent) ++roots;
  if (roots == 0) throw Error("invalid tree", "no root");
  if (roots > 1) throw Error("multiple roots");

  std::vector<int> counts(static_cast<std::size_t>(t.depth), 0);
  for (std::size_t i = 0; i < t.nodes.size(); ++i) {
    const auto& n = t.nodes[i];
    if (i > 0 && t.nodes[i - 1].id >= n.id) throw Error("invalid tree", "node ids not sorted/unique");
    if (n.level < 1 || n.level > t.depth) throw Error("invalid tree", "level out of range");
    ++counts[static_cast<std::size_t>(n.level - 1)];
    if (!n.parent) {
      if (n.level != 1) throw Error("invalid tree", "root must be at level 1");
    } else {
      const auto& p = t.node(*n.parent);
      if (p.level != n.level - 1)
        throw Error("invalid tree", "parent of node " + std::to_string(n.id) + " not at level-1");
    }
    if (n.level != t.depth && !n.members.empty())
      throw Error("invalid tree", "members stored on internal node " + std::to_string(n.id));
  }
  for (int l = 0; l < t.depth; ++l)
    if (counts[static_cast<std::size_t>(l)] != t.level_sizes[static_cast<std::size_t>(l)])
      throw Error("invalid tree", "level_sizes inconsistent with node counts");
  for (const auto& n : t.nodes)
    if (n.level < t.depth && t.children(n.id).empty())
      throw Error("invalid tree", "internal node " + std::to_string(n.id) + " has no children");

  const NodeId total = t.num_members();
  std::vector<char> seen(static_cast<std::size_t>(total), 0);
  for (int leaf : t.leaves()) {
    const auto& m = t.node(leaf).members;
    if (m.empty()) throw Error("invalid tree", "empty leaf " + std::to_string(leaf));
    for (NodeId v : m) {
      if (v < 0 || v >= total || seen[static_cast<std::size_t>(v)])
        throw Error("invalid tree", "leaf members do not partition [0, n)");
      seen[static_cast<std::size_t>(v)] = 1;
    }
  }
}

inline nlohmann::json tree_to_json(const TaxonomyTree& t) {
  nlohmann::json nodes = nlohmann::json::array();
  for (const auto& n : t.nodes) {
    auto members = n.members;
    std::sort(members.begin(), members.end());
    nodes.push_back({{"id", n.id},
                     {"level", n.level},
                     {"parent", n.parent ? nlohmann::json(*n.parent) : nlohmann::json(nullptr)},
                     {"centroid", n.centroid},
                     {"label", n.label},
                     {"summary", n.summary},
                     {"members", members}});
  }
  return {{"depth", t.depth}, {"level_sizes", t.level_sizes}, {"nodes", nodes}};
}

inline TaxonomyTree tree_from_json(const nlohmann::json& j) {
  TaxonomyTree t;
  try {
    t.depth = j.at("depth").get<int>();
    t.level_sizes = j.at("level_sizes").get<std::vector<int>>();
    for (const auto& jn : j.at("nodes")) {
      TaxonomyNode n;
      n.id = jn.at("id").get<int>();
      n.level = jn.at("level").get<int>();
      if (!jn.at("parent").is_null()) n.parent = jn.at("parent").get<int>();
      n.centroid = jn.at("centroid").get<std::vector<double>>();
      n.label = jn.at("label").get<std::string>();
      n.summary = jn.at("summary").get<std::string>();
      n.members = jn.at("members").get<std::vector<NodeId>>();
      std::sort(n.members.begin(), n.members.end());
      t.nodes.push_back(std::move(n));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed JSON", e.what());
  }
  std::sort(t.nodes.begin(), t.nodes.end(),
            [](const TaxonomyNode& a, const TaxonomyNode& b) { return a.id < b.id; });
  validate_tree(t);
  return t;
}

/// Canonical text: sorted keys, nodes by id, members sorted, shortest
/// round-trip doubles. Equal trees produce identical bytes.
inline std::string dump_tree(const TaxonomyTree& t) {
  validate_tree(t);
  return tree_to_json(t).dump() + "\n";
}

inline TaxonomyTree parse_tree(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed JSON", e.what());
  }
  return tree_from_json(j);
}

inline void save_taxonomy(const TaxonomyTree& t, const std::filesystem::path& path) {
  io::write_file(path, dump_tree(t));
}

inline TaxonomyTree load_taxonomy(const std::filesystem::path& path) {
  return parse_tree(io::read_file(path));
}

// ---------------------------------------------------------------------------
// Visualization exports (structure only; rendering happens elsewhere).

enum class VizFormat { Dot, RadialJson };

inline std::string dot_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out.push_back(c);
  }
  return out;
}

inline std::string display_label(const TaxonomyNode& n) {
  return n.label.empty() ? "cluster " + std::to_string(n.id) : n.label;
}

inline std::string to_dot(const TaxonomyTree& t) {
  validate_tree(t);
  std::ostringstream os;
  os << "digraph taxonomy {\n  rankdir=TB;\n  node [shape=box];\n";
  for (const auto& n : t.nodes) {
    os << "  n" << n.id << " [label=\"" << dot_escape(display_label(n)) << "\"";
    if (n.level == t.depth) os << ", tooltip=\"" << n.members.size() << " members\"";
    os << "];\n";
  }
  for (const auto& n : t.nodes)
    if (n.parent) os << "  n" << *n.parent << " -> n" << n.id << ";\n";
  os << "}\n";
  return os.str();
}

inline nlohmann::json radial_node(const TaxonomyTree& t, int id) {
  const auto& n = t.node(id);
  nlohmann::json j = {{"id", n.id},
                      {"level", n.level},
                      {"name", display_label(n)},
                      {"size", t.members_of(id).size()}};
  if (!n.summary.empty()) j["summary"] = n.summary;
  auto kids = t.children(id);
  if (!kids.empty()) {
    j["children"] = nlohmann::json::array();
    for (int c : kids) j["children"].push_back(radial_node(t, c));
  }
  return j;
}

inline std::string to_radial_json(const TaxonomyTree& t) {
  validate_tree(t);
  return radial_node(t, t.root()).dump(1) + "\n";
}

inline std::string emit_viz(const TaxonomyTree& t, VizFormat fmt) {
  return fmt == VizFormat::Dot ? to_dot(t) : to_radial_json(t);
}

}  // namespace taxograph
