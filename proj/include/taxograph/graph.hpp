#pragma once

#include "taxograph/common.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <unordered_set>
#include <utility>

namespace taxograph {

struct Edge {
  NodeId u = 0;
  NodeId v = 0;
  friend auto operator<=>(const Edge&, const Edge&) = default;
};

/// Undirected graph with node features, optional partial labels and texts.
/// Edges are kept canonical: u < v, sorted, unique, no self-loops.
struct TextRichGraph {
  NodeId n = 0;
  std::vector<Edge> edges;
  Matrix features;           // n x f
  std::vector<int> labels;   // -1 = unlabeled; empty means "no labels at all"
  int num_classes = 0;
  std::vector<std::string> texts;  // empty or size n

  NodeId feature_dim() const { return static_cast<NodeId>(features.cols()); }
  bool labeled(NodeId i) const {
    return !labels.empty() && labels[static_cast<std::size_t>(i)] >= 0;
  }
  int label(NodeId i) const {
    return labels.empty() ? -1 : labels[static_cast<std::size_t>(i)];
  }
};

struct NodeSplit {
  std::vector<NodeId> train;
  std::vector<NodeId> val;
  std::vector<NodeId> test;
};

/// Leaf-level cluster assignment with centroids (k x d).
struct ClusterAssignment {
  std::vector<int> assignment;
  int k = 0;
  Matrix centroids;

  std::vector<std::vector<NodeId>> members() const {
    std::vector<std::vector<NodeId>> out(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < assignment.size(); ++i)
      out[static_cast<std::size_t>(assignment[i])].push_back(static_cast<NodeId>(i));
    return out;
  }
  std::vector<NodeId> sizes() const {
    std::vector<NodeId> out(static_cast<std::size_t>(k), 0);
    for (int a : assignment) ++out[static_cast<std::size_t>(a)];
    return out;
  }
};

/// Mean of each cluster's rows of `points`. Throws on empty clusters.
inline Matrix cluster_means(const Matrix& points, const std::vector<int>& assignment,
                            int k) {
  Matrix c = Matrix::Zero(k, points.cols());
  std::vector<NodeId> cnt(static_cast<std::size_t>(k), 0);
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    c.row(assignment[i]) += points.row(static_cast<Eigen::Index>(i));
    ++cnt[static_cast<std::size_t>(assignment[i])];
  }
  for (int j = 0; j < k; ++j) {
    if (cnt[static_cast<std::size_t>(j)] == 0)
      throw Error("degenerate cluster", "cluster " + std::to_string(j) + " is empty");
    c.row(j) /= static_cast<double>(cnt[static_cast<std::size_t>(j)]);
  }
  return c;
}

inline void validate_assignment(const ClusterAssignment& a, NodeId n) {
  if (static_cast<NodeId>(a.assignment.size()) != n)
    throw Error("invalid assignment", "size mismatch");
  std::vector<NodeId> cnt(static_cast<std::size_t>(a.k), 0);
  for (int c : a.assignment) {
    if (c < 0 || c >= a.k) throw Error("invalid assignment", "cluster index out of range");
    ++cnt[static_cast<std::size_t>(c)];
  }
  for (NodeId c : cnt)
    if (c == 0) throw Error("degenerate cluster", "empty cluster in assignment");
}

/// Sort, dedupe, orient (min id first) and drop self-loops. Idempotent.
inline std::vector<Edge> canonicalize_edges(std::vector<Edge> edges) {
  std::vector<Edge> out;
  out.reserve(edges.size());
  for (auto e : edges) {
    if (e.u == e.v) continue;
    if (e.u > e.v) std::swap(e.u, e.v);
    out.push_back(e);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline TextRichGraph canonicalize(TextRichGraph g) {
  g.edges = canonicalize_edges(std::move(g.edges));
  return g;
}

/// Throws if any TextRichGraph invariant is broken.
inline void validate_graph(const TextRichGraph& g) {
  if (g.features.rows() != g.n)
    throw Error("dimension mismatch", "feature rows " + std::to_string(g.features.rows()) +
                                          " != n " + std::to_string(g.n));
  if (!g.features.allFinite()) throw Error("non-finite values", "features");
  for (std::size_t i = 0; i < g.edges.size(); ++i) {
    const auto& e = g.edges[i];
    if (e.u < 0 || e.v < 0 || e.u >= g.n || e.v >= g.n)
      throw Error("out-of-range id", "edge " + std::to_string(e.u) + " " + std::to_string(e.v));
    if (e.u >= e.v) throw Error("invalid graph", "edge not canonical");
    if (i > 0 && !(g.edges[i - 1] < e)) throw Error("invalid graph", "edges not sorted/unique");
  }
  if (!g.labels.empty()) {
    if (static_cast<NodeId>(g.labels.size()) != g.n) throw Error("dimension mismatch", "labels");
    for (int y : g.labels)
      if (y < -1 || y >= g.num_classes) throw Error("out-of-range id", "label " + std::to_string(y));
  }
  if (!g.texts.empty() && static_cast<NodeId>(g.texts.size()) != g.n)
    throw Error("dimension mismatch", "texts");
}

inline void validate_split(const NodeSplit& s, const TextRichGraph& g) {
  std::vector<char> seen(static_cast<std::size_t>(g.n), 0);
  auto check = [&](const std::vector<NodeId>& ids, const char* name) {
    for (NodeId i : ids) {
      if (i < 0 || i >= g.n)
        throw Error("out-of-range id", std::string(name) + " id " + std::to_string(i));
      if (seen[static_cast<std::size_t>(i)])
        throw Error("invalid split", "node " + std::to_string(i) + " appears twice");
      seen[static_cast<std::size_t>(i)] = 1;
    }
  };
  check(s.train, "train");
  check(s.val, "val");
  check(s.test, "test");
  for (NodeId i : s.train)
    if (!g.labeled(i)) throw Error("invalid split", "train node " + std::to_string(i) + " is unlabeled");
}

/// Fraction of edges whose endpoints are both labeled and share a class,
/// among edges with both endpoints labeled. NaN when there are none.
inline double labeled_homophily(const TextRichGraph& g) {
  std::size_t same = 0, total = 0;
  for (const auto& e : g.edges) {
    if (!g.labeled(e.u) || !g.labeled(e.v)) continue;
    ++total;
    if (g.label(e.u) == g.label(e.v)) ++same;
  }
  return total == 0 ? std::numeric_limits<double>::quiet_NaN()
                    : static_cast<double>(same) / static_cast<double>(total);
}

// ---------------------------------------------------------------------------
// File formats

namespace io {

inline constexpr char kFeatureMagic[4] = {'T', 'R', 'N', 'F'};

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("missing file", p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& p, std::string_view data) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("io error", "cannot write " + p.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
}

namespace detail {

template <typename T>
void put_le(std::string& buf, T v) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  char bytes[sizeof(T)];
  std::memcpy(bytes, &v, sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T get_le(std::string_view buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw Error("malformed file", "truncated binary data");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

inline std::vector<std::string> split_ws(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ' ' || c == '\t' || c == ',' || c == '\r') {
      if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

inline std::string_view strip_comment(std::string_view line) {
  auto pos = line.find('#');
  return pos == std::string_view::npos ? line : line.substr(0, pos);
}

inline NodeId parse_id(const std::string& tok) {
  std::size_t used = 0;
  long long v = 0;
  try {
    v = std::stoll(tok, &used);
  } catch (const std::exception&) {
    throw Error("parse error", "bad integer '" + tok + "'");
  }
  if (used != tok.size()) throw Error("parse error", "bad integer '" + tok + "'");
  return static_cast<NodeId>(v);
}

template <typename F>
void for_each_line(std::string_view text, F&& f) {
  std::size_t start = 0, lineno = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++lineno;
    f(text.substr(start, end - start), lineno);
    if (end == text.size()) break;
    start = end + 1;
  }
}

}  // namespace detail

/// Binary: "TRNF", u64 n, u64 f, n*f float32 row-major.
inline std::string encode_features(const Matrix& x) {
  std::string buf(kFeatureMagic, 4);
  detail::put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(x.rows()));
  detail::put_le<std::uint64_t>(buf, static_cast<std::uint64_t>(x.cols()));
  buf.reserve(buf.size() + static_cast<std::size_t>(x.size()) * 4);
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      detail::put_le<float>(buf, static_cast<float>(x(i, j)));
  return buf;
}

/// Accepts the binary format or a CSV / whitespace-separated fallback.
inline Matrix decode_features(std::string_view data) {
  if (data.size() >= 4 && std::memcmp(data.data(), kFeatureMagic, 4) == 0) {
    std::size_t pos = 4;
    auto n = detail::get_le<std::uint64_t>(data, pos);
    auto f = detail::get_le<std::uint64_t>(data, pos);
    if (data.size() - pos != n * f * 4)
      throw Error("dimension mismatch", "feature payload size does not match header");
    Matrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(f));
    for (std::uint64_t i = 0; i < n; ++i)
      for (std::uint64_t j = 0; j < f; ++j) {
        float v = detail::get_le<float>(data, pos);
        if (!std::isfinite(v)) throw Error("non-finite values", "feature row " + std::to_string(i));
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
      }
    return x;
  }
  std::vector<std::vector<double>> rows;
  detail::for_each_line(data, [&](std::string_view line, std::size_t lineno) {
    auto toks = detail::split_ws(detail::strip_comment(line));
    if (toks.empty()) return;
    std::vector<double> row;
    row.reserve(toks.size());
    for (const auto& t : toks) {
      char* end = nullptr;
      double v = std::strtod(t.c_str(), &end);
      if (end != t.c_str() + t.size())
        throw Error("parse error", "feature line " + std::to_string(lineno));
      if (!std::isfinite(v)) throw Error("non-finite values", "feature line " + std::to_string(lineno));
      row.push_back(v);
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error("dimension mismatch", "ragged feature line " + std::to_string(lineno));
    rows.push_back(std::move(row));
  });
  Matrix x(static_cast<Eigen::Index>(rows.size()),
           rows.empty() ? 0 : static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return x;
}

inline std::vector<Edge> decode_edges(std::string_view data, NodeId n) {
  std::vector<Edge> edges;
  detail::for_each_line(data, [&](std::string_view line, std::size_t lineno) {
    auto toks = detail::split_ws(detail::strip_comment(line));
    if (toks.empty()) return;
    if (toks.size() != 2) throw Error("parse error", "edge line " + std::to_string(lineno));
    Edge e{detail::parse_id(toks[0]), detail::parse_id(toks[1])};
    if (e.u < 0 || e.v < 0 || e.u >= n || e.v >= n)
      throw Error("out-of-range id", "edge line " + std::to_string(lineno));
    edges.push_back(e);
  });
  return edges;
}

inline std::string encode_edges(const std::vector<Edge>& edges) {
  std::string out;
  for (const auto& e : edges) out += std::to_string(e.u) + ' ' + std::to_string(e.v) + '\n';
  return out;
}

inline std::vector<int> decode_labels(std::string_view data, NodeId n) {
  std::vector<int> labels(static_cast<std::size_t>(n), -1);
  detail::for_each_line(data, [&](std::string_view line, std::size_t lineno) {
    auto toks = detail::split_ws(detail::strip_comment(line));
    if (toks.empty()) return;
    if (toks.size() != 2) throw Error("parse error", "label line " + std::to_string(lineno));
    NodeId id = detail::parse_id(toks[0]);
    NodeId y = detail::parse_id(toks[1]);
    if (id < 0 || id >= n) throw Error("out-of-range id", "label node " + std::to_string(id));
    if (y < -1) throw Error("out-of-range id", "label value " + std::to_string(y));
    labels[static_cast<std::size_t>(id)] = static_cast<int>(y);
  });
  return labels;
}

inline std::string encode_labels(const std::vector<int>& labels) {
  std::string out;
  for (std::size_t i = 0; i < labels.size(); ++i)
    out += std::to_string(i) + ' ' + std::to_string(labels[i]) + '\n';
  return out;
}

inline std::vector<NodeId> decode_ids(std::string_view data, NodeId n) {
  std::vector<NodeId> ids;
  detail::for_each_line(data, [&](std::string_view line, std::size_t lineno) {
    auto toks = detail::split_ws(detail::strip_comment(line));
    if (toks.empty()) return;
    if (toks.size() != 1) throw Error("parse error", "split line " + std::to_string(lineno));
    NodeId id = detail::parse_id(toks[0]);
    if (id < 0 || id >= n) throw Error("out-of-range id", "split node " + std::to_string(id));
    ids.push_back(id);
  });
  return ids;
}

inline std::string encode_ids(const std::vector<NodeId>& ids) {
  std::string out;
  for (NodeId i : ids) out += std::to_string(i) + '\n';
  return out;
}

inline std::vector<std::string> decode_texts(std::string_view data) {
  std::vector<std::string> texts;
  detail::for_each_line(data, [&](std::string_view line, std::size_t lineno) {
    if (line.empty() || line == "\r") return;
    try {
      texts.push_back(nlohmann::json::parse(line).get<std::string>());
    } catch (const std::exception&) {
      throw Error("parse error", "text line " + std::to_string(lineno));
    }
  });
  return texts;
}

inline std::string encode_texts(const std::vector<std::string>& texts) {
  std::string out;
  for (const auto& t : texts) out += nlohmann::json(t).dump() + '\n';
  return out;
}

}  // namespace io

struct GraphPaths {
  std::filesystem::path features, edges, labels, train, val, test;
  std::optional<std::filesystem::path> texts;

  /// Conventional file names inside a dataset directory.
  static GraphPaths in_directory(const std::filesystem::path& dir) {
    GraphPaths p{dir / "features.trnf", dir / "edges.txt", dir / "labels.txt",
                 dir / "train.txt",     dir / "val.txt",   dir / "test.txt", std::nullopt};
    if (std::filesystem::exists(dir / "texts.jsonl")) p.texts = dir / "texts.jsonl";
    if (!std::filesystem::exists(p.features) && std::filesystem::exists(dir / "features.csv"))
      p.features = dir / "features.csv";
    return p;
  }
};

struct LoadReport {
  NodeId n = 0;
  NodeId f = 0;
  std::size_t num_edges = 0;
  double labeled_homophily = 0.0;
};

struct LoadedGraph {
  TextRichGraph graph;
  NodeSplit split;
  LoadReport report;
};

inline LoadedGraph load_graph(const GraphPaths& paths, int num_classes = 0) {
  LoadedGraph out;
  auto& g = out.graph;
  g.features = io::decode_features(io::read_file(paths.features));
  g.n = g.features.rows();
  g.edges = canonicalize_edges(io::decode_edges(io::read_file(paths.edges), g.n));
  g.labels = io::decode_labels(io::read_file(paths.labels), g.n);
  int max_label = -1;
  for (int y : g.labels) max_label = std::max(max_label, y);
  g.num_classes = std::max(num_classes, max_label + 1);
  if (paths.texts) {
    g.texts = io::decode_texts(io::read_file(*paths.texts));
    if (static_cast<NodeId>(g.texts.size()) != g.n)
      throw Error("dimension mismatch", "text lines " + std::to_string(g.texts.size()) +
                                            " != n " + std::to_string(g.n));
  }
  out.split.train = io::decode_ids(io::read_file(paths.train), g.n);
  out.split.val = io::decode_ids(io::read_file(paths.val), g.n);
  out.split.test = io::decode_ids(io::read_file(paths.test), g.n);
  validate_graph(g);
  validate_split(out.split, g);
  out.report = {g.n, g.feature_dim(), g.edges.size(), labeled_homophily(g)};
  return out;
}

/// Writes a dataset directory using the conventional names.
inline void save_graph(const std::filesystem::path& dir, const TextRichGraph& g,
                       const NodeSplit& s) {
  io::write_file(dir / "features.trnf", io::encode_features(g.features));
  io::write_file(dir / "edges.txt", io::encode_edges(g.edges));
  io::write_file(dir / "labels.txt", io::encode_labels(g.labels));
  io::write_file(dir / "train.txt", io::encode_ids(s.train));
  io::write_file(dir / "val.txt", io::encode_ids(s.val));
  io::write_file(dir / "test.txt", io::encode_ids(s.test));
  if (!g.texts.empty()) io::write_file(dir / "texts.jsonl", io::encode_texts(g.texts));
}

}  // namespace taxograph
