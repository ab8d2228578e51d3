#pragma once

#include "taxograph/common.hpp"
#include "taxograph/graph.hpp"

#include <Eigen/Eigenvalues>

#include <charconv>
#include <cmath>
#include <map>

namespace taxograph {

/// Adjusted Rand index between two labelings of the same items.
inline double adjusted_rand_index(const std::vector<int>& a, const std::vector<int>& b) {
  if (a.size() != b.size()) throw Error("dimension mismatch", "ARI labelings differ in length");
  const auto n = static_cast<double>(a.size());
  if (a.size() < 2) return 1.0;
  std::map<std::pair<int, int>, double> joint;
  std::map<int, double> ra, rb;
  for (std::size_t i = 0; i < a.size(); ++i) {
    joint[{a[i], b[i]}] += 1;
    ra[a[i]] += 1;
    rb[b[i]] += 1;
  }
  auto c2 = [](double x) { return x * (x - 1) / 2; };
  double sum_ij = 0, sum_a = 0, sum_b = 0;
  for (auto& [k, v] : joint) sum_ij += c2(v);
  for (auto& [k, v] : ra) sum_a += c2(v);
  for (auto& [k, v] : rb) sum_b += c2(v);
  const double expected = sum_a * sum_b / c2(n);
  const double max_index = (sum_a + sum_b) / 2;
  if (max_index == expected) return 1.0;  // both trivial partitions
  return (sum_ij - expected) / (max_index - expected);
}

inline std::vector<int> predictions(const Matrix& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()));
  for (Eigen::Index i = 0; i < logits.rows(); ++i) {
    Eigen::Index j;
    logits.row(i).maxCoeff(&j);
    out[static_cast<std::size_t>(i)] = static_cast<int>(j);
  }
  return out;
}

/// Fraction of `nodes` whose argmax logit equals their label.
inline double accuracy(const Matrix& logits, const TextRichGraph& g, const std::vector<NodeId>& nodes) {
  if (nodes.empty()) throw Error("empty split", "accuracy over zero nodes");
  auto pred = predictions(logits);
  std::size_t hit = 0;
  for (NodeId v : nodes) {
    if (!g.labeled(v)) throw Error("unlabeled node", "node " + std::to_string(v) + " has no label");
    if (pred[static_cast<std::size_t>(v)] == g.label(v)) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(nodes.size());
}

/// Per-class accuracy; classes absent from `nodes` report NaN.
inline std::vector<double> per_class_accuracy(const Matrix& logits, const TextRichGraph& g,
                                              const std::vector<NodeId>& nodes) {
  auto pred = predictions(logits);
  std::vector<double> hit(static_cast<std::size_t>(g.num_classes), 0), tot(hit.size(), 0);
  for (NodeId v : nodes) {
    const auto c = static_cast<std::size_t>(g.label(v));
    tot[c] += 1;
    if (pred[static_cast<std::size_t>(v)] == g.label(v)) hit[c] += 1;
  }
  std::vector<double> out(hit.size());
  for (std::size_t c = 0; c < hit.size(); ++c)
    out[c] = tot[c] > 0 ? hit[c] / tot[c] : std::numeric_limits<double>::quiet_NaN();
  return out;
}

/// Projection of the centered rows onto the top-2 principal axes. Axis signs
/// are fixed so the largest-magnitude loading is positive.
inline Matrix pca_2d(const Matrix& x) {
  if (x.rows() < 1 || x.cols() < 1) throw Error("invalid input", "PCA of an empty matrix");
  Matrix centered = x.rowwise() - x.colwise().mean();
  Matrix cov = centered.transpose() * centered / std::max<double>(1.0, static_cast<double>(x.rows() - 1));
  Eigen::SelfAdjointEigenSolver<Matrix> es(cov);
  const Eigen::Index d = x.cols();
  Matrix axes = Matrix::Zero(d, 2);
  for (int c = 0; c < 2 && c < d; ++c) {
    Vector v = es.eigenvectors().col(d - 1 - c);
    Eigen::Index arg;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0) v = -v;
    axes.col(c) = v;
  }
  return centered * axes;
}

inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::string matrix_to_csv(const Matrix& m, const std::vector<std::string>& header = {}) {
  std::string out;
  for (std::size_t i = 0; i < header.size(); ++i) out += (i ? "," : "") + header[i];
  if (!header.empty()) out += "\n";
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) out += (j ? "," : "") + format_double(m(i, j));
    out += "\n";
  }
  return out;
}

/// Parses numeric CSV; a first line that does not parse is treated as a header.
inline Matrix matrix_from_csv(std::string_view text) {
  std::vector<std::vector<double>> rows;
  io::detail::for_each_line(text, [&](std::string_view line, std::size_t lineno) {
    if (line.empty()) return;
    std::vector<double> row;
    bool ok = true;
    for (auto tok : io::detail::split_ws(line)) {
      double v;
      auto r = std::from_chars(tok.data(), tok.data() + tok.size(), v);
      if (r.ec != std::errc() || r.ptr != tok.data() + tok.size()) {
        ok = false;
        break;
      }
      row.push_back(v);
    }
    if (!ok) {
      if (lineno == 1) return;
      throw Error("malformed CSV", "line " + std::to_string(lineno));
    }
    if (!rows.empty() && row.size() != rows.front().size())
      throw Error("malformed CSV", "ragged row at line " + std::to_string(lineno));
    rows.push_back(std::move(row));
  });
  Matrix m(static_cast<Eigen::Index>(rows.size()), rows.empty() ? 0 : static_cast<Eigen::Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

struct MeanStd {
  double mean = 0;
  double std = 0;  // population standard deviation
};

inline MeanStd mean_std(const std::vector<double>& v) {
  if (v.empty()) return {};
  double m = 0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

}  // namespace taxograph
