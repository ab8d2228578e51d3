#pragma once

#include "taxograph/common.hpp"
#include "taxograph/graph.hpp"
#include "taxograph/similarity.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <optional>

namespace taxograph {

struct SgclConfig {
  double gamma = 1.0;
};

struct SgclResult {
  double loss = 0;
  Matrix d_z1;
  Matrix d_z2;
};

namespace detail {

// Exactly-zero rows are the encoder's guarded output for zero embeddings.
inline void require_unit_rows(const Matrix& z, const char* name) {
  for (Eigen::Index i = 0; i < z.rows(); ++i)
    if (const double nrm = z.row(i).norm(); std::abs(nrm - 1.0) > 1e-6 && nrm != 0.0)
      throw Error("precondition", std::string(name) + " row " + std::to_string(i) + " is not unit-norm");
}

}  // namespace detail

/// Similarity-guided contrastive loss over all ordered cross-view pairs:
///   L = -sum_{S_ij = 1} z1_i . z2_j + gamma * sum_{S_ij = 0} (z1_i . z2_j)^2
///
/// The negative sum is taken as (all pairs) - (positive pairs), with the
/// all-pairs square term equal to <Z1^T Z1, Z2^T Z2>_F, so the cost is
/// O(n d^2 + |groups| d^2 + |extra pairs| d) and no n x n matrix is formed.
inline SgclResult sgcl_loss(const Matrix& z1, const Matrix& z2, const SimilarityMatrix& s,
                            double gamma) {
  if (z1.rows() != s.n || z2.rows() != s.n || z1.cols() != z2.cols())
    throw Error("dimension mismatch", "sgcl inputs");
  detail::require_unit_rows(z1, "Z1");
  detail::require_unit_rows(z2, "Z2");

  const Matrix m1 = z1.transpose() * z1;
  const Matrix m2 = z2.transpose() * z2;
  double all_sq = (m1.array() * m2.array()).sum();
  Matrix d1 = 2.0 * gamma * (z1 * m2);
  Matrix d2 = 2.0 * gamma * (z2 * m1);

  double pos_lin = 0, pos_sq = 0;
  for (const auto& grp : s.groups) {
    Matrix a = detail::gather_rows(z1, grp);
    Matrix b = detail::gather_rows(z2, grp);
    Eigen::RowVectorXd sa = a.colwise().sum();
    Eigen::RowVectorXd sb = b.colwise().sum();
    Matrix ga = a.transpose() * a;
    Matrix gb = b.transpose() * b;
    pos_lin += sa.dot(sb);
    pos_sq += (ga.array() * gb.array()).sum();
    Matrix sq1 = 2.0 * (a * gb);
    Matrix sq2 = 2.0 * (b * ga);
    for (std::size_t r = 0; r < grp.size(); ++r) {
      const auto i = grp[r];
      const auto rr = static_cast<Eigen::Index>(r);
      d1.row(i) += -sb - gamma * sq1.row(rr);
      d2.row(i) += -sa - gamma * sq2.row(rr);
    }
  }
  for (NodeId i = 0; i < s.n; ++i) {
    if (s.group_of[static_cast<std::size_t>(i)] >= 0) continue;
    const double g = z1.row(i).dot(z2.row(i));
    pos_lin += g;
    pos_sq += g * g;
    d1.row(i) += -z2.row(i) - gamma * 2.0 * g * z2.row(i);
    d2.row(i) += -z1.row(i) - gamma * 2.0 * g * z1.row(i);
  }
  for (const auto& e : s.extra_pairs) {
    const double gij = z1.row(e.u).dot(z2.row(e.v));
    const double gji = z1.row(e.v).dot(z2.row(e.u));
    pos_lin += gij + gji;
    pos_sq += gij * gij + gji * gji;
    d1.row(e.u) += -z2.row(e.v) - gamma * 2.0 * gij * z2.row(e.v);
    d2.row(e.v) += -z1.row(e.u) - gamma * 2.0 * gij * z1.row(e.u);
    d1.row(e.v) += -z2.row(e.u) - gamma * 2.0 * gji * z2.row(e.u);
    d2.row(e.u) += -z1.row(e.v) - gamma * 2.0 * gji * z1.row(e.v);
  }
  return {-pos_lin + gamma * (all_sq - pos_sq), std::move(d1), std::move(d2)};
}

/// Row i = mean embedding of cluster i's members.
inline Matrix prototypes(const Matrix& z, const ClusterAssignment& a) {
  if (static_cast<Eigen::Index>(a.assignment.size()) != z.rows())
    throw Error("dimension mismatch", "assignment size != embedding rows");
  return cluster_means(z, a.assignment, a.k);
}

inline Matrix pairwise_distances(const Matrix& p) {
  const Eigen::Index k = p.rows();
  Matrix d = Matrix::Zero(k, k);
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j) d(i, j) = d(j, i) = (p.row(i) - p.row(j)).norm();
  return d;
}

struct CccResult {
  double value = 0;
  bool defined = false;
};

/// Pearson correlation between the strict upper triangles of two k x k
/// matrices. Undefined when either side has zero variance (always for k < 3).
inline CccResult ccc(const Matrix& d, const Matrix& d_coph) {
  if (d.rows() != d.cols() || d.rows() != d_coph.rows() || d_coph.rows() != d_coph.cols())
    throw Error("dimension mismatch", "ccc expects two k x k matrices");
  const Eigen::Index k = d.rows();
  const Eigen::Index m = k * (k - 1) / 2;
  if (m == 0) return {};
  Vector x(m), y(m);
  Eigen::Index t = 0;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j, ++t) {
      x(t) = d(i, j);
      y(t) = d_coph(i, j);
    }
  x.array() -= x.mean();
  y.array() -= y.mean();
  const double sxx = x.squaredNorm(), syy = y.squaredNorm();
  if (!(sxx > 0) || !(syy > 0)) return {};
  double r = x.dot(y) / (std::sqrt(sxx) * std::sqrt(syy));
  return {std::clamp(r, -1.0, 1.0), true};
}

inline constexpr double kDistanceEps = 1e-9;

struct CccRegResult {
  double loss = 0;
  CccResult ccc;
  Matrix d_z;
};

/// 1 - CCC(D(prototypes(Z)), D_coph) and its gradient w.r.t. Z. D_coph is
/// constant. An undefined CCC contributes zero loss and zero gradient.
inline CccRegResult ccc_reg_loss(const Matrix& z, const ClusterAssignment& a, const Matrix& d_coph) {
  CccRegResult r;
  r.d_z = Matrix::Zero(z.rows(), z.cols());
  const Matrix p = prototypes(z, a);
  const Eigen::Index k = p.rows();
  if (d_coph.rows() != k) throw Error("dimension mismatch", "D_coph size != cluster count");
  const Matrix d = pairwise_distances(p);
  r.ccc = ccc(d, d_coph);
  if (!r.ccc.defined) {
    warn("ccc undefined (zero variance or k < 3); regularizer contributes 0");
    return r;
  }
  r.loss = 1.0 - r.ccc.value;

  const Eigen::Index m = k * (k - 1) / 2;
  double xbar = 0, ybar = 0;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j) {
      xbar += d(i, j);
      ybar += d_coph(i, j);
    }
  xbar /= static_cast<double>(m);
  ybar /= static_cast<double>(m);
  double sxx = 0, syy = 0;
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j) {
      sxx += (d(i, j) - xbar) * (d(i, j) - xbar);
      syy += (d_coph(i, j) - ybar) * (d_coph(i, j) - ybar);
    }
  const double na = std::sqrt(sxx), nb = std::sqrt(syy);
  const double rho = r.ccc.value;

  Matrix d_p = Matrix::Zero(k, p.cols());
  for (Eigen::Index i = 0; i < k; ++i)
    for (Eigen::Index j = i + 1; j < k; ++j) {
      const double dr = (d_coph(i, j) - ybar) / (na * nb) - rho * (d(i, j) - xbar) / sxx;
      const double dl = -dr;
      Eigen::RowVectorXd dir = (p.row(i) - p.row(j)) / std::max(d(i, j), kDistanceEps);
      d_p.row(i) += dl * dir;
      d_p.row(j) -= dl * dir;
    }
  const auto sizes = a.sizes();
  for (Eigen::Index n = 0; n < z.rows(); ++n) {
    const int c = a.assignment[static_cast<std::size_t>(n)];
    r.d_z.row(n) = d_p.row(c) / static_cast<double>(sizes[static_cast<std::size_t>(c)]);
  }
  return r;
}

/// A labeled node used for supervision.
struct Supervision {
  std::vector<NodeId> nodes;
  std::vector<int> labels;

  static Supervision from(const TextRichGraph& g, const std::vector<NodeId>& ids) {
    Supervision s;
    for (NodeId i : ids)
      if (g.labeled(i)) {
        s.nodes.push_back(i);
        s.labels.push_back(g.label(i));
      }
    return s;
  }
};

struct CrossEntropyResult {
  double loss = 0;
  Matrix d_logits;
};

/// Mean softmax cross-entropy over the supervised rows.
inline CrossEntropyResult cross_entropy(const Matrix& logits, const Supervision& sup) {
  if (sup.nodes.empty()) throw Error("empty supervision", "no labeled training nodes");
  CrossEntropyResult r;
  r.d_logits = Matrix::Zero(logits.rows(), logits.cols());
  const double inv = 1.0 / static_cast<double>(sup.nodes.size());
  for (std::size_t t = 0; t < sup.nodes.size(); ++t) {
    const NodeId i = sup.nodes[t];
    const int y = sup.labels[t];
    if (y < 0 || y >= logits.cols()) throw Error("out-of-range id", "label " + std::to_string(y));
    const double mx = logits.row(i).maxCoeff();
    Eigen::RowVectorXd e = (logits.row(i).array() - mx).exp();
    const double z = e.sum();
    r.loss += (std::log(z) + mx - logits(i, y)) * inv;
    r.d_logits.row(i) = e / z * inv;
    r.d_logits(i, y) -= inv;
  }
  return r;
}

struct LossReport {
  double total = 0;
  double ce = 0;
  double sgcl = 0;
  double ccc_reg = 0;
  std::optional<double> ccc_value;  // empty when undefined
};

inline nlohmann::json to_json(const LossReport& r) {
  return {{"total", r.total},
          {"components", {{"ce", r.ce}, {"sgcl", r.sgcl}, {"ccc_reg", r.ccc_reg}}},
          {"ccc_value", r.ccc_value ? nlohmann::json(*r.ccc_value) : nlohmann::json(nullptr)}};
}

struct TotalLossResult {
  LossReport report;
  Matrix d_logits;
  Matrix d_z;
};

/// L_total = L_CE + lambda * L_CCC. With lambda == 0 the regularizer is
/// only measured, so the total and gradients are bit-identical to CE.
inline TotalLossResult total_loss(const Matrix& logits, const Supervision& sup, const Matrix& z,
                                  const ClusterAssignment& a, const Matrix& d_coph, double lambda) {
  if (!(lambda >= 0) || !std::isfinite(lambda)) throw Error("invalid config", "lambda must be finite and >= 0");
  TotalLossResult r;
  auto ce = cross_entropy(logits, sup);
  r.report.ce = ce.loss;
  r.d_logits = std::move(ce.d_logits);
  r.report.total = ce.loss;
  if (lambda == 0.0) {
    // Still report the alignment, but keep it out of the loss and gradient.
    auto c = ccc(pairwise_distances(prototypes(z, a)), d_coph);
    if (c.defined) {
      r.report.ccc_value = c.value;
      r.report.ccc_reg = 1.0 - c.value;
    }
    r.d_z = Matrix::Zero(z.rows(), z.cols());
    return r;
  }
  auto reg = ccc_reg_loss(z, a, d_coph);
  r.report.ccc_reg = reg.loss;
  if (reg.ccc.defined) r.report.ccc_value = reg.ccc.value;
  r.report.total = ce.loss + lambda * reg.loss;
  r.d_z = lambda * reg.d_z;
  return r;
}

}  // namespace taxograph
