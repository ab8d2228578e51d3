#pragma once

#include "taxograph/common.hpp"
#include "taxograph/graph.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace taxograph {

enum class KMeansInit { KMeansPlusPlus, Random };

struct KMeansConfig {
  int k = 1;
  int max_iters = 100;
  double tol = 1e-6;  // max centroid shift
  std::uint64_t seed = 0;
  KMeansInit init = KMeansInit::KMeansPlusPlus;
  int restarts = 1;             // independent runs; the lowest SSE wins
  int local_trials = 0;         // k-means++ candidates per pick; 0 = 2 + floor(ln k), 1 = plain k-means++
  std::vector<double> weights;  // optional per-point weights (empty = unweighted)
  bool transfer_polish = true;  // single-point transfer passes after Lloyd converges
};

struct KMeansResult {
  ClusterAssignment clusters;
  double sse = 0;
  int iterations = 0;
  std::vector<double> sse_history;  // after the first assignment, then per update
};

namespace detail {

inline double weight_at(const KMeansConfig& c, Eigen::Index i) {
  return c.weights.empty() ? 1.0 : c.weights[static_cast<std::size_t>(i)];
}

inline Matrix init_centroids(const Matrix& x, const KMeansConfig& cfg, std::mt19937_64& rng) {
  const Eigen::Index n = x.rows();
  Matrix c(cfg.k, x.cols());
  if (cfg.init == KMeansInit::Random) {
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (int j = 0; j < cfg.k; ++j) {
      std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(j), idx.size() - 1);
      std::swap(idx[static_cast<std::size_t>(j)], idx[pick(rng)]);
      c.row(j) = x.row(idx[static_cast<std::size_t>(j)]);
    }
    return c;
  }
  std::uniform_int_distribution<Eigen::Index> first(0, n - 1);
  c.row(0) = x.row(first(rng));
  Vector d2(n);
  for (Eigen::Index i = 0; i < n; ++i) d2(i) = (x.row(i) - c.row(0)).squaredNorm();
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int trials = cfg.local_trials > 0 ? cfg.local_trials
                                          : 2 + static_cast<int>(std::log(static_cast<double>(cfg.k)));
  auto sample = [&](double total) {
    const double target = u(rng) * total;
    double acc = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      acc += weight_at(cfg, i) * d2(i);
      if (acc > target && d2(i) > 0) return i;
    }
    for (Eigen::Index i = n; i-- > 0;)
      if (d2(i) > 0) return i;
    return n - 1;
  };
  for (int j = 1; j < cfg.k; ++j) {
    double total = 0;
    for (Eigen::Index i = 0; i < n; ++i) total += weight_at(cfg, i) * d2(i);
    if (!(total > 0)) {
      c.row(j) = x.row(first(rng));
      continue;
    }
    // Greedy variant: draw several D^2-weighted candidates, keep the one that
    // lowers the potential most.
    Eigen::Index chosen = -1;
    double best_pot = std::numeric_limits<double>::infinity();
    Vector best_d2;
    for (int t = 0; t < trials; ++t) {
      const Eigen::Index cand = sample(total);
      Vector nd(n);
      double pot = 0;
      for (Eigen::Index i = 0; i < n; ++i) {
        nd(i) = std::min(d2(i), (x.row(i) - x.row(cand)).squaredNorm());
        pot += weight_at(cfg, i) * nd(i);
      }
      if (pot < best_pot) best_pot = pot, chosen = cand, best_d2 = std::move(nd);
    }
    c.row(j) = x.row(chosen);
    d2 = std::move(best_d2);
  }
  return c;
}

/// Nearest centroid with ties broken toward the lower index.
inline int nearest(const Matrix& c, const Eigen::Ref<const Eigen::RowVectorXd>& p, double* dist = nullptr) {
  int best = 0;
  double bd = std::numeric_limits<double>::infinity();
  for (Eigen::Index j = 0; j < c.rows(); ++j) {
    double d = (c.row(j) - p).squaredNorm();
    if (d < bd) {
      bd = d;
      best = static_cast<int>(j);
    }
  }
  if (dist) *dist = bd;
  return best;
}

inline double sse_of(const Matrix& x, const Matrix& c, const std::vector<int>& a,
                     const KMeansConfig& cfg) {
  double s = 0;
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    s += weight_at(cfg, i) * (x.row(i) - c.row(a[static_cast<std::size_t>(i)])).squaredNorm();
  return s;
}

inline Matrix weighted_means(const Matrix& x, const std::vector<int>& a, int k, const KMeansConfig& cfg) {
  Matrix c = Matrix::Zero(k, x.cols());
  Vector w = Vector::Zero(k);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int j = a[static_cast<std::size_t>(i)];
    c.row(j) += weight_at(cfg, i) * x.row(i);
    w(j) += weight_at(cfg, i);
  }
  for (int j = 0; j < k; ++j) c.row(j) /= w(j);
  return c;
}

/// Hartigan-style polish: move single points whenever the exact SSE change
/// of the transfer is negative. Each accepted move strictly lowers SSE.
inline bool transfer_pass(const Matrix& x, Matrix& c, std::vector<int>& a, const KMeansConfig& cfg) {
  const int k = cfg.k;
  Vector w = Vector::Zero(k);
  for (Eigen::Index i = 0; i < x.rows(); ++i) w(a[static_cast<std::size_t>(i)]) += weight_at(cfg, i);
  bool moved = false;
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const int from = a[static_cast<std::size_t>(i)];
    const double wi = weight_at(cfg, i);
    if (w(from) - wi <= 0 || wi <= 0) continue;
    const double leave = wi * w(from) / (w(from) - wi) * (x.row(i) - c.row(from)).squaredNorm();
    int to = -1;
    double best = 0;
    for (int j = 0; j < k; ++j) {
      if (j == from) continue;
      const double delta = wi * w(j) / (w(j) + wi) * (x.row(i) - c.row(j)).squaredNorm() - leave;
      if (delta < best - 1e-12 * leave) best = delta, to = j;
    }
    if (to < 0) continue;
    c.row(from) = (w(from) * c.row(from) - wi * x.row(i)) / (w(from) - wi);
    c.row(to) = (w(to) * c.row(to) + wi * x.row(i)) / (w(to) + wi);
    w(from) -= wi;
    w(to) += wi;
    a[static_cast<std::size_t>(i)] = to;
    moved = true;
  }
  return moved;
}

inline KMeansResult kmeans_single(const Matrix& x, const KMeansConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const Eigen::Index n = x.rows();
  Matrix c = init_centroids(x, cfg, rng);
  std::vector<int> a(static_cast<std::size_t>(n), -1);
  KMeansResult r;
  for (int it = 0; it < std::max(1, cfg.max_iters); ++it) {
    bool changed = false;
    std::vector<double> dist(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      int b = nearest(c, x.row(i), &dist[static_cast<std::size_t>(i)]);
      if (b != a[static_cast<std::size_t>(i)]) changed = true;
      a[static_cast<std::size_t>(i)] = b;
    }
    // Repair empty clusters by stealing the point farthest from its centroid
    // (taken only from clusters that keep at least one member).
    std::vector<NodeId> sizes(static_cast<std::size_t>(cfg.k), 0);
    for (int v : a) ++sizes[static_cast<std::size_t>(v)];
    for (int j = 0; j < cfg.k; ++j) {
      if (sizes[static_cast<std::size_t>(j)] > 0) continue;
      Eigen::Index far = -1;
      double fd = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        const auto ai = static_cast<std::size_t>(a[static_cast<std::size_t>(i)]);
        if (sizes[ai] > 1 && dist[static_cast<std::size_t>(i)] > fd) {
          fd = dist[static_cast<std::size_t>(i)];
          far = i;
        }
      }
      --sizes[static_cast<std::size_t>(a[static_cast<std::size_t>(far)])];
      a[static_cast<std::size_t>(far)] = j;
      sizes[static_cast<std::size_t>(j)] = 1;
      dist[static_cast<std::size_t>(far)] = 0;
      c.row(j) = x.row(far);
      changed = true;
    }
    if (it == 0) r.sse_history.push_back(sse_of(x, c, a, cfg));
    Matrix next = weighted_means(x, a, cfg.k, cfg);
    const double shift = (next - c).rowwise().norm().maxCoeff();
    c = std::move(next);
    r.sse_history.push_back(sse_of(x, c, a, cfg));
    r.iterations = it + 1;
    if (!changed || shift < cfg.tol) break;
  }
  if (cfg.transfer_polish) {
    for (int pass = 0; pass < std::max(1, cfg.max_iters); ++pass) {
      if (!transfer_pass(x, c, a, cfg)) break;
      c = weighted_means(x, a, cfg.k, cfg);  // drop incremental drift
      r.sse_history.push_back(sse_of(x, c, a, cfg));
    }
  }
  r.clusters.assignment = std::move(a);
  r.clusters.k = cfg.k;
  r.clusters.centroids = std::move(c);
  r.sse = r.sse_history.back();
  return r;
}

}  // namespace detail

/// Lloyd's algorithm with k-means++ (or random) seeding, empty-cluster repair
/// and optional restarts. Deterministic for a given seed.
inline KMeansResult kmeans(const Matrix& points, const KMeansConfig& cfg) {
  if (cfg.k < 1) throw Error("invalid config", "k must be >= 1");
  if (cfg.k > points.rows())
    throw Error("invalid config", "k = " + std::to_string(cfg.k) + " exceeds point count " +
                                      std::to_string(points.rows()));
  if (!points.allFinite()) throw Error("non-finite values", "kmeans points");
  if (!cfg.weights.empty() && static_cast<Eigen::Index>(cfg.weights.size()) != points.rows())
    throw Error("dimension mismatch", "kmeans weights");
  KMeansResult best;
  std::mt19937_64 seeder(cfg.seed);
  for (int run = 0; run < std::max(1, cfg.restarts); ++run) {
    const std::uint64_t s = run == 0 ? cfg.seed : seeder();
    auto r = detail::kmeans_single(points, cfg, s);
    if (run == 0 || r.sse < best.sse) best = std::move(r);
  }
  return best;
}

}  // namespace taxograph
