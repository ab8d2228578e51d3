#pragma once

#include "taxograph/common.hpp"
#include "taxograph/graph.hpp"

#include <algorithm>
#include <numeric>
#include <random>

namespace taxograph::synthetic {

struct Dataset {
  TextRichGraph graph;
  NodeSplit split;
  std::vector<int> coarse;  // planted coarse group per node (= block for SBM)
  std::vector<int> fine;    // planted fine cluster per node (= graph.labels)
};

/// Random train/val/test partition of all nodes.
inline NodeSplit random_split(NodeId n, double train_frac, double val_frac, std::mt19937_64& rng) {
  if (train_frac < 0 || val_frac < 0 || train_frac + val_frac > 1)
    throw Error("invalid config", "split fractions must be non-negative and sum to <= 1");
  std::vector<NodeId> ids(static_cast<std::size_t>(n));
  std::iota(ids.begin(), ids.end(), 0);
  std::shuffle(ids.begin(), ids.end(), rng);
  const auto nt = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
  const auto nv = static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n)));
  NodeSplit s;
  s.train.assign(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(nt));
  s.val.assign(ids.begin() + static_cast<std::ptrdiff_t>(nt), ids.begin() + static_cast<std::ptrdiff_t>(nt + nv));
  s.test.assign(ids.begin() + static_cast<std::ptrdiff_t>(nt + nv), ids.end());
  for (auto* part : {&s.train, &s.val, &s.test}) std::sort(part->begin(), part->end());
  return s;
}

namespace detail {

// float32 rounding keeps generated features identical after a save/load trip.
inline double f32(double v) { return static_cast<double>(static_cast<float>(v)); }

template <typename SameGroup>
std::vector<Edge> sample_edges(NodeId n, std::mt19937_64& rng, SameGroup&& prob) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<Edge> edges;
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j)
      if (u(rng) < prob(i, j)) edges.push_back({i, j});
  return edges;
}

}  // namespace detail

struct SbmConfig {
  NodeId n = 100;
  int blocks = 2;
  double p_in = 0.1;
  double p_out = 0.01;
  int feature_dim = 8;
  double feature_noise = 1.0;  // std of features around the block mean
  double train_frac = 0.3;
  double val_frac = 0.2;
  std::uint64_t seed = 0;
};

/// Stochastic block model with balanced contiguous blocks; labels are blocks.
inline Dataset sbm(const SbmConfig& c) {
  if (c.n < 2 || c.blocks < 2 || c.blocks > c.n) throw Error("invalid config", "sbm needs n >= blocks >= 2");
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Dataset d;
  auto& g = d.graph;
  g.n = c.n;
  g.num_classes = c.blocks;
  for (NodeId i = 0; i < c.n; ++i) g.labels.push_back(static_cast<int>(i * c.blocks / c.n));
  Matrix means(c.blocks, c.feature_dim);
  for (Eigen::Index i = 0; i < means.size(); ++i) means.data()[i] = gauss(rng);
  g.features.resize(c.n, c.feature_dim);
  for (NodeId i = 0; i < c.n; ++i)
    for (int j = 0; j < c.feature_dim; ++j)
      g.features(i, j) = detail::f32(means(g.labels[static_cast<std::size_t>(i)], j) + c.feature_noise * gauss(rng));
  g.edges = detail::sample_edges(c.n, rng, [&](NodeId i, NodeId j) {
    return g.labels[static_cast<std::size_t>(i)] == g.labels[static_cast<std::size_t>(j)] ? c.p_in : c.p_out;
  });
  for (NodeId i = 0; i < c.n; ++i)
    g.texts.push_back("[b" + std::to_string(g.labels[static_cast<std::size_t>(i)]) + "] synthetic document " +
                      std::to_string(i));
  d.coarse = d.fine = g.labels;
  d.split = random_split(c.n, c.train_frac, c.val_frac, rng);
  return d;
}

struct PlantedConfig {
  int coarse = 4;
  int fine = 4;  // fine clusters per coarse group
  NodeId n = 1600;
  int dim = 16;
  double coarse_spread = 4.0;  // std of coarse centers around the origin
  double fine_spread = 1.5;    // std of fine centers around their coarse center
  double sigma = 1.0;          // std of points around their fine center
  double p_fine = 0.05;        // edge probability inside a fine cluster
  double p_coarse = 0.005;     // same coarse group, different fine cluster
  double p_out = 0.0005;       // different coarse groups
  double train_frac = 0.2;
  double val_frac = 0.2;
  std::uint64_t seed = 0;
};

/// Two-level Gaussian mixture: C coarse centers, F fine centers around each,
/// points around the fine centers. Task labels are the C*F fine clusters.
/// Texts carry a "[c<i>f<j>]" marker of the node's fine cluster.
inline Dataset planted_hierarchy(const PlantedConfig& c) {
  const int k = c.coarse * c.fine;
  if (c.coarse < 1 || c.fine < 1 || k < 2 || c.n < k || c.dim < 1)
    throw Error("invalid config", "planted hierarchy needs n >= coarse*fine >= 2");
  std::mt19937_64 rng(c.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix coarse_centers(c.coarse, c.dim), fine_centers(k, c.dim);
  for (int a = 0; a < c.coarse; ++a)
    for (int j = 0; j < c.dim; ++j) coarse_centers(a, j) = c.coarse_spread * gauss(rng);
  for (int f = 0; f < k; ++f)
    for (int j = 0; j < c.dim; ++j) fine_centers(f, j) = coarse_centers(f / c.fine, j) + c.fine_spread * gauss(rng);

  Dataset d;
  auto& g = d.graph;
  g.n = c.n;
  g.num_classes = k;
  g.features.resize(c.n, c.dim);
  for (NodeId i = 0; i < c.n; ++i) {
    const int f = static_cast<int>(i * k / c.n);
    d.fine.push_back(f);
    d.coarse.push_back(f / c.fine);
    for (int j = 0; j < c.dim; ++j) g.features(i, j) = detail::f32(fine_centers(f, j) + c.sigma * gauss(rng));
    g.texts.push_back("[c" + std::to_string(f / c.fine) + "f" + std::to_string(f % c.fine) +
                      "] synthetic document " + std::to_string(i));
  }
  g.labels = d.fine;
  g.edges = detail::sample_edges(c.n, rng, [&](NodeId i, NodeId j) {
    const auto ui = static_cast<std::size_t>(i), uj = static_cast<std::size_t>(j);
    if (d.fine[ui] == d.fine[uj]) return c.p_fine;
    return d.coarse[ui] == d.coarse[uj] ? c.p_coarse : c.p_out;
  });
  d.split = random_split(c.n, c.train_frac, c.val_frac, rng);
  return d;
}

/// Writes the dataset plus its planted coarse/fine groupings.
inline void save_dataset(const std::filesystem::path& dir, const Dataset& d) {
  save_graph(dir, d.graph, d.split);
  io::write_file(dir / "coarse.txt", io::encode_labels(d.coarse));
  io::write_file(dir / "fine.txt", io::encode_labels(d.fine));
}

}  // namespace taxograph::synthetic
