#include "support.hpp"

using namespace taxograph;
using testing_support::bfs_leaf_distances;
using testing_support::random_matrix;
using testing_support::random_tree;

namespace {

ClusterAssignment assignment_from_points(const Matrix& x, std::vector<int> a, int k) {
  ClusterAssignment c;
  c.assignment = std::move(a);
  c.k = k;
  c.centroids = cluster_means(x, c.assignment, k);
  return c;
}

std::set<NodeId> members_under(const TaxonomyTree& t, int id) {
  auto m = t.members_of(id);
  return {m.begin(), m.end()};
}

}  // namespace

TEST(Shape, ParseAndPresets) {
  EXPECT_EQ(parse_shape("cora").level_sizes, (std::vector<int>{1, 7, 64}));
  EXPECT_EQ(parse_shape("citeseer").level_sizes, (std::vector<int>{1, 6, 64}));
  EXPECT_EQ(parse_shape("arxiv").level_sizes, (std::vector<int>{1, 40, 128, 512, 2048}));
  EXPECT_EQ(parse_shape("(1, 4, 16)").level_sizes, (std::vector<int>{1, 4, 16}));
  EXPECT_THROW(parse_shape("1,4,4"), Error);
  EXPECT_THROW(parse_shape("2,4"), Error);
  EXPECT_THROW(parse_shape("1"), Error);
  EXPECT_THROW(parse_shape("1,,4"), Error);
}

TEST(Shape, Rescale) {
  TreeShape s{{1, 6, 64}};
  EXPECT_EQ(rescale_shape(s, 62).level_sizes, (std::vector<int>{1, 6, 62}));
  EXPECT_EQ(rescale_shape(s, 64).level_sizes, s.level_sizes);
  EXPECT_EQ(rescale_shape({{1, 12, 64, 256}}, 128).level_sizes, (std::vector<int>{1, 6, 32, 128}));
  // clamping keeps the shape strictly increasing
  EXPECT_EQ(rescale_shape({{1, 40, 128}}, 20).level_sizes, (std::vector<int>{1, 6, 20}));
  EXPECT_EQ(rescale_shape({{1, 63, 64}}, 8).level_sizes, (std::vector<int>{1, 7, 8}));
  EXPECT_EQ(rescale_shape({{1, 3, 6, 64}}, 5).level_sizes, (std::vector<int>{1, 2, 3, 5}));
  EXPECT_THROW(rescale_shape({{1, 2, 3, 64}}, 3), Error);
  EXPECT_THROW(rescale_shape({{1, 7}}, 1), Error);
}

TEST(BuildHierarchy, SiblingsMatchSeparatedPairs) {
  Matrix x(8, 2);
  x << 0, 0, 0.1, 0, 1, 0, 1.1, 0, 50, 50, 50.1, 50, 51, 50, 51.1, 50;
  auto leaves = assignment_from_points(x, {0, 0, 1, 1, 2, 2, 3, 3}, 4);
  auto t = build_hierarchy(leaves, {{1, 2, 4}});
  auto ids = t.leaves();
  EXPECT_EQ(t.node(ids[0]).parent, t.node(ids[1]).parent);
  EXPECT_EQ(t.node(ids[2]).parent, t.node(ids[3]).parent);
  EXPECT_NE(t.node(ids[0]).parent, t.node(ids[2]).parent);
  Matrix d = cophenetic_matrix(t);
  EXPECT_EQ(d(0, 1), 2.0);
  EXPECT_EQ(d(0, 2), 4.0);
}

TEST(BuildHierarchy, StarTree) {
  std::mt19937_64 rng(1);
  Matrix x = random_matrix(30, 3, rng);
  std::vector<int> a(30);
  for (int i = 0; i < 30; ++i) a[static_cast<std::size_t>(i)] = i % 5;
  auto t = build_hierarchy(assignment_from_points(x, a, 5), {{1, 5}});
  EXPECT_EQ(t.children(t.root()).size(), 5u);
  Matrix d = cophenetic_matrix(t);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) EXPECT_EQ(d(i, j), i == j ? 0.0 : 2.0);
}

TEST(BuildHierarchy, CiteseerLikeShapeAfterRefinement) {
  auto d = synthetic::planted_hierarchy({.coarse = 6, .fine = 11, .n = 1320, .dim = 16, .seed = 3});
  KMeansConfig cfg;
  cfg.k = 62;  // leaf count after refinement moved it off the preset's 64
  cfg.seed = 1;
  auto km = kmeans(d.graph.features, cfg);
  WarningCapture cap;
  auto t = build_hierarchy(km.clusters, parse_shape("citeseer"));
  std::map<int, int> per_level;
  for (const auto& n : t.nodes) ++per_level[n.level];
  EXPECT_EQ(per_level[1], 1);
  EXPECT_EQ(per_level[2], 6);
  EXPECT_EQ(per_level[3], 62);
  EXPECT_EQ(t.level_sizes, (std::vector<int>{1, 6, 62}));
  EXPECT_EQ(cap.messages().size(), 1u);
}

TEST(BuildHierarchy, MembersUnionAtEveryLevel) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const NodeId n = 120;
    Matrix x = random_matrix(n, 4, rng);
    KMeansConfig cfg;
    cfg.k = 24;
    cfg.seed = static_cast<std::uint64_t>(trial);
    auto km = kmeans(x, cfg);
    auto t = build_hierarchy(km.clusters, {{1, 3, 8, 24}}, {}, {.seed = static_cast<std::uint64_t>(trial)});
    for (const auto& node : t.nodes) {
      auto kids = t.children(node.id);
      if (kids.empty()) continue;
      std::set<NodeId> uni;
      std::size_t total = 0;
      for (int c : kids) {
        auto m = members_under(t, c);
        total += m.size();
        uni.insert(m.begin(), m.end());
      }
      EXPECT_EQ(total, uni.size());  // disjoint
      EXPECT_EQ(uni, members_under(t, node.id));
    }
    EXPECT_EQ(members_under(t, t.root()).size(), static_cast<std::size_t>(n));
  }
}

TEST(BuildHierarchy, SummariesLandOnLeaves) {
  Matrix x(6, 1);
  x << 0, 1, 10, 11, 20, 21;
  auto leaves = assignment_from_points(x, {0, 0, 1, 1, 2, 2}, 3);
  auto t = build_hierarchy(leaves, {{1, 3}}, {{"a", "sa"}, {"b", "sb"}, {"c", "sc"}});
  auto ids = t.leaves();
  EXPECT_EQ(t.node(ids[1]).label, "b");
  EXPECT_EQ(t.node(ids[2]).summary, "sc");
  EXPECT_EQ(t.leaf_assignment().assignment, leaves.assignment);
}

TEST(Cophenetic, ThreeLevelExamples) {
  TaxonomyTree t;
  t.depth = 3;
  t.level_sizes = {1, 2, 3};
  t.nodes = {{0, 1, std::nullopt, {}, "", "", {}}, {1, 2, 0, {}, "", "", {}},
             {2, 2, 0, {}, "", "", {}},            {3, 3, 1, {}, "", "", {0}},
             {4, 3, 1, {}, "", "", {1}},           {5, 3, 2, {}, "", "", {2}}};
  Matrix d = cophenetic_matrix(t);
  EXPECT_EQ(d(0, 1), 2.0);
  EXPECT_EQ(d(0, 2), 4.0);
  EXPECT_EQ(d(1, 2), 4.0);
}

TEST(Cophenetic, MatchesBfsAndIsUltrametric) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    const int depth = 2 + trial % 4;
    auto t = random_tree(depth, 40, rng);
    Matrix d = cophenetic_matrix(t);
    EXPECT_TRUE(d == bfs_leaf_distances(t)) << "trial " << trial;
    const auto k = d.rows();
    for (Eigen::Index i = 0; i < k; ++i) {
      EXPECT_EQ(d(i, i), 0.0);
      for (Eigen::Index j = 0; j < k; ++j) {
        EXPECT_EQ(d(i, j), d(j, i));
        const double v = d(i, j);
        EXPECT_EQ(std::fmod(v, 2.0), 0.0);
        EXPECT_LE(v, 2.0 * (depth - 1));
        for (Eigen::Index m = 0; m < k; ++m) EXPECT_LE(v, std::max(d(i, m), d(m, j)));
      }
    }
  }
}

TEST(Cohesion, Examples) {
  Matrix same(3, 2);
  same << 1, 2, 1, 2, 1, 2;
  EXPECT_NEAR(cohesion(same, same.row(0)).value, 1.0, 1e-12);

  Matrix opposite(2, 2);
  opposite << 1, 0, -1, 0;
  WarningCapture cap;
  Eigen::RowVectorXd mean = opposite.colwise().mean();
  auto r = cohesion(opposite, mean);
  EXPECT_TRUE(r.degenerate);
  EXPECT_NEAR(r.value, 0.0, 1e-12);
  EXPECT_TRUE(std::isfinite(r.value));
  EXPECT_EQ(cap.messages().size(), 1u);

  std::mt19937_64 rng(4);
  Matrix m = random_matrix(20, 8, rng);
  Eigen::RowVectorXd c = m.colwise().mean();
  double loop = 0;
  for (int i = 0; i < 20; ++i) loop += m.row(i).dot(c) / (m.row(i).norm() * c.norm());
  EXPECT_NEAR(cohesion(m, c).value, loop / 20, 1e-12);
  EXPECT_THROW(cohesion(Matrix(0, 8), c), Error);
}
