#include "support.hpp"

using namespace taxograph;
using testing_support::random_matrix;

namespace {

// Pair-counting form, independent of the contingency-table implementation.
double ari_by_pairs(const std::vector<int>& x, const std::vector<int>& y) {
  double a = 0, b = 0, c = 0, d = 0;
  for (std::size_t i = 0; i < x.size(); ++i)
    for (std::size_t j = i + 1; j < x.size(); ++j) {
      const bool sx = x[i] == x[j], sy = y[i] == y[j];
      if (sx && sy) ++a;
      else if (sx) ++b;
      else if (sy) ++c;
      else ++d;
    }
  const double den = (a + b) * (b + d) + (a + c) * (c + d);
  return den == 0 ? 1.0 : 2 * (a * d - b * c) / den;
}

}  // namespace

TEST(Ari, KnownValues) {
  EXPECT_DOUBLE_EQ(adjusted_rand_index({0, 0, 1, 1}, {0, 0, 1, 1}), 1.0);
  EXPECT_DOUBLE_EQ(adjusted_rand_index({0, 0, 1, 1}, {1, 1, 0, 0}), 1.0);
  EXPECT_NEAR(adjusted_rand_index({0, 0, 1, 1}, {0, 0, 1, 2}), 4.0 / 7.0, 1e-12);
  EXPECT_NEAR(adjusted_rand_index({0, 0, 0, 0}, {0, 1, 2, 3}), 0.0, 1e-12);
  EXPECT_THROW(adjusted_rand_index({0}, {0, 1}), Error);
}

TEST(Ari, MatchesPairCounting) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 2 + trial % 40;
    std::uniform_int_distribution<int> ka(0, 1 + trial % 5), kb(0, 1 + trial % 7);
    std::vector<int> x(static_cast<std::size_t>(n)), y(x.size());
    for (auto& v : x) v = ka(rng);
    for (auto& v : y) v = kb(rng);
    EXPECT_NEAR(adjusted_rand_index(x, y), ari_by_pairs(x, y), 1e-10) << "trial " << trial;
    EXPECT_NEAR(adjusted_rand_index(x, y), adjusted_rand_index(y, x), 1e-12);
  }
}

TEST(Accuracy, CountsAndErrors) {
  auto g = testing_support::tiny_graph(4, {}, {0, 1, 1, -1});
  Matrix logits(4, 2);
  logits << 2, 1, 0, 3, 5, 1, 0, 0;
  EXPECT_DOUBLE_EQ(accuracy(logits, g, {0, 1, 2}), 2.0 / 3.0);
  EXPECT_THROW(accuracy(logits, g, {}), Error);
  EXPECT_THROW(accuracy(logits, g, {3}), Error);
  auto pc = per_class_accuracy(logits, g, {1, 2});
  EXPECT_TRUE(std::isnan(pc[0]));
  EXPECT_DOUBLE_EQ(pc[1], 0.5);
}

TEST(Accuracy, ArgmaxTieIsLowestIndex) {
  Matrix logits(1, 3);
  logits << 1, 1, 1;
  EXPECT_EQ(predictions(logits)[0], 0);
}

TEST(Pca, MatchesSvdAndFixesSigns) {
  std::mt19937_64 rng(2);
  Matrix x = random_matrix(50, 5, rng);
  x.col(0) *= 5;
  x.col(3) *= 2;
  Matrix p = pca_2d(x);
  Matrix centered = x.rowwise() - x.colwise().mean();
  Eigen::JacobiSVD<Matrix> svd(centered, Eigen::ComputeThinU | Eigen::ComputeThinV);
  for (int c = 0; c < 2; ++c) {
    Vector ref = svd.matrixU().col(c) * svd.singularValues()(c);
    const double s = ref.dot(p.col(c)) >= 0 ? 1.0 : -1.0;
    EXPECT_LT((p.col(c) - s * ref).norm(), 1e-8);
    Vector axis = svd.matrixV().col(c) * s;
    Eigen::Index arg;
    axis.cwiseAbs().maxCoeff(&arg);
    EXPECT_GT(axis(arg), 0);
  }
  EXPECT_NEAR(p.col(0).mean(), 0.0, 1e-10);
  // deterministic given the sign rule
  EXPECT_LT((pca_2d(x) - p).norm(), 1e-12);
  Matrix one = random_matrix(10, 1, rng);
  Matrix q = pca_2d(one);
  EXPECT_EQ(q.cols(), 2);
  EXPECT_LT(q.col(1).norm(), 1e-12);
  EXPECT_THROW(pca_2d(Matrix(0, 3)), Error);
}

TEST(Csv, RoundTripIsExact) {
  std::mt19937_64 rng(3);
  Matrix m = random_matrix(7, 4, rng, 1e3);
  m(0, 0) = 1e-300;
  m(1, 1) = -0.1;
  auto text = matrix_to_csv(m, {"a", "b", "c", "d"});
  EXPECT_EQ(text.substr(0, 8), "a,b,c,d\n");
  Matrix back = matrix_from_csv(text);
  EXPECT_TRUE(back == m);
  EXPECT_TRUE(matrix_from_csv(matrix_to_csv(m)) == m);
  EXPECT_THROW(matrix_from_csv("1,2\n3\n"), Error);
  EXPECT_THROW(matrix_from_csv("1,2\nx,y\n"), Error);
}

TEST(MeanStd, Population) {
  auto r = mean_std({1, 2, 3, 4});
  EXPECT_DOUBLE_EQ(r.mean, 2.5);
  EXPECT_DOUBLE_EQ(r.std, std::sqrt(1.25));
  auto z = mean_std({0.7});
  EXPECT_DOUBLE_EQ(z.std, 0.0);
}
