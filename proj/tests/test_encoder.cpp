#include "support.hpp"

using namespace taxograph;
using testing_support::max_rel_error;
using testing_support::numeric_gradient;
using testing_support::random_matrix;
using testing_support::TempDir;
using testing_support::tiny_graph;

namespace {

TextRichGraph random_graph(NodeId n, int f, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution coin(p);
  std::vector<Edge> edges;
  for (NodeId i = 0; i < n; ++i)
    for (NodeId j = i + 1; j < n; ++j)
      if (coin(rng)) edges.push_back({i, j});
  auto g = tiny_graph(n, edges, {}, f);
  g.features = random_matrix(n, f, rng);
  return g;
}

// Straight-line dense evaluation: relu(A H W + b) per hidden layer, A H W + b last.
Matrix dense_reference(const EncoderParams& p, const TextRichGraph& g, bool normalize) {
  Matrix a = Matrix::Identity(g.n, g.n);
  for (const auto& e : g.edges) a(e.u, e.v) = a(e.v, e.u) = 1.0;
  Vector deg = a.rowwise().sum();
  Matrix dinv = deg.cwiseSqrt().cwiseInverse().asDiagonal();
  Matrix ahat = dinv * a * dinv;
  Matrix h = g.features;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Matrix pre = ahat * h * p.layers[l].weight + Matrix::Ones(g.n, 1) * p.layers[l].bias;
    h = l + 1 < p.layers.size() ? Matrix(pre.cwiseMax(0.0)) : pre;
  }
  if (normalize)
    for (Eigen::Index i = 0; i < h.rows(); ++i) h.row(i) /= h.row(i).norm();
  return h;
}

EncoderConfig small_config(NodeId in_dim, int layers = 2) {
  EncoderConfig c;
  c.in_dim = in_dim;
  c.num_layers = layers;
  c.hidden = 6;
  c.out_dim = 4;
  c.dropout = 0.0;
  c.seed = 42;
  return c;
}

template <typename Params>
Matrix flat_matrix(const Params& p) {
  auto v = flatten(p);
  return Eigen::Map<const Matrix>(v.data(), static_cast<Eigen::Index>(v.size()), 1);
}

template <typename Params>
Params with_flat(Params p, const Matrix& x) {
  unflatten(p, std::vector<double>(x.data(), x.data() + x.size()));
  return p;
}

}  // namespace

TEST(Augment, ZeroProbabilitiesKeepEverything) {
  std::mt19937_64 rng(1);
  auto g = random_graph(20, 5, 0.3, rng);
  auto v = augment(g, 0.0, 0.0, 9);
  EXPECT_EQ(v.kept_edges(), g.edges.size());
  auto in = make_input(g, v);
  auto base = make_input(g);
  EXPECT_TRUE(in.features == base.features);
  EXPECT_TRUE(Matrix(in.adjacency) == Matrix(base.adjacency));
}

TEST(Augment, SameSeedSameMask) {
  std::mt19937_64 rng(2);
  auto g = random_graph(60, 4, 0.6, rng);
  ASSERT_GE(g.edges.size(), 1000u);
  auto a = augment(g, 1.0 - 1e-9, 0.5, 77);
  auto b = augment(g, 1.0 - 1e-9, 0.5, 77);
  EXPECT_EQ(a.edge_kept, b.edge_kept);
  EXPECT_EQ(a.feature_kept, b.feature_kept);
  EXPECT_NE(augment(g, 0.5, 0.5, 78).edge_kept, augment(g, 0.5, 0.5, 79).edge_kept);
}

TEST(Augment, KeptEdgeCountIsBinomial) {
  std::mt19937_64 rng(3);
  auto g = random_graph(80, 10, 0.2, rng);
  const double p = 0.3, m = static_cast<double>(g.edges.size());
  double total = 0, cols = 0;
  const int seeds = 100;
  for (int s = 0; s < seeds; ++s) {
    auto v = augment(g, p, p, static_cast<std::uint64_t>(s));
    total += static_cast<double>(v.kept_edges());
    cols += static_cast<double>(std::count(v.feature_kept.begin(), v.feature_kept.end(), 1));
  }
  const double mean = total / seeds;
  const double sigma_mean = std::sqrt(m * p * (1 - p) / seeds);
  EXPECT_NEAR(mean, (1 - p) * m, 3 * sigma_mean);
  const double col_sigma = std::sqrt(10 * p * (1 - p) / seeds);
  EXPECT_NEAR(cols / seeds, (1 - p) * 10, 3 * col_sigma);
}

TEST(Augment, MaskedColumnsAreZeroForAllNodes) {
  std::mt19937_64 rng(4);
  auto g = random_graph(15, 12, 0.2, rng);
  auto v = augment(g, 0.3, 0.5, 5);
  auto in = make_input(g, v);
  for (Eigen::Index j = 0; j < 12; ++j) {
    if (v.feature_kept[static_cast<std::size_t>(j)])
      EXPECT_TRUE(in.features.col(j) == g.features.col(j));
    else
      EXPECT_TRUE(in.features.col(j).isZero(0));
  }
  EXPECT_THROW(augment(g, 1.0, 0.0, 0), Error);
  EXPECT_THROW(augment(g, 0.0, -0.1, 0), Error);
}

TEST(Encode, SingleNodeIdentityWeights) {
  auto g = tiny_graph(1, {}, {}, 3);
  g.features = (Matrix(1, 3) << 3.0, 0.0, 4.0).finished();
  auto cfg = small_config(3, 1);
  cfg.out_dim = 3;
  auto p = init_encoder(cfg);
  p.layers[0].weight = Matrix::Identity(3, 3);
  auto z = encode(p, make_input(g), true);
  EXPECT_NEAR(z(0, 0), 0.6, 1e-12);
  EXPECT_NEAR(z(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(z(0, 2), 0.8, 1e-12);
}

TEST(Encode, IsomorphicNodesGetEqualRows) {
  auto g = tiny_graph(3, {{0, 1}, {1, 2}}, {}, 4);
  std::mt19937_64 rng(6);
  g.features = random_matrix(3, 4, rng);
  g.features.row(2) = g.features.row(0);
  auto z = encode(init_encoder(small_config(4, 3)), make_input(g), true);
  EXPECT_LT((z.row(0) - z.row(2)).norm(), 1e-12);
}

TEST(Encode, MatchesDenseMatrixChain) {
  std::mt19937_64 rng(7);
  for (int layers : {1, 2, 3, 4}) {
    auto g = random_graph(8, 5, 0.35, rng);
    auto p = init_encoder(small_config(5, layers));
    for (auto& l : p.layers) l.bias = random_matrix(1, l.bias.cols(), rng, 0.1);
    for (bool normalize : {false, true}) {
      Matrix z = encode(p, make_input(g), normalize);
      EXPECT_LT((z - dense_reference(p, g, normalize)).cwiseAbs().maxCoeff(), 1e-6)
          << layers << " layers";
      if (normalize) {
        for (Eigen::Index i = 0; i < z.rows(); ++i) EXPECT_NEAR(z.row(i).norm(), 1.0, 1e-6);
      }
    }
  }
}

TEST(Encode, PermutationEquivariance) {
  std::mt19937_64 rng(8);
  auto g = random_graph(12, 4, 0.3, rng);
  auto cfg = small_config(4, 3);
  cfg.batchnorm = true;
  cfg.residual = true;
  cfg.hidden = 4;
  auto p = init_encoder(cfg);
  std::vector<NodeId> perm(12);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  TextRichGraph h = g;
  for (NodeId i = 0; i < 12; ++i) h.features.row(perm[static_cast<std::size_t>(i)]) = g.features.row(i);
  std::vector<Edge> edges;
  for (const auto& e : g.edges) edges.push_back({perm[static_cast<std::size_t>(e.u)], perm[static_cast<std::size_t>(e.v)]});
  h.edges = canonicalize_edges(edges);
  Matrix zg = encode(p, make_input(g), true);
  Matrix zh = encode(p, make_input(h), true);
  for (NodeId i = 0; i < 12; ++i)
    EXPECT_LT((zg.row(i) - zh.row(perm[static_cast<std::size_t>(i)])).norm(), 1e-10);
}

TEST(Encode, EvalModeIsPure) {
  std::mt19937_64 rng(9);
  auto g = random_graph(10, 4, 0.3, rng);
  auto cfg = small_config(4);
  cfg.dropout = 0.5;
  auto p = init_encoder(cfg);
  auto in = make_input(g);
  EXPECT_TRUE(encode_forward(p, in, Mode::Eval, true, 1).output ==
              encode_forward(p, in, Mode::Eval, true, 2).output);
  EXPECT_FALSE(encode_forward(p, in, Mode::Train, true, 1).output ==
               encode_forward(p, in, Mode::Train, true, 2).output);
}

TEST(Encode, ZeroRowWarnsAndStaysFinite) {
  auto g = tiny_graph(2, {}, {}, 2);
  g.features.row(1).setZero();
  auto cfg = small_config(2, 1);
  auto p = init_encoder(cfg);
  WarningCapture cap;
  auto r = encode_forward(p, make_input(g), Mode::Eval, true);
  EXPECT_EQ(r.zero_rows, 1u);
  EXPECT_EQ(cap.messages().size(), 1u);
  EXPECT_TRUE(r.output.allFinite());
  EXPECT_TRUE(r.output.row(1).isZero(0));
  // no gradient flows back through a zero row
  Matrix d = Matrix::Zero(2, r.output.cols());
  d.row(1).setOnes();
  auto grad = encode_backward(p, make_input(g), r, d);
  for (const auto* t : grad.tensors()) EXPECT_TRUE(t->isZero(0));
}

TEST(Encode, InitIsSeedDeterministic) {
  auto a = init_encoder(small_config(5, 3));
  auto b = init_encoder(small_config(5, 3));
  EXPECT_EQ(flatten(a), flatten(b));
  auto c = small_config(5, 3);
  c.seed = 43;
  EXPECT_NE(flatten(a), flatten(init_encoder(c)));
  EXPECT_THROW(init_encoder(small_config(0)), Error);
}

TEST(Classify, ZeroWeightsGiveUniformSoftmax) {
  std::mt19937_64 rng(10);
  Matrix z = random_matrix(5, 3, rng);
  Matrix probs = softmax_rows(classify(Matrix::Zero(3, 4), Matrix::Zero(1, 4), z));
  EXPECT_LT((probs.array() - 0.25).abs().maxCoeff(), 1e-15);
}

TEST(Classify, SoftmaxShiftInvariance) {
  std::mt19937_64 rng(11);
  Matrix logits = random_matrix(4, 5, rng, 3.0);
  Matrix shifted = logits.array() + 17.5;
  EXPECT_LT((softmax_rows(logits) - softmax_rows(shifted)).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Classify, CrossEntropyFiveNodes) {
  Matrix logits(5, 3);
  logits << 1, 0, 0,
            0, 2, 0,
            0, 0, 0,
            1, 1, 3,
           -1, 0, 1;
  Supervision sup{{0, 1, 3, 4}, {0, 1, 0, 2}};
  // hand values: -log softmax at the target entry
  const double expected = (std::log(std::exp(1.0) + 2.0) - 1.0 + std::log(std::exp(2.0) + 2.0) - 2.0 +
                           std::log(2 * std::exp(1.0) + std::exp(3.0)) - 1.0 +
                           std::log(std::exp(-1.0) + 1.0 + std::exp(1.0)) - 1.0) / 4.0;
  EXPECT_NEAR(cross_entropy(logits, sup).loss, expected, 1e-12);
}

TEST(Gradients, ConstantLossGivesZero) {
  std::mt19937_64 rng(12);
  auto g = random_graph(8, 4, 0.3, rng);
  auto p = init_encoder(small_config(4, 3));
  auto in = make_input(g);
  auto fwd = encode_forward(p, in, Mode::Train, true);
  auto grad = encode_backward(p, in, fwd, Matrix::Zero(8, 4));
  for (double v : flatten(grad)) EXPECT_EQ(v, 0.0);
}

TEST(Gradients, QuadraticWeightLoss) {
  // L = |theta|^2 / 2, checked through the flatten utilities and finite differences.
  auto p = init_encoder(small_config(3));
  Matrix x = flat_matrix(p);
  auto f = [](const Matrix& v) { return 0.5 * v.squaredNorm(); };
  EXPECT_LT(max_rel_error(numeric_gradient(x, f), x), 1e-8);
}

struct EncoderVariant {
  bool batchnorm, residual, normalize, dropout;
};

class EncoderGradient : public ::testing::TestWithParam<EncoderVariant> {};

TEST_P(EncoderGradient, LinearProbeMatchesFiniteDifferences) {
  const auto v = GetParam();
  std::mt19937_64 rng(13);
  auto g = random_graph(10, 5, 0.3, rng);
  auto cfg = small_config(5, 3);
  cfg.hidden = 5;
  cfg.batchnorm = v.batchnorm;
  cfg.residual = v.residual;
  cfg.dropout = v.dropout ? 0.3 : 0.0;
  auto p = init_encoder(cfg);
  for (auto& l : p.layers) l.bias = random_matrix(1, l.bias.cols(), rng, 0.2);
  auto in = make_input(g, augment(g, 0.2, 0.2, 3));
  const Matrix r = random_matrix(10, 4, rng);
  auto loss = [&](const EncoderParams& q) {
    return (encode_forward(q, in, Mode::Train, v.normalize, 99).output.array() * r.array()).sum();
  };
  auto fwd = encode_forward(p, in, Mode::Train, v.normalize, 99);
  Matrix analytic = flat_matrix(encode_backward(p, in, fwd, r));
  Matrix numeric = numeric_gradient(flat_matrix(p), [&](const Matrix& x) { return loss(with_flat(p, x)); });
  EXPECT_LT(max_rel_error(analytic, numeric), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Variants, EncoderGradient,
                         ::testing::Values(EncoderVariant{false, false, false, false},
                                           EncoderVariant{false, false, true, false},
                                           EncoderVariant{true, false, true, false},
                                           EncoderVariant{false, true, true, true},
                                           EncoderVariant{true, true, true, true}));

TEST(Gradients, SgclThroughEncoderMatchesFiniteDifferences) {
  std::mt19937_64 rng(14);
  auto g = random_graph(8, 5, 0.35, rng);
  g.labels = {0, 0, 1, 1, -1, -1, 0, 1};
  g.num_classes = 2;
  NodeSplit split{{0, 1, 2, 3}, {}, {4, 5, 6, 7}};
  auto s = build_similarity(g, split, SimilarityMode::Full);
  auto p = init_encoder(small_config(5));
  auto in1 = make_input(g, augment(g, 0.3, 0.3, 1));
  auto in2 = make_input(g, augment(g, 0.3, 0.3, 2));
  auto loss = [&](const EncoderParams& q) {
    return sgcl_loss(encode(q, in1, true), encode(q, in2, true), s, 1.0).loss;
  };
  auto f1 = encode_forward(p, in1, Mode::Eval, true);
  auto f2 = encode_forward(p, in2, Mode::Eval, true);
  auto res = sgcl_loss(f1.output, f2.output, s, 1.0);
  auto grad = encode_backward(p, in1, f1, res.d_z1);
  accumulate(grad, encode_backward(p, in2, f2, res.d_z2));
  Matrix numeric = numeric_gradient(flat_matrix(p), [&](const Matrix& x) { return loss(with_flat(p, x)); });
  EXPECT_LT(max_rel_error(flat_matrix(grad), numeric), 1e-4);
}

TEST(Gradients, ClassifierHeadAndCcc) {
  std::mt19937_64 rng(15);
  auto g = random_graph(12, 4, 0.3, rng);
  auto p = init_classifier(small_config(4), 3);
  Supervision sup{{0, 1, 2, 3, 4, 5}, {0, 1, 2, 0, 1, 2}};
  ClusterAssignment a{{0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3}, 4, {}};
  Matrix coph(4, 4);
  coph << 0, 2, 4, 4, 2, 0, 4, 4, 4, 4, 0, 2, 4, 4, 2, 0;
  auto in = make_input(g);
  auto loss = [&](const ClassifierParams& q) {
    Matrix z = encode(q.encoder, in, false);
    return total_loss(classify(q, z), sup, z, a, coph, 0.7).report.total;
  };
  auto fwd = encode_forward(p.encoder, in, Mode::Eval, false);
  Matrix logits = classify(p, fwd.output);
  auto tl = total_loss(logits, sup, fwd.output, a, coph, 0.7);
  ClassifierParams grad = p.zeros_like();
  grad.head_weight = fwd.output.transpose() * tl.d_logits;
  grad.head_bias = tl.d_logits.colwise().sum();
  Matrix dz = tl.d_logits * p.head_weight.transpose() + tl.d_z;
  grad.encoder = encode_backward(p.encoder, in, fwd, dz);
  Matrix numeric = numeric_gradient(flat_matrix(p), [&](const Matrix& x) { return loss(with_flat(p, x)); });
  EXPECT_LT(max_rel_error(flat_matrix(grad), numeric), 1e-4);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = init_encoder(small_config(3, 1));
  auto before = flatten(p);
  auto grad = p.zeros_like();
  for (auto* m : grad.tensors()) m->setConstant(2.0);
  AdamConfig cfg;
  cfg.weight_decay = 0;
  cfg.lr = 0.01;
  Adam opt(cfg);
  opt.step(p, grad);
  auto after = flatten(p);
  for (std::size_t i = 0; i < before.size(); ++i) EXPECT_NEAR(before[i] - after[i], 0.01, 1e-8);
}

TEST(Checkpoint, RoundTripIsFloat32Exact) {
  TempDir dir;
  auto cfg = small_config(5, 3);
  cfg.batchnorm = true;
  auto p = init_classifier(cfg, 4);
  save_checkpoint(p, dir / "cls.bin", {{"encoder", to_json(cfg)}, {"num_classes", 4}});
  auto q = load_classifier(dir / "cls.bin");
  auto a = flatten(p), b = flatten(q);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(static_cast<float>(a[i]), b[i]);
  EXPECT_EQ(q.encoder.config, cfg);

  save_checkpoint(p.encoder, dir / "enc.bin", {{"encoder", to_json(cfg)}});
  EXPECT_EQ(flatten(load_encoder(dir / "enc.bin")).size(), flatten(p.encoder).size());
  io::write_file(dir / "bad.bin", "XXXX0000000000000000");
  io::write_file(dir / "bad.bin.json", "{}");
  EXPECT_THROW(load_encoder(dir / "bad.bin"), std::exception);
}
