#pragma once

#include "taxograph/config.hpp"
#include "taxograph/encoder.hpp"
#include "taxograph/hierarchy.hpp"
#include "taxograph/kmeans.hpp"
#include "taxograph/metrics.hpp"
#include "taxograph/objectives.hpp"
#include "taxograph/refiner.hpp"
#include "taxograph/similarity.hpp"
#include "taxograph/taxonomy_tree.hpp"

#include <nlohmann/json.hpp>

namespace taxograph {

using EpochLog = std::function<void(int epoch, const LossReport&)>;

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view purpose, std::uint64_t index = 0) {
  return fnv1a(std::string(purpose) + ":" + std::to_string(index), fnv1a(std::to_string(seed)));
}

// ---------------------------------------------------------------------------
// Stage 1: contrastive pretraining

struct PretrainResult {
  EncoderParams params;
  std::vector<double> losses;  // one per epoch
};

inline PretrainResult pretrain(const TextRichGraph& g, const NodeSplit& split, const PipelineConfig& cfg,
                               std::uint64_t seed, const EpochLog& log = {}) {
  cfg.validate();
  validate_graph(g);
  validate_split(split, g);
  EncoderConfig ec = cfg.pretrain_encoder;
  ec.in_dim = g.feature_dim();
  ec.seed = derive_seed(seed, "pretrain-init");
  PretrainResult r{init_encoder(ec), {}};
  const auto s = build_similarity(g, split, cfg.similarity_mode);
  Adam opt(cfg.sgcl.adam);
  for (int epoch = 0; epoch < cfg.sgcl.epochs; ++epoch) {
    const auto e = static_cast<std::uint64_t>(epoch);
    auto in1 = make_input(g, augment(g, cfg.sgcl.p_edge, cfg.sgcl.p_feat, derive_seed(seed, "view1", e)));
    auto in2 = make_input(g, augment(g, cfg.sgcl.p_edge, cfg.sgcl.p_feat, derive_seed(seed, "view2", e)));
    auto f1 = encode_forward(r.params, in1, Mode::Train, true, derive_seed(seed, "drop1", e));
    auto f2 = encode_forward(r.params, in2, Mode::Train, true, derive_seed(seed, "drop2", e));
    auto loss = sgcl_loss(f1.output, f2.output, s, cfg.sgcl.gamma);
    if (!std::isfinite(loss.loss)) throw Error("non-finite loss", "pretraining epoch " + std::to_string(epoch));
    auto grad = encode_backward(r.params, in1, f1, loss.d_z1);
    accumulate(grad, encode_backward(r.params, in2, f2, loss.d_z2));
    if (!all_finite(grad)) throw Error("non-finite loss", "gradient at pretraining epoch " + std::to_string(epoch));
    opt.step(r.params, grad);
    r.losses.push_back(loss.loss);
    if (log) {
      LossReport rep;
      rep.sgcl = rep.total = loss.loss;
      log(epoch, rep);
    }
  }
  return r;
}

/// Frozen-encoder embeddings used for clustering (eval mode, unit rows).
inline Matrix embed(const EncoderParams& p, const TextRichGraph& g) { return encode(p, make_input(g), true); }

// ---------------------------------------------------------------------------
// Taxonomy construction

struct TaxonomyResult {
  TaxonomyTree tree;
  ClusterAssignment initial;  // flat k-means before refinement
  ClusterAssignment leaves;   // after refinement
  Transcript transcript;
  RefineStats stats;
};

/// k-means(k_L) on the embeddings, optional refinement, then the bottom-up
/// hierarchy. `refiner == nullptr` gives the pure hierarchical k-means tree.
inline TaxonomyResult construct_taxonomy(const Matrix& embeddings, const TextRichGraph& g, const PipelineConfig& cfg,
                                         Refiner* refiner, std::uint64_t seed) {
  cfg.validate();
  const auto& shape = cfg.taxonomy.shape;
  KMeansConfig kc;
  kc.k = shape.leaves();
  kc.seed = derive_seed(seed, "leaf-kmeans");
  kc.restarts = cfg.taxonomy.kmeans_restarts;
  kc.max_iters = cfg.taxonomy.kmeans_max_iters;
  TaxonomyResult r;
  r.initial = kmeans(embeddings, kc).clusters;
  std::vector<ClusterSummary> summaries;
  if (refiner) {
    if (static_cast<NodeId>(g.texts.size()) != g.n) throw Error("invalid input", "refinement needs node texts");
    RefinerConfig rc = cfg.refiner_config;
    rc.seed = derive_seed(seed, "refine", rc.seed);
    auto out = refine(r.initial, embeddings, g.texts, *refiner, rc);
    r.leaves = std::move(out.assignment);
    summaries = std::move(out.summaries);
    r.transcript = std::move(out.transcript);
    r.stats = out.stats;
  } else {
    r.leaves = r.initial;
  }
  HierarchyOptions ho;
  ho.seed = derive_seed(seed, "hierarchy");
  ho.restarts = cfg.taxonomy.kmeans_restarts;
  ho.weight_by_size = cfg.taxonomy.weight_by_size;
  r.tree = build_hierarchy(r.leaves, shape, summaries, ho);
  return r;
}

/// ClusterAssignment of the tree's leaves with centroids of `z`.
inline ClusterAssignment leaf_clusters(const TaxonomyTree& t, const Matrix& z) {
  ClusterAssignment a;
  a.assignment = t.leaf_assignment().assignment;
  a.k = static_cast<int>(t.leaves().size());
  if (static_cast<Eigen::Index>(a.assignment.size()) != z.rows())
    throw Error("dimension mismatch", "taxonomy covers " + std::to_string(a.assignment.size()) + " nodes, graph has " +
                                          std::to_string(z.rows()));
  a.centroids = cluster_means(z, a.assignment, a.k);
  return a;
}

// ---------------------------------------------------------------------------
// Stage 2: regularized classifier

struct TrainMetrics {
  std::uint64_t seed = 0;
  double accuracy = 0;      // test accuracy at the best validation epoch
  double val_accuracy = 0;
  double ccc_final = 0;     // NaN when undefined
  int epochs_run = 0;
  int best_epoch = 0;
  std::string config_hash;
};

inline nlohmann::json to_json(const TrainMetrics& m) {
  return {{"seed", m.seed},
          {"accuracy", m.accuracy},
          {"val_accuracy", m.val_accuracy},
          {"ccc_final", std::isnan(m.ccc_final) ? nlohmann::json(nullptr) : nlohmann::json(m.ccc_final)},
          {"epochs_run", m.epochs_run},
          {"best_epoch", m.best_epoch},
          {"config_hash", m.config_hash}};
}

struct TrainResult {
  ClassifierParams params;  // best-validation parameters
  TrainMetrics metrics;
  std::vector<LossReport> losses;  // one per epoch
};

struct EncodedClassifier {
  ForwardResult forward;
  Matrix logits;
};

inline EncodedClassifier run_classifier(const ClassifierParams& p, const GraphInput& in, Mode mode, bool normalize,
                                        std::uint64_t dropout_seed = 0) {
  EncodedClassifier r{encode_forward(p.encoder, in, mode, normalize, dropout_seed), {}};
  r.logits = classify(p, r.forward.output);
  return r;
}

/// CCC of the eval-mode embedding prototypes against the tree; NaN if undefined.
inline double embedding_ccc(const Matrix& z, const TaxonomyTree& t) {
  auto a = leaf_clusters(t, z);
  auto c = ccc(pairwise_distances(prototypes(z, a)), cophenetic_matrix(t));
  return c.defined ? c.value : std::numeric_limits<double>::quiet_NaN();
}

inline TrainResult train_classifier(const TextRichGraph& g, const NodeSplit& split, const TaxonomyTree& tree,
                                    const PipelineConfig& cfg, std::uint64_t seed, const EpochLog& log = {}) {
  cfg.validate();
  validate_graph(g);
  validate_split(split, g);
  const auto sup = Supervision::from(g, split.train);
  if (sup.nodes.empty()) throw Error("empty supervision", "no labeled training nodes");
  if (g.num_classes < 1) throw Error("empty supervision", "graph has no classes");
  const auto& dc = cfg.downstream;
  const auto in = make_input(g);
  const Matrix d_coph = cophenetic_matrix(tree);
  ClusterAssignment leaves;
  leaves.assignment = tree.leaf_assignment().assignment;
  leaves.k = static_cast<int>(tree.leaves().size());
  if (static_cast<NodeId>(leaves.assignment.size()) != g.n)
    throw Error("dimension mismatch", "taxonomy does not cover the graph");

  EncoderConfig ec = cfg.classifier_encoder;
  ec.in_dim = g.feature_dim();
  ec.seed = derive_seed(seed, "classifier-init");
  TrainResult r{init_classifier(ec, g.num_classes), {}, {}};
  r.metrics.seed = seed;
  r.metrics.config_hash = config_hash(cfg);
  ClassifierParams best = r.params;
  double best_val = -1;
  int since_best = 0;
  const bool has_val = !split.val.empty();
  Adam opt(dc.adam);

  for (int epoch = 0; epoch < dc.epochs; ++epoch) {
    auto fw = run_classifier(r.params, in, Mode::Train, dc.normalize_embeddings,
                             derive_seed(seed, "classifier-drop", static_cast<std::uint64_t>(epoch)));
    auto loss = total_loss(fw.logits, sup, fw.forward.output, leaves, d_coph, dc.lambda);
    if (!std::isfinite(loss.report.total))
      throw Error("non-finite loss", "classifier epoch " + std::to_string(epoch));
    ClassifierParams grad = r.params.zeros_like();
    grad.head_weight = fw.forward.output.transpose() * loss.d_logits;
    grad.head_bias = loss.d_logits.colwise().sum();
    Matrix d_z = loss.d_logits * r.params.head_weight.transpose() + loss.d_z;
    grad.encoder = encode_backward(r.params.encoder, in, fw.forward, d_z);
    if (!all_finite(grad)) throw Error("non-finite loss", "gradient at classifier epoch " + std::to_string(epoch));
    opt.step(r.params, grad);
    r.losses.push_back(loss.report);
    if (log) log(epoch, loss.report);
    r.metrics.epochs_run = epoch + 1;

    auto ev = run_classifier(r.params, in, Mode::Eval, dc.normalize_embeddings);
    const double val = has_val ? accuracy(ev.logits, g, split.val) : -loss.report.total;
    if (val > best_val) {
      best_val = val;
      best = r.params;
      r.metrics.best_epoch = epoch + 1;
      since_best = 0;
    } else if (++since_best >= dc.patience) {
      break;
    }
  }
  r.params = std::move(best);
  auto ev = run_classifier(r.params, in, Mode::Eval, dc.normalize_embeddings);
  r.metrics.val_accuracy = has_val ? accuracy(ev.logits, g, split.val) : 0.0;
  r.metrics.accuracy = split.test.empty() ? 0.0 : accuracy(ev.logits, g, split.test);
  r.metrics.ccc_final = embedding_ccc(ev.forward.output, tree);
  return r;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalReport {
  double accuracy = 0;
  std::vector<double> per_class;
  double ccc_final = 0;
  Matrix distances;   // k x k prototype distances, leaf order
  Matrix projection;  // n x 2 PCA of the embeddings
};

inline nlohmann::json to_json(const EvalReport& e) {
  nlohmann::json pc = nlohmann::json::array();
  for (double v : e.per_class) pc.push_back(std::isnan(v) ? nlohmann::json(nullptr) : nlohmann::json(v));
  return {{"accuracy", e.accuracy},
          {"per_class_accuracy", pc},
          {"ccc_final", std::isnan(e.ccc_final) ? nlohmann::json(nullptr) : nlohmann::json(e.ccc_final)}};
}

inline EvalReport evaluate(const ClassifierParams& p, const TextRichGraph& g, const NodeSplit& split,
                           const TaxonomyTree& tree, bool normalize_embeddings = false) {
  auto ev = run_classifier(p, make_input(g), Mode::Eval, normalize_embeddings);
  EvalReport r;
  r.accuracy = accuracy(ev.logits, g, split.test);
  r.per_class = per_class_accuracy(ev.logits, g, split.test);
  const Matrix& z = ev.forward.output;
  auto a = leaf_clusters(tree, z);
  r.distances = pairwise_distances(prototypes(z, a));
  auto c = ccc(r.distances, cophenetic_matrix(tree));
  r.ccc_final = c.defined ? c.value : std::numeric_limits<double>::quiet_NaN();
  r.projection = pca_2d(z);
  return r;
}

inline std::string projection_csv(const Matrix& proj, const TextRichGraph& g, const TaxonomyTree* tree = nullptr) {
  std::vector<int> leaf;
  if (tree) leaf = tree->leaf_assignment().assignment;
  std::string out = "node,x,y,label,leaf\n";
  for (Eigen::Index i = 0; i < proj.rows(); ++i) {
    out += std::to_string(i) + "," + format_double(proj(i, 0)) + "," + format_double(proj(i, 1)) + "," +
           std::to_string(g.labeled(i) ? g.label(i) : -1) + "," +
           std::to_string(leaf.empty() ? -1 : leaf[static_cast<std::size_t>(i)]) + "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-seed aggregation

struct AggregateReport {
  std::vector<TrainMetrics> runs;
  MeanStd accuracy;
  MeanStd ccc_final;
};

inline AggregateReport aggregate(std::vector<TrainMetrics> runs) {
  AggregateReport r;
  std::vector<double> acc, cc;
  for (const auto& m : runs) {
    acc.push_back(m.accuracy);
    if (!std::isnan(m.ccc_final)) cc.push_back(m.ccc_final);
  }
  r.accuracy = mean_std(acc);
  r.ccc_final = mean_std(cc);
  r.runs = std::move(runs);
  return r;
}

inline nlohmann::json to_json(const AggregateReport& a) {
  nlohmann::json runs = nlohmann::json::array();
  for (const auto& m : a.runs) runs.push_back(to_json(m));
  return {{"runs", runs},
          {"accuracy", {{"mean", a.accuracy.mean}, {"std", a.accuracy.std}}},
          {"ccc_final", {{"mean", a.ccc_final.mean}, {"std", a.ccc_final.std}}},
          {"num_seeds", a.runs.size()}};
}

}  // namespace taxograph
