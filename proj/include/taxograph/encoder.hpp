#pragma once

#include "taxograph/common.hpp"
#include "taxograph/graph.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <random>

namespace taxograph {

struct EncoderConfig {
  NodeId in_dim = 0;
  int num_layers = 2;  // search grid {2, 3, 4}
  int hidden = 64;     // search grid {64, 128, 256}
  int out_dim = 0;     // 0 -> hidden
  double dropout = 0.5;
  bool batchnorm = false;
  bool residual = false;
  std::uint64_t seed = 0;

  int output_dim() const { return out_dim > 0 ? out_dim : hidden; }
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// One graph-convolution layer. Biases and batch-norm affine parameters are
/// stored as 1 x out row matrices; bn_* are empty when batch norm is off.
struct GcnLayer {
  Matrix weight;
  Matrix bias;
  Matrix bn_scale;
  Matrix bn_shift;
};

struct EncoderParams {
  EncoderConfig config;
  std::vector<GcnLayer> layers;

  std::vector<Matrix*> tensors() {
    std::vector<Matrix*> out;
    for (auto& l : layers) {
      out.push_back(&l.weight);
      out.push_back(&l.bias);
      if (l.bn_scale.size()) {
        out.push_back(&l.bn_scale);
        out.push_back(&l.bn_shift);
      }
    }
    return out;
  }
  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out;
    for (auto* m : const_cast<EncoderParams*>(this)->tensors()) out.push_back(m);
    return out;
  }

  /// Same structure, all zeros.
  EncoderParams zeros_like() const {
    EncoderParams z = *this;
    for (auto* m : z.tensors()) m->setZero();
    return z;
  }
};

inline EncoderParams init_encoder(const EncoderConfig& cfg) {
  if (cfg.in_dim <= 0) throw Error("invalid config", "encoder in_dim must be positive");
  if (cfg.num_layers < 1) throw Error("invalid config", "encoder needs at least one layer");
  if (cfg.dropout < 0 || cfg.dropout >= 1) throw Error("invalid config", "dropout must be in [0,1)");
  EncoderParams p;
  p.config = cfg;
  std::mt19937_64 rng(cfg.seed);
  Eigen::Index fin = cfg.in_dim;
  for (int l = 0; l < cfg.num_layers; ++l) {
    const bool last = l + 1 == cfg.num_layers;
    Eigen::Index fout = last ? cfg.output_dim() : cfg.hidden;
    GcnLayer layer;
    const double a = std::sqrt(6.0 / static_cast<double>(fin + fout));
    std::uniform_real_distribution<double> u(-a, a);
    layer.weight.resize(fin, fout);
    for (Eigen::Index j = 0; j < fout; ++j)
      for (Eigen::Index i = 0; i < fin; ++i) layer.weight(i, j) = u(rng);
    layer.bias = Matrix::Zero(1, fout);
    if (cfg.batchnorm && !last) {
      layer.bn_scale = Matrix::Ones(1, fout);
      layer.bn_shift = Matrix::Zero(1, fout);
    }
    p.layers.push_back(std::move(layer));
    fin = fout;
  }
  return p;
}

// ---------------------------------------------------------------------------
// Augmentation and propagation

struct AugmentedView {
  std::vector<char> edge_kept;     // one flag per graph edge
  std::vector<char> feature_kept;  // one flag per feature column
  std::uint64_t seed = 0;

  std::size_t kept_edges() const {
    return static_cast<std::size_t>(std::count(edge_kept.begin(), edge_kept.end(), 1));
  }
};

inline AugmentedView identity_view(const TextRichGraph& g) {
  return {std::vector<char>(g.edges.size(), 1),
          std::vector<char>(static_cast<std::size_t>(g.feature_dim()), 1), 0};
}

/// Drops each edge with probability p_edge and zeroes each feature column
/// (shared across nodes) with probability p_feat.
inline AugmentedView augment(const TextRichGraph& g, double p_edge, double p_feat,
                             std::uint64_t seed) {
  if (p_edge < 0 || p_edge >= 1 || p_feat < 0 || p_feat >= 1)
    throw Error("invalid config", "augmentation probabilities must be in [0,1)");
  AugmentedView v;
  v.seed = seed;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  v.edge_kept.resize(g.edges.size());
  for (auto& k : v.edge_kept) k = u(rng) >= p_edge ? 1 : 0;
  v.feature_kept.resize(static_cast<std::size_t>(g.feature_dim()));
  for (auto& k : v.feature_kept) k = u(rng) >= p_feat ? 1 : 0;
  return v;
}

/// D^{-1/2} (A + I) D^{-1/2} over the given edge list.
inline SparseMatrix normalized_adjacency(NodeId n, const std::vector<Edge>& edges,
                                         const std::vector<char>* kept = nullptr) {
  Vector deg = Vector::Ones(n);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (kept && !(*kept)[i]) continue;
    deg(edges[i].u) += 1.0;
    deg(edges[i].v) += 1.0;
  }
  Vector inv_sqrt = deg.array().rsqrt();
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(n) + 2 * edges.size());
  for (NodeId i = 0; i < n; ++i) trip.emplace_back(i, i, inv_sqrt(i) * inv_sqrt(i));
  for (std::size_t i = 0; i < edges.size(); ++i) {
    if (kept && !(*kept)[i]) continue;
    const auto [u, v] = edges[i];
    const double w = inv_sqrt(u) * inv_sqrt(v);
    trip.emplace_back(u, v, w);
    trip.emplace_back(v, u, w);
  }
  SparseMatrix a(n, n);
  a.setFromTriplets(trip.begin(), trip.end());
  return a;
}

/// Propagation operator and input features for one (possibly augmented) view.
struct GraphInput {
  SparseMatrix adjacency;
  Matrix features;
};

inline GraphInput make_input(const TextRichGraph& g, const AugmentedView& v) {
  GraphInput in{normalized_adjacency(g.n, g.edges, &v.edge_kept), g.features};
  for (Eigen::Index j = 0; j < in.features.cols(); ++j)
    if (!v.feature_kept[static_cast<std::size_t>(j)]) in.features.col(j).setZero();
  return in;
}

inline GraphInput make_input(const TextRichGraph& g) {
  return {normalized_adjacency(g.n, g.edges), g.features};
}

// ---------------------------------------------------------------------------
// Forward / backward

enum class Mode { Train, Eval };

inline constexpr double kBatchNormEps = 1e-5;

struct LayerCache {
  Matrix input;      // H_l
  Matrix xhat;       // batch-norm standardized pre-activation
  Vector inv_std;
  Matrix relu_mask;  // 1 where the rectifier passed
  Matrix drop_mask;  // scaled keep mask, empty when dropout inactive
  bool residual = false;
};

struct ForwardResult {
  Matrix output;  // n x d (normalized when requested)
  Matrix raw;     // before normalization
  Vector norms;
  bool normalized = false;
  std::size_t zero_rows = 0;
  std::vector<LayerCache> cache;
};

/// GCN stack: conv -> [batchnorm] -> ReLU -> dropout -> [+residual] per
/// hidden layer, plain conv for the last layer, then optional row-wise
/// l2 normalization. Dropout only runs in Train mode, driven by `dropout_seed`.
inline ForwardResult encode_forward(const EncoderParams& p, const GraphInput& in, Mode mode,
                                    bool normalize, std::uint64_t dropout_seed = 0) {
  ForwardResult r;
  const auto& cfg = p.config;
  std::mt19937_64 rng(dropout_seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix h = in.features;
  if (h.cols() != p.layers.front().weight.rows())
    throw Error("dimension mismatch", "feature dim does not match encoder input");
  const auto n = static_cast<double>(h.rows());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& layer = p.layers[l];
    const bool last = l + 1 == p.layers.size();
    LayerCache c;
    c.input = h;
    Matrix pre = in.adjacency * (h * layer.weight);
    pre.rowwise() += layer.bias.row(0);
    if (last) {
      h = std::move(pre);
      r.cache.push_back(std::move(c));
      break;
    }
    if (layer.bn_scale.size()) {
      Eigen::RowVectorXd mean = pre.colwise().mean();
      Matrix centered = pre.rowwise() - mean;
      Eigen::RowVectorXd var = centered.array().square().colwise().sum() / n;
      c.inv_std = (var.array() + kBatchNormEps).rsqrt().transpose();
      c.xhat = centered * c.inv_std.asDiagonal();
      pre = (c.xhat * layer.bn_scale.row(0).asDiagonal()).rowwise() + layer.bn_shift.row(0);
    }
    c.relu_mask = (pre.array() > 0.0).cast<double>();
    Matrix act = pre.cwiseMax(0.0);
    if (mode == Mode::Train && cfg.dropout > 0) {
      c.drop_mask.resize(act.rows(), act.cols());
      const double keep = 1.0 - cfg.dropout;
      for (Eigen::Index j = 0; j < act.cols(); ++j)
        for (Eigen::Index i = 0; i < act.rows(); ++i)
          c.drop_mask(i, j) = u(rng) < keep ? 1.0 / keep : 0.0;
      act.array() *= c.drop_mask.array();
    }
    c.residual = cfg.residual && act.cols() == h.cols();
    if (c.residual) act += h;
    h = std::move(act);
    r.cache.push_back(std::move(c));
  }
  r.raw = h;
  r.normalized = normalize;
  if (normalize) {
    r.norms = h.rowwise().norm();
    for (Eigen::Index i = 0; i < h.rows(); ++i)
      if (r.norms(i) == 0.0) ++r.zero_rows;
    if (r.zero_rows)
      warn("encode: " + std::to_string(r.zero_rows) + " zero-norm embedding rows");
    r.output = (r.norms.array() + kNormEps).inverse().matrix().asDiagonal() * h;
  } else {
    r.output = std::move(h);
  }
  return r;
}

inline Matrix encode(const EncoderParams& p, const GraphInput& in, bool normalize) {
  return encode_forward(p, in, Mode::Eval, normalize).output;
}

/// Backpropagates dL/d(output) through the cached forward pass.
inline EncoderParams encode_backward(const EncoderParams& p, const GraphInput& in,
                                     const ForwardResult& fwd, const Matrix& d_output) {
  EncoderParams grad = p.zeros_like();
  Matrix g = d_output;
  if (fwd.normalized) {
    // z = h / (|h| + eps)  =>  dh = dz/(|h|+eps) - h (h.dz) / (|h| (|h|+eps)^2)
    const Matrix& h = fwd.raw;
    for (Eigen::Index i = 0; i < h.rows(); ++i) {
      const double nrm = fwd.norms(i);
      const double den = nrm + kNormEps;
      if (nrm > 0.0) {
        const double dot = h.row(i).dot(g.row(i));
        g.row(i) = g.row(i) / den - h.row(i) * (dot / (nrm * den * den));
      } else {
        // the guarded map has slope 1/eps at h = 0; pass no gradient instead
        g.row(i).setZero();
      }
    }
  }
  const auto n = static_cast<double>(g.rows());
  for (std::size_t li = p.layers.size(); li-- > 0;) {
    const auto& layer = p.layers[li];
    const auto& c = fwd.cache[li];
    auto& gl = grad.layers[li];
    const bool last = li + 1 == p.layers.size();
    Matrix d_res;
    if (!last) {
      if (c.residual) d_res = g;
      if (c.drop_mask.size()) g.array() *= c.drop_mask.array();
      g.array() *= c.relu_mask.array();
      if (layer.bn_scale.size()) {
        gl.bn_shift = g.colwise().sum();
        gl.bn_scale = (g.array() * c.xhat.array()).colwise().sum();
        Matrix dxhat = g * layer.bn_scale.row(0).asDiagonal();
        Eigen::RowVectorXd sum_dx = dxhat.colwise().sum();
        Eigen::RowVectorXd sum_dx_x = (dxhat.array() * c.xhat.array()).colwise().sum();
        Matrix t = (dxhat * n).rowwise() - sum_dx;
        t -= c.xhat * sum_dx_x.asDiagonal();
        g = t * (c.inv_std / n).asDiagonal();
      }
    }
    gl.bias = g.colwise().sum();
    Matrix t = in.adjacency.transpose() * g;
    gl.weight = c.input.transpose() * t;
    if (li > 0) {
      g = t * layer.weight.transpose();
      if (d_res.size()) g += d_res;
    }
  }
  return grad;
}

// ---------------------------------------------------------------------------
// Classification head

struct ClassifierParams {
  EncoderParams encoder;
  Matrix head_weight;  // d x C
  Matrix head_bias;    // 1 x C

  std::vector<Matrix*> tensors() {
    auto out = encoder.tensors();
    out.push_back(&head_weight);
    out.push_back(&head_bias);
    return out;
  }
  std::vector<const Matrix*> tensors() const {
    std::vector<const Matrix*> out;
    for (auto* m : const_cast<ClassifierParams*>(this)->tensors()) out.push_back(m);
    return out;
  }
  ClassifierParams zeros_like() const {
    ClassifierParams z = *this;
    for (auto* m : z.tensors()) m->setZero();
    return z;
  }
};

inline ClassifierParams init_classifier(const EncoderConfig& cfg, int num_classes) {
  if (num_classes < 1) throw Error("invalid config", "num_classes must be positive");
  ClassifierParams p{init_encoder(cfg), {}, Matrix::Zero(1, num_classes)};
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  const int d = cfg.output_dim();
  const double a = std::sqrt(6.0 / static_cast<double>(d + num_classes));
  std::uniform_real_distribution<double> u(-a, a);
  p.head_weight.resize(d, num_classes);
  for (Eigen::Index j = 0; j < num_classes; ++j)
    for (Eigen::Index i = 0; i < d; ++i) p.head_weight(i, j) = u(rng);
  return p;
}

/// Linear head; softmax is applied only inside the loss.
inline Matrix classify(const Matrix& head_weight, const Matrix& head_bias, const Matrix& z) {
  Matrix logits = z * head_weight;
  logits.rowwise() += head_bias.row(0);
  return logits;
}

inline Matrix classify(const ClassifierParams& p, const Matrix& z) {
  return classify(p.head_weight, p.head_bias, z);
}

inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out = logits;
  for (Eigen::Index i = 0; i < out.rows(); ++i) {
    const double m = out.row(i).maxCoeff();
    out.row(i) = (out.row(i).array() - m).exp();
    out.row(i) /= out.row(i).sum();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Parameter utilities

template <typename Params>
std::vector<double> flatten(const Params& p) {
  std::vector<double> out;
  for (const Matrix* m : p.tensors()) out.insert(out.end(), m->data(), m->data() + m->size());
  return out;
}

template <typename Params>
void unflatten(Params& p, const std::vector<double>& flat) {
  std::size_t pos = 0;
  for (Matrix* m : p.tensors()) {
    if (pos + static_cast<std::size_t>(m->size()) > flat.size())
      throw Error("dimension mismatch", "flat parameter vector too short");
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(pos),
              flat.begin() + static_cast<std::ptrdiff_t>(pos + static_cast<std::size_t>(m->size())),
              m->data());
    pos += static_cast<std::size_t>(m->size());
  }
  if (pos != flat.size()) throw Error("dimension mismatch", "flat parameter vector too long");
}

template <typename Params>
bool all_finite(const Params& p) {
  for (const Matrix* m : p.tensors())
    if (!m->allFinite()) return false;
  return true;
}

template <typename Params>
void accumulate(Params& into, const Params& other, double scale = 1.0) {
  auto a = into.tensors();
  auto b = other.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) *a[i] += scale * *b[i];
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
};

/// Adam with coupled L2 weight decay (decay added to the gradient).
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  template <typename Params>
  void step(Params& params, const Params& grads) {
    auto p = params.tensors();
    auto g = grads.tensors();
    if (m_.empty()) {
      for (auto* t : p) {
        m_.push_back(Matrix::Zero(t->rows(), t->cols()));
        v_.push_back(Matrix::Zero(t->rows(), t->cols()));
      }
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, t_);
    const double bc2 = 1.0 - std::pow(cfg_.beta2, t_);
    for (std::size_t i = 0; i < p.size(); ++i) {
      Matrix grad = *g[i] + cfg_.weight_decay * *p[i];
      m_[i] = cfg_.beta1 * m_[i] + (1 - cfg_.beta1) * grad;
      v_[i] = cfg_.beta2 * v_[i] + (1 - cfg_.beta2) * grad.cwiseProduct(grad);
      p[i]->array() -= cfg_.lr * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Matrix> m_, v_;
  int t_ = 0;
};

// ---------------------------------------------------------------------------
// Checkpoints: "TXGC" | u32 version | u64 count | count x float32, plus a
// JSON sidecar with tensor shapes and configuration.

inline nlohmann::json to_json(const EncoderConfig& c) {
  return {{"in_dim", c.in_dim},       {"num_layers", c.num_layers}, {"hidden", c.hidden},
          {"out_dim", c.out_dim},     {"dropout", c.dropout},       {"batchnorm", c.batchnorm},
          {"residual", c.residual},   {"seed", c.seed}};
}

inline EncoderConfig encoder_config_from_json(const nlohmann::json& j) {
  EncoderConfig c;
  c.in_dim = j.value("in_dim", c.in_dim);
  c.num_layers = j.value("num_layers", c.num_layers);
  c.hidden = j.value("hidden", c.hidden);
  c.out_dim = j.value("out_dim", c.out_dim);
  c.dropout = j.value("dropout", c.dropout);
  c.batchnorm = j.value("batchnorm", c.batchnorm);
  c.residual = j.value("residual", c.residual);
  c.seed = j.value("seed", c.seed);
  return c;
}

template <typename Params>
void save_checkpoint(const Params& p, const std::filesystem::path& path, nlohmann::json meta) {
  std::string blob = "TXGC";
  io::detail::put_le<std::uint32_t>(blob, 1);
  auto flat = flatten(p);
  io::detail::put_le<std::uint64_t>(blob, flat.size());
  for (double v : flat) io::detail::put_le<float>(blob, static_cast<float>(v));
  nlohmann::json shapes = nlohmann::json::array();
  for (const Matrix* m : p.tensors()) shapes.push_back({m->rows(), m->cols()});
  meta["shapes"] = shapes;
  io::write_file(path, blob);
  io::write_file(path.string() + ".json", meta.dump(1) + "\n");
}

inline std::vector<double> read_checkpoint_blob(const std::filesystem::path& path) {
  auto data = io::read_file(path);
  if (data.size() < 16 || data.compare(0, 4, "TXGC") != 0)
    throw Error("malformed file", "not a checkpoint: " + path.string());
  std::size_t pos = 4;
  auto version = io::detail::get_le<std::uint32_t>(data, pos);
  if (version != 1) throw Error("malformed file", "unsupported checkpoint version");
  auto count = io::detail::get_le<std::uint64_t>(data, pos);
  if (data.size() - pos != count * 4) throw Error("malformed file", "checkpoint size mismatch");
  std::vector<double> flat(count);
  for (auto& v : flat) v = io::detail::get_le<float>(data, pos);
  return flat;
}

inline nlohmann::json read_checkpoint_meta(const std::filesystem::path& path) {
  try {
    return nlohmann::json::parse(io::read_file(path.string() + ".json"));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed JSON", e.what());
  }
}

inline EncoderParams load_encoder(const std::filesystem::path& path) {
  auto meta = read_checkpoint_meta(path);
  auto p = init_encoder(encoder_config_from_json(meta.at("encoder")));
  unflatten(p, read_checkpoint_blob(path));
  return p;
}

inline ClassifierParams load_classifier(const std::filesystem::path& path) {
  auto meta = read_checkpoint_meta(path);
  auto p = init_classifier(encoder_config_from_json(meta.at("encoder")),
                           meta.at("num_classes").get<int>());
  unflatten(p, read_checkpoint_blob(path));
  return p;
}

}  // namespace taxograph
