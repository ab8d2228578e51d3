#pragma once

#include "taxograph/common.hpp"
#include "taxograph/encoder.hpp"
#include "taxograph/hierarchy.hpp"
#include "taxograph/llm_refiner.hpp"
#include "taxograph/refiner.hpp"
#include "taxograph/similarity.hpp"

#include <nlohmann/json.hpp>

#include <set>

namespace taxograph {

enum class RefinerKind { Mock, Llm, None };

inline std::string to_string(RefinerKind k) {
  switch (k) {
    case RefinerKind::Mock: return "mock";
    case RefinerKind::Llm: return "llm";
    case RefinerKind::None: return "none";
  }
  return "none";
}

inline RefinerKind parse_refiner_kind(std::string_view s) {
  if (s == "mock") return RefinerKind::Mock;
  if (s == "llm") return RefinerKind::Llm;
  if (s == "none") return RefinerKind::None;
  throw Error("invalid config", "unknown refiner '" + std::string(s) + "' (mock, llm, none)");
}

struct SgclStageConfig {
  double gamma = 1.0;
  int epochs = 300;
  double p_edge = 0.3;
  double p_feat = 0.3;
  AdamConfig adam{};  // lr 1e-3, weight decay 5e-4
};

struct DownstreamConfig {
  double lambda = 1.0;
  int epochs = 300;
  AdamConfig adam{1e-2, 0.9, 0.999, 1e-8, 5e-4};
  int patience = 50;
  bool normalize_embeddings = false;  // feed unit-norm embeddings to the head
};

struct TaxonomyStageConfig {
  TreeShape shape = preset_shapes().at("cora");
  int kmeans_restarts = 10;
  int kmeans_max_iters = 100;
  bool weight_by_size = false;
};

struct PipelineConfig {
  EncoderConfig pretrain_encoder{0, 2, 64, 0, 0.5, false, false, 0};
  EncoderConfig classifier_encoder{0, 2, 64, 0, 0.5, false, false, 0};
  SgclStageConfig sgcl;
  TaxonomyStageConfig taxonomy;
  RefinerKind refiner = RefinerKind::Mock;
  RefinerConfig refiner_config;
  EndpointConfig endpoint;
  DownstreamConfig downstream;
  std::vector<std::uint64_t> seeds = {0, 1, 2, 3, 4};
  SimilarityMode similarity_mode = SimilarityMode::Full;

  // Ablation views: each switch touches exactly one stage.
  bool use_refiner() const { return refiner != RefinerKind::None; }
  double lambda() const { return downstream.lambda; }

  void validate() const {
    taxonomy.shape.validate();
    refiner_config.validate();
    if (!(downstream.lambda >= 0) || !std::isfinite(downstream.lambda))
      throw Error("invalid config", "lambda must be finite and >= 0");
    if (!(sgcl.gamma >= 0)) throw Error("invalid config", "gamma must be >= 0");
    if (sgcl.epochs < 0 || downstream.epochs < 0) throw Error("invalid config", "epochs must be >= 0");
    if (sgcl.p_edge < 0 || sgcl.p_edge >= 1 || sgcl.p_feat < 0 || sgcl.p_feat >= 1)
      throw Error("invalid config", "augmentation rates must be in [0, 1)");
    if (seeds.empty()) throw Error("invalid config", "at least one seed is required");
    for (const auto* e : {&pretrain_encoder, &classifier_encoder}) {
      if (e->num_layers < 1 || e->hidden < 1) throw Error("invalid config", "encoder needs >= 1 layer and hidden >= 1");
      if (e->dropout < 0 || e->dropout >= 1) throw Error("invalid config", "dropout must be in [0, 1)");
    }
  }
};

namespace config_detail {

inline void reject_unknown(const nlohmann::json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw Error("invalid config", where + " must be an object");
  std::set<std::string> allowed(keys.begin(), keys.end());
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw Error("invalid config", "unknown key '" + where + "." + it.key() + "'");
}

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw Error("invalid config", std::string("bad value for '") + key + "'");
  }
}

inline nlohmann::json adam_json(const AdamConfig& a) {
  return {{"lr", a.lr}, {"beta1", a.beta1}, {"beta2", a.beta2}, {"eps", a.eps}, {"weight_decay", a.weight_decay}};
}

inline AdamConfig adam_from(const nlohmann::json& j, AdamConfig a, const std::string& where) {
  reject_unknown(j, {"lr", "beta1", "beta2", "eps", "weight_decay"}, where);
  read(j, "lr", a.lr);
  read(j, "beta1", a.beta1);
  read(j, "beta2", a.beta2);
  read(j, "eps", a.eps);
  read(j, "weight_decay", a.weight_decay);
  return a;
}

inline EncoderConfig encoder_from(const nlohmann::json& j, EncoderConfig e, const std::string& where) {
  reject_unknown(j, {"in_dim", "num_layers", "hidden", "out_dim", "dropout", "batchnorm", "residual", "seed"}, where);
  read(j, "in_dim", e.in_dim);
  read(j, "num_layers", e.num_layers);
  read(j, "hidden", e.hidden);
  read(j, "out_dim", e.out_dim);
  read(j, "dropout", e.dropout);
  read(j, "batchnorm", e.batchnorm);
  read(j, "residual", e.residual);
  read(j, "seed", e.seed);
  return e;
}

}  // namespace config_detail

inline nlohmann::json to_json(const RefinerConfig& r) {
  return {{"tau_split", r.tau_split}, {"n_split", r.n_split},   {"tau_merge", r.tau_merge},
          {"n_merge", r.n_merge},     {"n_min", r.n_min},       {"n_close", r.n_close},
          {"r", r.r},                 {"n_outlier", r.n_outlier}, {"max_split", r.max_split},
          {"max_in_flight", r.max_in_flight}, {"seed", r.seed}};
}

inline nlohmann::json to_json(const PipelineConfig& c) {
  using config_detail::adam_json;
  // The API key never enters the config; only the variable name does.
  return {
      {"pretrain_encoder", to_json(c.pretrain_encoder)},
      {"classifier_encoder", to_json(c.classifier_encoder)},
      {"sgcl",
       {{"gamma", c.sgcl.gamma},
        {"epochs", c.sgcl.epochs},
        {"p_edge", c.sgcl.p_edge},
        {"p_feat", c.sgcl.p_feat},
        {"adam", adam_json(c.sgcl.adam)}}},
      {"taxonomy",
       {{"shape", c.taxonomy.shape.level_sizes},
        {"kmeans_restarts", c.taxonomy.kmeans_restarts},
        {"kmeans_max_iters", c.taxonomy.kmeans_max_iters},
        {"weight_by_size", c.taxonomy.weight_by_size}}},
      {"refiner", to_string(c.refiner)},
      {"refiner_config", to_json(c.refiner_config)},
      {"endpoint",
       {{"base_url", c.endpoint.base_url},
        {"model", c.endpoint.model},
        {"api_key_env", c.endpoint.api_key_env},
        {"timeout_seconds", c.endpoint.timeout_seconds},
        {"max_retries", c.endpoint.max_retries},
        {"backoff_ms", c.endpoint.backoff_ms}}},
      {"downstream",
       {{"lambda", c.downstream.lambda},
        {"epochs", c.downstream.epochs},
        {"adam", adam_json(c.downstream.adam)},
        {"patience", c.downstream.patience},
        {"normalize_embeddings", c.downstream.normalize_embeddings}}},
      {"seeds", c.seeds},
      {"similarity_mode", to_string(c.similarity_mode)},
  };
}

/// Missing keys keep their defaults; unknown keys are errors.
inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  using namespace config_detail;
  PipelineConfig c;
  reject_unknown(j,
                 {"pretrain_encoder", "classifier_encoder", "sgcl", "taxonomy", "refiner", "refiner_config",
                  "endpoint", "downstream", "seeds", "similarity_mode"},
                 "config");
  if (j.contains("pretrain_encoder")) c.pretrain_encoder = encoder_from(j["pretrain_encoder"], c.pretrain_encoder, "pretrain_encoder");
  if (j.contains("classifier_encoder"))
    c.classifier_encoder = encoder_from(j["classifier_encoder"], c.classifier_encoder, "classifier_encoder");
  if (j.contains("sgcl")) {
    const auto& s = j["sgcl"];
    reject_unknown(s, {"gamma", "epochs", "p_edge", "p_feat", "adam"}, "sgcl");
    read(s, "gamma", c.sgcl.gamma);
    read(s, "epochs", c.sgcl.epochs);
    read(s, "p_edge", c.sgcl.p_edge);
    read(s, "p_feat", c.sgcl.p_feat);
    if (s.contains("adam")) c.sgcl.adam = adam_from(s["adam"], c.sgcl.adam, "sgcl.adam");
  }
  if (j.contains("taxonomy")) {
    const auto& t = j["taxonomy"];
    reject_unknown(t, {"shape", "kmeans_restarts", "kmeans_max_iters", "weight_by_size"}, "taxonomy");
    if (t.contains("shape")) {
      if (t["shape"].is_string()) c.taxonomy.shape = parse_shape(t["shape"].get<std::string>());
      else read(t, "shape", c.taxonomy.shape.level_sizes);
    }
    read(t, "kmeans_restarts", c.taxonomy.kmeans_restarts);
    read(t, "kmeans_max_iters", c.taxonomy.kmeans_max_iters);
    read(t, "weight_by_size", c.taxonomy.weight_by_size);
  }
  if (j.contains("refiner")) c.refiner = parse_refiner_kind(j["refiner"].get<std::string>());
  if (j.contains("refiner_config")) {
    const auto& r = j["refiner_config"];
    reject_unknown(r,
                   {"tau_split", "n_split", "tau_merge", "n_merge", "n_min", "n_close", "r", "n_outlier", "max_split",
                    "max_in_flight", "seed"},
                   "refiner_config");
    auto& rc = c.refiner_config;
    read(r, "tau_split", rc.tau_split);
    read(r, "n_split", rc.n_split);
    read(r, "tau_merge", rc.tau_merge);
    read(r, "n_merge", rc.n_merge);
    read(r, "n_min", rc.n_min);
    read(r, "n_close", rc.n_close);
    read(r, "r", rc.r);
    read(r, "n_outlier", rc.n_outlier);
    read(r, "max_split", rc.max_split);
    read(r, "max_in_flight", rc.max_in_flight);
    read(r, "seed", rc.seed);
  }
  if (j.contains("endpoint")) {
    const auto& e = j["endpoint"];
    reject_unknown(e, {"base_url", "model", "api_key_env", "timeout_seconds", "max_retries", "backoff_ms"}, "endpoint");
    read(e, "base_url", c.endpoint.base_url);
    read(e, "model", c.endpoint.model);
    read(e, "api_key_env", c.endpoint.api_key_env);
    read(e, "timeout_seconds", c.endpoint.timeout_seconds);
    read(e, "max_retries", c.endpoint.max_retries);
    read(e, "backoff_ms", c.endpoint.backoff_ms);
  }
  if (j.contains("downstream")) {
    const auto& d = j["downstream"];
    reject_unknown(d, {"lambda", "epochs", "adam", "patience", "normalize_embeddings"}, "downstream");
    read(d, "lambda", c.downstream.lambda);
    read(d, "epochs", c.downstream.epochs);
    read(d, "patience", c.downstream.patience);
    read(d, "normalize_embeddings", c.downstream.normalize_embeddings);
    if (d.contains("adam")) c.downstream.adam = adam_from(d["adam"], c.downstream.adam, "downstream.adam");
  }
  read(j, "seeds", c.seeds);
  if (j.contains("similarity_mode")) c.similarity_mode = parse_similarity_mode(j["similarity_mode"].get<std::string>());
  c.validate();
  return c;
}

inline PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed JSON", path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

/// Stable hash of the canonical (sorted-key) config serialization.
inline std::string config_hash(const PipelineConfig& c) { return hex64(fnv1a(to_json(c).dump())); }

}  // namespace taxograph
