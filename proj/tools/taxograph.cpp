// taxograph command-line tool.
#include "taxograph/taxograph.hpp"

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <thread>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace taxograph;

namespace {

// ---------------------------------------------------------------------------
// Flags shared by the pipeline commands. Each maps onto a PipelineConfig
// field and, when given, wins over the config file.

struct PipelineFlags {
  std::string config;
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds;
  int jobs = 1;
  double lambda = 0;
  double gamma = 0;
  std::string shape;
  std::string similarity;
  std::string refiner;
  std::string endpoint;
  std::string model;

  CLI::Option *o_seed = nullptr, *o_seeds = nullptr, *o_lambda = nullptr, *o_gamma = nullptr, *o_shape = nullptr,
              *o_similarity = nullptr, *o_refiner = nullptr, *o_endpoint = nullptr, *o_model = nullptr;
};

void add_pipeline_flags(CLI::App* sub, PipelineFlags& f) {
  sub->add_option("--config", f.config, "JSON pipeline config")->check(CLI::ExistingFile);
  f.o_seed = sub->add_option("--seed", f.seed, "single seed (replaces the config's seed list)");
  f.o_seeds = sub->add_option("--seeds", f.seeds, "comma-separated seed list")->delimiter(',');
  sub->add_option("--jobs", f.jobs, "seeds trained in parallel")->check(CLI::PositiveNumber);
  f.o_lambda = sub->add_option("--lambda", f.lambda, "CCC regularization weight");
  f.o_gamma = sub->add_option("--gamma", f.gamma, "contrastive temperature");
  f.o_shape = sub->add_option("--shape", f.shape, "taxonomy shape, e.g. 1,7,64 or a preset name");
  f.o_similarity = sub->add_option("--similarity", f.similarity, "similarity matrix")
                       ->check(CLI::IsMember({"full", "supcon", "identity"}));
  f.o_refiner = sub->add_option("--refiner", f.refiner, "taxonomy refiner")
                    ->check(CLI::IsMember({"mock", "llm", "none"}));
  f.o_endpoint = sub->add_option("--endpoint", f.endpoint, "OpenAI-compatible base URL");
  f.o_model = sub->add_option("--model", f.model, "chat model name");
}

PipelineConfig resolve(const PipelineFlags& f) {
  PipelineConfig c = f.config.empty() ? PipelineConfig{} : load_pipeline_config(f.config);
  if (f.o_seeds->count()) c.seeds = f.seeds;
  if (f.o_seed->count()) c.seeds = {f.seed};
  if (f.o_lambda->count()) c.downstream.lambda = f.lambda;
  if (f.o_gamma->count()) c.sgcl.gamma = f.gamma;
  if (f.o_shape->count()) c.taxonomy.shape = parse_shape(f.shape);
  if (f.o_similarity->count()) c.similarity_mode = parse_similarity_mode(f.similarity);
  if (f.o_refiner->count()) c.refiner = parse_refiner_kind(f.refiner);
  if (f.o_endpoint->count()) c.endpoint.base_url = f.endpoint;
  if (f.o_model->count()) c.endpoint.model = f.model;
  c.validate();
  return c;
}

// ---------------------------------------------------------------------------
// Manifest

std::string file_hash(const fs::path& p) { return hex64(fnv1a(io::read_file(p))); }

json hash_inputs(const fs::path& p) {
  if (!fs::is_directory(p)) return file_hash(p);
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(p))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  json out = json::object();
  for (const auto& f : files) out[f.filename().string()] = file_hash(f);
  return out;
}

json versions() {
  return {{"taxograph", kVersion},
          {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                        std::to_string(EIGEN_MINOR_VERSION)},
          {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
          {"cli11", CLI11_VERSION},
          {"httplib", CPPHTTPLIB_VERSION},
          {"compiler", __VERSION__}};
}

class Artifacts {
 public:
  Artifacts(fs::path dir, std::string command) : dir_(std::move(dir)), command_(std::move(command)) {
    fs::create_directories(dir_);
  }

  fs::path path(const std::string& name) const { return dir_ / name; }

  void write(const std::string& name, std::string_view data) {
    io::write_file(dir_ / name, data);
    outputs_.insert(name);
  }
  void note_output(const std::string& name) { outputs_.insert(name); }
  void input(const std::string& role, const fs::path& p) { inputs_[role] = hash_inputs(p); }
  void config(const PipelineConfig& c) {
    config_ = to_json(c);
    config_hash_ = config_hash(c);
  }
  void seeds(std::vector<std::uint64_t> s) { seeds_ = std::move(s); }
  void set(const std::string& key, json v) { extra_[key] = std::move(v); }

  void finish(const std::string& status = "ok") {
    json m = {{"command", command_}, {"status", status}, {"versions", versions()}, {"inputs", inputs_},
              {"outputs", json(std::vector<std::string>(outputs_.begin(), outputs_.end()))}};
    if (!config_.is_null()) {
      m["config"] = config_;
      m["config_hash"] = config_hash_;
    }
    if (!seeds_.empty()) m["seeds"] = seeds_;
    for (auto& [k, v] : extra_.items()) m[k] = v;
    io::write_file(dir_ / "manifest.json", m.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  std::string command_;
  std::set<std::string> outputs_;
  json inputs_ = json::object();
  json config_;
  std::string config_hash_;
  std::vector<std::uint64_t> seeds_;
  json extra_ = json::object();
};

LoadedGraph load_data(const std::string& dir) {
  if (dir.empty()) throw Error("missing file", "--data is required");
  if (!fs::is_directory(dir)) throw Error("missing file", "data directory not found: " + dir);
  return load_graph(GraphPaths::in_directory(dir));
}

void save_encoder(const EncoderParams& p, const fs::path& path, const PipelineConfig& c, std::uint64_t seed) {
  save_checkpoint(p, path, {{"encoder", to_json(p.config)}, {"seed", seed}, {"config_hash", config_hash(c)}});
}

json stats_json(const RefineStats& s) {
  return {{"split_queries", s.split_queries},
          {"merge_queries", s.merge_queries},
          {"summarize_queries", s.summarize_queries},
          {"reassign_queries", s.reassign_queries},
          {"total_queries", s.total_queries()},
          {"low_cohesion_clusters", s.low_cohesion_clusters},
          {"merge_candidates", s.merge_candidates},
          {"outliers_total", s.outliers_total},
          {"clamped_splits", s.clamped_splits},
          {"rejected_replies", s.rejected_replies}};
}

std::string jsonl(const std::vector<json>& rows) {
  std::string out;
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

// ---------------------------------------------------------------------------
// Commands

struct Common {
  std::string out;
  std::string data;
  PipelineFlags flags;
};

void cmd_pretrain(const Common& o) {
  auto cfg = resolve(o.flags);
  auto data = load_data(o.data);
  const auto seed = cfg.seeds.front();
  Artifacts art(o.out, "pretrain");
  art.config(cfg);
  art.seeds({seed});
  art.input("data", o.data);
  std::vector<json> log;
  auto r = pretrain(data.graph, data.split, cfg, seed,
                    [&](int epoch, const LossReport& rep) { log.push_back({{"epoch", epoch}, {"loss", rep.total}}); });
  save_encoder(r.params, art.path("encoder.bin"), cfg, seed);
  art.note_output("encoder.bin");
  art.note_output("encoder.bin.json");
  art.write("pretrain_losses.jsonl", jsonl(log));
  art.finish();
  std::cout << json{{"epochs", r.losses.size()}, {"final_loss", r.losses.empty() ? json(nullptr) : json(r.losses.back())}}
                   .dump()
            << "\n";
}

void cmd_build_taxonomy(const Common& o, const std::string& encoder_path) {
  auto cfg = resolve(o.flags);
  auto data = load_data(o.data);
  const auto seed = cfg.seeds.front();
  // before any training, so a missing key fails fast
  std::unique_ptr<Refiner> refiner;
  if (cfg.refiner == RefinerKind::Mock) refiner = std::make_unique<MockRefiner>(seed);
  if (cfg.refiner == RefinerKind::Llm) refiner = std::make_unique<LlmRefiner>(cfg.endpoint);
  Artifacts art(o.out, "build-taxonomy");
  art.config(cfg);
  art.seeds({seed});
  art.input("data", o.data);
  EncoderParams enc;
  if (!encoder_path.empty()) {
    art.input("encoder", encoder_path);
    enc = load_encoder(encoder_path);
  } else {
    enc = pretrain(data.graph, data.split, cfg, seed).params;
    save_encoder(enc, art.path("encoder.bin"), cfg, seed);
    art.note_output("encoder.bin");
    art.note_output("encoder.bin.json");
  }
  const Matrix z = embed(enc, data.graph);


  TaxonomyResult r;
  try {
    r = construct_taxonomy(z, data.graph, cfg, refiner.get(), seed);
  } catch (const RefineAborted& e) {
    art.write("transcript.jsonl", transcript_to_jsonl(e.transcript));
    art.finish("aborted");
    throw;
  }
  save_taxonomy(r.tree, art.path("taxonomy.json"));
  art.note_output("taxonomy.json");
  art.write("leaves.txt", io::encode_labels(r.leaves.assignment));
  if (refiner) {
    art.write("transcript.jsonl", transcript_to_jsonl(r.transcript));
    art.write("refine_stats.json", stats_json(r.stats).dump(2) + "\n");
  }
  art.set("level_sizes", r.tree.level_sizes);
  art.finish();
  std::cout << json{{"level_sizes", r.tree.level_sizes}, {"leaves", r.leaves.k},
                    {"queries", refiner ? r.stats.total_queries() : 0}}
                   .dump()
            << "\n";
}

void cmd_train(const Common& o, const std::string& taxonomy_path, int jobs) {
  auto cfg = resolve(o.flags);
  auto data = load_data(o.data);
  if (taxonomy_path.empty()) throw Error("missing file", "--taxonomy is required");
  const auto tree = load_taxonomy(taxonomy_path);
  Artifacts art(o.out, "train");
  art.config(cfg);
  art.seeds(cfg.seeds);
  art.input("data", o.data);
  art.input("taxonomy", taxonomy_path);

  const std::size_t n = cfg.seeds.size();
  std::vector<TrainResult> results(n);
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        results[i] = train_classifier(data.graph, data.split, tree, cfg, cfg.seeds[i]);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (int t = 0; t < std::min<int>(jobs, static_cast<int>(n)); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);

  std::vector<TrainMetrics> runs;
  for (std::size_t i = 0; i < n; ++i) {
    const auto s = std::to_string(cfg.seeds[i]);
    const auto& r = results[i];
    save_checkpoint(r.params, art.path("classifier_seed" + s + ".bin"),
                    {{"encoder", to_json(r.params.encoder.config)},
                     {"num_classes", data.graph.num_classes},
                     {"seed", cfg.seeds[i]},
                     {"config_hash", config_hash(cfg)}});
    art.note_output("classifier_seed" + s + ".bin");
    art.note_output("classifier_seed" + s + ".bin.json");
    std::vector<json> log;
    for (std::size_t e = 0; e < r.losses.size(); ++e) {
      json row = to_json(r.losses[e]);
      row["epoch"] = e;
      log.push_back(row);
    }
    art.write("losses_seed" + s + ".jsonl", jsonl(log));
    art.write("metrics_seed" + s + ".json", to_json(r.metrics).dump(2) + "\n");
    runs.push_back(r.metrics);
  }
  auto agg = to_json(aggregate(std::move(runs)));
  art.write("metrics.json", agg.dump(2) + "\n");
  art.finish();
  std::cout << json{{"accuracy", agg["accuracy"]}, {"ccc_final", agg["ccc_final"]}}.dump() << "\n";
}

void cmd_evaluate(const Common& o, const std::string& taxonomy_path, const std::string& classifier_path) {
  auto cfg = resolve(o.flags);
  auto data = load_data(o.data);
  if (taxonomy_path.empty()) throw Error("missing file", "--taxonomy is required");
  if (classifier_path.empty()) throw Error("missing file", "--classifier is required");
  const auto tree = load_taxonomy(taxonomy_path);
  const auto params = load_classifier(classifier_path);
  Artifacts art(o.out, "evaluate");
  art.config(cfg);
  art.input("data", o.data);
  art.input("taxonomy", taxonomy_path);
  art.input("classifier", classifier_path);
  auto r = evaluate(params, data.graph, data.split, tree, cfg.downstream.normalize_embeddings);
  art.write("eval.json", to_json(r).dump(2) + "\n");
  art.write("distances.csv", matrix_to_csv(r.distances));
  art.write("projection.csv", projection_csv(r.projection, data.graph, &tree));
  art.finish();
  std::cout << to_json(r).dump() << "\n";
}

struct OracleFlags {
  int graphs = 20;
  NodeId n = 100;
  int blocks = 2;
  double p_in = 0.1;
  double p_out = 0.01;
  double train_frac = 0.3;
  std::uint64_t seed = 0;
};

void cmd_oracle(const OracleFlags& f, const std::string& out) {
  if (f.graphs < 1) throw Error("invalid config", "--graphs must be >= 1");
  json reports = json::array();
  int holds = 0, identity = 0, pre = 0;
  for (int i = 0; i < f.graphs; ++i) {
    auto d = synthetic::sbm({.n = f.n, .blocks = f.blocks, .p_in = f.p_in, .p_out = f.p_out, .feature_dim = 4,
                             .feature_noise = 1.0, .train_frac = f.train_frac, .val_frac = 0.0,
                             .seed = derive_seed(f.seed, "theorem1", static_cast<std::uint64_t>(i))});
    auto r = theorem1_oracle(d.graph, d.split);
    holds += r.holds;
    identity += r.identity_exact;
    pre += r.precondition;
    reports.push_back(to_json(r));
  }
  json report = {{"graphs", f.graphs},       {"n", f.n},
                 {"blocks", f.blocks},       {"p_in", f.p_in},
                 {"p_out", f.p_out},         {"train_frac", f.train_frac},
                 {"seed", f.seed},           {"holds", holds},
                 {"identity_exact", identity}, {"precondition", pre},
                 {"reports", reports}};
  if (!out.empty()) {
    Artifacts art(out, "oracle-theorem1");
    art.seeds({f.seed});
    art.write("oracle_theorem1.json", report.dump(2) + "\n");
    art.finish();
  }
  std::cout << report.dump(2) << "\n";
}

void cmd_viz(const std::string& taxonomy_path, const std::string& format, const std::string& out) {
  if (taxonomy_path.empty()) throw Error("missing file", "--taxonomy is required");
  const auto tree = load_taxonomy(taxonomy_path);
  Artifacts art(out, "viz");
  art.input("taxonomy", taxonomy_path);
  if (format == "dot")
    art.write("taxonomy.dot", emit_viz(tree, VizFormat::Dot));
  else
    art.write("taxonomy_radial.json", emit_viz(tree, VizFormat::RadialJson));
  art.finish();
}

struct SynthFlags {
  std::string kind = "planted-hierarchy";
  synthetic::SbmConfig sbm;
  synthetic::PlantedConfig planted;
  NodeId n = 0;
  std::uint64_t seed = 0;
  double train_frac = -1, val_frac = -1;
};

void cmd_gen_synthetic(SynthFlags f, const std::string& out) {
  synthetic::Dataset d;
  json params;
  if (f.kind == "sbm") {
    auto& c = f.sbm;
    if (f.n) c.n = f.n;
    c.seed = f.seed;
    if (f.train_frac >= 0) c.train_frac = f.train_frac;
    if (f.val_frac >= 0) c.val_frac = f.val_frac;
    d = synthetic::sbm(c);
    params = {{"n", c.n},           {"blocks", c.blocks},         {"p_in", c.p_in},
              {"p_out", c.p_out},   {"feature_dim", c.feature_dim}, {"feature_noise", c.feature_noise},
              {"train_frac", c.train_frac}, {"val_frac", c.val_frac}, {"seed", c.seed}};
  } else {
    auto& c = f.planted;
    if (f.n) c.n = f.n;
    c.seed = f.seed;
    if (f.train_frac >= 0) c.train_frac = f.train_frac;
    if (f.val_frac >= 0) c.val_frac = f.val_frac;
    d = synthetic::planted_hierarchy(c);
    params = {{"n", c.n},
              {"coarse", c.coarse},
              {"fine", c.fine},
              {"dim", c.dim},
              {"coarse_spread", c.coarse_spread},
              {"fine_spread", c.fine_spread},
              {"sigma", c.sigma},
              {"p_fine", c.p_fine},
              {"p_coarse", c.p_coarse},
              {"p_out", c.p_out},
              {"train_frac", c.train_frac},
              {"val_frac", c.val_frac},
              {"seed", c.seed}};
  }
  Artifacts art(out, "gen-synthetic");
  art.seeds({f.seed});
  synthetic::save_dataset(out, d);
  for (const auto* name : {"features.trnf", "edges.txt", "labels.txt", "train.txt", "val.txt", "test.txt",
                           "texts.jsonl", "coarse.txt", "fine.txt"})
    art.note_output(name);
  json summary = {{"kind", f.kind},
                  {"params", params},
                  {"nodes", d.graph.n},
                  {"edges", d.graph.edges.size()},
                  {"classes", d.graph.num_classes},
                  {"homophily", edge_homophily(d.graph)}};
  art.write("dataset.json", summary.dump(2) + "\n");
  art.set("dataset", summary);
  art.finish();
  std::cout << summary.dump() << "\n";
}

int run(int argc, char** argv) {
  CLI::App app{"Taxonomy-guided graph representation learning"};
  app.require_subcommand(1);
  app.set_version_flag("--version", kVersion);

  Common pre, tax, trn, ev;
  std::string encoder_path, taxonomy_path, classifier_path;

  auto add_io = [](CLI::App* sub, Common& c) {
    sub->add_option("--data", c.data, "dataset directory")->required();
    sub->add_option("--out", c.out, "output directory")->required();
    add_pipeline_flags(sub, c.flags);
  };

  auto* s_pre = app.add_subcommand("pretrain", "contrastive pretraining of the encoder");
  add_io(s_pre, pre);

  auto* s_tax = app.add_subcommand("build-taxonomy", "cluster, refine and build the taxonomy tree");
  add_io(s_tax, tax);
  s_tax->add_option("--encoder", encoder_path, "pretrained encoder checkpoint (pretrains if omitted)")
      ->check(CLI::ExistingFile);

  auto* s_trn = app.add_subcommand("train", "train the taxonomy-regularized classifier");
  add_io(s_trn, trn);
  s_trn->add_option("--taxonomy", taxonomy_path, "taxonomy.json")->required()->check(CLI::ExistingFile);

  auto* s_ev = app.add_subcommand("evaluate", "accuracy, CCC and exports for a trained classifier");
  add_io(s_ev, ev);
  s_ev->add_option("--taxonomy", taxonomy_path, "taxonomy.json")->required()->check(CLI::ExistingFile);
  s_ev->add_option("--classifier", classifier_path, "classifier checkpoint")->required()->check(CLI::ExistingFile);

  OracleFlags of;
  std::string oracle_out;
  auto* s_or = app.add_subcommand("oracle-theorem1", "similarity-matrix error oracle on SBM graphs");
  s_or->add_option("--graphs", of.graphs, "number of graphs");
  s_or->add_option("--n", of.n, "nodes per graph");
  s_or->add_option("--blocks", of.blocks, "blocks per graph");
  s_or->add_option("--p-in", of.p_in, "within-block edge probability");
  s_or->add_option("--p-out", of.p_out, "between-block edge probability");
  s_or->add_option("--train-frac", of.train_frac, "fraction of visible labels");
  s_or->add_option("--seed", of.seed, "base seed");
  s_or->add_option("--out", oracle_out, "also write the report here");

  std::string viz_tax, viz_format = "dot", viz_out;
  auto* s_viz = app.add_subcommand("viz", "export the taxonomy for visualization");
  s_viz->add_option("--taxonomy", viz_tax, "taxonomy.json")->required()->check(CLI::ExistingFile);
  s_viz->add_option("--format", viz_format, "dot or radial-json")->check(CLI::IsMember({"dot", "radial-json"}));
  s_viz->add_option("--out", viz_out, "output directory")->required();

  SynthFlags sf;
  std::string synth_out;
  auto* s_gen = app.add_subcommand("gen-synthetic", "generate a synthetic dataset");
  s_gen->add_option("--kind", sf.kind, "sbm or planted-hierarchy")->check(CLI::IsMember({"sbm", "planted-hierarchy"}));
  s_gen->add_option("--out", synth_out, "output directory")->required();
  s_gen->add_option("--seed", sf.seed, "generator seed");
  s_gen->add_option("--n", sf.n, "number of nodes");
  s_gen->add_option("--train-frac", sf.train_frac, "train fraction");
  s_gen->add_option("--val-frac", sf.val_frac, "validation fraction");
  s_gen->add_option("--blocks", sf.sbm.blocks, "sbm: blocks");
  s_gen->add_option("--p-in", sf.sbm.p_in, "sbm: within-block edge probability");
  s_gen->add_option("--p-out", sf.sbm.p_out, "sbm: between-block edge probability");
  s_gen->add_option("--feature-dim", sf.sbm.feature_dim, "sbm: feature dimension");
  s_gen->add_option("--feature-noise", sf.sbm.feature_noise, "sbm: feature noise std");
  s_gen->add_option("--coarse", sf.planted.coarse, "planted: coarse groups");
  s_gen->add_option("--fine", sf.planted.fine, "planted: fine clusters per coarse group");
  s_gen->add_option("--dim", sf.planted.dim, "planted: feature dimension");
  s_gen->add_option("--sigma", sf.planted.sigma, "planted: point spread around fine centers");
  s_gen->add_option("--fine-spread", sf.planted.fine_spread, "planted: fine center spread");
  s_gen->add_option("--coarse-spread", sf.planted.coarse_spread, "planted: coarse center spread");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: usage: " << msg << "\n";
    return 2;
  }

  if (*s_pre) cmd_pretrain(pre);
  if (*s_tax) cmd_build_taxonomy(tax, encoder_path);
  if (*s_trn) cmd_train(trn, taxonomy_path, trn.flags.jobs);
  if (*s_ev) cmd_evaluate(ev, taxonomy_path, classifier_path);
  if (*s_or) cmd_oracle(of, oracle_out);
  if (*s_viz) cmd_viz(viz_tax, viz_format, viz_out);
  if (*s_gen) cmd_gen_synthetic(sf, synth_out);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::string msg = e.what();
    std::replace(msg.begin(), msg.end(), '\n', ' ');
    std::cerr << "error: " << msg << "\n";
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: io error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
  }
  return 1;
}
