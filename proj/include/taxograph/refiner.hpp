#pragma once

#include "taxograph/common.hpp"
#include "taxograph/graph.hpp"
#include "taxograph/hierarchy.hpp"
#include "taxograph/kmeans.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <exception>
#include <map>
#include <numeric>
#include <random>
#include <regex>
#include <thread>

namespace taxograph {

struct RefinerConfig {
  double tau_split = 0.75;
  int n_split = 20;
  double tau_merge = 0.9;
  int n_merge = 10;
  int n_min = 10;
  int n_close = 10;
  double r = 0.05;
  int n_outlier = 3;
  int max_split = 8;        // cap on the subcluster count a split reply may request
  int max_in_flight = 4;    // concurrent refiner queries within one step
  std::uint64_t seed = 0;

  void validate() const {
    auto tau_ok = [](double t) { return t > -1.0 && t <= 1.0; };
    if (!tau_ok(tau_split) || !tau_ok(tau_merge)) throw Error("invalid config", "tau must be in (-1, 1]");
    if (n_split < 1 || n_merge < 1 || n_min < 1 || n_close < 1 || n_outlier < 1 || max_split < 1 ||
        max_in_flight < 1)
      throw Error("invalid config", "refiner counts must be >= 1");
    if (!(r > 0.0 && r < 1.0)) throw Error("invalid config", "r must be in (0, 1)");
  }
};

/// Typed failure from a refiner backend (transport, auth, parse).
class RefinerError : public Error {
 public:
  using Error::Error;
};

template <typename T>
struct RefinerReply {
  T value;
  std::string raw;  // raw response text; hashed into the transcript
};

/// The four questions the refinement pass asks. Implementations must be safe
/// to call concurrently.
class Refiner {
 public:
  virtual ~Refiner() = default;
  /// Number of subclusters (>= 1) the sampled documents should become.
  virtual RefinerReply<int> decide_split(const std::vector<std::string>& samples) = 0;
  virtual RefinerReply<bool> decide_merge(const std::vector<std::string>& a,
                                          const std::vector<std::string>& b) = 0;
  virtual RefinerReply<ClusterSummary> summarize(const std::vector<std::string>& samples) = 0;
  /// 1-based index into `candidates`.
  virtual RefinerReply<int> assign_outlier(const std::string& text,
                                           const std::vector<ClusterSummary>& candidates) = 0;
};

// ---------------------------------------------------------------------------
// Mock backed by marker tags such as "[c1f2]" embedded in the texts.

inline std::string marker_tag(const std::string& text) {
  static const std::regex re(R"(\[([A-Za-z0-9_.:-]+)\])");
  std::smatch m;
  return std::regex_search(text, m, re) ? m[1].str() : std::string{};
}

/// Most frequent non-empty tag; ties go to the lexicographically smallest.
inline std::string majority_tag(const std::vector<std::string>& texts) {
  std::map<std::string, int> count;
  for (const auto& t : texts) {
    auto tag = marker_tag(t);
    if (!tag.empty()) ++count[tag];
  }
  std::string best;
  int bc = 0;
  for (const auto& [tag, c] : count)
    if (c > bc) best = tag, bc = c;
  return best;
}

class MockRefiner final : public Refiner {
 public:
  explicit MockRefiner(std::uint64_t seed = 0) : seed_(seed) {}

  RefinerReply<int> decide_split(const std::vector<std::string>& samples) override {
    std::set<std::string> tags;
    for (const auto& s : samples)
      if (auto t = marker_tag(s); !t.empty()) tags.insert(t);
    int m = tags.size() >= 2 ? static_cast<int>(tags.size()) : 1;
    return {m, std::to_string(m)};
  }

  RefinerReply<bool> decide_merge(const std::vector<std::string>& a,
                                  const std::vector<std::string>& b) override {
    auto ta = majority_tag(a), tb = majority_tag(b);
    bool merge = !ta.empty() && ta == tb;
    return {merge, merge ? "1" : "0"};
  }

  RefinerReply<ClusterSummary> summarize(const std::vector<std::string>& samples) override {
    auto tag = majority_tag(samples);
    int hits = 0;
    for (const auto& s : samples)
      if (marker_tag(s) == tag) ++hits;
    ClusterSummary out{tag, "Documents tagged " + tag + " (" + std::to_string(hits) + "/" +
                                std::to_string(samples.size()) + " samples)."};
    nlohmann::json raw = {{"label", out.label}, {"summary", out.summary}};
    return {out, raw.dump()};
  }

  RefinerReply<int> assign_outlier(const std::string& text,
                                   const std::vector<ClusterSummary>& candidates) override {
    auto tag = marker_tag(text);
    int pick = 1;  // the current cluster is always listed first
    for (std::size_t i = 0; i < candidates.size(); ++i)
      if (!tag.empty() && candidates[i].label == tag) {
        pick = static_cast<int>(i) + 1;
        break;
      }
    return {pick, std::to_string(pick)};
  }

  std::uint64_t seed() const { return seed_; }

 private:
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Transcript

struct TranscriptEntry {
  std::string step;           // split | merge | redistribute | summarize | reassign
  std::vector<int> clusters;  // cluster ids the decision concerns (ids at that step)
  std::optional<NodeId> node; // reassign / redistribute: the node moved
  nlohmann::json decision;
  std::string response_hash;  // FNV-1a of the raw reply, empty for local decisions

  friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

using Transcript = std::vector<TranscriptEntry>;

inline nlohmann::json to_json(const TranscriptEntry& e) {
  nlohmann::json j = {{"step", e.step},
                      {"clusters", e.clusters},
                      {"decision", e.decision},
                      {"response_hash", e.response_hash}};
  if (e.node) j["node"] = *e.node;
  return j;
}

inline TranscriptEntry transcript_entry_from_json(const nlohmann::json& j) {
  TranscriptEntry e;
  e.step = j.at("step").get<std::string>();
  e.clusters = j.at("clusters").get<std::vector<int>>();
  if (j.contains("node")) e.node = j.at("node").get<NodeId>();
  e.decision = j.at("decision");
  e.response_hash = j.at("response_hash").get<std::string>();
  return e;
}

inline std::string transcript_to_jsonl(const Transcript& t) {
  std::string out;
  for (const auto& e : t) out += to_json(e).dump() + "\n";
  return out;
}

inline Transcript transcript_from_jsonl(std::string_view text) {
  Transcript t;
  io::detail::for_each_line(text, [&](std::string_view line, std::size_t lineno) {
    if (line.empty()) return;
    try {
      t.push_back(transcript_entry_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw Error("malformed JSON", "transcript line " + std::to_string(lineno) + ": " + e.what());
    }
  });
  return t;
}

/// Serves the recorded decisions of a previous run. Queries are matched by
/// (step, clusters, node), so replay does not depend on query order.
class ReplayRefiner final : public Refiner {
 public:
  explicit ReplayRefiner(const Transcript& t) {
    for (const auto& e : t) entries_[key(e.step, e.clusters, e.node)] = e.decision;
  }

  /// The next query's identity; refine() announces it before each call.
  void expect(const std::string& step, const std::vector<int>& clusters, std::optional<NodeId> node) {
    std::lock_guard lock(mu_);
    pending_[std::this_thread::get_id()] = key(step, clusters, node);
  }

  RefinerReply<int> decide_split(const std::vector<std::string>&) override {
    auto d = take();
    return {d.at("requested").get<int>(), d.at("requested").dump()};
  }
  RefinerReply<bool> decide_merge(const std::vector<std::string>&, const std::vector<std::string>&) override {
    auto d = take();
    bool m = d.at("merge").get<bool>();
    return {m, m ? "1" : "0"};
  }
  RefinerReply<ClusterSummary> summarize(const std::vector<std::string>&) override {
    auto d = take();
    ClusterSummary s{d.at("label").get<std::string>(), d.at("summary").get<std::string>()};
    return {s, d.dump()};
  }
  RefinerReply<int> assign_outlier(const std::string&, const std::vector<ClusterSummary>&) override {
    auto d = take();
    return {d.at("choice").get<int>(), d.at("choice").dump()};
  }

 private:
  static std::string key(const std::string& step, const std::vector<int>& c, std::optional<NodeId> node) {
    std::string k = step;
    for (int v : c) k += ":" + std::to_string(v);
    if (node) k += "@" + std::to_string(*node);
    return k;
  }
  nlohmann::json take() {
    std::lock_guard lock(mu_);
    auto it = pending_.find(std::this_thread::get_id());
    if (it == pending_.end()) throw RefinerError("replay mismatch", "query without expectation");
    auto e = entries_.find(it->second);
    if (e == entries_.end()) throw RefinerError("replay mismatch", "no recorded decision for " + it->second);
    return e->second;
  }

  std::map<std::string, nlohmann::json> entries_;
  std::map<std::thread::id, std::string> pending_;
  std::mutex mu_;
};

/// Thrown when a backend fails mid-pass; carries everything decided so far.
class RefineAborted : public Error {
 public:
  RefineAborted(const RefinerError& cause, Transcript so_far)
      : Error("refiner failure", cause.what()), transcript(std::move(so_far)) {}
  Transcript transcript;
};

// ---------------------------------------------------------------------------
// Refinement pass

struct RefineStats {
  int split_queries = 0;
  int merge_queries = 0;
  int summarize_queries = 0;
  int reassign_queries = 0;
  int low_cohesion_clusters = 0;
  int merge_candidates = 0;
  int outliers_total = 0;
  int clamped_splits = 0;
  int rejected_replies = 0;

  int total_queries() const {
    return split_queries + merge_queries + summarize_queries + reassign_queries;
  }
};

struct RefineResult {
  ClusterAssignment assignment;
  std::vector<ClusterSummary> summaries;
  Transcript transcript;
  RefineStats stats;
};

namespace detail {

/// Runs f(i) for i in [0, n) with at most `width` concurrent workers. Results
/// land in index order; the lowest-index exception is rethrown.
template <typename T, typename F>
std::vector<T> bounded_map(std::size_t n, int width, F&& f) {
  std::vector<std::optional<T>> slots(n);
  std::vector<std::exception_ptr> errors(n);
  auto run = [&](std::size_t i) {
    try {
      slots[i].emplace(f(i));
    } catch (...) {
      errors[i] = std::current_exception();
    }
  };
  if (width <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) run(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    const auto w = std::min<std::size_t>(static_cast<std::size_t>(width), n);
    for (std::size_t t = 0; t < w; ++t)
      pool.emplace_back([&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) run(i);
      });
    for (auto& th : pool) th.join();
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
  std::vector<T> out;
  out.reserve(n);
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

struct ClusterState {
  std::vector<int> assign;
  int k = 0;
  Matrix centroids;

  std::vector<std::vector<NodeId>> members() const {
    std::vector<std::vector<NodeId>> out(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < assign.size(); ++i)
      out[static_cast<std::size_t>(assign[i])].push_back(static_cast<NodeId>(i));
    return out;
  }

  /// Drops empty clusters keeping relative order; returns old -> new id (-1 = gone).
  std::vector<int> compact() {
    std::vector<NodeId> sizes(static_cast<std::size_t>(k), 0);
    for (int a : assign) ++sizes[static_cast<std::size_t>(a)];
    std::vector<int> remap(static_cast<std::size_t>(k), -1);
    int next = 0;
    for (int c = 0; c < k; ++c)
      if (sizes[static_cast<std::size_t>(c)] > 0) remap[static_cast<std::size_t>(c)] = next++;
    for (int& a : assign) a = remap[static_cast<std::size_t>(a)];
    k = next;
    return remap;
  }

  void recompute(const Matrix& z) { centroids = cluster_means(z, assign, k); }
};

inline std::uint64_t query_seed(std::uint64_t base, const std::string& step, std::initializer_list<NodeId> ids) {
  std::string s = step;
  for (auto v : ids) s += ":" + std::to_string(v);
  return fnv1a(s, fnv1a(std::to_string(base)));
}

/// Members ordered by cosine to the centroid, most similar first.
inline std::vector<NodeId> by_closeness(const Matrix& z, const std::vector<NodeId>& members,
                                        const Eigen::Ref<const Eigen::RowVectorXd>& centroid) {
  std::vector<std::pair<double, NodeId>> scored;
  scored.reserve(members.size());
  for (NodeId m : members) scored.emplace_back(-cosine(z.row(m), centroid), m);
  std::sort(scored.begin(), scored.end());
  std::vector<NodeId> out;
  for (auto& [s, m] : scored) out.push_back(m);
  return out;
}

/// Half of the sample is taken centroid-nearest first, the rest is a seeded
/// random fill from the remaining members.
inline std::vector<NodeId> sample_members(const std::vector<NodeId>& ordered, std::size_t count,
                                          std::uint64_t seed) {
  if (ordered.size() <= count) return ordered;
  const std::size_t head = (count + 1) / 2;
  std::vector<NodeId> out(ordered.begin(), ordered.begin() + static_cast<std::ptrdiff_t>(head));
  std::vector<NodeId> rest(ordered.begin() + static_cast<std::ptrdiff_t>(head), ordered.end());
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < count - head; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, rest.size() - 1);
    std::swap(rest[i], rest[pick(rng)]);
    out.push_back(rest[i]);
  }
  return out;
}

inline std::vector<std::string> texts_of(const std::vector<std::string>& texts, const std::vector<NodeId>& ids) {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (NodeId i : ids) out.push_back(texts[static_cast<std::size_t>(i)]);
  return out;
}

inline std::string hash_reply(const std::string& raw) { return hex64(fnv1a(raw)); }

}  // namespace detail

/// Single refinement pass over a flat clustering, in order:
/// split -> merge -> redistribute -> summarize -> reassign.
/// Centroids are recomputed after every step that changes membership.
class RefinementPass {
 public:
  RefinementPass(const Matrix& embeddings, const std::vector<std::string>& texts, Refiner& refiner,
                 RefinerConfig cfg)
      : z_(embeddings), texts_(texts), refiner_(refiner), cfg_(std::move(cfg)),
        replay_(dynamic_cast<ReplayRefiner*>(&refiner)) {
    cfg_.validate();
    if (static_cast<Eigen::Index>(texts_.size()) != z_.rows())
      throw Error("invalid input", "refinement needs a text for every node");
  }

  RefineResult run(const ClusterAssignment& initial) {
    validate_assignment(initial, z_.rows());
    state_ = {initial.assignment, initial.k, {}};
    state_.recompute(z_);
    result_ = {};
    try {
      split_step();
      merge_step();
      redistribute_step();
      summarize_step();
      reassign_step();
    } catch (const RefinerError& e) {
      throw RefineAborted(e, result_.transcript);
    }
    result_.assignment = {state_.assign, state_.k, state_.centroids};
    return std::move(result_);
  }

  // Individual steps, usable on their own (tests drive them separately).
  void load(const ClusterAssignment& a) {
    validate_assignment(a, z_.rows());
    state_ = {a.assignment, a.k, {}};
    state_.recompute(z_);
  }
  ClusterAssignment current() const { return {state_.assign, state_.k, state_.centroids}; }
  const RefineResult& partial() const { return result_; }
  void set_summaries(std::vector<ClusterSummary> s) { result_.summaries = std::move(s); }

  void split_step() {
    auto members = state_.members();
    std::vector<int> queried;
    std::vector<double> coh(static_cast<std::size_t>(state_.k));
    for (int c = 0; c < state_.k; ++c) {
      Matrix rows = detail::gather_rows(z_, members[static_cast<std::size_t>(c)]);
      coh[static_cast<std::size_t>(c)] = cohesion(rows, state_.centroids.row(c)).value;
      if (coh[static_cast<std::size_t>(c)] < cfg_.tau_split) queried.push_back(c);
    }
    result_.stats.low_cohesion_clusters += static_cast<int>(queried.size());
    auto replies = detail::bounded_map<RefinerReply<int>>(queried.size(), cfg_.max_in_flight, [&](std::size_t q) {
      const int c = queried[q];
      const auto& mem = members[static_cast<std::size_t>(c)];
      auto ordered = detail::by_closeness(z_, mem, state_.centroids.row(c));
      auto sample = detail::sample_members(ordered, static_cast<std::size_t>(cfg_.n_split),
                                           detail::query_seed(cfg_.seed, "split", {c}));
      announce("split", {c}, std::nullopt);
      return refiner_.decide_split(detail::texts_of(texts_, sample));
    });
    result_.stats.split_queries += static_cast<int>(queried.size());

    for (std::size_t q = 0; q < queried.size(); ++q) {
      const int c = queried[q];
      const auto& mem = members[static_cast<std::size_t>(c)];
      const int requested = replies[q].value;
      const int cap = std::max(1, std::min(cfg_.max_split, static_cast<int>(mem.size()) / cfg_.n_min));
      int m = std::clamp(requested, 1, cap);
      if (m != requested) {
        ++result_.stats.clamped_splits;
        warn("split: cluster " + std::to_string(c) + " requested " + std::to_string(requested) +
             " subclusters, clamped to " + std::to_string(m));
      }
      std::vector<int> created;
      if (m > 1) {
        KMeansConfig kc;
        kc.k = m;
        kc.seed = detail::query_seed(cfg_.seed, "split-kmeans", {c});
        kc.restarts = 4;
        auto km = kmeans(detail::gather_rows(z_, mem), kc);
        std::vector<int> target(static_cast<std::size_t>(m));
        target[0] = c;
        for (int s = 1; s < m; ++s) {
          target[static_cast<std::size_t>(s)] = state_.k++;
          created.push_back(target[static_cast<std::size_t>(s)]);
        }
        for (std::size_t i = 0; i < mem.size(); ++i)
          state_.assign[static_cast<std::size_t>(mem[i])] =
              target[static_cast<std::size_t>(km.clusters.assignment[i])];
      }
      result_.transcript.push_back({"split",
                                    {c},
                                    std::nullopt,
                                    {{"requested", requested},
                                     {"applied", m},
                                     {"cohesion", coh[static_cast<std::size_t>(c)]},
                                     {"new_clusters", created}},
                                    detail::hash_reply(replies[q].raw)});
    }
    state_.recompute(z_);
  }

  void merge_step() {
    struct Pair {
      double sim;
      int i, j;
    };
    std::vector<Pair> pairs;
    for (int i = 0; i < state_.k; ++i)
      for (int j = i + 1; j < state_.k; ++j) {
        double s = cosine(state_.centroids.row(i), state_.centroids.row(j));
        if (s > cfg_.tau_merge) pairs.push_back({s, i, j});
      }
    std::sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
      if (a.sim != b.sim) return a.sim > b.sim;
      return std::tie(a.i, a.j) < std::tie(b.i, b.j);
    });
    result_.stats.merge_candidates += static_cast<int>(pairs.size());

    std::vector<int> parent(static_cast<std::size_t>(state_.k));
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](int x) {
      while (parent[static_cast<std::size_t>(x)] != x)
        x = parent[static_cast<std::size_t>(x)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(x)])];
      return x;
    };
    auto members = state_.members();
    for (const auto& p : pairs) {
      const int ri = find(p.i), rj = find(p.j);
      if (ri == rj) continue;
      auto side = [&](int c) {
        auto ordered = detail::by_closeness(z_, members[static_cast<std::size_t>(c)], state_.centroids.row(c));
        auto s = detail::sample_members(ordered, static_cast<std::size_t>(cfg_.n_merge),
                                        detail::query_seed(cfg_.seed, "merge", {p.i, p.j, c}));
        return detail::texts_of(texts_, s);
      };
      announce("merge", {p.i, p.j}, std::nullopt);
      auto reply = refiner_.decide_merge(side(p.i), side(p.j));
      ++result_.stats.merge_queries;
      if (reply.value) {
        const int lo = std::min(ri, rj), hi = std::max(ri, rj);
        parent[static_cast<std::size_t>(hi)] = lo;
      }
      result_.transcript.push_back({"merge",
                                    {p.i, p.j},
                                    std::nullopt,
                                    {{"merge", reply.value}, {"similarity", p.sim}},
                                    detail::hash_reply(reply.raw)});
    }
    for (int& a : state_.assign) a = find(a);
    state_.compact();
    state_.recompute(z_);
  }

  void redistribute_step() {
    auto members = state_.members();
    std::vector<int> viable, small;
    for (int c = 0; c < state_.k; ++c)
      (static_cast<int>(members[static_cast<std::size_t>(c)].size()) >= cfg_.n_min ? viable : small).push_back(c);
    if (small.empty()) return;
    if (viable.empty()) throw Error("no viable target clusters", "every cluster is smaller than n_min");
    for (int c : small)
      for (NodeId v : members[static_cast<std::size_t>(c)]) {
        int best = viable.front();
        double bs = -std::numeric_limits<double>::infinity();
        for (int j : viable) {
          double s = cosine(z_.row(v), state_.centroids.row(j));
          if (s > bs) bs = s, best = j;
        }
        state_.assign[static_cast<std::size_t>(v)] = best;
        result_.transcript.push_back({"redistribute", {c, best}, v, {{"target", best}, {"cosine", bs}}, ""});
      }
    state_.compact();
    state_.recompute(z_);
  }

  void summarize_step() {
    auto members = state_.members();
    auto replies = detail::bounded_map<RefinerReply<ClusterSummary>>(
        static_cast<std::size_t>(state_.k), cfg_.max_in_flight, [&](std::size_t c) {
          const auto ci = static_cast<int>(c);
          auto ordered = detail::by_closeness(z_, members[c], state_.centroids.row(ci));
          ordered.resize(std::min(ordered.size(), static_cast<std::size_t>(cfg_.n_close)));
          announce("summarize", {ci}, std::nullopt);
          return refiner_.summarize(detail::texts_of(texts_, ordered));
        });
    result_.stats.summarize_queries += state_.k;
    result_.summaries.clear();
    for (int c = 0; c < state_.k; ++c) {
      const auto& s = replies[static_cast<std::size_t>(c)];
      result_.summaries.push_back(s.value);
      result_.transcript.push_back({"summarize",
                                    {c},
                                    std::nullopt,
                                    {{"label", s.value.label}, {"summary", s.value.summary}},
                                    detail::hash_reply(s.raw)});
    }
  }

  void reassign_step() {
    if (static_cast<int>(result_.summaries.size()) != state_.k)
      throw Error("invalid state", "reassign needs a summary for every cluster");
    auto members = state_.members();
    struct Query {
      NodeId node;
      int cluster;
      std::vector<int> candidates;
    };
    std::vector<Query> queries;
    for (int c = 0; c < state_.k; ++c) {
      const auto& mem = members[static_cast<std::size_t>(c)];
      auto ordered = detail::by_closeness(z_, mem, state_.centroids.row(c));
      const auto count = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::ceil(cfg_.r * static_cast<double>(mem.size()) - 1e-9)));
      for (std::size_t t = 0; t < count && t < ordered.size(); ++t) {
        const NodeId v = ordered[ordered.size() - 1 - t];
        std::vector<std::pair<double, int>> others;
        for (int j = 0; j < state_.k; ++j)
          if (j != c) others.emplace_back(-cosine(z_.row(v), state_.centroids.row(j)), j);
        std::sort(others.begin(), others.end());
        Query q{v, c, {c}};
        for (std::size_t o = 0; o < others.size() && static_cast<int>(q.candidates.size()) < cfg_.n_outlier; ++o)
          q.candidates.push_back(others[o].second);
        queries.push_back(std::move(q));
      }
    }
    std::sort(queries.begin(), queries.end(),
              [](const Query& a, const Query& b) { return std::tie(a.cluster, a.node) < std::tie(b.cluster, b.node); });
    result_.stats.outliers_total += static_cast<int>(queries.size());
    auto replies = detail::bounded_map<RefinerReply<int>>(queries.size(), cfg_.max_in_flight, [&](std::size_t i) {
      const auto& q = queries[i];
      std::vector<ClusterSummary> cands;
      for (int c : q.candidates) cands.push_back(result_.summaries[static_cast<std::size_t>(c)]);
      announce("reassign", q.candidates, q.node);
      return refiner_.assign_outlier(texts_[static_cast<std::size_t>(q.node)], cands);
    });
    result_.stats.reassign_queries += static_cast<int>(queries.size());

    for (std::size_t i = 0; i < queries.size(); ++i) {
      const auto& q = queries[i];
      const int choice = replies[i].value;
      int target = q.cluster;
      bool accepted = choice >= 1 && choice <= static_cast<int>(q.candidates.size());
      if (accepted) {
        target = q.candidates[static_cast<std::size_t>(choice - 1)];
      } else {
        ++result_.stats.rejected_replies;
        warn("reassign: reply " + std::to_string(choice) + " out of range for node " + std::to_string(q.node));
      }
      state_.assign[static_cast<std::size_t>(q.node)] = target;
      result_.transcript.push_back({"reassign",
                                    q.candidates,
                                    q.node,
                                    {{"choice", choice}, {"accepted", accepted}, {"target", target}},
                                    detail::hash_reply(replies[i].raw)});
    }
    auto remap = state_.compact();
    std::vector<ClusterSummary> kept;
    for (std::size_t c = 0; c < remap.size(); ++c)
      if (remap[c] >= 0) kept.push_back(result_.summaries[c]);
    result_.summaries = std::move(kept);
    state_.recompute(z_);
  }

 private:
  void announce(const std::string& step, const std::vector<int>& clusters, std::optional<NodeId> node) {
    if (replay_) replay_->expect(step, clusters, node);
  }

  const Matrix& z_;
  const std::vector<std::string>& texts_;
  Refiner& refiner_;
  RefinerConfig cfg_;
  ReplayRefiner* replay_ = nullptr;
  detail::ClusterState state_;
  RefineResult result_;
};

inline RefineResult refine(const ClusterAssignment& assignment, const Matrix& embeddings,
                           const std::vector<std::string>& texts, Refiner& refiner, const RefinerConfig& cfg) {
  return RefinementPass(embeddings, texts, refiner, cfg).run(assignment);
}

}  // namespace taxograph
