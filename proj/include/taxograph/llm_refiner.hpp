#pragma once

#include "taxograph/refiner.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <unordered_map>

namespace taxograph {

namespace prompts {

inline std::string numbered(const std::vector<std::string>& docs) {
  std::string out;
  for (std::size_t i = 0; i < docs.size(); ++i) out += std::to_string(i + 1) + ". " + docs[i] + "\n\n";
  return out;
}

inline std::string split(const std::vector<std::string>& docs) {
  return "Here are some documents currently in one cluster:\n\n" + numbered(docs) +
         "Please decide whether they should stay in one cluster, or be split into multiple subclusters "
         "based on different topics. Only respond with a single number: the number of subclusters needed. "
         "If no split is needed, respond with 1.";
}

inline std::string merge(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  return "Here are two clusters of documents:\n\nCluster A:\n\n" + numbered(a) + "Cluster B:\n\n" + numbered(b) +
         "Determine whether the two clusters are about the same or highly similar topic and should be merged. "
         "Return only 1 if they should be merged, or 0 if they should remain separate.";
}

inline std::string summarize(const std::vector<std::string>& docs) {
  return "Here are some documents from the same cluster:\n\n" + numbered(docs) +
         "Please:\n\n"
         "- Generate a short topic label (2\u20135 words)\n\n"
         "- Summarize the common theme in 1\u20132 sentences\n\n"
         "Output format (in JSON):\n\n"
         "{\n  \"label\": \"[label]\",\n  \"summary\": \"[summary]\"\n}";
}

inline std::string outlier(const std::string& text, const std::vector<ClusterSummary>& candidates) {
  std::string out = "Here is a document and a list of cluster summaries:\n\nDocument:\n\n" + text + "\n\n";
  for (std::size_t i = 0; i < candidates.size(); ++i)
    out += "Cluster " + std::to_string(i + 1) + ":\n\nLabel: " + candidates[i].label +
           "\n\nSummary: " + candidates[i].summary + "\n\n";
  return out +
         "Decide which cluster the document best belongs to. Only return the number of the best matching "
         "cluster (e.g., 1, 2, 3, ...).";
}

}  // namespace prompts

namespace parse {

inline std::string trim(std::string_view s) {
  const auto ws = " \t\r\n`";
  const auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  return std::string(s.substr(b, s.find_last_not_of(ws) - b + 1));
}

/// Bare integer, surrounding whitespace and one trailing period allowed.
inline int integer(std::string_view raw) {
  std::string s = trim(raw);
  if (!s.empty() && s.back() == '.') s.pop_back();
  if (s.empty() || s.size() > 9 || !std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c); }))
    throw RefinerError("parse error", "expected an integer, got '" + std::string(raw) + "'");
  return std::stoi(s);
}

inline bool binary(std::string_view raw) {
  const int v = integer(raw);
  if (v != 0 && v != 1) throw RefinerError("parse error", "expected 0 or 1, got '" + std::string(raw) + "'");
  return v == 1;
}

/// First {...} object in the reply (code fences tolerated); extra keys ignored.
inline ClusterSummary summary(std::string_view raw) {
  const auto b = raw.find('{'), e = raw.rfind('}');
  if (b == std::string_view::npos || e == std::string_view::npos || e < b)
    throw RefinerError("parse error", "no JSON object in summary reply");
  nlohmann::json j = nlohmann::json::parse(raw.substr(b, e - b + 1), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw RefinerError("parse error", "summary reply is not a JSON object");
  if (!j.contains("label") || !j["label"].is_string())
    throw RefinerError("parse error", "summary reply lacks a string \"label\"");
  if (!j.contains("summary") || !j["summary"].is_string())
    throw RefinerError("parse error", "summary reply lacks a string \"summary\"");
  return {j["label"].get<std::string>(), j["summary"].get<std::string>()};
}

}  // namespace parse

struct HttpReply {
  int status = 0;  // 0 = transport failure
  std::string body;
  std::string error;
};

/// POST `body` (JSON) to `path` relative to the endpoint; injectable for tests.
using Transport = std::function<HttpReply(const std::string& path, const std::string& body,
                                          const std::string& bearer)>;

struct EndpointConfig {
  std::string base_url = "https://api.deepseek.com/v1";
  std::string model = "deepseek-chat";
  std::string api_key_env = "TAXOGRAPH_API_KEY";
  int timeout_seconds = 60;
  int max_retries = 3;
  int backoff_ms = 500;  // doubled after each failed attempt
};

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string prefix;  // path without trailing slash
};

inline ParsedUrl parse_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw Error("invalid config", "endpoint URL needs a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  ParsedUrl p{url.substr(0, slash), slash == std::string::npos ? "" : url.substr(slash)};
  while (!p.prefix.empty() && p.prefix.back() == '/') p.prefix.pop_back();
  return p;
}

inline Transport http_transport(const EndpointConfig& cfg) {
  const auto url = parse_url(cfg.base_url);
  return [origin = url.origin, timeout = cfg.timeout_seconds](const std::string& path, const std::string& body,
                                                               const std::string& bearer) {
    httplib::Client cli(origin);
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    httplib::Headers headers;
    if (!bearer.empty()) headers.emplace("Authorization", "Bearer " + bearer);
    auto res = cli.Post(path, headers, body, "application/json");
    if (!res) return HttpReply{0, {}, httplib::to_string(res.error())};
    return HttpReply{res->status, res->body, {}};
  };
}

/// Chat-completion backed refiner. One user message per query, temperature 0,
/// replies cached by prompt hash.
class LlmRefiner final : public Refiner {
 public:
  explicit LlmRefiner(EndpointConfig cfg, Transport transport = {}) : cfg_(std::move(cfg)) {
    const char* key = std::getenv(cfg_.api_key_env.c_str());
    if (!key || !*key) throw Error("missing credentials", "set " + cfg_.api_key_env);
    key_ = key;
    path_ = parse_url(cfg_.base_url).prefix + "/chat/completions";
    transport_ = transport ? std::move(transport) : http_transport(cfg_);
  }

  RefinerReply<int> decide_split(const std::vector<std::string>& samples) override {
    return ask<int>(prompts::split(samples), [](const std::string& r) {
      const int m = parse::integer(r);
      if (m < 1) throw RefinerError("parse error", "subcluster count must be >= 1");
      return m;
    });
  }
  RefinerReply<bool> decide_merge(const std::vector<std::string>& a, const std::vector<std::string>& b) override {
    return ask<bool>(prompts::merge(a, b), [](const std::string& r) { return parse::binary(r); });
  }
  RefinerReply<ClusterSummary> summarize(const std::vector<std::string>& samples) override {
    return ask<ClusterSummary>(prompts::summarize(samples), [](const std::string& r) { return parse::summary(r); });
  }
  RefinerReply<int> assign_outlier(const std::string& text, const std::vector<ClusterSummary>& candidates) override {
    return ask<int>(prompts::outlier(text, candidates), [](const std::string& r) { return parse::integer(r); });
  }

  std::string request_body(const std::string& prompt) const {
    nlohmann::json body = {{"model", cfg_.model},
                           {"messages", {{{"role", "user"}, {"content", prompt}}}},
                           {"temperature", 0}};
    return body.dump();
  }

  int requests_sent() const { return sent_.load(); }
  std::size_t cache_size() const {
    std::lock_guard lock(mu_);
    return cache_.size();
  }

 private:
  template <typename T, typename Parse>
  RefinerReply<T> ask(const std::string& prompt, Parse&& parse) {
    const auto key = fnv1a(prompt, fnv1a(cfg_.model));
    {
      std::lock_guard lock(mu_);
      if (auto it = cache_.find(key); it != cache_.end()) return {parse(it->second), it->second};
    }
    const std::string body = request_body(prompt);
    std::string last;
    int delay = cfg_.backoff_ms;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      if (attempt > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        delay *= 2;
      }
      ++sent_;
      auto reply = transport_(path_, body, key_);
      if (reply.status == 401 || reply.status == 403)
        throw RefinerError("auth error", "endpoint rejected credentials (HTTP " + std::to_string(reply.status) + ")");
      if (reply.status != 200) {
        last = reply.status == 0 ? "transport: " + reply.error : "HTTP " + std::to_string(reply.status);
        continue;
      }
      try {
        std::string content = extract_content(reply.body);
        T value = parse(content);
        std::lock_guard lock(mu_);
        cache_.emplace(key, content);
        return {std::move(value), std::move(content)};
      } catch (const RefinerError& e) {
        last = e.what();
      }
    }
    if (last.rfind("parse error", 0) == 0) throw RefinerError("parse error", "after retries: " + last);
    throw RefinerError("transport error", "after retries: " + last);
  }

  static std::string extract_content(const std::string& body) {
    auto j = nlohmann::json::parse(body, nullptr, false);
    if (j.is_discarded()) throw RefinerError("parse error", "reply body is not JSON");
    try {
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      throw RefinerError("parse error", "reply lacks choices[0].message.content");
    }
  }

  EndpointConfig cfg_;
  std::string key_;
  std::string path_;
  Transport transport_;
  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, std::string> cache_;
  std::atomic<int> sent_{0};
};

}  // namespace taxograph
