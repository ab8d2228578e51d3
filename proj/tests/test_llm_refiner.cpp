#include "support.hpp"

#include <httplib.h>

using namespace taxograph;
using nlohmann::json;

namespace {

struct ScopedEnv {
  std::string name;
  std::optional<std::string> old;
  ScopedEnv(std::string n, const char* value) : name(std::move(n)) {
    if (const char* v = std::getenv(name.c_str())) old = v;
    if (value)
      ::setenv(name.c_str(), value, 1);
    else
      ::unsetenv(name.c_str());
  }
  ~ScopedEnv() {
    if (old)
      ::setenv(name.c_str(), old->c_str(), 1);
    else
      ::unsetenv(name.c_str());
  }
};

json completion(const std::string& content) {
  return {{"id", "x"}, {"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}}}};
}

/// In-process chat-completions endpoint answering from a queue of replies.
class FakeEndpoint {
 public:
  FakeEndpoint() {
    server_.Post(R"(/v1/chat/completions)", [this](const httplib::Request& req, httplib::Response& res) {
      std::lock_guard lock(mu_);
      requests.push_back(req.body);
      auth.push_back(req.get_header_value("Authorization"));
      paths.push_back(req.path);
      if (status != 200) {
        res.status = status;
        return;
      }
      std::string content = replies.empty() ? "1" : replies.front();
      if (replies.size() > 1) replies.erase(replies.begin());
      res.set_content(completion(content).dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeEndpoint() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

  int status = 200;
  std::vector<std::string> replies;
  std::vector<std::string> requests, auth, paths;

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
  std::mutex mu_;
};

EndpointConfig local(const FakeEndpoint& ep) {
  EndpointConfig c;
  c.base_url = ep.url();
  c.model = "test-model";
  c.backoff_ms = 1;
  c.max_retries = 2;
  c.timeout_seconds = 5;
  return c;
}

const std::vector<std::string> kDocs = {"alpha document", "beta document"};

}  // namespace

TEST(Prompts, RenderSplitVerbatim) {
  const std::string expected =
      "Here are some documents currently in one cluster:\n\n1. alpha document\n\n2. beta document\n\n"
      "Please decide whether they should stay in one cluster, or be split into multiple subclusters based on "
      "different topics. Only respond with a single number: the number of subclusters needed. If no split is "
      "needed, respond with 1.";
  EXPECT_EQ(prompts::split(kDocs), expected);
}

TEST(Prompts, RenderOthers) {
  auto m = prompts::merge({"a"}, {"b"});
  EXPECT_EQ(m.find("Cluster A:\n\n1. a"), m.find("Cluster A:"));
  EXPECT_NE(m.find("Cluster B:\n\n1. b"), std::string::npos);
  EXPECT_NE(m.find("Return only 1 if they should be merged, or 0 if they should remain separate."),
            std::string::npos);
  auto s = prompts::summarize(kDocs);
  EXPECT_NE(s.find("\"label\": \"[label]\""), std::string::npos);
  auto o = prompts::outlier("doc", {{"L1", "S1"}, {"L2", "S2"}});
  EXPECT_NE(o.find("Cluster 2:\n\nLabel: L2\n\nSummary: S2"), std::string::npos);
  EXPECT_NE(o.find("Document:\n\ndoc"), std::string::npos);
}

TEST(Parse, Replies) {
  EXPECT_EQ(parse::integer(" 2\n"), 2);
  EXPECT_EQ(parse::integer("`3`"), 3);
  EXPECT_EQ(parse::integer("4."), 4);
  EXPECT_THROW(parse::integer("two"), RefinerError);
  EXPECT_THROW(parse::integer("-1"), RefinerError);
  EXPECT_THROW(parse::integer(""), RefinerError);
  EXPECT_TRUE(parse::binary("1"));
  EXPECT_FALSE(parse::binary(" 0 "));
  EXPECT_THROW(parse::binary("2"), RefinerError);
  auto s = parse::summary("```json\n{\"label\": \"Graph Learning\", \"summary\": \"About graphs.\", \"extra\": 1}\n```");
  EXPECT_EQ(s.label, "Graph Learning");
  EXPECT_EQ(s.summary, "About graphs.");
  EXPECT_THROW(parse::summary("{\"summary\": \"x\"}"), RefinerError);
  EXPECT_THROW(parse::summary("no json here"), RefinerError);
}

TEST(LlmRefiner, MissingKeyFailsAtConstruction) {
  ScopedEnv env("TAXOGRAPH_API_KEY", nullptr);
  try {
    LlmRefiner r(EndpointConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "missing credentials");
  }
}

TEST(LlmRefiner, RequestShape) {
  ScopedEnv env("TAXOGRAPH_API_KEY", "sk-test");
  FakeEndpoint ep;
  ep.replies = {" 2\n"};
  LlmRefiner r(local(ep));
  auto reply = r.decide_split(kDocs);
  EXPECT_EQ(reply.value, 2);
  ASSERT_EQ(ep.requests.size(), 1u);
  EXPECT_EQ(ep.paths[0], "/v1/chat/completions");
  EXPECT_EQ(ep.auth[0], "Bearer sk-test");
  auto body = json::parse(ep.requests[0]);
  EXPECT_EQ(body["model"], "test-model");
  EXPECT_EQ(body["temperature"], 0);
  ASSERT_EQ(body["messages"].size(), 1u);
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], prompts::split(kDocs));
}

TEST(LlmRefiner, SummaryIgnoresExtraKeys) {
  ScopedEnv env("TAXOGRAPH_API_KEY", "k");
  FakeEndpoint ep;
  ep.replies = {R"({"label": "Topic", "summary": "Theme.", "confidence": 0.9})"};
  LlmRefiner r(local(ep));
  auto s = r.summarize(kDocs).value;
  EXPECT_EQ(s.label, "Topic");
  EXPECT_EQ(s.summary, "Theme.");
}

TEST(LlmRefiner, MissingLabelIsParseErrorAfterRetries) {
  ScopedEnv env("TAXOGRAPH_API_KEY", "k");
  FakeEndpoint ep;
  ep.replies = {R"({"summary": "only a summary"})"};
  LlmRefiner r(local(ep));
  try {
    r.summarize(kDocs);
    FAIL();
  } catch (const RefinerError& e) {
    EXPECT_EQ(e.code(), "parse error");
  }
  EXPECT_EQ(ep.requests.size(), 3u);  // first attempt + 2 retries
}

TEST(LlmRefiner, RetryRecoversFromBadReply) {
  ScopedEnv env("TAXOGRAPH_API_KEY", "k");
  FakeEndpoint ep;
  ep.replies = {"maybe", "1"};
  LlmRefiner r(local(ep));
  EXPECT_TRUE(r.decide_merge({"a"}, {"b"}).value);
  EXPECT_EQ(r.requests_sent(), 2);
}

TEST(LlmRefiner, RepeatedPromptIsCached) {
  ScopedEnv env("TAXOGRAPH_API_KEY", "k");
  FakeEndpoint ep;
  ep.replies = {"3"};
  LlmRefiner r(local(ep));
  EXPECT_EQ(r.decide_split(kDocs).value, 3);
  EXPECT_EQ(r.decide_split(kDocs).value, 3);
  EXPECT_EQ(ep.requests.size(), 1u);
  EXPECT_EQ(r.cache_size(), 1u);
  r.decide_split({"other"});
  EXPECT_EQ(ep.requests.size(), 2u);
}

TEST(LlmRefiner, AuthFailureIsNotRetried) {
  ScopedEnv env("TAXOGRAPH_API_KEY", "bad");
  FakeEndpoint ep;
  ep.status = 401;
  LlmRefiner r(local(ep));
  try {
    r.decide_split(kDocs);
    FAIL();
  } catch (const RefinerError& e) {
    EXPECT_EQ(e.code(), "auth error");
  }
  EXPECT_EQ(ep.requests.size(), 1u);
}

TEST(LlmRefiner, ServerErrorsExhaustRetries) {
  ScopedEnv env("TAXOGRAPH_API_KEY", "k");
  FakeEndpoint ep;
  ep.status = 503;
  LlmRefiner r(local(ep));
  try {
    r.decide_split(kDocs);
    FAIL();
  } catch (const RefinerError& e) {
    EXPECT_EQ(e.code(), "transport error");
  }
  EXPECT_EQ(ep.requests.size(), 3u);
}

TEST(LlmRefiner, UnreachableEndpoint) {
  ScopedEnv env("TAXOGRAPH_API_KEY", "k");
  EndpointConfig c;
  c.base_url = "http://127.0.0.1:1/v1";
  c.max_retries = 0;
  c.timeout_seconds = 1;
  LlmRefiner r(c);
  EXPECT_THROW(r.decide_split(kDocs), RefinerError);
}

TEST(LlmRefiner, DrivesRefinementPass) {
  // the whole pass over the wire: every query answered "1" keeps a single
  // cluster, the summary query fails to parse and aborts the pass
  ScopedEnv env("TAXOGRAPH_API_KEY", "k");
  FakeEndpoint ep;
  LlmRefiner r(local(ep));
  Matrix z = Matrix::Ones(12, 3);
  z(0, 0) = -1;  // lower cohesion
  z(1, 1) = -1;
  std::vector<std::string> texts(12, "doc");
  ClusterAssignment a{std::vector<int>(12, 0), 1, cluster_means(z, std::vector<int>(12, 0), 1)};
  RefinerConfig cfg;
  cfg.n_min = 5;
  cfg.tau_split = 0.99;
  EXPECT_THROW(refine(a, z, texts, r, cfg), RefineAborted);
  EXPECT_GE(ep.requests.size(), 2u);
}
