#include <gtest/gtest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <atomic>
#include <cmath>
#include <thread>

#include "sentimtl/backend.hpp"
#include "sentimtl/error.hpp"

using namespace sentimtl;
using json = nlohmann::json;

namespace {

/// Chat-completion server on a free local port, stopped on destruction.
class LocalServer {
public:
  explicit LocalServer(httplib::Server::Handler handler) {
    server_.Post("/v1/chat/completions", std::move(handler));
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~LocalServer() {
    server_.stop();
    thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }

private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

std::string completion(const std::string& content, const json& logprobs = nullptr) {
  json choice = {{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}};
  if (!logprobs.is_null()) choice["logprobs"] = {{"content", logprobs}};
  return json{{"choices", json::array({choice})}}.dump();
}

RetryPolicy fast_retries(std::vector<std::chrono::milliseconds>* sleeps) {
  RetryPolicy p;
  p.sleep = [sleeps](std::chrono::milliseconds d) { sleeps->push_back(d); };
  return p;
}

}  // namespace

TEST(Response, ValidateRejectsPositiveLogprob) {
  BackendResponse r{"x", std::vector<TokenLogprob>{{"x", 0.1}}, std::nullopt};
  EXPECT_THROW(r.validate(), DataError);
  r.token_logprobs = std::vector<TokenLogprob>{{"x", -INFINITY}};
  EXPECT_THROW(r.validate(), DataError);
  r.token_logprobs = std::vector<TokenLogprob>{{"x", 0.0}, {"y", -3.0}};
  EXPECT_NO_THROW(r.validate());
}

TEST(Mock, LookupPrefersMostSpecific) {
  MockBackend mock = MockBackend::from_jsonl(R"({"id":"*","template":"polarity","text":"any"}
{"id":"*","template":"polarity","epoch":1,"text":"any-1"}
{"id":"s1","template":"polarity","text":"s1"}
{"id":"s1","template":"polarity","epoch":2,"text":"s1-2"})");
  auto ask = [&](std::string id, std::size_t epoch) {
    return mock.complete({std::move(id), PromptKind::polarity, epoch, "p", false}).text;
  };
  EXPECT_EQ(ask("s1", 2), "s1-2");
  EXPECT_EQ(ask("s1", 1), "s1");
  EXPECT_EQ(ask("s2", 1), "any-1");
  EXPECT_EQ(ask("s2", 0), "any");
  EXPECT_EQ(mock.calls("s1", PromptKind::polarity), 2u);
  EXPECT_EQ(mock.total_calls(), 4u);
  mock.reset_counts();
  EXPECT_EQ(mock.total_calls(), 0u);
}

TEST(Mock, ScriptErrors) {
  EXPECT_THROW(MockBackend::from_jsonl("{not json"), DataError);
  EXPECT_THROW(MockBackend::from_jsonl(R"({"id":"a","template":"bogus","text":"x"})"), DataError);
  EXPECT_THROW(MockBackend::from_jsonl(R"({"id":"a","template":"aspect","error":"crash"})"), DataError);
  MockBackend empty;
  EXPECT_THROW(empty.complete({"a", PromptKind::aspect, 0, "p", false}), DataError);
  MockBackend t = MockBackend::from_jsonl(R"({"id":"a","template":"aspect","error":"timeout"})");
  EXPECT_THROW(t.complete({"a", PromptKind::aspect, 0, "p", false}), TransportError);
}

TEST(Mock, ParsesLogprobsInBothShapes) {
  MockBackend mock = MockBackend::from_jsonl(
      R"({"id":"*","template":"aspect","text":"w\nConfidence: 0.7","token_logprobs":[["w",-0.5],{"token":"x","logprob":-0.25}]})");
  const auto r = mock.complete({"a", PromptKind::aspect, 0, "p", true});
  ASSERT_TRUE(r.token_logprobs);
  EXPECT_EQ(r.token_logprobs->size(), 2u);
  EXPECT_EQ((*r.token_logprobs)[1].logprob, -0.25);
  EXPECT_EQ(r.reported_confidence, 0.7);
}

TEST(Retry, BacksOffExponentiallyThenGivesUp) {
  std::vector<std::chrono::milliseconds> sleeps;
  int calls = 0;
  EXPECT_THROW(with_retries(fast_retries(&sleeps),
                            [&]() -> BackendResponse {
                              ++calls;
                              throw TransportError("down");
                            }),
               TransportError);
  EXPECT_EQ(calls, 4);
  EXPECT_EQ(sleeps, (std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(500), std::chrono::milliseconds(1000),
                                                            std::chrono::milliseconds(2000)}));
}

TEST(Retry, StopsOnSuccessAndDoesNotRetryDataErrors) {
  std::vector<std::chrono::milliseconds> sleeps;
  int calls = 0;
  const auto r = with_retries(fast_retries(&sleeps), [&] {
    if (++calls < 3) throw TransportError("flaky");
    return BackendResponse{"ok", std::nullopt, std::nullopt};
  });
  EXPECT_EQ(r.text, "ok");
  EXPECT_EQ(calls, 3);
  calls = 0;
  EXPECT_THROW(with_retries(fast_retries(&sleeps),
                            [&]() -> BackendResponse {
                              ++calls;
                              throw DataError("bad");
                            }),
               DataError);
  EXPECT_EQ(calls, 1);
}

TEST(Http, RequestBodyShape) {
  HttpBackend backend({"http://localhost:1/v1/chat/completions", "test-model", "", std::chrono::seconds(1), RetryPolicy::none()});
  const json body = json::parse(backend.request_body({"a", PromptKind::aspect, 0, "hello", true}));
  EXPECT_EQ(body["model"], "test-model");
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], "hello");
  EXPECT_EQ(body["logprobs"], true);
  EXPECT_EQ(body["temperature"], 0);
}

TEST(Http, ParseResponse) {
  const auto r = HttpBackend::parse_response(
      completion("the waiter\nConfidence: 0.82", json::array({{{"token", "the"}, {"logprob", -0.1}}})));
  EXPECT_EQ(r.text, "the waiter\nConfidence: 0.82");
  EXPECT_EQ(r.reported_confidence, 0.82);
  ASSERT_TRUE(r.token_logprobs);
  EXPECT_EQ((*r.token_logprobs)[0].token, "the");
  EXPECT_THROW(HttpBackend::parse_response("{}"), DataError);
  EXPECT_THROW(HttpBackend::parse_response("nope"), DataError);
}

TEST(Http, RoundTripAgainstLocalServer) {
  std::string seen_auth;
  json seen_body;
  LocalServer server([&](const httplib::Request& req, httplib::Response& res) {
    seen_auth = req.get_header_value("Authorization");
    seen_body = json::parse(req.body);
    res.set_content(completion("negative", json::array({{{"token", "negative"}, {"logprob", -0.05}}})),
                    "application/json");
  });
  HttpBackend backend({server.url(), "m", "secret", std::chrono::seconds(5), RetryPolicy::none()});
  const auto r = backend.complete({"a", PromptKind::polarity, 0, "What is the polarity?", true});
  EXPECT_EQ(r.text, "negative");
  EXPECT_EQ(seen_auth, "Bearer secret");
  EXPECT_EQ(seen_body["messages"][0]["content"], "What is the polarity?");
  ASSERT_TRUE(r.token_logprobs);
  EXPECT_DOUBLE_EQ((*r.token_logprobs)[0].logprob, -0.05);
}

TEST(Http, RetriesServerErrorsThenSucceeds) {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    if (++hits < 3) {
      res.status = 503;
      return;
    }
    res.set_content(completion("positive"), "application/json");
  });
  std::vector<std::chrono::milliseconds> sleeps;
  HttpBackend backend({server.url(), "m", "", std::chrono::seconds(5), fast_retries(&sleeps)});
  EXPECT_EQ(backend.complete({"a", PromptKind::polarity, 0, "p", false}).text, "positive");
  EXPECT_EQ(hits.load(), 3);
  EXPECT_EQ(sleeps.size(), 2u);
}

TEST(Http, ClientErrorIsNotRetried) {
  std::atomic<int> hits{0};
  LocalServer server([&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 400;
    res.set_content("bad request", "text/plain");
  });
  std::vector<std::chrono::milliseconds> sleeps;
  HttpBackend backend({server.url(), "m", "", std::chrono::seconds(5), fast_retries(&sleeps)});
  EXPECT_THROW(backend.complete({"a", PromptKind::polarity, 0, "p", false}), DataError);
  EXPECT_EQ(hits.load(), 1);
}

TEST(Http, UnreachableIsTransportError) {
  std::vector<std::chrono::milliseconds> sleeps;
  HttpBackend backend({"http://127.0.0.1:1/v1/chat/completions", "m", "", std::chrono::seconds(1), fast_retries(&sleeps)});
  EXPECT_THROW(backend.complete({"a", PromptKind::polarity, 0, "p", false}), TransportError);
  EXPECT_EQ(sleeps.size(), 3u);
}

TEST(Http, ApiKeyFromEnvironment) {
  setenv("LLM_API_KEY", "k-123", 1);
  EXPECT_EQ(HttpBackendConfig::api_key_from_env(), "k-123");
  unsetenv("LLM_API_KEY");
  EXPECT_EQ(HttpBackendConfig::api_key_from_env(), "");
}
