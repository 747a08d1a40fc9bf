#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include "decc/backends.hpp"
#include "decc/error.hpp"
#include "decc/gateway.hpp"
#include "httplib.h"
#include "support.hpp"

using namespace decc;
using namespace std::chrono_literals;
using testing_support::TempDir;

namespace {

ModelRole role(RoleKind kind, bool logprobs = false) {
  ModelRole r;
  r.role = kind;
  r.endpoint = "unused";
  r.model_name = "m";
  r.supports_images = kind != RoleKind::llm_reasoner;
  r.supports_logprobs = logprobs;
  return r;
}

// Fails with the given code a fixed number of times, then answers.
class FlakyBackend : public ChatBackend {
 public:
  FlakyBackend(int failures, ErrorCode code) : failures_(failures), code_(code) {}
  ChatResponse complete(const ChatRequest& r) override {
    ++calls;
    last = r;
    if (calls <= failures_) throw Error(code_, "simulated");
    return ChatResponse{"ok", std::nullopt, 0.5};
  }
  int calls = 0;
  ChatRequest last;

 private:
  int failures_;
  ErrorCode code_;
};

class SlowBackend : public ChatBackend {
 public:
  ChatResponse complete(const ChatRequest&) override {
    const int now = ++active;
    int prev = peak.load();
    while (now > prev && !peak.compare_exchange_weak(prev, now)) {
    }
    std::this_thread::sleep_for(5ms);
    --active;
    return {"ok", std::nullopt, 0.0};
  }
  std::atomic<int> active{0};
  std::atomic<int> peak{0};
};

std::vector<ChatMessage> text_msg(std::string t) { return {ChatMessage{"user", std::move(t), std::nullopt}}; }
std::vector<ChatMessage> image_msg(std::string t) { return {ChatMessage{"user", std::move(t), "img.png"}}; }

struct Sleeps {
  std::vector<double> seconds;
  ModelGateway::Sleeper fn() {
    return [this](std::chrono::duration<double> d) { seconds.push_back(d.count()); };
  }
};

}  // namespace

TEST(Canonical, GreedyTemperatureAndPurposeDoNotAffectHash) {
  ChatRequest a{"m", text_msg("hi"), {}, false, "direct_answer"};
  ChatRequest b = a;
  b.params.temperature = 0.3;
  b.purpose = "something else";
  EXPECT_EQ(request_hash(a), request_hash(b));
  b.want_logprobs = true;
  EXPECT_NE(request_hash(a), request_hash(b));
  ChatRequest c = a;
  c.messages[0].image_ref = "x.png";
  EXPECT_NE(request_hash(a), request_hash(c));
  // Keys come out sorted, so the dump is stable.
  EXPECT_EQ(canonical_request(a).dump(),
            R"({"logprobs":false,"messages":[{"content":"hi","role":"user"}],"model":"m","params":{"max_tokens":256,"mode":"greedy"}})");
}

TEST(Gateway, TextOnlyRoleNeverSeesImages) {
  auto backend = std::make_shared<FlakyBackend>(0, ErrorCode::transport);
  ModelGateway gw(role(RoleKind::llm_reasoner), backend);
  try {
    gw.chat(image_msg("look"), false, "reason_over_subqa");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::capability);
  }
  EXPECT_EQ(backend->calls, 0);
  EXPECT_EQ(gw.requests_sent(), 0u);
  EXPECT_EQ(gw.chat(text_msg("think"), false).text, "ok");
}

TEST(Gateway, LogprobsRequireSupport) {
  auto backend = std::make_shared<FlakyBackend>(0, ErrorCode::transport);
  ModelGateway plain(role(RoleKind::candidate_vlm), backend);
  EXPECT_THROW(plain.chat(text_msg("q"), true), Error);
  EXPECT_EQ(backend->calls, 0);
  ModelGateway capable(role(RoleKind::candidate_vlm, true), backend);
  capable.chat(image_msg("q"), true);
  EXPECT_TRUE(backend->last.want_logprobs);
  EXPECT_EQ(backend->last.model, "m");
}

TEST(Gateway, RetriesTransientFailuresWithBackoff) {
  auto backend = std::make_shared<FlakyBackend>(2, ErrorCode::transport_transient);
  Sleeps sleeps;
  ModelGateway gw(role(RoleKind::decomposer), backend, RetryPolicy{3, 1.0s, 2.0}, nullptr, sleeps.fn());
  EXPECT_EQ(gw.chat(text_msg("q"), false).text, "ok");
  EXPECT_EQ(backend->calls, 3);
  EXPECT_EQ(sleeps.seconds, (std::vector<double>{1.0, 2.0}));
}

TEST(Gateway, GivesUpAfterAttempts) {
  auto backend = std::make_shared<FlakyBackend>(100, ErrorCode::transport_transient);
  Sleeps sleeps;
  ModelGateway gw(role(RoleKind::decomposer), backend, RetryPolicy{3, 1.0s, 2.0}, nullptr, sleeps.fn());
  try {
    gw.chat(text_msg("q"), false);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::transport);
  }
  EXPECT_EQ(backend->calls, 3);
  EXPECT_EQ(sleeps.seconds.size(), 2u);
}

TEST(Gateway, PermanentFailuresAreNotRetried) {
  for (auto code : {ErrorCode::transport, ErrorCode::protocol}) {
    auto backend = std::make_shared<FlakyBackend>(1, code);
    Sleeps sleeps;
    ModelGateway gw(role(RoleKind::decomposer), backend, RetryPolicy{3, 1.0s, 2.0}, nullptr, sleeps.fn());
    try {
      gw.chat(text_msg("q"), false);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), code);
    }
    EXPECT_EQ(backend->calls, 1);
    EXPECT_TRUE(sleeps.seconds.empty());
  }
}

TEST(Gateway, InFlightBound) {
  auto backend = std::make_shared<SlowBackend>();
  auto limiter = std::make_shared<InFlightLimiter>(2);
  ModelGateway a(role(RoleKind::candidate_vlm), backend, {}, limiter);
  ModelGateway b(role(RoleKind::decomposer), backend, {}, limiter);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&, i] {
      for (int k = 0; k < 5; ++k) (i % 2 ? a : b).chat(text_msg("q"), false);
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(backend->peak.load(), 2);
  EXPECT_EQ(a.requests_sent() + b.requests_sent(), 40u);
}

TEST(Roles, Validation) {
  EXPECT_TRUE(validate_role(role(RoleKind::llm_reasoner)).empty());
  auto bad = role(RoleKind::llm_reasoner);
  bad.supports_images = true;
  EXPECT_EQ(validate_role(bad).size(), 1u);
  auto vlm = role(RoleKind::candidate_vlm);
  vlm.supports_images = false;
  vlm.endpoint.clear();
  vlm.max_in_flight = 0;
  EXPECT_EQ(validate_role(vlm).size(), 3u);
}

TEST(Roles, JsonDefaultsImagesByRole) {
  const auto j = json::parse(R"({"role":"llm_reasoner","endpoint":"http://x/v1","model":"llm"})");
  const auto r = j.get<ModelRole>();
  EXPECT_FALSE(r.supports_images);
  EXPECT_EQ(json(r).get<ModelRole>().model_name, "llm");
  EXPECT_EQ(parse_role_kind("candidate_vlm"), RoleKind::candidate_vlm);
  EXPECT_THROW(parse_role_kind("vlm"), Error);
}

TEST(Replay, RecordThenReplay) {
  TempDir dir;
  auto inner = std::make_shared<FlakyBackend>(0, ErrorCode::transport);
  RecordingChatBackend rec(inner, dir.path());
  ChatRequest req{"m", image_msg("what?"), {}, false, "direct_answer"};
  const auto live = rec.complete(req);
  ASSERT_TRUE(std::filesystem::exists(dir.path() / (request_hash(req) + ".json")));

  ReplayChatBackend replay(dir.path());
  EXPECT_EQ(replay.size(), 1u);
  const auto again = replay.complete(req);
  EXPECT_EQ(again.text, live.text);
  EXPECT_EQ(again.elapsed_seconds, live.elapsed_seconds);

  // Purpose is not part of the key.
  req.purpose = "other";
  EXPECT_EQ(replay.complete(req).text, "ok");
}

TEST(Replay, MissIsPermanent) {
  TempDir dir;
  ReplayChatBackend replay(dir.path());
  try {
    replay.complete(ChatRequest{"m", text_msg("nothing recorded"), {}, false, "x"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::transport);
  }
  EXPECT_THROW(ReplayChatBackend(dir.path() / "missing"), Error);
}

TEST(Replay, JsonlAndHashChecks) {
  TempDir dir;
  ChatRequest req{"m", text_msg("q"), {}, true, ""};
  ReplayRecord r;
  r.request = canonical_request(req);
  r.response_text = "B";
  r.logprobs = std::vector<double>{-0.1, -0.2};
  testing_support::spit(dir.path() / "bundle.jsonl", json(r).dump() + "\n\n");
  ReplayChatBackend replay(dir.path());
  const auto resp = replay.complete(req);
  EXPECT_EQ(resp.text, "B");
  EXPECT_EQ(resp.token_logprobs, r.logprobs);

  r.request_hash = std::string(64, '0');
  testing_support::spit(dir.path() / "bad.json", json(r).dump());
  EXPECT_THROW(ReplayChatBackend{dir.path()}, Error);
  testing_support::spit(dir.path() / "bad.json", "{not json");
  EXPECT_THROW(ReplayChatBackend{dir.path()}, Error);
}

TEST(Http, WireBody) {
  ChatRequest req{"vlm", image_msg("what?"), {}, true, "direct_answer"};
  req.params.temperature = 0.7;  // ignored under greedy decoding
  const auto body = HttpChatBackend::wire_body(req);
  EXPECT_EQ(body.at("temperature"), 0.0);
  EXPECT_EQ(body.at("logprobs"), true);
  EXPECT_FALSE(body.contains("purpose"));
  const auto& content = body.at("messages")[0].at("content");
  ASSERT_TRUE(content.is_array());
  EXPECT_EQ(content[0].at("image_url").at("url"), "img.png");
  EXPECT_EQ(content[1].at("text"), "what?");

  ChatRequest text{"llm", text_msg("hi"), {}, false, ""};
  text.params.mode = DecodingMode::sampling;
  text.params.temperature = 0.4;
  const auto tb = HttpChatBackend::wire_body(text);
  EXPECT_EQ(tb.at("messages")[0].at("content"), "hi");
  EXPECT_EQ(tb.at("temperature"), 0.4);
  EXPECT_FALSE(tb.contains("logprobs"));
}

TEST(Http, ParseResponse) {
  const auto r = HttpChatBackend::parse_wire_response(
      R"({"choices":[{"message":{"content":"B"},"logprobs":{"content":[{"token":"B","logprob":-0.25}]}}]})");
  EXPECT_EQ(r.text, "B");
  EXPECT_EQ(r.token_logprobs, std::vector<double>{-0.25});
  EXPECT_FALSE(HttpChatBackend::parse_wire_response(R"({"choices":[{"message":{"content":"x"}}]})")
                   .token_logprobs.has_value());
  for (const char* bad : {"nope", "{}", R"({"choices":[]})", R"({"choices":[{"message":{}}]})"}) {
    try {
      HttpChatBackend::parse_wire_response(bad);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::protocol) << bad;
    }
  }
}

namespace {

// Local chat-completions server. The first `fail_first` requests get 503.
struct FakeServer {
  httplib::Server server;
  std::thread thread;
  int port = 0;
  std::atomic<int> hits{0};
  int fail_first = 0;
  std::string last_auth;
  json last_body;
  std::mutex mu;

  FakeServer() {
    server.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const int n = ++hits;
      {
        std::lock_guard lock(mu);
        last_auth = req.get_header_value("Authorization");
        last_body = json::parse(req.body, nullptr, false);
      }
      if (n <= fail_first) {
        res.status = 503;
        return;
      }
      if (last_body.value("model", "") == "reject") {
        res.status = 400;
        res.set_content("bad model", "text/plain");
        return;
      }
      if (last_body.value("model", "") == "garbage") {
        res.set_content("<html>", "text/html");
        return;
      }
      json out = {{"choices", {{{"message", {{"content", "A. ducks"}}}}}}};
      if (last_body.value("logprobs", false)) {
        out["choices"][0]["logprobs"] = {{"content", {{{"token", "A"}, {"logprob", -0.5}}, {{"token", "."}, {"logprob", 0.0}}}}};
      }
      res.set_content(out.dump(), "application/json");
    });
    port = server.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { server.listen_after_bind(); });
    server.wait_until_ready();
  }
  ~FakeServer() {
    server.stop();
    thread.join();
  }
  std::string base() const { return "http://127.0.0.1:" + std::to_string(port) + "/v1"; }
};

}  // namespace

TEST(Http, RoundTripWithAuthAndLogprobs) {
  FakeServer srv;
  ::setenv("DECC_TEST_KEY", "sekrit", 1);
  HttpChatBackend http(srv.base(), "DECC_TEST_KEY");
  const auto r = http.complete(ChatRequest{"vlm", image_msg("which bird?"), {}, true, "direct_answer"});
  EXPECT_EQ(r.text, "A. ducks");
  EXPECT_EQ(r.token_logprobs, (std::vector<double>{-0.5, 0.0}));
  EXPECT_GE(r.elapsed_seconds, 0.0);
  std::lock_guard lock(srv.mu);
  EXPECT_EQ(srv.last_auth, "Bearer sekrit");
  EXPECT_EQ(srv.last_body.at("model"), "vlm");
}

TEST(Http, NoKeyNoHeader) {
  FakeServer srv;
  ::unsetenv("DECC_TEST_UNSET_KEY");
  HttpChatBackend http(srv.base(), "DECC_TEST_UNSET_KEY");
  http.complete(ChatRequest{"vlm", text_msg("q"), {}, false, ""});
  std::lock_guard lock(srv.mu);
  EXPECT_EQ(srv.last_auth, "");
}

TEST(Http, ServiceUnavailableIsRetriedByGateway) {
  FakeServer srv;
  srv.fail_first = 2;
  auto role_ = role(RoleKind::candidate_vlm);
  role_.model_name = "vlm";
  Sleeps sleeps;
  ModelGateway gw(role_, std::make_shared<HttpChatBackend>(srv.base()), RetryPolicy{3, 0.01s, 2.0}, nullptr,
                  sleeps.fn());
  EXPECT_EQ(gw.chat(text_msg("q"), false).text, "A. ducks");
  EXPECT_EQ(srv.hits.load(), 3);
  EXPECT_EQ(gw.requests_sent(), 3u);
}

TEST(Http, ClientErrorsAndGarbage) {
  FakeServer srv;
  HttpChatBackend http(srv.base());
  try {
    http.complete(ChatRequest{"reject", text_msg("q"), {}, false, ""});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::transport);
    EXPECT_NE(std::string(e.what()).find("400"), std::string::npos);
  }
  try {
    http.complete(ChatRequest{"garbage", text_msg("q"), {}, false, ""});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::protocol);
  }
}

TEST(Http, UnreachableIsTransient) {
  FakeServer srv;
  const auto dead = "http://127.0.0.1:" + std::to_string(srv.port) + "/v1";
  srv.server.stop();
  srv.thread.join();
  srv.thread = std::thread([] {});
  HttpChatBackend http(dead, std::nullopt, std::chrono::seconds(2));
  try {
    http.complete(ChatRequest{"vlm", text_msg("q"), {}, false, ""});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::transport_transient);
  }
}

TEST(Backends, Factory) {
  TempDir dir;
  auto r = role(RoleKind::candidate_vlm);
  r.endpoint = "http://localhost:9/v1";
  EXPECT_TRUE(is_http_endpoint(r.endpoint));
  EXPECT_NE(std::dynamic_pointer_cast<HttpChatBackend>(make_backend(r, dir.path())), nullptr);
  std::filesystem::create_directories(dir.path() / "fx");
  r.endpoint = "fx";
  EXPECT_FALSE(is_http_endpoint(r.endpoint));
  EXPECT_NE(std::dynamic_pointer_cast<ReplayChatBackend>(make_backend(r, dir.path())), nullptr);
}
