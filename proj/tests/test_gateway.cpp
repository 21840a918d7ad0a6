#include <gtest/gtest.h>

#include <httplib.h>

#include <atomic>
#include <thread>

#include "evoqa/gateway.hpp"
#include "evoqa/live_backend.hpp"
#include "support/sim.hpp"

using namespace evoqa;
using namespace std::chrono_literals;
using evoqa::testing::TempDir;
using evoqa::testing::write_text;

namespace {

CompletionRequest request_for(PromptRole role, const std::string& text, double temperature = 0.0) {
  return make_completion_request(PromptText{role, text, ""}, "test-model", temperature);
}

GatewayErrc code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const GatewayError& e) {
    return e.code();
  }
  ADD_FAILURE() << "no GatewayError";
  return GatewayErrc::StoreNotWritable;
}

}  // namespace

TEST(Fingerprint, CoversPromptModelAndTemperature) {
  const auto base = compute_request_fingerprint("prompt", "m", 0.7);
  EXPECT_EQ(base, compute_request_fingerprint("prompt", "m", 0.7));
  EXPECT_NE(base, compute_request_fingerprint("prompt", "m", 0.0));
  EXPECT_NE(base, compute_request_fingerprint("prompt", "n", 0.7));
  EXPECT_NE(base, compute_request_fingerprint("prompt2", "m", 0.7));
  EXPECT_NE(compute_request_fingerprint("ab", "c", 0), compute_request_fingerprint("a", "bc", 0));
  EXPECT_EQ(request_for(PromptRole::Seed, "x", 0.5).request_fingerprint,
            compute_request_fingerprint("x", "test-model", 0.5));
}

TEST(Scripted, ResolutionOrder) {
  ScriptedBackend b;
  const auto req = request_for(PromptRole::Judge, "judge me");
  EXPECT_EQ(code_of([&] { b.complete(req); }), GatewayErrc::NoScriptedResponse);
  b.set_role_responses(PromptRole::Judge, {"first", "second"});
  EXPECT_EQ(b.complete(req).text, "first");
  EXPECT_EQ(b.complete(req).text, "second");
  EXPECT_EQ(b.complete(req).text, "second");
  b.set_response(req.request_fingerprint, "exact");
  EXPECT_EQ(b.complete(req).text, "exact");
  b.inject_failure(GatewayError(GatewayErrc::TransportError, "boom"), PromptRole::Seed);
  EXPECT_EQ(b.complete(req).text, "exact");
  EXPECT_EQ(code_of([&] { b.complete(request_for(PromptRole::Seed, "s")); }), GatewayErrc::TransportError);
}

TEST(Scripted, FromJson) {
  auto b = ScriptedBackend::from_json(nlohmann::json::parse(R"({"by_role": {"judge": "J", "seed": ["a", "b"]}})"));
  EXPECT_EQ(b->complete(request_for(PromptRole::Judge, "x")).text, "J");
  EXPECT_EQ(b->complete(request_for(PromptRole::Seed, "x")).text, "a");
  EXPECT_EQ(b->kind(), BackendKind::Scripted);
}

TEST(Cassette, RecordThenReplay) {
  TempDir dir;
  const auto path = dir / "c.ndjson";
  auto inner = std::make_shared<ScriptedBackend>();
  inner->set_role_responder(PromptRole::Seed, [](const CompletionRequest& r) { return "reply to " + r.prompt.text; });
  {
    RecordingBackend rec(inner, Cassette::open(path));
    rec.complete(request_for(PromptRole::Seed, "one"));
    rec.complete(request_for(PromptRole::Seed, "two"));
  }
  auto cassette = Cassette::open(path);
  EXPECT_EQ(cassette->size(), 2u);
  ReplayBackend replay(cassette);
  EXPECT_EQ(replay.complete(request_for(PromptRole::Seed, "two")).text, "reply to two");
  EXPECT_EQ(code_of([&] { replay.complete(request_for(PromptRole::Seed, "three")); }),
            GatewayErrc::NoRecordedResponse);
}

TEST(Cassette, LastLineWinsAndCorruptionDetected) {
  TempDir dir;
  const auto path = dir / "c.ndjson";
  auto cassette = Cassette::open(path);
  const auto req = request_for(PromptRole::Judge, "p");
  cassette->record(req, CompletionResult{"old", 1, 1, 0, BackendKind::Scripted});
  cassette->record(req, CompletionResult{"new", 1, 1, 0, BackendKind::Scripted});
  EXPECT_EQ(Cassette::open(path)->find(req.request_fingerprint)->text, "new");

  write_text(dir / "bad.ndjson", "{\"request_fingerprint\": \n");
  EXPECT_EQ(code_of([&] { Cassette::open(dir / "bad.ndjson"); }), GatewayErrc::CassetteCorrupt);
}

TEST(Retry, BackoffSequenceFromPolicy) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->set_role_responses(PromptRole::Judge, {"ok"});
  backend->inject_failure(GatewayError(GatewayErrc::TransportError, "t1"));
  backend->inject_failure(GatewayError(GatewayErrc::TransportError, "t2"));
  auto clock = std::make_shared<VirtualClock>();
  Gateway gw(backend, {}, clock);
  EXPECT_EQ(gw.complete_with_retry(request_for(PromptRole::Judge, "x")).text, "ok");
  EXPECT_EQ(clock->sleeps(), (std::vector<std::chrono::milliseconds>{500ms, 1000ms}));
  EXPECT_EQ(gw.call_log().size(), 3u);
  EXPECT_EQ(gw.completed_calls(), 1u);
  EXPECT_EQ(gw.call_log().back().attempt, 3);
}

TEST(Retry, ExhaustionAndNonRetryable) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->set_role_responses(PromptRole::Judge, {"ok"});
  for (int i = 0; i < 3; ++i) {
    backend->inject_failure(GatewayError(GatewayErrc::TransportError, "down"));
  }
  auto clock = std::make_shared<VirtualClock>();
  Gateway gw(backend, {}, clock);
  try {
    gw.complete_with_retry(request_for(PromptRole::Judge, "x"));
    FAIL();
  } catch (const GatewayError& e) {
    EXPECT_EQ(e.code(), GatewayErrc::RetriesExhausted);
    EXPECT_EQ(e.last_code, GatewayErrc::TransportError);
    EXPECT_EQ(e.attempts, 3);
  }
  EXPECT_EQ(clock->sleeps().size(), 2u);

  backend->inject_failure(GatewayError(GatewayErrc::AuthError, "denied"));
  EXPECT_EQ(code_of([&] { gw.complete_with_retry(request_for(PromptRole::Judge, "x")); }), GatewayErrc::AuthError);
  EXPECT_EQ(clock->sleeps().size(), 2u);
}

TEST(Retry, HonoursRetryAfter) {
  auto backend = std::make_shared<ScriptedBackend>();
  backend->set_role_responses(PromptRole::Judge, {"ok"});
  GatewayError limited(GatewayErrc::RateLimited, "slow down");
  limited.retry_after = 2000ms;
  backend->inject_failure(limited);
  auto clock = std::make_shared<VirtualClock>();
  Gateway gw(backend, {}, clock);
  gw.complete_with_retry(request_for(PromptRole::Judge, "x"));
  EXPECT_EQ(clock->sleeps(), (std::vector<std::chrono::milliseconds>{2000ms}));
}

TEST(RateLimit, NoWindowExceedsLimit) {
  auto clock = std::make_shared<VirtualClock>();
  RateLimiter limiter(3, clock);
  std::vector<Clock::time_point> stamps;
  for (int i = 0; i < 20; ++i) {
    if (i % 4 == 0) {
      clock->advance(130ms);
    }
    limiter.acquire();
    stamps.push_back(clock->now());
  }
  for (std::size_t i = 0; i < stamps.size(); ++i) {
    std::size_t in_window = 0;
    for (std::size_t j = i; j < stamps.size() && stamps[j] - stamps[i] < 1s; ++j) {
      ++in_window;
    }
    EXPECT_LE(in_window, 3u) << "window starting at dispatch " << i;
  }
  EXPECT_GE(stamps.back() - stamps.front(), 6s);
}

TEST(RateLimit, ZeroDisables) {
  auto clock = std::make_shared<VirtualClock>();
  RateLimiter limiter(0, clock);
  for (int i = 0; i < 100; ++i) {
    limiter.acquire();
  }
  EXPECT_TRUE(clock->sleeps().empty());
}

TEST(Budget, RefusesBeforeDispatch) {
  auto backend = std::make_shared<ScriptedBackend>();
  std::atomic<int> dispatched{0};
  backend->set_role_responder(PromptRole::Seed, [&](const CompletionRequest&) {
    ++dispatched;
    return std::string(40, 'x');
  });
  GatewayOptions opts;
  opts.max_total_tokens = 20;
  Gateway gw(backend, opts, std::make_shared<VirtualClock>());
  gw.complete(request_for(PromptRole::Seed, std::string(16, 'p')));  // 4 + 10 tokens
  EXPECT_EQ(gw.tokens_used(), 14u);
  EXPECT_EQ(code_of([&] { gw.complete_with_retry(request_for(PromptRole::Seed, std::string(40, 'p'))); }),
            GatewayErrc::BudgetExhausted);
  EXPECT_EQ(dispatched.load(), 1);
}

// --- live wire format against a local HTTP server ---------------------------

class LiveServer : public ::testing::Test {
 protected:
  void SetUp() override {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++hits_;
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      if (status_ != 200) {
        res.status = status_;
        if (status_ == 429) {
          res.set_header("Retry-After", "2");
        }
        res.set_content("{}", "application/json");
        return;
      }
      res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"generated text"}}]})",
                      "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }

  LiveBackend backend(const std::string& key = "secret") {
    return LiveBackend({"http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions", key, 5s});
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::atomic<int> hits_{0};
  int status_ = 200;
  std::string last_body_;
  std::string last_auth_;
};

TEST_F(LiveServer, SendsChatCompletionShape) {
  auto b = backend();
  const auto req = make_completion_request(PromptText{PromptRole::Judge, "score this", ""}, "m-1", 0.25, 512);
  const auto result = b.complete(req);
  EXPECT_EQ(result.text, "generated text");
  EXPECT_EQ(result.backend_kind, BackendKind::Live);
  const auto body = nlohmann::json::parse(last_body_);
  EXPECT_EQ(body["model"], "m-1");
  EXPECT_EQ(body["messages"][0]["role"], "user");
  EXPECT_EQ(body["messages"][0]["content"], "score this");
  EXPECT_DOUBLE_EQ(body["temperature"].get<double>(), 0.25);
  EXPECT_EQ(body["max_tokens"], 512);
  EXPECT_EQ(last_auth_, "Bearer secret");
}

TEST_F(LiveServer, MapsStatusCodes) {
  auto b = backend();
  const auto req = request_for(PromptRole::Seed, "x");
  status_ = 401;
  EXPECT_EQ(code_of([&] { b.complete(req); }), GatewayErrc::AuthError);
  status_ = 500;
  EXPECT_EQ(code_of([&] { b.complete(req); }), GatewayErrc::TransportError);
  status_ = 400;
  EXPECT_EQ(code_of([&] { b.complete(req); }), GatewayErrc::RequestRejected);
  status_ = 429;
  try {
    b.complete(req);
    FAIL();
  } catch (const GatewayError& e) {
    EXPECT_EQ(e.code(), GatewayErrc::RateLimited);
    EXPECT_EQ(e.retry_after, 2000ms);
  }
}

TEST_F(LiveServer, MissingKeyFailsWithoutTraffic) {
  auto b = backend("");
  EXPECT_EQ(code_of([&] { b.complete(request_for(PromptRole::Seed, "x")); }), GatewayErrc::AuthError);
  EXPECT_EQ(hits_.load(), 0);
}

TEST(LiveBackendUnit, UnreachableHostIsTransportError) {
  LiveBackend b({"http://127.0.0.1:9/v1/chat/completions", "k", 1s});
  EXPECT_EQ(code_of([&] { b.complete(request_for(PromptRole::Seed, "x")); }), GatewayErrc::TransportError);
  EXPECT_EQ(code_of([] { LiveBackend::response_text(R"({"choices":[]})"); }), GatewayErrc::RequestRejected);
}
