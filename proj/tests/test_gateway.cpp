#include <gtest/gtest.h>

#include <atomic>
#include <chrono>
#include <thread>

#include "clot/gateway.hpp"
#include "clot/parse.hpp"
#include "support.hpp"

using namespace clot;

namespace {

ChatRequest req(std::string prompt, std::optional<std::string> image = std::nullopt) {
  ChatRequest r;
  r.prompt = std::move(prompt);
  r.image_ref = std::move(image);
  return r;
}

}  // namespace

TEST(Mock, PureFunctionOfInputsAndSeed) {
  MockBackend::Options o;
  o.seed = 1;
  MockBackend a(o), b(o);
  EXPECT_EQ(a.complete(req("tell me a joke")), b.complete(req("tell me a joke")));
  EXPECT_EQ(a.complete(req("tell me a joke", "img")), a.complete(req("tell me a joke", "img")));
  o.seed = 2;
  MockBackend c(o);
  int differ = 0;
  for (int i = 0; i < 20; ++i) {
    auto p = "prompt " + std::to_string(i);
    differ += a.complete(req(p)) != c.complete(req(p));
  }
  EXPECT_GT(differ, 10);
}

TEST(Mock, TextOnlyRejectsImages) {
  MockBackend::Options o;
  o.supports_images = false;
  MockBackend m(o);
  EXPECT_THROW(m.complete(req("x", "img.jpg")), CapabilityError);
  Gateway gw(std::make_shared<MockBackend>(o), fixture::fast_gateway());
  EXPECT_THROW(gw.complete(req("x", "img.jpg")), CapabilityError);
  EXPECT_EQ(gw.attempts(), 0u);
}

TEST(Mock, TranscriptTakesPrecedence) {
  MockBackend m;
  m.script("hello", std::nullopt, "scripted");
  m.script("hello", std::string("img"), "scripted with image");
  EXPECT_EQ(m.complete(req("hello")), "scripted");
  EXPECT_EQ(m.complete(req("hello", "img")), "scripted with image");
  EXPECT_EQ(m.transcript_size(), 2u);
}

TEST(Mock, TranscriptFile) {
  fixture::TempDir dir;
  Json a{{"prompt_hash", prompt_hash("p1", std::nullopt)}, {"reply", "r1"}};
  Json b{{"prompt", "p2"}, {"image_ref", "i"}, {"reply", "r2"}};
  io::write_jsonl(dir / "t.jsonl", "clot.transcript", "run", {a, b});
  MockBackend::Options o;
  o.procedural = false;
  MockBackend m(o);
  m.load_transcript(dir / "t.jsonl");
  EXPECT_EQ(m.complete(req("p1")), "r1");
  EXPECT_EQ(m.complete(req("p2", "i")), "r2");
  EXPECT_THROW(m.complete(req("p3")), TransportError);
}

TEST(Mock, ProceduralRepliesParse) {
  MockBackend m;
  std::string select = "Pick one.\nOptions:\nA. x\nB. y\nC. z\nResponse Format: Please respond in the format of \"Option id. Option content\", for example, \"A. xxx\".";
  auto c = parse_choice(m.complete(req(select)), {'A', 'B', 'C'}, 1);
  EXPECT_EQ(c.confidence, ParseConfidence::exact);
  std::string rank = "Options:\nA. a\nB. b\nC. c\nD. d\nE. e\nranking the humorousness of the options";
  auto r = parse_ranking(m.complete(req(rank)), {'A', 'B', 'C', 'D', 'E'});
  EXPECT_EQ(r.confidence, ParseConfidence::exact);
  EXPECT_EQ(m.complete(req("Does it? If so, kindly respond with \"Yes\"")), "No.");
}

TEST(Gateway, RetriesTransportErrors) {
  auto be = std::make_shared<fixture::ScriptedBackend>([](const ChatRequest&, std::size_t call) -> std::string {
    if (call < 2) throw TransportError("flaky");
    return "ok";
  });
  Gateway gw(be, fixture::fast_gateway(3));
  EXPECT_EQ(gw.complete(req("x")), "ok");
  EXPECT_EQ(gw.attempts(), 3u);
  EXPECT_EQ(gw.failures(), 0u);
}

TEST(Gateway, ExhaustedBudget) {
  auto be = std::make_shared<fixture::ScriptedBackend>([](const ChatRequest&, std::size_t) -> std::string {
    throw TransportError("down");
  });
  Gateway gw(be, fixture::fast_gateway(2));
  EXPECT_THROW(gw.complete(req("x")), TransportError);
  EXPECT_EQ(be->calls(), 3u);
  EXPECT_EQ(gw.failures(), 1u);
}

TEST(Gateway, RejectionsAreNotRetried) {
  auto be = std::make_shared<fixture::ScriptedBackend>([](const ChatRequest&, std::size_t) -> std::string {
    throw RejectedError("400");
  });
  Gateway gw(be, fixture::fast_gateway(5));
  EXPECT_THROW(gw.complete(req("x")), RejectedError);
  EXPECT_EQ(be->calls(), 1u);
}

TEST(Gateway, InflightCapAndOrder) {
  std::atomic<int> now{0}, peak{0};
  auto be = std::make_shared<fixture::ScriptedBackend>([&](const ChatRequest& r, std::size_t) {
    int v = ++now;
    int p = peak.load();
    while (v > p && !peak.compare_exchange_weak(p, v)) {
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(2));
    --now;
    return "re:" + r.prompt;
  });
  Gateway gw(be, fixture::fast_gateway(0, 3));
  std::vector<ChatRequest> batch;
  for (int i = 0; i < 40; ++i) batch.push_back(req(std::to_string(i)));
  auto out = gw.complete_batch(batch);
  for (int i = 0; i < 40; ++i) EXPECT_EQ(out[i].reply, "re:" + std::to_string(i));
  EXPECT_LE(peak.load(), 3);
  EXPECT_LE(gw.peak_inflight(), 3u);
}

TEST(Gateway, BatchReportsErrorsInPlace) {
  auto be = std::make_shared<fixture::ScriptedBackend>([](const ChatRequest& r, std::size_t) -> std::string {
    if (r.prompt == "bad") throw RejectedError("nope");
    return "fine";
  });
  Gateway gw(be, fixture::fast_gateway());
  auto out = gw.complete_batch({req("good"), req("bad"), req("good")});
  EXPECT_EQ(out[0].reply, "fine");
  EXPECT_FALSE(out[1].reply);
  EXPECT_EQ(out[1].error, "nope");
  EXPECT_EQ(out[2].reply, "fine");
}

TEST(Gateway, RateLimit) {
  auto be = std::make_shared<fixture::ScriptedBackend>([](const ChatRequest&, std::size_t) { return std::string("x"); });
  auto opt = fixture::fast_gateway();
  opt.min_interval = std::chrono::milliseconds(20);
  Gateway gw(be, opt);
  auto start = std::chrono::steady_clock::now();
  for (int i = 0; i < 4; ++i) gw.complete(req("x"));
  EXPECT_GE(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(60));
}

TEST(Gateway, RequestLog) {
  fixture::TempDir dir;
  auto log = std::make_shared<RequestLog>(dir / "requests.jsonl");
  auto be = std::make_shared<fixture::ScriptedBackend>([](const ChatRequest&, std::size_t call) -> std::string {
    if (call == 0) throw TransportError("blip");
    return "ok";
  });
  Gateway gw(be, fixture::fast_gateway(1), log);
  gw.complete(req("p"));
  auto rows = io::read_jsonl(dir / "requests.jsonl").rows;
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0]["status"], "transport_error: blip");
  EXPECT_EQ(rows[1]["status"], "ok");
  EXPECT_EQ(rows[1]["prompt_hash"], prompt_hash("p", std::nullopt));
  EXPECT_EQ(rows[1]["backend"], "scripted:test");
  EXPECT_TRUE(rows[1].contains("latency_ms"));
  EXPECT_TRUE(rows[1].contains("timestamp"));
}

TEST(Gateway, PromptHashSeparatesImage) {
  EXPECT_NE(prompt_hash("p", std::nullopt), prompt_hash("p", std::string("")));
  EXPECT_NE(prompt_hash("p", std::string("a")), prompt_hash("p", std::string("b")));
  EXPECT_EQ(prompt_hash("p", std::nullopt).size(), 16u);
}
