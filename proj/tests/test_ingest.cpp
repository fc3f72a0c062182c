#include <gtest/gtest.h>

#include <set>

#include "clot/ingest.hpp"
#include "support.hpp"

using namespace clot;
using namespace clot::ingest;

TEST(ParseRaw, PaperQuestionId) {
  auto r = parse_raw(
      R"({"id":"1","text":"a","attitudes_count":"42","created_at":"t","pics":{"pid":"6902364","url":"u"}})");
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_TRUE(r.errors.empty());
  EXPECT_EQ(r.records[0].pid, "6902364");
  EXPECT_EQ(r.records[0].attitudes_count, "42");
}

TEST(ParseRaw, EmptyInput) {
  auto r = parse_raw("");
  EXPECT_TRUE(r.records.empty());
  EXPECT_TRUE(r.errors.empty());
}

TEST(ParseRaw, PositionedErrorsDoNotAbort) {
  std::string in =
      R"({"id":"1","text":"a","attitudes_count":"1","created_at":"t","pics":{"pid":"p","url":"u"}})"
      "\n"
      R"({"id":"2","text":"b","attitudes_count":"2","created_at":"t"})"
      "\n{not json\n"
      R"({"id":"4","text":"d","attitudes_count":"4","created_at":"t","pics":{"pid":"p","url":"u"}})";
  auto r = parse_raw(in);
  ASSERT_EQ(r.records.size(), 2u);
  EXPECT_EQ(r.records[1].id, "4");
  ASSERT_EQ(r.errors.size(), 2u);
  EXPECT_EQ(r.errors[0].line, 2u);
  EXPECT_EQ(r.errors[0].reason, "missing field pics");
  EXPECT_EQ(r.errors[1].line, 3u);
}

TEST(ParseRaw, SerializeRoundTrip) {
  auto records = fixture::synthetic_crawl(40, 3);
  auto r = parse_raw(serialize_raw(records));
  EXPECT_TRUE(r.errors.empty());
  EXPECT_EQ(r.records, records);
}

TEST(Likes, DisplayStrings) {
  EXPECT_EQ(parse_likes("42"), 42);
  EXPECT_EQ(parse_likes("1,234"), 1234);
  EXPECT_EQ(parse_likes(" 7 "), 7);
  EXPECT_FALSE(parse_likes("n/a"));
  EXPECT_FALSE(parse_likes("-3"));
  EXPECT_FALSE(parse_likes(",12"));
  EXPECT_FALSE(parse_likes(""));
}

TEST(Normalize, GroupsByPid) {
  std::vector<RawCrawlRecord> recs{{"1", "first", "3", "t", "6902364", "u"}, {"2", "second", "7", "t", "6902364", "u"}};
  auto r = normalize(recs);
  ASSERT_EQ(r.samples.size(), 1u);
  const auto& s = r.samples[0];
  EXPECT_EQ(s.id, "6902364");
  ASSERT_EQ(s.responses.size(), 2u);
  EXPECT_EQ(s.responses[0].text, "first");
  EXPECT_EQ(s.responses[0].likes, 3);
  EXPECT_EQ(s.responses[1].likes, 7);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Normalize, LanguageHeuristic) {
  EXPECT_EQ(normalize({{"1", "こんにちは", "1", "t", "p", "u"}}).samples[0].lang, Language::JP());
  EXPECT_EQ(normalize({{"1", "我们走吧", "1", "t", "p", "u"}}).samples[0].lang, Language::CN());
  EXPECT_EQ(normalize({{"1", "漢字とかな", "1", "t", "p", "u"}}).samples[0].lang, Language::JP());
  EXPECT_EQ(normalize({{"1", "hello 世界", "1", "t", "p", "u"}}).samples[0].lang, Language::EN());
  EXPECT_EQ(normalize({{"1", "こんにちは", "1", "t", "p", "u"}}, Language::EN()).samples[0].lang, Language::EN());
}

TEST(Normalize, UnparseableLikes) {
  auto r = normalize({{"9", "x", "n/a", "t", "p", "u"}});
  EXPECT_FALSE(r.samples[0].responses[0].likes);
  ASSERT_EQ(r.warnings.size(), 1u);
  EXPECT_NE(r.warnings[0].find("n/a"), std::string::npos);
}

TEST(Normalize, NeverDropsARecord) {
  auto records = fixture::synthetic_crawl(60, 9);
  auto r = normalize(records);
  std::size_t total = 0;
  for (const auto& s : r.samples) total += s.responses.size();
  EXPECT_EQ(total, records.size());
  EXPECT_EQ(r.samples.size(), 60u);
}

TEST(Dedup, MergesAndDropsRepeats) {
  OogiriSample a;
  a.id = "q";
  a.responses = {{"x", 1}, {" x ", 2}, {"y", 3}};
  auto b = a;
  b.responses = {{"y", 5}, {"z", 1}};
  DedupReport rep;
  auto out = deduplicate({a, b}, &rep);
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0].responses.size(), 3u);
  EXPECT_EQ(rep.merged_samples, 1u);
  EXPECT_EQ(rep.removed_responses, 2u);
}

TEST(SafetyPrompt, Template) {
  auto p = render_safety_prompt("violence", "a joke");
  EXPECT_NE(p.find("related to violence"), std::string::npos);
  EXPECT_NE(p.find("If so, kindly respond with"), std::string::npos);
  EXPECT_NE(p.find("Here is the text: a joke"), std::string::npos);
  EXPECT_EQ(render_safety_prompt("violence ", "a joke"), p);
  EXPECT_THROW(render_safety_prompt("", "x"), ArgumentError);
  EXPECT_THROW(render_safety_prompt("x", " "), ArgumentError);
}

TEST(SafetyPrompt, YesRule) {
  EXPECT_TRUE(is_yes("Yes"));
  EXPECT_TRUE(is_yes("YES."));
  EXPECT_TRUE(is_yes("\"yes\", because"));
  EXPECT_FALSE(is_yes("No."));
  EXPECT_FALSE(is_yes("yesterday"));
  EXPECT_FALSE(is_yes(""));
}

namespace {

std::shared_ptr<fixture::ScriptedBackend> answer_yes_for(std::set<std::string> labels) {
  return std::make_shared<fixture::ScriptedBackend>([labels](const ChatRequest& r, std::size_t) {
    for (const auto& l : labels) {
      if (r.prompt.find("related to " + l + "?") != std::string::npos) return std::string("Yes");
    }
    return std::string("No.");
  });
}

std::vector<OogiriSample> few_samples() { return fixture::synthetic_samples(6, 4); }

}  // namespace

TEST(Screen, AllNoKeepsEverything) {
  auto be = answer_yes_for({});
  Gateway gw(be, fixture::fast_gateway());
  auto samples = few_samples();
  auto r = screen(samples, {"violence", "gore"}, gw);
  EXPECT_EQ(r.kept, samples);
  EXPECT_TRUE(r.flagged.empty());
  EXPECT_TRUE(r.retry.empty());
  EXPECT_EQ(r.log.size(), samples.size() * 2);
  EXPECT_EQ(be->calls(), samples.size() * 2);
}

TEST(Screen, YesFlagsWithLabel) {
  Gateway gw(answer_yes_for({"violence"}), fixture::fast_gateway());
  auto samples = few_samples();
  auto r = screen(samples, {"violence", "gore"}, gw);
  EXPECT_TRUE(r.kept.empty());
  ASSERT_EQ(r.flagged.size(), samples.size());
  EXPECT_EQ(r.flagged[0].labels, std::vector<std::string>{"violence"});
  EXPECT_EQ(r.log[0].verdict, "yes");
  EXPECT_EQ(r.log[1].verdict, "no");
}

TEST(Screen, TimeoutsGoToRetry) {
  auto be = std::make_shared<fixture::ScriptedBackend>([](const ChatRequest&, std::size_t) -> std::string {
    throw TransportError("timeout");
  });
  Gateway gw(be, fixture::fast_gateway(2));
  auto samples = few_samples();
  samples.resize(1);
  auto r = screen(samples, {"violence"}, gw);
  EXPECT_TRUE(r.kept.empty());
  ASSERT_EQ(r.retry.size(), 1u);
  EXPECT_EQ(be->calls(), 3u);
  EXPECT_EQ(r.log[0].verdict.rfind("error: ", 0), 0u);
}

TEST(Screen, AddingALabelIsMonotone) {
  auto samples = fixture::synthetic_samples(30, 8);
  // "violence" hits texts mentioning a cat; "gore" hits any prompt with a 3.
  auto be = std::make_shared<fixture::ScriptedBackend>([](const ChatRequest& r, std::size_t) {
    bool gore = r.prompt.find("related to gore?") != std::string::npos;
    bool hit = gore ? r.prompt.find('3') != std::string::npos : r.prompt.find("cat") != std::string::npos;
    return std::string(hit ? "Yes" : "No");
  });
  Gateway gw(be, fixture::fast_gateway());
  auto small = screen(samples, {"violence"}, gw);
  auto large = screen(samples, {"violence", "gore"}, gw);
  std::set<std::string> kept_large;
  for (const auto& s : large.kept) kept_large.insert(s.id);
  for (const auto& s : large.kept) {
    EXPECT_TRUE(std::any_of(small.kept.begin(), small.kept.end(), [&](const OogiriSample& k) { return k.id == s.id; }));
  }
  EXPECT_LE(large.kept.size(), small.kept.size());
}

TEST(Screen, ManualLists) {
  Gateway gw(answer_yes_for({}), fixture::fast_gateway());
  auto samples = few_samples();
  auto r = screen(samples, {"violence"}, gw);
  apply_manual_lists(r, {samples[0].id, samples[1].id}, {samples[1].id});
  EXPECT_EQ(r.kept.size(), samples.size() - 1);
  ASSERT_EQ(r.flagged.size(), 1u);
  EXPECT_EQ(r.flagged[0].sample.id, samples[0].id);
  EXPECT_EQ(r.flagged[0].labels, std::vector<std::string>{"manual"});
}

namespace {

std::vector<OogiriSample> stratum(TaskType task, std::size_t n, const std::string& prefix) {
  std::vector<OogiriSample> out;
  for (std::size_t i = 0; i < n; ++i) {
    OogiriSample s;
    s.id = prefix + std::to_string(i);
    s.task = task;
    s.lang = Language::EN();
    out.push_back(s);
  }
  return out;
}

}  // namespace

TEST(Split, NinetyFiveFive) {
  auto m = split(stratum(TaskType::I2T, 100, "a"), 0.95, 7);
  EXPECT_EQ(m.train_ids.size(), 95u);
  EXPECT_EQ(m.test_ids.size(), 5u);
  auto again = split(stratum(TaskType::I2T, 100, "a"), 0.95, 7);
  EXPECT_EQ(to_json(m), to_json(again));
}

TEST(Split, PerStratum) {
  auto samples = stratum(TaskType::I2T, 40, "i");
  auto t = stratum(TaskType::T2T, 60, "t");
  samples.insert(samples.end(), t.begin(), t.end());
  auto m = split(samples, 0.95, 7);
  ASSERT_EQ(m.strata.size(), 2u);
  EXPECT_EQ(m.strata[0].train, 38u);
  EXPECT_EQ(m.strata[0].test, 2u);
  EXPECT_EQ(m.strata[1].train, 57u);
  EXPECT_EQ(m.strata[1].test, 3u);
}

TEST(Split, PartitionForManySeeds) {
  auto samples = fixture::synthetic_samples(120, 2);
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    auto m = split(samples, 0.95, seed);
    std::set<std::string> train(m.train_ids.begin(), m.train_ids.end());
    std::set<std::string> all(train);
    for (const auto& id : m.test_ids) {
      EXPECT_FALSE(train.count(id));
      all.insert(id);
    }
    EXPECT_EQ(all.size(), samples.size());
    for (const auto& s : m.strata) {
      double n = static_cast<double>(s.train + s.test);
      EXPECT_LE(std::abs(static_cast<double>(s.train) - 0.95 * n), 1.0);
    }
  }
}

TEST(Split, SingletonStratumGoesToTrain) {
  auto samples = stratum(TaskType::I2T, 10, "a");
  auto lone = stratum(TaskType::IT2T, 1, "z");
  samples.push_back(lone[0]);
  auto m = split(samples, 0.95, 1);
  EXPECT_EQ(m.warnings.size(), 1u);
  EXPECT_NE(std::find(m.train_ids.begin(), m.train_ids.end(), "z0"), m.train_ids.end());
  EXPECT_THROW(split(samples, 0.0, 1), ArgumentError);
}

TEST(Split, ManifestJsonRoundTrip) {
  auto m = split(fixture::synthetic_samples(50, 5), 0.95, 3);
  EXPECT_EQ(to_json(split_manifest_from_json(to_json(m))), to_json(m));
}
