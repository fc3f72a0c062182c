#include <gtest/gtest.h>

#include "clot/evalkit.hpp"
#include "clot/forge.hpp"
#include "ndcg_oracle.hpp"
#include "support.hpp"

using namespace clot;
using namespace clot::eval;

namespace {

ChoiceQuestion question(int m, int n, std::vector<char> gold) {
  ChoiceQuestion q;
  q.id = "q";
  q.m = m;
  q.n = n;
  for (int i = 0; i < m; ++i) q.options.push_back("o" + std::to_string(i));
  q.gold = std::move(gold);
  return q;
}

ParsedChoice answer(std::vector<char> labels) {
  ParsedChoice p;
  p.labels = std::move(labels);
  p.confidence = p.labels.empty() ? ParseConfidence::failed : ParseConfidence::exact;
  return p;
}

RankingQuestion ranking(std::vector<std::int64_t> likes, TaskType task = TaskType::I2T, Language lang = Language::EN()) {
  RankingQuestion q;
  q.id = "r";
  q.task = task;
  q.lang = lang;
  for (std::size_t i = 0; i < likes.size(); ++i) q.candidates.push_back({"c" + std::to_string(i), likes[i]});
  return q;
}

ParsedRanking ranked(std::string order) {
  ParsedRanking p;
  p.order.assign(order.begin(), order.end());
  p.confidence = order.empty() ? ParseConfidence::failed : ParseConfidence::exact;
  return p;
}

}  // namespace

TEST(Choice, ThreeOfFour) {
  std::vector<ChoiceQuestion> qs(4, question(3, 1, {'B'}));
  auto s = score_choice(qs, {answer({'B'}), answer({'B'}), answer({'B'}), answer({'A'})});
  EXPECT_DOUBLE_EQ(s.at("3T1").accuracy(), 0.75);
}

TEST(Choice, FiveToTwoIsExactSet) {
  auto q = question(5, 2, {'A', 'C'});
  EXPECT_FALSE(choice_correct(q, answer({'A'})));
  EXPECT_TRUE(choice_correct(q, answer({'C', 'A'})));
  EXPECT_FALSE(choice_correct(q, answer({'A', 'B'})));
}

TEST(Choice, AllFailed) {
  std::vector<ChoiceQuestion> qs(3, question(2, 1, {'A'}));
  auto s = score_choice(qs, {answer({}), answer({}), answer({})});
  EXPECT_DOUBLE_EQ(s.at("2T1").accuracy(), 0.0);
  EXPECT_EQ(s.at("2T1").failed, 3u);
  EXPECT_THROW(score_choice(qs, {}), ArgumentError);
}

TEST(Grades, DenseRank) {
  EXPECT_EQ(grade_relevance({10, 8, 8, 3, 1}), (std::vector<int>{4, 3, 3, 2, 1}));
  EXPECT_EQ(grade_relevance({7, 7, 7, 7, 7}), (std::vector<int>{4, 4, 4, 4, 4}));
  EXPECT_EQ(grade_relevance({5, 4, 3, 2, 1}), (std::vector<int>{4, 3, 2, 1, 0}));
  EXPECT_EQ(grade_relevance({1, 2, 3, 4, 5}), (std::vector<int>{0, 1, 2, 3, 4}));
}

TEST(Grades, MatchBruteForce) {
  Rng rng(3);
  for (int t = 0; t < 500; ++t) {
    std::vector<std::int64_t> likes;
    for (int i = 0; i < 5; ++i) likes.push_back(static_cast<std::int64_t>(rng.index(6)));
    EXPECT_EQ(grade_relevance(likes), fixture::brute_grades(likes));
  }
}

TEST(Ndcg, Conventions) {
  EXPECT_EQ(ndcg({0, 1, 2, 3, 4}, {4, 3, 2, 1, 0}), 1.0);
  EXPECT_EQ(ndcg({3, 1, 0, 4, 2}, {0, 0, 0, 0, 0}), 1.0);
  EXPECT_THROW(ndcg({0, 0, 1, 2, 3}, {4, 3, 2, 1, 0}), ArgumentError);
  EXPECT_THROW(ndcg({0, 1, 2}, {4, 3, 2, 1, 0}), ArgumentError);
}

TEST(Ndcg, SwapTopTwo) {
  // Gains 15, 7, 3, 1, 0 at discounts 1, log2 3, 2, log2 5, log2 6.
  const double ideal = 15.0 + 7.0 / std::log2(3.0) + 3.0 / 2.0 + 1.0 / std::log2(5.0);
  const double swapped = 7.0 + 15.0 / std::log2(3.0) + 3.0 / 2.0 + 1.0 / std::log2(5.0);
  auto v = ndcg({1, 0, 2, 3, 4}, {4, 3, 2, 1, 0});
  EXPECT_NEAR(v, swapped / ideal, 1e-12);
  EXPECT_NEAR(v, 0.8617, 5e-5);
}

TEST(Ndcg, AgreesWithBruteForce) {
  auto rng = Rng::derive(1, "test/ndcg");
  for (int t = 0; t < 1000; ++t) {
    std::vector<int> grades;
    for (int i = 0; i < 5; ++i) grades.push_back(static_cast<int>(rng.index(5)));
    auto perm = rng.permutation(5);
    EXPECT_NEAR(ndcg(perm, grades), fixture::brute_ndcg(perm, grades), 1e-12);
  }
}

TEST(RankScoring, IdealAndFailed) {
  std::vector<RankingQuestion> qs{ranking({5, 4, 3, 2, 1}), ranking({1, 2, 3, 4, 5})};
  auto s = score_ranking(qs, {ranked("ABCDE"), ranked("EDCBA")});
  EXPECT_DOUBLE_EQ(s.ndcg(), 1.0);
  EXPECT_DOUBLE_EQ(s.top1_accuracy(), 1.0);
  s = score_ranking(qs, {ranked(""), ranked("")});
  EXPECT_DOUBLE_EQ(s.ndcg(), 0.0);
  EXPECT_DOUBLE_EQ(s.top1_accuracy(), 0.0);
  EXPECT_EQ(s.failed, 2u);
}

TEST(RankScoring, TiedMaxCountsAsTop1) {
  auto s = score_ranking({ranking({9, 9, 3, 2, 1})}, {ranked("BACDE")});
  EXPECT_EQ(s.top1, 1u);
}

TEST(Report, AverageAndJson) {
  GroupReport g;
  g.variants["2T1"] = {1, 1, 0, 1};
  g.variants["3T1"] = {0, 1, 0, 2};
  RankScore r;
  r.ndcg_sum = 1.0;
  r.total = 2;
  g.rank = r;
  EXPECT_DOUBLE_EQ(g.average(), (1.0 + 0.0 + 0.5) / 3.0);
  EvalReport rep;
  rep.backend = "mock";
  rep.groups.push_back(g);
  auto j = to_json(rep);
  EXPECT_EQ(j["metadata"]["rank_metric"], "NDCG (dense-rank grades)");
  EXPECT_EQ(j["groups"][0]["variants"]["3T1"]["total"], 2);
  EXPECT_DOUBLE_EQ(j["groups"][0]["rank"]["ndcg"].get<double>(), 0.5);
  auto table = render_table(rep);
  EXPECT_NE(table.find("2T1     3T1     Rank    Top1    Avg."), std::string::npos);
  EXPECT_NE(table.find("50.0"), std::string::npos);
}

namespace {

/// Answers every question with its gold labels or gold order.
class GoldBackend : public LlmBackend {
 public:
  GoldBackend(const std::vector<ChoiceQuestion>& c, const std::vector<RankingQuestion>& r) {
    for (const auto& q : c) replies_[q.stem] = selection_target(q.options, q.gold);
    for (const auto& q : r) {
      std::vector<std::string> texts;
      for (const auto& cand : q.candidates) texts.push_back(cand.text);
      replies_[q.stem] = ranking_target(texts, q.gold_order);
    }
  }
  std::string name() const override { return "gold"; }
  std::string model() const override { return "oracle"; }
  bool supports_images() const override { return true; }
  std::string complete(const ChatRequest& r) override { return replies_.at(r.prompt); }

 private:
  std::map<std::string, std::string> replies_;
};

}  // namespace

TEST(Driver, GoldAnswersScorePerfectly) {
  auto corpus = fixture::synthetic_samples(40, 6);
  forge::DistractorProviders p;
  p.caption = [](const OogiriSample& s) { return "caption " + s.id; };
  p.rewrite = [](const std::string& t) { return "rewrite " + t; };
  p.foreign_pool = forge::response_pool(corpus);
  NounSet ns;
  auto out = forge::formulate_corpus(corpus, ns, fixture::shipped_extractor(), p, {});
  ASSERT_FALSE(out.choice_questions.empty());
  ASSERT_FALSE(out.ranking_questions.empty());
  Gateway gw(std::make_shared<GoldBackend>(out.choice_questions, out.ranking_questions), fixture::fast_gateway());
  auto rep = run_eval(out.choice_questions, out.ranking_questions, gw);
  for (const auto& g : rep.groups) {
    for (const auto& [name, v] : g.variants) EXPECT_DOUBLE_EQ(v.accuracy(), 1.0) << name;
    if (g.rank) {
      EXPECT_DOUBLE_EQ(g.rank->ndcg(), 1.0);
      EXPECT_DOUBLE_EQ(g.rank->top1_accuracy(), 1.0);
    }
    EXPECT_DOUBLE_EQ(g.average(), 1.0);
  }
  EXPECT_EQ(rep.answers.size(), out.choice_questions.size() + out.ranking_questions.size());
  for (std::size_t i = 1; i < rep.groups.size(); ++i) {
    EXPECT_LT(std::make_pair(rep.groups[i - 1].task, rep.groups[i - 1].lang),
              std::make_pair(rep.groups[i].task, rep.groups[i].lang));
  }
}

TEST(Driver, ReaskRecoversFromGarbage) {
  auto q = question(3, 1, {'C'});
  q.stem = "pick";
  auto be = std::make_shared<fixture::ScriptedBackend>(
      [](const ChatRequest&, std::size_t call) { return std::string(call == 0 ? "hmm" : "C. o2"); });
  Gateway gw(be, fixture::fast_gateway());
  EvalOptions opt;
  auto rep = run_eval({q}, {}, gw, opt);
  EXPECT_DOUBLE_EQ(rep.groups[0].variants.at("3T1").accuracy(), 0.0);
  opt.reask = 1;
  rep = run_eval({q}, {}, gw, opt);
  EXPECT_DOUBLE_EQ(rep.groups[0].variants.at("3T1").accuracy(), 1.0);
}

TEST(Driver, TransportFailuresAreFailedParses) {
  auto q = question(2, 1, {'A'});
  q.stem = "pick";
  auto be = std::make_shared<fixture::ScriptedBackend>([](const ChatRequest&, std::size_t) -> std::string {
    throw TransportError("down");
  });
  Gateway gw(be, fixture::fast_gateway());
  auto rep = run_eval({q}, {ranking({5, 4, 3, 2, 1})}, gw);
  EXPECT_EQ(rep.groups[0].variants.at("2T1").failed, 1u);
  EXPECT_EQ(rep.groups[0].rank->failed, 1u);
  EXPECT_FALSE(rep.answers[0].error.empty());
}
