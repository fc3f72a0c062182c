#pragma once

// Scoring for choice and ranking questions, and the evaluation driver that
// produces the per-task, per-language report.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "clot/core.hpp"
#include "clot/gateway.hpp"
#include "clot/parse.hpp"

namespace clot::eval {

/// Exact-set grading: the parsed label set must equal the gold set.
inline bool choice_correct(const ChoiceQuestion& q, const ParsedChoice& a) {
  if (a.confidence == ParseConfidence::failed) return false;
  auto got = a.labels;
  std::sort(got.begin(), got.end());
  auto gold = q.gold;
  std::sort(gold.begin(), gold.end());
  return got == gold;
}

struct VariantScore {
  std::size_t correct = 0;
  std::size_t answered = 0;
  std::size_t failed = 0;
  std::size_t total = 0;
  double accuracy() const { return total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0; }
};

/// Accuracy per variant name ("3T1", ...). Failed parses count as wrong.
inline std::map<std::string, VariantScore> score_choice(const std::vector<ChoiceQuestion>& questions,
                                                        const std::vector<ParsedChoice>& answers) {
  if (questions.size() != answers.size()) throw ArgumentError("questions and answers differ in length");
  std::map<std::string, VariantScore> out;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    auto& v = out[ChoiceVariant{questions[i].m, questions[i].n}.name()];
    ++v.total;
    if (answers[i].confidence == ParseConfidence::failed) {
      ++v.failed;
    } else {
      ++v.answered;
    }
    if (choice_correct(questions[i], answers[i])) ++v.correct;
  }
  return out;
}

/// Dense-rank grades from like counts: the most-liked distinct count gets
/// grade size-1 (4 for five candidates), the next distinct count one less,
/// floored at 0. Ties share a grade.
inline std::vector<int> grade_relevance(const std::vector<std::int64_t>& likes) {
  std::vector<std::int64_t> distinct = likes;
  std::sort(distinct.begin(), distinct.end(), std::greater<>());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  const int top = likes.empty() ? 0 : static_cast<int>(likes.size()) - 1;
  std::vector<int> grades;
  grades.reserve(likes.size());
  for (auto l : likes) {
    auto rank = static_cast<int>(std::find(distinct.begin(), distinct.end(), l) - distinct.begin());
    grades.push_back(std::max(0, top - rank));
  }
  return grades;
}

/// DCG over a predicted order of candidate indices, normalized by the
/// grade-descending order. All-zero grades give 1 by convention.
inline double ndcg(const std::vector<std::size_t>& predicted, const std::vector<int>& grades) {
  if (!is_permutation_of(predicted, grades.size())) throw ArgumentError("predicted order is not a permutation");
  auto dcg = [&](const std::vector<int>& g) {
    double s = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) s += (std::exp2(g[i]) - 1.0) / std::log2(static_cast<double>(i) + 2.0);
    return s;
  };
  std::vector<int> got;
  got.reserve(predicted.size());
  for (auto p : predicted) got.push_back(grades[p]);
  auto ideal = grades;
  std::sort(ideal.begin(), ideal.end(), std::greater<>());
  const double idcg = dcg(ideal);
  if (idcg == 0.0) return 1.0;
  return dcg(got) / idcg;
}

struct RankScore {
  double ndcg_sum = 0.0;
  std::size_t top1 = 0;
  std::size_t answered = 0;
  std::size_t failed = 0;
  std::size_t total = 0;
  double ndcg() const { return total ? ndcg_sum / static_cast<double>(total) : 0.0; }
  double top1_accuracy() const { return total ? static_cast<double>(top1) / static_cast<double>(total) : 0.0; }
};

inline std::vector<std::size_t> order_indices(const std::vector<char>& labels) {
  std::vector<std::size_t> out;
  out.reserve(labels.size());
  for (char c : labels) out.push_back(static_cast<std::size_t>(c - 'A'));
  return out;
}

inline RankScore score_ranking(const std::vector<RankingQuestion>& questions, const std::vector<ParsedRanking>& answers) {
  if (questions.size() != answers.size()) throw ArgumentError("questions and answers differ in length");
  RankScore out;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto& q = questions[i];
    const auto& a = answers[i];
    ++out.total;
    if (a.confidence == ParseConfidence::failed || a.order.size() != q.candidates.size()) {
      ++out.failed;
      continue;
    }
    ++out.answered;
    std::vector<std::int64_t> likes;
    for (const auto& c : q.candidates) likes.push_back(c.likes);
    auto grades = grade_relevance(likes);
    auto pred = order_indices(a.order);
    out.ndcg_sum += ndcg(pred, grades);
    if (grades[pred.front()] == *std::max_element(grades.begin(), grades.end())) ++out.top1;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Driver

struct EvalOptions {
  std::size_t max_inflight = 4;
  int reask = 0;  // extra attempts after a failed parse
  DecodeSettings decode = DecodeSettings::discrimination();
  std::optional<std::uint64_t> seed;
  std::string timestamp;
};

struct AnswerLog {
  std::string question_id;
  std::string kind;  // "choice" or "rank"
  std::string reply;
  std::string parsed;
  std::string confidence;
  std::string error;
  bool correct = false;
};

inline Json to_json(const AnswerLog& a) {
  Json j;
  j["question_id"] = a.question_id;
  j["kind"] = a.kind;
  j["reply"] = a.reply;
  j["parsed"] = a.parsed;
  j["confidence"] = a.confidence;
  if (!a.error.empty()) j["error"] = a.error;
  j["correct"] = a.correct;
  return j;
}

struct GroupReport {
  TaskType task = TaskType::I2T;
  Language lang;
  std::map<std::string, VariantScore> variants;
  std::optional<RankScore> rank;

  /// Mean over the variant accuracies and the ranking NDCG present.
  double average() const {
    double s = 0.0;
    std::size_t k = 0;
    for (const auto& [name, v] : variants) {
      s += v.accuracy();
      ++k;
    }
    if (rank) {
      s += rank->ndcg();
      ++k;
    }
    return k ? s / static_cast<double>(k) : 0.0;
  }
};

struct EvalReport {
  std::string backend;
  std::string model;
  std::optional<std::uint64_t> seed;
  std::string timestamp;
  std::vector<GroupReport> groups;  // ordered by (task, language)
  std::vector<AnswerLog> answers;
};

inline const char* kRankMetricLabel = "NDCG (dense-rank grades)";

inline Json to_json(const EvalReport& r) {
  Json j;
  Json meta;
  meta["backend"] = r.backend;
  meta["model"] = r.model;
  meta["seed"] = r.seed ? Json(*r.seed) : Json(nullptr);
  meta["timestamp"] = r.timestamp;
  meta["rank_metric"] = kRankMetricLabel;
  j["metadata"] = std::move(meta);
  Json groups = Json::array();
  for (const auto& g : r.groups) {
    Json gj;
    gj["task"] = to_string(g.task);
    gj["lang"] = g.lang.code();
    Json vars = Json::object();
    for (const auto& [name, v] : g.variants) {
      vars[name] = {{"accuracy", v.accuracy()},
                    {"correct", v.correct},
                    {"answered", v.answered},
                    {"failed", v.failed},
                    {"total", v.total}};
    }
    gj["variants"] = std::move(vars);
    if (g.rank) {
      gj["rank"] = {{"ndcg", g.rank->ndcg()},
                    {"top1", g.rank->top1_accuracy()},
                    {"answered", g.rank->answered},
                    {"failed", g.rank->failed},
                    {"total", g.rank->total}};
    } else {
      gj["rank"] = nullptr;
    }
    gj["avg"] = g.average();
    groups.push_back(std::move(gj));
  }
  j["groups"] = std::move(groups);
  return j;
}

inline std::string percent(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * x);
  return buf;
}

/// Fixed-width table: one row per task and language, values in percent.
inline std::string render_table(const EvalReport& r) {
  std::vector<std::string> cols;
  for (const auto& g : r.groups) {
    for (const auto& [name, v] : g.variants) {
      if (std::find(cols.begin(), cols.end(), name) == cols.end()) cols.push_back(name);
    }
  }
  std::sort(cols.begin(), cols.end(), [](const std::string& a, const std::string& b) {
    auto va = ChoiceVariant::parse(a), vb = ChoiceVariant::parse(b);
    return std::tie(va.m, va.n) < std::tie(vb.m, vb.n);
  });
  std::ostringstream os;
  auto cell = [&](const std::string& s, int w) {
    os << s;
    for (int i = static_cast<int>(s.size()); i < w; ++i) os << ' ';
  };
  os << "Rank = " << kRankMetricLabel << "; Top1 = top-1 accuracy of the ranking\n";
  cell("Task", 6);
  cell("Lang", 6);
  for (const auto& c : cols) cell(c, 8);
  cell("Rank", 8);
  cell("Top1", 8);
  cell("Avg.", 8);
  os << '\n';
  for (const auto& g : r.groups) {
    cell(std::string(to_string(g.task)), 6);
    cell(g.lang.code(), 6);
    for (const auto& c : cols) {
      auto it = g.variants.find(c);
      cell(it == g.variants.end() ? "-" : percent(it->second.accuracy()), 8);
    }
    cell(g.rank ? percent(g.rank->ndcg()) : "-", 8);
    cell(g.rank ? percent(g.rank->top1_accuracy()) : "-", 8);
    cell(percent(g.average()), 8);
    os << '\n';
  }
  return os.str();
}

namespace detail {

inline ChatRequest question_request(const std::string& stem, const std::optional<std::string>& image, TaskType task,
                                    const DecodeSettings& decode) {
  ChatRequest req;
  req.prompt = stem;
  if (task != TaskType::T2T) req.image_ref = image;
  req.decode = decode;
  return req;
}

}  // namespace detail

/// Sends every question through the gateway, parses and scores the replies,
/// and aggregates per (task, language). Transport failures are scored as
/// failed parses.
inline EvalReport run_eval(const std::vector<ChoiceQuestion>& choices, const std::vector<RankingQuestion>& rankings,
                           Gateway& gateway, const EvalOptions& opt = {}) {
  EvalReport report;
  report.backend = gateway.backend().name();
  report.model = gateway.backend().model();
  report.seed = opt.seed;
  report.timestamp = opt.timestamp;

  std::vector<ParsedChoice> choice_answers(choices.size());
  std::vector<ParsedRanking> rank_answers(rankings.size());
  std::vector<AnswerLog> choice_logs(choices.size()), rank_logs(rankings.size());

  parallel_for(choices.size(), opt.max_inflight, [&](std::size_t i) {
    const auto& q = choices[i];
    auto& log = choice_logs[i];
    log.question_id = q.id;
    log.kind = "choice";
    auto labels = first_labels(q.options.size());
    ParsedChoice parsed{{}, "", ParseConfidence::failed};
    for (int attempt = 0; attempt <= opt.reask; ++attempt) {
      try {
        log.reply = gateway.complete(detail::question_request(q.stem, q.image_ref, q.task, opt.decode));
        log.error.clear();
        parsed = parse_choice(log.reply, labels, static_cast<std::size_t>(q.n));
      } catch (const std::exception& e) {
        log.error = e.what();
      }
      if (parsed.confidence != ParseConfidence::failed) break;
    }
    log.parsed = labels_string(parsed.labels);
    log.confidence = std::string(to_string(parsed.confidence));
    log.correct = choice_correct(q, parsed);
    choice_answers[i] = std::move(parsed);
  });

  parallel_for(rankings.size(), opt.max_inflight, [&](std::size_t i) {
    const auto& q = rankings[i];
    auto& log = rank_logs[i];
    log.question_id = q.id;
    log.kind = "rank";
    auto labels = first_labels(q.candidates.size());
    ParsedRanking parsed{{}, "", ParseConfidence::failed};
    for (int attempt = 0; attempt <= opt.reask; ++attempt) {
      try {
        log.reply = gateway.complete(detail::question_request(q.stem, q.image_ref, q.task, opt.decode));
        log.error.clear();
        parsed = parse_ranking(log.reply, labels);
      } catch (const std::exception& e) {
        log.error = e.what();
      }
      if (parsed.confidence != ParseConfidence::failed) break;
    }
    log.parsed = labels_string(parsed.order);
    log.confidence = std::string(to_string(parsed.confidence));
    if (parsed.confidence != ParseConfidence::failed && parsed.order.size() == q.candidates.size()) {
      log.correct = score_ranking({q}, {parsed}).top1 == 1;
    }
    rank_answers[i] = std::move(parsed);
  });

  using Key = std::pair<TaskType, Language>;
  std::map<Key, std::vector<std::size_t>> choice_groups, rank_groups;
  for (std::size_t i = 0; i < choices.size(); ++i) choice_groups[{choices[i].task, choices[i].lang}].push_back(i);
  for (std::size_t i = 0; i < rankings.size(); ++i) rank_groups[{rankings[i].task, rankings[i].lang}].push_back(i);
  std::vector<Key> keys;
  for (const auto& [k, v] : choice_groups) keys.push_back(k);
  for (const auto& [k, v] : rank_groups) {
    if (!choice_groups.count(k)) keys.push_back(k);
  }
  std::sort(keys.begin(), keys.end());

  for (const auto& key : keys) {
    GroupReport g;
    g.task = key.first;
    g.lang = key.second;
    if (auto it = choice_groups.find(key); it != choice_groups.end()) {
      std::vector<ChoiceQuestion> qs;
      std::vector<ParsedChoice> as;
      for (auto i : it->second) {
        qs.push_back(choices[i]);
        as.push_back(choice_answers[i]);
      }
      g.variants = score_choice(qs, as);
    }
    if (auto it = rank_groups.find(key); it != rank_groups.end()) {
      std::vector<RankingQuestion> qs;
      std::vector<ParsedRanking> as;
      for (auto i : it->second) {
        qs.push_back(rankings[i]);
        as.push_back(rank_answers[i]);
      }
      g.rank = score_ranking(qs, as);
    }
    report.groups.push_back(std::move(g));
  }
  report.answers = std::move(choice_logs);
  report.answers.insert(report.answers.end(), rank_logs.begin(), rank_logs.end());
  return report;
}

}  // namespace clot::eval
