#pragma once

// Explorative self-refinement and CLoT inference.
//
// Both procedures share the same skeleton: sample n weakly-associated
// conditions, generate one candidate per condition, rank the candidates,
// then select among the top two. Refinement mixes the sample's most-liked
// ground-truth response into the selection and drops the sample when that
// response wins; inference selects between the top two alone.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clot/concurrency.hpp"
#include "clot/core.hpp"
#include "clot/gateway.hpp"
#include "clot/nouns.hpp"
#include "clot/parse.hpp"
#include "clot/random.hpp"
#include "clot/templates.hpp"

namespace clot::refinery {

enum class Verdict { EMITTED, DISCARDED_GTR, DISCARDED_DEGENERATE };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::EMITTED: return "EMITTED";
    case Verdict::DISCARDED_GTR: return "DISCARDED_GTR";
    case Verdict::DISCARDED_DEGENERATE: return "DISCARDED_DEGENERATE";
  }
  return "?";
}

struct TraceStep {
  std::string stage;  // "generate[i]", "rank", "select"
  std::string prompt;
  std::optional<std::string> image_ref;
  std::string reply;
  std::string parse;  // parse confidence and result, or the error
};

inline Json to_json(const TraceStep& t) {
  Json j;
  j["stage"] = t.stage;
  j["prompt"] = t.prompt;
  if (t.image_ref) j["image_ref"] = *t.image_ref;
  j["reply"] = t.reply;
  j["parse"] = t.parse;
  return j;
}

struct CandidateSet {
  std::vector<std::optional<std::string>> conditions;  // length n
  std::vector<std::string> candidates;                 // distinct, generation order
  std::size_t failed_slots = 0;
  std::vector<TraceStep> trace;
};

inline void check_rho(double rho) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ArgumentError("rho must lie in [0,1]");
}

/// n generation calls, the i-th conditioned on C_i (GEN template when C_i
/// is empty, COND otherwise). Candidates are deduplicated by trimmed text;
/// failed calls leave their slot empty.
inline CandidateSet generate_candidates(const OogiriSample& s, const NounSet& ns, const RefinementParams& params,
                                        Gateway& gateway, Rng& rng) {
  if (params.n < 1) throw ArgumentError("n must be positive");
  check_rho(params.rho);
  CandidateSet out;
  for (int i = 0; i < params.n; ++i) out.conditions.push_back(sample_condition(ns, s.lang, params.rho, rng));
  for (int i = 0; i < params.n; ++i) {
    const auto& cond = out.conditions[static_cast<std::size_t>(i)];
    TemplateSlots slots;
    slots.condition = cond;
    ChatRequest req;
    req.prompt = render(cond ? TemplateId::cond(s.task) : TemplateId::gen(s.task), s, slots);
    if (s.task != TaskType::T2T) req.image_ref = s.image_ref;
    req.decode = DecodeSettings::generation();
    req.decode.seed = params.seed ^ splitmix64(static_cast<std::uint64_t>(i) + 1);
    TraceStep step{"generate[" + std::to_string(i) + "]", req.prompt, req.image_ref, "", ""};
    try {
      step.reply = gateway.complete(req);
      auto t = text::trim(step.reply);
      if (t.empty()) {
        ++out.failed_slots;
        step.parse = "empty";
      } else if (std::find(out.candidates.begin(), out.candidates.end(), t) != out.candidates.end()) {
        step.parse = "duplicate";
      } else {
        out.candidates.push_back(std::move(t));
        step.parse = "ok";
      }
    } catch (const std::exception& e) {
      ++out.failed_slots;
      step.parse = std::string("error: ") + e.what();
    }
    out.trace.push_back(std::move(step));
  }
  return out;
}

namespace detail {

struct RankStep {
  std::optional<ParsedRanking> ranking;
  TraceStep trace;
};

inline RankStep rank_candidates(const OogiriSample& s, const std::vector<std::string>& candidates, Gateway& gateway) {
  TemplateSlots slots;
  slots.options = candidates;
  ChatRequest req;
  req.prompt = render(TemplateId::rank(s.task), s, slots);
  if (s.task != TaskType::T2T) req.image_ref = s.image_ref;
  req.decode = DecodeSettings::discrimination();
  RankStep out{std::nullopt, {"rank", req.prompt, req.image_ref, "", ""}};
  try {
    out.trace.reply = gateway.complete(req);
  } catch (const std::exception& e) {
    out.trace.parse = std::string("error: ") + e.what();
    return out;
  }
  auto parsed = parse_ranking(out.trace.reply, first_labels(candidates.size()));
  out.trace.parse = std::string(to_string(parsed.confidence));
  if (parsed.confidence != ParseConfidence::failed) out.trace.parse += " " + labels_string(parsed.order);
  if (parsed.confidence != ParseConfidence::failed) out.ranking = std::move(parsed);
  return out;
}

struct SelectStep {
  std::optional<std::size_t> chosen;  // option index
  TraceStep trace;
};

inline SelectStep select_option(const OogiriSample& s, const std::vector<std::string>& options, Gateway& gateway) {
  TemplateSlots slots;
  slots.options = options;
  ChatRequest req;
  req.prompt = render(TemplateId::select(s.task, {static_cast<int>(options.size()), 1}), s, slots);
  if (s.task != TaskType::T2T) req.image_ref = s.image_ref;
  req.decode = DecodeSettings::discrimination();
  SelectStep out{std::nullopt, {"select", req.prompt, req.image_ref, "", ""}};
  try {
    out.trace.reply = gateway.complete(req);
  } catch (const std::exception& e) {
    out.trace.parse = std::string("error: ") + e.what();
    return out;
  }
  auto parsed = parse_choice(out.trace.reply, first_labels(options.size()), 1);
  out.trace.parse = std::string(to_string(parsed.confidence));
  if (parsed.confidence != ParseConfidence::failed) out.trace.parse += " " + labels_string(parsed.labels);
  if (parsed.confidence != ParseConfidence::failed) out.chosen = static_cast<std::size_t>(parsed.labels.front() - 'A');
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Self-refinement

struct RefinementOutcome {
  std::string sample_ref;
  int round = 1;
  std::vector<std::optional<std::string>> conditions;
  std::vector<std::string> candidates;
  std::vector<char> ranked_top2;
  std::vector<std::string> selection_options;
  std::vector<int> selection_permutation;  // option position -> 0,1 = top-2, 2 = GTR
  std::string final_choice;
  Verdict verdict = Verdict::DISCARDED_DEGENERATE;
  std::string reason;
  std::optional<InstructionRecord> emitted_record;
  std::vector<TraceStep> trace;
};

inline Json to_json(const RefinementOutcome& o) {
  Json j;
  j["sample_ref"] = o.sample_ref;
  j["round"] = o.round;
  j["verdict"] = to_string(o.verdict);
  j["reason"] = o.reason;
  Json conds = Json::array();
  for (const auto& c : o.conditions) conds.push_back(c ? Json(*c) : Json(nullptr));
  j["conditions"] = std::move(conds);
  j["candidates"] = o.candidates;
  j["ranked_top2"] = labels_string(o.ranked_top2);
  j["selection_options"] = o.selection_options;
  j["selection_permutation"] = o.selection_permutation;
  j["final_choice"] = o.final_choice;
  j["emitted_record"] = o.emitted_record ? Json(o.emitted_record->id) : Json(nullptr);
  return j;
}

inline bool is_ground_truth(const OogiriSample& s, std::string_view candidate) {
  auto c = text::trim_view(candidate);
  return std::any_of(s.responses.begin(), s.responses.end(),
                     [&](const Response& r) { return text::trim_view(r.text) == c; });
}

/// Generates n candidates, ranks them, then selects among {top-2, most-liked
/// GTR} in shuffled order. The sample is discarded when the GTR (or any
/// text equal to a GTR) is selected; otherwise a GEN record targeting the
/// selected candidate is emitted. n + 2 backend calls on the clean path.
inline RefinementOutcome refine_sample(const OogiriSample& s, const NounSet& ns, const RefinementParams& params,
                                       Gateway& gateway, Rng& rng, int round = 1) {
  if (s.responses.empty()) throw ArgumentError("sample " + s.id + " has no ground-truth response");
  RefinementOutcome out;
  out.sample_ref = s.id;
  out.round = round;

  auto degenerate = [&](std::string why) {
    out.verdict = Verdict::DISCARDED_DEGENERATE;
    out.reason = std::move(why);
    return out;
  };

  CandidateSet cands;
  try {
    cands = generate_candidates(s, ns, params, gateway, rng);
  } catch (const std::exception& e) {
    return degenerate(std::string("candidate generation failed: ") + e.what());
  }
  out.conditions = cands.conditions;
  out.candidates = cands.candidates;
  out.trace = std::move(cands.trace);
  if (out.candidates.size() < 2) return degenerate("fewer than 2 distinct candidates");

  auto ranked = detail::rank_candidates(s, out.candidates, gateway);
  out.trace.push_back(ranked.trace);
  if (!ranked.ranking) return degenerate("rank parse failed");
  out.ranked_top2 = {ranked.ranking->order[0], ranked.ranking->order[1]};

  const auto& gtr = s.responses[primary_response_index(s)].text;
  std::vector<std::string> built{out.candidates[static_cast<std::size_t>(out.ranked_top2[0] - 'A')],
                                 out.candidates[static_cast<std::size_t>(out.ranked_top2[1] - 'A')], gtr};
  auto perm = rng.permutation(built.size());
  for (auto p : perm) {
    out.selection_options.push_back(built[p]);
    out.selection_permutation.push_back(static_cast<int>(p));
  }

  auto selected = detail::select_option(s, out.selection_options, gateway);
  out.trace.push_back(selected.trace);
  if (!selected.chosen) return degenerate("select parse failed");
  out.final_choice = out.selection_options[*selected.chosen];

  if (is_ground_truth(s, out.final_choice)) {
    out.verdict = Verdict::DISCARDED_GTR;
    out.reason = "selected response is a ground-truth response";
    return out;
  }
  out.verdict = Verdict::EMITTED;
  InstructionRecord rec;
  rec.id = s.id + "/refine/r" + std::to_string(round);
  rec.kind = RecordKind::GEN;
  rec.prompt = render(TemplateId::gen(s.task), s);
  rec.image_ref = s.image_ref;
  rec.target = out.final_choice;
  rec.meta["source"] = s.id;
  rec.meta["refine_round"] = std::to_string(round);
  rec.meta["template"] = TemplateId::gen(s.task).name();
  out.emitted_record = std::move(rec);
  return out;
}

struct RefineOptions {
  int rounds = 1;
  std::size_t max_inflight = 4;
  /// Strongly-associated mode: per-sample condition nouns (e.g. nouns of the
  /// sample's caption) replace the corpus-wide set. Samples for which it
  /// yields no nouns fall back to the corpus-wide set.
  std::function<NounSet(const OogiriSample&)> strong_conditions;
};

struct RefineStats {
  std::size_t samples = 0;
  std::size_t emitted = 0;
  std::size_t discarded_gtr = 0;
  std::size_t discarded_degenerate = 0;
  std::size_t conditions = 0;
  std::size_t empty_conditions = 0;
  std::map<std::string, std::size_t> degenerate_reasons;
  std::vector<int> rounds;

  double emission_rate() const { return samples ? static_cast<double>(emitted) / static_cast<double>(samples) : 0.0; }
  double empty_condition_rate() const {
    return conditions ? static_cast<double>(empty_conditions) / static_cast<double>(conditions) : 0.0;
  }
};

inline Json to_json(const RefineStats& st) {
  Json j;
  j["samples"] = st.samples;
  j["emitted"] = st.emitted;
  j["discarded_gtr"] = st.discarded_gtr;
  j["discarded_degenerate"] = st.discarded_degenerate;
  j["degenerate_reasons"] = st.degenerate_reasons;
  j["emission_rate"] = st.emission_rate();
  j["empty_condition_rate"] = st.empty_condition_rate();
  j["rounds"] = st.rounds;
  return j;
}

struct RefineCorpusOutput {
  std::vector<InstructionRecord> merged;
  std::vector<RefinementOutcome> outcomes;
  RefineStats stats;
};

/// Highest "refine_round" recorded in a set of records (0 if none).
inline int last_round(const std::vector<InstructionRecord>& records) {
  int r = 0;
  for (const auto& rec : records) {
    if (auto it = rec.meta.find("refine_round"); it != rec.meta.end()) {
      try {
        r = std::max(r, std::stoi(it->second));
      } catch (const std::exception&) {
      }
    }
  }
  return r;
}

/// Runs `rounds` refinement rounds numbered after the last round found in
/// `base`, and returns base followed by every emitted record. Samples run
/// concurrently; outcomes are ordered by round, then input index.
inline RefineCorpusOutput refine_corpus(const std::vector<OogiriSample>& samples, const NounSet& ns,
                                        const RefinementParams& params, Gateway& gateway,
                                        const std::vector<InstructionRecord>& base, const RefineOptions& opt = {}) {
  RefineCorpusOutput out;
  out.merged = base;
  const int first = last_round(base) + 1;
  for (int round = first; round < first + opt.rounds; ++round) {
    out.stats.rounds.push_back(round);
    std::vector<RefinementOutcome> outcomes(samples.size());
    parallel_for(samples.size(), opt.max_inflight, [&](std::size_t i) {
      const auto& s = samples[i];
      auto rng = Rng::derive(params.seed, "refine/r" + std::to_string(round) + "/" + s.id);
      if (opt.strong_conditions) {
        auto local = opt.strong_conditions(s);
        if (local.size(s.lang) > 0) {
          outcomes[i] = refine_sample(s, local, params, gateway, rng, round);
          return;
        }
      }
      outcomes[i] = refine_sample(s, ns, params, gateway, rng, round);
    });
    for (auto& o : outcomes) {
      ++out.stats.samples;
      for (const auto& c : o.conditions) {
        ++out.stats.conditions;
        if (!c) ++out.stats.empty_conditions;
      }
      switch (o.verdict) {
        case Verdict::EMITTED:
          ++out.stats.emitted;
          out.merged.push_back(*o.emitted_record);
          break;
        case Verdict::DISCARDED_GTR: ++out.stats.discarded_gtr; break;
        case Verdict::DISCARDED_DEGENERATE:
          ++out.stats.discarded_degenerate;
          ++out.stats.degenerate_reasons[o.reason];
          break;
      }
      out.outcomes.push_back(std::move(o));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Inference

struct InferResult {
  std::string best;
  bool degraded = false;
  std::string degraded_reason;
  std::vector<std::optional<std::string>> conditions;
  std::vector<std::string> candidates;
  std::vector<std::string> top2;
  std::vector<TraceStep> trace;
};

inline Json to_json(const InferResult& r) {
  Json j;
  j["best"] = r.best;
  j["degraded"] = r.degraded;
  if (r.degraded) j["degraded_reason"] = r.degraded_reason;
  Json conds = Json::array();
  for (const auto& c : r.conditions) conds.push_back(c ? Json(*c) : Json(nullptr));
  j["conditions"] = std::move(conds);
  j["candidates"] = r.candidates;
  j["top2"] = r.top2;
  Json trace = Json::array();
  for (const auto& t : r.trace) trace.push_back(to_json(t));
  j["trace"] = std::move(trace);
  return j;
}

/// Creates n candidates under weakly-associated conditions, ranks them to
/// get the top two, then selects the better of the two. The answer is always
/// one of the generated candidates. A single surviving candidate is returned
/// with the degraded flag; no candidate at all is an error.
inline InferResult clot_infer(const OogiriSample& query, const NounSet& ns, const RefinementParams& params,
                              Gateway& gateway, Rng& rng) {
  InferResult out;
  auto cands = generate_candidates(query, ns, params, gateway, rng);
  out.conditions = cands.conditions;
  out.candidates = cands.candidates;
  out.trace = std::move(cands.trace);
  if (out.candidates.empty()) throw TransportError("inference produced no candidates");
  if (out.candidates.size() == 1) {
    out.best = out.candidates.front();
    out.degraded = true;
    out.degraded_reason = "single candidate";
    return out;
  }

  auto ranked = detail::rank_candidates(query, out.candidates, gateway);
  out.trace.push_back(ranked.trace);
  if (ranked.ranking) {
    out.top2 = {out.candidates[static_cast<std::size_t>(ranked.ranking->order[0] - 'A')],
                out.candidates[static_cast<std::size_t>(ranked.ranking->order[1] - 'A')]};
  } else {
    out.top2 = {out.candidates[0], out.candidates[1]};
    out.degraded = true;
    out.degraded_reason = "rank parse failed";
  }

  auto selected = detail::select_option(query, out.top2, gateway);
  out.trace.push_back(selected.trace);
  if (selected.chosen) {
    out.best = out.top2[*selected.chosen];
  } else {
    out.best = out.top2[0];
    out.degraded = true;
    out.degraded_reason = out.degraded_reason.empty() ? "select parse failed" : out.degraded_reason + "; select parse failed";
  }
  return out;
}

}  // namespace clot::refinery
