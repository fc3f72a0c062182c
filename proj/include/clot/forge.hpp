#pragma once

// Instruction formulation: turns samples into generation, ranking,
// selection and mask records, and builds the evaluation questions.

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "clot/core.hpp"
#include "clot/gateway.hpp"
#include "clot/nouns.hpp"
#include "clot/random.hpp"
#include "clot/templates.hpp"

namespace clot::forge {

/// Distinct nouns of `text` (extraction order) minus the noun set's deny list.
inline std::vector<std::string> response_nouns(std::string_view text_value, const Language& lang,
                                               const NounExtractor& extractor, const NounSet& ns) {
  std::vector<std::string> out;
  for (auto& n : extractor.extract(text_value, lang)) {
    if (n.empty() || ns.is_denied(n)) continue;
    if (std::find(out.begin(), out.end(), n) == out.end()) out.push_back(std::move(n));
  }
  return out;
}

struct GenerationResult {
  std::vector<InstructionRecord> records;
  std::size_t fallbacks = 0;  // conditioned draws with no noun in the response
};

/// One generation record per response. With probability rho_c the record is
/// unconditioned (GEN); otherwise its condition is a noun drawn uniformly
/// from that response's own nouns (GEN_COND).
inline GenerationResult formulate_generation(const OogiriSample& s, const NounExtractor& extractor, const NounSet& ns,
                                             double rho_c, Rng& rng) {
  if (!(rho_c >= 0.0 && rho_c <= 1.0)) throw ArgumentError("rho_c must lie in [0,1]");
  GenerationResult out;
  for (std::size_t i = 0; i < s.responses.size(); ++i) {
    const auto& resp = s.responses[i];
    InstructionRecord rec;
    rec.id = s.id + "/gen/" + std::to_string(i);
    rec.image_ref = s.image_ref;
    rec.target = resp.text;
    rec.meta["source"] = s.id;
    rec.meta["response"] = std::to_string(i);
    if (!rng.bernoulli(rho_c)) {
      auto nouns = response_nouns(resp.text, s.lang, extractor, ns);
      if (nouns.empty()) {
        ++out.fallbacks;
      } else {
        rec.kind = RecordKind::GEN_COND;
        rec.condition = nouns[rng.index(nouns.size())];
      }
    }
    TemplateSlots slots;
    slots.condition = rec.condition;
    auto tid = rec.condition ? TemplateId::cond(s.task) : TemplateId::gen(s.task);
    rec.prompt = render(tid, s, slots);
    rec.meta["template"] = tid.name();
    out.records.push_back(std::move(rec));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Choice questions

struct PoolEntry {
  std::string sample_id;
  Language lang;
  std::string text;
};

/// Sources of distractor options. `caption` describes the sample's input
/// (an image caption for image tasks); `rewrite` paraphrases a response;
/// `foreign_pool` holds captions and responses of other samples.
struct DistractorProviders {
  std::function<std::string(const OogiriSample&)> caption;
  std::function<std::string(const std::string&)> rewrite;
  std::vector<PoolEntry> foreign_pool;
};

/// Pool of every sample's responses, tagged by sample and language.
inline std::vector<PoolEntry> response_pool(const std::vector<OogiriSample>& samples) {
  std::vector<PoolEntry> out;
  for (const auto& s : samples) {
    for (const auto& r : s.responses) out.push_back({s.id, s.lang, r.text});
  }
  return out;
}

namespace detail {

/// Indices of the two most-liked responses (ties keep input order).
inline std::vector<std::size_t> gtr_indices(const OogiriSample& s) {
  std::vector<std::size_t> idx(s.responses.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return s.responses[a].likes.value_or(-1) > s.responses[b].likes.value_or(-1);
  });
  return idx;
}

}  // namespace detail

/// Builds an mTn question. Construction order before shuffling is
/// [GTR, caption, unrelated, rewrite(GTR), second GTR], truncated to m.
/// Gold labels are the shuffled positions of the GTR entries.
inline ChoiceQuestion build_choice(const OogiriSample& s, ChoiceVariant variant, const DistractorProviders& providers,
                                   Rng& rng) {
  if (!variant.is_standard()) throw ArgumentError("unsupported choice variant " + variant.name());
  if (s.responses.empty()) throw ArgumentError("sample " + s.id + " has no responses");
  if (variant.m == 5 && s.responses.size() < 2) throw ArgumentError("insufficient GTRs for 5T2 on sample " + s.id);
  if (!providers.caption) throw ArgumentError("caption provider required for " + variant.name());
  if (variant.m >= 4 && !providers.rewrite) throw ArgumentError("rewrite provider required for " + variant.name());

  auto gtrs = detail::gtr_indices(s);
  const auto& gtr = s.responses[gtrs[0]].text;
  std::vector<std::string> built{gtr, providers.caption(s)};
  if (variant.m >= 3) {
    std::vector<const PoolEntry*> eligible;
    for (const auto& e : providers.foreign_pool) {
      if (e.lang != s.lang || e.sample_id == s.id) continue;
      bool own = std::any_of(s.responses.begin(), s.responses.end(), [&](const Response& r) { return r.text == e.text; });
      if (!own) eligible.push_back(&e);
    }
    if (eligible.empty()) throw ArgumentError("foreign pool has no entries for language " + s.lang.code());
    built.push_back(eligible[rng.index(eligible.size())]->text);
  }
  if (variant.m >= 4) built.push_back(providers.rewrite(gtr));
  if (variant.m >= 5) built.push_back(s.responses[gtrs[1]].text);

  auto perm = rng.permutation(built.size());
  ChoiceQuestion q;
  q.id = s.id + "/" + variant.name();
  q.m = variant.m;
  q.n = variant.n;
  q.sample_ref = s.id;
  q.task = s.task;
  q.lang = s.lang;
  q.image_ref = s.image_ref;
  for (std::size_t pos = 0; pos < perm.size(); ++pos) {
    q.options.push_back(built[perm[pos]]);
    q.permutation.push_back(static_cast<int>(perm[pos]));
    if (perm[pos] == 0 || (variant.m == 5 && perm[pos] == 4)) q.gold.push_back(option_label(pos));
  }
  TemplateSlots slots;
  slots.options = q.options;
  q.stem = render(TemplateId::select(s.task, variant), s, slots);
  return q;
}

// ---------------------------------------------------------------------------
// Ranking questions

/// Five most-liked distinct responses, kept in input order; gold order is
/// likes descending with ties in input order. Absent when fewer than five
/// responses carry like counts.
inline std::optional<RankingQuestion> build_ranking(const OogiriSample& s) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < s.responses.size(); ++i) {
    const auto& r = s.responses[i];
    if (!r.likes) continue;
    auto key = text::trim_view(r.text);
    bool dup = std::any_of(eligible.begin(), eligible.end(),
                           [&](std::size_t j) { return text::trim_view(s.responses[j].text) == key; });
    if (!dup) eligible.push_back(i);
  }
  if (eligible.size() < 5) return std::nullopt;
  std::stable_sort(eligible.begin(), eligible.end(),
                   [&](std::size_t a, std::size_t b) { return *s.responses[a].likes > *s.responses[b].likes; });
  eligible.resize(5);
  std::sort(eligible.begin(), eligible.end());

  RankingQuestion q;
  q.id = s.id + "/rank";
  q.sample_ref = s.id;
  q.task = s.task;
  q.lang = s.lang;
  q.image_ref = s.image_ref;
  std::vector<std::string> texts;
  for (auto i : eligible) {
    q.candidates.push_back({s.responses[i].text, *s.responses[i].likes});
    texts.push_back(s.responses[i].text);
  }
  q.gold_order = {0, 1, 2, 3, 4};
  std::stable_sort(q.gold_order.begin(), q.gold_order.end(),
                   [&](std::size_t a, std::size_t b) { return q.candidates[a].likes > q.candidates[b].likes; });
  TemplateSlots slots;
  slots.options = texts;
  q.stem = render(TemplateId::rank(s.task), s, slots);
  return q;
}

// ---------------------------------------------------------------------------
// Mask records

/// With probability mask_prob, masks the first occurrence of one noun of
/// one response (both drawn uniformly among responses that have nouns) and
/// renders the MASK template; the target is the masked-out text.
inline std::optional<InstructionRecord> build_mask(const OogiriSample& s, const NounExtractor& extractor,
                                                   const NounSet& ns, double mask_prob, Rng& rng) {
  if (s.task == TaskType::IT2T) throw ArgumentError("mask records apply to I2T and T2T samples only");
  if (!rng.bernoulli(mask_prob)) return std::nullopt;

  struct Candidate {
    std::size_t response;
    std::vector<std::pair<std::size_t, std::size_t>> spans;  // (offset, length) per noun
  };
  const bool fold = s.lang != Language::CN() && s.lang != Language::JP();
  std::vector<Candidate> candidates;
  for (std::size_t i = 0; i < s.responses.size(); ++i) {
    const auto& t = s.responses[i].text;
    Candidate c{i, {}};
    for (const auto& noun : response_nouns(t, s.lang, extractor, ns)) {
      auto at = fold ? text::ifind(t, noun) : t.find(noun);
      if (at != std::string::npos) c.spans.emplace_back(at, noun.size());
    }
    if (!c.spans.empty()) candidates.push_back(std::move(c));
  }
  if (candidates.empty()) return std::nullopt;
  const auto& c = candidates[rng.index(candidates.size())];
  auto [at, len] = c.spans[rng.index(c.spans.size())];
  const auto& t = s.responses[c.response].text;

  InstructionRecord rec;
  rec.id = s.id + "/mask";
  rec.kind = RecordKind::MASK;
  rec.image_ref = s.image_ref;
  rec.target = t.substr(at, len);
  std::string masked = t.substr(0, at) + std::string(templates::kMaskToken) + t.substr(at + len);
  TemplateSlots slots;
  slots.masked_answer = masked;
  auto tid = TemplateId::mask(s.task);
  rec.prompt = render(tid, s, slots);
  rec.meta["source"] = s.id;
  rec.meta["response"] = std::to_string(c.response);
  rec.meta["template"] = tid.name();
  rec.meta["masked_answer"] = masked;
  return rec;
}

// ---------------------------------------------------------------------------
// Corpus assembly

struct FormulateParams {
  double rho_c = 0.5;
  double mask_prob = 0.5;
  std::vector<ChoiceVariant> variants = standard_variants();
  std::uint64_t seed = 0;
};

struct FormulateStats {
  std::size_t samples = 0;
  std::size_t records = 0;
  std::map<std::string, std::size_t> by_kind;
  std::map<std::string, std::size_t> by_task;
  std::map<std::string, std::size_t> by_lang;
  std::map<std::string, std::size_t> choice_by_variant;
  std::size_t ranking_questions = 0;
  std::size_t condition_fallbacks = 0;
  std::vector<std::string> errors;
  std::vector<std::string> warnings;

  double amplification() const { return samples ? static_cast<double>(records) / static_cast<double>(samples) : 0.0; }
};

inline Json to_json(const FormulateStats& st) {
  Json j;
  j["samples"] = st.samples;
  j["records"] = st.records;
  j["amplification"] = st.amplification();
  j["by_kind"] = st.by_kind;
  j["by_task"] = st.by_task;
  j["by_lang"] = st.by_lang;
  j["choice_by_variant"] = st.choice_by_variant;
  j["ranking_questions"] = st.ranking_questions;
  j["condition_fallbacks"] = st.condition_fallbacks;
  j["errors"] = st.errors;
  j["warnings"] = st.warnings;
  return j;
}

struct FormulateOutput {
  std::vector<InstructionRecord> instructions;
  std::vector<ChoiceQuestion> choice_questions;
  std::vector<RankingQuestion> ranking_questions;
  FormulateStats stats;
};

/// Emits GEN/GEN_COND, RANK, SELECT and MASK records for every eligible
/// sample, plus the matching evaluation questions. Per-sample failures are
/// collected in stats; the run never aborts on one sample. Without
/// providers, SELECT records are skipped with a warning.
inline FormulateOutput formulate_corpus(const std::vector<OogiriSample>& samples, const NounSet& ns,
                                        const NounExtractor& extractor, const std::optional<DistractorProviders>& providers,
                                        const FormulateParams& params) {
  FormulateOutput out;
  auto& st = out.stats;
  if (!providers && !samples.empty()) st.warnings.emplace_back("distractor providers absent; SELECT records skipped");

  auto count = [&](const InstructionRecord& r, const OogiriSample& s) {
    ++st.records;
    ++st.by_kind[std::string(to_string(r.kind))];
    ++st.by_task[std::string(to_string(s.task))];
    ++st.by_lang[s.lang.code()];
  };

  for (const auto& s : samples) {
    auto problems = validate_sample(s);
    if (!problems.empty()) {
      st.errors.push_back(s.id + ": " + text::join(problems, "; "));
      continue;
    }
    ++st.samples;
    try {
      auto rng = Rng::derive(params.seed, "formulate/gen/" + s.id);
      auto gen = formulate_generation(s, extractor, ns, params.rho_c, rng);
      st.condition_fallbacks += gen.fallbacks;
      for (auto& r : gen.records) {
        count(r, s);
        out.instructions.push_back(std::move(r));
      }
    } catch (const std::exception& e) {
      st.errors.push_back(s.id + ": generation: " + e.what());
    }

    try {
      if (auto rq = build_ranking(s)) {
        InstructionRecord rec;
        rec.id = rq->id;
        rec.kind = RecordKind::RANK;
        rec.prompt = rq->stem;
        rec.image_ref = s.image_ref;
        std::vector<std::string> texts;
        for (const auto& c : rq->candidates) texts.push_back(c.text);
        rec.target = ranking_target(texts, rq->gold_order);
        rec.meta["source"] = s.id;
        rec.meta["template"] = TemplateId::rank(s.task).name();
        count(rec, s);
        out.instructions.push_back(std::move(rec));
        ++st.ranking_questions;
        out.ranking_questions.push_back(std::move(*rq));
      }
    } catch (const std::exception& e) {
      st.errors.push_back(s.id + ": ranking: " + e.what());
    }

    if (providers) {
      for (const auto& v : params.variants) {
        try {
          auto rng = Rng::derive(params.seed, "formulate/choice/" + v.name() + "/" + s.id);
          auto q = build_choice(s, v, *providers, rng);
          InstructionRecord rec;
          rec.id = q.id;
          rec.kind = RecordKind::SELECT;
          rec.prompt = q.stem;
          rec.image_ref = s.image_ref;
          rec.target = selection_target(q.options, q.gold);
          rec.meta["source"] = s.id;
          rec.meta["template"] = TemplateId::select(s.task, v).name();
          std::string perm;
          for (auto p : q.permutation) perm += std::to_string(p);
          rec.meta["permutation"] = perm;
          count(rec, s);
          out.instructions.push_back(std::move(rec));
          ++st.choice_by_variant[v.name()];
          out.choice_questions.push_back(std::move(q));
        } catch (const std::exception& e) {
          st.errors.push_back(s.id + ": " + v.name() + ": " + e.what());
        }
      }
    }

    if (s.task != TaskType::IT2T) {
      try {
        auto rng = Rng::derive(params.seed, "formulate/mask/" + s.id);
        if (auto rec = build_mask(s, extractor, ns, params.mask_prob, rng)) {
          count(*rec, s);
          out.instructions.push_back(std::move(*rec));
        }
      } catch (const std::exception& e) {
        st.errors.push_back(s.id + ": mask: " + e.what());
      }
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Backend-driven providers

struct ProviderPrompts {
  std::string caption_image = "Describe this image in one plain, literal sentence.";
  std::string caption_text = "Restate the following question as one plain, literal sentence.\nQuestion: ";
  std::string rewrite = "Rewrite the following sentence so that it keeps its meaning but is no longer funny.\nSentence: ";
};

/// Captions and rewrites produced by a backend with greedy decoding.
/// Results are cached per input so repeated requests stay consistent.
inline DistractorProviders backend_providers(Gateway& gateway, std::vector<PoolEntry> pool, ProviderPrompts prompts = {}) {
  struct Cache {
    std::mutex mu;
    std::map<std::string, std::string> entries;
  };
  auto cache = std::make_shared<Cache>();
  auto ask = [&gateway, cache](ChatRequest req) {
    auto key = prompt_hash(req.prompt, req.image_ref);
    {
      std::lock_guard lock(cache->mu);
      if (auto it = cache->entries.find(key); it != cache->entries.end()) return it->second;
    }
    auto reply = text::trim(gateway.complete(req));
    if (reply.empty()) throw TransportError("empty provider reply");
    std::lock_guard lock(cache->mu);
    cache->entries[key] = reply;
    return reply;
  };
  DistractorProviders p;
  p.foreign_pool = std::move(pool);
  p.caption = [ask, prompts, &gateway](const OogiriSample& s) {
    ChatRequest req;
    req.decode = DecodeSettings::discrimination();
    if (s.image_ref && gateway.backend().supports_images()) {
      req.prompt = prompts.caption_image;
      req.image_ref = s.image_ref;
    } else {
      req.prompt = prompts.caption_text + s.question_text.value_or(s.image_ref.value_or(s.id));
    }
    return ask(std::move(req));
  };
  p.rewrite = [ask, prompts](const std::string& t) {
    ChatRequest req;
    req.decode = DecodeSettings::discrimination();
    req.prompt = prompts.rewrite + t;
    return ask(std::move(req));
  };
  return p;
}

}  // namespace clot::forge
