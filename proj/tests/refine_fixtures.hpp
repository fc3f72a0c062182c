#pragma once

// Scripted backend for the refinement and inference procedures, plus three
// hand-walked inference transcripts.

#include <atomic>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "clot/refinery.hpp"
#include "clot/templates.hpp"

namespace clot::fixture {

/// Routes each request by prompt family. Generation replies get the slot
/// index recovered from the decode seed (seed ^ splitmix64(slot + 1)).
class RefineScriptBackend : public LlmBackend {
 public:
  struct Script {
    std::function<std::string(const ChatRequest&, int slot)> generate;
    std::function<std::string(const ChatRequest&, const std::vector<std::string>& options)> rank;
    std::function<std::string(const ChatRequest&, const std::vector<std::string>& options)> select;
  };

  RefineScriptBackend(Script script, std::uint64_t seed, int n) : script_(std::move(script)), seed_(seed), n_(n) {}

  std::string name() const override { return "refine-script"; }
  std::string model() const override { return "test"; }
  bool supports_images() const override { return true; }

  std::string complete(const ChatRequest& r) override {
    ++calls_;
    auto options = MockBackend::option_lines(r.prompt);
    if (r.prompt.find("ranking the humorousness") != std::string::npos) return script_.rank(r, options);
    if (r.prompt.find("Option id. Option content") != std::string::npos) return script_.select(r, options);
    int slot = -1;
    for (int i = 0; i < n_; ++i) {
      if (r.decode.seed == (seed_ ^ splitmix64(static_cast<std::uint64_t>(i) + 1))) slot = i;
    }
    return script_.generate(r, slot);
  }

  std::size_t calls() const { return calls_; }

 private:
  Script script_;
  std::uint64_t seed_;
  int n_;
  std::atomic<std::size_t> calls_{0};
};

/// "L. text" for the option whose text equals `want`.
inline std::string pick_text(const std::vector<std::string>& options, const std::string& want) {
  for (std::size_t i = 0; i < options.size(); ++i) {
    if (options[i] == want) return std::string(1, option_label(i)) + ". " + want;
  }
  return "none of them";
}

struct InferFixture {
  std::string name;
  OogiriSample query;
  RefinementParams params;
  NounSet nouns;
  std::vector<std::string> generations;  // reply per slot
  std::string rank_reply;
  std::string select_reply;
  // Expected outcome, derived by hand.
  std::vector<std::optional<std::string>> conditions;
  std::vector<std::string> candidates;
  std::vector<std::string> top2;
  std::string best;
  bool degraded = false;
  std::string degraded_reason;
  std::vector<std::pair<std::string, std::string>> stages;  // (stage, parse)
};

inline std::vector<InferFixture> infer_fixtures() {
  std::vector<InferFixture> out;
  NounSet moon;
  moon.insert(Language::EN(), "moon");

  {
    // Five conditioned candidates; the ranking puts C then A on top and the
    // selection takes the second of those two.
    InferFixture f;
    f.name = "i2t-five-moon";
    f.query.id = "q1";
    f.query.task = TaskType::I2T;
    f.query.lang = Language::EN();
    f.query.image_ref = "img/q1.jpg";
    f.params.n = 5;
    f.params.rho = 0.0;
    f.params.seed = 7;
    f.nouns = moon;
    f.generations = {"the moon owes me rent", "moon pie diplomacy", "a moon in witness protection",
                     "the moon called in sick", "moonlighting as a lamp"};
    f.rank_reply = "1. C. a moon in witness protection. 2. A. the moon owes me rent. 3. E. x. 4. B. y. 5. D. z.";
    f.select_reply = "B. the moon owes me rent";
    f.conditions = {"moon", "moon", "moon", "moon", "moon"};
    f.candidates = f.generations;
    f.top2 = {"a moon in witness protection", "the moon owes me rent"};
    f.best = "the moon owes me rent";
    f.stages = {{"generate[0]", "ok"}, {"generate[1]", "ok"}, {"generate[2]", "ok"}, {"generate[3]", "ok"},
                {"generate[4]", "ok"}, {"rank", "exact CAEBD"}, {"select", "exact B"}};
    out.push_back(std::move(f));
  }
  {
    // Unconditioned; one duplicate and surrounding whitespace collapse the
    // three replies to two candidates, which the ranking swaps.
    InferFixture f;
    f.name = "t2t-empty-conditions";
    f.query.id = "q2";
    f.query.task = TaskType::T2T;
    f.query.lang = Language::EN();
    f.query.question_text = "What did the toaster confess?";
    f.params.n = 3;
    f.params.rho = 1.0;
    f.params.seed = 11;
    f.generations = {"It prefers bagels.", "  It prefers bagels.  ", "It was never plugged in."};
    f.rank_reply = "1. B. It was never plugged in. 2. A. It prefers bagels.";
    f.select_reply = "A. It was never plugged in.";
    f.conditions = {std::nullopt, std::nullopt, std::nullopt};
    f.candidates = {"It prefers bagels.", "It was never plugged in."};
    f.top2 = {"It was never plugged in.", "It prefers bagels."};
    f.best = "It was never plugged in.";
    f.stages = {{"generate[0]", "ok"}, {"generate[1]", "duplicate"}, {"generate[2]", "ok"}, {"rank", "exact BA"},
                {"select", "exact A"}};
    out.push_back(std::move(f));
  }
  {
    // The ranking reply is unusable, so the first two candidates go to the
    // selection, whose reply names B without the exact format.
    InferFixture f;
    f.name = "it2t-rank-fallback";
    f.query.id = "q3";
    f.query.task = TaskType::IT2T;
    f.query.lang = Language::EN();
    f.query.image_ref = "img/q3.jpg";
    f.query.question_text = "The sign says: [MASK]";
    f.params.n = 4;
    f.params.rho = 0.0;
    f.params.seed = 3;
    f.nouns = moon;
    f.generations = {"Closed for moon maintenance", "Beware of the moon", "Moon parking only", "No moons allowed"};
    f.rank_reply = "garbage";
    f.select_reply = "I would go with B";
    f.conditions = {"moon", "moon", "moon", "moon"};
    f.candidates = f.generations;
    f.top2 = {"Closed for moon maintenance", "Beware of the moon"};
    f.best = "Beware of the moon";
    f.degraded = true;
    f.degraded_reason = "rank parse failed";
    f.stages = {{"generate[0]", "ok"}, {"generate[1]", "ok"}, {"generate[2]", "ok"},
                {"generate[3]", "ok"}, {"rank", "failed"}, {"select", "recovered B"}};
    out.push_back(std::move(f));
  }
  return out;
}

/// Runs clot_infer on a fixture and lists every disagreement with the
/// hand-walked transcript.
inline std::vector<std::string> replay_infer_fixture(const InferFixture& f) {
  std::vector<std::string> errors;
  auto expect = [&](bool ok, const std::string& what) {
    if (!ok) errors.push_back(f.name + ": " + what);
  };
  RefineScriptBackend::Script script;
  script.generate = [&](const ChatRequest&, int slot) {
    return slot >= 0 && slot < static_cast<int>(f.generations.size()) ? f.generations[static_cast<std::size_t>(slot)]
                                                                       : std::string();
  };
  script.rank = [&](const ChatRequest&, const std::vector<std::string>&) { return f.rank_reply; };
  script.select = [&](const ChatRequest&, const std::vector<std::string>&) { return f.select_reply; };
  auto backend = std::make_shared<RefineScriptBackend>(script, f.params.seed, f.params.n);
  GatewayOptions gopt;
  gopt.retries = 0;
  gopt.max_inflight = 1;
  Gateway gw(backend, gopt);
  Rng rng(f.params.seed);
  auto r = refinery::clot_infer(f.query, f.nouns, f.params, gw, rng);

  expect(r.conditions == f.conditions, "conditions differ");
  expect(r.candidates == f.candidates, "candidates differ");
  expect(r.top2 == f.top2, "top-2 differ");
  expect(r.best == f.best, "best is '" + r.best + "', expected '" + f.best + "'");
  expect(r.degraded == f.degraded, "degraded flag differs");
  expect(r.degraded_reason == f.degraded_reason, "degraded reason '" + r.degraded_reason + "'");
  expect(std::find(r.candidates.begin(), r.candidates.end(), r.best) != r.candidates.end(), "best is not a candidate");
  expect(backend->calls() == static_cast<std::size_t>(f.params.n) + 2, "call count " + std::to_string(backend->calls()));
  if (r.trace.size() != f.stages.size()) {
    expect(false, "trace has " + std::to_string(r.trace.size()) + " steps");
    return errors;
  }
  for (std::size_t i = 0; i < r.trace.size(); ++i) {
    const auto& step = r.trace[i];
    expect(step.stage == f.stages[i].first, "step " + std::to_string(i) + " stage " + step.stage);
    expect(step.parse == f.stages[i].second, "step " + std::to_string(i) + " parse '" + step.parse + "'");
  }
  // Prompts: generation prompts follow the conditions; rank lists the
  // candidates; select lists the top two in rank order.
  for (std::size_t i = 0; i < f.conditions.size(); ++i) {
    TemplateSlots slots;
    slots.condition = f.conditions[i];
    auto tid = f.conditions[i] ? TemplateId::cond(f.query.task) : TemplateId::gen(f.query.task);
    expect(r.trace[i].prompt == render(tid, f.query, slots), "generation prompt " + std::to_string(i));
    expect(r.trace[i].image_ref == (f.query.task == TaskType::T2T ? std::nullopt : f.query.image_ref),
           "generation image " + std::to_string(i));
  }
  TemplateSlots rank_slots;
  rank_slots.options = f.candidates;
  expect(r.trace[f.conditions.size()].prompt == render(TemplateId::rank(f.query.task), f.query, rank_slots), "rank prompt");
  expect(r.trace[f.conditions.size()].reply == f.rank_reply, "rank reply");
  TemplateSlots select_slots;
  select_slots.options = f.top2;
  expect(r.trace.back().prompt == render(TemplateId::select(f.query.task, {2, 1}), f.query, select_slots),
         "select prompt");
  expect(r.trace.back().reply == f.select_reply, "select reply");
  return errors;
}

}  // namespace clot::fixture
