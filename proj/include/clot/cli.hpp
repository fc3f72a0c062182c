#pragma once

// The `clot` command line: one binary, one subcommand per pipeline stage,
// a JSON config file whose values are overridden by flags, and a run
// manifest next to every set of outputs.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "clot/core.hpp"
#include "clot/evalkit.hpp"
#include "clot/forge.hpp"
#include "clot/gateway.hpp"
#include "clot/ingest.hpp"
#include "clot/jsonl.hpp"
#include "clot/nouns.hpp"
#include "clot/refinery.hpp"
#include "clot/remote.hpp"
#include "clot/sidequests.hpp"

#ifndef CLOT_VERSION
#define CLOT_VERSION "0.1.0"
#endif
#ifndef CLOT_DATA_DIR
#define CLOT_DATA_DIR "data"
#endif

namespace clot::cli {

namespace fs = std::filesystem;

inline fs::path data_dir() {
  if (const char* v = std::getenv("CLOT_DATA_DIR"); v && *v) return v;
  return CLOT_DATA_DIR;
}

/// Wall clock, or SOURCE_DATE_EPOCH when set so reruns stay byte-identical.
inline std::string run_timestamp() {
  if (const char* v = std::getenv("SOURCE_DATE_EPOCH"); v && *v) {
    try {
      return utc_timestamp(std::chrono::system_clock::time_point(std::chrono::seconds(std::stoll(v))));
    } catch (const std::exception&) {
    }
  }
  return utc_timestamp();
}

// ---------------------------------------------------------------------------
// Configuration

struct BackendConfig {
  std::string kind = "mock";  // mock | remote
  std::optional<std::uint64_t> mock_seed;
  std::string transcript;
  bool oracle = false;  // mock answers every question with its gold
  std::string base_url;
  std::string model;
  bool supports_images = true;
  std::size_t max_inflight = 4;
  int retries = 3;
  int max_tokens = 256;
  std::string request_log;
};

struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "clot-out";
  std::string samples;
  std::string lexicons = (data_dir() / "lexicon").string();
  std::string nouns;
  std::string embeddings;
  std::string labels = (data_dir() / "safety_labels.txt").string();
  std::string distractors = (data_dir() / "cgg_distractors.txt").string();
  RefinementParams refinement;
  double mask_prob = 0.5;
  std::vector<std::string> variants = {"3T1", "4T1", "5T2"};
  BackendConfig backend;
};

inline Json to_json(const PipelineConfig& c) {
  Json j;
  j["seed"] = c.seed;
  j["out_dir"] = c.out_dir;
  j["paths"] = {{"samples", c.samples},         {"lexicons", c.lexicons}, {"nouns", c.nouns},
                {"embeddings", c.embeddings},   {"labels", c.labels},     {"distractors", c.distractors}};
  j["refinement"] = {{"n", c.refinement.n}, {"rho", c.refinement.rho}, {"rho_c", c.refinement.rho_c}};
  j["mask_prob"] = c.mask_prob;
  j["variants"] = c.variants;
  Json b;
  b["kind"] = c.backend.kind;
  b["mock_seed"] = c.backend.mock_seed ? Json(*c.backend.mock_seed) : Json(nullptr);
  b["transcript"] = c.backend.transcript;
  b["oracle"] = c.backend.oracle;
  b["base_url"] = c.backend.base_url;
  b["model"] = c.backend.model;
  b["supports_images"] = c.backend.supports_images;
  b["max_inflight"] = c.backend.max_inflight;
  b["retries"] = c.backend.retries;
  b["max_tokens"] = c.backend.max_tokens;
  b["request_log"] = c.backend.request_log;
  j["backend"] = std::move(b);
  return j;
}

namespace detail {

template <typename T>
void read_key(const Json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key) || j.at(key).is_null()) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const Json::exception&) {
    throw FormatError("config: " + where + key + " has the wrong type");
  }
}

inline void check_keys(const Json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw FormatError("config: " + (where.empty() ? std::string("top level") : where) + " must be an object");
  for (const auto& [k, v] : j.items()) {
    bool ok = false;
    for (const char* n : known) ok = ok || k == n;
    if (!ok) throw FormatError("config: unknown key " + where + k);
  }
}

}  // namespace detail

/// Reads a JSON config file over the defaults. Unknown keys are errors.
inline PipelineConfig load_config(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(io::read_file(path));
  } catch (const Json::parse_error& e) {
    throw FormatError("config " + path.string() + ": " + e.what());
  }
  PipelineConfig c;
  detail::check_keys(j, {"seed", "out_dir", "paths", "refinement", "mask_prob", "variants", "backend"}, "");
  detail::read_key(j, "seed", c.seed, "");
  detail::read_key(j, "out_dir", c.out_dir, "");
  detail::read_key(j, "mask_prob", c.mask_prob, "");
  detail::read_key(j, "variants", c.variants, "");
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    detail::check_keys(p, {"samples", "lexicons", "nouns", "embeddings", "labels", "distractors"}, "paths.");
    detail::read_key(p, "samples", c.samples, "paths.");
    detail::read_key(p, "lexicons", c.lexicons, "paths.");
    detail::read_key(p, "nouns", c.nouns, "paths.");
    detail::read_key(p, "embeddings", c.embeddings, "paths.");
    detail::read_key(p, "labels", c.labels, "paths.");
    detail::read_key(p, "distractors", c.distractors, "paths.");
  }
  if (j.contains("refinement")) {
    const auto& r = j.at("refinement");
    detail::check_keys(r, {"n", "rho", "rho_c"}, "refinement.");
    detail::read_key(r, "n", c.refinement.n, "refinement.");
    detail::read_key(r, "rho", c.refinement.rho, "refinement.");
    detail::read_key(r, "rho_c", c.refinement.rho_c, "refinement.");
  }
  if (j.contains("backend")) {
    const auto& b = j.at("backend");
    detail::check_keys(b,
                       {"kind", "mock_seed", "transcript", "oracle", "base_url", "model", "supports_images",
                        "max_inflight", "retries", "max_tokens", "request_log"},
                       "backend.");
    detail::read_key(b, "kind", c.backend.kind, "backend.");
    if (b.contains("mock_seed") && !b.at("mock_seed").is_null()) {
      std::uint64_t s = 0;
      detail::read_key(b, "mock_seed", s, "backend.");
      c.backend.mock_seed = s;
    }
    detail::read_key(b, "transcript", c.backend.transcript, "backend.");
    detail::read_key(b, "oracle", c.backend.oracle, "backend.");
    detail::read_key(b, "base_url", c.backend.base_url, "backend.");
    detail::read_key(b, "model", c.backend.model, "backend.");
    detail::read_key(b, "supports_images", c.backend.supports_images, "backend.");
    detail::read_key(b, "max_inflight", c.backend.max_inflight, "backend.");
    detail::read_key(b, "retries", c.backend.retries, "backend.");
    detail::read_key(b, "max_tokens", c.backend.max_tokens, "backend.");
    detail::read_key(b, "request_log", c.backend.request_log, "backend.");
  }
  return c;
}

// ---------------------------------------------------------------------------
// Run context

/// Digest of a file, or of every regular file (name and content) below a
/// directory in sorted order.
inline std::string digest(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::vector<fs::path> files;
    for (const auto& e : fs::recursive_directory_iterator(p)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    std::string acc;
    for (const auto& f : files) {
      acc += fs::relative(f, p).generic_string() + '\0' + text::hash_hex(io::read_file(f)) + '\n';
    }
    return text::hash_hex(acc);
  }
  return text::hash_hex(io::read_file(p));
}

class Run {
 public:
  Run(std::string command, PipelineConfig cfg, bool dry_run, std::ostream& out, std::ostream& err)
      : command_(std::move(command)), cfg_(std::move(cfg)), dry_run_(dry_run), out_(out), err_(err) {}

  const PipelineConfig& cfg() const { return cfg_; }
  bool dry_run() const { return dry_run_; }
  std::ostream& out() { return out_; }
  std::ostream& err() { return err_; }
  const std::string& run_hash() const { return run_; }
  fs::path out_dir() const { return cfg_.out_dir; }

  void arg(const std::string& key, Json value) { args_[key] = std::move(value); }

  /// Registers an input; it must exist. `flag` names the option in errors.
  fs::path input(const std::string& value, const std::string& flag) {
    if (value.empty()) throw ArgumentError("missing required input " + flag);
    fs::path p(value);
    if (!fs::exists(p)) throw ArgumentError("input not found: " + p.string() + " (" + flag + ")");
    inputs_[p.generic_string()] = digest(p);
    return p;
  }

  /// Fixes the run hash once all inputs and arguments are known.
  void seal() {
    Json j;
    j["command"] = command_;
    j["config"] = to_json(cfg_);
    j["args"] = args_;
    j["inputs"] = inputs_;
    run_ = text::hash_hex(io::dump_line(j));
  }

  void warn(const std::string& msg) { err_ << "clot " << command_ << ": warning: " << msg << '\n'; }

  fs::path output(const std::string& name) {
    outputs_.push_back(name);
    return out_dir() / name;
  }

  void write_jsonl(const std::string& name, std::string_view schema, const std::vector<Json>& rows) {
    io::write_jsonl(output(name), schema, run_, rows);
  }

  void write_json(const std::string& name, Json j) {
    Json wrapped;
    wrapped["run"] = run_;
    for (auto& [k, v] : j.items()) wrapped[k] = v;
    io::write_file(output(name), wrapped.dump(2) + "\n");
  }

  void write_manifest() {
    Json m;
    m["run"] = run_;
    m["command"] = command_;
    m["version"] = CLOT_VERSION;
    m["seed"] = cfg_.seed;
    m["config_hash"] = text::hash_hex(io::dump_line(to_json(cfg_)));
    m["config"] = to_json(cfg_);
    m["args"] = args_;
    m["inputs"] = inputs_;
    m["outputs"] = outputs_;
    io::write_file(out_dir() / ("manifest." + command_ + ".json"), m.dump(2) + "\n");
  }

  /// Lazily built so that dry runs never touch the backend.
  Gateway& gateway() {
    if (dry_run_) throw ArgumentError("backend requested during a dry run");
    if (!gateway_) gateway_ = std::make_unique<Gateway>(make_backend(), gateway_options(), request_log());
    return *gateway_;
  }

  /// Scripts gold answers into the mock when the oracle mode is on.
  void script_gold(const std::vector<ChoiceQuestion>& cq, const std::vector<RankingQuestion>& rq) {
    gold_choice_.insert(gold_choice_.end(), cq.begin(), cq.end());
    gold_rank_.insert(gold_rank_.end(), rq.begin(), rq.end());
  }

  std::shared_ptr<RequestLog> request_log() {
    if (!log_) {
      log_ = cfg_.backend.request_log.empty() ? std::make_shared<RequestLog>()
                                              : std::make_shared<RequestLog>(cfg_.backend.request_log);
    }
    return log_;
  }

  DecodeSettings decode(DecodeSettings d) const {
    d.max_tokens = cfg_.backend.max_tokens;
    return d;
  }

 private:
  std::shared_ptr<LlmBackend> make_backend() {
    const auto& b = cfg_.backend;
    if (b.kind == "mock") {
      MockBackend::Options o;
      o.seed = b.mock_seed.value_or(cfg_.seed);
      o.supports_images = b.supports_images;
      if (!b.model.empty()) o.model = b.model;
      auto mock = std::make_shared<MockBackend>(o);
      if (!b.transcript.empty()) mock->load_transcript(b.transcript);
      if (b.oracle) {
        for (const auto& q : gold_choice_) {
          auto img = q.task == TaskType::T2T ? std::nullopt : q.image_ref;
          mock->script(q.stem, img, selection_target(q.options, q.gold));
        }
        for (const auto& q : gold_rank_) {
          std::vector<std::string> texts;
          for (const auto& c : q.candidates) texts.push_back(c.text);
          auto img = q.task == TaskType::T2T ? std::nullopt : q.image_ref;
          mock->script(q.stem, img, ranking_target(texts, q.gold_order));
        }
      }
      return mock;
    }
    if (b.kind == "remote") {
      auto o = RemoteOptions::from_env();
      if (!b.base_url.empty()) o.base_url = b.base_url;
      if (!b.model.empty()) o.model = b.model;
      o.supports_images = b.supports_images;
      return std::make_shared<RemoteBackend>(o);
    }
    throw ArgumentError("unknown backend kind " + b.kind + " (expected mock or remote)");
  }

  GatewayOptions gateway_options() const {
    GatewayOptions g;
    g.max_inflight = std::max<std::size_t>(1, cfg_.backend.max_inflight);
    g.retries = cfg_.backend.retries;
    return g;
  }

  std::string command_;
  PipelineConfig cfg_;
  bool dry_run_;
  std::ostream& out_;
  std::ostream& err_;
  Json args_ = Json::object();
  std::map<std::string, std::string> inputs_;
  std::vector<std::string> outputs_;
  std::string run_;
  std::shared_ptr<RequestLog> log_;
  std::unique_ptr<Gateway> gateway_;
  std::vector<ChoiceQuestion> gold_choice_;
  std::vector<RankingQuestion> gold_rank_;
};

inline std::vector<std::string> read_optional_list(Run& run, const std::string& path, const std::string& flag) {
  if (path.empty()) return {};
  return io::read_word_list(run.input(path, flag));
}

inline std::shared_ptr<NounExtractor> make_extractor(Run& run, const std::string& table) {
  auto chain = std::make_shared<ExtractorChain>();
  if (!table.empty()) chain->add(std::make_shared<TableExtractor>(TableExtractor::from_file(run.input(table, "--noun-table"))));
  chain->add(std::make_shared<DictionaryExtractor>(
      DictionaryExtractor::from_directory(run.input(run.cfg().lexicons, "--lexicons"))));
  return chain;
}

inline std::vector<ChoiceVariant> parse_variants(const std::vector<std::string>& names) {
  std::vector<ChoiceVariant> out;
  for (const auto& n : names) out.push_back(ChoiceVariant::parse(n));
  return out;
}

// ---------------------------------------------------------------------------
// Subcommands

struct IngestArgs {
  std::string input;
  std::string lang;
  std::string task = "I2T";
  double ratio = 0.95;
  bool skip_bad = false;
};

inline int cmd_ingest(Run& run, const IngestArgs& a) {
  auto path = run.input(a.input, "--input");
  run.arg("lang", a.lang);
  run.arg("task", a.task);
  run.arg("ratio", a.ratio);
  run.arg("skip_bad", a.skip_bad);
  auto task = parse_task(a.task);
  if (!(a.ratio > 0.0 && a.ratio < 1.0)) throw ArgumentError("--ratio must lie in (0,1)");
  run.seal();
  if (run.dry_run()) {
    run.out() << "plan: parse " << path.string() << ", normalize as " << a.task << ", split " << a.ratio
              << " into " << run.out_dir().string() << "/{samples,train,test}.jsonl; no backend calls\n";
    return 0;
  }
  auto parsed = ingest::parse_raw(io::read_file(path));
  std::vector<std::string> errors;
  for (const auto& e : parsed.errors) errors.push_back(path.string() + ":" + std::to_string(e.line) + ": " + e.reason);
  if (!errors.empty() && !a.skip_bad) {
    for (const auto& e : errors) run.err() << e << '\n';
    throw FormatError(std::to_string(errors.size()) + " malformed crawl line(s); rerun with --skip-bad to drop them");
  }
  std::optional<Language> hint;
  if (!a.lang.empty()) hint = Language::parse(a.lang);
  auto norm = ingest::normalize(parsed.records, hint, task);
  ingest::DedupReport dedup;
  auto samples = ingest::deduplicate(norm.samples, &dedup);
  auto manifest = ingest::split(samples, a.ratio, run.cfg().seed);
  for (const auto& w : norm.warnings) run.warn(w);
  for (const auto& w : manifest.warnings) run.warn(w);

  run.write_jsonl("samples.jsonl", io::kSamplesSchema, io::to_rows(samples));
  run.write_jsonl("train.jsonl", io::kSamplesSchema, io::to_rows(ingest::select_ids(samples, manifest.train_ids)));
  run.write_jsonl("test.jsonl", io::kSamplesSchema, io::to_rows(ingest::select_ids(samples, manifest.test_ids)));
  run.write_json("split.json", ingest::to_json(manifest));
  Json report;
  report["records"] = parsed.records.size();
  report["samples"] = samples.size();
  report["skipped_lines"] = errors;
  report["merged_samples"] = dedup.merged_samples;
  report["removed_responses"] = dedup.removed_responses;
  report["warnings"] = norm.warnings;
  run.write_json("ingest_report.json", report);
  run.write_manifest();
  run.out() << "ingested " << samples.size() << " samples (" << manifest.train_ids.size() << " train, "
            << manifest.test_ids.size() << " test)\n";
  return 0;
}

struct ScreenArgs {
  std::string deny_ids;
  std::string allow_ids;
};

inline int cmd_screen(Run& run, const ScreenArgs& a) {
  auto samples_path = run.input(run.cfg().samples, "--samples");
  auto labels_path = run.input(run.cfg().labels, "--labels");
  auto deny = read_optional_list(run, a.deny_ids, "--deny-ids");
  auto allow = read_optional_list(run, a.allow_ids, "--allow-ids");
  run.seal();
  auto samples = io::read_samples(samples_path);
  auto labels = io::read_word_list(labels_path);
  if (run.dry_run()) {
    run.out() << "plan: " << samples.size() << " samples x " << labels.size() << " labels = "
              << samples.size() * labels.size() << " safety questions; no backend calls made\n";
    return 0;
  }
  auto result = ingest::screen(samples, labels, run.gateway(), run.cfg().backend.max_inflight);
  ingest::apply_manual_lists(result, deny, allow);
  run.write_jsonl("screened.jsonl", io::kSamplesSchema, io::to_rows(result.kept));
  std::vector<Json> flagged;
  for (const auto& f : result.flagged) flagged.push_back({{"sample", to_json(f.sample)}, {"labels", f.labels}});
  run.write_jsonl("flagged.jsonl", "clot.flagged", flagged);
  run.write_jsonl("retry.jsonl", io::kSamplesSchema, io::to_rows(result.retry));
  run.write_jsonl("verdicts.jsonl", io::kVerdictSchema, io::to_rows(result.log));
  run.write_manifest();
  run.out() << "kept " << result.kept.size() << ", flagged " << result.flagged.size() << ", retry "
            << result.retry.size() << '\n';
  return 0;
}

struct NounsArgs {
  std::string table;
  std::string deny;
  std::string allow;
  std::size_t english_min_count = 0;
};

inline int cmd_nouns(Run& run, const NounsArgs& a) {
  auto samples_path = run.input(run.cfg().samples, "--samples");
  auto extractor = make_extractor(run, a.table);
  NounBuildOptions opt;
  opt.deny = read_optional_list(run, a.deny, "--deny");
  opt.allow = read_optional_list(run, a.allow, "--allow");
  opt.english_min_count = a.english_min_count;
  run.arg("english_min_count", a.english_min_count);
  run.seal();
  if (run.dry_run()) {
    run.out() << "plan: extract nouns from " << samples_path.string() << " into " << (run.out_dir() / "nouns").string()
              << "; no backend calls\n";
    return 0;
  }
  auto built = extract_nouns(io::read_samples(samples_path), *extractor, opt);
  save_noun_set(built.nouns, run.output("nouns"));
  run.write_json("nouns_report.json", {{"counts", built.counts}});
  run.write_manifest();
  for (const auto& [lang, n] : built.counts) run.out() << lang << ": " << n << " nouns\n";
  return 0;
}

struct FormulateArgs {
  std::string table;
  std::string providers = "backend";  // backend | none
  std::string pool;
};

inline int cmd_formulate(Run& run, const FormulateArgs& a) {
  auto samples_path = run.input(run.cfg().samples, "--samples");
  auto nouns_path = run.input(run.cfg().nouns, "--nouns");
  auto extractor = make_extractor(run, a.table);
  std::optional<fs::path> pool_path;
  if (!a.pool.empty()) pool_path = run.input(a.pool, "--pool");
  if (a.providers != "backend" && a.providers != "none") throw ArgumentError("--providers must be backend or none");
  run.arg("providers", a.providers);
  auto variants = parse_variants(run.cfg().variants);
  run.seal();

  auto samples = io::read_samples(samples_path);
  auto ns = load_noun_set(nouns_path);
  if (run.dry_run()) {
    run.out() << "plan: formulate " << samples.size() << " samples with " << run.cfg().variants.size()
              << " choice variant(s); up to " << (a.providers == "backend" ? 2 * samples.size() : 0)
              << " provider calls; no backend calls made\n";
    return 0;
  }
  forge::FormulateParams params;
  params.rho_c = run.cfg().refinement.rho_c;
  params.mask_prob = run.cfg().mask_prob;
  params.variants = variants;
  params.seed = run.cfg().seed;
  std::optional<forge::DistractorProviders> providers;
  if (a.providers == "backend") {
    auto pool = forge::response_pool(pool_path ? io::read_samples(*pool_path) : samples);
    providers = forge::backend_providers(run.gateway(), std::move(pool));
  }
  auto out = forge::formulate_corpus(samples, ns, *extractor, providers, params);
  for (const auto& w : out.stats.warnings) run.warn(w);
  for (const auto& e : out.stats.errors) run.warn(e);
  run.write_jsonl("instructions.jsonl", io::kInstructionsSchema, io::to_rows(out.instructions));
  run.write_jsonl("choice_questions.jsonl", io::kChoiceSchema, io::to_rows(out.choice_questions));
  run.write_jsonl("ranking_questions.jsonl", io::kRankingSchema, io::to_rows(out.ranking_questions));
  run.write_json("formulate_report.json", forge::to_json(out.stats));
  run.write_manifest();
  run.out() << "formulated " << out.instructions.size() << " records, " << out.choice_questions.size()
            << " choice and " << out.ranking_questions.size() << " ranking questions\n";
  return 0;
}

struct RefineArgs {
  std::string base;
  int rounds = 1;
  std::string assoc = "weak";
  std::string table;
};

inline int cmd_refine(Run& run, const RefineArgs& a) {
  auto samples_path = run.input(run.cfg().samples, "--samples");
  auto nouns_path = run.input(run.cfg().nouns, "--nouns");
  auto base_path = run.input(a.base, "--base");
  if (a.assoc != "weak" && a.assoc != "strong") throw ArgumentError("--assoc must be weak or strong");
  if (a.rounds < 1) throw ArgumentError("--rounds must be positive");
  std::shared_ptr<NounExtractor> extractor;
  if (a.assoc == "strong") extractor = make_extractor(run, a.table);
  run.cfg().refinement.validate();
  run.arg("rounds", a.rounds);
  run.arg("assoc", a.assoc);
  run.seal();

  auto samples = io::read_samples(samples_path);
  auto base = io::read_instructions(base_path);
  const int first = refinery::last_round(base) + 1;
  if (run.dry_run()) {
    const auto n = static_cast<std::size_t>(run.cfg().refinement.n);
    run.out() << "plan: refine " << samples.size() << " samples, rounds " << first << ".." << first + a.rounds - 1
              << ", n=" << n << ", rho=" << run.cfg().refinement.rho << ", assoc=" << a.assoc << "; up to "
              << samples.size() * static_cast<std::size_t>(a.rounds) * (n + 2)
              << " backend calls; no backend calls made\n";
    return 0;
  }
  auto ns = load_noun_set(nouns_path);
  auto params = run.cfg().refinement;
  params.seed = run.cfg().seed;
  refinery::RefineOptions opt;
  opt.rounds = a.rounds;
  opt.max_inflight = run.cfg().backend.max_inflight;
  if (extractor) {
    auto providers = forge::backend_providers(run.gateway(), {});
    opt.strong_conditions = [providers, extractor](const OogiriSample& s) {
      NounSet local;
      if (!extractor->supports(s.lang)) return local;
      try {
        for (const auto& n : extractor->extract(providers.caption(s), s.lang)) local.insert(s.lang, n);
      } catch (const std::exception&) {
      }
      return local;
    };
  }
  auto out = refinery::refine_corpus(samples, ns, params, run.gateway(), base, opt);
  run.write_jsonl("refined_instructions.jsonl", io::kInstructionsSchema, io::to_rows(out.merged));
  std::vector<Json> outcomes;
  for (const auto& o : out.outcomes) outcomes.push_back(refinery::to_json(o));
  run.write_jsonl("refine_outcomes.jsonl", io::kOutcomeSchema, outcomes);
  run.write_json("refine_report.json", refinery::to_json(out.stats));
  run.write_manifest();
  run.out() << "refined " << out.stats.samples << " sample-rounds: " << out.stats.emitted << " emitted, "
            << out.stats.discarded_gtr << " discarded (GTR), " << out.stats.discarded_degenerate
            << " degenerate; merged corpus " << out.merged.size() << " records\n";
  return 0;
}

struct InferArgs {
  std::string text_value;
  std::string image;
  std::string lang = "EN";
  std::string trace;
};

inline int cmd_infer(Run& run, const InferArgs& a) {
  if (a.text_value.empty() && a.image.empty()) throw ArgumentError("infer needs --text, --image or both");
  OogiriSample q;
  q.id = "query";
  q.lang = Language::parse(a.lang);
  if (!a.image.empty()) q.image_ref = a.image;
  if (!a.text_value.empty()) q.question_text = a.text_value;
  q.task = a.image.empty() ? TaskType::T2T : (a.text_value.empty() ? TaskType::I2T : TaskType::IT2T);
  std::optional<fs::path> nouns_path;
  if (!run.cfg().nouns.empty()) {
    nouns_path = run.input(run.cfg().nouns, "--nouns");
  } else {
    nouns_path = run.input(run.cfg().lexicons, "--lexicons");
  }
  run.arg("text", a.text_value);
  run.arg("image", a.image);
  run.arg("lang", a.lang);
  run.seal();
  const auto n = run.cfg().refinement.n;
  if (run.dry_run()) {
    run.out() << "plan: infer " << to_string(q.task) << " query with n=" << n << "; up to " << n + 2
              << " backend calls; no backend calls made\n";
    return 0;
  }
  auto ns = load_noun_set(*nouns_path);
  auto params = run.cfg().refinement;
  params.seed = run.cfg().seed;
  auto rng = Rng::derive(run.cfg().seed, "infer", 0);
  auto result = refinery::clot_infer(q, ns, params, run.gateway(), rng);
  auto trace = refinery::to_json(result);
  trace["run"] = run.run_hash();
  io::write_file(a.trace.empty() ? run.output("infer_trace.json") : fs::path(a.trace), trace.dump(2) + "\n");
  run.write_manifest();
  run.out() << result.best << '\n';
  if (result.degraded) run.warn("degraded result: " + result.degraded_reason);
  return 0;
}

struct EvalArgs {
  std::string questions;
  std::string choice;
  std::string ranking;
  std::string report;
  int reask = 0;
};

inline int cmd_eval(Run& run, const EvalArgs& a) {
  std::optional<fs::path> choice_path, ranking_path;
  if (!a.questions.empty()) {
    // Only the question files are inputs; the directory may also hold outputs.
    fs::path dir(a.questions);
    if (!fs::is_directory(dir)) throw ArgumentError("input not found: " + dir.string() + " (--questions)");
    if (fs::exists(dir / "choice_questions.jsonl")) choice_path = run.input((dir / "choice_questions.jsonl").string(), "--questions");
    if (fs::exists(dir / "ranking_questions.jsonl")) ranking_path = run.input((dir / "ranking_questions.jsonl").string(), "--questions");
    if (!choice_path && !ranking_path) throw ArgumentError("no question files in " + dir.string());
  }
  if (!a.choice.empty()) choice_path = run.input(a.choice, "--choice");
  if (!a.ranking.empty()) ranking_path = run.input(a.ranking, "--ranking");
  if (!choice_path && !ranking_path) throw ArgumentError("eval needs --questions, --choice or --ranking");
  if (a.reask < 0) throw ArgumentError("--reask must be non-negative");
  run.arg("reask", a.reask);
  run.seal();

  std::vector<ChoiceQuestion> choices;
  if (choice_path) {
    auto wanted = run.cfg().variants;
    for (auto& q : io::read_choice_questions(*choice_path)) {
      auto name = ChoiceVariant{q.m, q.n}.name();
      if (std::find(wanted.begin(), wanted.end(), name) != wanted.end()) choices.push_back(std::move(q));
    }
  }
  std::vector<RankingQuestion> rankings;
  if (ranking_path) rankings = io::read_ranking_questions(*ranking_path);
  if (run.dry_run()) {
    run.out() << "plan: evaluate " << choices.size() << " choice and " << rankings.size()
              << " ranking questions; no backend calls made\n";
    return 0;
  }
  run.script_gold(choices, rankings);
  eval::EvalOptions opt;
  opt.max_inflight = run.cfg().backend.max_inflight;
  opt.reask = a.reask;
  opt.decode = run.decode(DecodeSettings::discrimination());
  opt.seed = run.cfg().seed;
  opt.timestamp = run_timestamp();
  auto report = eval::run_eval(choices, rankings, run.gateway(), opt);
  auto table = eval::render_table(report);
  if (a.report.empty()) {
    run.write_json("eval_report.json", eval::to_json(report));
  } else {
    auto j = eval::to_json(report);
    j["run"] = run.run_hash();
    io::write_file(a.report, j.dump(2) + "\n");
  }
  io::write_file(run.output("eval_table.txt"), table);
  run.write_jsonl("eval_answers.jsonl", "clot.eval_answers", io::to_rows(report.answers));
  run.write_manifest();
  run.out() << table;
  return 0;
}

struct DatArgs {
  std::string spec;
  std::size_t random = 0;
  std::string pool;
  std::size_t word_count = 9;
  std::size_t option_count = 4;
  std::string questions;
  double scale = 1.0;
};

inline int cmd_dat_build(Run& run, const DatArgs& a) {
  auto emb_path = run.input(run.cfg().embeddings, "--embeddings");
  std::optional<fs::path> spec_path, pool_path;
  if (!a.spec.empty()) spec_path = run.input(a.spec, "--spec");
  if (a.random > 0) pool_path = run.input(a.pool, "--pool");
  if (!spec_path && !pool_path) throw ArgumentError("dat build needs --spec or --random with --pool");
  run.arg("random", a.random);
  run.arg("word_count", a.word_count);
  run.arg("option_count", a.option_count);
  run.seal();
  if (run.dry_run()) {
    run.out() << "plan: build DAT questions; no backend calls\n";
    return 0;
  }
  auto loaded = side::load_embeddings(emb_path);
  for (const auto& w : loaded.warnings) run.warn(w);
  std::vector<ChoiceQuestion> qs;
  if (spec_path) {
    std::size_t i = 0;
    for (const auto& row : io::read_jsonl(*spec_path).rows) {
      auto id = row.contains("id") ? row.at("id").get<std::string>() : "dat/spec/" + std::to_string(i);
      qs.push_back(side::make_dat_question(id, clot::detail::require(row, "words").get<std::vector<std::string>>(),
                                          clot::detail::require(row, "options").get<std::vector<std::string>>(), loaded.table));
      ++i;
    }
  }
  if (pool_path) {
    auto rng = Rng::derive(run.cfg().seed, "dat/build", 0);
    auto more = side::build_dat_random(io::read_word_list(*pool_path), loaded.table, a.random, rng, a.word_count,
                                       a.option_count);
    qs.insert(qs.end(), more.begin(), more.end());
  }
  run.write_jsonl("dat_questions.jsonl", io::kChoiceSchema, io::to_rows(qs));
  run.write_manifest();
  run.out() << "built " << qs.size() << " DAT questions\n";
  return 0;
}

inline int cmd_dat_score(Run& run, const DatArgs& a) {
  auto emb_path = run.input(run.cfg().embeddings, "--embeddings");
  auto q_path = run.input(a.questions, "--questions");
  run.arg("scale", a.scale);
  run.seal();
  auto qs = io::read_choice_questions(q_path);
  if (run.dry_run()) {
    run.out() << "plan: score " << qs.size() << " DAT questions; no backend calls made\n";
    return 0;
  }
  auto loaded = side::load_embeddings(emb_path);
  run.script_gold(qs, {});
  auto& gw = run.gateway();
  std::vector<ParsedChoice> answers(qs.size());
  std::vector<eval::AnswerLog> logs(qs.size());
  parallel_for(qs.size(), run.cfg().backend.max_inflight, [&](std::size_t i) {
    ChatRequest req;
    req.prompt = qs[i].stem;
    req.decode = run.decode(DecodeSettings::discrimination());
    logs[i].question_id = qs[i].id;
    logs[i].kind = "dat";
    answers[i] = {{}, "", ParseConfidence::failed};
    try {
      logs[i].reply = gw.complete(req);
      answers[i] = parse_choice(logs[i].reply, first_labels(qs[i].options.size()), 1);
    } catch (const std::exception& e) {
      logs[i].error = e.what();
    }
    logs[i].parsed = labels_string(answers[i].labels);
    logs[i].confidence = std::string(to_string(answers[i].confidence));
    logs[i].correct = answers[i].confidence != ParseConfidence::failed && answers[i].labels == qs[i].gold;
  });
  auto score = side::score_dat(qs, answers, loaded.table, a.scale);
  for (const auto& w : score.warnings) run.warn(w);
  run.write_json("dat_report.json", side::to_json(score));
  run.write_jsonl("dat_answers.jsonl", "clot.eval_answers", io::to_rows(logs));
  run.write_manifest();
  run.out() << "DAT accuracy " << (score.accuracy ? eval::percent(*score.accuracy) : std::string("-"))
            << "%, mean ASD " << (score.mean_asd ? std::to_string(*score.mean_asd) : std::string("-")) << '\n';
  return 0;
}

struct CggArgs {
  std::string labels;
  int per_image = 3;
};

inline int cmd_cgg_build(Run& run, const CggArgs& a) {
  auto labels_path = run.input(a.labels, "--labels");
  auto distractors_path = run.input(run.cfg().distractors, "--distractors");
  if (a.per_image < 1) throw ArgumentError("--per-image must be positive");
  run.arg("per_image", a.per_image);
  run.seal();
  if (run.dry_run()) {
    run.out() << "plan: build CGG questions; no backend calls\n";
    return 0;
  }
  auto images = side::read_cgg_labels(labels_path);
  auto rng = Rng::derive(run.cfg().seed, "cgg/build", 0);
  auto qs = side::build_cgg(images, io::read_word_list(distractors_path), rng, a.per_image);
  run.write_jsonl("cgg_questions.jsonl", io::kChoiceSchema, io::to_rows(qs));
  run.write_manifest();
  run.out() << "built " << qs.size() << " CGG questions for " << images.size() << " images\n";
  return 0;
}

/// Rebuilds the text table from a structured eval report.
inline eval::EvalReport report_from_json(const Json& j) {
  eval::EvalReport r;
  const auto& meta = clot::detail::require(j, "metadata");
  r.backend = meta.value("backend", "");
  r.model = meta.value("model", "");
  r.timestamp = meta.value("timestamp", "");
  for (const auto& gj : clot::detail::require(j, "groups")) {
    eval::GroupReport g;
    g.task = parse_task(clot::detail::require_string(gj, "task"));
    g.lang = Language::parse(clot::detail::require_string(gj, "lang"));
    for (const auto& [name, v] : clot::detail::require(gj, "variants").items()) {
      eval::VariantScore s;
      s.correct = v.at("correct").get<std::size_t>();
      s.answered = v.at("answered").get<std::size_t>();
      s.failed = v.at("failed").get<std::size_t>();
      s.total = v.at("total").get<std::size_t>();
      g.variants[name] = s;
    }
    if (gj.contains("rank") && !gj.at("rank").is_null()) {
      const auto& rk = gj.at("rank");
      eval::RankScore s;
      s.total = rk.at("total").get<std::size_t>();
      s.answered = rk.at("answered").get<std::size_t>();
      s.failed = rk.at("failed").get<std::size_t>();
      s.ndcg_sum = rk.at("ndcg").get<double>() * static_cast<double>(s.total);
      s.top1 = static_cast<std::size_t>(std::llround(rk.at("top1").get<double>() * static_cast<double>(s.total)));
      g.rank = s;
    }
    r.groups.push_back(std::move(g));
  }
  return r;
}

inline int cmd_report(Run& run, const std::string& path) {
  auto p = run.input(path, "--input");
  run.seal();
  Json j;
  try {
    j = Json::parse(io::read_file(p));
  } catch (const Json::parse_error& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
  run.out() << eval::render_table(report_from_json(j));
  return 0;
}

// ---------------------------------------------------------------------------
// Entry point

/// Parses arguments and runs one subcommand. Returns 0 on success, 1 on a
/// module error and 2 on a usage error.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"CLoT toolkit: creative response data formulation, self-refinement and evaluation", "clot"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(CLOT_VERSION));

  std::string config_path;
  std::uint64_t seed = 0;
  std::string out_dir, samples, lexicons, nouns, embeddings, labels, distractors;
  std::string backend, transcript, base_url, model, request_log;
  std::uint64_t mock_seed = 0;
  std::size_t max_inflight = 4;
  int retries = 3, n = 5, max_tokens = 256;
  double rho = 0.5, rho_c = 0.5, mask_prob = 0.5;
  std::vector<std::string> variants;
  bool dry_run = false, oracle = false, text_only = false;

  std::vector<std::pair<CLI::Option*, std::function<void(PipelineConfig&)>>> overrides;
  auto over = [&](CLI::Option* o, std::function<void(PipelineConfig&)> f) { overrides.emplace_back(o, std::move(f)); };

  app.add_option("--config", config_path, "JSON config file (flags override its values)")->check(CLI::ExistingFile);
  over(app.add_option("--seed", seed, "Pipeline seed"), [&](PipelineConfig& c) { c.seed = seed; });
  over(app.add_option("--out", out_dir, "Output directory"), [&](PipelineConfig& c) { c.out_dir = out_dir; });
  over(app.add_option("--samples", samples, "Sample file"), [&](PipelineConfig& c) { c.samples = samples; });
  over(app.add_option("--lexicons", lexicons, "Noun lexicon directory"), [&](PipelineConfig& c) { c.lexicons = lexicons; });
  over(app.add_option("--nouns", nouns, "Noun set directory"), [&](PipelineConfig& c) { c.nouns = nouns; });
  over(app.add_option("--embeddings", embeddings, "Word embedding file"),
       [&](PipelineConfig& c) { c.embeddings = embeddings; });
  over(app.add_option("--labels", labels, "Safety label file (screen) or CGG label file (cgg)"),
       [&](PipelineConfig& c) { c.labels = labels; });
  over(app.add_option("--distractors", distractors, "CGG distractor word list"),
       [&](PipelineConfig& c) { c.distractors = distractors; });
  over(app.add_option("--backend", backend, "mock or remote"), [&](PipelineConfig& c) { c.backend.kind = backend; });
  over(app.add_option("--mock-seed", mock_seed, "Mock backend seed (defaults to --seed)"),
       [&](PipelineConfig& c) { c.backend.mock_seed = mock_seed; });
  over(app.add_option("--transcript", transcript, "Mock transcript file"),
       [&](PipelineConfig& c) { c.backend.transcript = transcript; });
  over(app.add_flag("--oracle", oracle, "Mock answers every question with its gold"),
       [&](PipelineConfig& c) { c.backend.oracle = oracle; });
  over(app.add_flag("--text-only", text_only, "Treat the backend as having no vision support"),
       [&](PipelineConfig& c) { c.backend.supports_images = !text_only; });
  over(app.add_option("--base-url", base_url, "Remote API base URL"), [&](PipelineConfig& c) { c.backend.base_url = base_url; });
  over(app.add_option("--model", model, "Model name"), [&](PipelineConfig& c) { c.backend.model = model; });
  over(app.add_option("--max-inflight", max_inflight, "Concurrent backend requests"),
       [&](PipelineConfig& c) { c.backend.max_inflight = max_inflight; });
  over(app.add_option("--retries", retries, "Retries after a transport failure"),
       [&](PipelineConfig& c) { c.backend.retries = retries; });
  over(app.add_option("--max-tokens", max_tokens, "Reply token limit"),
       [&](PipelineConfig& c) { c.backend.max_tokens = max_tokens; });
  over(app.add_option("--request-log", request_log, "Append one line per backend request to this file"),
       [&](PipelineConfig& c) { c.backend.request_log = request_log; });
  over(app.add_option("--n", n, "Candidates per sample"), [&](PipelineConfig& c) { c.refinement.n = n; });
  over(app.add_option("--rho", rho, "Probability of an empty condition"), [&](PipelineConfig& c) { c.refinement.rho = rho; });
  over(app.add_option("--rho-c", rho_c, "Probability of an unconditioned generation record"),
       [&](PipelineConfig& c) { c.refinement.rho_c = rho_c; });
  over(app.add_option("--mask-prob", mask_prob, "Probability of a MASK record per sample"),
       [&](PipelineConfig& c) { c.mask_prob = mask_prob; });
  over(app.add_option("--variants", variants, "Choice variants, e.g. 3T1 4T1 5T2")->delimiter(','),
       [&](PipelineConfig& c) { c.variants = variants; });
  app.add_flag("--dry-run", dry_run, "Print the plan without calling the backend or writing outputs");

  IngestArgs ingest_args;
  auto* ingest_cmd = app.add_subcommand("ingest", "Parse a crawl file, group, deduplicate and split");
  ingest_cmd->add_option("--input", ingest_args.input, "Crawl file (one JSON record per line)")->required();
  ingest_cmd->add_option("--lang", ingest_args.lang, "Language hint (EN, CN, JP, ...)");
  ingest_cmd->add_option("--task", ingest_args.task, "Task type of the crawl: I2T, T2T or IT2T");
  ingest_cmd->add_option("--ratio", ingest_args.ratio, "Train fraction");
  ingest_cmd->add_flag("--skip-bad", ingest_args.skip_bad, "Drop malformed lines instead of failing");

  ScreenArgs screen_args;
  auto* screen_cmd = app.add_subcommand("screen", "Safety screening with the backend");
  screen_cmd->add_option("--deny-ids", screen_args.deny_ids, "Sample ids flagged by manual review");
  screen_cmd->add_option("--allow-ids", screen_args.allow_ids, "Sample ids restored by manual review");

  NounsArgs nouns_args;
  auto* nouns_cmd = app.add_subcommand("nouns", "Build the condition noun set");
  nouns_cmd->add_option("--noun-table", nouns_args.table, "Precomputed extractions (JSON lines)");
  nouns_cmd->add_option("--deny", nouns_args.deny, "Words never to use as conditions");
  nouns_cmd->add_option("--allow", nouns_args.allow, "Words exempt from the deny list");
  nouns_cmd->add_option("--english-min-count", nouns_args.english_min_count,
                        "Also keep English tokens seen at least this often");

  FormulateArgs formulate_args;
  auto* formulate_cmd = app.add_subcommand("formulate", "Emit instruction records and evaluation questions");
  formulate_cmd->add_option("--noun-table", formulate_args.table, "Precomputed extractions (JSON lines)");
  formulate_cmd->add_option("--providers", formulate_args.providers, "Distractor source: backend or none");
  formulate_cmd->add_option("--pool", formulate_args.pool, "Samples providing unrelated answers");

  RefineArgs refine_args;
  auto* refine_cmd = app.add_subcommand("refine", "Explorative self-refinement");
  refine_cmd->add_option("--base", refine_args.base, "Instruction file to extend")->required();
  refine_cmd->add_option("--rounds", refine_args.rounds, "Refinement rounds");
  refine_cmd->add_option("--assoc", refine_args.assoc, "Condition association: weak or strong");
  refine_cmd->add_option("--noun-table", refine_args.table, "Precomputed extractions (JSON lines)");

  InferArgs infer_args;
  auto* infer_cmd = app.add_subcommand("infer", "Answer one query with the CLoT inference procedure");
  infer_cmd->add_option("--text", infer_args.text_value, "Question text");
  infer_cmd->add_option("--image", infer_args.image, "Image reference");
  infer_cmd->add_option("--lang", infer_args.lang, "Query language");
  infer_cmd->add_option("--trace", infer_args.trace, "Trace output path");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "Score a model on choice and ranking questions");
  eval_cmd->add_option("--questions", eval_args.questions, "Directory with choice_questions.jsonl / ranking_questions.jsonl");
  eval_cmd->add_option("--choice", eval_args.choice, "Choice question file");
  eval_cmd->add_option("--ranking", eval_args.ranking, "Ranking question file");
  eval_cmd->add_option("--report", eval_args.report, "Report path");
  eval_cmd->add_option("--reask", eval_args.reask, "Re-ask after a failed parse up to this many times");

  DatArgs dat_args;
  auto* dat_cmd = app.add_subcommand("dat", "Divergent association task");
  dat_cmd->require_subcommand(1);
  auto* dat_build = dat_cmd->add_subcommand("build", "Build DAT choice questions");
  dat_build->add_option("--spec", dat_args.spec, "Question spec file: {\"words\": [...], \"options\": [...]} per line");
  dat_build->add_option("--random", dat_args.random, "Number of random questions");
  dat_build->add_option("--pool", dat_args.pool, "Word pool for random questions");
  dat_build->add_option("--word-count", dat_args.word_count, "Stem words per question");
  dat_build->add_option("--option-count", dat_args.option_count, "Options per question");
  auto* dat_score = dat_cmd->add_subcommand("score", "Ask and score DAT questions");
  dat_score->add_option("--questions", dat_args.questions, "DAT question file")->required();
  dat_score->add_option("--scale", dat_args.scale, "Multiplier for reported distances");

  CggArgs cgg_args;
  auto* cgg_cmd = app.add_subcommand("cgg", "Cloud guessing game");
  cgg_cmd->require_subcommand(1);
  auto* cgg_build = cgg_cmd->add_subcommand("build", "Build CGG choice questions");
  cgg_build->add_option("--images", cgg_args.labels, "Image label file: <image path><TAB><category> per line")->required();
  cgg_build->add_option("--per-image", cgg_args.per_image, "Questions per image");

  std::string report_input;
  auto* report_cmd = app.add_subcommand("report", "Print the table of an eval report");
  report_cmd->add_option("--input", report_input, "Eval report file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    PipelineConfig cfg = config_path.empty() ? PipelineConfig{} : load_config(config_path);
    for (auto& [opt, apply] : overrides) {
      if (opt->count() > 0) apply(cfg);
    }
    std::string name = app.get_subcommands().front()->get_name();
    auto* sub = app.get_subcommands().front();
    if (!sub->get_subcommands().empty()) name += "-" + sub->get_subcommands().front()->get_name();
    Run run(name, cfg, dry_run, out, err);
    if (!cfg.backend.request_log.empty()) run.request_log();

    if (name == "ingest") return cmd_ingest(run, ingest_args);
    if (name == "screen") return cmd_screen(run, screen_args);
    if (name == "nouns") return cmd_nouns(run, nouns_args);
    if (name == "formulate") return cmd_formulate(run, formulate_args);
    if (name == "refine") return cmd_refine(run, refine_args);
    if (name == "infer") return cmd_infer(run, infer_args);
    if (name == "eval") return cmd_eval(run, eval_args);
    if (name == "dat-build") return cmd_dat_build(run, dat_args);
    if (name == "dat-score") return cmd_dat_score(run, dat_args);
    if (name == "cgg-build") return cmd_cgg_build(run, cgg_args);
    if (name == "report") return cmd_report(run, report_input);
    err << "clot: unknown subcommand " << name << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "clot: error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace clot::cli
