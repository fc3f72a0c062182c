#pragma once

// Corpus ingestion: crawl-record parsing, normalization into samples,
// LLM safety screening, deduplication and the stratified train/test split.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "clot/concurrency.hpp"
#include "clot/core.hpp"
#include "clot/gateway.hpp"
#include "clot/jsonl.hpp"
#include "clot/random.hpp"

namespace clot::ingest {

/// One crawled answer. Answers sharing `pid` belong to the same question.
struct RawCrawlRecord {
  std::string id;
  std::string text;
  std::string attitudes_count;
  std::string created_at;
  std::string pid;
  std::string url;

  bool operator==(const RawCrawlRecord&) const = default;
};

struct LineError {
  std::size_t line = 0;  // 1-based
  std::string reason;
};

struct ParseRawResult {
  std::vector<RawCrawlRecord> records;
  std::vector<LineError> errors;
};

inline Json to_json(const RawCrawlRecord& r) {
  Json pics;
  pics["pid"] = r.pid;
  pics["url"] = r.url;
  Json j;
  j["id"] = r.id;
  j["text"] = r.text;
  j["attitudes_count"] = r.attitudes_count;
  j["created_at"] = r.created_at;
  j["pics"] = std::move(pics);
  return j;
}

inline std::string serialize_raw(const std::vector<RawCrawlRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    out += io::dump_line(to_json(r));
    out += '\n';
  }
  return out;
}

namespace detail {

inline std::string crawl_string(const Json& j, const char* key) {
  if (!j.contains(key)) throw FormatError(std::string("missing field ") + key);
  const auto& v = j.at(key);
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<std::int64_t>());
  throw FormatError(std::string("field ") + key + " must be a string");
}

inline RawCrawlRecord crawl_record(const Json& j) {
  if (!j.is_object()) throw FormatError("record must be an object");
  static const std::set<std::string> fields{"id", "text", "attitudes_count", "created_at", "pics"};
  for (const auto& [k, v] : j.items()) {
    if (!fields.count(k)) throw FormatError("unexpected field " + k);
  }
  RawCrawlRecord r;
  r.id = crawl_string(j, "id");
  r.text = crawl_string(j, "text");
  r.attitudes_count = crawl_string(j, "attitudes_count");
  r.created_at = crawl_string(j, "created_at");
  if (!j.contains("pics")) throw FormatError("missing field pics");
  const auto& pics = j.at("pics");
  if (!pics.is_object()) throw FormatError("field pics must be an object");
  r.pid = crawl_string(pics, "pid");
  r.url = crawl_string(pics, "url");
  return r;
}

}  // namespace detail

/// Parses line-delimited crawl records. Bad lines are reported with their
/// line number and skipped; blank lines are ignored.
inline ParseRawResult parse_raw(std::string_view content) {
  ParseRawResult out;
  std::size_t lineno = 0;
  for (const auto& line : io::split_lines(content)) {
    ++lineno;
    if (text::trim_view(line).empty()) continue;
    try {
      out.records.push_back(detail::crawl_record(Json::parse(line)));
    } catch (const Json::parse_error& e) {
      out.errors.push_back({lineno, std::string("malformed JSON: ") + e.what()});
    } catch (const std::exception& e) {
      out.errors.push_back({lineno, e.what()});
    }
  }
  return out;
}

/// Like counts arrive as display strings ("1,234"). Digit-group separators
/// are accepted; anything else (including a sign) is rejected.
inline std::optional<std::int64_t> parse_likes(std::string_view s) {
  auto t = text::trim_view(s);
  if (t.empty()) return std::nullopt;
  std::int64_t v = 0;
  bool any_digit = false;
  for (std::size_t i = 0; i < t.size(); ++i) {
    char c = t[i];
    if (text::is_ascii_digit(static_cast<unsigned char>(c))) {
      if (v > (INT64_MAX - 9) / 10) return std::nullopt;
      v = v * 10 + (c - '0');
      any_digit = true;
    } else if ((c == ',' || c == '_' || c == '\'' || c == ' ') && any_digit && i + 1 < t.size() &&
               text::is_ascii_digit(static_cast<unsigned char>(t[i + 1]))) {
      continue;
    } else {
      return std::nullopt;
    }
  }
  return any_digit ? std::optional<std::int64_t>(v) : std::nullopt;
}

/// Script heuristic: CJK-dominant text is JP when any kana is present,
/// otherwise CN; everything else is EN.
inline Language detect_language(std::string_view s) {
  std::size_t latin = 0, han = 0, kana = 0;
  for (char32_t cp : text::utf8_decode(s)) {
    switch (text::classify(cp)) {
      case text::Script::Latin: ++latin; break;
      case text::Script::Han: ++han; break;
      case text::Script::Kana: ++kana; break;
      case text::Script::Other: break;
    }
  }
  if (han + kana > latin) return kana > 0 ? Language::JP() : Language::CN();
  return Language::EN();
}

struct NormalizeResult {
  std::vector<OogiriSample> samples;
  std::vector<std::string> warnings;
};

/// Groups records by question id (pics.pid), in order of first appearance.
/// Responses keep input order. Unparseable likes become absent.
inline NormalizeResult normalize(const std::vector<RawCrawlRecord>& records, std::optional<Language> lang_hint = {},
                                 TaskType task = TaskType::I2T) {
  NormalizeResult out;
  std::unordered_map<std::string, std::size_t> index;
  for (const auto& r : records) {
    auto [it, fresh] = index.try_emplace(r.pid, out.samples.size());
    if (fresh) {
      OogiriSample s;
      s.id = r.pid;
      s.task = task;
      if (!r.url.empty()) s.image_ref = r.url;
      if (!r.created_at.empty()) s.created_at = r.created_at;
      out.samples.push_back(std::move(s));
    }
    auto& s = out.samples[it->second];
    if (!s.image_ref && !r.url.empty()) s.image_ref = r.url;
    Response resp;
    resp.text = r.text;
    resp.likes = parse_likes(r.attitudes_count);
    if (!resp.likes) {
      out.warnings.push_back("record " + r.id + ": unparseable likes '" + r.attitudes_count + "'");
    }
    s.responses.push_back(std::move(resp));
  }
  for (auto& s : out.samples) {
    if (lang_hint) {
      s.lang = *lang_hint;
      continue;
    }
    std::string all;
    if (s.question_text) all += *s.question_text;
    for (const auto& r : s.responses) all += r.text;
    s.lang = detect_language(all);
  }
  return out;
}

struct DedupReport {
  std::size_t merged_samples = 0;
  std::size_t removed_responses = 0;
};

/// Merges samples sharing an id and drops responses whose trimmed text
/// repeats an earlier response of the same sample.
inline std::vector<OogiriSample> deduplicate(const std::vector<OogiriSample>& samples, DedupReport* report = nullptr) {
  std::vector<OogiriSample> out;
  std::unordered_map<std::string, std::size_t> index;
  DedupReport rep;
  for (const auto& s : samples) {
    auto [it, fresh] = index.try_emplace(s.id, out.size());
    if (fresh) {
      out.push_back(s);
      out.back().responses.clear();
    } else {
      ++rep.merged_samples;
    }
    auto& dst = out[it->second];
    for (const auto& r : s.responses) {
      auto key = text::trim_view(r.text);
      bool dup = std::any_of(dst.responses.begin(), dst.responses.end(),
                             [&](const Response& e) { return text::trim_view(e.text) == key; });
      if (dup) {
        ++rep.removed_responses;
      } else {
        dst.responses.push_back(r);
      }
    }
  }
  if (report) *report = rep;
  return out;
}

// ---------------------------------------------------------------------------
// Safety screening

inline std::string render_safety_prompt(std::string_view label, std::string_view body) {
  auto l = text::trim(label);
  if (l.empty()) throw ArgumentError("safety prompt: empty label");
  if (text::trim_view(body).empty()) throw ArgumentError("safety prompt: empty text");
  return "Does the image or text contain content related to " + l +
         "? Or the combination of image and text shows the metaphor related to " + l +
         "? If so, kindly respond with \"Yes\"; otherwise, respond with \"No.\"\n\nHere is the text: " +
         std::string(body);
}

/// Text screened for a sample: the question (if any) then each response on
/// its own line.
inline std::string screening_text(const OogiriSample& s) {
  std::vector<std::string> parts;
  if (s.question_text && !text::trim_view(*s.question_text).empty()) parts.push_back(*s.question_text);
  for (const auto& r : s.responses) parts.push_back(r.text);
  return text::join(parts, "\n");
}

/// First whitespace token, stripped of surrounding punctuation, equals "yes".
inline bool is_yes(std::string_view reply) {
  auto tokens = text::split_whitespace(reply);
  if (tokens.empty()) return false;
  std::string_view t = tokens.front();
  while (!t.empty() && !text::is_ascii_alpha(static_cast<unsigned char>(t.front()))) t.remove_prefix(1);
  while (!t.empty() && !text::is_ascii_alpha(static_cast<unsigned char>(t.back()))) t.remove_suffix(1);
  return text::ascii_lower(t) == "yes";
}

struct ScreenVerdict {
  std::string sample_id;
  std::string label;
  std::string reply;  // empty on failure
  std::string verdict;  // "yes", "no" or "error: ..."
};

inline Json to_json(const ScreenVerdict& v) {
  Json j;
  j["sample_id"] = v.sample_id;
  j["label"] = v.label;
  j["reply"] = v.reply;
  j["verdict"] = v.verdict;
  return j;
}

struct FlaggedSample {
  OogiriSample sample;
  std::vector<std::string> labels;
};

struct ScreenResult {
  std::vector<OogiriSample> kept;
  std::vector<FlaggedSample> flagged;
  std::vector<OogiriSample> retry;
  std::vector<ScreenVerdict> log;
};

/// Asks the backend one safety question per (sample, label). A sample is
/// flagged if any reply starts with "yes"; a sample whose request fails past
/// the gateway's retry budget goes to the retry bucket, never to kept.
/// Output order follows input order.
inline ScreenResult screen(const std::vector<OogiriSample>& samples, const std::vector<std::string>& labels,
                           Gateway& gateway, std::size_t max_inflight = 4) {
  struct PerSample {
    std::vector<ScreenVerdict> verdicts;
    std::vector<std::string> hits;
    bool failed = false;
  };
  std::vector<std::string> clean_labels;
  for (const auto& l : labels) {
    auto t = text::trim(l);
    if (!t.empty()) clean_labels.push_back(std::move(t));
  }
  std::vector<PerSample> results(samples.size());
  parallel_for(samples.size(), max_inflight, [&](std::size_t i) {
    const auto& s = samples[i];
    auto body = screening_text(s);
    auto& res = results[i];
    for (const auto& label : clean_labels) {
      ChatRequest req;
      req.prompt = render_safety_prompt(label, body);
      if (s.image_ref && gateway.backend().supports_images()) req.image_ref = s.image_ref;
      req.decode = DecodeSettings::discrimination();
      try {
        auto reply = gateway.complete(req);
        bool yes = is_yes(reply);
        res.verdicts.push_back({s.id, label, reply, yes ? "yes" : "no"});
        if (yes) res.hits.push_back(label);
      } catch (const std::exception& e) {
        res.verdicts.push_back({s.id, label, "", std::string("error: ") + e.what()});
        res.failed = true;
      }
    }
  });
  ScreenResult out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    auto& r = results[i];
    for (auto& v : r.verdicts) out.log.push_back(std::move(v));
    if (!r.hits.empty()) {
      out.flagged.push_back({samples[i], r.hits});
    } else if (r.failed) {
      out.retry.push_back(samples[i]);
    } else {
      out.kept.push_back(samples[i]);
    }
  }
  return out;
}

/// Manual screening outcome: ids on the deny list leave `kept` for
/// `flagged` (label "manual"); ids on the allow list are restored to `kept`.
inline void apply_manual_lists(ScreenResult& r, const std::vector<std::string>& deny_ids,
                               const std::vector<std::string>& allow_ids) {
  std::set<std::string> deny(deny_ids.begin(), deny_ids.end());
  std::set<std::string> allow(allow_ids.begin(), allow_ids.end());
  std::vector<OogiriSample> kept;
  for (auto& s : r.kept) {
    if (deny.count(s.id) && !allow.count(s.id)) {
      r.flagged.push_back({std::move(s), {"manual"}});
    } else {
      kept.push_back(std::move(s));
    }
  }
  std::vector<FlaggedSample> flagged;
  for (auto& f : r.flagged) {
    if (allow.count(f.sample.id)) {
      kept.push_back(std::move(f.sample));
    } else {
      flagged.push_back(std::move(f));
    }
  }
  r.kept = std::move(kept);
  r.flagged = std::move(flagged);
}

// ---------------------------------------------------------------------------
// Train/test split

struct StratumCount {
  TaskType task;
  Language lang;
  std::size_t train = 0;
  std::size_t test = 0;
};

struct SplitManifest {
  std::uint64_t seed = 0;
  double ratio = 0.95;
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  std::vector<StratumCount> strata;
  std::vector<std::string> warnings;
};

inline Json to_json(const SplitManifest& m) {
  Json j;
  j["seed"] = m.seed;
  j["ratio"] = m.ratio;
  Json strata = Json::array();
  for (const auto& s : m.strata) {
    strata.push_back(Json{{"task", std::string(to_string(s.task))}, {"lang", s.lang.code()}, {"train", s.train}, {"test", s.test}});
  }
  j["strata"] = std::move(strata);
  j["train_ids"] = m.train_ids;
  j["test_ids"] = m.test_ids;
  return j;
}

inline SplitManifest split_manifest_from_json(const Json& j) {
  SplitManifest m;
  m.seed = j.at("seed").get<std::uint64_t>();
  m.ratio = j.at("ratio").get<double>();
  for (const auto& s : j.at("strata")) {
    m.strata.push_back({parse_task(s.at("task").get<std::string>()), Language::parse(s.at("lang").get<std::string>()),
                        s.at("train").get<std::size_t>(), s.at("test").get<std::size_t>()});
  }
  m.train_ids = j.at("train_ids").get<std::vector<std::string>>();
  m.test_ids = j.at("test_ids").get<std::vector<std::string>>();
  return m;
}

/// Stratified by (task, language): each stratum keeps round(ratio * size)
/// samples for training, chosen by a seeded shuffle. Id lists keep input
/// order. A stratum of one sample goes to train with a warning.
inline SplitManifest split(const std::vector<OogiriSample>& samples, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw ArgumentError("split ratio must lie in (0,1]");
  SplitManifest m;
  m.seed = seed;
  m.ratio = ratio;
  std::map<std::pair<TaskType, Language>, std::vector<std::size_t>> strata;
  for (std::size_t i = 0; i < samples.size(); ++i) strata[{samples[i].task, samples[i].lang}].push_back(i);
  std::vector<bool> is_test(samples.size(), false);
  for (auto& [key, members] : strata) {
    StratumCount count{key.first, key.second, 0, 0};
    const std::size_t n = members.size();
    auto train_n = static_cast<std::size_t>(std::llround(ratio * static_cast<double>(n)));
    if (n == 1) {
      train_n = 1;
      m.warnings.push_back("stratum " + std::string(to_string(key.first)) + "/" + key.second.code() +
                           " has a single sample; assigned to train");
    }
    auto rng = Rng::derive(seed, "split/" + std::string(to_string(key.first)) + "/" + key.second.code());
    auto order = members;
    rng.shuffle(order);
    for (std::size_t k = train_n; k < n; ++k) is_test[order[k]] = true;
    count.train = train_n;
    count.test = n - train_n;
    m.strata.push_back(count);
  }
  for (std::size_t i = 0; i < samples.size(); ++i) (is_test[i] ? m.test_ids : m.train_ids).push_back(samples[i].id);
  return m;
}

/// Samples whose ids are in `ids`, in corpus order.
inline std::vector<OogiriSample> select_ids(const std::vector<OogiriSample>& samples, const std::vector<std::string>& ids) {
  std::set<std::string> want(ids.begin(), ids.end());
  std::vector<OogiriSample> out;
  for (const auto& s : samples) {
    if (want.count(s.id)) out.push_back(s);
  }
  return out;
}

}  // namespace clot::ingest
