#pragma once

// Shared domain types for the CLoT toolkit and their canonical JSON forms.
// All types are plain values; nothing here holds hidden state.

#include <algorithm>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "clot/text.hpp"

namespace clot {

using Json = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Errors

/// Precondition or argument violation.
struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Malformed input data (files, records).
struct FormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Backend could not be reached or kept failing past the retry budget.
struct TransportError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Request needs a capability the backend lacks (e.g. images on a text model).
struct CapabilityError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Task and language tags

enum class TaskType { I2T, T2T, IT2T };

inline std::string_view to_string(TaskType t) {
  switch (t) {
    case TaskType::I2T: return "I2T";
    case TaskType::T2T: return "T2T";
    case TaskType::IT2T: return "IT2T";
  }
  return "?";
}

inline TaskType parse_task(std::string_view s) {
  auto u = text::ascii_upper(text::trim_view(s));
  if (u == "I2T") return TaskType::I2T;
  if (u == "T2T") return TaskType::T2T;
  if (u == "IT2T") return TaskType::IT2T;
  throw ArgumentError("unknown task type '" + std::string(s) + "'");
}

/// Language tag. EN, CN and JP are the corpus languages; any other
/// non-empty tag is kept verbatim (upper-cased) as an extension.
class Language {
 public:
  Language() = default;
  static Language EN() { return Language("EN"); }
  static Language CN() { return Language("CN"); }
  static Language JP() { return Language("JP"); }

  static Language parse(std::string_view s) {
    auto u = text::ascii_upper(text::trim_view(s));
    if (u.empty()) throw ArgumentError("empty language tag");
    if (u == "ZH") return CN();
    if (u == "JA") return JP();
    return Language(std::move(u));
  }

  const std::string& code() const { return code_; }
  bool empty() const { return code_.empty(); }
  bool is_known() const { return code_ == "EN" || code_ == "CN" || code_ == "JP"; }

  auto operator<=>(const Language&) const = default;

 private:
  explicit Language(std::string code) : code_(std::move(code)) {}
  std::string code_;
};

// ---------------------------------------------------------------------------
// Corpus samples

struct Response {
  std::string text;
  std::optional<std::int64_t> likes;

  bool operator==(const Response&) const = default;
};

struct OogiriSample {
  std::string id;
  TaskType task = TaskType::I2T;
  Language lang = Language::EN();
  std::optional<std::string> image_ref;
  std::optional<std::string> question_text;
  std::vector<Response> responses;
  std::optional<std::string> created_at;

  bool operator==(const OogiriSample&) const = default;
};

/// Every violated invariant, in a fixed order. Empty means valid.
inline std::vector<std::string> validate_sample(const OogiriSample& s) {
  std::vector<std::string> v;
  if (text::trim_view(s.id).empty()) v.emplace_back("id must be non-empty");
  if (s.lang.empty()) v.emplace_back("language tag required");
  const bool has_image = s.image_ref && !text::trim_view(*s.image_ref).empty();
  const bool has_question = s.question_text && !text::trim_view(*s.question_text).empty();
  switch (s.task) {
    case TaskType::I2T:
      if (!has_image) v.emplace_back("I2T requires image");
      break;
    case TaskType::IT2T:
      if (!has_image) v.emplace_back("IT2T requires image");
      break;
    case TaskType::T2T:
      if (!has_question) v.emplace_back("T2T requires question text");
      break;
  }
  if (s.responses.empty()) v.emplace_back("responses must be non-empty");
  for (std::size_t i = 0; i < s.responses.size(); ++i) {
    const auto& r = s.responses[i];
    if (text::trim_view(r.text).empty()) {
      v.push_back("response " + std::to_string(i) + ": text must be non-empty");
    }
    if (r.likes && *r.likes < 0) {
      v.push_back("response " + std::to_string(i) + ": likes must be ≥ 0");
    }
  }
  return v;
}

/// Index of the most-liked response; ties and missing likes resolve to the
/// earliest response. Requires a non-empty response list.
inline std::size_t primary_response_index(const OogiriSample& s) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < s.responses.size(); ++i) {
    auto li = s.responses[i].likes.value_or(-1);
    auto lb = s.responses[best].likes.value_or(-1);
    if (li > lb) best = i;
  }
  return best;
}

// ---------------------------------------------------------------------------
// Instruction records

enum class RecordKind { GEN, GEN_COND, RANK, SELECT, MASK };

inline std::string_view to_string(RecordKind k) {
  switch (k) {
    case RecordKind::GEN: return "GEN";
    case RecordKind::GEN_COND: return "GEN_COND";
    case RecordKind::RANK: return "RANK";
    case RecordKind::SELECT: return "SELECT";
    case RecordKind::MASK: return "MASK";
  }
  return "?";
}

inline RecordKind parse_kind(std::string_view s) {
  if (s == "GEN") return RecordKind::GEN;
  if (s == "GEN_COND") return RecordKind::GEN_COND;
  if (s == "RANK") return RecordKind::RANK;
  if (s == "SELECT") return RecordKind::SELECT;
  if (s == "MASK") return RecordKind::MASK;
  throw FormatError("unknown record kind '" + std::string(s) + "'");
}

struct InstructionRecord {
  std::string id;
  RecordKind kind = RecordKind::GEN;
  std::string prompt;
  std::optional<std::string> condition;
  std::optional<std::string> image_ref;
  std::string target;
  std::map<std::string, std::string> meta;

  bool operator==(const InstructionRecord&) const = default;
};

inline std::vector<std::string> validate_record(const InstructionRecord& r) {
  std::vector<std::string> v;
  const bool has_cond = r.condition && !text::trim_view(*r.condition).empty();
  if (r.kind == RecordKind::GEN_COND && !has_cond) v.emplace_back("GEN_COND requires a condition");
  if (r.kind != RecordKind::GEN_COND && r.condition) v.emplace_back("condition only allowed on GEN_COND");
  if (text::trim_view(r.target).empty()) v.emplace_back("target must be non-empty");
  return v;
}

// ---------------------------------------------------------------------------
// Evaluation questions

/// mTn choice layout: pick `n` answers out of `m` options.
struct ChoiceVariant {
  int m = 3;
  int n = 1;

  auto operator<=>(const ChoiceVariant&) const = default;

  std::string name() const { return std::to_string(m) + "T" + std::to_string(n); }

  static ChoiceVariant parse(std::string_view s) {
    auto u = text::ascii_upper(text::trim_view(s));
    auto t = u.find('T');
    if (t == std::string::npos || t == 0 || t + 1 >= u.size()) {
      throw ArgumentError("bad choice variant '" + std::string(s) + "'");
    }
    ChoiceVariant v;
    try {
      v.m = std::stoi(u.substr(0, t));
      v.n = std::stoi(u.substr(t + 1));
    } catch (const std::exception&) {
      throw ArgumentError("bad choice variant '" + std::string(s) + "'");
    }
    if (v.m < 2 || v.m > 26 || v.n < 1 || v.n >= v.m) {
      throw ArgumentError("bad choice variant '" + std::string(s) + "'");
    }
    return v;
  }

  /// The four evaluation layouts: 2T1, 3T1, 4T1, 5T2.
  bool is_standard() const {
    return (m == 2 && n == 1) || (m == 3 && n == 1) || (m == 4 && n == 1) || (m == 5 && n == 2);
  }
};

inline const std::vector<ChoiceVariant>& standard_variants() {
  static const std::vector<ChoiceVariant> v{{2, 1}, {3, 1}, {4, 1}, {5, 2}};
  return v;
}

inline char option_label(std::size_t i) { return static_cast<char>('A' + i); }

struct ChoiceQuestion {
  std::string id;
  int m = 0;
  int n = 0;
  std::string stem;  // fully rendered prompt
  std::vector<std::string> options;
  std::vector<char> gold;  // sorted labels
  std::string sample_ref;
  TaskType task = TaskType::I2T;
  Language lang = Language::EN();
  std::optional<std::string> image_ref;
  /// permutation[label position] = construction position of that option.
  std::vector<int> permutation;
  /// Extra payload for derived question families (e.g. DAT stem words).
  std::vector<std::string> words;

  bool operator==(const ChoiceQuestion&) const = default;

  ChoiceVariant variant() const { return {m, n}; }
  std::vector<char> labels() const {
    std::vector<char> out;
    for (std::size_t i = 0; i < options.size(); ++i) out.push_back(option_label(i));
    return out;
  }
};

inline std::vector<std::string> validate_question(const ChoiceQuestion& q) {
  std::vector<std::string> v;
  if (q.m < 2 || q.m > 5) v.emplace_back("m must be in [2,5]");
  if (q.n < 1 || q.n > 2) v.emplace_back("n must be 1 or 2");
  if (static_cast<int>(q.options.size()) != q.m) v.emplace_back("option count must equal m");
  if (static_cast<int>(q.gold.size()) != q.n) v.emplace_back("gold size must equal n");
  std::set<char> seen;
  for (char g : q.gold) {
    if (g < 'A' || g >= option_label(q.options.size())) v.push_back(std::string("gold label ") + g + " not an option");
    if (!seen.insert(g).second) v.push_back(std::string("duplicate gold label ") + g);
  }
  return v;
}

struct RankingCandidate {
  std::string text;
  std::int64_t likes = 0;

  bool operator==(const RankingCandidate&) const = default;
};

struct RankingQuestion {
  std::string id;
  std::string stem;  // fully rendered prompt
  std::vector<RankingCandidate> candidates;
  std::vector<std::size_t> gold_order;  // candidate indices, likes descending
  std::string sample_ref;
  TaskType task = TaskType::I2T;
  Language lang = Language::EN();
  std::optional<std::string> image_ref;

  bool operator==(const RankingQuestion&) const = default;
};

inline bool is_permutation_of(const std::vector<std::size_t>& p, std::size_t n) {
  if (p.size() != n) return false;
  std::vector<bool> seen(n, false);
  for (auto i : p) {
    if (i >= n || seen[i]) return false;
    seen[i] = true;
  }
  return true;
}

inline std::vector<std::string> validate_ranking(const RankingQuestion& q) {
  std::vector<std::string> v;
  if (q.candidates.size() != 5) v.emplace_back("ranking needs exactly 5 candidates");
  if (!is_permutation_of(q.gold_order, q.candidates.size())) {
    v.emplace_back("gold_order is not a permutation");
    return v;
  }
  for (std::size_t i = 1; i < q.gold_order.size(); ++i) {
    if (q.candidates[q.gold_order[i]].likes > q.candidates[q.gold_order[i - 1]].likes) {
      v.emplace_back("gold_order likes must be non-increasing");
      break;
    }
  }
  return v;
}

// ---------------------------------------------------------------------------
// Parameters

struct RefinementParams {
  int n = 5;
  double rho = 0.5;
  double rho_c = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 2) throw ArgumentError("n must be ≥ 2");
    if (!(rho > 0.0 && rho < 1.0)) throw ArgumentError("rho must lie in (0,1)");
    if (!(rho_c >= 0.0 && rho_c <= 1.0)) throw ArgumentError("rho_c must lie in [0,1]");
  }
};

// ---------------------------------------------------------------------------
// Noun set

/// Per-language condition nouns plus deny/allow screening lists.
/// Allow entries override deny entries; the effective deny list never
/// intersects the stored nouns.
class NounSet {
 public:
  static std::string normalize(std::string_view word, const Language& lang) {
    auto t = text::trim(word);
    if (lang == Language::EN()) t = text::ascii_lower(t);
    return t;
  }

  void set_lists(const std::vector<std::string>& deny, const std::vector<std::string>& allow) {
    allow_.clear();
    deny_.clear();
    for (const auto& a : allow) {
      auto t = text::ascii_lower(text::trim_view(a));
      if (!t.empty()) allow_.insert(t);
    }
    for (const auto& d : deny) {
      auto t = text::ascii_lower(text::trim_view(d));
      if (!t.empty() && !allow_.count(t)) deny_.insert(t);
    }
    for (auto& [lang, words] : nouns_) {
      std::erase_if(words, [&](const std::string& w) { return is_denied(w); });
    }
  }

  bool is_denied(std::string_view word) const { return deny_.count(text::ascii_lower(word)) > 0; }

  /// Adds a noun; returns false if it was empty, denied or already present.
  bool insert(const Language& lang, std::string_view word) {
    auto w = normalize(word, lang);
    if (w.empty() || is_denied(w)) return false;
    auto& words = nouns_[lang];
    auto it = std::lower_bound(words.begin(), words.end(), w);
    if (it != words.end() && *it == w) return false;
    words.insert(it, std::move(w));
    return true;
  }

  /// Sorted, deduplicated nouns for one language (empty if none).
  const std::vector<std::string>& words(const Language& lang) const {
    static const std::vector<std::string> none;
    auto it = nouns_.find(lang);
    return it == nouns_.end() ? none : it->second;
  }

  bool contains(const Language& lang, std::string_view word) const {
    const auto& w = words(lang);
    return std::binary_search(w.begin(), w.end(), normalize(word, lang));
  }

  std::vector<Language> languages() const {
    std::vector<Language> out;
    for (const auto& [lang, words] : nouns_) {
      if (!words.empty()) out.push_back(lang);
    }
    return out;
  }

  std::size_t size(const Language& lang) const { return words(lang).size(); }
  bool empty() const { return languages().empty(); }
  const std::set<std::string>& deny() const { return deny_; }
  const std::set<std::string>& allow_overrides() const { return allow_; }

  bool operator==(const NounSet&) const = default;

 private:
  std::map<Language, std::vector<std::string>> nouns_;
  std::set<std::string> deny_;
  std::set<std::string> allow_;
};

// ---------------------------------------------------------------------------
// JSON encoding. Key order is fixed so that encode(decode(x)) reproduces
// the canonical bytes.

inline std::string labels_string(const std::vector<char>& labels) { return std::string(labels.begin(), labels.end()); }

inline Json to_json(const Response& r) {
  Json j;
  j["text"] = r.text;
  if (r.likes) j["likes"] = *r.likes;
  return j;
}

inline Json to_json(const OogiriSample& s) {
  Json j;
  j["id"] = s.id;
  j["task"] = to_string(s.task);
  j["lang"] = s.lang.code();
  if (s.image_ref) j["image_ref"] = *s.image_ref;
  if (s.question_text) j["question_text"] = *s.question_text;
  Json rs = Json::array();
  for (const auto& r : s.responses) rs.push_back(to_json(r));
  j["responses"] = std::move(rs);
  if (s.created_at) j["created_at"] = *s.created_at;
  return j;
}

namespace detail {

inline const Json& require(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(std::string("missing field ") + key);
  return j.at(key);
}

inline std::string require_string(const Json& j, const char* key) {
  const auto& v = require(j, key);
  if (!v.is_string()) throw FormatError(std::string("field ") + key + " must be a string");
  return v.get<std::string>();
}

inline std::optional<std::string> optional_string(const Json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  if (!j.at(key).is_string()) throw FormatError(std::string("field ") + key + " must be a string");
  return j.at(key).get<std::string>();
}

}  // namespace detail

inline OogiriSample sample_from_json(const Json& j) {
  OogiriSample s;
  s.id = detail::require_string(j, "id");
  s.task = parse_task(detail::require_string(j, "task"));
  s.lang = Language::parse(detail::require_string(j, "lang"));
  s.image_ref = detail::optional_string(j, "image_ref");
  s.question_text = detail::optional_string(j, "question_text");
  const auto& rs = detail::require(j, "responses");
  if (!rs.is_array()) throw FormatError("field responses must be an array");
  for (const auto& r : rs) {
    Response resp;
    resp.text = detail::require_string(r, "text");
    if (r.contains("likes") && !r.at("likes").is_null()) {
      if (!r.at("likes").is_number_integer()) throw FormatError("likes must be an integer");
      resp.likes = r.at("likes").get<std::int64_t>();
    }
    s.responses.push_back(std::move(resp));
  }
  s.created_at = detail::optional_string(j, "created_at");
  return s;
}

inline Json to_json(const InstructionRecord& r) {
  Json j;
  j["id"] = r.id;
  j["kind"] = to_string(r.kind);
  j["prompt"] = r.prompt;
  if (r.condition) j["condition"] = *r.condition;
  if (r.image_ref) j["image_ref"] = *r.image_ref;
  j["target"] = r.target;
  Json meta = Json::object();
  for (const auto& [k, v] : r.meta) meta[k] = v;
  j["meta"] = std::move(meta);
  return j;
}

inline InstructionRecord record_from_json(const Json& j) {
  InstructionRecord r;
  r.id = detail::require_string(j, "id");
  r.kind = parse_kind(detail::require_string(j, "kind"));
  r.prompt = detail::require_string(j, "prompt");
  r.condition = detail::optional_string(j, "condition");
  r.image_ref = detail::optional_string(j, "image_ref");
  r.target = detail::require_string(j, "target");
  if (j.contains("meta")) {
    for (const auto& [k, v] : j.at("meta").items()) {
      if (!v.is_string()) throw FormatError("meta values must be strings");
      r.meta[k] = v.get<std::string>();
    }
  }
  return r;
}

inline Json to_json(const ChoiceQuestion& q) {
  Json j;
  j["id"] = q.id;
  j["variant"] = q.variant().name();
  j["m"] = q.m;
  j["n"] = q.n;
  j["task"] = to_string(q.task);
  j["lang"] = q.lang.code();
  if (q.image_ref) j["image_ref"] = *q.image_ref;
  j["stem"] = q.stem;
  j["options"] = q.options;
  j["gold"] = labels_string(q.gold);
  j["permutation"] = q.permutation;
  j["sample_ref"] = q.sample_ref;
  if (!q.words.empty()) j["words"] = q.words;
  return j;
}

inline ChoiceQuestion choice_from_json(const Json& j) {
  ChoiceQuestion q;
  q.id = detail::require_string(j, "id");
  q.m = detail::require(j, "m").get<int>();
  q.n = detail::require(j, "n").get<int>();
  q.task = parse_task(detail::require_string(j, "task"));
  q.lang = Language::parse(detail::require_string(j, "lang"));
  q.image_ref = detail::optional_string(j, "image_ref");
  q.stem = detail::require_string(j, "stem");
  q.options = detail::require(j, "options").get<std::vector<std::string>>();
  auto gold = detail::require_string(j, "gold");
  q.gold.assign(gold.begin(), gold.end());
  if (j.contains("permutation")) q.permutation = j.at("permutation").get<std::vector<int>>();
  q.sample_ref = detail::require_string(j, "sample_ref");
  if (j.contains("words")) q.words = j.at("words").get<std::vector<std::string>>();
  return q;
}

inline Json to_json(const RankingQuestion& q) {
  Json j;
  j["id"] = q.id;
  j["task"] = to_string(q.task);
  j["lang"] = q.lang.code();
  if (q.image_ref) j["image_ref"] = *q.image_ref;
  j["stem"] = q.stem;
  Json cs = Json::array();
  for (const auto& c : q.candidates) {
    Json cj;
    cj["text"] = c.text;
    cj["likes"] = c.likes;
    cs.push_back(std::move(cj));
  }
  j["candidates"] = std::move(cs);
  j["gold_order"] = q.gold_order;
  j["sample_ref"] = q.sample_ref;
  return j;
}

inline RankingQuestion ranking_from_json(const Json& j) {
  RankingQuestion q;
  q.id = detail::require_string(j, "id");
  q.task = parse_task(detail::require_string(j, "task"));
  q.lang = Language::parse(detail::require_string(j, "lang"));
  q.image_ref = detail::optional_string(j, "image_ref");
  q.stem = detail::require_string(j, "stem");
  for (const auto& c : detail::require(j, "candidates")) {
    q.candidates.push_back({detail::require_string(c, "text"), detail::require(c, "likes").get<std::int64_t>()});
  }
  q.gold_order = detail::require(j, "gold_order").get<std::vector<std::size_t>>();
  q.sample_ref = detail::require_string(j, "sample_ref");
  return q;
}

}  // namespace clot
