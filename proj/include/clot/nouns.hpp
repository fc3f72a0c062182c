#pragma once

// Condition nouns: per-language extractors and the noun set built from the
// training responses, plus uniform condition sampling over that set.

#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "clot/core.hpp"
#include "clot/jsonl.hpp"
#include "clot/random.hpp"

namespace clot {

/// (text, language) -> nouns in order of appearance. Implementations must
/// be deterministic and safe to call concurrently.
class NounExtractor {
 public:
  virtual ~NounExtractor() = default;
  virtual bool supports(const Language& lang) const = 0;
  virtual std::vector<std::string> extract(std::string_view text, const Language& lang) const = 0;
};

namespace detail {

/// Lower-cased ASCII word tokens (letters, inner apostrophes and hyphens).
inline std::vector<std::string> latin_tokens(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && !text::is_ascii_alpha(static_cast<unsigned char>(s[i]))) ++i;
    std::size_t b = i;
    while (i < s.size()) {
      auto c = static_cast<unsigned char>(s[i]);
      if (text::is_ascii_alpha(c)) {
        ++i;
      } else if ((c == '\'' || c == '-') && i + 1 < s.size() && text::is_ascii_alpha(static_cast<unsigned char>(s[i + 1]))) {
        ++i;
      } else {
        break;
      }
    }
    if (i > b) {
      auto tok = text::ascii_lower(s.substr(b, i - b));
      if (tok.size() > 2 && tok.compare(tok.size() - 2, 2, "'s") == 0) tok.resize(tok.size() - 2);
      out.push_back(std::move(tok));
    }
  }
  return out;
}

}  // namespace detail

/// Lexicon lookup. Latin-script languages match whole word tokens (with a
/// plural-s fallback); other languages use longest match over code points.
class DictionaryExtractor : public NounExtractor {
 public:
  void add_lexicon(const Language& lang, const std::vector<std::string>& words) {
    auto& lex = lexicons_[lang];
    for (const auto& w : words) {
      auto n = NounSet::normalize(w, lang);
      if (n.empty()) continue;
      lex.max_len = std::max(lex.max_len, text::utf8_decode(n).size());
      lex.words.insert(std::move(n));
    }
  }

  /// Loads every "<code>.txt" in `dir` as the lexicon for that language.
  static DictionaryExtractor from_directory(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw FormatError("lexicon directory not found: " + dir.string());
    DictionaryExtractor ex;
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
      if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) ex.add_lexicon(Language::parse(f.stem().string()), io::read_word_list(f));
    return ex;
  }

  bool supports(const Language& lang) const override { return lexicons_.count(lang) > 0; }

  std::vector<std::string> extract(std::string_view s, const Language& lang) const override {
    auto it = lexicons_.find(lang);
    if (it == lexicons_.end()) throw ArgumentError("no lexicon for language " + lang.code());
    const auto& lex = it->second;
    std::vector<std::string> out;
    if (is_latin(lang)) {
      for (auto& tok : detail::latin_tokens(s)) {
        if (lex.words.count(tok)) {
          out.push_back(std::move(tok));
        } else if (tok.size() > 3 && tok.back() == 's' && lex.words.count(tok.substr(0, tok.size() - 1))) {
          out.push_back(tok.substr(0, tok.size() - 1));
        }
      }
      return out;
    }
    auto cps = text::utf8_decode(s);
    std::size_t i = 0;
    while (i < cps.size()) {
      std::size_t matched = 0;
      for (std::size_t len = std::min(lex.max_len, cps.size() - i); len >= 1; --len) {
        if (lex.words.count(text::utf8_encode(cps, i, i + len))) {
          matched = len;
          break;
        }
      }
      if (matched) {
        out.push_back(text::utf8_encode(cps, i, i + matched));
        i += matched;
      } else {
        ++i;
      }
    }
    return out;
  }

 private:
  struct Lexicon {
    std::unordered_set<std::string> words;
    std::size_t max_len = 0;
  };

  static bool is_latin(const Language& lang) { return lang != Language::CN() && lang != Language::JP(); }

  std::map<Language, Lexicon> lexicons_;
};

/// Precomputed extractions exchanged through a file, for plugging in
/// external POS toolchains. Rows: {"lang": "EN", "text": ..., "nouns": [...]}.
/// Texts missing from the table yield no nouns.
class TableExtractor : public NounExtractor {
 public:
  void add(const Language& lang, std::string text_value, std::vector<std::string> nouns) {
    langs_.insert(lang);
    table_[key(lang, text_value)] = std::move(nouns);
  }

  static TableExtractor from_file(const std::filesystem::path& path) {
    TableExtractor ex;
    for (const auto& row : io::read_jsonl(path).rows) {
      ex.add(Language::parse(detail::require_string(row, "lang")), detail::require_string(row, "text"),
             detail::require(row, "nouns").get<std::vector<std::string>>());
    }
    return ex;
  }

  bool supports(const Language& lang) const override { return langs_.count(lang) > 0; }

  std::vector<std::string> extract(std::string_view s, const Language& lang) const override {
    auto it = table_.find(key(lang, s));
    return it == table_.end() ? std::vector<std::string>{} : it->second;
  }

 private:
  static std::string key(const Language& lang, std::string_view s) { return lang.code() + '\x1f' + std::string(s); }
  std::set<Language> langs_;
  std::unordered_map<std::string, std::vector<std::string>> table_;
};

/// Chains extractors; the first one that supports a language handles it.
class ExtractorChain : public NounExtractor {
 public:
  void add(std::shared_ptr<const NounExtractor> e) { chain_.push_back(std::move(e)); }

  bool supports(const Language& lang) const override {
    for (const auto& e : chain_) {
      if (e->supports(lang)) return true;
    }
    return false;
  }

  std::vector<std::string> extract(std::string_view s, const Language& lang) const override {
    for (const auto& e : chain_) {
      if (e->supports(lang)) return e->extract(s, lang);
    }
    throw ArgumentError("no noun extractor for language " + lang.code());
  }

 private:
  std::vector<std::shared_ptr<const NounExtractor>> chain_;
};

inline const std::unordered_set<std::string>& english_stopwords() {
  static const std::unordered_set<std::string> words{
      "a", "about", "after", "again", "all", "am", "an", "and", "any", "are", "as", "at", "be", "because", "been",
      "before", "being", "but", "by", "can", "could", "did", "do", "does", "doing", "don't", "down", "for", "from",
      "had", "has", "have", "having", "he", "her", "here", "him", "his", "how", "i", "i'm", "if", "in", "into", "is",
      "it", "it's", "its", "just", "me", "more", "my", "no", "not", "now", "of", "off", "on", "once", "one", "only",
      "or", "other", "our", "out", "over", "own", "same", "she", "so", "some", "than", "that", "the", "their", "them",
      "then", "there", "these", "they", "this", "those", "through", "to", "too", "under", "until", "up", "very",
      "was", "we", "were", "what", "when", "where", "which", "while", "who", "why", "will", "with", "would", "you",
      "your", "yes", "like", "get", "got", "go", "going", "said", "say", "says", "really", "still", "even", "ever"};
  return words;
}

struct NounBuildOptions {
  std::vector<std::string> deny;
  std::vector<std::string> allow;
  /// When > 0, English tokens (stopwords removed) seen at least this many
  /// times across the responses are added as well.
  std::size_t english_min_count = 0;
};

struct NounBuildResult {
  NounSet nouns;
  std::map<std::string, std::size_t> counts;  // language code -> noun count
};

/// Builds the condition noun set from every response of the given samples.
/// The result does not depend on sample order.
inline NounBuildResult extract_nouns(const std::vector<OogiriSample>& samples, const NounExtractor& extractor,
                                     const NounBuildOptions& opt = {}) {
  NounBuildResult out;
  out.nouns.set_lists(opt.deny, opt.allow);
  std::map<std::string, std::size_t> token_counts;
  for (const auto& s : samples) {
    if (!extractor.supports(s.lang)) throw ArgumentError("no noun extractor for language " + s.lang.code());
    for (const auto& r : s.responses) {
      for (const auto& noun : extractor.extract(r.text, s.lang)) out.nouns.insert(s.lang, noun);
      if (opt.english_min_count > 0 && s.lang == Language::EN()) {
        for (const auto& tok : detail::latin_tokens(r.text)) {
          if (tok.size() > 2 && !english_stopwords().count(tok)) ++token_counts[tok];
        }
      }
    }
  }
  for (const auto& [tok, n] : token_counts) {
    if (n >= opt.english_min_count) out.nouns.insert(Language::EN(), tok);
  }
  for (const auto& lang : out.nouns.languages()) out.counts[lang.code()] = out.nouns.size(lang);
  return out;
}

/// Writes one "<code>.txt" word list per language.
inline void save_noun_set(const NounSet& ns, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (const auto& lang : ns.languages()) {
    io::write_word_list(dir / (text::ascii_lower(lang.code()) + ".txt"), ns.words(lang));
  }
}

inline NounSet load_noun_set(const std::filesystem::path& dir, const std::vector<std::string>& deny = {},
                             const std::vector<std::string>& allow = {}) {
  if (!std::filesystem::is_directory(dir)) throw FormatError("noun set directory not found: " + dir.string());
  NounSet ns;
  ns.set_lists(deny, allow);
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) {
    auto lang = Language::parse(f.stem().string());
    for (const auto& w : io::read_word_list(f)) ns.insert(lang, w);
  }
  return ns;
}

/// Weakly-associated condition: absent with probability rho, otherwise a
/// uniform draw from the language's nouns. Always consumes one coin draw,
/// plus one index draw when a noun is chosen.
inline std::optional<std::string> sample_condition(const NounSet& ns, const Language& lang, double rho, Rng& rng) {
  if (!(rho >= 0.0 && rho <= 1.0)) throw ArgumentError("rho must lie in [0,1]");
  const auto& words = ns.words(lang);
  if (words.empty() && rho < 1.0) throw ArgumentError("noun set is empty for language " + lang.code());
  if (rng.bernoulli(rho)) return std::nullopt;
  return words[rng.index(words.size())];
}

}  // namespace clot
