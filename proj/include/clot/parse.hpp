#pragma once

// Structured answers from free-form model replies. Both parsers are total:
// any byte string yields a result, at worst with confidence `failed`.

#include <algorithm>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "clot/core.hpp"

namespace clot {

enum class ParseConfidence { exact, recovered, failed };

inline std::string_view to_string(ParseConfidence c) {
  switch (c) {
    case ParseConfidence::exact: return "exact";
    case ParseConfidence::recovered: return "recovered";
    case ParseConfidence::failed: return "failed";
  }
  return "?";
}

struct ParsedChoice {
  std::vector<char> labels;  // sorted, distinct
  std::string raw;
  ParseConfidence confidence = ParseConfidence::failed;
};

struct ParsedRanking {
  std::vector<char> order;  // best first; a permutation of the labels unless failed
  std::string raw;
  ParseConfidence confidence = ParseConfidence::failed;
};

namespace detail {

inline bool contains_label(const std::vector<char>& labels, char c) {
  return std::find(labels.begin(), labels.end(), c) != labels.end();
}

inline bool standalone_start(std::string_view s, std::size_t i) {
  return i == 0 || !text::is_word_byte(static_cast<unsigned char>(s[i - 1]));
}

inline bool token_ends_at(std::string_view s, std::size_t i) {
  return i >= s.size() || !text::is_word_byte(static_cast<unsigned char>(s[i]));
}

}  // namespace detail

/// Extracts up to `n` picked labels. The exact form is a reply that starts
/// with "<Label>." and names all n picks that way. Otherwise labels are
/// recovered from anywhere in the reply: first those written "L." or "L)",
/// then bare standalone letters.
inline ParsedChoice parse_choice(std::string_view reply, const std::vector<char>& labels, std::size_t n) {
  if (labels.empty()) throw ArgumentError("parse_choice: empty label set");
  if (n == 0) throw ArgumentError("parse_choice: n must be positive");
  ParsedChoice out;
  out.raw = std::string(reply);

  std::vector<char> marked;
  std::vector<char> bare;
  for (std::size_t i = 0; i < reply.size(); ++i) {
    char c = reply[i];
    if (!detail::contains_label(labels, c) || !detail::standalone_start(reply, i)) continue;
    if (i + 1 < reply.size() && (reply[i + 1] == '.' || reply[i + 1] == ')')) {
      marked.push_back(c);
    } else if (detail::token_ends_at(reply, i + 1)) {
      bare.push_back(c);
    }
  }

  std::vector<char> picks;
  bool all_marked = true;
  auto take = [&](const std::vector<char>& from, bool is_marked) {
    for (char c : from) {
      if (picks.size() >= n) return;
      if (detail::contains_label(picks, c)) continue;
      picks.push_back(c);
      if (!is_marked) all_marked = false;
    }
  };
  take(marked, true);
  take(bare, false);

  if (picks.empty()) return out;

  auto lead = text::trim_view(reply);
  const bool starts_exact = lead.size() >= 2 && detail::contains_label(labels, lead[0]) && lead[1] == '.';
  out.confidence = (starts_exact && all_marked && picks.size() == n && picks.front() == lead[0])
                       ? ParseConfidence::exact
                       : ParseConfidence::recovered;
  std::sort(picks.begin(), picks.end());
  out.labels = std::move(picks);
  return out;
}

/// Reads "k. L." entries for k = 1..|labels| in ascending order. Positions
/// that are missing are filled with the unused labels in label order. At
/// least ceil(|labels|/2) positions must be found (3 of 5).
inline ParsedRanking parse_ranking(std::string_view reply, const std::vector<char>& labels) {
  if (labels.size() < 2) throw ArgumentError("parse_ranking: need at least 2 labels");
  ParsedRanking out;
  out.raw = std::string(reply);
  const std::size_t k_total = labels.size();
  std::vector<std::optional<char>> slots(k_total);
  std::vector<char> used;
  std::size_t cursor = 0;
  std::size_t found = 0;

  for (std::size_t k = 1; k <= k_total; ++k) {
    const std::string num = std::to_string(k);
    std::size_t i = cursor;
    while (i < reply.size()) {
      auto at = reply.find(num, i);
      if (at == std::string_view::npos) break;
      i = at + 1;
      if (at > 0 && text::is_ascii_digit(static_cast<unsigned char>(reply[at - 1]))) continue;
      std::size_t j = at + num.size();
      if (j >= reply.size() || (reply[j] != '.' && reply[j] != ')')) continue;
      ++j;
      while (j < reply.size() && text::is_space(static_cast<unsigned char>(reply[j]))) ++j;
      if (j >= reply.size()) continue;
      char c = reply[j];
      if (!detail::contains_label(labels, c) || detail::contains_label(used, c)) continue;
      if (!(j + 1 >= reply.size() || reply[j + 1] == '.' || reply[j + 1] == ')' ||
            !text::is_word_byte(static_cast<unsigned char>(reply[j + 1])))) {
        continue;
      }
      slots[k - 1] = c;
      used.push_back(c);
      ++found;
      cursor = j + 1;
      break;
    }
  }

  if (found < (k_total + 1) / 2) return out;
  std::vector<char> unused;
  for (char c : labels) {
    if (!detail::contains_label(used, c)) unused.push_back(c);
  }
  std::size_t u = 0;
  for (auto& s : slots) {
    if (!s) s = unused[u++];
    out.order.push_back(*s);
  }
  out.confidence = found == k_total ? ParseConfidence::exact : ParseConfidence::recovered;
  return out;
}

inline std::vector<char> first_labels(std::size_t count) {
  std::vector<char> out;
  for (std::size_t i = 0; i < count; ++i) out.push_back(option_label(i));
  return out;
}

}  // namespace clot
