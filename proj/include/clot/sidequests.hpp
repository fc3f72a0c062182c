#pragma once

// Auxiliary creativity evaluations: the divergent association task (DAT)
// as choice questions scored by average semantic distance, and the cloud
// guessing game (CGG) question builder.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "clot/core.hpp"
#include "clot/parse.hpp"
#include "clot/random.hpp"
#include "clot/templates.hpp"

namespace clot::side {

/// Word vectors with case-folded lookup. Zero-norm vectors are never stored.
class EmbeddingTable {
 public:
  explicit EmbeddingTable(std::size_t dim = 0) : dim_(dim) {}

  std::size_t dim() const { return dim_; }
  std::size_t size() const { return vectors_.size(); }

  static std::string fold(std::string_view w) { return text::ascii_lower(text::trim_view(w)); }

  /// False when the word is already present (first occurrence wins).
  bool add(std::string_view word, std::vector<double> v) {
    if (dim_ == 0) dim_ = v.size();
    if (v.size() != dim_) throw ArgumentError("vector for " + std::string(word) + " has wrong dimension");
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm == 0.0) throw ArgumentError("zero-norm vector for " + std::string(word));
    return vectors_.emplace(fold(word), std::move(v)).second;
  }

  bool contains(std::string_view word) const { return vectors_.count(fold(word)) > 0; }

  const std::vector<double>& at(std::string_view word) const {
    auto it = vectors_.find(fold(word));
    if (it == vectors_.end()) throw ArgumentError("word not in embedding table: " + std::string(word));
    return it->second;
  }

 private:
  std::size_t dim_;
  std::unordered_map<std::string, std::vector<double>> vectors_;
};

struct EmbeddingLoad {
  EmbeddingTable table;
  std::vector<std::string> warnings;
};

/// Text format: a token followed by d whitespace-separated reals per line.
/// d comes from the first vector line (or `expected_dim`). A leading
/// "<count> <dim>" header line is skipped.
inline EmbeddingLoad load_embeddings(const std::filesystem::path& path, std::optional<std::size_t> expected_dim = {}) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open embedding file " + path.string());
  EmbeddingLoad out{EmbeddingTable(expected_dim.value_or(0)), {}};
  std::string line;
  std::size_t lineno = 0;
  bool seen_content = false;
  auto where = [&] { return path.string() + ":" + std::to_string(lineno) + ": "; };
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = text::split_whitespace(line);
    if (toks.empty()) continue;
    if (!seen_content) {
      seen_content = true;
      bool header = toks.size() == 2 && std::all_of(toks.begin(), toks.end(), [](const std::string& t) {
                      return !t.empty() && std::all_of(t.begin(), t.end(), [](char c) { return c >= '0' && c <= '9'; });
                    });
      if (header) continue;
    }
    if (toks.size() < 2) throw FormatError(where() + "expected a word followed by a vector");
    std::vector<double> v;
    v.reserve(toks.size() - 1);
    for (std::size_t i = 1; i < toks.size(); ++i) {
      try {
        std::size_t used = 0;
        v.push_back(std::stod(toks[i], &used));
        if (used != toks[i].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw FormatError(where() + "not a number: " + toks[i]);
      }
    }
    if (out.table.dim() != 0 && v.size() != out.table.dim()) {
      throw FormatError(where() + "dimension " + std::to_string(v.size()) + ", expected " +
                        std::to_string(out.table.dim()));
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    if (norm == 0.0) {
      out.warnings.push_back(where() + "zero-norm vector for " + toks[0] + " skipped");
      continue;
    }
    if (!out.table.add(toks[0], std::move(v))) {
      out.warnings.push_back(where() + "duplicate word " + toks[0] + " ignored");
    }
  }
  if (out.table.size() == 0) throw FormatError("embedding file is empty: " + path.string());
  return out;
}

/// 1 - cos(u, v), in [0, 2].
inline double cosine_distance(const std::vector<double>& u, const std::vector<double>& v) {
  if (u.size() != v.size()) throw ArgumentError("vectors differ in dimension");
  double dot = 0.0, nu = 0.0, nv = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += u[i] * v[i];
    nu += u[i] * u[i];
    nv += v[i] * v[i];
  }
  if (nu == 0.0 || nv == 0.0) throw ArgumentError("zero-norm vector");
  double c = dot / (std::sqrt(nu) * std::sqrt(nv));
  c = std::clamp(c, -1.0, 1.0);
  return 1.0 - c;
}

/// Mean cosine distance over all unordered pairs of the words.
inline double asd(const std::vector<std::string>& words, const EmbeddingTable& table) {
  if (words.size() < 2) throw ArgumentError("average semantic distance needs at least two words");
  std::vector<const std::vector<double>*> vs;
  vs.reserve(words.size());
  for (const auto& w : words) vs.push_back(&table.at(w));
  double sum = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < vs.size(); ++i) {
    for (std::size_t j = i + 1; j < vs.size(); ++j) {
      sum += cosine_distance(*vs[i], *vs[j]);
      ++pairs;
    }
  }
  return sum / static_cast<double>(pairs);
}

// ---------------------------------------------------------------------------
// DAT

inline std::string render_dat_prompt(const std::vector<std::string>& words, const std::vector<std::string>& options) {
  return "Please carefully understand the provided question and select the option that satisfies the problem. Only "
         "one option meets the requirements.\n"
         "Question: Please select the option least relevant to the current set of words.\n"
         "\n"
         "Words: " +
         text::join(words, " ") + "\n\n" + templates::options_block(options) +
         "\n\n"
         "Answer Format: Please respond in the format of 'Option id. Option content,' for example, 'A. xxx.' "
         "Response: Satisfactory option is";
}

/// Mean distance from `option` to each stem word.
inline double mean_distance_to(const std::string& option, const std::vector<std::string>& words,
                               const EmbeddingTable& table) {
  double s = 0.0;
  for (const auto& w : words) s += cosine_distance(table.at(option), table.at(w));
  return s / static_cast<double>(words.size());
}

/// Index of the option farthest (on average) from the stem words; ties go
/// to the earliest option. Equivalently, the option whose completion has
/// the largest ASD.
inline std::size_t dat_gold_index(const std::vector<std::string>& words, const std::vector<std::string>& options,
                                  const EmbeddingTable& table) {
  std::size_t best = 0;
  double best_d = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < options.size(); ++i) {
    double d = mean_distance_to(options[i], words, table);
    if (d > best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

/// Every word and option must be in the table.
inline ChoiceQuestion make_dat_question(std::string id, std::vector<std::string> words, std::vector<std::string> options,
                                       const EmbeddingTable& table) {
  if (words.empty()) throw ArgumentError(id + ": DAT question needs stem words");
  if (options.size() < 2 || options.size() > 26) throw ArgumentError(id + ": DAT question needs 2..26 options");
  for (const auto* list : {&words, &options}) {
    for (const auto& w : *list) {
      if (!table.contains(w)) throw ArgumentError(id + ": word not in embedding table: " + w);
    }
  }
  ChoiceQuestion q;
  q.id = std::move(id);
  q.m = static_cast<int>(options.size());
  q.n = 1;
  q.task = TaskType::T2T;
  q.lang = Language::EN();
  q.stem = render_dat_prompt(words, options);
  q.gold = {option_label(dat_gold_index(words, options, table))};
  for (std::size_t i = 0; i < options.size(); ++i) q.permutation.push_back(static_cast<int>(i));
  q.sample_ref = q.id;
  q.options = std::move(options);
  q.words = std::move(words);
  return q;
}

/// Random mode: each question draws word_count + option_count distinct
/// words from the pool (restricted to words present in the table).
inline std::vector<ChoiceQuestion> build_dat_random(const std::vector<std::string>& pool, const EmbeddingTable& table,
                                                    std::size_t count, Rng& rng, std::size_t word_count = 9,
                                                    std::size_t option_count = 4) {
  std::vector<std::string> usable;
  for (const auto& w : pool) {
    if (table.contains(w) && std::find(usable.begin(), usable.end(), w) == usable.end()) usable.push_back(w);
  }
  if (usable.size() < word_count + option_count) {
    throw ArgumentError("word pool has " + std::to_string(usable.size()) + " embeddable words, need " +
                        std::to_string(word_count + option_count));
  }
  std::vector<ChoiceQuestion> out;
  for (std::size_t q = 0; q < count; ++q) {
    auto picks = rng.sample_without_replacement(usable.size(), word_count + option_count);
    std::vector<std::string> words, options;
    for (std::size_t i = 0; i < picks.size(); ++i) (i < word_count ? words : options).push_back(usable[picks[i]]);
    out.push_back(make_dat_question("dat/" + std::to_string(q), std::move(words), std::move(options), table));
  }
  return out;
}

struct DatScore {
  std::optional<double> accuracy;  // absent for an empty question list
  std::optional<double> mean_asd;  // absent when no set could be scored
  std::size_t total = 0;
  std::size_t correct = 0;
  std::size_t failed = 0;
  std::size_t scored = 0;
  std::vector<std::string> warnings;
};

inline Json to_json(const DatScore& s) {
  Json j;
  j["accuracy"] = s.accuracy ? Json(*s.accuracy) : Json(nullptr);
  j["mean_asd"] = s.mean_asd ? Json(*s.mean_asd) : Json(nullptr);
  j["total"] = s.total;
  j["correct"] = s.correct;
  j["failed"] = s.failed;
  j["scored"] = s.scored;
  j["warnings"] = s.warnings;
  return j;
}

/// The chosen option completes the 10-word set whose ASD is averaged. A
/// failed parse takes the minimum-ASD completion and counts as wrong.
/// Questions with out-of-vocabulary words are skipped for ASD with a
/// warning. `scale` multiplies reported distances.
inline DatScore score_dat(const std::vector<ChoiceQuestion>& questions, const std::vector<ParsedChoice>& answers,
                          const EmbeddingTable& table, double scale = 1.0) {
  if (questions.size() != answers.size()) throw ArgumentError("questions and answers differ in length");
  DatScore out;
  double sum = 0.0;
  for (std::size_t i = 0; i < questions.size(); ++i) {
    const auto& q = questions[i];
    const auto& a = answers[i];
    ++out.total;
    const bool failed = a.confidence == ParseConfidence::failed || a.labels.empty();
    if (failed) {
      ++out.failed;
    } else if (a.labels.front() == q.gold.front()) {
      ++out.correct;
    }
    auto completion = [&](std::size_t k) {
      auto set = q.words;
      set.push_back(q.options[k]);
      return asd(set, table);
    };
    try {
      double d;
      if (failed) {
        d = std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < q.options.size(); ++k) d = std::min(d, completion(k));
      } else {
        auto k = static_cast<std::size_t>(a.labels.front() - 'A');
        if (k >= q.options.size()) throw ArgumentError("answer label out of range");
        d = completion(k);
      }
      sum += d;
      ++out.scored;
    } catch (const ArgumentError& e) {
      out.warnings.push_back(q.id + ": " + e.what());
    }
  }
  if (out.total) out.accuracy = static_cast<double>(out.correct) / static_cast<double>(out.total);
  if (out.scored) out.mean_asd = scale * sum / static_cast<double>(out.scored);
  return out;
}

// ---------------------------------------------------------------------------
// CGG

inline const std::vector<std::string>& default_cgg_distractors() {
  static const std::vector<std::string> words{"chair", "cup",   "sing",  "jump",  "rap",   "basketball",
                                              "computer", "egg", "phone", "house", "lamp", "shoes"};
  return words;
}

struct CggImage {
  std::string image_ref;
  std::string category;
};

/// Label file lines: "<image path><TAB or comma><category>". Without a tab
/// or comma the last whitespace-separated token is the category.
inline std::vector<CggImage> read_cgg_labels(const std::filesystem::path& path) {
  std::vector<CggImage> out;
  std::size_t lineno = 0;
  for (const auto& raw : io::split_lines(io::read_file(path))) {
    ++lineno;
    auto line = text::trim(raw);
    if (line.empty() || line[0] == '#') continue;
    std::size_t cut = line.rfind('\t');
    if (cut == std::string::npos) cut = line.rfind(',');
    if (cut == std::string::npos) cut = line.find_last_of(" ");
    if (cut == std::string::npos) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected image path and category");
    }
    CggImage img{text::trim(line.substr(0, cut)), text::trim(line.substr(cut + 1))};
    if (img.image_ref.empty() || img.category.empty()) {
      throw FormatError(path.string() + ":" + std::to_string(lineno) + ": expected image path and category");
    }
    out.push_back(std::move(img));
  }
  return out;
}

/// `per_image` 4T1 questions per image: the true category plus three
/// distinct distractors, shuffled with the permutation recorded.
inline std::vector<ChoiceQuestion> build_cgg(const std::vector<CggImage>& images,
                                             const std::vector<std::string>& distractors, Rng& rng,
                                             int per_image = 3) {
  std::vector<ChoiceQuestion> out;
  for (const auto& img : images) {
    std::vector<std::string> pool;
    for (const auto& d : distractors) {
      if (text::ascii_lower(d) != text::ascii_lower(img.category) &&
          std::find(pool.begin(), pool.end(), d) == pool.end()) {
        pool.push_back(d);
      }
    }
    if (pool.size() < 3) throw ArgumentError("distractor set needs at least 3 words other than " + img.category);
    OogiriSample s;
    s.task = TaskType::I2T;
    s.lang = Language::EN();
    s.image_ref = img.image_ref;
    for (int k = 0; k < per_image; ++k) {
      std::vector<std::string> built{img.category};
      for (auto i : rng.sample_without_replacement(pool.size(), 3)) built.push_back(pool[i]);
      auto perm = rng.permutation(built.size());
      ChoiceQuestion q;
      q.id = "cgg/" + img.image_ref + "/" + std::to_string(k);
      q.m = 4;
      q.n = 1;
      q.task = TaskType::I2T;
      q.lang = Language::EN();
      q.image_ref = img.image_ref;
      q.sample_ref = img.image_ref;
      for (std::size_t pos = 0; pos < perm.size(); ++pos) {
        q.options.push_back(built[perm[pos]]);
        q.permutation.push_back(static_cast<int>(perm[pos]));
        if (perm[pos] == 0) q.gold = {option_label(pos)};
      }
      TemplateSlots slots;
      slots.options = q.options;
      q.stem = render(TemplateId::select(TaskType::I2T, {4, 1}), s, slots);
      out.push_back(std::move(q));
    }
  }
  return out;
}

}  // namespace clot::side
