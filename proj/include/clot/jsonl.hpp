#pragma once

// Line-delimited JSON files. Every file the toolkit writes starts with one
// header record {"schema": ..., "version": ..., "run": ...}; readers accept
// files with or without it so hand-written inputs work too.

#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "clot/core.hpp"

namespace clot::io {

inline constexpr int kSchemaVersion = 1;

inline std::string dump_line(const Json& j) {
  return j.dump(-1, ' ', false, Json::error_handler_t::replace);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
}

inline std::vector<std::string> split_lines(std::string_view content) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < content.size()) {
    auto nl = content.find('\n', start);
    if (nl == std::string_view::npos) nl = content.size();
    std::string line(content.substr(start, nl - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = nl + 1;
  }
  return lines;
}

/// One entry per line, trimmed; blank lines and '#' comments skipped.
inline std::vector<std::string> read_word_list(const std::filesystem::path& path) {
  std::vector<std::string> out;
  for (const auto& line : split_lines(read_file(path))) {
    auto t = text::trim(line);
    if (t.empty() || t[0] == '#') continue;
    out.push_back(std::move(t));
  }
  return out;
}

inline void write_word_list(const std::filesystem::path& path, const std::vector<std::string>& words) {
  std::string content;
  for (const auto& w : words) {
    content += w;
    content += '\n';
  }
  write_file(path, content);
}

inline Json header(std::string_view schema, std::string_view run) {
  Json h;
  h["schema"] = std::string(schema);
  h["version"] = kSchemaVersion;
  h["run"] = std::string(run);
  return h;
}

inline bool is_header(const Json& j) { return j.is_object() && j.contains("schema") && j.contains("version") && j.size() <= 3; }

inline std::string encode_jsonl(std::string_view schema, std::string_view run, const std::vector<Json>& rows) {
  std::string out = dump_line(header(schema, run));
  out += '\n';
  for (const auto& r : rows) {
    out += dump_line(r);
    out += '\n';
  }
  return out;
}

inline void write_jsonl(const std::filesystem::path& path, std::string_view schema, std::string_view run,
                        const std::vector<Json>& rows) {
  write_file(path, encode_jsonl(schema, run, rows));
}

struct JsonlContent {
  std::optional<Json> header;
  std::vector<Json> rows;
};

/// Parses a line-delimited JSON document; throws on the first bad line with
/// its 1-based line number. Schema mismatch in the header is an error.
inline JsonlContent decode_jsonl(std::string_view content, std::string_view expected_schema = {}) {
  JsonlContent out;
  std::size_t lineno = 0;
  for (const auto& line : split_lines(content)) {
    ++lineno;
    if (text::trim_view(line).empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw FormatError("line " + std::to_string(lineno) + ": " + e.what());
    }
    if (!out.header && out.rows.empty() && is_header(j)) {
      if (!expected_schema.empty() && j.at("schema") != std::string(expected_schema)) {
        throw FormatError("expected schema " + std::string(expected_schema) + ", found " +
                          j.at("schema").get<std::string>());
      }
      out.header = std::move(j);
      continue;
    }
    out.rows.push_back(std::move(j));
  }
  return out;
}

inline JsonlContent read_jsonl(const std::filesystem::path& path, std::string_view expected_schema = {}) {
  try {
    return decode_jsonl(read_file(path), expected_schema);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

template <typename T, typename Decode>
std::vector<T> read_typed(const std::filesystem::path& path, std::string_view schema, Decode decode) {
  auto content = read_jsonl(path, schema);
  std::vector<T> out;
  out.reserve(content.rows.size());
  std::size_t i = 0;
  for (const auto& row : content.rows) {
    ++i;
    try {
      out.push_back(decode(row));
    } catch (const std::exception& e) {
      throw FormatError(path.string() + ": record " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

template <typename T>
std::vector<Json> to_rows(const std::vector<T>& items) {
  std::vector<Json> rows;
  rows.reserve(items.size());
  for (const auto& x : items) rows.push_back(to_json(x));
  return rows;
}

inline constexpr std::string_view kSamplesSchema = "clot.samples";
inline constexpr std::string_view kInstructionsSchema = "clot.instructions";
inline constexpr std::string_view kChoiceSchema = "clot.choice_questions";
inline constexpr std::string_view kRankingSchema = "clot.ranking_questions";
inline constexpr std::string_view kVerdictSchema = "clot.screen_verdicts";
inline constexpr std::string_view kOutcomeSchema = "clot.refine_outcomes";

inline std::vector<OogiriSample> read_samples(const std::filesystem::path& p) {
  return read_typed<OogiriSample>(p, kSamplesSchema, sample_from_json);
}
inline std::vector<InstructionRecord> read_instructions(const std::filesystem::path& p) {
  return read_typed<InstructionRecord>(p, kInstructionsSchema, record_from_json);
}
inline std::vector<ChoiceQuestion> read_choice_questions(const std::filesystem::path& p) {
  return read_typed<ChoiceQuestion>(p, kChoiceSchema, choice_from_json);
}
inline std::vector<RankingQuestion> read_ranking_questions(const std::filesystem::path& p) {
  return read_typed<RankingQuestion>(p, kRankingSchema, ranking_from_json);
}

}  // namespace clot::io
