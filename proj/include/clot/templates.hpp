#pragma once

// Instruction templates for the three Oogiri task types. Each family
// renders the prompt half of an instruction record; the response half is
// the record's target. Blocks are joined with single newlines and the
// prompt carries no trailing newline.

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "clot/core.hpp"

namespace clot {

enum class TemplateFamily { Gen, Cond, Rank, Select, Mask };

inline std::string_view to_string(TemplateFamily f) {
  switch (f) {
    case TemplateFamily::Gen: return "GEN";
    case TemplateFamily::Cond: return "COND";
    case TemplateFamily::Rank: return "RANK";
    case TemplateFamily::Select: return "SELECT";
    case TemplateFamily::Mask: return "MASK";
  }
  return "?";
}

struct TemplateId {
  TaskType task = TaskType::I2T;
  TemplateFamily family = TemplateFamily::Gen;
  ChoiceVariant variant{3, 1};  // only meaningful for Select

  static TemplateId gen(TaskType t) { return {t, TemplateFamily::Gen, {3, 1}}; }
  static TemplateId cond(TaskType t) { return {t, TemplateFamily::Cond, {3, 1}}; }
  static TemplateId rank(TaskType t) { return {t, TemplateFamily::Rank, {3, 1}}; }
  static TemplateId select(TaskType t, ChoiceVariant v) { return {t, TemplateFamily::Select, v}; }
  static TemplateId mask(TaskType t) { return {t, TemplateFamily::Mask, {3, 1}}; }

  /// e.g. "I2T_GEN", "T2T_SELECT(5,2)", "MASK_I2T".
  std::string name() const {
    if (family == TemplateFamily::Mask) return "MASK_" + std::string(to_string(task));
    std::string out = std::string(to_string(task)) + "_" + std::string(to_string(family));
    if (family == TemplateFamily::Select) {
      out += "(" + std::to_string(variant.m) + "," + std::to_string(variant.n) + ")";
    }
    return out;
  }
};

/// The fourteen families: {GEN, COND, RANK, SELECT} per task plus MASK for
/// I2T and T2T. SELECT is listed once, as its 3T1 member.
inline std::vector<TemplateId> all_template_families() {
  std::vector<TemplateId> out;
  for (auto t : {TaskType::I2T, TaskType::T2T, TaskType::IT2T}) {
    out.push_back(TemplateId::gen(t));
    out.push_back(TemplateId::cond(t));
    out.push_back(TemplateId::rank(t));
    out.push_back(TemplateId::select(t, {3, 1}));
  }
  out.push_back(TemplateId::mask(TaskType::I2T));
  out.push_back(TemplateId::mask(TaskType::T2T));
  return out;
}

struct TemplateSlots {
  std::optional<std::string> condition;
  std::optional<std::vector<std::string>> options;
  std::optional<std::string> masked_answer;  // MASK families: answer containing "[MASK]"
};

namespace templates {

inline constexpr std::string_view kMaskToken = "[MASK]";

inline std::string_view number_word(std::size_t n) {
  static const char* words[] = {"zero", "one", "two",   "three", "four", "five",  "six",
                                "seven", "eight", "nine", "ten", "eleven", "twelve"};
  return n < sizeof(words) / sizeof(words[0]) ? words[n] : "all";
}

inline std::string options_block(const std::vector<std::string>& options) {
  std::string out = "Options:";
  for (std::size_t i = 0; i < options.size(); ++i) {
    out += "\n";
    out += option_label(i);
    out += ". ";
    out += options[i];
  }
  return out;
}

inline std::string rank_format_line(std::size_t count) {
  std::string example;
  for (std::size_t i = 0; i < count; ++i) {
    if (i) example += ' ';
    example += std::to_string(i + 1) + ". " + option_label(i) + ". xxx.";
  }
  return "Response Format: Please respond in the format of ranking the humorousness of the options from high to low, "
         "for example, \"" +
         example + "\". Be sure to rank all " + std::string(number_word(count)) + " options.";
}

inline std::string select_format_line(int picks) {
  if (picks == 1) {
    return "Response Format: Please respond in the format of \"Option id. Option content\", for example, \"A. xxx\".";
  }
  std::string example;
  for (int i = 0; i < picks; ++i) {
    if (i) example += ' ';
    example += std::string(1, option_label(static_cast<std::size_t>(i))) + ". xxx.";
  }
  return "Response Format: Please respond in the format of \"Option id. Option content\" for each selected option, "
         "for example, \"" +
         example + "\".";
}

/// "Only one option meets the requirements." / "Only two options meet ..."
inline std::string select_quantifier(int picks) {
  if (picks == 1) return "Only one option meets the requirements.";
  return "Only " + std::string(number_word(static_cast<std::size_t>(picks))) + " options meet the requirements.";
}

inline const std::string& require_slot(const std::optional<std::string>& v, const char* slot, const TemplateId& id) {
  if (!v || text::trim_view(*v).empty()) throw ArgumentError(id.name() + ": missing slot " + slot);
  return *v;
}

}  // namespace templates

/// Renders a template for a sample. Slot presence must match the family:
/// Condition only for COND, Options only for RANK/SELECT, Answer only for
/// MASK; Image and Question come from the sample.
inline std::string render(const TemplateId& id, const OogiriSample& s, const TemplateSlots& slots = {}) {
  using namespace templates;
  const auto fam = id.family;
  if (id.task != s.task) {
    throw ArgumentError(id.name() + ": template task " + std::string(to_string(id.task)) + " does not match sample task " +
                        std::string(to_string(s.task)));
  }
  if ((fam == TemplateFamily::Cond) != slots.condition.has_value()) {
    throw ArgumentError(id.name() + (slots.condition ? ": unexpected slot Condition" : ": missing slot Condition"));
  }
  const bool wants_options = fam == TemplateFamily::Rank || fam == TemplateFamily::Select;
  if (wants_options != slots.options.has_value()) {
    throw ArgumentError(id.name() + (slots.options ? ": unexpected slot Options" : ": missing slot Options"));
  }
  if ((fam == TemplateFamily::Mask) != slots.masked_answer.has_value()) {
    throw ArgumentError(id.name() + (slots.masked_answer ? ": unexpected slot Answer" : ": missing slot Answer"));
  }
  if (fam == TemplateFamily::Mask && s.task == TaskType::IT2T) {
    throw ArgumentError(id.name() + ": MASK templates apply to I2T and T2T only");
  }
  if (fam == TemplateFamily::Select && !id.variant.is_standard() && id.variant.m != 2) {
    throw ArgumentError(id.name() + ": unsupported selection layout");
  }
  if (fam == TemplateFamily::Rank) {
    if (slots.options->size() < 2 || slots.options->size() > 26) throw ArgumentError(id.name() + ": slot Options needs 2..26 entries");
  }
  if (fam == TemplateFamily::Select && static_cast<int>(slots.options->size()) != id.variant.m) {
    throw ArgumentError(id.name() + ": slot Options needs " + std::to_string(id.variant.m) + " entries");
  }
  if (slots.options) {
    for (const auto& o : *slots.options) {
      if (text::trim_view(o).empty()) throw ArgumentError(id.name() + ": empty entry in slot Options");
    }
  }

  std::string image_line;
  if (s.task == TaskType::I2T || s.task == TaskType::IT2T) {
    image_line = "Image: " + require_slot(s.image_ref, "Image", id);
  }
  std::string question_line;
  if (s.task == TaskType::T2T) {
    question_line = "Question: " + require_slot(s.question_text, "Question", id);
  } else if (s.task == TaskType::IT2T && s.question_text && !text::trim_view(*s.question_text).empty()) {
    if (s.question_text->find(kMaskToken) == std::string::npos) {
      throw ArgumentError(id.name() + ": slot Question must contain [MASK] for IT2T");
    }
    question_line = "Question: " + *s.question_text;
  }

  std::vector<std::string> blocks;
  auto add = [&](std::string b) {
    if (!b.empty()) blocks.push_back(std::move(b));
  };
  std::string condition_line;
  if (slots.condition) condition_line = "Condition: " + require_slot(slots.condition, "Condition", id);

  switch (s.task) {
    case TaskType::I2T:
      switch (fam) {
        case TemplateFamily::Gen:
          add("Based on the image, think of a sentence that is unexpected and humorous. Let's think outside the box. A "
              "satisfactory response is");
          add(image_line);
          break;
        case TemplateFamily::Cond:
          add("Please carefully understand the image and give an answer that contains conditional words and is "
              "surprising and funny. Let's think outside the box. A surprising and funny answer containing "
              "conditional word is");
          add(condition_line);
          add(image_line);
          break;
        case TemplateFamily::Rank:
          add("Please evaluate the degree of unexpected and humorous effect when each of the option contents is "
              "combined with the image.");
          add(options_block(*slots.options));
          add(rank_format_line(slots.options->size()));
          add("Let's think outside the box. The result of ranking the options from most surprising and funny to least "
              "is");
          add(image_line);
          break;
        case TemplateFamily::Select:
          add(id.variant.n == 1
                  ? "Please select the option that, when combined with the image, creates an unexpected and humorous "
                    "effect. " + select_quantifier(1)
                  : "Please select the options that, when combined with the image, create an unexpected and humorous "
                    "effect. " + select_quantifier(id.variant.n));
          add(options_block(*slots.options));
          add(select_format_line(id.variant.n));
          add("Let's think outside the box. The satisfactory option is");
          add(image_line);
          break;
        case TemplateFamily::Mask:
          add("Please carefully understand the provided image and complete the answer by replacing the [MASK] part to "
              "make the answer unexpectedly funny.");
          add("Answer: " + require_slot(slots.masked_answer, "Answer", id));
          add("Let's think outside the box. The content of [MASK] is");
          add(image_line);
          break;
      }
      break;

    case TaskType::T2T:
      switch (fam) {
        case TemplateFamily::Gen:
          add("Please carefully understand the provided question and come up with a surprising and humorous response.");
          add(question_line);
          add("Let's think outside the box. A satisfactory response is");
          break;
        case TemplateFamily::Cond:
          add("Please carefully understand the question and give an answer that contains conditional words and is "
              "surprising and funny.");
          add(question_line);
          add("Let's think outside the box. A surprising and funny answer containing conditional word is");
          add(condition_line);
          break;
        case TemplateFamily::Rank:
          add("Please evaluate the degree of unexpected and humorous effect when each of the option contents is "
              "combined with the question.");
          add(question_line);
          add(options_block(*slots.options));
          add(rank_format_line(slots.options->size()));
          add("Let's think outside the box. The result of ranking the options from most surprising and funny to least "
              "is");
          break;
        case TemplateFamily::Select:
          add(id.variant.n == 1
                  ? "Please select the option that, when combined with the question, creates an unexpected and "
                    "humorous effect. " + select_quantifier(1)
                  : "Please select the options that, when combined with the question, create an unexpected and "
                    "humorous effect. " + select_quantifier(id.variant.n));
          add(question_line);
          add(options_block(*slots.options));
          add(select_format_line(id.variant.n));
          add("Let's think outside the box. The satisfactory option is");
          break;
        case TemplateFamily::Mask:
          add("Please carefully understand the provided question and complete the answer by replacing the [MASK] part "
              "to make the answer unexpectedly funny.");
          add(question_line);
          add("Answer: " + require_slot(slots.masked_answer, "Answer", id));
          add("Let's think outside the box. The content of [MASK] is");
          break;
      }
      break;

    case TaskType::IT2T: {
      const std::string intro =
          "In this image, there are sections of text that need to be completed, and the content to fill in is denoted "
          "by [MASK].";
      switch (fam) {
        case TemplateFamily::Gen:
          add(intro + " Let's think outside the box and complete the [MASK] to make the response unexpectedly funny. A "
                      "satisfactory response is");
          add(question_line);
          add(image_line);
          break;
        case TemplateFamily::Cond:
          add(intro + " Let's think outside the box and complete the [MASK] with a response that contains conditional "
                      "words and is surprising and funny. A surprising and funny response containing conditional word "
                      "is");
          add(condition_line);
          add(question_line);
          add(image_line);
          break;
        case TemplateFamily::Rank:
          add(intro + " Please evaluate the degree of unexpected and humorous effect when the options are the content "
                      "of the [MASK].");
          add(question_line);
          add(options_block(*slots.options));
          add(rank_format_line(slots.options->size()));
          add("Let's think outside the box. The result of ranking the options from most surprising and funny to least "
              "is");
          add(image_line);
          break;
        case TemplateFamily::Select:
          add(intro + (id.variant.n == 1
                           ? " Please select the option that, creates an unexpected and humorous effect when being the "
                             "content of the [MASK]. " + select_quantifier(1)
                           : " Please select the options that, create an unexpected and humorous effect when being the "
                             "content of the [MASK]. " + select_quantifier(id.variant.n)));
          add(question_line);
          add(options_block(*slots.options));
          add(select_format_line(id.variant.n));
          add("Let's think outside the box. The satisfactory option is");
          add(image_line);
          break;
        case TemplateFamily::Mask:
          break;  // rejected above
      }
      break;
    }
  }
  return text::join(blocks, "\n");
}

/// Target text for a ranking record: "1. A. text. 2. C. text. ..." following
/// the requested order of option indices.
inline std::string ranking_target(const std::vector<std::string>& options, const std::vector<std::size_t>& order) {
  std::string out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k) out += ' ';
    const auto& t = options.at(order[k]);
    out += std::to_string(k + 1) + ". " + option_label(order[k]) + ". " + t;
    if (t.empty() || (t.back() != '.' && t.back() != '!' && t.back() != '?')) out += '.';
  }
  return out;
}

/// Target text for a selection record: "B. text" (or "A. text. C. text").
inline std::string selection_target(const std::vector<std::string>& options, const std::vector<char>& gold) {
  std::string out;
  for (std::size_t k = 0; k < gold.size(); ++k) {
    if (k) out += ' ';
    const auto& t = options.at(static_cast<std::size_t>(gold[k] - 'A'));
    out += std::string(1, gold[k]) + ". " + t;
    if (gold.size() > 1 && (t.empty() || (t.back() != '.' && t.back() != '!' && t.back() != '?'))) out += '.';
  }
  return out;
}

}  // namespace clot
