#pragma once

#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "instsel/corpus.hpp"
#include "instsel/error.hpp"
#include "instsel/metrics.hpp"

namespace instsel {

// Template bodies. The checked-in copies under prompts/ must stay
// byte-identical to these (enforced by the prompt tests).
namespace templates {

inline constexpr std::string_view kSelection =
    "The following are @{N}@ candidate instructions that describe a task, each indicated by a number identifier [].\n"
    "@{blocks}@\n"
    "Examine the provided list of @{N}@ instructions, each uniquely identified by a number in brackets [].\n"
    "\n"
    "Your task is to select @{num}@ instructions that excel in various aspects.\n"
    "\n"
    "Look for instructions that are clear and relevant, exhibit a high level of complexity and detail, represent a "
    "diverse range of scenarios and contexts, offer significant instructional value and potential learning gain, and "
    "present unique challenges and specificity.\n"
    "\n"
    "These selected instructions should ideally be the most beneficial for model fine-tuning after being annotated "
    "by human annotators.\n"
    "\n"
    "Present your selections using the format []. e.g., [1,2] or [2,3].\n"
    "\n"
    "The most impactful @{num}@ instructions (only identifiers) are:";

inline constexpr std::string_view kRationale =
    "The following are @{N}@ candidate instructions that describe a task, each indicated by a number identifier [].\n"
    "@{blocks}@\n"
    "Examine the provided list of @{N}@ instructions, each uniquely identified by a number in brackets [].\n"
    "\n"
    "Your task is to select @{num}@ instructions that excel in various aspects.\n"
    "\n"
    "Look for instructions that are clear and relevant, exhibit a high level of complexity and detail, represent a "
    "diverse range of scenarios and contexts, offer significant instructional value and potential learning gain, and "
    "present unique challenges and specificity.\n"
    "\n"
    "These selected instructions should ideally be the most beneficial for model fine-tuning after being annotated "
    "by human annotators.\n"
    "\n"
    "Present your selections using the format []. e.g., [1,2] or [2,3].\n"
    "\n"
    "The most impactful @{num}@ instructions (only identifiers) are: ${prev_selection}$\n"
    "\n"
    "Explain why it was chosen, focusing on how it meets the above criteria and its potential contribution to model "
    "fine-tuning. Rationale for selection:";

inline constexpr std::string_view kRanking =
    "This is RankGPT, an intelligent assistant that can rank instructions based on their impactfulness and "
    "informativeness for model fine-tuning, when labeled by humans, like active learning.\n"
    "\n"
    "The following are @{num}@ examples of instructions that describe a task, each indicated by a number identifier "
    "[].\n"
    "@{blocks}@\n"
    "I will rank the @{num}@ instructions above based on their impactfulness and informativeness for model "
    "fine-tuning when labeled by humans, like active learning. The examples will be listed in descending order using "
    "identifiers, and the most impactful examples should be listed first, and the output format should be [] > [] > "
    "etc, e.g., [1] > [2] > etc.\n"
    "\n"
    "The ranking results of the @{num}@ examples (only identifiers) is";

inline constexpr std::string_view kJudge =
    "Question: Given the following responses to the target question, determine which is more informative and "
    "plausible to answer a given question properly.\n"
    "\n"
    "Response 1:\n"
    "${Method #1 response}$\n"
    "\n"
    "Response 2:\n"
    "${Method #2 response}$\n"
    "\n"
    "Target Question:\n"
    "${question}$\n"
    "\n"
    "Your Task:\n"
    "Identify which response (Response 1 or Response 2) is more informative and plausible to answer a given question "
    "at hand. Choices: [Response 1, Response 2]. Answer with less than 3 words.\n"
    "\n"
    "Answer:";

inline constexpr std::string_view kGrader =
    "Rate the quality of the response written for the task below.\n"
    "\n"
    "${task}$\n"
    "### Response: ${response}$\n"
    "\n"
    "Give a score from 1 to 5 for how helpful and accurate the response is with respect to the instruction and its "
    "input, where 5 is best. Half points such as 3.5 are allowed. Start your reply with the score in the form "
    "\"Score: <number>\", then explain briefly.";

struct Named {
  std::string_view name;
  std::string_view body;
};

inline constexpr Named kAll[] = {{"selection", kSelection},
                                 {"rationale", kRationale},
                                 {"ranking", kRanking},
                                 {"judge", kJudge},
                                 {"grader", kGrader}};

}  // namespace templates

// Single-pass substitution of @{name}@ and ${name}$ placeholders; substituted
// text is never rescanned.
inline std::string fill_template(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    const char open = tmpl[i];
    if ((open == '@' || open == '$') && i + 1 < tmpl.size() && tmpl[i + 1] == '{') {
      const std::string closing = std::string("}") + open;
      const auto end = tmpl.find(closing, i + 2);
      if (end != std::string_view::npos) {
        const std::string name(tmpl.substr(i + 2, end - i - 2));
        auto it = values.find(name);
        if (it == values.end()) throw Error("prompts", "MissingPlaceholder", name);
        out += it->second;
        i = end + 2;
        continue;
      }
    }
    out.push_back(open);
    ++i;
  }
  return out;
}

enum class PromptKind { kSelection, kRationale, kRanking, kJudge, kGrader };

struct RenderedPrompt {
  PromptKind kind = PromptKind::kSelection;
  std::string text;
  std::size_t query_size = 0;
  std::size_t expected_outputs = 0;
  std::vector<std::string> record_ids;  // record_ids[ordinal - 1]
};

namespace detail {

inline std::string render_blocks(const std::vector<const InstructionRecord*>& records) {
  std::string blocks;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (i) blocks += '\n';
    blocks += render_block(*records[i], i + 1);
  }
  return blocks;
}

inline std::vector<std::string> ids_of(const std::vector<const InstructionRecord*>& records) {
  std::vector<std::string> ids;
  for (const auto* r : records) ids.push_back(r->id);
  return ids;
}

}  // namespace detail

inline std::string format_ordinals(const std::vector<std::size_t>& ordinals) {
  std::string s = "[";
  for (std::size_t i = 0; i < ordinals.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(ordinals[i]);
  }
  return s + "]";
}

inline RenderedPrompt render_selection_prompt(const std::vector<const InstructionRecord*>& records, std::size_t num) {
  if (num < 1 || num > records.size()) {
    throw Error("prompts", "BadBudget",
                "num=" + std::to_string(num) + " for " + std::to_string(records.size()) + " records");
  }
  RenderedPrompt p;
  p.kind = PromptKind::kSelection;
  p.query_size = records.size();
  p.expected_outputs = num;
  p.record_ids = detail::ids_of(records);
  p.text = fill_template(templates::kSelection, {{"N", std::to_string(records.size())},
                                                 {"num", std::to_string(num)},
                                                 {"blocks", detail::render_blocks(records)}});
  return p;
}

inline RenderedPrompt render_rationale_prompt(const std::vector<const InstructionRecord*>& records,
                                              const std::vector<std::size_t>& prev_selection) {
  if (prev_selection.empty()) throw Error("prompts", "BadOrdinal", "empty previous selection");
  for (std::size_t o : prev_selection) {
    if (o < 1 || o > records.size()) throw Error("prompts", "BadOrdinal", std::to_string(o));
  }
  RenderedPrompt p;
  p.kind = PromptKind::kRationale;
  p.query_size = records.size();
  p.expected_outputs = prev_selection.size();
  p.record_ids = detail::ids_of(records);
  p.text = fill_template(templates::kRationale, {{"N", std::to_string(records.size())},
                                                 {"num", std::to_string(prev_selection.size())},
                                                 {"blocks", detail::render_blocks(records)},
                                                 {"prev_selection", format_ordinals(prev_selection)}});
  return p;
}

inline RenderedPrompt render_ranking_prompt(const std::vector<const InstructionRecord*>& records) {
  if (records.empty()) throw Error("prompts", "BadBudget", "ranking needs at least one record");
  RenderedPrompt p;
  p.kind = PromptKind::kRanking;
  p.query_size = records.size();
  p.expected_outputs = records.size();
  p.record_ids = detail::ids_of(records);
  p.text = fill_template(templates::kRanking,
                         {{"num", std::to_string(records.size())}, {"blocks", detail::render_blocks(records)}});
  return p;
}

inline RenderedPrompt render_judge_prompt(const std::string& response1, const std::string& response2,
                                          const std::string& question) {
  if (detail::trim(response1).empty() || detail::trim(response2).empty()) {
    throw Error("prompts", "EmptyResponse", "judge responses must be nonempty");
  }
  RenderedPrompt p;
  p.kind = PromptKind::kJudge;
  p.query_size = 2;
  p.expected_outputs = 1;
  p.record_ids = {"response_1", "response_2"};
  p.text = fill_template(templates::kJudge,
                         {{"Method #1 response", response1}, {"Method #2 response", response2}, {"question", question}});
  return p;
}

inline RenderedPrompt render_grader_prompt(const InstructionRecord& record) {
  if (!record.response) throw Error("prompts", "MissingResponse", record.id);
  std::string task = "### Instruction: " + record.instruction;
  if (record.input) task += "\n### Input: " + *record.input;
  RenderedPrompt p;
  p.kind = PromptKind::kGrader;
  p.query_size = 1;
  p.expected_outputs = 1;
  p.record_ids = {record.id};
  p.text = fill_template(templates::kGrader, {{"task", task}, {"response", *record.response}});
  return p;
}

enum class ParseStatus { kOk, kPartial, kEmpty };

inline const char* to_string(ParseStatus s) {
  switch (s) {
    case ParseStatus::kOk: return "ok";
    case ParseStatus::kPartial: return "partial";
    default: return "empty";
  }
}

struct OrdinalParse {
  std::vector<std::size_t> ordinals;
  ParseStatus status = ParseStatus::kEmpty;
};

namespace detail {

struct BracketList {
  std::size_t begin = 0;
  std::size_t end = 0;  // one past ']'
  std::vector<std::size_t> values;
};

// Integer-only bracket groups such as "[3, 7]" or "[#2;5]". Negative values
// and values too large to be an ordinal are kept as 0 so range filtering drops them.
inline std::vector<BracketList> bracket_lists(std::string_view text) {
  std::vector<BracketList> out;
  std::size_t pos = 0;
  while ((pos = text.find('[', pos)) != std::string_view::npos) {
    const auto close = text.find(']', pos + 1);
    if (close == std::string_view::npos) break;
    const auto inner = text.substr(pos + 1, close - pos - 1);
    if (inner.find('[') != std::string_view::npos) {
      pos = pos + 1 + inner.find('[');
      continue;
    }
    BracketList list{pos, close + 1, {}};
    bool valid = true;
    std::size_t i = 0;
    while (i < inner.size() && valid) {
      const char c = inner[i];
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == ',' || c == ';') {
        ++i;
        continue;
      }
      bool negative = false;
      if (c == '#' || c == '+') {
        ++i;
      } else if (c == '-') {
        negative = true;
        ++i;
      }
      if (i >= inner.size() || !std::isdigit(static_cast<unsigned char>(inner[i]))) {
        valid = false;
        break;
      }
      std::size_t value = 0;
      std::size_t digits = 0;
      while (i < inner.size() && std::isdigit(static_cast<unsigned char>(inner[i]))) {
        if (digits++ < 9) value = value * 10 + static_cast<std::size_t>(inner[i] - '0');
        ++i;
      }
      if (digits > 9 || negative) value = 0;
      list.values.push_back(value);
      // A number must be followed by a separator or the closing bracket.
      if (i < inner.size() && !(inner[i] == ' ' || inner[i] == ',' || inner[i] == ';' || inner[i] == '\t' ||
                                inner[i] == '\n' || inner[i] == '\r')) {
        valid = false;
      }
    }
    if (valid && !list.values.empty()) out.push_back(std::move(list));
    pos = close + 1;
  }
  return out;
}

inline bool is_list_gap(std::string_view gap) {
  std::size_t i = 0;
  while (i < gap.size()) {
    const char c = gap[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == ',' || c == ';' || c == '&') {
      ++i;
    } else if (i + 3 <= gap.size() && std::tolower(static_cast<unsigned char>(gap[i])) == 'a' &&
               std::tolower(static_cast<unsigned char>(gap[i + 1])) == 'n' &&
               std::tolower(static_cast<unsigned char>(gap[i + 2])) == 'd') {
      i += 3;
    } else {
      return false;
    }
  }
  return true;
}

// First "[k]" (optionally "[#k]", inner spaces allowed) in `text`.
inline std::optional<std::size_t> first_bracketed_integer(std::string_view text) {
  std::size_t pos = 0;
  while ((pos = text.find('[', pos)) != std::string_view::npos) {
    std::size_t i = pos + 1;
    while (i < text.size() && text[i] == ' ') ++i;
    if (i < text.size() && text[i] == '#') ++i;
    std::size_t value = 0, digits = 0;
    while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
      if (digits++ < 9) value = value * 10 + static_cast<std::size_t>(text[i] - '0');
      ++i;
    }
    while (i < text.size() && text[i] == ' ') ++i;
    if (digits > 0 && i < text.size() && text[i] == ']') return digits > 9 ? 0 : value;
    pos += 1;
  }
  return std::nullopt;
}

}  // namespace detail

// Final answer extraction: the last run of bracketed integer lists (adjacent
// lists like "[1], [4]" merge), deduplicated, range-checked and truncated.
inline OrdinalParse parse_selection(std::string_view reply, const RenderedPrompt& prompt) {
  OrdinalParse result;
  try {
    const auto lists = detail::bracket_lists(reply);
    if (lists.empty()) return result;
    std::size_t first = lists.size() - 1;
    while (first > 0 &&
           detail::is_list_gap(reply.substr(lists[first - 1].end, lists[first].begin - lists[first - 1].end))) {
      --first;
    }
    std::set<std::size_t> seen;
    for (std::size_t l = first; l < lists.size(); ++l) {
      for (std::size_t v : lists[l].values) {
        if (v < 1 || v > prompt.query_size || !seen.insert(v).second) continue;
        if (result.ordinals.size() < prompt.expected_outputs) result.ordinals.push_back(v);
      }
    }
  } catch (...) {
    result.ordinals.clear();
  }
  if (result.ordinals.empty()) {
    result.status = ParseStatus::kEmpty;
  } else if (result.ordinals.size() < prompt.expected_outputs) {
    result.status = ParseStatus::kPartial;
  } else {
    result.status = ParseStatus::kOk;
  }
  return result;
}

// "[2] > [1] > [3]" style orderings. Invalid or repeated entries are skipped;
// the walk stops at the first segment without a bracketed integer once at
// least one entry was read.
inline OrdinalParse parse_ranking(std::string_view reply, const RenderedPrompt& prompt) {
  OrdinalParse result;
  std::set<std::size_t> seen;
  std::size_t start = 0;
  bool any = false;
  while (start <= reply.size()) {
    auto gt = reply.find('>', start);
    const auto segment = reply.substr(start, gt == std::string_view::npos ? std::string_view::npos : gt - start);
    if (auto v = detail::first_bracketed_integer(segment)) {
      any = true;
      if (*v >= 1 && *v <= prompt.query_size && seen.insert(*v).second) result.ordinals.push_back(*v);
    } else if (any) {
      break;
    }
    if (gt == std::string_view::npos) break;
    start = gt + 1;
  }
  if (result.ordinals.empty()) {
    result.status = ParseStatus::kEmpty;
  } else if (result.ordinals.size() < prompt.query_size) {
    result.status = ParseStatus::kPartial;
  } else {
    result.status = ParseStatus::kOk;
  }
  return result;
}

// Reads the answer line (the text after the last "Answer:", else the last
// nonblank line). Answers longer than three words are unparsed, as are
// answers naming both responses.
inline Verdict parse_judge(std::string_view reply) {
  std::string text(reply);
  std::string lowered = text;
  for (auto& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const auto marker = lowered.rfind("answer:");
  std::string answer;
  if (marker != std::string::npos) {
    answer = lowered.substr(marker + 7);
  } else {
    std::size_t end = lowered.size();
    while (end > 0) {
      const auto nl = lowered.rfind('\n', end - 1);
      const std::size_t begin = nl == std::string::npos ? 0 : nl + 1;
      const auto line = detail::trim(std::string_view(lowered).substr(begin, end - begin));
      if (!line.empty()) {
        answer = std::string(line);
        break;
      }
      if (nl == std::string::npos) break;
      end = nl;
    }
  }
  std::size_t words = 0;
  bool in_word = false;
  for (unsigned char c : answer) {
    const bool space = std::isspace(c) != 0;
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  if (words == 0 || words > 3) return Verdict::kUnparsed;
  bool first = false, second = false;
  for (std::size_t pos = answer.find("response"); pos != std::string::npos; pos = answer.find("response", pos + 1)) {
    std::size_t i = pos + 8;
    while (i < answer.size() && std::isspace(static_cast<unsigned char>(answer[i]))) ++i;
    if (i >= answer.size()) continue;
    const bool digit_end = i + 1 >= answer.size() || !std::isdigit(static_cast<unsigned char>(answer[i + 1]));
    if (answer[i] == '1' && digit_end) first = true;
    if (answer[i] == '2' && digit_end) second = true;
  }
  if (first == second) return Verdict::kUnparsed;
  return first ? Verdict::kFirst : Verdict::kSecond;
}

// First number in [1, 5] that is a whole or half point.
inline std::optional<double> parse_score(std::string_view reply) {
  std::size_t i = 0;
  while (i < reply.size()) {
    if (!std::isdigit(static_cast<unsigned char>(reply[i]))) {
      ++i;
      continue;
    }
    const std::size_t begin = i;
    while (i < reply.size() && std::isdigit(static_cast<unsigned char>(reply[i]))) ++i;
    if (i + 1 < reply.size() && reply[i] == '.' && std::isdigit(static_cast<unsigned char>(reply[i + 1]))) {
      ++i;
      while (i < reply.size() && std::isdigit(static_cast<unsigned char>(reply[i]))) ++i;
    }
    const auto tok = reply.substr(begin, i - begin);
    if (tok.size() > 12) continue;
    const double v = std::stod(std::string(tok));
    if (v >= 1.0 && v <= 5.0 && std::floor(v * 2.0) == v * 2.0) return v;
  }
  return std::nullopt;
}

}  // namespace instsel
