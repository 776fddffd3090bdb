#pragma once

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "instsel/error.hpp"
#include "instsel/rng.hpp"

namespace instsel {

struct InstructionRecord {
  std::string id;
  std::string instruction;
  std::optional<std::string> input;
  std::optional<std::string> response;
  std::optional<std::string> source;

  friend bool operator==(const InstructionRecord&, const InstructionRecord&) = default;
};

namespace detail {

inline std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
  };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

// Number of UTF-8 code points; continuation bytes are not counted.
inline std::size_t utf8_length(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) {
    if ((c & 0xC0) != 0x80) ++n;
  }
  return n;
}

}  // namespace detail

// Ordered, immutable collection of records with unique ids.
class Corpus {
 public:
  Corpus() = default;

  explicit Corpus(std::vector<InstructionRecord> records) : records_(std::move(records)) {
    if (records_.empty()) throw Error("corpus", "EmptyCorpus", "corpus has no records");
    by_id_.reserve(records_.size());
    for (std::size_t i = 0; i < records_.size(); ++i) {
      const auto& r = records_[i];
      if (detail::trim(r.instruction).empty()) {
        throw Error("corpus", "EmptyInstruction", "record '" + r.id + "' has an empty instruction");
      }
      if (!by_id_.emplace(r.id, i).second) throw Error("corpus", "DuplicateId", r.id);
    }
  }

  std::size_t size() const noexcept { return records_.size(); }
  const InstructionRecord& operator[](std::size_t pos) const { return records_[pos]; }
  const std::vector<InstructionRecord>& records() const noexcept { return records_; }
  auto begin() const noexcept { return records_.begin(); }
  auto end() const noexcept { return records_.end(); }

  std::optional<std::size_t> position(const std::string& id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) return std::nullopt;
    return it->second;
  }

  const InstructionRecord& at(const std::string& id) const {
    auto pos = position(id);
    if (!pos) throw Error("corpus", "UnknownId", id);
    return records_[*pos];
  }

  std::vector<std::string> ids() const {
    std::vector<std::string> out;
    out.reserve(records_.size());
    for (const auto& r : records_) out.push_back(r.id);
    return out;
  }

  friend bool operator==(const Corpus& a, const Corpus& b) { return a.records_ == b.records_; }

 private:
  std::vector<InstructionRecord> records_;
  std::unordered_map<std::string, std::size_t> by_id_;
};

// Maps source field names onto the canonical "instruction", "input",
// "output", "id" and "source" keys.
using FieldAliases = std::map<std::string, std::string>;

inline FieldAliases default_aliases() {
  return {{"context", "input"}, {"response", "output"}, {"category", "source"}};
}

inline std::string synthesized_id(std::size_t line_no) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "rec-%08zu", line_no);
  return buf;
}

// Parses JSON lines; blank lines are skipped but still count toward line numbers.
inline Corpus read_jsonl(std::istream& in, const FieldAliases& aliases = default_aliases()) {
  std::vector<InstructionRecord> records;
  std::unordered_map<std::string, std::size_t> seen;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw Error("corpus", "MalformedLine", std::to_string(line_no));
    }
    if (!obj.is_object()) throw Error("corpus", "MalformedLine", std::to_string(line_no));

    std::map<std::string, std::string> fields;
    for (const auto& [key, value] : obj.items()) {
      auto alias = aliases.find(key);
      const std::string& canon = alias == aliases.end() ? key : alias->second;
      if (!value.is_string()) {
        if (canon == "instruction" || canon == "input" || canon == "output" || canon == "id") {
          if (value.is_null()) continue;
          if (canon == "id" && value.is_number_integer()) {
            fields[canon] = std::to_string(value.get<long long>());
            continue;
          }
          throw Error("corpus", "MalformedLine", std::to_string(line_no));
        }
        continue;
      }
      // Canonical keys take precedence over aliases mapping onto them.
      if (alias != aliases.end() && obj.contains(canon)) continue;
      fields[canon] = value.get<std::string>();
    }

    auto instr = fields.find("instruction");
    if (instr == fields.end() || detail::trim(instr->second).empty()) {
      throw Error("corpus", "MalformedLine", std::to_string(line_no));
    }
    InstructionRecord rec;
    rec.instruction = instr->second;
    auto take = [&](const char* key) -> std::optional<std::string> {
      auto it = fields.find(key);
      if (it == fields.end() || it->second.empty()) return std::nullopt;
      return it->second;
    };
    rec.id = take("id").value_or(synthesized_id(line_no));
    rec.input = take("input");
    rec.response = take("output");
    rec.source = take("source");
    if (!seen.emplace(rec.id, line_no).second) throw Error("corpus", "DuplicateId", rec.id);
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw Error("corpus", "EmptyCorpus", "no valid records");
  return Corpus(std::move(records));
}

inline Corpus load_jsonl(const std::string& path, const FieldAliases& aliases = default_aliases()) {
  std::ifstream in(path);
  if (!in) throw Error("corpus", "FileNotFound", path);
  return read_jsonl(in, aliases);
}

inline nlohmann::json to_json(const InstructionRecord& r) {
  nlohmann::json j;
  j["id"] = r.id;
  j["instruction"] = r.instruction;
  if (r.input) j["input"] = *r.input;
  if (r.response) j["output"] = *r.response;
  if (r.source) j["source"] = *r.source;
  return j;
}

inline void write_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const auto& r : corpus) out << to_json(r).dump() << '\n';
}

inline void save_jsonl(const Corpus& corpus, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("corpus", "WriteFailed", path);
  write_jsonl(corpus, out);
}

struct CorpusSplit {
  Corpus train;
  Corpus test;
};

// Seeded uniform test sample; both halves keep corpus order.
inline CorpusSplit split(const Corpus& corpus, std::size_t test_size, std::uint64_t seed) {
  if (test_size == 0 || test_size >= corpus.size()) {
    throw Error("corpus", "BadSize",
                "test_size " + std::to_string(test_size) + " not in (0, " + std::to_string(corpus.size()) + ")");
  }
  Rng rng(seed);
  std::vector<bool> in_test(corpus.size(), false);
  for (std::size_t pos : rng.sample(corpus.size(), test_size)) in_test[pos] = true;
  std::vector<InstructionRecord> train, test;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    (in_test[i] ? test : train).push_back(corpus[i]);
  }
  return {Corpus(std::move(train)), Corpus(std::move(test))};
}

// One candidate block as shown inside selection and ranking prompts.
inline std::string render_block(const InstructionRecord& record, std::size_t ordinal) {
  if (ordinal < 1) throw Error("corpus", "BadOrdinal", "ordinal must be >= 1");
  std::string out = "[" + std::to_string(ordinal) + "]\n### Instruction: " + record.instruction;
  if (record.input) out += "\n### Input: " + *record.input;
  return out;
}

// Text basis for embedding: the block without its ordinal line.
inline std::string embedding_text(const InstructionRecord& record) {
  std::string out = "### Instruction: " + record.instruction;
  if (record.input) out += "\n### Input: " + *record.input;
  return out;
}

// Text basis for Rouge-based diversity: instruction followed by input.
inline std::string prompt_text(const InstructionRecord& record) {
  if (!record.input) return record.instruction;
  return record.instruction + " " + *record.input;
}

// Character count of instruction plus input.
inline std::size_t prompt_length(const InstructionRecord& record) {
  return detail::utf8_length(record.instruction) + (record.input ? detail::utf8_length(*record.input) : 0);
}

}  // namespace instsel
