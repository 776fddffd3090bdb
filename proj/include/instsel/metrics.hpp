#pragma once

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "instsel/corpus.hpp"
#include "instsel/embedding.hpp"
#include "instsel/error.hpp"

namespace instsel {

// Lowercased runs of ASCII letters and digits. Bytes >= 0x80 count as word
// characters so UTF-8 text is not shredded.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c) || c >= 0x80) {
      cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

template <typename T>
std::size_t lcs_length(const std::vector<T>& a, const std::vector<T>& b) {
  if (a.empty() || b.empty()) return 0;
  const auto& shorter = a.size() < b.size() ? a : b;
  const auto& longer = a.size() < b.size() ? b : a;
  std::vector<std::size_t> prev(shorter.size() + 1, 0), cur(shorter.size() + 1, 0);
  for (const auto& x : longer) {
    for (std::size_t j = 1; j <= shorter.size(); ++j) {
      cur[j] = x == shorter[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[shorter.size()];
}

struct RougeScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline RougeScore rouge_l(const std::vector<std::string>& pred, const std::vector<std::string>& ref) {
  if (pred.empty() || ref.empty()) return {};
  const double lcs = static_cast<double>(lcs_length(pred, ref));
  RougeScore s;
  s.precision = lcs / static_cast<double>(pred.size());
  s.recall = lcs / static_cast<double>(ref.size());
  if (s.precision + s.recall > 0.0) s.f1 = 2.0 * s.precision * s.recall / (s.precision + s.recall);
  return s;
}

inline double rouge_l_f1(std::string_view prediction, std::string_view reference) {
  return rouge_l(tokenize(prediction), tokenize(reference)).f1;
}

// Distinct adjacent token pairs pooled over all texts. Pairs never span two texts.
inline std::size_t unique_bigrams(const std::vector<std::string>& texts) {
  std::set<std::pair<std::string, std::string>> seen;
  for (const auto& t : texts) {
    const auto toks = tokenize(t);
    for (std::size_t i = 1; i < toks.size(); ++i) seen.emplace(toks[i - 1], toks[i]);
  }
  return seen.size();
}

struct TextItem {
  std::string id;
  std::string text;
};

using VectorMap = std::unordered_map<std::string, std::vector<float>>;

struct PairScore {
  std::string id;
  double rouge = 0.0;
  std::optional<double> cosine;
};

struct EvalReport {
  std::size_t n_pairs = 0;
  double mean_rouge_l_f1 = 0.0;
  std::optional<double> mean_cosine;  // absent when vectors were not supplied
  std::vector<PairScore> per_pair;
  std::optional<double> diversity;
  std::optional<double> mean_perplexity;
  std::optional<double> mean_length;
};

// Scores predictions against references matched by id, in reference order.
inline EvalReport evaluate_responses(const std::vector<TextItem>& predictions, const std::vector<TextItem>& references,
                                     const VectorMap* prediction_vectors = nullptr,
                                     const VectorMap* reference_vectors = nullptr) {
  std::unordered_map<std::string, const std::string*> pred_by_id;
  for (const auto& p : predictions) {
    if (!pred_by_id.emplace(p.id, &p.text).second) throw Error("metrics", "MisalignedIds", "duplicate prediction " + p.id);
  }
  std::set<std::string> ref_ids;
  for (const auto& r : references) {
    if (!ref_ids.insert(r.id).second) throw Error("metrics", "MisalignedIds", "duplicate reference " + r.id);
    if (!pred_by_id.count(r.id)) throw Error("metrics", "MisalignedIds", "no prediction for " + r.id);
  }
  for (const auto& p : predictions) {
    if (!ref_ids.count(p.id)) throw Error("metrics", "MisalignedIds", "no reference for " + p.id);
  }
  const bool with_cosine = prediction_vectors && reference_vectors;

  EvalReport report;
  report.n_pairs = references.size();
  double rouge_sum = 0.0, cos_sum = 0.0;
  for (const auto& r : references) {
    PairScore s;
    s.id = r.id;
    s.rouge = rouge_l_f1(*pred_by_id.at(r.id), r.text);
    rouge_sum += s.rouge;
    if (with_cosine) {
      auto pv = prediction_vectors->find(r.id);
      auto rv = reference_vectors->find(r.id);
      if (pv == prediction_vectors->end() || rv == reference_vectors->end()) {
        throw Error("metrics", "MissingVector", r.id);
      }
      s.cosine = cosine_similarity(pv->second, rv->second);
      cos_sum += *s.cosine;
    }
    report.per_pair.push_back(std::move(s));
  }
  if (report.n_pairs > 0) {
    report.mean_rouge_l_f1 = rouge_sum / static_cast<double>(report.n_pairs);
    if (with_cosine) report.mean_cosine = cos_sum / static_cast<double>(report.n_pairs);
  }
  return report;
}

inline nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json j;
  j["n_pairs"] = r.n_pairs;
  j["mean_rouge_l_f1"] = r.mean_rouge_l_f1;
  j["mean_cosine"] = r.mean_cosine ? nlohmann::json(*r.mean_cosine) : nlohmann::json(nullptr);
  j["cosine_available"] = r.mean_cosine.has_value();
  j["per_pair"] = nlohmann::json::array();
  for (const auto& p : r.per_pair) {
    nlohmann::json e{{"id", p.id}, {"rouge", p.rouge}};
    e["cosine"] = p.cosine ? nlohmann::json(*p.cosine) : nlohmann::json(nullptr);
    j["per_pair"].push_back(std::move(e));
  }
  if (r.diversity) j["diversity"] = *r.diversity;
  if (r.mean_perplexity) j["mean_perplexity"] = *r.mean_perplexity;
  if (r.mean_length) j["mean_length"] = *r.mean_length;
  return j;
}

enum class Verdict { kFirst, kSecond, kUnparsed };

inline const char* to_string(Verdict v) {
  switch (v) {
    case Verdict::kFirst: return "first";
    case Verdict::kSecond: return "second";
    default: return "unparsed";
  }
}

// `forward` shows candidate A as Response 1; `reversed` shows A as Response 2.
struct VerdictPair {
  Verdict forward = Verdict::kUnparsed;
  Verdict reversed = Verdict::kUnparsed;
};

struct JudgeTally {
  std::size_t n = 0;
  std::size_t wins = 0;
  std::size_t ties = 0;
  std::size_t losses = 0;
  double win_pct = 0.0;
  double tie_pct = 0.0;
  double lose_pct = 0.0;
};

// Both orders preferring A is a win, both preferring B a loss, anything else a tie.
inline JudgeTally judge_tally(const std::vector<VerdictPair>& pairs) {
  JudgeTally t;
  t.n = pairs.size();
  for (const auto& p : pairs) {
    if (p.forward == Verdict::kFirst && p.reversed == Verdict::kSecond) {
      ++t.wins;
    } else if (p.forward == Verdict::kSecond && p.reversed == Verdict::kFirst) {
      ++t.losses;
    } else {
      ++t.ties;
    }
  }
  if (t.n > 0) {
    const double n = static_cast<double>(t.n);
    t.win_pct = 100.0 * static_cast<double>(t.wins) / n;
    t.tie_pct = 100.0 * static_cast<double>(t.ties) / n;
    t.lose_pct = 100.0 * static_cast<double>(t.losses) / n;
  }
  return t;
}

inline nlohmann::json to_json(const JudgeTally& t) {
  return {{"n", t.n},           {"wins", t.wins},       {"ties", t.ties},        {"losses", t.losses},
          {"win_pct", t.win_pct}, {"tie_pct", t.tie_pct}, {"lose_pct", t.lose_pct}, {"empty", t.n == 0}};
}

using ScoreMap = std::unordered_map<std::string, double>;

struct SelectionStats {
  std::optional<double> diversity;
  std::optional<double> mean_perplexity;
  double mean_length = 0.0;
};

// Diversity needs at least two selected rows; it is left absent otherwise.
inline SelectionStats selection_stats(const Corpus& corpus, const std::vector<std::string>& selected,
                                      const EmbeddingMatrix* embeddings, const ScoreMap* perplexity,
                                      DistanceMetric metric = DistanceMetric::kCosine) {
  SelectionStats s;
  std::vector<std::size_t> positions;
  double length_sum = 0.0, ppl_sum = 0.0;
  for (const auto& id : selected) {
    const auto& rec = corpus.at(id);
    length_sum += static_cast<double>(prompt_length(rec));
    if (perplexity) {
      auto it = perplexity->find(id);
      if (it == perplexity->end()) throw Error("metrics", "MissingScore", id);
      ppl_sum += it->second;
    }
  }
  if (!selected.empty()) {
    s.mean_length = length_sum / static_cast<double>(selected.size());
    if (perplexity) s.mean_perplexity = ppl_sum / static_cast<double>(selected.size());
  }
  if (embeddings && selected.size() >= 2) {
    s.diversity = knn_diversity(*embeddings, positions_of(*embeddings, selected), 1, metric);
  }
  return s;
}

}  // namespace instsel
