#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <limits>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "instsel/cluster.hpp"
#include "instsel/corpus.hpp"
#include "instsel/digest.hpp"
#include "instsel/embedding.hpp"
#include "instsel/error.hpp"
#include "instsel/llm.hpp"
#include "instsel/metrics.hpp"
#include "instsel/prompts.hpp"
#include "instsel/rng.hpp"

namespace instsel {

struct QueryRecord {
  std::size_t query_index = 0;
  std::size_t query_size = 0;
  std::size_t budget = 0;
  std::string prompt_digest;
  std::string reply_digest;
  std::string parse_status;  // ok | partial | empty | skipped
  bool fallback_used = false;
  std::vector<std::string> picked;
};

struct Usage {
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  std::size_t llm_calls = 0;
  bool estimated = false;

  void add(const ChatExchange& ex) {
    prompt_tokens += ex.prompt_tokens;
    completion_tokens += ex.completion_tokens;
    ++llm_calls;
    estimated = estimated || ex.usage_estimated;
  }
};

struct SelectionManifest {
  std::string method;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::vector<std::string> selected;
  std::optional<std::vector<QueryRecord>> per_query;  // present iff the method prompts an LLM
  Usage usage;
  nlohmann::json config = nlohmann::json::object();
  std::string config_digest;
};

inline nlohmann::json to_json(const SelectionManifest& m) {
  nlohmann::json j;
  j["method"] = m.method;
  j["N"] = m.n;
  j["seed"] = m.seed;
  j["selected"] = m.selected;
  if (m.per_query) {
    auto arr = nlohmann::json::array();
    for (const auto& q : *m.per_query) {
      arr.push_back({{"query_index", q.query_index},
                     {"query_size", q.query_size},
                     {"budget", q.budget},
                     {"prompt_digest", q.prompt_digest},
                     {"reply_digest", q.reply_digest},
                     {"parse_status", q.parse_status},
                     {"fallback_used", q.fallback_used},
                     {"picked", q.picked}});
    }
    j["per_query"] = std::move(arr);
  }
  j["usage"] = {{"prompt_tokens", m.usage.prompt_tokens},
                {"completion_tokens", m.usage.completion_tokens},
                {"llm_calls", m.usage.llm_calls},
                {"estimated", m.usage.estimated}};
  j["config"] = m.config;
  j["config_digest"] = m.config_digest;
  return j;
}

inline SelectionManifest manifest_from_json(const nlohmann::json& j) {
  SelectionManifest m;
  try {
    m.method = j.at("method").get<std::string>();
    m.n = j.at("N").get<std::size_t>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.selected = j.at("selected").get<std::vector<std::string>>();
    if (j.contains("per_query")) {
      std::vector<QueryRecord> qs;
      for (const auto& e : j["per_query"]) {
        QueryRecord q;
        q.query_index = e.at("query_index").get<std::size_t>();
        q.query_size = e.value("query_size", std::size_t{0});
        q.budget = e.value("budget", std::size_t{0});
        q.prompt_digest = e.value("prompt_digest", "");
        q.reply_digest = e.value("reply_digest", "");
        q.parse_status = e.value("parse_status", "");
        q.fallback_used = e.value("fallback_used", false);
        q.picked = e.value("picked", std::vector<std::string>{});
        qs.push_back(std::move(q));
      }
      m.per_query = std::move(qs);
    }
    if (j.contains("usage")) {
      const auto& u = j["usage"];
      m.usage.prompt_tokens = u.value("prompt_tokens", std::size_t{0});
      m.usage.completion_tokens = u.value("completion_tokens", std::size_t{0});
      m.usage.llm_calls = u.value("llm_calls", std::size_t{0});
      m.usage.estimated = u.value("estimated", false);
    }
    m.config = j.value("config", nlohmann::json::object());
    m.config_digest = j.value("config_digest", "");
  } catch (const nlohmann::json::exception& e) {
    throw Error("selectors", "BadManifest", e.what());
  }
  return m;
}

namespace detail {

inline void check_n(std::size_t n, std::size_t m) {
  if (n < 1 || n > m) throw Error("selectors", "BadN", "N=" + std::to_string(n) + " for M=" + std::to_string(m));
}

inline std::vector<const InstructionRecord*> records_at(const Corpus& corpus, const std::vector<std::size_t>& pos) {
  std::vector<const InstructionRecord*> out;
  out.reserve(pos.size());
  for (std::size_t p : pos) out.push_back(&corpus[p]);
  return out;
}

// Positions sorted by key, stable by position.
template <typename Key>
std::vector<std::size_t> ranked_positions(std::size_t n, Key key) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  return order;
}

inline SelectionManifest baseline_manifest(const Corpus& corpus, std::string method, std::size_t n,
                                           std::uint64_t seed, const std::vector<std::size_t>& picks) {
  SelectionManifest m;
  m.method = std::move(method);
  m.n = n;
  m.seed = seed;
  for (std::size_t p : picks) m.selected.push_back(corpus[p].id);
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// LLM batch selection over clustered queries.

struct SelectLlmOptions {
  std::size_t clusters = 14;
  std::size_t n = 1000;
  std::uint64_t seed = 0;
  PlanKind plan_kind = PlanKind::kDiverse;
  std::size_t similar_query_size = 14;  // used only for similar plans
  KMeansOptions kmeans;
  std::size_t parallel = 0;  // 0 = client default
};

inline QueryPlan plan_for(const EmbeddingMatrix& e, const SelectLlmOptions& opt) {
  return opt.plan_kind == PlanKind::kDiverse
             ? build_diverse_queries(e, opt.clusters, opt.seed, opt.kmeans)
             : build_similar_queries(e, opt.clusters, opt.similar_query_size, opt.seed, opt.kmeans);
}

// Per query: prompt for its budget, map reply ordinals to ids, and fill any
// shortfall by a seeded draw from the query's unpicked members.
inline SelectionManifest select_llm(const Corpus& corpus, const QueryPlan& plan, std::size_t n, std::uint64_t seed,
                                    LlmClient& client, std::size_t parallel = 0) {
  detail::check_n(n, corpus.size());
  const auto budgets = fair_budgets(n, plan.query_sizes());

  std::vector<std::size_t> prompted;
  std::vector<RenderedPrompt> rendered(plan.queries.size());
  std::vector<std::string> texts;
  for (std::size_t t = 0; t < plan.queries.size(); ++t) {
    if (budgets[t] == 0) continue;
    rendered[t] = render_selection_prompt(detail::records_at(corpus, plan.queries[t]), budgets[t]);
    prompted.push_back(t);
    texts.push_back(rendered[t].text);
  }
  const auto exchanges = client.complete_all(texts, parallel);

  SelectionManifest m;
  m.method = plan.kind == PlanKind::kDiverse ? "selectllm" : "selectllm-similar";
  m.n = n;
  m.seed = seed;
  m.per_query.emplace();
  std::size_t next = 0;
  for (std::size_t t = 0; t < plan.queries.size(); ++t) {
    const auto& query = plan.queries[t];
    QueryRecord rec;
    rec.query_index = t;
    rec.query_size = query.size();
    rec.budget = budgets[t];
    if (budgets[t] == 0) {
      rec.parse_status = "skipped";
      m.per_query->push_back(std::move(rec));
      continue;
    }
    const auto& ex = exchanges[next++];
    m.usage.add(ex);
    rec.prompt_digest = sha256_hex(rendered[t].text);
    rec.reply_digest = sha256_hex(ex.reply);
    const auto parsed = parse_selection(ex.reply, rendered[t]);
    rec.parse_status = to_string(parsed.status);

    std::vector<bool> taken(query.size(), false);
    for (std::size_t ordinal : parsed.ordinals) {
      taken[ordinal - 1] = true;
      rec.picked.push_back(corpus[query[ordinal - 1]].id);
    }
    if (rec.picked.size() < budgets[t]) {
      rec.fallback_used = true;
      std::vector<std::size_t> open;
      for (std::size_t i = 0; i < query.size(); ++i) {
        if (!taken[i]) open.push_back(i);
      }
      Rng rng(mix_seed(seed, t));
      for (std::size_t i : rng.sample(open.size(), budgets[t] - rec.picked.size())) {
        rec.picked.push_back(corpus[query[open[i]]].id);
      }
    }
    m.selected.insert(m.selected.end(), rec.picked.begin(), rec.picked.end());
    m.per_query->push_back(std::move(rec));
  }
  return m;
}

inline SelectionManifest select_llm(const Corpus& corpus, const EmbeddingMatrix& e, const SelectLlmOptions& opt,
                                    LlmClient& client) {
  detail::check_n(opt.n, corpus.size());
  return select_llm(corpus, plan_for(e, opt), opt.n, opt.seed, client, opt.parallel);
}

struct DryRunSummary {
  std::size_t query_count = 0;
  std::vector<std::size_t> budgets;
  std::size_t prompted_queries = 0;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  double cost = 0.0;
};

// Renders every prompt select_llm would send and estimates its usage without any network call.
inline DryRunSummary dry_run(const Corpus& corpus, const QueryPlan& plan, std::size_t n, const CostRates& rates,
                             const TokenCounter& counter = count_tokens) {
  detail::check_n(n, corpus.size());
  DryRunSummary s;
  s.query_count = plan.queries.size();
  s.budgets = fair_budgets(n, plan.query_sizes());
  for (std::size_t t = 0; t < plan.queries.size(); ++t) {
    if (s.budgets[t] == 0) continue;
    ++s.prompted_queries;
    s.prompt_tokens += counter(render_selection_prompt(detail::records_at(corpus, plan.queries[t]), s.budgets[t]).text);
    std::vector<std::size_t> ordinals(s.budgets[t]);
    std::iota(ordinals.begin(), ordinals.end(), std::size_t{1});
    s.completion_tokens += counter(format_ordinals(ordinals));
  }
  s.cost = estimate_cost(s.prompt_tokens, s.completion_tokens, rates);
  return s;
}

// ---------------------------------------------------------------------------
// Baselines.

inline SelectionManifest select_random(const Corpus& corpus, std::size_t n, std::uint64_t seed) {
  detail::check_n(n, corpus.size());
  Rng rng(seed);
  return detail::baseline_manifest(corpus, "random", n, seed, rng.sample(corpus.size(), n));
}

enum class LengthMode { kLong, kShort };

inline SelectionManifest select_length(const Corpus& corpus, std::size_t n, LengthMode mode) {
  detail::check_n(n, corpus.size());
  auto order = detail::ranked_positions(corpus.size(), [&](std::size_t p) {
    const auto len = static_cast<long long>(prompt_length(corpus[p]));
    return mode == LengthMode::kLong ? -len : len;
  });
  order.resize(n);
  return detail::baseline_manifest(corpus, mode == LengthMode::kLong ? "length-long" : "length-short", n, 0, order);
}

inline SelectionManifest select_perplexity(const Corpus& corpus, const ScoreMap& scores, std::size_t n) {
  detail::check_n(n, corpus.size());
  std::vector<double> ppl(corpus.size());
  for (std::size_t p = 0; p < corpus.size(); ++p) {
    auto it = scores.find(corpus[p].id);
    if (it == scores.end()) throw Error("selectors", "MissingScore", corpus[p].id);
    ppl[p] = it->second;
  }
  auto order = detail::ranked_positions(corpus.size(), [&](std::size_t p) { return ppl[p]; });
  order.resize(n);
  return detail::baseline_manifest(corpus, "perplexity", n, 0, order);
}

inline std::size_t default_reference_size(std::size_t m) { return std::min<std::size_t>(500, m - 1); }

// Lowest mean Rouge-L F1 against a seeded reference sample (self excluded).
inline SelectionManifest select_diversity(const Corpus& corpus, std::size_t n, std::size_t n_ref,
                                          std::uint64_t seed) {
  detail::check_n(n, corpus.size());
  if (n_ref < 1 || n_ref >= corpus.size()) {
    throw Error("selectors", "BadRefSize",
                "n_ref=" + std::to_string(n_ref) + " must be in [1, " + std::to_string(corpus.size() - 1) + "]");
  }
  std::vector<std::vector<std::string>> tokens;
  tokens.reserve(corpus.size());
  for (const auto& r : corpus) tokens.push_back(tokenize(prompt_text(r)));
  Rng rng(seed);
  const auto refs = rng.sample(corpus.size(), n_ref);
  std::vector<double> mean(corpus.size(), 0.0);
  for (std::size_t p = 0; p < corpus.size(); ++p) {
    double sum = 0.0;
    std::size_t count = 0;
    for (std::size_t r : refs) {
      if (r == p) continue;
      sum += rouge_l(tokens[p], tokens[r]).f1;
      ++count;
    }
    mean[p] = count ? sum / static_cast<double>(count) : 0.0;
  }
  auto order = detail::ranked_positions(corpus.size(), [&](std::size_t p) { return mean[p]; });
  order.resize(n);
  return detail::baseline_manifest(corpus, "diversity", n, seed, order);
}

using GenerationMap = std::unordered_map<std::string, std::vector<std::string>>;

inline constexpr std::size_t kOpenEndSamples = 3;

// Most unique bigrams pooled over each record's generations.
inline SelectionManifest select_openend(const Corpus& corpus, const GenerationMap& generations, std::size_t n) {
  detail::check_n(n, corpus.size());
  std::vector<long long> score(corpus.size());
  for (std::size_t p = 0; p < corpus.size(); ++p) {
    auto it = generations.find(corpus[p].id);
    if (it == generations.end() || it->second.size() != kOpenEndSamples) {
      throw Error("selectors", "MissingGenerations", corpus[p].id);
    }
    score[p] = static_cast<long long>(unique_bigrams(it->second));
  }
  auto order = detail::ranked_positions(corpus.size(), [&](std::size_t p) { return -score[p]; });
  order.resize(n);
  return detail::baseline_manifest(corpus, "openend", n, 0, order);
}

inline std::string generation_prompt(const InstructionRecord& r) {
  std::string p =
      "Below is an instruction that describes a task. Write a response that appropriately completes the request.\n\n"
      "### Instruction:\n" +
      r.instruction + "\n\n";
  if (r.input) p += "### Input:\n" + *r.input + "\n\n";
  return p + "### Response:";
}

// Samples three generations per record; the client should run at temperature > 0.
inline GenerationMap generate_openend(const Corpus& corpus, LlmClient& client) {
  if (client.config().temperature <= 0.0) {
    throw Error("selectors", "ConfigError", "open-endedness sampling needs temperature > 0");
  }
  GenerationMap out;
  for (const auto& r : corpus) {
    auto& gens = out[r.id];
    for (std::size_t s = 0; s < kOpenEndSamples; ++s) gens.push_back(client.complete(generation_prompt(r), s + 1).reply);
  }
  return out;
}

// k-center greedy over `candidates`: the first pick is the point farthest from
// the candidates' mean (or a seeded random point), each later pick maximizes
// the distance to its nearest chosen point. Ties go to the earlier candidate.
inline std::vector<std::size_t> k_center_greedy(const EmbeddingMatrix& e, const std::vector<std::size_t>& candidates,
                                                std::size_t budget, bool random_start = false,
                                                std::uint64_t seed = 0) {
  std::vector<std::size_t> picks;
  if (budget == 0 || candidates.empty()) return picks;
  budget = std::min(budget, candidates.size());
  const std::size_t dim = e.dim();
  std::size_t first = 0;
  if (random_start) {
    Rng rng(seed);
    first = static_cast<std::size_t>(rng.below(candidates.size()));
  } else {
    std::vector<double> mean(dim, 0.0);
    for (std::size_t c : candidates) {
      auto r = e.row(c);
      for (std::size_t d = 0; d < dim; ++d) mean[d] += r[d];
    }
    for (auto& v : mean) v /= static_cast<double>(candidates.size());
    double best = -1.0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const double d = squared_l2(e.row(candidates[i]), std::span<const double>(mean));
      if (d > best) {
        best = d;
        first = i;
      }
    }
  }
  std::vector<double> nearest(candidates.size(), std::numeric_limits<double>::infinity());
  std::vector<bool> chosen(candidates.size(), false);
  std::size_t current = first;
  while (true) {
    chosen[current] = true;
    picks.push_back(candidates[current]);
    if (picks.size() == budget) break;
    double best = -1.0;
    std::size_t next = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      if (chosen[i]) continue;
      nearest[i] = std::min(nearest[i], squared_l2(e.row(candidates[i]), e.row(candidates[current])));
      if (nearest[i] > best) {
        best = nearest[i];
        next = i;
      }
    }
    current = next;
  }
  return picks;
}

inline SelectionManifest select_coreset(const Corpus& corpus, const EmbeddingMatrix& e, std::size_t n,
                                        std::uint64_t seed, bool random_start = false) {
  detail::check_n(n, e.rows());
  std::vector<std::size_t> all(e.rows());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return detail::baseline_manifest(corpus, "coreset", n, seed, k_center_greedy(e, all, n, random_start, seed));
}

// Largest-remainder apportionment of N over group sizes; ties go to the lower index.
inline std::vector<std::size_t> proportional_budgets(std::size_t n, const std::vector<std::size_t>& sizes) {
  const std::size_t total = std::accumulate(sizes.begin(), sizes.end(), std::size_t{0});
  if (n > total) throw Error("selectors", "BadN", "N exceeds group total");
  std::vector<std::size_t> out(sizes.size(), 0);
  if (total == 0) return out;
  std::vector<std::pair<std::size_t, std::size_t>> rem;
  std::size_t given = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    out[k] = n * sizes[k] / total;
    given += out[k];
    rem.emplace_back(n * sizes[k] % total, k);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t i = 0; given < n; ++i) {
    ++out[rem[i].second];
    ++given;
  }
  return out;
}

// Cluster-based selection: k-means groups, proportional budgets, k-center greedy within each group.
inline SelectionManifest select_cbs(const Corpus& corpus, const EmbeddingMatrix& e, std::size_t n,
                                    std::size_t cluster_count, std::uint64_t seed, const KMeansOptions& opt = {}) {
  detail::check_n(n, e.rows());
  const auto model = kmeans(e, cluster_count, seed, opt);
  std::vector<std::vector<std::size_t>> members(cluster_count);
  for (std::size_t p = 0; p < e.rows(); ++p) members[model.labels[p]].push_back(p);
  std::vector<std::size_t> sizes;
  for (const auto& g : members) sizes.push_back(g.size());
  const auto budgets = proportional_budgets(n, sizes);
  std::vector<std::size_t> picks;
  for (std::size_t k = 0; k < cluster_count; ++k) {
    const auto chosen = k_center_greedy(e, members[k], budgets[k]);
    picks.insert(picks.end(), chosen.begin(), chosen.end());
  }
  return detail::baseline_manifest(corpus, "cbs", n, seed, picks);
}

inline constexpr double kDefaultGradeThreshold = 4.5;

// Scores every labeled record with the grader prompt and keeps those at or
// above `threshold` (top `cap` by score when set). Unparseable grades count as 0.
inline SelectionManifest grade_alpagasus(const Corpus& corpus, LlmClient& client,
                                         double threshold = kDefaultGradeThreshold,
                                         std::optional<std::size_t> cap = std::nullopt, std::size_t parallel = 0) {
  std::vector<RenderedPrompt> prompts;
  std::vector<std::string> texts;
  for (const auto& r : corpus) {
    prompts.push_back(render_grader_prompt(r));
    texts.push_back(prompts.back().text);
  }
  const auto exchanges = client.complete_all(texts, parallel);

  SelectionManifest m;
  m.method = "alpagasus";
  m.per_query.emplace();
  std::vector<std::pair<double, std::size_t>> kept;
  for (std::size_t p = 0; p < corpus.size(); ++p) {
    const auto& ex = exchanges[p];
    m.usage.add(ex);
    const auto score = parse_score(ex.reply);
    QueryRecord rec;
    rec.query_index = p;
    rec.query_size = 1;
    rec.budget = 1;
    rec.prompt_digest = sha256_hex(prompts[p].text);
    rec.reply_digest = sha256_hex(ex.reply);
    rec.parse_status = score ? "ok" : "empty";
    const double s = score.value_or(0.0);
    if (s >= threshold) {
      kept.emplace_back(s, p);
      rec.picked.push_back(corpus[p].id);
    }
    m.per_query->push_back(std::move(rec));
  }
  if (cap && kept.size() > *cap) {
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    kept.resize(*cap);
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second < b.second; });
  }
  for (const auto& [s, p] : kept) m.selected.push_back(corpus[p].id);
  m.n = m.selected.size();
  return m;
}

struct RankingResult {
  std::vector<std::string> ids;
  ParseStatus status = ParseStatus::kEmpty;
  bool completed = false;  // ids missing from the reply were appended in input order
  ChatExchange exchange;
};

inline RankingResult rank_instructions(const Corpus& corpus, const std::vector<std::size_t>& subset,
                                       LlmClient& client) {
  const auto prompt = render_ranking_prompt(detail::records_at(corpus, subset));
  RankingResult out;
  out.exchange = client.complete(prompt.text);
  const auto parsed = parse_ranking(out.exchange.reply, prompt);
  out.status = parsed.status;
  std::vector<bool> seen(subset.size(), false);
  for (std::size_t o : parsed.ordinals) {
    seen[o - 1] = true;
    out.ids.push_back(prompt.record_ids[o - 1]);
  }
  for (std::size_t i = 0; i < subset.size(); ++i) {
    if (!seen[i]) {
      out.ids.push_back(prompt.record_ids[i]);
      out.completed = true;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Score and generation files: either {"id": ..., "score"|"perplexity": x} /
// {"id": ..., "generations": [...]} per line, or {"<id>": value, ...} objects.

inline ScoreMap read_score_jsonl(std::istream& in) {
  ScoreMap out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("id") && (j.contains("score") || j.contains("perplexity"))) {
        const auto& v = j.contains("score") ? j["score"] : j["perplexity"];
        out[j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump()] = v.get<double>();
      } else {
        for (const auto& [k, v] : j.items()) out[k] = v.get<double>();
      }
    } catch (const nlohmann::json::exception&) {
      throw Error("selectors", "MalformedLine", std::to_string(line_no));
    }
  }
  return out;
}

inline ScoreMap load_scores(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("selectors", "FileNotFound", path);
  return read_score_jsonl(in);
}

inline GenerationMap read_generations_jsonl(std::istream& in) {
  GenerationMap out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("id") && j.contains("generations")) {
        out[j["id"].get<std::string>()] = j["generations"].get<std::vector<std::string>>();
      } else {
        for (const auto& [k, v] : j.items()) out[k] = v.get<std::vector<std::string>>();
      }
    } catch (const nlohmann::json::exception&) {
      throw Error("selectors", "MalformedLine", std::to_string(line_no));
    }
  }
  return out;
}

inline GenerationMap load_generations(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("selectors", "FileNotFound", path);
  return read_generations_jsonl(in);
}

}  // namespace instsel
