#pragma once

// Command-line front end: one structured JSON config, flag overrides, and one
// artifact per command. Shared by tools/instsel_main.cpp and the CLI tests.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "instsel/cluster.hpp"
#include "instsel/corpus.hpp"
#include "instsel/digest.hpp"
#include "instsel/embedding.hpp"
#include "instsel/error.hpp"
#include "instsel/llm.hpp"
#include "instsel/metrics.hpp"
#include "instsel/prompts.hpp"
#include "instsel/selectors.hpp"

namespace instsel::cli {

using nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

// Test seams: an injected transport replaces the configured LLM backend.
struct Hooks {
  std::shared_ptr<HttpTransport> llm_transport;
  std::shared_ptr<HttpTransport> embedding_transport;
  Sleeper sleeper;
};

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names = {"split",         "embed-import", "plan",     "select", "rank",
                                                  "grade",         "estimate-cost", "evaluate", "judge",  "stats"};
  return names;
}

inline std::string command_help(const std::string& name) {
  static const std::map<std::string, std::string> help = {
      {"split", "Seeded train/test split of a corpus"},
      {"embed-import", "Validate and align an embedding file, or fetch one from the embedding service"},
      {"plan", "Cluster the corpus and write the query plan"},
      {"select", "Run a selection method and write a manifest"},
      {"rank", "Ask the LLM to rank a small set of instructions"},
      {"grade", "Score every record with the LLM grader and keep the high scorers"},
      {"estimate-cost", "Dollar cost of a manifest's recorded token usage"},
      {"evaluate", "ROUGE-L and cosine scores of predictions against references"},
      {"judge", "Pairwise LLM judging in both presentation orders"},
      {"stats", "Diversity, perplexity and length of a selection"},
  };
  auto it = help.find(name);
  return it == help.end() ? std::string() : it->second;
}

inline const std::vector<std::string>& registered_methods() {
  static const std::vector<std::string> names = {"selectllm", "random",  "length", "perplexity", "diversity",
                                                  "openend",   "coreset", "cbs",    "alpagasus"};
  return names;
}

inline json default_config() {
  return json::parse(R"({
    "paths": {"output_dir": "out"},
    "selector": {"method": "selectllm", "C": 14, "N": 1000, "seed": 0, "threshold": 4.5, "mode": "long",
                 "plan_kind": "diverse", "query_size": 14, "random_start": false},
    "kmeans": {"max_iter": 100, "tol": 0.0001, "n_init": 1},
    "llm": {"backend": "http", "endpoint": "http://localhost:8000", "model": "gpt-3.5-turbo-0125",
            "temperature": 0.0, "max_tokens": 256, "timeout_s": 120.0,
            "retry": {"max_attempts": 5, "base_backoff_ms": 500.0},
            "api_key_env": "OPENAI_API_KEY", "require_api_key": false, "parallel": 4,
            "mock_reply": "garbage"},
    "rates": {"input_per_1k": 0.0005, "output_per_1k": 0.0015},
    "aliases": {"context": "input", "response": "output", "category": "source"},
    "embedding_service": {"endpoint": "http://localhost:8080", "model": "sentence-transformers/all-MiniLM-L6-v2",
                          "api_key_env": "", "batch_size": 64, "timeout_s": 60.0}
  })");
}

namespace detail {

inline json::json_pointer ptr(const std::string& dotted) {
  std::string p;
  std::stringstream ss(dotted);
  std::string part;
  while (std::getline(ss, part, '.')) p += "/" + part;
  return json::json_pointer(p);
}

[[noreturn]] inline void config_error(const std::string& msg) { throw Error("cli", "ConfigError", msg); }

enum class Kind { kString, kUInt, kDouble, kFlag };

struct OptionSpec {
  const char* flag;
  const char* key;  // dotted config path; empty = operational flag
  Kind kind;
  const char* help;
  const char* scope;  // comma-separated commands, "*" for all
};

inline const std::vector<OptionSpec>& option_specs() {
  static const std::vector<OptionSpec> specs = {
      {"--corpus", "paths.corpus", Kind::kString, "Corpus JSONL", "*"},
      {"--embeddings", "paths.embeddings", Kind::kString, "Embedding file (EMBD or JSONL)",
       "embed-import,plan,select,stats"},
      {"--scores", "paths.scores", Kind::kString, "Perplexity scores JSONL", "select,stats"},
      {"--generations", "paths.generations", Kind::kString, "Generations JSONL (open-endedness)", "select"},
      {"--cache-dir", "paths.cache_dir", Kind::kString, "LLM response cache directory", "select,rank,grade,judge"},
      {"--out-dir", "paths.output_dir", Kind::kString, "Directory for artifacts and the run log", "*"},
      {"--output", "paths.output", Kind::kString, "Artifact path (overrides the default under --out-dir)", "*"},
      {"--manifest", "paths.manifest", Kind::kString, "Input selection manifest", "estimate-cost,stats"},
      {"--rates", "paths.rates", Kind::kString, "Cost rates JSON", "select,estimate-cost"},
      {"--plan", "paths.plan", Kind::kString, "Replay a saved query plan", "select"},
      {"--predictions", "paths.predictions", Kind::kString, "Predictions JSONL {id, prediction}", "evaluate"},
      {"--references", "paths.references", Kind::kString, "Reference corpus JSONL with outputs", "evaluate"},
      {"--pred-vectors", "paths.pred_vectors", Kind::kString, "Prediction vectors JSONL {id, vector}", "evaluate"},
      {"--ref-vectors", "paths.ref_vectors", Kind::kString, "Reference vectors JSONL {id, vector}", "evaluate"},
      {"--pairs", "paths.pairs", Kind::kString, "Judge pairs JSONL {id, question, response_a, response_b}",
       "judge"},
      {"--method", "selector.method", Kind::kString, "Selection method", "select"},
      {"--n", "selector.N", Kind::kUInt, "Number of instructions to select", "select,plan"},
      {"--clusters", "selector.C", Kind::kUInt, "Cluster count C", "select,plan"},
      {"--seed", "selector.seed", Kind::kUInt, "Random seed", "*"},
      {"--n-ref", "selector.n_ref", Kind::kUInt, "Reference sample size (diversity)", "select"},
      {"--threshold", "selector.threshold", Kind::kDouble, "Grade keep threshold", "select,grade"},
      {"--cap", "selector.cap", Kind::kUInt, "Keep at most this many graded records", "select,grade"},
      {"--mode", "selector.mode", Kind::kString, "Length mode: long | short", "select"},
      {"--plan-kind", "selector.plan_kind", Kind::kString, "Query composition: diverse | similar", "select,plan"},
      {"--query-size", "selector.query_size", Kind::kUInt, "Query size for similar plans", "select,plan"},
      {"--random-start", "selector.random_start", Kind::kFlag, "Seeded random first pick (coreset)", "select"},
      {"--test-size", "selector.test_size", Kind::kUInt, "Test split size", "split"},
      {"--ids", "selector.ids", Kind::kString, "Comma-separated ids to rank", "rank"},
      {"--backend", "llm.backend", Kind::kString, "LLM backend: http | mock-oracle | mock-fixed",
       "select,rank,grade,judge"},
      {"--endpoint", "llm.endpoint", Kind::kString, "OpenAI-compatible base URL", "select,rank,grade,judge"},
      {"--model", "llm.model", Kind::kString, "Model name", "select,rank,grade,judge"},
      {"--temperature", "llm.temperature", Kind::kDouble, "Sampling temperature", "select,rank,grade,judge"},
      {"--max-tokens", "llm.max_tokens", Kind::kUInt, "Completion token limit", "select,rank,grade,judge"},
      {"--retry-attempts", "llm.retry.max_attempts", Kind::kUInt, "Attempts per request", "select,rank,grade,judge"},
      {"--backoff-ms", "llm.retry.base_backoff_ms", Kind::kDouble, "Base retry backoff", "select,rank,grade,judge"},
      {"--parallel", "llm.parallel", Kind::kUInt, "Concurrent requests P", "select,rank,grade,judge"},
      {"--mock-scores", "llm.mock_scores", Kind::kString, "Hidden scores JSONL for the mock-oracle backend",
       "select,rank,grade,judge"},
      {"--mock-reply", "llm.mock_reply", Kind::kString, "Reply text for the mock-fixed backend",
       "select,rank,grade,judge"},
      {"--from-service", "embedding_service.enabled", Kind::kFlag, "Fetch embeddings from the embedding service",
       "embed-import"},
      {"--batch-size", "embedding_service.batch_size", Kind::kUInt, "Embedding request batch size",
       "embed-import"},
      {"--no-cache", "", Kind::kFlag, "Bypass the response cache", "select,rank,grade,judge"},
      {"--force", "", Kind::kFlag, "Overwrite a manifest produced by a different config", "select,grade"},
      {"--dry-run", "", Kind::kFlag, "Print the query plan and estimated cost without calling the LLM", "select"},
  };
  return specs;
}

inline bool in_scope(const OptionSpec& s, const std::string& command) {
  const std::string scope = s.scope;
  if (scope == "*") return true;
  std::stringstream ss(scope);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item == command) return true;
  }
  return false;
}

// Keys that do not influence artifact contents.
inline json digest_view(const json& cfg) {
  json v = cfg;
  for (const char* key : {"/paths/output_dir", "/paths/output", "/paths/cache_dir", "/llm/parallel"}) {
    const json::json_pointer p(key);
    if (v.contains(p)) v[p.parent_pointer()].erase(p.back());
  }
  return v;
}

}  // namespace detail

// Resolved job: config (file + flag overrides) plus operational switches.
class Job {
 public:
  Job(std::string command, json cfg, bool no_cache, bool force, bool dry_run, const Hooks* hooks)
      : command_(std::move(command)),
        cfg_(std::move(cfg)),
        no_cache_(no_cache),
        force_(force),
        dry_run_(dry_run),
        hooks_(hooks) {
    digest_ = sha256_hex(json{{"command", command_}, {"config", detail::digest_view(cfg_)}}.dump());
  }

  const std::string& command() const noexcept { return command_; }
  const json& config() const noexcept { return cfg_; }
  const std::string& digest() const noexcept { return digest_; }
  bool force() const noexcept { return force_; }
  bool dry_run() const noexcept { return dry_run_; }

  bool has(const std::string& key) const {
    const auto p = detail::ptr(key);
    return cfg_.contains(p) && !cfg_.at(p).is_null();
  }

  template <typename T>
  T get(const std::string& key) const {
    if (!has(key)) detail::config_error("missing required setting " + key);
    try {
      return cfg_.at(detail::ptr(key)).get<T>();
    } catch (const json::exception&) {
      detail::config_error("setting " + key + " has the wrong type");
    }
  }

  std::string path(const std::string& key) const {
    const auto p = get<std::string>(key);
    if (!fs::exists(p)) detail::config_error(key + " does not exist: " + p);
    return p;
  }

  fs::path output_dir() const {
    fs::path dir = get<std::string>("paths.output_dir");
    fs::create_directories(dir);
    return dir;
  }

  fs::path output(const std::string& default_name) const {
    if (has("paths.output")) {
      fs::path p = get<std::string>("paths.output");
      if (p.has_parent_path()) fs::create_directories(p.parent_path());
      return p;
    }
    return output_dir() / default_name;
  }

  FieldAliases aliases() const {
    FieldAliases a;
    if (has("aliases")) {
      for (const auto& [k, v] : cfg_.at("aliases").items()) a[k] = v.get<std::string>();
    }
    return a;
  }

  Corpus corpus() const { return load_jsonl(path("paths.corpus"), aliases()); }

  KMeansOptions kmeans() const {
    KMeansOptions k;
    k.max_iter = get<std::size_t>("kmeans.max_iter");
    k.tol = get<double>("kmeans.tol");
    k.n_init = get<std::size_t>("kmeans.n_init");
    return k;
  }

  LlmConfig llm_config() const {
    LlmConfig c;
    c.endpoint = get<std::string>("llm.endpoint");
    c.model = get<std::string>("llm.model");
    c.temperature = get<double>("llm.temperature");
    c.max_tokens = get<int>("llm.max_tokens");
    c.timeout_s = get<double>("llm.timeout_s");
    c.retry.max_attempts = get<int>("llm.retry.max_attempts");
    c.retry.base_backoff_ms = get<double>("llm.retry.base_backoff_ms");
    c.api_key_env = get<std::string>("llm.api_key_env");
    c.require_api_key = get<bool>("llm.require_api_key");
    c.parallel = get<std::size_t>("llm.parallel");
    return c;
  }

  CostRates rates() const {
    json r = cfg_.value("rates", json::object());
    if (has("paths.rates")) {
      std::ifstream in(path("paths.rates"));
      try {
        r = json::parse(in);
      } catch (const json::exception& e) {
        detail::config_error(std::string("rates file: ") + e.what());
      }
    }
    if (r.contains("blended_per_million")) return blended_rates(r["blended_per_million"].get<double>());
    CostRates c;
    c.input_per_1k = r.value("input_per_1k", 0.0);
    c.output_per_1k = r.value("output_per_1k", 0.0);
    if (c.input_per_1k < 0.0 || c.output_per_1k < 0.0) detail::config_error("rates must be >= 0");
    return c;
  }

  // Corpus is needed only by the mock-oracle backend.
  std::unique_ptr<LlmClient> llm_client(const Corpus* corpus) const {
    auto cfg = llm_config();
    std::shared_ptr<HttpTransport> transport;
    if (hooks_ && hooks_->llm_transport) {
      transport = hooks_->llm_transport;
    } else {
      const auto backend = get<std::string>("llm.backend");
      if (backend == "http") {
        transport = std::make_shared<HttplibTransport>(cfg.endpoint, cfg.timeout_s);
      } else if (backend == "mock-oracle") {
        if (!corpus) detail::config_error("mock-oracle backend needs a corpus");
        transport = mock_oracle(*corpus, load_scores(path("llm.mock_scores")));
      } else if (backend == "mock-fixed") {
        transport = fixed_reply_backend(get<std::string>("llm.mock_reply"));
      } else {
        detail::config_error("unknown llm backend " + backend);
      }
    }
    std::shared_ptr<ResponseCache> cache;
    if (!no_cache_) {
      cache = std::make_shared<ResponseCache>(has("paths.cache_dir") ? fs::path(get<std::string>("paths.cache_dir"))
                                                                     : output_dir() / "cache");
    }
    Sleeper sleeper = hooks_ && hooks_->sleeper ? hooks_->sleeper : real_sleeper();
    return std::make_unique<LlmClient>(cfg, transport, cache, sleeper);
  }

  const Hooks* hooks() const noexcept { return hooks_; }

  // Artifacts are pretty-printed with a trailing newline.
  void write_artifact(const fs::path& p, json artifact) const {
    artifact["config_digest"] = digest_;
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("cli", "WriteFailed", p.string());
    out << artifact.dump(2) << '\n';
  }

  void log_run(int status, const std::string& artifact) const {
    std::error_code ec;
    fs::path dir = cfg_.at(detail::ptr("paths.output_dir")).get<std::string>();
    fs::create_directories(dir, ec);
    std::ofstream log(dir / "run-log.jsonl", std::ios::app);
    if (!log) return;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream ts;
    ts << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    log << json{{"time", ts.str()},
                {"command", command_},
                {"config_digest", digest_},
                {"status", status},
                {"artifact", artifact}}
               .dump()
        << '\n';
  }

 private:
  std::string command_;
  json cfg_;
  std::string digest_;
  bool no_cache_;
  bool force_;
  bool dry_run_;
  const Hooks* hooks_;
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    auto t = instsel::detail::trim(item);
    if (!t.empty()) out.emplace_back(t);
  }
  return out;
}

inline EmbeddingMatrix load_embeddings(const Job& job, const Corpus& corpus) {
  return import_embeddings(job.path("paths.embeddings"), corpus);
}

inline PlanKind plan_kind(const Job& job) {
  const auto k = job.get<std::string>("selector.plan_kind");
  if (k == "diverse") return PlanKind::kDiverse;
  if (k == "similar") return PlanKind::kSimilar;
  config_error("plan_kind must be diverse or similar, got " + k);
}

inline SelectLlmOptions select_llm_options(const Job& job) {
  SelectLlmOptions o;
  o.clusters = job.get<std::size_t>("selector.C");
  o.n = job.get<std::size_t>("selector.N");
  o.seed = job.get<std::uint64_t>("selector.seed");
  o.plan_kind = plan_kind(job);
  o.similar_query_size = job.get<std::size_t>("selector.query_size");
  o.kmeans = job.kmeans();
  return o;
}

inline QueryPlan load_or_build_plan(const Job& job, const Corpus& corpus) {
  if (job.has("paths.plan")) {
    std::ifstream in(job.path("paths.plan"));
    json j;
    try {
      j = json::parse(in);
    } catch (const json::exception& e) {
      throw Error("cluster", "BadPlan", e.what());
    }
    return plan_from_json(j, corpus.ids());
  }
  return plan_for(load_embeddings(job, corpus), select_llm_options(job));
}

inline json usage_json(const Usage& u) {
  return {{"prompt_tokens", u.prompt_tokens},
          {"completion_tokens", u.completion_tokens},
          {"llm_calls", u.llm_calls},
          {"estimated", u.estimated}};
}

// Refuses to replace a manifest written under a different config unless forced.
inline void guard_manifest(const Job& job, const fs::path& p) {
  if (!fs::exists(p) || job.force()) return;
  std::ifstream in(p);
  try {
    const auto j = json::parse(in);
    if (j.value("config_digest", "") == job.digest()) return;
  } catch (const json::exception&) {
  }
  throw Error("cli", "ManifestExists",
              p.string() + " was produced by a different config; pass --force to overwrite");
}

inline void write_manifest(const Job& job, SelectionManifest m, const fs::path& p) {
  m.config = digest_view(job.config());
  m.config_digest = job.digest();
  job.write_artifact(p, to_json(m));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Commands. Each returns the artifact path it wrote.

inline std::string cmd_split(const Job& job, std::ostream& out) {
  const auto corpus = job.corpus();
  const auto parts = split(corpus, job.get<std::size_t>("selector.test_size"), job.get<std::uint64_t>("selector.seed"));
  const auto dir = job.output_dir();
  save_jsonl(parts.train, (dir / "train.jsonl").string());
  save_jsonl(parts.test, (dir / "test.jsonl").string());
  const auto report = job.output("split.json");
  job.write_artifact(report, {{"train", (dir / "train.jsonl").string()},
                              {"test", (dir / "test.jsonl").string()},
                              {"train_size", parts.train.size()},
                              {"test_size", parts.test.size()}});
  out << "train=" << parts.train.size() << " test=" << parts.test.size() << '\n';
  return report.string();
}

inline std::string cmd_embed_import(const Job& job, std::ostream& out) {
  const auto corpus = job.corpus();
  EmbeddingMatrix e;
  std::string source;
  json extra = json::object();
  if (job.has("embedding_service.enabled") && job.get<bool>("embedding_service.enabled")) {
    EmbeddingServiceConfig cfg;
    cfg.endpoint = job.get<std::string>("embedding_service.endpoint");
    cfg.model = job.get<std::string>("embedding_service.model");
    cfg.api_key_env = job.get<std::string>("embedding_service.api_key_env");
    cfg.batch_size = job.get<std::size_t>("embedding_service.batch_size");
    cfg.timeout_s = job.get<double>("embedding_service.timeout_s");
    cfg.retry = job.llm_config().retry;
    std::shared_ptr<HttpTransport> transport =
        job.hooks() && job.hooks()->embedding_transport
            ? job.hooks()->embedding_transport
            : std::make_shared<HttplibTransport>(cfg.endpoint, cfg.timeout_s);
    Retrier retrier(cfg.retry, job.hooks() && job.hooks()->sleeper ? job.hooks()->sleeper : real_sleeper());
    FetchStats stats;
    e = fetch_embeddings(cfg, corpus, *transport, retrier, &stats);
    const auto embd = job.output_dir() / "embeddings.embd";
    save_embd(e, embd.string());
    source = "service";
    extra = {{"written", embd.string()}, {"requests", stats.requests}, {"batch_sizes", stats.batch_sizes}};
  } else {
    e = detail::load_embeddings(job, corpus);
    source = job.get<std::string>("paths.embeddings");
  }
  json report{{"n", e.rows()}, {"dim", e.dim()}, {"source", source}, {"aligned", true}};
  report.update(extra);
  const auto p = job.output("embeddings-report.json");
  job.write_artifact(p, report);
  out << "n=" << e.rows() << " dim=" << e.dim() << " aligned\n";
  return p.string();
}

inline std::string cmd_plan(const Job& job, std::ostream& out) {
  const auto corpus = job.corpus();
  const auto plan = plan_for(detail::load_embeddings(job, corpus), detail::select_llm_options(job));
  const auto p = job.output("plan.json");
  job.write_artifact(p, to_json(plan));
  out << "T=" << plan.queries.size() << " C=" << plan.clusters << " kind=" << to_string(plan.kind) << '\n';
  return p.string();
}

inline std::string cmd_grade(const Job& job, std::ostream& out) {
  const auto corpus = job.corpus();
  const auto p = job.output("manifest.json");
  detail::guard_manifest(job, p);
  auto client = job.llm_client(&corpus);
  std::optional<std::size_t> cap;
  if (job.has("selector.cap")) cap = job.get<std::size_t>("selector.cap");
  auto m = grade_alpagasus(corpus, *client, job.get<double>("selector.threshold"), cap);
  detail::write_manifest(job, m, p);
  out << "kept " << m.selected.size() << " of " << corpus.size() << " -> " << p.string() << '\n';
  return p.string();
}

inline std::string cmd_select(const Job& job, std::ostream& out) {
  const auto method = job.get<std::string>("selector.method");
  const auto& methods = registered_methods();
  if (std::find(methods.begin(), methods.end(), method) == methods.end()) {
    detail::config_error("unknown selection method '" + method + "'");
  }
  if (method == "alpagasus") return cmd_grade(job, out);

  const auto corpus = job.corpus();
  const auto n = job.get<std::size_t>("selector.N");
  const auto seed = job.get<std::uint64_t>("selector.seed");

  if (job.dry_run()) {
    if (method != "selectllm") detail::config_error("--dry-run applies to the selectllm method only");
    const auto plan = detail::load_or_build_plan(job, corpus);
    const auto s = dry_run(corpus, plan, n, job.rates());
    json summary{{"T", s.query_count},
                 {"budgets", s.budgets},
                 {"prompted_queries", s.prompted_queries},
                 {"estimated_prompt_tokens", s.prompt_tokens},
                 {"estimated_completion_tokens", s.completion_tokens},
                 {"estimated_cost_usd", s.cost}};
    out << summary.dump(2) << '\n';
    return {};
  }

  const auto p = job.output("manifest.json");
  detail::guard_manifest(job, p);
  SelectionManifest m;
  if (method == "selectllm") {
    const auto plan = detail::load_or_build_plan(job, corpus);
    auto client = job.llm_client(&corpus);
    m = select_llm(corpus, plan, n, seed, *client);
  } else if (method == "random") {
    m = select_random(corpus, n, seed);
  } else if (method == "length") {
    const auto mode = job.get<std::string>("selector.mode");
    if (mode != "long" && mode != "short") detail::config_error("mode must be long or short");
    m = select_length(corpus, n, mode == "long" ? LengthMode::kLong : LengthMode::kShort);
  } else if (method == "perplexity") {
    m = select_perplexity(corpus, load_scores(job.path("paths.scores")), n);
  } else if (method == "diversity") {
    const auto n_ref =
        job.has("selector.n_ref") ? job.get<std::size_t>("selector.n_ref") : default_reference_size(corpus.size());
    m = select_diversity(corpus, n, n_ref, seed);
  } else if (method == "openend") {
    GenerationMap gens;
    if (job.has("paths.generations")) {
      gens = load_generations(job.path("paths.generations"));
    } else {
      auto client = job.llm_client(&corpus);
      gens = generate_openend(corpus, *client);
    }
    m = select_openend(corpus, gens, n);
  } else if (method == "coreset") {
    m = select_coreset(corpus, detail::load_embeddings(job, corpus), n, seed, job.get<bool>("selector.random_start"));
  } else if (method == "cbs") {
    m = select_cbs(corpus, detail::load_embeddings(job, corpus), n, job.get<std::size_t>("selector.C"), seed,
                   job.kmeans());
  }
  detail::write_manifest(job, m, p);
  out << "selected " << m.selected.size() << " ids -> " << p.string() << '\n';
  return p.string();
}

inline std::string cmd_rank(const Job& job, std::ostream& out) {
  const auto corpus = job.corpus();
  std::vector<std::size_t> subset;
  if (job.has("selector.ids")) {
    for (const auto& id : detail::split_csv(job.get<std::string>("selector.ids"))) {
      auto pos = corpus.position(id);
      if (!pos) throw Error("corpus", "UnknownId", id);
      subset.push_back(*pos);
    }
  } else {
    if (corpus.size() > 50) detail::config_error("pass --ids to rank a corpus of more than 50 records");
    for (std::size_t i = 0; i < corpus.size(); ++i) subset.push_back(i);
  }
  if (subset.empty()) detail::config_error("nothing to rank");
  auto client = job.llm_client(&corpus);
  const auto r = rank_instructions(corpus, subset, *client);
  const auto p = job.output("ranking.json");
  job.write_artifact(p, {{"ranking", r.ids},
                         {"parse_status", to_string(r.status)},
                         {"completed", r.completed},
                         {"reply_digest", sha256_hex(r.exchange.reply)}});
  for (std::size_t i = 0; i < r.ids.size(); ++i) out << (i ? " > " : "") << r.ids[i];
  out << '\n';
  return p.string();
}

inline std::string cmd_estimate_cost(const Job& job, std::ostream& out) {
  std::ifstream in(job.path("paths.manifest"));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("selectors", "BadManifest", e.what());
  }
  const auto m = manifest_from_json(j);
  const auto rates = job.rates();
  const double cost = estimate_cost(m.usage.prompt_tokens, m.usage.completion_tokens, rates);
  const auto p = job.output("cost.json");
  job.write_artifact(p, {{"method", m.method},
                         {"usage", detail::usage_json(m.usage)},
                         {"rates", {{"input_per_1k", rates.input_per_1k}, {"output_per_1k", rates.output_per_1k}}},
                         {"cost_usd", cost}});
  out << "cost_usd=" << std::fixed << std::setprecision(2) << cost << " prompt_tokens=" << m.usage.prompt_tokens
      << " completion_tokens=" << m.usage.completion_tokens << '\n';
  return p.string();
}

inline std::string cmd_evaluate(const Job& job, std::ostream& out) {
  std::vector<TextItem> preds;
  {
    std::ifstream in(job.path("paths.predictions"));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (instsel::detail::trim(line).empty()) continue;
      try {
        const auto o = json::parse(line);
        preds.push_back({o.at("id").get<std::string>(), o.at("prediction").get<std::string>()});
      } catch (const json::exception&) {
        throw Error("metrics", "MalformedLine", std::to_string(line_no));
      }
    }
  }
  const auto refs_corpus = load_jsonl(job.path("paths.references"), job.aliases());
  std::vector<TextItem> refs;
  for (const auto& r : refs_corpus) {
    if (!r.response) throw Error("metrics", "MissingReference", r.id);
    refs.push_back({r.id, *r.response});
  }
  auto read_vectors = [&](const std::string& key) {
    VectorMap v;
    std::ifstream in(job.path(key));
    std::string line;
    while (std::getline(in, line)) {
      if (instsel::detail::trim(line).empty()) continue;
      try {
        const auto o = json::parse(line);
        v[o.at("id").get<std::string>()] = o.at("vector").get<std::vector<float>>();
      } catch (const json::exception&) {
        throw Error("metrics", "MalformedLine", key);
      }
    }
    return v;
  };
  std::optional<VectorMap> pv, rv;
  if (job.has("paths.pred_vectors") && job.has("paths.ref_vectors")) {
    pv = read_vectors("paths.pred_vectors");
    rv = read_vectors("paths.ref_vectors");
  }
  const auto report = evaluate_responses(preds, refs, pv ? &*pv : nullptr, rv ? &*rv : nullptr);
  const auto p = job.output("eval.json");
  job.write_artifact(p, to_json(report));
  out << "n=" << report.n_pairs << " rouge_l_f1=" << report.mean_rouge_l_f1;
  if (report.mean_cosine) out << " cosine=" << *report.mean_cosine;
  out << '\n';
  return p.string();
}

inline std::string cmd_judge(const Job& job, std::ostream& out) {
  struct Item {
    std::string id, question, a, b;
  };
  std::vector<Item> items;
  {
    std::ifstream in(job.path("paths.pairs"));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (instsel::detail::trim(line).empty()) continue;
      try {
        const auto o = json::parse(line);
        items.push_back({o.at("id").get<std::string>(), o.at("question").get<std::string>(),
                         o.at("response_a").get<std::string>(), o.at("response_b").get<std::string>()});
      } catch (const json::exception&) {
        throw Error("metrics", "MalformedLine", std::to_string(line_no));
      }
    }
  }
  std::vector<std::string> prompts;
  for (const auto& it : items) {
    prompts.push_back(render_judge_prompt(it.a, it.b, it.question).text);
    prompts.push_back(render_judge_prompt(it.b, it.a, it.question).text);
  }
  auto client = job.llm_client(nullptr);
  const auto replies = client->complete_all(prompts);
  std::vector<VerdictPair> verdicts;
  json per_pair = json::array();
  for (std::size_t i = 0; i < items.size(); ++i) {
    VerdictPair v{parse_judge(replies[2 * i].reply), parse_judge(replies[2 * i + 1].reply)};
    verdicts.push_back(v);
    const auto single = judge_tally({v});
    per_pair.push_back({{"id", items[i].id},
                        {"forward", to_string(v.forward)},
                        {"reversed", to_string(v.reversed)},
                        {"outcome", single.wins ? "win" : single.losses ? "lose" : "tie"}});
  }
  const auto tally = judge_tally(verdicts);
  const auto p = job.output("judge.json");
  job.write_artifact(p, {{"tally", to_json(tally)}, {"per_pair", per_pair}});
  out << std::fixed << std::setprecision(1) << "win=" << tally.win_pct << " tie=" << tally.tie_pct
      << " lose=" << tally.lose_pct << " n=" << tally.n << '\n';
  return p.string();
}

inline std::string cmd_stats(const Job& job, std::ostream& out) {
  const auto corpus = job.corpus();
  std::ifstream in(job.path("paths.manifest"));
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error("selectors", "BadManifest", e.what());
  }
  const auto m = manifest_from_json(j);
  std::optional<EmbeddingMatrix> e;
  if (job.has("paths.embeddings")) e = detail::load_embeddings(job, corpus);
  std::optional<ScoreMap> ppl;
  if (job.has("paths.scores")) ppl = load_scores(job.path("paths.scores"));
  const auto s = selection_stats(corpus, m.selected, e ? &*e : nullptr, ppl ? &*ppl : nullptr);
  json r{{"method", m.method}, {"n", m.selected.size()}, {"mean_length", s.mean_length}};
  r["diversity"] = s.diversity ? json(*s.diversity) : json(nullptr);
  r["mean_perplexity"] = s.mean_perplexity ? json(*s.mean_perplexity) : json(nullptr);
  const auto p = job.output("stats.json");
  job.write_artifact(p, r);
  out << r.dump() << '\n';
  return p.string();
}

inline int report_error(std::ostream& err, const std::string& module, const std::string& code,
                        const std::string& message, int status) {
  err << json{{"error", {{"module", module}, {"code", code}, {"message", message}}}}.dump() << '\n';
  return status;
}

// Entry point; returns the process exit status.
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
               const Hooks* hooks = nullptr) {
  CLI::App app{"Instruction selection toolkit: clustered LLM batch selection, baselines and evaluation", "instsel"};
  app.require_subcommand(1);
  std::string config_path;
  bool no_cache = false, force = false, dry = false;
  struct Bound {
    const detail::OptionSpec* spec;
    CLI::Option* opt;
    std::string value;
    bool flag = false;
  };
  std::vector<std::unique_ptr<Bound>> bound;
  std::map<std::string, CLI::App*> subs;
  for (const auto& name : commands()) {
    auto* sub = app.add_subcommand(name, command_help(name));
    sub->add_option("--config", config_path, "Job config JSON");
    for (const auto& spec : detail::option_specs()) {
      if (!detail::in_scope(spec, name)) continue;
      auto b = std::make_unique<Bound>();
      b->spec = &spec;
      const std::string flag = spec.flag;
      if (spec.kind == detail::Kind::kFlag) {
        if (flag == "--no-cache") {
          b->opt = sub->add_flag(flag, no_cache, spec.help);
        } else if (flag == "--force") {
          b->opt = sub->add_flag(flag, force, spec.help);
        } else if (flag == "--dry-run") {
          b->opt = sub->add_flag(flag, dry, spec.help);
        } else {
          b->opt = sub->add_flag(flag, b->flag, spec.help);
        }
      } else {
        // repeated flags: the last one wins
        b->opt = sub->add_option(flag, b->value, spec.help)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
      }
      bound.push_back(std::move(b));
    }
    subs[name] = sub;
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    for (const auto& [name, sub] : subs) {
      if (sub->parsed()) {
        out << sub->help();
        return kExitOk;
      }
    }
    out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    return report_error(err, "cli", "UsageError", e.what(), kExitUsage);
  }

  std::string command;
  for (const auto& [name, sub] : subs) {
    if (sub->parsed()) command = name;
  }

  std::unique_ptr<Job> job;
  try {
    json cfg = default_config();
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      if (!in) detail::config_error("config file not found: " + config_path);
      try {
        cfg.merge_patch(json::parse(in));
      } catch (const json::exception& e) {
        detail::config_error(std::string("config file: ") + e.what());
      }
    }
    for (const auto& b : bound) {
      if (b->opt->count() == 0 || std::string(b->spec->key).empty()) continue;
      const auto p = detail::ptr(b->spec->key);
      switch (b->spec->kind) {
        case detail::Kind::kString: cfg[p] = b->value; break;
        case detail::Kind::kUInt:
          try {
            if (!b->value.empty() && b->value[0] == '-') throw std::invalid_argument("negative");
            std::size_t used = 0;
            const auto v = std::stoull(b->value, &used);
            if (used != b->value.size()) throw std::invalid_argument("trailing");
            cfg[p] = v;
          } catch (const std::exception&) {
            detail::config_error(std::string(b->spec->flag) + " expects a nonnegative integer");
          }
          break;
        case detail::Kind::kDouble:
          try {
            std::size_t used = 0;
            const auto v = std::stod(b->value, &used);
            if (used != b->value.size()) throw std::invalid_argument("trailing");
            cfg[p] = v;
          } catch (const std::exception&) {
            detail::config_error(std::string(b->spec->flag) + " expects a number");
          }
          break;
        case detail::Kind::kFlag: cfg[p] = true; break;
      }
    }
    job = std::make_unique<Job>(command, cfg, no_cache, force, dry, hooks);
    std::string artifact;
    if (command == "split") artifact = cmd_split(*job, out);
    else if (command == "embed-import") artifact = cmd_embed_import(*job, out);
    else if (command == "plan") artifact = cmd_plan(*job, out);
    else if (command == "select") artifact = cmd_select(*job, out);
    else if (command == "rank") artifact = cmd_rank(*job, out);
    else if (command == "grade") artifact = cmd_grade(*job, out);
    else if (command == "estimate-cost") artifact = cmd_estimate_cost(*job, out);
    else if (command == "evaluate") artifact = cmd_evaluate(*job, out);
    else if (command == "judge") artifact = cmd_judge(*job, out);
    else if (command == "stats") artifact = cmd_stats(*job, out);
    if (!job->dry_run()) job->log_run(kExitOk, artifact);
    return kExitOk;
  } catch (const Error& e) {
    const bool usage = e.module() == "cli" && (e.code() == "ConfigError" || e.code() == "ManifestExists");
    const int status = usage ? kExitUsage : kExitRuntime;
    if (job) job->log_run(status, "");
    return report_error(err, e.module(), e.code(), e.detail(), status);
  } catch (const std::exception& e) {
    if (job) job->log_run(kExitRuntime, "");
    return report_error(err, "cli", "RuntimeError", e.what(), kExitRuntime);
  }
}

inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, out, err);
}

}  // namespace instsel::cli
