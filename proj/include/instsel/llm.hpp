#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "instsel/corpus.hpp"
#include "instsel/digest.hpp"
#include "instsel/error.hpp"
#include "instsel/http.hpp"

namespace instsel {

struct LlmConfig {
  std::string endpoint = "http://localhost:8000";
  std::string model = "gpt-3.5-turbo-0125";
  double temperature = 0.0;
  int max_tokens = 256;
  double timeout_s = 120.0;
  RetryPolicy retry;
  std::string api_key_env = "OPENAI_API_KEY";
  bool require_api_key = false;
  std::size_t parallel = 4;
};

struct ChatExchange {
  std::string prompt;
  std::string reply;
  std::size_t prompt_tokens = 0;
  std::size_t completion_tokens = 0;
  bool usage_estimated = false;
  double latency_ms = 0.0;
  bool cache_hit = false;
  int attempts = 0;
};

struct CostRates {
  double input_per_1k = 0.0;   // dollars per 1,000 prompt tokens
  double output_per_1k = 0.0;  // dollars per 1,000 completion tokens
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

// ceil(1.3 x whitespace-delimited words), in integer arithmetic.
inline std::size_t count_tokens(std::string_view text) {
  std::size_t words = 0;
  bool in_word = false;
  for (unsigned char c : text) {
    const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
    if (!space && !in_word) ++words;
    in_word = !space;
  }
  return (words * 13 + 9) / 10;
}

// Rounded to cents.
inline double estimate_cost(std::size_t prompt_tokens, std::size_t completion_tokens, const CostRates& rates) {
  const double dollars = static_cast<double>(prompt_tokens) / 1000.0 * rates.input_per_1k +
                         static_cast<double>(completion_tokens) / 1000.0 * rates.output_per_1k;
  return std::round(dollars * 100.0) / 100.0;
}

// Both rates set to one blended dollars-per-million figure.
inline CostRates blended_rates(double dollars_per_million) {
  return {dollars_per_million / 1000.0, dollars_per_million / 1000.0};
}

inline std::string chat_request_body(const LlmConfig& cfg, std::string_view prompt) {
  nlohmann::json req;
  req["model"] = cfg.model;
  req["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", std::string(prompt)}}});
  req["temperature"] = cfg.temperature;
  req["max_tokens"] = cfg.max_tokens;
  return req.dump();
}

// Extracts the single user message of a chat-completion request.
inline std::string chat_request_prompt(const std::string& body) {
  const auto req = nlohmann::json::parse(body);
  return req.at("messages").back().at("content").get<std::string>();
}

inline std::string chat_response_body(const std::string& model, const std::string& reply,
                                      std::optional<std::pair<std::size_t, std::size_t>> usage) {
  nlohmann::json res;
  res["id"] = "chatcmpl-local";
  res["object"] = "chat.completion";
  res["model"] = model;
  res["choices"] = nlohmann::json::array(
      {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", reply}}}, {"finish_reason", "stop"}}});
  if (usage) {
    res["usage"] = {{"prompt_tokens", usage->first},
                    {"completion_tokens", usage->second},
                    {"total_tokens", usage->first + usage->second}};
  }
  return res.dump();
}

inline std::string chat_path(const std::string& endpoint) {
  const auto prefix = split_base_url(endpoint).second;
  if (prefix.size() >= 3 && prefix.compare(prefix.size() - 3, 3, "/v1") == 0) return "/chat/completions";
  return "/v1/chat/completions";
}

class ResponseCache {
 public:
  // Empty directory = in-memory only.
  explicit ResponseCache(std::filesystem::path dir = {}) : dir_(std::move(dir)) {
    if (!dir_.empty()) std::filesystem::create_directories(dir_);
  }

  std::optional<ChatExchange> get(const std::string& key) {
    {
      std::lock_guard lock(mu_);
      auto it = memory_.find(key);
      if (it != memory_.end()) return it->second;
    }
    if (dir_.empty()) return std::nullopt;
    std::ifstream in(file_for(key));
    if (!in) return std::nullopt;
    try {
      const auto j = nlohmann::json::parse(in);
      ChatExchange ex;
      ex.prompt = j.at("prompt").get<std::string>();
      ex.reply = j.at("reply").get<std::string>();
      ex.prompt_tokens = j.at("prompt_tokens").get<std::size_t>();
      ex.completion_tokens = j.at("completion_tokens").get<std::size_t>();
      ex.usage_estimated = j.at("usage_estimated").get<bool>();
      ex.latency_ms = j.value("latency_ms", 0.0);
      ex.attempts = j.value("attempts", 1);
      return ex;
    } catch (const nlohmann::json::exception&) {
      return std::nullopt;  // corrupt entry: refetch and overwrite
    }
  }

  void put(const std::string& key, const ChatExchange& ex) {
    {
      std::lock_guard lock(mu_);
      memory_[key] = ex;
    }
    if (dir_.empty()) return;
    nlohmann::json j{{"key", key},
                     {"prompt", ex.prompt},
                     {"reply", ex.reply},
                     {"prompt_tokens", ex.prompt_tokens},
                     {"completion_tokens", ex.completion_tokens},
                     {"usage_estimated", ex.usage_estimated},
                     {"latency_ms", ex.latency_ms},
                     {"attempts", ex.attempts}};
    const auto target = file_for(key);
    std::filesystem::create_directories(target.parent_path());
    std::ostringstream tid;
    tid << std::this_thread::get_id();
    const auto tmp = target.string() + ".tmp." + tid.str();
    {
      std::ofstream out(tmp, std::ios::binary);
      if (!out) throw Error("llm", "CacheWriteFailed", tmp);
      out << j.dump(2) << '\n';
    }
    std::filesystem::rename(tmp, target);
  }

  // Serializes work on one key so concurrent identical requests hit the network once.
  std::mutex& key_lock(const std::string& key) {
    std::lock_guard lock(mu_);
    auto& slot = key_locks_[key];
    if (!slot) slot = std::make_unique<std::mutex>();
    return *slot;
  }

 private:
  std::filesystem::path file_for(const std::string& key) const { return dir_ / key.substr(0, 2) / (key + ".json"); }

  std::filesystem::path dir_;
  std::mutex mu_;
  std::unordered_map<std::string, ChatExchange> memory_;
  std::unordered_map<std::string, std::unique_ptr<std::mutex>> key_locks_;
};

struct ClientStats {
  std::size_t requests = 0;       // complete() calls
  std::size_t cache_hits = 0;
  std::size_t network_calls = 0;  // requests that reached the transport
  std::size_t http_attempts = 0;
};

class LlmClient {
 public:
  LlmClient(LlmConfig cfg, std::shared_ptr<HttpTransport> transport, std::shared_ptr<ResponseCache> cache = nullptr,
            Sleeper sleeper = real_sleeper(), TokenCounter counter = count_tokens)
      : cfg_(std::move(cfg)),
        transport_(std::move(transport)),
        cache_(std::move(cache)),
        retrier_(cfg_.retry, std::move(sleeper)),
        counter_(std::move(counter)) {
    if (cfg_.temperature < 0.0) throw Error("llm", "ConfigError", "temperature must be >= 0");
    if (cfg_.retry.max_attempts < 1) throw Error("llm", "ConfigError", "retry attempts must be >= 1");
  }

  const LlmConfig& config() const noexcept { return cfg_; }

  // digest(model, temperature, max_tokens, prompt[, sample])
  std::string cache_key(std::string_view prompt, std::size_t sample = 0) const {
    nlohmann::json k{{"model", cfg_.model},
                     {"temperature", cfg_.temperature},
                     {"max_tokens", cfg_.max_tokens},
                     {"prompt", std::string(prompt)}};
    if (sample) k["sample"] = sample;
    return sha256_hex(k.dump());
  }

  // `sample` distinguishes repeated draws of one prompt at temperature > 0.
  ChatExchange complete(const std::string& prompt, std::size_t sample = 0) {
    bump(&ClientStats::requests);
    if (!cache_) return fetch(prompt);
    const auto key = cache_key(prompt, sample);
    std::lock_guard key_guard(cache_->key_lock(key));
    if (auto hit = cache_->get(key)) {
      bump(&ClientStats::cache_hits);
      hit->cache_hit = true;
      hit->latency_ms = 0.0;
      return *hit;
    }
    auto ex = fetch(prompt);
    cache_->put(key, ex);
    return ex;
  }

  // Results come back in input order regardless of completion order.
  std::vector<ChatExchange> complete_all(const std::vector<std::string>& prompts, std::size_t parallel = 0) {
    if (parallel == 0) parallel = cfg_.parallel;
    parallel = std::clamp<std::size_t>(parallel, 1, std::max<std::size_t>(prompts.size(), 1));
    std::vector<ChatExchange> out(prompts.size());
    std::vector<std::exception_ptr> errors(prompts.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (std::size_t i = next++; i < prompts.size(); i = next++) {
        try {
          out[i] = complete(prompts[i]);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    };
    if (parallel == 1) {
      worker();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < parallel; ++t) pool.emplace_back(worker);
      for (auto& th : pool) th.join();
    }
    for (auto& e : errors) {
      if (e) std::rethrow_exception(e);
    }
    return out;
  }

  ClientStats stats() const {
    std::lock_guard lock(stats_mu_);
    return stats_;
  }

 private:
  void bump(std::size_t ClientStats::*field, std::size_t by = 1) {
    std::lock_guard lock(stats_mu_);
    stats_.*field += by;
  }

  ChatExchange fetch(const std::string& prompt) {
    Headers headers{{"Content-Type", "application/json"}};
    if (!cfg_.api_key_env.empty()) {
      const char* key = std::getenv(cfg_.api_key_env.c_str());
      if (key && *key) {
        headers["Authorization"] = std::string("Bearer ") + key;
      } else if (cfg_.require_api_key) {
        throw Error("llm", "AuthError", "environment variable " + cfg_.api_key_env + " is not set");
      }
    }
    bump(&ClientStats::network_calls);
    const auto start = std::chrono::steady_clock::now();
    RetryOutcome outcome;
    try {
      outcome = retrier_.post(*transport_, "llm", chat_path(cfg_.endpoint), chat_request_body(cfg_, prompt), headers);
    } catch (...) {
      bump(&ClientStats::http_attempts, static_cast<std::size_t>(cfg_.retry.max_attempts));
      throw;
    }
    bump(&ClientStats::http_attempts, static_cast<std::size_t>(outcome.attempts));
    const auto elapsed = std::chrono::steady_clock::now() - start;

    ChatExchange ex;
    ex.prompt = prompt;
    ex.attempts = outcome.attempts;
    ex.latency_ms = std::chrono::duration<double, std::milli>(elapsed).count();
    try {
      const auto res = nlohmann::json::parse(outcome.response.body);
      const auto& content = res.at("choices").at(0).at("message").at("content");
      ex.reply = content.is_string() ? content.get<std::string>() : std::string();
      if (res.contains("usage") && res["usage"].is_object() && res["usage"].contains("prompt_tokens")) {
        ex.prompt_tokens = res["usage"]["prompt_tokens"].get<std::size_t>();
        ex.completion_tokens = res["usage"].value("completion_tokens", std::size_t{0});
      } else {
        ex.prompt_tokens = counter_(prompt);
        ex.completion_tokens = counter_(ex.reply);
        ex.usage_estimated = true;
      }
    } catch (const nlohmann::json::exception& e) {
      throw Error("llm", "BadResponse", e.what());
    }
    return ex;
  }

  LlmConfig cfg_;
  std::shared_ptr<HttpTransport> transport_;
  std::shared_ptr<ResponseCache> cache_;
  Retrier retrier_;
  TokenCounter counter_;
  mutable std::mutex stats_mu_;
  ClientStats stats_;
};

// ---------------------------------------------------------------------------
// Offline backends.

namespace detail {

inline std::optional<std::size_t> number_after(std::string_view text, std::string_view lead) {
  auto pos = text.find(lead);
  if (pos == std::string_view::npos) return std::nullopt;
  pos += lead.size();
  std::size_t v = 0, digits = 0;
  while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') {
    v = v * 10 + static_cast<std::size_t>(text[pos++] - '0');
    ++digits;
  }
  if (digits == 0) return std::nullopt;
  return v;
}

// Candidate block bodies ("### Instruction: ...") of a selection or ranking prompt.
inline std::vector<std::string> prompt_blocks(std::string_view prompt, std::size_t count, std::string_view trailer) {
  std::vector<std::string> out;
  std::size_t cursor = 0;
  for (std::size_t k = 1; k <= count; ++k) {
    const std::string head = "[" + std::to_string(k) + "]\n### Instruction: ";
    const auto at = prompt.find(k == 1 ? head : "\n" + head, cursor);
    if (at == std::string_view::npos) throw Error("llm", "UnknownId", "block " + std::to_string(k) + " not found");
    const std::size_t body = at + (k == 1 ? 0 : 1) + head.size() - std::string_view("### Instruction: ").size();
    std::size_t end;
    if (k < count) {
      end = prompt.find("\n[" + std::to_string(k + 1) + "]\n### Instruction: ", body);
    } else {
      end = prompt.find(trailer, body);
    }
    if (end == std::string_view::npos) throw Error("llm", "UnknownId", "block " + std::to_string(k) + " unterminated");
    out.emplace_back(prompt.substr(body, end - body));
    cursor = end;
  }
  return out;
}

}  // namespace detail

// Answers every prompt kind from hidden per-id scores: selection prompts get
// the top-`num` ordinals by score (ties by ordinal), ranking prompts the full
// descending order, grader prompts "Score: <s>", judge prompts "Response 1".
class MockOracle final : public HttpTransport {
 public:
  MockOracle(const Corpus& corpus, std::unordered_map<std::string, double> hidden_scores)
      : scores_(std::move(hidden_scores)) {
    for (const auto& r : corpus) by_text_.emplace(embedding_text(r), r.id);
  }

  HttpResponse post(const std::string&, const std::string& body, const Headers&) override {
    std::string model = "mock-oracle", prompt;
    try {
      const auto req = nlohmann::json::parse(body);
      model = req.value("model", model);
      prompt = req.at("messages").back().at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
      return {400, R"({"error":"bad request"})"};
    }
    const std::string reply = answer(prompt);
    return {200, chat_response_body(model, reply, std::pair{count_tokens(prompt), count_tokens(reply)})};
  }

  std::string answer(std::string_view prompt) const {
    if (prompt.rfind("This is RankGPT", 0) == 0) {
      const auto n = detail::number_after(prompt, "The following are ").value_or(0);
      auto order = ranked(detail::prompt_blocks(prompt, n, "\nI will rank the "));
      std::string out;
      for (std::size_t i = 0; i < order.size(); ++i) {
        if (i) out += " > ";
        out += "[" + std::to_string(order[i]) + "]";
      }
      return out;
    }
    if (prompt.rfind("The following are ", 0) == 0) {
      if (prompt.find("Rationale for selection:") != std::string_view::npos) {
        return "The chosen instruction is specific and detailed, which makes it valuable for fine-tuning.";
      }
      const auto n = detail::number_after(prompt, "The following are ").value_or(0);
      const auto num = detail::number_after(prompt, "Your task is to select ").value_or(0);
      auto order = ranked(detail::prompt_blocks(prompt, n, "\nExamine the provided list of "));
      order.resize(std::min(order.size(), num));
      std::string out = "[";
      for (std::size_t i = 0; i < order.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(order[i]);
      }
      return out + "]";
    }
    if (prompt.rfind("Rate the quality of the response", 0) == 0) {
      const auto begin = prompt.find("### Instruction: ");
      const auto end = prompt.find("\n### Response: ", begin);
      if (begin == std::string_view::npos || end == std::string_view::npos) {
        throw Error("llm", "UnknownId", "grader prompt without a task");
      }
      std::ostringstream os;
      // graders answer on the half-point scale
      const double s = std::clamp(std::round(score_of(prompt.substr(begin, end - begin)) * 2.0) / 2.0, 1.0, 5.0);
      os << "Score: " << s;
      return os.str();
    }
    return "Response 1";
  }

 private:
  double score_of(std::string_view block) const {
    auto it = by_text_.find(std::string(block));
    if (it == by_text_.end()) throw Error("llm", "UnknownId", "no record matches a prompt block");
    auto s = scores_.find(it->second);
    if (s == scores_.end()) throw Error("llm", "UnknownId", it->second);
    return s->second;
  }

  // 1-based ordinals by descending score, ties by ordinal.
  std::vector<std::size_t> ranked(const std::vector<std::string>& blocks) const {
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t i = 0; i < blocks.size(); ++i) scored.emplace_back(score_of(blocks[i]), i + 1);
    std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    std::vector<std::size_t> out;
    for (const auto& [s, o] : scored) out.push_back(o);
    return out;
  }

  std::unordered_map<std::string, double> scores_;
  std::unordered_map<std::string, std::string> by_text_;
};

inline std::shared_ptr<HttpTransport> mock_oracle(const Corpus& corpus,
                                                  std::unordered_map<std::string, double> hidden_scores) {
  return std::make_shared<MockOracle>(corpus, std::move(hidden_scores));
}

// Replies with the same text to every prompt, without usage figures.
inline std::shared_ptr<HttpTransport> fixed_reply_backend(std::string reply) {
  return std::make_shared<FunctionTransport>(
      [reply = std::move(reply)](const std::string&, const std::string&, const Headers&) {
        return HttpResponse{200, chat_response_body("mock-fixed", reply, std::nullopt)};
      });
}

}  // namespace instsel
