#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>

#include "instsel/error.hpp"
#include "instsel/rng.hpp"

namespace instsel {

using Headers = std::map<std::string, std::string>;

struct HttpResponse {
  // 0 = transport failure (connection refused, reset), -1 = timeout.
  int status = 0;
  std::string body;
};

inline constexpr int kStatusTransportError = 0;
inline constexpr int kStatusTimeout = -1;

// POST-only transport. Implementations must be safe to call from several
// threads at once.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  virtual HttpResponse post(const std::string& path, const std::string& body, const Headers& headers) = 0;
};

class FunctionTransport final : public HttpTransport {
 public:
  using Handler = std::function<HttpResponse(const std::string&, const std::string&, const Headers&)>;
  explicit FunctionTransport(Handler h) : handler_(std::move(h)) {}
  HttpResponse post(const std::string& path, const std::string& body, const Headers& headers) override {
    return handler_(path, body, headers);
  }

 private:
  Handler handler_;
};

// Splits "http://host:port/prefix" into the scheme-host-port part and the path prefix.
inline std::pair<std::string, std::string> split_base_url(const std::string& url) {
  const auto scheme = url.find("://");
  const std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', host_start);
  if (slash == std::string::npos) return {url, ""};
  std::string prefix = url.substr(slash);
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
  return {url.substr(0, slash), prefix};
}

class HttplibTransport final : public HttpTransport {
 public:
  HttplibTransport(const std::string& base_url, double timeout_s) : timeout_s_(timeout_s) {
    std::tie(host_, prefix_) = split_base_url(base_url);
  }

  HttpResponse post(const std::string& path, const std::string& body, const Headers& headers) override {
    httplib::Client client(host_);
    const auto secs = static_cast<time_t>(timeout_s_);
    const auto usecs = static_cast<time_t>((timeout_s_ - static_cast<double>(secs)) * 1e6);
    client.set_connection_timeout(secs, usecs);
    client.set_read_timeout(secs, usecs);
    client.set_write_timeout(secs, usecs);
    httplib::Headers h;
    for (const auto& [k, v] : headers) h.emplace(k, v);
    auto res = client.Post(prefix_ + path, h, body, "application/json");
    if (!res) {
      return {res.error() == httplib::Error::Read || res.error() == httplib::Error::ConnectionTimeout
                  ? kStatusTimeout
                  : kStatusTransportError,
              httplib::to_string(res.error())};
    }
    return {res->status, res->body};
  }

 private:
  std::string host_;
  std::string prefix_;
  double timeout_s_;
};

struct RetryPolicy {
  int max_attempts = 5;
  double base_backoff_ms = 500.0;
  double multiplier = 2.0;
  double jitter = 0.2;
};

inline bool is_retryable(int status) {
  return status == 429 || status >= 500 || status == kStatusTransportError || status == kStatusTimeout;
}

using Sleeper = std::function<void(std::chrono::milliseconds)>;

inline Sleeper real_sleeper() {
  return [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
}

struct RetryOutcome {
  HttpResponse response;
  int attempts = 0;
};

// Posts with jittered exponential backoff. Returns the first non-retryable
// response, or throws once attempts are exhausted. 401/403 raise AuthError
// without retrying. `module` prefixes raised errors.
class Retrier {
 public:
  Retrier(RetryPolicy policy, Sleeper sleeper, std::uint64_t jitter_seed = 0)
      : policy_(policy), sleeper_(std::move(sleeper)), rng_(jitter_seed) {}

  RetryOutcome post(HttpTransport& transport, const std::string& module, const std::string& path,
                    const std::string& body, const Headers& headers) {
    const int attempts = policy_.max_attempts < 1 ? 1 : policy_.max_attempts;
    HttpResponse last;
    for (int attempt = 1; attempt <= attempts; ++attempt) {
      last = transport.post(path, body, headers);
      if (last.status == 401 || last.status == 403) {
        throw Error(module, "AuthError", "HTTP " + std::to_string(last.status));
      }
      if (!is_retryable(last.status)) {
        if (last.status < 200 || last.status >= 300) {
          throw Error(module, "RequestError", "HTTP " + std::to_string(last.status) + ": " + last.body);
        }
        return {std::move(last), attempt};
      }
      if (attempt < attempts) sleeper_(delay(attempt));
    }
    if (last.status == kStatusTimeout) throw Error(module, "Timeout", "after " + std::to_string(attempts) + " attempts");
    throw Error(module, "ExhaustedRetries", "last status " + std::to_string(last.status));
  }

  // Backoff before attempt `attempt + 1`.
  std::chrono::milliseconds delay(int attempt) {
    double factor;
    {
      std::lock_guard lock(mu_);
      factor = 1.0 + policy_.jitter * (2.0 * rng_.unit() - 1.0);
    }
    const double ms = policy_.base_backoff_ms * std::pow(policy_.multiplier, attempt - 1) * factor;
    return std::chrono::milliseconds(static_cast<long long>(std::llround(ms)));
  }

  const RetryPolicy& policy() const noexcept { return policy_; }

 private:
  RetryPolicy policy_;
  Sleeper sleeper_;
  std::mutex mu_;
  Rng rng_;
};

}  // namespace instsel
