#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <memory>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "instsel/corpus.hpp"
#include "instsel/error.hpp"
#include "instsel/http.hpp"

namespace instsel {

// Row-major n x dim float matrix aligned with a corpus by id.
class EmbeddingMatrix {
 public:
  EmbeddingMatrix() = default;

  EmbeddingMatrix(std::size_t dim, std::vector<float> data, std::vector<std::string> ids)
      : dim_(dim), data_(std::move(data)), ids_(std::move(ids)) {
    if (dim_ == 0) throw Error("embedding", "DimZero", "embedding dimension is zero");
    if (data_.size() != dim_ * ids_.size()) {
      throw Error("embedding", "CountMismatch",
                  std::to_string(data_.size() / dim_) + " rows for " + std::to_string(ids_.size()) + " ids");
    }
    for (std::size_t i = 0; i < ids_.size(); ++i) {
      for (float v : row(i)) {
        if (!std::isfinite(v)) throw Error("embedding", "NonFinite", "row " + std::to_string(i));
      }
    }
  }

  std::size_t rows() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::span<const float> row(std::size_t i) const { return {data_.data() + i * dim_, dim_}; }
  const std::vector<std::string>& id_order() const noexcept { return ids_; }
  const std::vector<float>& data() const noexcept { return data_; }

  friend bool operator==(const EmbeddingMatrix&, const EmbeddingMatrix&) = default;

 private:
  std::size_t dim_ = 0;
  std::vector<float> data_;
  std::vector<std::string> ids_;
};

inline double dot(std::span<const float> u, std::span<const float> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) s += static_cast<double>(u[i]) * static_cast<double>(v[i]);
  return s;
}

inline double squared_l2(std::span<const float> u, std::span<const float> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = static_cast<double>(u[i]) - static_cast<double>(v[i]);
    s += d * d;
  }
  return s;
}

inline double squared_l2(std::span<const float> u, std::span<const double> v) {
  double s = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    const double d = static_cast<double>(u[i]) - v[i];
    s += d * d;
  }
  return s;
}

inline void check_dims(std::size_t a, std::size_t b) {
  if (a != b) throw Error("embedding", "DimMismatch", std::to_string(a) + " vs " + std::to_string(b));
}

inline double cosine_similarity(std::span<const float> u, std::span<const float> v) {
  check_dims(u.size(), v.size());
  const double nu = std::sqrt(dot(u, u));
  const double nv = std::sqrt(dot(v, v));
  if (nu == 0.0 || nv == 0.0) throw Error("embedding", "ZeroVector", "cosine of a zero vector");
  return std::clamp(dot(u, v) / (nu * nv), -1.0, 1.0);
}

inline double l2_distance(std::span<const float> u, std::span<const float> v) {
  check_dims(u.size(), v.size());
  return std::sqrt(squared_l2(u, v));
}

enum class DistanceMetric { kCosine, kL2 };

inline double distance(DistanceMetric metric, std::span<const float> u, std::span<const float> v) {
  return metric == DistanceMetric::kCosine ? 1.0 - cosine_similarity(u, v) : l2_distance(u, v);
}

// Mean distance from each subset member to its k-th nearest other member.
inline double knn_diversity(const EmbeddingMatrix& e, const std::vector<std::size_t>& subset, std::size_t k = 1,
                            DistanceMetric metric = DistanceMetric::kCosine) {
  if (k < 1 || subset.size() < k + 1) {
    throw Error("embedding", "TooFewPoints",
                std::to_string(subset.size()) + " points for k=" + std::to_string(k));
  }
  double total = 0.0;
  std::vector<double> dists(subset.size() - 1);
  for (std::size_t i = 0; i < subset.size(); ++i) {
    std::size_t w = 0;
    for (std::size_t j = 0; j < subset.size(); ++j) {
      if (j != i) dists[w++] = distance(metric, e.row(subset[i]), e.row(subset[j]));
    }
    std::nth_element(dists.begin(), dists.begin() + static_cast<std::ptrdiff_t>(k - 1), dists.end());
    total += dists[k - 1];
  }
  return total / static_cast<double>(subset.size());
}

inline std::vector<std::size_t> positions_of(const EmbeddingMatrix& e, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < e.rows(); ++i) index.emplace(e.id_order()[i], i);
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    auto it = index.find(id);
    if (it == index.end()) throw Error("embedding", "IdMismatch", id);
    out.push_back(it->second);
  }
  return out;
}

namespace detail {

// Reorders rows keyed by id into corpus order, verifying the id sets agree.
inline EmbeddingMatrix align_to_corpus(std::size_t dim, const std::vector<float>& data,
                                       const std::vector<std::string>& ids, const Corpus& corpus) {
  if (dim == 0) throw Error("embedding", "DimZero", "embedding dimension is zero");
  if (ids.size() != corpus.size()) {
    throw Error("embedding", "CountMismatch", std::to_string(ids.size()) + "," + std::to_string(corpus.size()));
  }
  std::vector<float> aligned(data.size());
  std::vector<bool> filled(corpus.size(), false);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    auto pos = corpus.position(ids[r]);
    if (!pos || filled[*pos]) throw Error("embedding", "IdMismatch", ids[r]);
    filled[*pos] = true;
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(r * dim), dim,
                aligned.begin() + static_cast<std::ptrdiff_t>(*pos * dim));
  }
  for (std::size_t r = 0; r < ids.size(); ++r) {
    for (std::size_t c = 0; c < dim; ++c) {
      if (!std::isfinite(data[r * dim + c])) throw Error("embedding", "NonFinite", "row " + std::to_string(r));
    }
  }
  return EmbeddingMatrix(dim, std::move(aligned), corpus.ids());
}

inline std::uint32_t read_u32_le(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("embedding", "Truncated", "header");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline void write_u32_le(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

}  // namespace detail

// Binary EMBD layout: "EMBD", u32 n, u32 dim, n*dim little-endian f32, then
// one id per line.
inline EmbeddingMatrix read_embd(std::istream& in, const Corpus& corpus) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "EMBD", 4) != 0) {
    throw Error("embedding", "BadMagic", "missing EMBD header");
  }
  const std::uint32_t n = detail::read_u32_le(in);
  const std::uint32_t dim = detail::read_u32_le(in);
  if (dim == 0) throw Error("embedding", "DimZero", "embedding dimension is zero");
  if (n != corpus.size()) {
    throw Error("embedding", "CountMismatch", std::to_string(n) + "," + std::to_string(corpus.size()));
  }
  std::vector<float> data(static_cast<std::size_t>(n) * dim);
  for (auto& v : data) {
    const std::uint32_t bits = detail::read_u32_le(in);
    v = std::bit_cast<float>(bits);
  }
  std::vector<std::string> ids;
  ids.reserve(n);
  std::string line;
  while (ids.size() < n && std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    ids.push_back(line);
  }
  if (ids.size() != n) throw Error("embedding", "CountMismatch", std::to_string(ids.size()) + " ids," + std::to_string(n));
  return detail::align_to_corpus(dim, data, ids, corpus);
}

inline void write_embd(const EmbeddingMatrix& e, std::ostream& out) {
  out.write("EMBD", 4);
  detail::write_u32_le(out, static_cast<std::uint32_t>(e.rows()));
  detail::write_u32_le(out, static_cast<std::uint32_t>(e.dim()));
  for (float v : e.data()) detail::write_u32_le(out, std::bit_cast<std::uint32_t>(v));
  for (const auto& id : e.id_order()) out << id << '\n';
}

// One {"id": ..., "vector": [...]} object per line.
inline EmbeddingMatrix read_embedding_jsonl(std::istream& in, const Corpus& corpus) {
  std::vector<float> data;
  std::vector<std::string> ids;
  std::size_t dim = 0;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    nlohmann::json obj;
    try {
      obj = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception&) {
      throw Error("embedding", "MalformedLine", std::to_string(line_no));
    }
    if (!obj.is_object() || !obj.contains("id") || !obj.contains("vector") || !obj["vector"].is_array()) {
      throw Error("embedding", "MalformedLine", std::to_string(line_no));
    }
    const auto& vec = obj["vector"];
    if (ids.empty()) dim = vec.size();
    if (dim == 0) throw Error("embedding", "DimZero", "embedding dimension is zero");
    if (vec.size() != dim) throw Error("embedding", "DimMismatch", "line " + std::to_string(line_no));
    for (const auto& x : vec) {
      if (!x.is_number()) throw Error("embedding", "NonFinite", "row " + std::to_string(ids.size()));
      data.push_back(x.get<float>());
    }
    ids.push_back(obj["id"].is_string() ? obj["id"].get<std::string>() : obj["id"].dump());
  }
  return detail::align_to_corpus(dim, data, ids, corpus);
}

inline void write_embedding_jsonl(const EmbeddingMatrix& e, std::ostream& out) {
  for (std::size_t i = 0; i < e.rows(); ++i) {
    nlohmann::json j;
    j["id"] = e.id_order()[i];
    j["vector"] = std::vector<float>(e.row(i).begin(), e.row(i).end());
    out << j.dump() << '\n';
  }
}

// Dispatches on the leading magic bytes: EMBD binary or JSON lines.
inline EmbeddingMatrix import_embeddings(const std::string& path, const Corpus& corpus) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("embedding", "FileNotFound", path);
  char magic[4] = {};
  in.read(magic, 4);
  const bool binary = in.gcount() == 4 && std::memcmp(magic, "EMBD", 4) == 0;
  in.clear();
  in.seekg(0);
  return binary ? read_embd(in, corpus) : read_embedding_jsonl(in, corpus);
}

inline void save_embd(const EmbeddingMatrix& e, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("embedding", "WriteFailed", path);
  write_embd(e, out);
}

struct EmbeddingServiceConfig {
  std::string endpoint = "http://localhost:8080";
  std::string model = "sentence-transformers/all-MiniLM-L6-v2";
  std::string api_key_env;
  std::size_t batch_size = 64;
  double timeout_s = 60.0;
  RetryPolicy retry;
};

struct FetchStats {
  std::size_t requests = 0;
  std::vector<std::size_t> batch_sizes;
};

// Posts OpenAI-compatible /v1/embeddings requests in corpus order.
inline EmbeddingMatrix fetch_embeddings(const EmbeddingServiceConfig& cfg, const Corpus& corpus,
                                        HttpTransport& transport, Retrier& retrier, FetchStats* stats = nullptr) {
  if (cfg.batch_size < 1) throw Error("embedding", "BadBatchSize", "batch_size must be >= 1");
  Headers headers{{"Content-Type", "application/json"}};
  if (!cfg.api_key_env.empty()) {
    if (const char* key = std::getenv(cfg.api_key_env.c_str())) headers["Authorization"] = std::string("Bearer ") + key;
  }
  std::vector<float> data;
  std::size_t dim = 0;
  for (std::size_t start = 0; start < corpus.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(corpus.size(), start + cfg.batch_size);
    nlohmann::json req;
    req["model"] = cfg.model;
    req["input"] = nlohmann::json::array();
    for (std::size_t i = start; i < end; ++i) req["input"].push_back(embedding_text(corpus[i]));
    RetryOutcome outcome;
    try {
      outcome = retrier.post(transport, "embedding", "/v1/embeddings", req.dump(), headers);
    } catch (const Error& e) {
      if (e.code() == "AuthError") throw;
      throw Error("embedding", "ServiceError", e.code() + ": " + e.detail());
    }
    if (stats) {
      ++stats->requests;
      stats->batch_sizes.push_back(end - start);
    }
    nlohmann::json body;
    try {
      body = nlohmann::json::parse(outcome.response.body);
    } catch (const nlohmann::json::exception&) {
      throw Error("embedding", "ServiceError", "unparseable response body");
    }
    if (!body.contains("data") || !body["data"].is_array() || body["data"].size() != end - start) {
      throw Error("embedding", "ServiceError", "response row count does not match batch");
    }
    std::vector<const nlohmann::json*> ordered(end - start, nullptr);
    for (std::size_t r = 0; r < body["data"].size(); ++r) {
      const auto& item = body["data"][r];
      const std::size_t index = item.contains("index") ? item["index"].get<std::size_t>() : r;
      if (index >= ordered.size() || ordered[index]) throw Error("embedding", "ServiceError", "bad row index");
      ordered[index] = &item["embedding"];
    }
    for (const auto* vec : ordered) {
      if (dim == 0) dim = vec->size();
      if (vec->size() != dim) {
        throw Error("embedding", "DimMismatch", std::to_string(dim) + " vs " + std::to_string(vec->size()));
      }
      for (const auto& x : *vec) data.push_back(x.get<float>());
    }
  }
  return EmbeddingMatrix(dim, std::move(data), corpus.ids());
}

}  // namespace instsel
