#pragma once

// Shared fixtures and reference oracles for the test binaries. The oracles
// here are deliberately naive re-derivations and share no code paths with
// the library beyond the data types.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "instsel/corpus.hpp"
#include "instsel/embedding.hpp"

namespace testsupport {

namespace fs = std::filesystem;

inline fs::path source_dir() { return fs::path(INSTSEL_SOURCE_DIR); }

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

class TempDir {
 public:
  TempDir() {
    static int counter = 0;
    const auto stamp = std::chrono::steady_clock::now().time_since_epoch().count();
    path_ = fs::temp_directory_path() / ("instsel-test-" + std::to_string(stamp) + "-" + std::to_string(counter++));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> words = {
      "explain", "write",  "list",    "summarize", "compare", "river",  "poem",   "recipe", "python",  "history",
      "market",  "planet", "garden",  "music",     "travel",  "budget", "letter", "story",  "climate", "engine",
      "protein", "chess",  "physics", "email",     "policy",  "novel",  "bridge", "coffee", "robot",   "ocean"};
  return words;
}

// Records with unique texts; every third record has an input and every
// record carries a short gold response.
inline instsel::Corpus make_corpus(std::size_t m, std::uint64_t seed, const std::string& prefix = "r") {
  std::mt19937_64 gen(seed);
  const auto& vocab = vocabulary();
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1), len(2, 9);
  std::vector<instsel::InstructionRecord> recs;
  recs.reserve(m);
  for (std::size_t i = 0; i < m; ++i) {
    instsel::InstructionRecord r;
    r.id = prefix + std::to_string(i);
    std::string text = "Task " + std::to_string(i) + ":";
    for (std::size_t w = len(gen); w > 0; --w) text += " " + vocab[pick(gen)];
    r.instruction = text;
    if (i % 3 == 0) r.input = "context " + vocab[pick(gen)] + " " + std::to_string(i);
    r.response = "answer " + vocab[pick(gen)] + " " + vocab[pick(gen)];
    recs.push_back(std::move(r));
  }
  return instsel::Corpus(std::move(recs));
}

inline std::vector<std::string> numbered_ids(std::size_t n, const std::string& prefix = "p") {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(prefix + std::to_string(i));
  return ids;
}

inline instsel::EmbeddingMatrix matrix_from_rows(const std::vector<std::vector<float>>& rows,
                                                 std::vector<std::string> ids = {}) {
  if (ids.empty()) ids = numbered_ids(rows.size());
  std::vector<float> data;
  for (const auto& r : rows) data.insert(data.end(), r.begin(), r.end());
  return instsel::EmbeddingMatrix(rows.empty() ? 1 : rows[0].size(), std::move(data), std::move(ids));
}

inline instsel::EmbeddingMatrix matrix_1d(const std::vector<float>& xs, std::vector<std::string> ids = {}) {
  std::vector<std::vector<float>> rows;
  for (float x : xs) rows.push_back({x});
  return matrix_from_rows(rows, std::move(ids));
}

// Gaussian blobs around `blobs` random centers, one row per id.
inline instsel::EmbeddingMatrix blob_matrix(const std::vector<std::string>& ids, std::size_t dim, std::size_t blobs,
                                            std::uint64_t seed, double spread = 0.5) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> noise(0.0, spread);
  std::uniform_real_distribution<double> where(-10.0, 10.0);
  std::vector<std::vector<double>> centers(std::max<std::size_t>(blobs, 1), std::vector<double>(dim));
  for (auto& c : centers) {
    for (auto& v : c) v = where(gen);
  }
  std::vector<float> data;
  data.reserve(ids.size() * dim);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& c = centers[i % centers.size()];
    for (std::size_t d = 0; d < dim; ++d) data.push_back(static_cast<float>(c[d] + noise(gen)));
  }
  return instsel::EmbeddingMatrix(dim, std::move(data), ids);
}

// ---------------------------------------------------------------------------
// Oracles.

// Minimum within-cluster sum of squares over every assignment of the points
// to exactly `clusters` nonempty groups (C^n enumeration).
inline double optimal_inertia(const std::vector<std::vector<double>>& pts, std::size_t clusters) {
  const std::size_t n = pts.size();
  const std::size_t dim = n ? pts[0].size() : 0;
  std::vector<std::size_t> label(n, 0);
  double best = std::numeric_limits<double>::infinity();
  while (true) {
    std::vector<std::size_t> count(clusters, 0);
    for (auto l : label) ++count[l];
    if (std::all_of(count.begin(), count.end(), [](std::size_t c) { return c > 0; })) {
      double cost = 0.0;
      for (std::size_t k = 0; k < clusters; ++k) {
        std::vector<double> mean(dim, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          if (label[i] != k) continue;
          for (std::size_t d = 0; d < dim; ++d) mean[d] += pts[i][d];
        }
        for (auto& v : mean) v /= static_cast<double>(count[k]);
        for (std::size_t i = 0; i < n; ++i) {
          if (label[i] != k) continue;
          for (std::size_t d = 0; d < dim; ++d) cost += (pts[i][d] - mean[d]) * (pts[i][d] - mean[d]);
        }
      }
      best = std::min(best, cost);
    }
    std::size_t i = 0;
    while (i < n && ++label[i] == clusters) label[i++] = 0;
    if (i == n) break;
  }
  return best;
}

// Longest common subsequence by trying every subsequence of the shorter list.
template <typename T>
std::size_t lcs_oracle(const std::vector<T>& a, const std::vector<T>& b) {
  const auto& s = a.size() <= b.size() ? a : b;
  const auto& l = a.size() <= b.size() ? b : a;
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << s.size()); ++mask) {
    const auto bits = static_cast<std::size_t>(__builtin_popcount(mask));
    if (bits <= best) continue;
    std::size_t j = 0;
    bool ok = true;
    for (std::size_t i = 0; i < s.size() && ok; ++i) {
      if (!(mask & (1u << i))) continue;
      while (j < l.size() && !(l[j] == s[i])) ++j;
      if (j == l.size()) ok = false;
      ++j;
    }
    if (ok) best = bits;
  }
  return best;
}

// k-center greedy written from the rule alone: start at the point farthest
// from the mean, then repeatedly take the point whose nearest chosen point is
// farthest, recomputing every distance from scratch. Ties go to the lower index.
inline std::vector<std::size_t> coreset_oracle(const std::vector<std::vector<double>>& pts, std::size_t budget) {
  const std::size_t n = pts.size();
  const std::size_t dim = pts[0].size();
  auto dist = [&](const std::vector<double>& u, const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t d = 0; d < dim; ++d) s += (u[d] - v[d]) * (u[d] - v[d]);
    return std::sqrt(s);
  };
  std::vector<double> mean(dim, 0.0);
  for (const auto& p : pts) {
    for (std::size_t d = 0; d < dim; ++d) mean[d] += p[d];
  }
  for (auto& v : mean) v /= static_cast<double>(n);
  std::vector<std::size_t> chosen;
  std::size_t first = 0;
  for (std::size_t i = 1; i < n; ++i) {
    if (dist(pts[i], mean) > dist(pts[first], mean)) first = i;
  }
  chosen.push_back(first);
  while (chosen.size() < budget) {
    std::size_t best = n;
    double best_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (std::find(chosen.begin(), chosen.end(), i) != chosen.end()) continue;
      double nearest = std::numeric_limits<double>::infinity();
      for (auto c : chosen) nearest = std::min(nearest, dist(pts[i], pts[c]));
      if (nearest > best_d) {
        best_d = nearest;
        best = i;
      }
    }
    chosen.push_back(best);
  }
  return chosen;
}

inline std::vector<std::vector<double>> rows_of(const instsel::EmbeddingMatrix& e) {
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < e.rows(); ++i) {
    auto r = e.row(i);
    out.emplace_back(r.begin(), r.end());
  }
  return out;
}

// Hidden scores for the mock oracle: distinct values in shuffled order.
inline std::unordered_map<std::string, double> shuffled_scores(const instsel::Corpus& corpus, std::uint64_t seed) {
  std::vector<double> values(corpus.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = 1.0 + static_cast<double>(i) * 0.001;
  std::mt19937_64 gen(seed);
  std::shuffle(values.begin(), values.end(), gen);
  std::unordered_map<std::string, double> out;
  for (std::size_t i = 0; i < corpus.size(); ++i) out[corpus[i].id] = values[i];
  return out;
}

inline std::string scores_jsonl(const std::unordered_map<std::string, double>& scores,
                                const std::vector<std::string>& order) {
  std::string out;
  for (const auto& id : order) {
    std::ostringstream line;
    line.precision(17);
    line << "{\"id\":\"" << id << "\",\"score\":" << scores.at(id) << "}\n";
    out += line.str();
  }
  return out;
}

// Reply corpus cases: "--- name | N=<size> | num=<expected>" headers, each
// followed by its reply lines. Trailing CRs are dropped from headers only;
// reply lines keep them so CRLF replies reach the parser intact.
struct ReplyCase {
  std::string name;
  std::size_t query_size = 0;
  std::size_t num = 0;
  std::string reply;
};

inline std::vector<ReplyCase> read_reply_cases(const fs::path& p) {
  std::istringstream in(read_file(p));
  std::vector<ReplyCase> cases;
  std::string line;
  bool first_line = false;
  while (std::getline(in, line)) {
    std::string bare = line;
    if (!bare.empty() && bare.back() == '\r') bare.pop_back();
    if (bare.rfind("--- ", 0) == 0) {
      ReplyCase c;
      const auto bar1 = bare.find(" | N=");
      const auto bar2 = bare.find(" | num=");
      c.name = bare.substr(4, bar1 - 4);
      c.query_size = std::stoul(bare.substr(bar1 + 5, bar2 - bar1 - 5));
      c.num = std::stoul(bare.substr(bar2 + 7));
      cases.push_back(std::move(c));
      first_line = true;
      continue;
    }
    if (cases.empty()) continue;  // header comments
    if (!first_line) cases.back().reply += '\n';
    cases.back().reply += line;
    first_line = false;
  }
  return cases;
}

}  // namespace testsupport
