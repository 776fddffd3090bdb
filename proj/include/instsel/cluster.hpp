#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "instsel/embedding.hpp"
#include "instsel/error.hpp"
#include "instsel/rng.hpp"

namespace instsel {

struct KMeansOptions {
  std::size_t max_iter = 100;
  double tol = 1e-4;
  // Independent k-means++ restarts; the lowest-inertia run is kept.
  std::size_t n_init = 1;
};

struct ClusterModel {
  std::size_t clusters = 0;
  std::size_t dim = 0;
  std::vector<double> centers;  // clusters x dim, row-major
  std::vector<std::size_t> labels;
  double inertia = 0.0;
  std::uint64_t seed = 0;
  std::size_t iterations_run = 0;
  // Inertia after each update step of the kept run, ending at `inertia`.
  std::vector<double> trace;

  std::span<const double> center(std::size_t k) const { return {centers.data() + k * dim, dim}; }
};

namespace detail {

inline std::size_t nearest_center(std::span<const float> x, const std::vector<double>& centers, std::size_t clusters,
                                  std::size_t dim, double* best_d2 = nullptr) {
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < clusters; ++k) {
    const double d = squared_l2(x, std::span<const double>(centers.data() + k * dim, dim));
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  if (best_d2) *best_d2 = best_d;
  return best;
}

inline std::vector<double> kmeanspp_init(const EmbeddingMatrix& e, std::size_t clusters, Rng& rng) {
  const std::size_t n = e.rows(), dim = e.dim();
  std::vector<double> centers(clusters * dim);
  auto set_center = [&](std::size_t k, std::size_t p) {
    auto r = e.row(p);
    for (std::size_t d = 0; d < dim; ++d) centers[k * dim + d] = r[d];
  };
  set_center(0, static_cast<std::size_t>(rng.below(n)));
  std::vector<double> d2(n);
  for (std::size_t p = 0; p < n; ++p) d2[p] = squared_l2(e.row(p), std::span<const double>(centers.data(), dim));
  for (std::size_t k = 1; k < clusters; ++k) {
    const double total = std::accumulate(d2.begin(), d2.end(), 0.0);
    std::size_t pick = n - 1;
    if (total > 0.0) {
      const double target = rng.unit() * total;
      double acc = 0.0;
      for (std::size_t p = 0; p < n; ++p) {
        acc += d2[p];
        if (d2[p] > 0.0 && acc > target) {
          pick = p;
          break;
        }
      }
      // Rounding can leave the walk short of the target; take the last positive-weight point.
      if (acc <= target) {
        for (std::size_t p = n; p-- > 0;) {
          if (d2[p] > 0.0) {
            pick = p;
            break;
          }
        }
      }
    } else {
      pick = static_cast<std::size_t>(rng.below(n));
    }
    set_center(k, pick);
    for (std::size_t p = 0; p < n; ++p) {
      d2[p] = std::min(d2[p], squared_l2(e.row(p), std::span<const double>(centers.data() + k * dim, dim)));
    }
  }
  return centers;
}

inline double assignment_inertia(const EmbeddingMatrix& e, const std::vector<double>& centers,
                                 const std::vector<std::size_t>& labels, std::size_t dim) {
  double s = 0.0;
  for (std::size_t p = 0; p < e.rows(); ++p) {
    s += squared_l2(e.row(p), std::span<const double>(centers.data() + labels[p] * dim, dim));
  }
  return s;
}

// One seeded Lloyd run.
inline ClusterModel lloyd(const EmbeddingMatrix& e, std::size_t clusters, std::uint64_t run_seed,
                          const KMeansOptions& opt) {
  const std::size_t n = e.rows(), dim = e.dim();
  Rng rng(run_seed);
  ClusterModel m;
  m.clusters = clusters;
  m.dim = dim;
  m.centers = kmeanspp_init(e, clusters, rng);
  m.labels.resize(n);
  for (std::size_t p = 0; p < n; ++p) m.labels[p] = nearest_center(e.row(p), m.centers, clusters, dim);

  std::vector<double> sums(clusters * dim);
  std::vector<std::size_t> counts(clusters);
  std::vector<double> own_d2(n);
  const std::size_t max_iter = std::max<std::size_t>(opt.max_iter, 1);
  for (std::size_t it = 1; it <= max_iter; ++it) {
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t p = 0; p < n; ++p) ++counts[m.labels[p]];

    // Empty clusters take the point farthest from its current center.
    for (std::size_t k = 0; k < clusters; ++k) {
      if (counts[k] != 0) continue;
      for (std::size_t p = 0; p < n; ++p) {
        own_d2[p] = squared_l2(e.row(p), std::span<const double>(m.centers.data() + m.labels[p] * dim, dim));
      }
      std::size_t far = n;
      double far_d = -1.0;
      for (std::size_t p = 0; p < n; ++p) {
        if (counts[m.labels[p]] > 1 && own_d2[p] > far_d) {
          far_d = own_d2[p];
          far = p;
        }
      }
      --counts[m.labels[far]];
      m.labels[far] = k;
      counts[k] = 1;
      auto r = e.row(far);
      for (std::size_t d = 0; d < dim; ++d) m.centers[k * dim + d] = r[d];
    }

    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t p = 0; p < n; ++p) {
      auto r = e.row(p);
      for (std::size_t d = 0; d < dim; ++d) sums[m.labels[p] * dim + d] += r[d];
    }
    double shift = 0.0;
    for (std::size_t k = 0; k < clusters; ++k) {
      double s2 = 0.0;
      for (std::size_t d = 0; d < dim; ++d) {
        const double c = sums[k * dim + d] / static_cast<double>(counts[k]);
        const double delta = c - m.centers[k * dim + d];
        s2 += delta * delta;
        m.centers[k * dim + d] = c;
      }
      shift = std::max(shift, std::sqrt(s2));
    }
    m.trace.push_back(assignment_inertia(e, m.centers, m.labels, dim));
    m.iterations_run = it;

    bool changed = false;
    for (std::size_t p = 0; p < n; ++p) {
      const std::size_t k = nearest_center(e.row(p), m.centers, clusters, dim);
      if (k != m.labels[p]) {
        m.labels[p] = k;
        changed = true;
      }
    }
    if (changed) m.trace.push_back(assignment_inertia(e, m.centers, m.labels, dim));
    if (!changed || shift < opt.tol) break;
  }
  m.inertia = m.trace.back();
  return m;
}

}  // namespace detail

// Lloyd's algorithm with k-means++ seeding; deterministic in `seed`.
inline ClusterModel kmeans(const EmbeddingMatrix& e, std::size_t clusters, std::uint64_t seed,
                           const KMeansOptions& opt = {}) {
  if (clusters < 1) throw Error("cluster", "BadClusterCount", "cluster count must be >= 1");
  if (clusters > e.rows()) {
    throw Error("cluster", "TooManyClusters",
                std::to_string(clusters) + " clusters for " + std::to_string(e.rows()) + " points");
  }
  if (!(opt.tol >= 0.0)) throw Error("cluster", "BadTolerance", "tol must be >= 0");
  ClusterModel best;
  const std::size_t runs = std::max<std::size_t>(opt.n_init, 1);
  for (std::size_t r = 0; r < runs; ++r) {
    ClusterModel m = detail::lloyd(e, clusters, mix_seed(seed, r), opt);
    if (r == 0 || m.inertia < best.inertia) best = std::move(m);
  }
  best.seed = seed;
  return best;
}

// n x C matrix of point-to-center Euclidean distances.
struct DistanceMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  double operator()(std::size_t i, std::size_t k) const { return values[i * cols + k]; }
};

inline DistanceMatrix distance_matrix(const EmbeddingMatrix& e, const ClusterModel& model) {
  check_dims(e.dim(), model.dim);
  DistanceMatrix d{e.rows(), model.clusters, std::vector<double>(e.rows() * model.clusters)};
  for (std::size_t i = 0; i < e.rows(); ++i) {
    for (std::size_t k = 0; k < model.clusters; ++k) {
      d.values[i * d.cols + k] = std::sqrt(squared_l2(e.row(i), model.center(k)));
    }
  }
  return d;
}

enum class PlanKind { kDiverse, kSimilar };

inline const char* to_string(PlanKind k) { return k == PlanKind::kDiverse ? "diverse" : "similar"; }

struct QueryPlan {
  PlanKind kind = PlanKind::kDiverse;
  std::uint64_t seed = 0;
  std::size_t clusters = 0;
  std::vector<std::vector<std::size_t>> queries;  // corpus positions
  std::vector<std::size_t> cluster_of;            // per corpus position
  std::vector<std::string> ids;                   // corpus id order

  std::vector<std::size_t> query_sizes() const {
    std::vector<std::size_t> s;
    s.reserve(queries.size());
    for (const auto& q : queries) s.push_back(q.size());
    return s;
  }
};

// Stable argsort of all points by distance to center k.
inline std::vector<std::size_t> rank_by_center(const DistanceMatrix& d, std::size_t k) {
  std::vector<std::size_t> order(d.rows);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return d(a, k) < d(b, k); });
  return order;
}

// Equal-size diverse composition: each query takes, from every cluster in
// turn, the nearest point to that cluster's center not yet assigned.
inline QueryPlan build_diverse_queries(const EmbeddingMatrix& e, std::size_t clusters, std::uint64_t seed,
                                       const KMeansOptions& opt = {}) {
  const ClusterModel model = kmeans(e, clusters, seed, opt);
  const DistanceMatrix d = distance_matrix(e, model);
  const std::size_t n = e.rows();

  std::vector<std::vector<std::size_t>> rankings(clusters);
  for (std::size_t k = 0; k < clusters; ++k) rankings[k] = rank_by_center(d, k);

  QueryPlan plan;
  plan.kind = PlanKind::kDiverse;
  plan.seed = seed;
  plan.clusters = clusters;
  plan.ids = e.id_order();
  plan.cluster_of.assign(n, 0);
  std::vector<bool> assigned(n, false);
  std::vector<std::size_t> cursor(clusters, 0);
  const std::size_t query_count = (n + clusters - 1) / clusters;
  std::size_t placed = 0;
  for (std::size_t t = 0; t < query_count; ++t) {
    std::vector<std::size_t> q;
    q.reserve(clusters);
    for (std::size_t k = 0; k < clusters && placed < n; ++k) {
      auto& c = cursor[k];
      while (c < n && assigned[rankings[k][c]]) ++c;
      if (c == n) continue;
      const std::size_t p = rankings[k][c];
      assigned[p] = true;
      plan.cluster_of[p] = k;
      q.push_back(p);
      ++placed;
    }
    plan.queries.push_back(std::move(q));
  }
  return plan;
}

// Ablation composition: consecutive same-cluster chunks ordered by distance
// to the cluster's own center.
inline QueryPlan build_similar_queries(const EmbeddingMatrix& e, std::size_t clusters, std::size_t query_size,
                                       std::uint64_t seed, const KMeansOptions& opt = {}) {
  if (query_size < 1) throw Error("cluster", "BadQuerySize", "query_size must be >= 1");
  const ClusterModel model = kmeans(e, clusters, seed, opt);
  const DistanceMatrix d = distance_matrix(e, model);

  QueryPlan plan;
  plan.kind = PlanKind::kSimilar;
  plan.seed = seed;
  plan.clusters = clusters;
  plan.ids = e.id_order();
  plan.cluster_of = model.labels;
  for (std::size_t k = 0; k < clusters; ++k) {
    std::vector<std::size_t> members;
    for (std::size_t p = 0; p < e.rows(); ++p) {
      if (model.labels[p] == k) members.push_back(p);
    }
    std::stable_sort(members.begin(), members.end(), [&](std::size_t a, std::size_t b) { return d(a, k) < d(b, k); });
    for (std::size_t start = 0; start < members.size(); start += query_size) {
      const std::size_t end = std::min(members.size(), start + query_size);
      plan.queries.emplace_back(members.begin() + static_cast<std::ptrdiff_t>(start),
                                members.begin() + static_cast<std::ptrdiff_t>(end));
    }
  }
  return plan;
}

inline nlohmann::json to_json(const QueryPlan& plan) {
  nlohmann::json j;
  j["kind"] = to_string(plan.kind);
  j["seed"] = plan.seed;
  j["C"] = plan.clusters;
  j["queries"] = nlohmann::json::array();
  for (const auto& q : plan.queries) {
    auto arr = nlohmann::json::array();
    for (std::size_t p : q) arr.push_back(plan.ids[p]);
    j["queries"].push_back(std::move(arr));
  }
  nlohmann::json cluster_of = nlohmann::json::object();
  for (std::size_t p = 0; p < plan.ids.size(); ++p) cluster_of[plan.ids[p]] = plan.cluster_of[p];
  j["cluster_of"] = std::move(cluster_of);
  return j;
}

// Rebuilds a plan against the given id order; the plan must partition it.
inline QueryPlan plan_from_json(const nlohmann::json& j, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
  QueryPlan plan;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != "diverse" && kind != "similar") throw Error("cluster", "BadPlan", "unknown kind " + kind);
    plan.kind = kind == "diverse" ? PlanKind::kDiverse : PlanKind::kSimilar;
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.clusters = j.at("C").get<std::size_t>();
    plan.ids = ids;
    plan.cluster_of.assign(ids.size(), 0);
    std::vector<bool> seen(ids.size(), false);
    for (const auto& q : j.at("queries")) {
      std::vector<std::size_t> positions;
      for (const auto& id : q) {
        auto it = index.find(id.get<std::string>());
        if (it == index.end()) throw Error("cluster", "BadPlan", "unknown id " + id.get<std::string>());
        if (seen[it->second]) throw Error("cluster", "BadPlan", "id in two queries: " + it->first);
        seen[it->second] = true;
        positions.push_back(it->second);
      }
      plan.queries.push_back(std::move(positions));
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end()) {
      throw Error("cluster", "BadPlan", "plan does not cover the corpus");
    }
    for (const auto& [id, k] : j.at("cluster_of").items()) {
      auto it = index.find(id);
      if (it != index.end()) plan.cluster_of[it->second] = k.get<std::size_t>();
    }
  } catch (const nlohmann::json::exception& ex) {
    throw Error("cluster", "BadPlan", ex.what());
  }
  return plan;
}

// Even split of N over T queries: the first N mod T get one extra.
inline std::vector<std::size_t> budget_per_query(std::size_t total, std::size_t query_count) {
  if (total < 1) throw Error("cluster", "BadBudget", "N must be >= 1");
  if (query_count < 1) throw Error("cluster", "BadBudget", "T must be >= 1");
  std::vector<std::size_t> out(query_count, total / query_count);
  for (std::size_t t = 0; t < total % query_count; ++t) ++out[t];
  return out;
}

// Same split, checked against each query's size.
inline std::vector<std::size_t> budget_per_query(std::size_t total, const std::vector<std::size_t>& capacities) {
  auto out = budget_per_query(total, capacities.size());
  for (std::size_t t = 0; t < out.size(); ++t) {
    if (out[t] > capacities[t]) {
      throw Error("cluster", "BudgetExceedsCapacity",
                  "query " + std::to_string(t) + " budget " + std::to_string(out[t]) + " > size " +
                      std::to_string(capacities[t]));
    }
  }
  return out;
}

// Capacity-aware split. Equals budget_per_query whenever that fits; otherwise
// queries that are too small are capped and the excess is spread over the
// rest with the same first-queries-get-more rule.
inline std::vector<std::size_t> fair_budgets(std::size_t total, const std::vector<std::size_t>& capacities) {
  if (total < 1) throw Error("cluster", "BadBudget", "N must be >= 1");
  const std::size_t capacity = std::accumulate(capacities.begin(), capacities.end(), std::size_t{0});
  if (total > capacity) {
    throw Error("cluster", "BudgetExceedsCapacity",
                "N=" + std::to_string(total) + " exceeds total capacity " + std::to_string(capacity));
  }
  std::vector<std::size_t> out(capacities.size(), 0);
  std::size_t remaining = total;
  while (remaining > 0) {
    std::vector<std::size_t> open;
    for (std::size_t t = 0; t < out.size(); ++t) {
      if (out[t] < capacities[t]) open.push_back(t);
    }
    const std::size_t share = remaining / open.size();
    const std::size_t extra = remaining % open.size();
    for (std::size_t i = 0; i < open.size(); ++i) {
      const std::size_t t = open[i];
      const std::size_t want = share + (i < extra ? 1 : 0);
      const std::size_t give = std::min(want, capacities[t] - out[t]);
      out[t] += give;
      remaining -= give;
    }
  }
  return out;
}

}  // namespace instsel
