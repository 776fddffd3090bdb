#include <gtest/gtest.h>

#include <functional>
#include <numeric>
#include <random>
#include <set>

#include "instsel/cluster.hpp"
#include "support.hpp"

using namespace instsel;

namespace {

std::string error_code(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  return "";
}

std::set<std::set<std::size_t>> as_sets(const QueryPlan& plan) {
  std::set<std::set<std::size_t>> out;
  for (const auto& q : plan.queries) out.emplace(q.begin(), q.end());
  return out;
}

std::vector<double> sorted_centers_1d(const ClusterModel& m) {
  std::vector<double> c(m.centers.begin(), m.centers.end());
  std::sort(c.begin(), c.end());
  return c;
}

double recomputed_inertia(const EmbeddingMatrix& e, const ClusterModel& m) {
  double s = 0.0;
  for (std::size_t p = 0; p < e.rows(); ++p) {
    auto c = m.center(m.labels[p]);
    for (std::size_t d = 0; d < e.dim(); ++d) s += (e.row(p)[d] - c[d]) * (e.row(p)[d] - c[d]);
  }
  return s;
}

void expect_partition(const QueryPlan& plan, std::size_t n) {
  std::vector<int> seen(n, 0);
  for (const auto& q : plan.queries) {
    for (auto p : q) ++seen[p];
  }
  for (std::size_t p = 0; p < n; ++p) EXPECT_EQ(seen[p], 1) << "position " << p;
}

}  // namespace

TEST(KMeans, TwoPointsExactFit) {
  const auto e = testsupport::matrix_1d({0, 1});
  const auto m = kmeans(e, 2, 0);
  EXPECT_EQ(sorted_centers_1d(m), (std::vector<double>{0, 1}));
  EXPECT_DOUBLE_EQ(m.inertia, 0.0);
}

TEST(KMeans, FourPointsTwoClusters) {
  const auto e = testsupport::matrix_1d({0, 2, 10, 12});
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto m = kmeans(e, 2, seed);
    EXPECT_EQ(sorted_centers_1d(m), (std::vector<double>{1, 11})) << "seed " << seed;
    EXPECT_DOUBLE_EQ(m.inertia, 4.0);
  }
}

TEST(KMeans, SeededRunsAreBitIdentical) {
  const auto ids = testsupport::numbered_ids(300);
  const auto e = testsupport::blob_matrix(ids, 8, 5, 3, 2.0);
  const auto a = kmeans(e, 6, 42), b = kmeans(e, 6, 42);
  EXPECT_EQ(a.centers, b.centers);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.trace, b.trace);
}

TEST(KMeans, InertiaTraceNonIncreasingAndConsistent) {
  std::mt19937_64 gen(17);
  for (int t = 0; t < 40; ++t) {
    const std::size_t n = 5 + gen() % 400, dim = 1 + gen() % 10, c = 1 + gen() % std::min<std::size_t>(n, 12);
    const auto e = testsupport::blob_matrix(testsupport::numbered_ids(n), dim, 1 + gen() % 6, gen(), 3.0);
    KMeansOptions opt;
    opt.n_init = 1 + t % 3;
    const auto m = kmeans(e, c, gen(), opt);
    ASSERT_FALSE(m.trace.empty());
    for (std::size_t i = 1; i < m.trace.size(); ++i) EXPECT_LE(m.trace[i], m.trace[i - 1] * (1 + 1e-12) + 1e-9);
    EXPECT_NEAR(m.inertia, recomputed_inertia(e, m), 1e-4 * std::max(1.0, m.inertia));
    for (double v : m.centers) EXPECT_TRUE(std::isfinite(v));
    EXPECT_LE(m.iterations_run, opt.max_iter);
  }
}

TEST(KMeans, MatchesExhaustiveOptimumOnTinyInstances) {
  std::mt19937_64 gen(23);
  std::uniform_real_distribution<float> x(-20, 20);
  for (int t = 0; t < 20; ++t) {
    const std::size_t n = 2 + gen() % 7;
    const std::size_t c = 1 + gen() % std::min<std::size_t>(n, 3);
    std::vector<float> xs(n);
    for (auto& v : xs) v = x(gen);
    const auto e = testsupport::matrix_1d(xs);
    KMeansOptions opt;
    opt.n_init = 10;
    const auto m = kmeans(e, c, static_cast<std::uint64_t>(t), opt);
    const double best = testsupport::optimal_inertia(testsupport::rows_of(e), c);
    EXPECT_NEAR(m.inertia, best, 1e-6 * std::max(1.0, best)) << "instance " << t;
  }
}

TEST(KMeans, Errors) {
  const auto e = testsupport::matrix_1d({0, 1, 2});
  EXPECT_EQ(error_code([&] { kmeans(e, 4, 0); }), "TooManyClusters");
  EXPECT_EQ(error_code([&] { kmeans(e, 0, 0); }), "BadClusterCount");
  KMeansOptions bad;
  bad.tol = -1;
  EXPECT_EQ(error_code([&] { kmeans(e, 2, 0, bad); }), "BadTolerance");
}

TEST(DistanceMatrix, HandComputedRow) {
  const auto e = testsupport::matrix_from_rows({{0, 0}, {3, 4}});
  ClusterModel m;
  m.clusters = 2;
  m.dim = 2;
  m.centers = {3, 4, 0, 1};
  const auto d = distance_matrix(e, m);
  EXPECT_DOUBLE_EQ(d(0, 0), 5.0);
  EXPECT_DOUBLE_EQ(d(0, 1), 1.0);
  EXPECT_DOUBLE_EQ(d(1, 0), 0.0);
}

TEST(DistanceMatrix, NonNegativeOnRandomInput) {
  const auto e = testsupport::blob_matrix(testsupport::numbered_ids(100), 5, 3, 9);
  const auto m = kmeans(e, 4, 0);
  const auto d = distance_matrix(e, m);
  for (double v : d.values) EXPECT_GE(v, 0.0);
}

TEST(DiverseQueries, HandExecutedExample) {
  const auto e = testsupport::matrix_1d({0, 1, 10, 11, 20, 21});
  const auto plan = build_diverse_queries(e, 3, 0);
  ASSERT_EQ(plan.queries.size(), 2u);
  EXPECT_EQ(as_sets(plan), (std::set<std::set<std::size_t>>{{0, 2, 4}, {1, 3, 5}}));
  // first query holds the points nearest each center (ties stable by position)
  EXPECT_EQ(std::set<std::size_t>(plan.queries[0].begin(), plan.queries[0].end()), (std::set<std::size_t>{0, 2, 4}));
}

TEST(DiverseQueries, FivePointsTwoClusters) {
  const auto e = testsupport::matrix_1d({0, 1, 2, 50, 51});
  const auto plan = build_diverse_queries(e, 2, 3);
  EXPECT_EQ(plan.query_sizes(), (std::vector<std::size_t>{2, 2, 1}));
  expect_partition(plan, 5);
}

TEST(DiverseQueries, SingleClusterGivesSingletons) {
  const auto e = testsupport::matrix_1d({3, 1, 4, 1.5f, 9});
  const auto plan = build_diverse_queries(e, 1, 0);
  EXPECT_EQ(plan.queries.size(), 5u);
  for (const auto& q : plan.queries) EXPECT_EQ(q.size(), 1u);
  expect_partition(plan, 5);
}

TEST(DiverseQueries, PartitionAndOnePerClusterOnRandomCorpora) {
  std::mt19937_64 gen(31);
  for (int t = 0; t < 25; ++t) {
    const std::size_t n = 10 + gen() % 3000, dim = 2 + gen() % 30, c = 1 + gen() % 32;
    const auto e = testsupport::blob_matrix(testsupport::numbered_ids(n), dim, 1 + gen() % 10, gen(), 1.5);
    const auto plan = build_diverse_queries(e, c, gen());
    EXPECT_EQ(plan.queries.size(), (n + c - 1) / c);
    expect_partition(plan, n);
    for (std::size_t q = 0; q + 1 < plan.queries.size(); ++q) {
      std::set<std::size_t> clusters;
      for (auto p : plan.queries[q]) clusters.insert(plan.cluster_of[p]);
      EXPECT_EQ(clusters.size(), plan.queries[q].size());
      EXPECT_EQ(plan.queries[q].size(), c);
    }
  }
}

TEST(DiverseQueries, EqualConsumptionWhenDivisible) {
  std::mt19937_64 gen(37);
  for (int t = 0; t < 10; ++t) {
    const std::size_t c = 1 + gen() % 12, tq = 1 + gen() % 50, n = c * tq;
    const auto e = testsupport::blob_matrix(testsupport::numbered_ids(n), 4, 3, gen(), 2.0);
    const auto plan = build_diverse_queries(e, c, gen());
    std::vector<std::size_t> taken(c, 0);
    for (auto k : plan.cluster_of) ++taken[k];
    const auto [lo, hi] = std::minmax_element(taken.begin(), taken.end());
    EXPECT_LE(*hi - *lo, 1u);
  }
}

TEST(DiverseQueries, LargePartition) {
  const std::size_t n = 10000;
  const auto e = testsupport::blob_matrix(testsupport::numbered_ids(n), 8, 14, 5);
  const auto plan = build_diverse_queries(e, 14, 1);
  EXPECT_EQ(plan.queries.size(), 715u);
  expect_partition(plan, n);
}

TEST(DiverseQueries, Deterministic) {
  const auto e = testsupport::blob_matrix(testsupport::numbered_ids(500), 6, 4, 8, 2.0);
  EXPECT_EQ(build_diverse_queries(e, 7, 99).queries, build_diverse_queries(e, 7, 99).queries);
}

TEST(SimilarQueries, HandClustering) {
  const auto e = testsupport::matrix_1d({0, 1, 10, 11});
  const auto plan = build_similar_queries(e, 2, 2, 0);
  EXPECT_EQ(as_sets(plan), (std::set<std::set<std::size_t>>{{0, 1}, {2, 3}}));
}

TEST(SimilarQueries, WholeCorpusWhenQuerySizeCoversIt) {
  const auto e = testsupport::matrix_1d({4, 8, 15, 16, 23, 42});
  const auto plan = build_similar_queries(e, 1, 6, 0);
  ASSERT_EQ(plan.queries.size(), 1u);
  EXPECT_EQ(plan.queries[0].size(), 6u);
  EXPECT_EQ(build_similar_queries(e, 1, 100, 0).queries.size(), 1u);
}

TEST(SimilarQueries, EveryQueryInOneCluster) {
  std::mt19937_64 gen(41);
  for (int t = 0; t < 15; ++t) {
    const std::size_t n = 10 + gen() % 500, c = 1 + gen() % 10, qs = 1 + gen() % 20;
    const auto e = testsupport::blob_matrix(testsupport::numbered_ids(n), 3, 4, gen(), 2.0);
    const auto plan = build_similar_queries(e, c, qs, gen());
    expect_partition(plan, n);
    for (const auto& q : plan.queries) {
      EXPECT_LE(q.size(), qs);
      for (auto p : q) EXPECT_EQ(plan.cluster_of[p], plan.cluster_of[q.front()]);
    }
  }
}

TEST(SimilarQueries, ZeroQuerySizeRejected) {
  const auto e = testsupport::matrix_1d({0, 1});
  EXPECT_EQ(error_code([&] { build_similar_queries(e, 1, 0, 0); }), "BadQuerySize");
}

TEST(PlanJson, RoundTrip) {
  const auto e = testsupport::blob_matrix(testsupport::numbered_ids(57), 3, 4, 2);
  const auto plan = build_diverse_queries(e, 5, 4);
  const auto j = to_json(plan);
  EXPECT_EQ(j["kind"], "diverse");
  EXPECT_EQ(j["C"], 5);
  const auto back = plan_from_json(j, e.id_order());
  EXPECT_EQ(back.queries, plan.queries);
  EXPECT_EQ(back.cluster_of, plan.cluster_of);
  EXPECT_EQ(to_json(back), j);
}

TEST(PlanJson, RejectsPlansThatDoNotPartition) {
  const auto ids = testsupport::numbered_ids(3);
  nlohmann::json j = {{"kind", "diverse"}, {"seed", 0}, {"C", 2}, {"queries", {{"p0", "p1"}}}, {"cluster_of", {}}};
  EXPECT_EQ(error_code([&] { plan_from_json(j, ids); }), "BadPlan");
  j["queries"] = {{"p0", "p1"}, {"p1", "p2"}};
  EXPECT_EQ(error_code([&] { plan_from_json(j, ids); }), "BadPlan");
  j["queries"] = {{"p0", "p9"}, {"p1", "p2"}};
  EXPECT_EQ(error_code([&] { plan_from_json(j, ids); }), "BadPlan");
}

TEST(Budget, Examples) {
  EXPECT_EQ(budget_per_query(1000, 1000), std::vector<std::size_t>(1000, 1));
  EXPECT_EQ(budget_per_query(10, 4), (std::vector<std::size_t>{3, 3, 2, 2}));
  EXPECT_EQ(budget_per_query(4, 4), (std::vector<std::size_t>{1, 1, 1, 1}));
}

TEST(Budget, SumAndSpreadProperty) {
  std::mt19937_64 gen(43);
  for (int t = 0; t < 500; ++t) {
    const std::size_t n = 1 + gen() % 5000, q = 1 + gen() % 700;
    const auto b = budget_per_query(n, q);
    EXPECT_EQ(std::accumulate(b.begin(), b.end(), std::size_t{0}), n);
    const auto [lo, hi] = std::minmax_element(b.begin(), b.end());
    EXPECT_LE(*hi - *lo, 1u);
    EXPECT_TRUE(std::is_sorted(b.rbegin(), b.rend()));
  }
}

TEST(Budget, CapacityChecked) {
  EXPECT_EQ(error_code([] { budget_per_query(7, std::vector<std::size_t>{3, 3, 1}); }), "BudgetExceedsCapacity");
  EXPECT_EQ(budget_per_query(6, std::vector<std::size_t>{3, 3, 2}), (std::vector<std::size_t>{2, 2, 2}));
  EXPECT_EQ(error_code([] { budget_per_query(0, 3); }), "BadBudget");
}

TEST(FairBudgets, RedistributesAroundShortQueries) {
  EXPECT_EQ(fair_budgets(7, {3, 3, 1}), (std::vector<std::size_t>{3, 3, 1}));
  EXPECT_EQ(fair_budgets(6, {3, 3, 1}), (std::vector<std::size_t>{3, 2, 1}));
  EXPECT_EQ(error_code([] { fair_budgets(8, {3, 3, 1}); }), "BudgetExceedsCapacity");
}

TEST(FairBudgets, MatchesStrictSplitWhenItFits) {
  std::mt19937_64 gen(47);
  for (int t = 0; t < 500; ++t) {
    const std::size_t q = 1 + gen() % 60;
    std::vector<std::size_t> caps(q);
    for (auto& c : caps) c = 1 + gen() % 20;
    const std::size_t total = std::accumulate(caps.begin(), caps.end(), std::size_t{0});
    const std::size_t n = 1 + gen() % total;
    const auto fair = fair_budgets(n, caps);
    EXPECT_EQ(std::accumulate(fair.begin(), fair.end(), std::size_t{0}), n);
    for (std::size_t i = 0; i < q; ++i) EXPECT_LE(fair[i], caps[i]);
    try {
      EXPECT_EQ(fair, budget_per_query(n, caps));
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), "BudgetExceedsCapacity");
    }
  }
}
