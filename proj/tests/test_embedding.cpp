#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "instsel/embedding.hpp"
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

std::vector<float> vec(std::initializer_list<float> xs) { return xs; }

std::string embd_bytes(std::uint32_t n, std::uint32_t dim, const std::vector<float>& data,
                       const std::vector<std::string>& ids) {
  std::string out = "EMBD";
  auto u32 = [&](std::uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xFF));
  };
  u32(n);
  u32(dim);
  for (float f : data) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    u32(bits);
  }
  for (const auto& id : ids) out += id + "\n";
  return out;
}

Corpus three_records() { return testsupport::make_corpus(3, 0, "c"); }

}  // namespace

TEST(Cosine, IdentityOrthogonalAndDiagonal) {
  const auto u = vec({1, 2, 3});
  EXPECT_NEAR(cosine_similarity(u, u), 1.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(vec({1, 0}), vec({0, 1})), 0.0, 1e-12);
  EXPECT_NEAR(cosine_similarity(vec({1, 1}), vec({1, 0})), 0.70711, 1e-5);
}

TEST(Cosine, ZeroVectorAndDimMismatch) {
  EXPECT_EQ(error_code([] { cosine_similarity(vec({0, 0}), vec({1, 0})); }), "ZeroVector");
  EXPECT_EQ(error_code([] { cosine_similarity(vec({1, 0}), vec({1, 0, 0})); }), "DimMismatch");
}

TEST(Cosine, BoundedOnRandomVectors) {
  std::mt19937_64 gen(5);
  std::normal_distribution<float> g(0.0f, 3.0f);
  for (int t = 0; t < 500; ++t) {
    std::vector<float> u(1 + t % 40), v(u.size());
    for (auto& x : u) x = g(gen);
    for (auto& x : v) x = g(gen);
    EXPECT_LE(std::abs(cosine_similarity(u, v)), 1.0 + 1e-9);
    EXPECT_NEAR(cosine_similarity(u, u), 1.0, 1e-9);
  }
}

TEST(L2, HandValuesAndSymmetry) {
  EXPECT_DOUBLE_EQ(l2_distance(vec({4, 5}), vec({4, 5})), 0.0);
  EXPECT_DOUBLE_EQ(l2_distance(vec({0, 0}), vec({3, 4})), 5.0);
  std::mt19937_64 gen(6);
  std::uniform_real_distribution<float> r(-5, 5);
  for (int t = 0; t < 200; ++t) {
    std::vector<float> a(8), b(8), c(8);
    for (auto* v : {&a, &b, &c}) {
      for (auto& x : *v) x = r(gen);
    }
    EXPECT_DOUBLE_EQ(l2_distance(a, b), l2_distance(b, a));
    EXPECT_LE(l2_distance(a, c), l2_distance(a, b) + l2_distance(b, c) + 1e-6);
  }
}

TEST(KnnDiversity, DuplicatesGiveZero) {
  const auto e = testsupport::matrix_from_rows({{1, 2}, {1, 2}});
  EXPECT_NEAR(knn_diversity(e, {0, 1}), 0.0, 1e-12);
}

TEST(KnnDiversity, OrthogonalUnitVectorsGiveOne) {
  const auto e = testsupport::matrix_from_rows({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}});
  EXPECT_NEAR(knn_diversity(e, {0, 1, 2}, 1), 1.0, 1e-12);
}

TEST(KnnDiversity, TooFewPoints) {
  const auto e = testsupport::matrix_from_rows({{1, 0}, {0, 1}});
  EXPECT_EQ(error_code([&] { knn_diversity(e, {0}, 1); }), "TooFewPoints");
  EXPECT_EQ(error_code([&] { knn_diversity(e, {0, 1}, 2); }), "TooFewPoints");
}

TEST(KnnDiversity, L2MetricAndPermutationInvariance) {
  const auto e = testsupport::matrix_from_rows({{0, 0}, {3, 4}, {6, 8}, {0, 1}});
  // pairwise: AB 5, AC 10, AD 1, BC 5, BD sqrt18, CD sqrt85
  const double k1 = (1.0 + std::sqrt(18.0) + 5.0 + 1.0) / 4.0;
  EXPECT_NEAR(knn_diversity(e, {0, 1, 2, 3}, 1, DistanceMetric::kL2), k1, 1e-12);
  EXPECT_NEAR(knn_diversity(e, {3, 1, 0, 2}, 1, DistanceMetric::kL2), k1, 1e-12);
  const double k2 = (5.0 + 5.0 + std::sqrt(85.0) + std::sqrt(18.0)) / 4.0;
  EXPECT_NEAR(knn_diversity(e, {0, 1, 2, 3}, 2, DistanceMetric::kL2), k2, 1e-6);
}

TEST(Matrix, ConstructorValidates) {
  EXPECT_EQ(error_code([] { EmbeddingMatrix(0, {}, {"a"}); }), "DimZero");
  EXPECT_EQ(error_code([] { EmbeddingMatrix(2, {1, 2, 3}, {"a", "b"}); }), "CountMismatch");
  EXPECT_EQ(error_code([] { EmbeddingMatrix(1, {1, NAN}, {"a", "b"}); }), "NonFinite");
}

TEST(ImportEmbd, ThreeByFour) {
  const auto c = three_records();
  std::vector<float> data(12);
  for (std::size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(i) * 0.5f;
  std::istringstream in(embd_bytes(3, 4, data, c.ids()));
  const auto e = read_embd(in, c);
  EXPECT_EQ(e.rows(), 3u);
  EXPECT_EQ(e.dim(), 4u);
  EXPECT_EQ(e.data(), data);
  EXPECT_EQ(e.id_order(), c.ids());
}

TEST(ImportEmbd, CountMismatch) {
  const auto c = three_records();
  std::istringstream in(embd_bytes(2, 4, std::vector<float>(8, 1.0f), {"c0", "c1"}));
  try {
    read_embd(in, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "CountMismatch");
    EXPECT_NE(e.detail().find('2'), std::string::npos);
    EXPECT_NE(e.detail().find('3'), std::string::npos);
  }
}

TEST(ImportEmbd, NanRowAndZeroDimAndBadMagic) {
  const auto c = three_records();
  std::vector<float> data(6, 1.0f);
  data[3] = NAN;
  {
    std::istringstream in(embd_bytes(3, 2, data, c.ids()));
    EXPECT_EQ(error_code([&] { read_embd(in, c); }), "NonFinite");
  }
  {
    std::istringstream in(embd_bytes(3, 0, {}, c.ids()));
    EXPECT_EQ(error_code([&] { read_embd(in, c); }), "DimZero");
  }
  {
    std::istringstream in("NOPE");
    EXPECT_EQ(error_code([&] { read_embd(in, c); }), "BadMagic");
  }
}

TEST(ImportEmbd, UnknownIdIsIdMismatch) {
  const auto c = three_records();
  std::istringstream in(embd_bytes(3, 1, {1, 2, 3}, {"c0", "zz", "c2"}));
  try {
    read_embd(in, c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "IdMismatch");
    EXPECT_EQ(e.detail(), "zz");
  }
}

TEST(ImportEmbd, RowsReorderedToCorpusOrder) {
  const auto c = three_records();
  std::istringstream in(embd_bytes(3, 1, {30, 10, 20}, {"c2", "c0", "c1"}));
  const auto e = read_embd(in, c);
  EXPECT_EQ(e.data(), (std::vector<float>{10, 20, 30}));
}

TEST(ImportEmbd, WriterRoundTripIsBitIdentical) {
  const auto c = testsupport::make_corpus(20, 2);
  const auto e = testsupport::blob_matrix(c.ids(), 7, 3, 1);
  std::ostringstream out;
  write_embd(e, out);
  std::istringstream a(out.str()), b(out.str());
  const auto first = read_embd(a, c);
  EXPECT_EQ(first, e);
  EXPECT_EQ(read_embd(b, c), first);
}

TEST(ImportJsonl, AlternativeFormatAndSniffing) {
  testsupport::TempDir dir;
  const auto c = three_records();
  testsupport::write_file(dir / "e.jsonl", R"({"id":"c1","vector":[0,1]}
{"id":"c0","vector":[1,0]}
{"id":"c2","vector":[1,1]}
)");
  const auto e = import_embeddings((dir / "e.jsonl").string(), c);
  EXPECT_EQ(e.data(), (std::vector<float>{1, 0, 0, 1, 1, 1}));
  save_embd(e, (dir / "e.embd").string());
  EXPECT_EQ(import_embeddings((dir / "e.embd").string(), c), e);
}

TEST(ImportJsonl, RaggedVectorsRejected) {
  const auto c = three_records();
  std::istringstream in(R"({"id":"c0","vector":[1,0]}
{"id":"c1","vector":[1]}
{"id":"c2","vector":[1,1]}
)");
  EXPECT_EQ(error_code([&] { read_embedding_jsonl(in, c); }), "DimMismatch");
}

namespace {

struct EmbeddingService {
  std::vector<std::size_t> dims_per_call;
  std::vector<std::size_t> batch_sizes;
  int fail_first = 0;

  std::shared_ptr<FunctionTransport> transport() {
    return std::make_shared<FunctionTransport>([this](const std::string& path, const std::string& body, const Headers&) {
      EXPECT_EQ(path, "/v1/embeddings");
      if (fail_first > 0) {
        --fail_first;
        return HttpResponse{503, "busy"};
      }
      const auto req = nlohmann::json::parse(body);
      const std::size_t call = batch_sizes.size();
      batch_sizes.push_back(req["input"].size());
      const std::size_t dim = call < dims_per_call.size() ? dims_per_call[call] : dims_per_call.back();
      nlohmann::json res;
      res["data"] = nlohmann::json::array();
      for (std::size_t i = 0; i < req["input"].size(); ++i) {
        std::vector<float> v(dim, 0.0f);
        v[(call * 2 + i) % dim] = 1.0f;  // unit basis vector
        res["data"].push_back({{"index", i}, {"embedding", v}});
      }
      return HttpResponse{200, res.dump()};
    });
  }
};

}  // namespace

TEST(FetchEmbeddings, BatchesAreCeilingSized) {
  const auto c = testsupport::make_corpus(5, 1);
  EmbeddingService svc{{5}, {}, 0};
  auto t = svc.transport();
  EmbeddingServiceConfig cfg;
  cfg.batch_size = 2;
  Retrier retrier(cfg.retry, [](auto) {});
  FetchStats stats;
  const auto e = fetch_embeddings(cfg, c, *t, retrier, &stats);
  EXPECT_EQ(stats.requests, 3u);
  EXPECT_EQ(stats.batch_sizes, (std::vector<std::size_t>{2, 2, 1}));
  ASSERT_EQ(e.rows(), 5u);
  // rows equal the mock's unit basis vectors
  for (std::size_t i = 0; i < 5; ++i) {
    const std::size_t call = i / 2, slot = i % 2;
    for (std::size_t d = 0; d < 5; ++d) EXPECT_EQ(e.row(i)[d], d == (call * 2 + slot) % 5 ? 1.0f : 0.0f);
  }
}

TEST(FetchEmbeddings, DimensionChangeAcrossBatches) {
  const auto c = testsupport::make_corpus(4, 1);
  EmbeddingService svc{{384, 768}, {}, 0};
  auto t = svc.transport();
  EmbeddingServiceConfig cfg;
  cfg.batch_size = 2;
  Retrier retrier(cfg.retry, [](auto) {});
  EXPECT_EQ(error_code([&] { fetch_embeddings(cfg, c, *t, retrier); }), "DimMismatch");
}

TEST(FetchEmbeddings, RetriesTransientFailures) {
  const auto c = testsupport::make_corpus(3, 1);
  EmbeddingService svc{{3}, {}, 2};
  auto t = svc.transport();
  EmbeddingServiceConfig cfg;
  std::vector<long long> sleeps;
  Retrier retrier(cfg.retry, [&](std::chrono::milliseconds d) { sleeps.push_back(d.count()); });
  const auto e = fetch_embeddings(cfg, c, *t, retrier);
  EXPECT_EQ(e.rows(), 3u);
  EXPECT_EQ(sleeps.size(), 2u);
}

TEST(FetchEmbeddings, PersistentFailureSurfaces) {
  const auto c = testsupport::make_corpus(3, 1);
  EmbeddingService svc{{3}, {}, 100};
  auto t = svc.transport();
  EmbeddingServiceConfig cfg;
  Retrier retrier(cfg.retry, [](auto) {});
  EXPECT_EQ(error_code([&] { fetch_embeddings(cfg, c, *t, retrier); }), "ServiceError");
}
