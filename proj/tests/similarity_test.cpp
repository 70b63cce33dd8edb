#include <gtest/gtest.h>

#include <random>

#include "lmrank/similarity.hpp"
#include "test_util.hpp"

namespace lmrank {
namespace {

using testing::make_set;

TEST(CosineTopK, SelfMatchComesFirst) {
  std::mt19937_64 rng(1);
  const auto corpus = testing::random_set(rng, 30, 8);
  const auto query = corpus.select_rows(std::vector<std::size_t>{17});
  const auto top = cosine_topk(query, corpus, 3);
  ASSERT_EQ(top[0].size(), 3u);
  EXPECT_EQ(top[0][0].index, 17u);
  EXPECT_NEAR(top[0][0].score, 1.0, 1e-6);
}

TEST(CosineTopK, OrthogonalIsZero) {
  const auto top = cosine_topk(make_set({{1, 0}}), make_set({{0, 2}}), 1);
  EXPECT_NEAR(top[0][0].score, 0.0, 1e-6);
}

TEST(CosineTopK, MatchesNaiveOracle) {
  std::mt19937_64 rng(50);
  const auto queries = testing::random_set(rng, 50, 24, "q");
  const auto corpus = testing::random_set(rng, 200, 24, "c");
  const auto top = cosine_topk(queries, corpus, 5, {.block_size = 16, .threads = 2});
  for (std::size_t i = 0; i < queries.size(); ++i) {
    std::string why;
    EXPECT_TRUE(testing::topk_matches_oracle(top[i], testing::oracle_topk_row(queries, i, corpus, 5), 1e-6, &why))
        << "query " << i << ": " << why;
  }
}

TEST(CosineTopK, TiesBreakByAscendingIndex) {
  // Rows 1, 2 and 4 are the same direction as the query.
  const auto corpus = make_set({{0, 1}, {1, 0}, {2, 0}, {-1, 0}, {3, 0}});
  const auto top = cosine_topk(make_set({{1, 0}}), corpus, 3, {.block_size = 2, .threads = 1});
  ASSERT_EQ(top[0].size(), 3u);
  EXPECT_EQ(top[0][0].index, 1u);
  EXPECT_EQ(top[0][1].index, 2u);
  EXPECT_EQ(top[0][2].index, 4u);
}

TEST(CosineTopK, ShortCorpusAndEmptyCorpus) {
  const auto top = cosine_topk(make_set({{1, 0}, {0, 1}}), make_set({{1, 1}, {1, -1}}), 5);
  EXPECT_EQ(top[0].size(), 2u);
  EXPECT_EQ(top.k, 5u);
  const auto none = cosine_topk(make_set({{1, 0}}), EmbeddingSet::make_empty(2), 3);
  ASSERT_EQ(none.size(), 1u);
  EXPECT_TRUE(none[0].empty());
}

TEST(CosineTopK, Errors) {
  EXPECT_THROW(cosine_topk(make_set({{1, 0}}), make_set({{1, 0, 0}}), 1), ValidationError);
  EXPECT_THROW(cosine_topk(make_set({{0, 0}}), make_set({{1, 0}}), 1), ValidationError);
  EXPECT_THROW(cosine_topk(make_set({{1, 0}}), make_set({{0, 0}}), 1), ValidationError);
  EXPECT_THROW(cosine_topk(make_set({{1, 0}}), make_set({{1, 0}}), 0), ValidationError);
}

TEST(CosineTopK, SymmetricAndScaleInvariant) {
  std::mt19937_64 rng(3);
  const auto a = testing::random_set(rng, 20, 12, "a");
  const auto b = testing::random_set(rng, 20, 12, "b");
  const auto ab = cosine_topk(a, b, b.size());
  const auto ba = cosine_topk(b, a, a.size());
  std::vector<std::vector<float>> m(20, std::vector<float>(20));
  for (std::size_t i = 0; i < 20; ++i) {
    for (const auto& n : ab[i]) m[i][n.index] = n.score;
  }
  for (std::size_t j = 0; j < 20; ++j) {
    for (const auto& n : ba[j]) EXPECT_NEAR(n.score, m[n.index][j], 1e-6);
  }

  std::vector<float> scaled(a.values().begin(), a.values().end());
  for (std::size_t i = 0; i < a.size(); ++i) {
    const float factor = 0.01f + 37.0f * static_cast<float>(i);
    for (std::size_t k = 0; k < a.dim(); ++k) scaled[i * a.dim() + k] *= factor;
  }
  const auto as = cosine_topk(EmbeddingSet(a.ids(), a.dim(), scaled), b, b.size());
  for (std::size_t i = 0; i < 20; ++i) {
    for (const auto& n : as[i]) EXPECT_NEAR(n.score, m[i][n.index], 1e-6);
  }
}

TEST(CosineTopK, DeterministicAcrossPartitioning) {
  std::mt19937_64 rng(77);
  const auto q = testing::random_set(rng, 300, 20, "q");
  const auto c = testing::random_set(rng, 700, 20, "c");
  const auto ref = cosine_topk(q, c, 7, {.block_size = 256, .threads = 1});
  for (std::size_t block : {1, 7, 64, 1000}) {
    for (std::size_t threads : {1, 3, 8}) {
      EXPECT_EQ(ref, cosine_topk(q, c, 7, {.block_size = block, .threads = threads}))
          << "block " << block << " threads " << threads;
    }
  }
}

TEST(MeanTopKSimilarity, ExactCopyAndOrthogonalPool) {
  const auto row = make_set({{1, 2, 3}});
  EXPECT_NEAR(mean_topk_similarity(row, make_set({{0, 1, 0}, {2, 4, 6}}), 1)[0], 1.0, 1e-6);
  const auto axis = make_set({{1, 0, 0}});
  EXPECT_NEAR(mean_topk_similarity(axis, make_set({{0, 1, 0}, {0, 0, 5}, {0, 3, 3}}), 2)[0], 0.0, 1e-6);
}

TEST(MeanTopKSimilarity, MatchesOracle) {
  std::mt19937_64 rng(20);
  const auto set = testing::random_set(rng, 20, 16, "s");
  const auto pool = testing::random_set(rng, 100, 16, "p");
  const auto got = mean_topk_similarity(set, pool, 5);
  const auto want = testing::oracle_mean_topk(set, pool, 5);
  for (std::size_t i = 0; i < set.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-6);
  // k larger than the pool averages over the whole pool.
  const auto small = pool.select_rows(std::vector<std::size_t>{0, 1, 2});
  const auto all = mean_topk_similarity(set, small, 10);
  const auto all_want = testing::oracle_mean_topk(set, small, 3);
  for (std::size_t i = 0; i < set.size(); ++i) EXPECT_NEAR(all[i], all_want[i], 1e-6);
}

TEST(MeanTopKSimilarity, Errors) {
  EXPECT_THROW(mean_topk_similarity(make_set({{1, 0}}), EmbeddingSet::make_empty(2), 1), ValidationError);
  EXPECT_THROW(mean_topk_similarity(make_set({{1, 0}}), make_set({{1, 0, 0}}), 1), ValidationError);
}

}  // namespace
}  // namespace lmrank
