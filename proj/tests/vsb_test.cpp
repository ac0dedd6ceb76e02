// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "livekv/error.hpp"
#include "livekv/metrics.hpp"
#include "livekv/rng.hpp"
#include "livekv/vsb.hpp"
#include "reference.hpp"
#include "test_util.hpp"

namespace livekv {
namespace {

const std::vector<float> kWorked{0.30f, 0.05f, 0.28f, 0.27f, 0.03f, 0.02f, 0.04f, 0.14f};

VsbConfig small_config(std::size_t M, std::size_t N, std::size_t B, double R) {
    VsbConfig c;
    c.budget_M = M;
    c.num_buckets_N = N;
    c.bucket_capacity_B = B;
    c.phase1_ratio_R = R;
    c.window_r = 1;
    return c;
}

void expect_near_all(const ImportanceScores& got, const std::vector<float>& want, float tol) {
    ASSERT_EQ(got.size(), want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
        EXPECT_NEAR(got[i], want[i], tol) << "index " << i;
    }
}

TEST(WindowImportance, SingleKeyIsOne) {
    std::vector<HeadMatrix> keys{HeadMatrix::from_rows({{0.3f, -1.0f}})};
    std::vector<HeadMatrix> window{HeadMatrix::from_rows({{2.0f, 5.0f}})};
    expect_near_all(window_importance(keys, window), {1.0f}, 1e-6f);
}

TEST(WindowImportance, HandComputedSoftmax) {
    std::vector<HeadMatrix> keys{HeadMatrix::from_rows({{1.0f}, {0.0f}, {-1.0f}})};
    std::vector<HeadMatrix> window{HeadMatrix::from_rows({{2.0f}})};
    expect_near_all(window_importance(keys, window, {.scale = false}), {0.8668f, 0.1173f, 0.0159f}, 1e-3f);
}

TEST(WindowImportance, IdenticalHeadsMatchOneHead) {
    Rng rng(3, {1});
    const HeadMatrix k = testing::random_matrix(rng, 10, 8);
    const HeadMatrix q = testing::random_matrix(rng, 4, 8);
    const std::vector<HeadMatrix> one_k{k};
    const std::vector<HeadMatrix> one_q{q};
    const std::vector<HeadMatrix> two_k{k, k};
    const std::vector<HeadMatrix> two_q{q, q};
    const auto a = window_importance(one_k, one_q);
    const auto b = window_importance(two_k, two_q);
    expect_near_all(b, a, 1e-6f);
}

TEST(WindowImportance, ScoresSumToOne) {
    Rng rng(4, {2});
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t L = 1 + rng.below(40);
        const std::size_t r = 1 + rng.below(L);
        std::vector<HeadMatrix> keys{testing::random_matrix(rng, L, 6), testing::random_matrix(rng, L, 6)};
        std::vector<HeadMatrix> window{testing::random_matrix(rng, r, 6), testing::random_matrix(rng, r, 6)};
        for (auto pooling : {HeadPooling::Mean, HeadPooling::Max}) {
            const auto s = window_importance(keys, window, {.pooling = pooling});
            double sum = 0.0;
            for (float x : s) {
                EXPECT_GE(x, 0.0f);
                sum += x;
            }
            if (pooling == HeadPooling::Mean) {
                EXPECT_NEAR(sum, 1.0, 1e-5);
            }
        }
    }
}

TEST(WindowImportance, WindowLargerThanCacheFails) {
    std::vector<HeadMatrix> keys{HeadMatrix::from_rows({{1.0f}})};
    std::vector<HeadMatrix> window{HeadMatrix::from_rows({{1.0f}, {2.0f}})};
    try {
        (void)window_importance(keys, window);
        FAIL() << "expected WindowTooLarge";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::WindowTooLarge);
    }
}

TEST(WindowImportance, OpCountIsWindowTimesLength) {
    Rng rng(5, {0});
    std::vector<HeadMatrix> keys{testing::random_matrix(rng, 50, 8), testing::random_matrix(rng, 50, 8)};
    std::vector<HeadMatrix> window{testing::random_matrix(rng, 4, 8), testing::random_matrix(rng, 4, 8)};
    OpCounter ops;
    (void)window_importance(keys, window, {}, &ops);
    EXPECT_EQ(ops.mac, 2u * 4u * 50u * 8u);
    EXPECT_EQ(ops.exp, 2u * 4u * 50u);
}

TEST(BucketOf, ThirdBucketExample) {
    EXPECT_EQ(bucket_of(255, 1000, 10), 2u);
}

TEST(BucketOf, Ends) {
    for (std::size_t L : {10u, 17u, 1000u}) {
        for (std::size_t N : {1u, 3u, 10u}) {
            EXPECT_EQ(bucket_of(0, L, N), 0u);
            EXPECT_EQ(bucket_of(L - 1, L, N), N - 1);
        }
    }
}

TEST(VsbConfig, RejectsInconsistentBuckets) {
    auto c = small_config(4, 3, 1, 0.5);
    try {
        c.validate();
        FAIL() << "expected ConfigInconsistent";
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ConfigInconsistent);
    }
    EXPECT_THROW((void)vsb_select(kWorked, c), Error);
}

TEST(VsbConfig, ResolvesDerivedBucketCount) {
    auto c = small_config(12, 0, 3, 0.5);
    c.resolve_buckets();
    EXPECT_EQ(c.num_buckets_N, 4u);
    EXPECT_NO_THROW(c.validate());
}

TEST(VsbConfig, Phase1CountRoundsHalfUp) {
    EXPECT_EQ(small_config(4, 4, 1, 0.5).phase1_count(), 2u);
    EXPECT_EQ(small_config(5, 5, 1, 0.5).phase1_count(), 3u);
    EXPECT_EQ(small_config(3, 3, 1, 0.1).phase1_count(), 0u);
    EXPECT_EQ(small_config(3, 3, 1, 1.0).phase1_count(), 3u);
}

TEST(VsbSelect, UnderBudgetKeepsAll) {
    const std::vector<float> s{0.2f, 0.5f, 0.3f};
    EXPECT_EQ(vsb_select(s, small_config(4, 4, 1, 0.5)), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(VsbSelect, WorkedExample) {
    EXPECT_EQ(vsb_select(kWorked, small_config(4, 4, 1, 0.5)), (std::vector<std::size_t>{0, 2, 4, 7}));
}

TEST(VsbSelect, UniformScoresFollowTieBreak) {
    // Ties resolve to ascending index; phase 1 takes {0,1}, phase 2 then admits one
    // token per remaining bucket in index order: 2 (bucket 1), 4 (bucket 2).
    const std::vector<float> s(8, 0.125f);
    EXPECT_EQ(vsb_select(s, small_config(4, 4, 1, 0.5)), (std::vector<std::size_t>{0, 1, 2, 4}));
}

TEST(VsbSelect, MatchesNaiveReference) {
    Rng rng(11, {0});
    for (int trial = 0; trial < 300; ++trial) {
        const std::size_t B = 1 + rng.below(3);
        const std::size_t N = 1 + rng.below(40);
        const std::size_t M = N * B;
        const std::size_t L = 1 + rng.below(3 * M + 5);
        const double R = static_cast<double>(rng.below(11)) / 10.0;
        const auto s = testing::random_scores(rng, L, trial % 2 == 0);
        const auto cfg = small_config(M, N, B, R);
        const auto got = vsb_select(s, cfg);
        const auto ref = testing::naive_vsb(s, M, N, B, R);
        ASSERT_EQ(std::set<std::size_t>(got.begin(), got.end()), ref.kept) << "trial " << trial;
        ASSERT_EQ(got.size(), std::min(L, M));
        ASSERT_TRUE(std::is_sorted(got.begin(), got.end()));
        const std::set<std::size_t> kept(got.begin(), got.end());
        for (auto i : ref.phase1) {
            ASSERT_TRUE(kept.count(i)) << "phase-1 token dropped";
        }
        for (std::size_t b = 0; b < N && L > M; ++b) {
            ASSERT_LE(ref.phase1_per_bucket[b] + ref.phase2_per_bucket[b], std::max(B, ref.phase1_per_bucket[b]));
        }
    }
}

TEST(VsbSelect, Deterministic) {
    Rng rng(12, {0});
    const auto s = testing::random_scores(rng, 200, true);
    const auto cfg = small_config(40, 20, 2, 0.5);
    EXPECT_EQ(vsb_select(s, cfg), vsb_select(s, cfg));
}

TEST(VsbSelect, SpreadsCoverageOverClusteredScores) {
    // High scores concentrated in a few contiguous runs, as local scenes produce.
    Rng rng(13, {0});
    double vsb_cov = 0.0;
    double topk_cov = 0.0;
    const std::size_t L = 512;
    const std::size_t M = 64;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<float> s(L);
        for (auto& x : s) {
            x = static_cast<float>(0.1 * rng.uniform());
        }
        for (int c = 0; c < 3; ++c) {
            const std::size_t start = rng.below(L - 60);
            for (std::size_t i = start; i < start + 60; ++i) {
                s[i] += static_cast<float>(1.0 + rng.uniform());
            }
        }
        const auto cfg = small_config(M, M, 1, 0.5);
        vsb_cov += static_cast<double>(coverage(vsb_select(s, cfg), L, M));
        topk_cov += static_cast<double>(coverage(topk_select(s, M), L, M));
    }
    EXPECT_GT(vsb_cov, topk_cov);
}

TEST(TopkSelect, Examples) {
    EXPECT_EQ(topk_select(kWorked, 4), (std::vector<std::size_t>{0, 2, 3, 7}));
    EXPECT_EQ(topk_select(kWorked, 10), (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
    const std::vector<float> uniform(6, 1.0f);
    EXPECT_EQ(topk_select(uniform, 3), (std::vector<std::size_t>{0, 1, 2}));
}

TEST(RankByScore, TiesByIndex) {
    const std::vector<float> s{0.5f, 0.7f, 0.5f, 0.7f};
    EXPECT_EQ(rank_by_score(s), (std::vector<std::size_t>{1, 3, 0, 2}));
}

// One head, d=1, no scaling, window query [1]: key log(S_i) gives softmax weight
// proportional to S_i, so the window scores reproduce the worked example's ranking.
LayerCache worked_cache(std::vector<HeadMatrix>& window) {
    LayerCache cache(1, 1, 4);
    std::vector<std::vector<float>> rows;
    std::vector<std::int64_t> pos;
    std::vector<std::vector<float>> vals;
    for (std::size_t i = 0; i < kWorked.size(); ++i) {
        rows.push_back({std::log(kWorked[i])});
        vals.push_back({static_cast<float>(i)});
        pos.push_back(static_cast<std::int64_t>(10 * i));
    }
    const std::vector<HeadMatrix> k{HeadMatrix::from_rows(rows)};
    const std::vector<HeadMatrix> v{HeadMatrix::from_rows(vals)};
    cache.append_block(pos, k, v);
    window = {HeadMatrix::from_rows({{1.0f}})};
    return cache;
}

TEST(Compress, WorkedExampleShrinksCache) {
    std::vector<HeadMatrix> window;
    LayerCache cache = worked_cache(window);
    const auto result = compress(cache, window, small_config(4, 4, 1, 0.5), CompressMode::Vsb, {.scale = false});
    EXPECT_TRUE(result.evicted);
    EXPECT_EQ(result.length_before, 8u);
    EXPECT_EQ(result.length_after, 4u);
    EXPECT_EQ(result.retained, (std::vector<std::size_t>{0, 2, 4, 7}));
    const std::vector<std::int64_t> want{0, 20, 40, 70};
    EXPECT_TRUE(std::equal(want.begin(), want.end(), cache.positions().begin(), cache.positions().end()));
    EXPECT_EQ(cache.head_values(0).at(3, 0), 7.0f);
}

TEST(Compress, TopkModeKeepsHighestScores) {
    std::vector<HeadMatrix> window;
    LayerCache cache = worked_cache(window);
    compress(cache, window, small_config(4, 4, 1, 0.5), CompressMode::TopK, {.scale = false});
    const std::vector<std::int64_t> want{0, 20, 30, 70};
    EXPECT_TRUE(std::equal(want.begin(), want.end(), cache.positions().begin(), cache.positions().end()));
}

TEST(Compress, UnderBudgetIsUnchangedAndIdempotent) {
    std::vector<HeadMatrix> window;
    LayerCache cache = worked_cache(window);
    const auto cfg = small_config(4, 4, 1, 0.5);
    compress(cache, window, cfg, CompressMode::Vsb, {.scale = false});
    const auto version = cache.version();
    const std::vector<std::int64_t> before(cache.positions().begin(), cache.positions().end());
    const auto again = compress(cache, window, cfg, CompressMode::Vsb, {.scale = false});
    EXPECT_FALSE(again.evicted);
    EXPECT_EQ(cache.version(), version);
    EXPECT_TRUE(std::equal(before.begin(), before.end(), cache.positions().begin(), cache.positions().end()));
}

} // namespace
} // namespace livekv
