// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <vector>

#include "livekv/error.hpp"
#include "livekv/kv_cache.hpp"
#include "test_util.hpp"

namespace livekv {
namespace {

TokenRecord make_record(std::int64_t pos, std::size_t heads, std::size_t dim) {
    TokenRecord r;
    r.stream_position = pos;
    for (std::size_t h = 0; h < heads; ++h) {
        r.key.emplace_back(dim, static_cast<float>(pos) + 0.1f * static_cast<float>(h));
        r.value.emplace_back(dim, -static_cast<float>(pos));
    }
    return r;
}

std::vector<std::int64_t> positions_of(const LayerCache& c) { return {c.positions().begin(), c.positions().end()}; }

TEST(LayerCache, AppendPreservesOrder) {
    LayerCache cache(2, 4, 8);
    std::vector<TokenRecord> recs{make_record(0, 2, 4), make_record(1, 2, 4), make_record(5, 2, 4)};
    cache.append_tokens(recs);
    EXPECT_EQ(cache.size(), 3u);
    EXPECT_EQ(positions_of(cache), (std::vector<std::int64_t>{0, 1, 5}));
    const auto r = cache.record(2);
    EXPECT_EQ(r.stream_position, 5);
    EXPECT_FLOAT_EQ(r.key[1][0], 5.1f);
    EXPECT_FLOAT_EQ(r.value[0][3], -5.0f);
    EXPECT_EQ(r.score, 0.0f);
}

TEST(LayerCache, RejectsNonMonotonePositions) {
    LayerCache cache(1, 2, 8);
    std::vector<TokenRecord> first{make_record(3, 1, 2)};
    cache.append_tokens(first);
    for (std::int64_t bad : {3, 1}) {
        std::vector<TokenRecord> next{make_record(bad, 1, 2)};
        try {
            cache.append_tokens(next);
            FAIL();
        } catch (const Error& e) {
            EXPECT_EQ(e.code(), ErrorCode::PositionOrderViolation);
        }
    }
    std::vector<TokenRecord> unsorted{make_record(9, 1, 2), make_record(8, 1, 2)};
    EXPECT_THROW(cache.append_tokens(unsorted), Error);
    EXPECT_EQ(cache.size(), 1u); // failed appends leave the cache untouched
}

TEST(LayerCache, OverBudgetAllowedBeforeCompression) {
    LayerCache cache(1, 2, 4);
    std::vector<TokenRecord> recs;
    for (std::int64_t p = 0; p < 6; ++p) {
        recs.push_back(make_record(p, 1, 2));
    }
    cache.append_tokens(std::span(recs).first(4));
    cache.append_tokens(std::span(recs).subspan(4));
    EXPECT_EQ(cache.size(), 6u);
    EXPECT_EQ(cache.budget(), 4u);
}

TEST(LayerCache, RetainIndices) {
    LayerCache cache(1, 2, 8);
    std::vector<TokenRecord> recs;
    for (std::int64_t p = 0; p < 4; ++p) {
        recs.push_back(make_record(p, 1, 2));
    }
    cache.append_tokens(recs);

    LayerCache all = cache;
    const std::vector<std::size_t> every{0, 1, 2, 3};
    all.retain_indices(every);
    EXPECT_EQ(positions_of(all), positions_of(cache));
    EXPECT_EQ(all.head_keys(0), cache.head_keys(0));

    LayerCache none = cache;
    none.retain_indices(std::vector<std::size_t>{});
    EXPECT_TRUE(none.empty());

    LayerCache some = cache;
    some.retain_indices(std::vector<std::size_t>{2, 0, 2});
    EXPECT_EQ(positions_of(some), (std::vector<std::int64_t>{0, 2}));
    EXPECT_FLOAT_EQ(some.head_keys(0).at(1, 0), 2.0f);

    try {
        LayerCache bad = cache;
        bad.retain_indices(std::vector<std::size_t>{4});
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::IndexOutOfRange);
    }
}

TEST(LayerCache, VersionBumpsOnMutation) {
    LayerCache cache(1, 2, 8);
    const auto v0 = cache.version();
    std::vector<TokenRecord> recs{make_record(0, 1, 2), make_record(1, 1, 2)};
    cache.append_tokens(recs);
    const auto v1 = cache.version();
    EXPECT_NE(v0, v1);
    cache.retain_indices(std::vector<std::size_t>{1});
    EXPECT_NE(cache.version(), v1);
}

TEST(LayerCache, RetainNeverReordersProperty) {
    Rng rng(21, {1});
    for (int trial = 0; trial < 100; ++trial) {
        LayerCache cache(2, 4, 64);
        std::int64_t pos = 0;
        const std::size_t n = 1 + rng.below(60);
        std::vector<std::int64_t> positions(n);
        for (auto& p : positions) {
            pos += 1 + static_cast<std::int64_t>(rng.below(5));
            p = pos;
        }
        std::vector<HeadMatrix> keys{testing::random_matrix(rng, n, 4), testing::random_matrix(rng, n, 4)};
        std::vector<HeadMatrix> values{testing::random_matrix(rng, n, 4), testing::random_matrix(rng, n, 4)};
        cache.append_block(positions, keys, values);
        std::vector<std::size_t> keep;
        for (std::size_t i = 0; i < n; ++i) {
            if (rng.uniform() < 0.5) {
                keep.push_back(i);
            }
        }
        rng.shuffle(keep);
        cache.retain_indices(keep);
        ASSERT_EQ(cache.size(), keep.size());
        for (std::size_t i = 1; i < cache.size(); ++i) {
            ASSERT_LT(cache.positions()[i - 1], cache.positions()[i]);
        }
        std::sort(keep.begin(), keep.end());
        for (std::size_t i = 0; i < keep.size(); ++i) {
            ASSERT_EQ(cache.positions()[i], positions[keep[i]]);
            ASSERT_EQ(cache.head_keys(1).at(i, 3), keys[1].at(keep[i], 3));
        }
    }
}

TEST(LayerCache, ByteEstimate) {
    LayerCache cache(2, 8, 16);
    std::vector<TokenRecord> recs;
    for (std::int64_t p = 0; p < 4; ++p) {
        recs.push_back(make_record(p, 2, 8));
    }
    cache.append_tokens(recs);
    EXPECT_EQ(cache.bytes(), 4u * 2u * 8u * 2u * 4u);
}

} // namespace
} // namespace livekv
