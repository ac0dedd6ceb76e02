// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cstring>
#include <fstream>
#include <set>
#include <vector>

#include <gtest/gtest.h>

#include "livekv/error.hpp"
#include "livekv/trace.hpp"
#include "livekv/vsb.hpp"
#include "test_util.hpp"

namespace livekv {
namespace {

TraceSpec small_spec(std::uint64_t seed) {
    TraceSpec s;
    s.shape = {2, 2, 16, 10000.0};
    s.total_tokens = 120;
    s.chunk_size = 32;
    s.num_sinks = 3;
    s.local_cluster_size = 30;
    s.num_answer_tokens = 5;
    s.question_tokens = 3;
    s.seed = seed;
    return s;
}

void put_u64(std::vector<std::uint8_t>& bytes, std::size_t offset, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        bytes[offset + i] = static_cast<std::uint8_t>(v >> (8 * i));
    }
}

// Mean over every query row and head of non-causal softmax attention over all keys.
std::vector<double> full_attention_importance(const Trace& t, std::size_t layer) {
    const std::size_t T = t.token_count();
    std::vector<double> imp(T, 0.0);
    for (std::size_t h = 0; h < t.shape.num_heads; ++h) {
        const HeadMatrix p = attention_scores(t.q[layer][h], t.k[layer][h]);
        for (std::size_t i = 0; i < T; ++i) {
            for (std::size_t j = 0; j < T; ++j) {
                imp[j] += p.at(i, j);
            }
        }
    }
    return imp;
}

TEST(TraceSpec, Validation) {
    TraceSpec s;
    s.num_sinks = 3000;
    s.total_tokens = 2048;
    testing::expect_error([&] { s.validate(); }, ErrorCode::InvalidSpec);
    s = TraceSpec{};
    s.shape.head_dim = 7;
    testing::expect_error([&] { (void)generate(s); }, ErrorCode::InvalidSpec);
    s = TraceSpec{};
    s.answer_query = {{1.0f}};
    testing::expect_error([&] { s.validate(); }, ErrorCode::InvalidSpec);
}

TEST(Generate, ShapesAndRoles) {
    const auto s = small_spec(1);
    const Trace t = generate(s);
    ASSERT_EQ(t.token_count(), 120u);
    EXPECT_EQ(t.num_chunks(), 4u);
    EXPECT_EQ(t.chunk(3).size(), 24u);
    EXPECT_EQ(t.k.size(), 2u);
    EXPECT_EQ(t.k[1][1].rows(), 120u);
    ASSERT_TRUE(t.truth.has_value());
    EXPECT_EQ(t.truth->sink_ids.size(), 3u);
    EXPECT_EQ(t.truth->answer_ids.size(), 5u);
    EXPECT_EQ(t.truth->question.rows(), 3u);
    std::set<std::int64_t> seen;
    for (const auto* ids : {&t.truth->sink_ids, &t.truth->answer_ids, &t.truth->local_ids}) {
        for (auto id : *ids) {
            EXPECT_TRUE(seen.insert(id).second) << "token " << id << " has two roles";
        }
    }
}

TEST(Generate, Deterministic) {
    EXPECT_TRUE(generate(small_spec(5)) == generate(small_spec(5)));
    EXPECT_FALSE(generate(small_spec(5)) == generate(small_spec(6)));
}

TEST(Generate, ZeroSignalGivesUniformImportance) {
    TraceSpec s = small_spec(2);
    s.num_sinks = 0;
    s.num_answer_tokens = 0;
    s.noise_std = 0.0;
    s.local_cluster_size = 0;
    const Trace t = generate(s);
    const auto imp = full_attention_importance(t, 0);
    for (double x : imp) {
        EXPECT_NEAR(x, imp[0], 1e-9);
    }
    const std::vector<HeadMatrix> window{t.q[0][0], t.q[0][1]};
    const auto w = window_importance(t.k[0], window);
    for (float x : w) {
        EXPECT_NEAR(x, 1.0 / 120.0, 1e-6);
    }
}

TEST(Generate, SinksDominateFullAttention) {
    // Local scenes are off here: in-scene local keys out-score sinks for the queries of
    // their own scene, so with scenes on only the plain-token ranking below is guaranteed.
    TraceSpec s;
    s.local_cluster_size = 0;
    s.shape = {1, 2, 64, 10000.0};
    s.total_tokens = 784;
    s.num_sinks = 2;
    s.sink_gain = 10.0;
    s.noise_std = 0.01;
    const Trace t = generate(s);
    const auto imp = full_attention_importance(t, 0);
    const std::set<std::int64_t> sinks(t.truth->sink_ids.begin(), t.truth->sink_ids.end());
    double min_sink = 1e300;
    double max_other = 0.0;
    for (std::size_t j = 0; j < imp.size(); ++j) {
        if (sinks.count(static_cast<std::int64_t>(j))) {
            min_sink = std::min(min_sink, imp[j]);
        } else {
            max_other = std::max(max_other, imp[j]);
        }
    }
    EXPECT_GT(min_sink, max_other);
}

TEST(Generate, SinksOutrankPlainTokensAcrossSeeds) {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        TraceSpec s;
        s.shape = {1, 2, 32, 10000.0};
        s.total_tokens = 400;
        s.local_cluster_size = 100;
        s.noise_std = 0.01;
        s.seed = seed;
        const Trace t = generate(s);
        const auto imp = full_attention_importance(t, 0);
        std::set<std::int64_t> planted(t.truth->local_ids.begin(), t.truth->local_ids.end());
        planted.insert(t.truth->answer_ids.begin(), t.truth->answer_ids.end());
        double min_sink = 1e300;
        for (auto id : t.truth->sink_ids) {
            min_sink = std::min(min_sink, imp[id]);
            planted.insert(id);
        }
        for (std::size_t j = 0; j < imp.size(); ++j) {
            if (!planted.count(static_cast<std::int64_t>(j))) {
                EXPECT_GT(min_sink, imp[j]) << "seed " << seed << " token " << j;
            }
        }
    }
}

TEST(Generate, LocalTokensFadeWithDistance) {
    TraceSpec s;
    s.shape = {1, 2, 64, 10000.0};
    s.total_tokens = 1600;
    s.local_cluster_size = 200;
    s.seed = 3;
    const Trace t = generate(s);
    const std::size_t r = 32;
    auto window_score = [&](std::size_t end, std::int64_t token) {
        std::vector<HeadMatrix> keys;
        std::vector<HeadMatrix> window;
        for (std::size_t h = 0; h < 2; ++h) {
            HeadMatrix k(0, 64);
            HeadMatrix q(0, 64);
            for (std::size_t i = 0; i < end; ++i) {
                k.append_row(t.k[0][h].row(i));
            }
            for (std::size_t i = end - r; i < end; ++i) {
                q.append_row(t.q[0][h].row(i));
            }
            keys.push_back(std::move(k));
            window.push_back(std::move(q));
        }
        return window_importance(keys, window)[token];
    };
    std::size_t checked = 0;
    std::size_t held = 0;
    for (auto id : t.truth->local_ids) {
        const std::size_t cluster = id / 200;
        const std::size_t inside_end = (cluster + 1) * 200;
        const std::size_t later_end = (cluster + 3) * 200;
        if (later_end > 1600 || static_cast<std::size_t>(id) >= inside_end - r || id % 7 != 0) {
            continue;
        }
        ++checked;
        held += window_score(inside_end, id) > window_score(later_end, id);
    }
    ASSERT_GT(checked, 20u);
    EXPECT_EQ(held, checked);
}

TEST(TraceFile, RoundTripIsBitExact) {
    const std::string path = ::testing::TempDir() + "/rt.kvtr";
    for (std::uint64_t seed = 0; seed < 4; ++seed) {
        const Trace t = generate(small_spec(seed));
        write_trace(t, path);
        const Trace back = read_trace(path);
        EXPECT_TRUE(back == t);
        EXPECT_EQ(encode_trace(back), encode_trace(t));
    }
}

TEST(TraceFile, ExplicitPositionsAndKvOnly) {
    Trace t = generate(small_spec(9));
    for (auto& p : t.positions) {
        p = 3 * p + 1;
    }
    t.q.clear();
    t.truth.reset();
    const Trace back = decode_trace(encode_trace(t));
    EXPECT_TRUE(back == t);
    EXPECT_FALSE(back.has_queries());
}

TEST(TraceFile, LittleEndianHeader) {
    const auto bytes = encode_trace(generate(small_spec(0)));
    ASSERT_GT(bytes.size(), 44u);
    EXPECT_EQ(std::memcmp(bytes.data(), "KVTR", 4), 0);
    EXPECT_EQ(bytes[4], 1);
    EXPECT_EQ(bytes[5] | bytes[6] | bytes[7], 0);
    EXPECT_EQ(bytes[28], 120);
    EXPECT_EQ(bytes[29], 0);
}

TEST(TraceFile, BadMagic) {
    auto bytes = encode_trace(generate(small_spec(0)));
    bytes[0] = 'X';
    testing::expect_error([&] { (void)decode_trace(bytes); }, ErrorCode::NotATrace);
    testing::expect_error([&] { (void)decode_trace({}); }, ErrorCode::NotATrace);
}

TEST(TraceFile, UnsupportedVersion) {
    auto bytes = encode_trace(generate(small_spec(0)));
    bytes[4] = 2;
    testing::expect_error([&] { (void)decode_trace(bytes); }, ErrorCode::UnsupportedVersion);
}

TEST(TraceFile, HeaderClaimsMoreTokensThanPayload) {
    TraceSpec s = small_spec(0);
    s.total_tokens = 50;
    Trace t = generate(s);
    t.truth.reset();
    auto bytes = encode_trace(t);
    put_u64(bytes, 28, 100);
    testing::expect_error([&] { (void)decode_trace(bytes); }, ErrorCode::CorruptTrace);
}

TEST(TraceFile, TruncatedAndTrailingBytes) {
    const auto bytes = encode_trace(generate(small_spec(0)));
    for (std::size_t cut : {std::size_t{10}, std::size_t{44}, bytes.size() / 2, bytes.size() - 1}) {
        const std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
        EXPECT_THROW((void)decode_trace(part), Error) << "cut at " << cut;
    }
    auto longer = bytes;
    longer.push_back(0);
    testing::expect_error([&] { (void)decode_trace(longer); }, ErrorCode::CorruptTrace);
    auto huge = bytes;
    put_u64(huge, 28, ~std::uint64_t{0});
    testing::expect_error([&] { (void)decode_trace(huge); }, ErrorCode::CorruptTrace);
}

TEST(TraceFile, MissingFile) {
    testing::expect_error([] { (void)read_trace("/nonexistent/dir/x.kvtr"); }, ErrorCode::IoError);
}

TEST(Snapshot, RoundTrip) {
    const Trace t = generate(small_spec(4));
    LayerCache cache(2, 16, 64);
    const auto c0 = t.chunk(0);
    cache.append_block(c0.positions, c0.k[0], c0.v[0]);
    const std::vector<std::size_t> keep{1, 5, 9, 30};
    cache.retain_indices(keep);
    const std::string path = ::testing::TempDir() + "/snap.kvtr";
    write_snapshot(cache, 10000.0, path);
    const LayerCache back = read_snapshot(path, 64);
    ASSERT_EQ(back.size(), 4u);
    EXPECT_EQ(back.head_keys(1), cache.head_keys(1));
    EXPECT_EQ(back.head_values(0), cache.head_values(0));
    EXPECT_TRUE(std::equal(back.positions().begin(), back.positions().end(), cache.positions().begin()));
}

TEST(SpecJson, RoundTrip) {
    TraceSpec s = small_spec(42);
    s.answer_query = std::vector<std::vector<float>>(2, std::vector<float>(16, 0.25f));
    s.noise_std = 0.123456789;
    const std::string text = spec_to_json(s);
    EXPECT_NE(text.find("livekv.trace-spec/1"), std::string::npos);
    EXPECT_EQ(spec_to_json(spec_from_json(text)), text);
    testing::expect_error([] { (void)spec_from_json("{not json"); }, ErrorCode::InvalidSpec);
    testing::expect_error([] { (void)spec_from_json(R"({"num_sinks": "many"})"); }, ErrorCode::InvalidSpec);
}

TEST(Fnv, KnownValues) {
    EXPECT_EQ(fnv1a64({}), 0xcbf29ce484222325ull);
    EXPECT_EQ(fnv1a64({'a'}), 0xaf63dc4c8601ec8cull);
}

} // namespace
} // namespace livekv
