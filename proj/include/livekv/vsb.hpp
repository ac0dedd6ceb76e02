// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "livekv/kv_cache.hpp"
#include "livekv/tensor.hpp"

namespace livekv {

enum class HeadPooling { Mean, Max };

/// How attention probabilities are reduced to one score per key.
struct ScoreOptions {
    bool scale = true;
    HeadPooling pooling = HeadPooling::Mean;
};

struct VsbConfig {
    std::size_t budget_M = 12000;
    std::size_t num_buckets_N = 12000;
    std::size_t bucket_capacity_B = 1;
    std::size_t window_r = 64;
    double phase1_ratio_R = 0.5;

    /// round-half-up(R * M).
    std::size_t phase1_count() const;

    /// Throws ConfigInconsistent when N * B != M, InvalidConfig for out-of-range fields.
    void validate() const;

    /// A bucket count of 0 means "derive N = M / B".
    void resolve_buckets();
};

/// One pooled score per cached token.
using ImportanceScores = std::vector<float>;

/// Mean over the window rows, then over heads (or max over heads), of softmax(Q Kᵀ).
/// Throws WindowTooLarge when the window has more rows than the cache.
ImportanceScores window_importance(std::span<const HeadMatrix> cache_keys, std::span<const HeadMatrix> window_queries,
                                   const ScoreOptions& options = {}, OpCounter* ops = nullptr);

constexpr std::size_t bucket_of(std::size_t cache_index, std::size_t length, std::size_t num_buckets) {
    return cache_index * num_buckets / length;
}

/// Indices sorted by descending score, ties by ascending index.
std::vector<std::size_t> rank_by_score(std::span<const float> scores);

/// Two-phase bucketed selection. Returns min(L, M) indices in ascending order.
std::vector<std::size_t> vsb_select(std::span<const float> scores, const VsbConfig& config);

/// The M highest scores, ties by earlier index. Returns ascending indices.
std::vector<std::size_t> topk_select(std::span<const float> scores, std::size_t budget);

enum class CompressMode { Vsb, TopK };

struct CompressResult {
    bool evicted = false;
    std::size_t length_before = 0;
    std::size_t length_after = 0;
    std::vector<std::size_t> retained; // indices into the pre-eviction cache, when evicted
};

/// Scores the cache against the window, stores the scores and evicts down to M when L > M.
/// With always_score off (the default trigger) an under-budget cache is left untouched.
CompressResult compress(LayerCache& cache, std::span<const HeadMatrix> window_queries, const VsbConfig& config,
                        CompressMode mode = CompressMode::Vsb, const ScoreOptions& options = {},
                        OpCounter* ops = nullptr, bool always_score = false);

} // namespace livekv
