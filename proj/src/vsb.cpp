// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include "livekv/vsb.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "livekv/error.hpp"

namespace livekv {

std::size_t VsbConfig::phase1_count() const {
    return static_cast<std::size_t>(std::floor(phase1_ratio_R * static_cast<double>(budget_M) + 0.5));
}

void VsbConfig::validate() const {
    require(budget_M >= 1, ErrorCode::InvalidConfig, "budget must be >= 1");
    require(num_buckets_N >= 1 && bucket_capacity_B >= 1, ErrorCode::InvalidConfig, "buckets and capacity must be >= 1");
    require(window_r >= 1, ErrorCode::InvalidConfig, "window must be >= 1");
    require(phase1_ratio_R >= 0.0 && phase1_ratio_R <= 1.0, ErrorCode::InvalidConfig, "phase-1 ratio must lie in [0, 1]");
    require(num_buckets_N * bucket_capacity_B == budget_M, ErrorCode::ConfigInconsistent,
            "N*B = " + std::to_string(num_buckets_N * bucket_capacity_B) + " != M = " + std::to_string(budget_M));
}

void VsbConfig::resolve_buckets() {
    if (num_buckets_N == 0 && bucket_capacity_B >= 1 && budget_M % bucket_capacity_B == 0) {
        num_buckets_N = budget_M / bucket_capacity_B;
    }
}

ImportanceScores window_importance(std::span<const HeadMatrix> cache_keys, std::span<const HeadMatrix> window_queries,
                                   const ScoreOptions& options, OpCounter* ops) {
    require(!cache_keys.empty() && cache_keys.size() == window_queries.size(), ErrorCode::ShapeMismatch,
            "key and window head counts differ");
    const std::size_t length = cache_keys.front().rows();
    std::vector<double> pooled(length, options.pooling == HeadPooling::Max ? -1.0 : 0.0);
    for (std::size_t h = 0; h < cache_keys.size(); ++h) {
        require(cache_keys[h].rows() == length, ErrorCode::ShapeMismatch, "heads disagree on cache length");
        const std::size_t r = window_queries[h].rows();
        require(r >= 1, ErrorCode::ShapeMismatch, "empty observation window");
        require(r <= length, ErrorCode::WindowTooLarge,
                "window " + std::to_string(r) + " exceeds cache length " + std::to_string(length));
        const HeadMatrix probs = attention_scores(window_queries[h], cache_keys[h], options.scale, ops);
        for (std::size_t j = 0; j < length; ++j) {
            double mean = 0.0;
            for (std::size_t i = 0; i < r; ++i) {
                mean += probs.at(i, j);
            }
            mean /= static_cast<double>(r);
            if (options.pooling == HeadPooling::Max) {
                pooled[j] = std::max(pooled[j], mean);
            } else {
                pooled[j] += mean;
            }
        }
    }
    ImportanceScores out(length);
    const double heads = options.pooling == HeadPooling::Max ? 1.0 : static_cast<double>(cache_keys.size());
    for (std::size_t j = 0; j < length; ++j) {
        out[j] = static_cast<float>(pooled[j] / heads);
    }
    return out;
}

std::vector<std::size_t> rank_by_score(std::span<const float> scores) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    return order;
}

std::vector<std::size_t> vsb_select(std::span<const float> scores, const VsbConfig& config) {
    config.validate();
    const std::size_t length = scores.size();
    const std::size_t budget = config.budget_M;
    if (length <= budget) {
        std::vector<std::size_t> all(length);
        std::iota(all.begin(), all.end(), std::size_t{0});
        return all;
    }

    const auto order = rank_by_score(scores);
    const std::size_t phase1 = std::min(config.phase1_count(), budget);
    std::vector<std::size_t> occupancy(config.num_buckets_N, 0);
    std::vector<std::size_t> kept;
    kept.reserve(budget);

    for (std::size_t k = 0; k < phase1; ++k) {
        kept.push_back(order[k]);
        ++occupancy[bucket_of(order[k], length, config.num_buckets_N)];
    }
    for (std::size_t k = phase1; k < length && kept.size() < budget; ++k) {
        auto& slot = occupancy[bucket_of(order[k], length, config.num_buckets_N)];
        if (slot < config.bucket_capacity_B) {
            ++slot;
            kept.push_back(order[k]);
        }
    }
    std::sort(kept.begin(), kept.end());
    return kept;
}

std::vector<std::size_t> topk_select(std::span<const float> scores, std::size_t budget) {
    auto order = rank_by_score(scores);
    order.resize(std::min(budget, order.size()));
    std::sort(order.begin(), order.end());
    return order;
}

CompressResult compress(LayerCache& cache, std::span<const HeadMatrix> window_queries, const VsbConfig& config,
                        CompressMode mode, const ScoreOptions& options, OpCounter* ops, bool always_score) {
    CompressResult result;
    result.length_before = cache.size();
    result.length_after = cache.size();
    const bool over = cache.size() > config.budget_M;
    if (!over && !always_score) {
        return result;
    }
    const auto scores = window_importance(cache.keys(), window_queries, options, ops);
    cache.set_scores(scores);
    if (!over) {
        return result;
    }
    const auto keep = mode == CompressMode::Vsb ? vsb_select(scores, config) : topk_select(scores, config.budget_M);
    cache.retain_indices(keep);
    result.retained = keep;
    result.evicted = true;
    result.length_after = cache.size();
    return result;
}

} // namespace livekv
