// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "livekv/kv_cache.hpp"
#include "livekv/tensor.hpp"
#include "livekv/vsb.hpp"

namespace livekv {

struct Page {
    std::size_t page_id = 0;
    std::size_t begin = 0; // cache index range [begin, end)
    std::size_t end = 0;
    std::int64_t first_position = 0;
    std::int64_t last_position = 0;

    std::size_t size() const noexcept { return end - begin; }
    bool operator==(const Page&) const = default;
};

/// Immutable snapshot of one layer's cache, partitioned into pages with per-head mean keys.
struct PageIndex {
    std::size_t page_size = 16;
    std::vector<Page> pages;
    std::vector<HeadMatrix> mean_keys; // per head: pages × head_dim
    std::uint64_t cache_version = 0;
    bool deroped = true;

    std::size_t num_pages() const noexcept { return pages.size(); }
    std::span<const float> mean_key(std::size_t page, std::size_t head) const { return mean_keys.at(head).row(page); }

    /// Throws StaleIndex when the cache has been mutated since the index was built.
    void check_fresh(const LayerCache& cache) const;
};

struct RetrievalConfig {
    std::size_t page_size_C = 16;
    double retrieval_ratio = 0.4;
    std::size_t sliding_window_tokens = 196;
    bool derope_keys = true;     // false: mean of stored roped keys (ablation)
    bool rope_queries = false;   // true: question rows roped at their stream positions (ablation)

    void validate() const;
};

/// De-ropes every key at its stream position (unless derope is off) and averages per page.
PageIndex build_page_index(const LayerCache& cache, std::size_t page_size, double rope_theta, bool derope = true);

/// Pooled attention of the question rows over the page mean keys; sums to 1.
std::vector<double> score_pages(std::span<const HeadMatrix> question_queries, const PageIndex& index,
                                const ScoreOptions& options = {}, OpCounter* ops = nullptr);

/// max(1, floor(ratio * pages)).
std::size_t pages_to_select(std::size_t num_pages, double ratio);

/// Top pages by score (ties by lower id), returned in ascending page order.
std::vector<Page> retrieve(const PageIndex& index, std::span<const double> scores, double ratio);

struct ResponseContext {
    std::vector<std::size_t> cache_indices; // ascending
    std::vector<std::int64_t> positions;    // stream positions of cache_indices

    std::size_t size() const noexcept { return cache_indices.size(); }

    /// Stored (roped) keys of the context for one head.
    HeadMatrix keys(const LayerCache& cache, std::size_t head) const;
    HeadMatrix values(const LayerCache& cache, std::size_t head) const;
};

/// Selected page tokens plus the last window_tokens records, deduplicated and ordered.
ResponseContext assemble_context(std::span<const Page> selected, const LayerCache& cache, std::size_t window_tokens);

} // namespace livekv
