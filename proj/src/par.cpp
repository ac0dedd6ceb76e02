// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include "livekv/par.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "livekv/error.hpp"

namespace livekv {

void PageIndex::check_fresh(const LayerCache& cache) const {
    require(cache.version() == cache_version, ErrorCode::StaleIndex,
            "index built at version " + std::to_string(cache_version) + ", cache is at " +
                std::to_string(cache.version()));
}

void RetrievalConfig::validate() const {
    require(page_size_C >= 1, ErrorCode::InvalidConfig, "page size must be >= 1");
    require(retrieval_ratio > 0.0 && retrieval_ratio <= 1.0, ErrorCode::InvalidConfig,
            "retrieval ratio must lie in (0, 1]");
}

PageIndex build_page_index(const LayerCache& cache, std::size_t page_size, double rope_theta, bool derope) {
    require(!cache.empty(), ErrorCode::EmptyCache, "cannot index an empty cache");
    require(page_size >= 1, ErrorCode::InvalidConfig, "page size must be >= 1");

    PageIndex index;
    index.page_size = page_size;
    index.cache_version = cache.version();
    index.deroped = derope;

    const std::size_t length = cache.size();
    const auto positions = cache.positions();
    for (std::size_t begin = 0, id = 0; begin < length; begin += page_size, ++id) {
        const std::size_t end = std::min(length, begin + page_size);
        index.pages.push_back({id, begin, end, positions[begin], positions[end - 1]});
    }

    const std::size_t d = cache.head_dim();
    for (std::size_t h = 0; h < cache.num_heads(); ++h) {
        const HeadMatrix keys = derope ? rope_remove(cache.head_keys(h), positions, rope_theta) : cache.head_keys(h);
        HeadMatrix means(index.pages.size(), d);
        std::vector<double> acc(d);
        for (const auto& page : index.pages) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (std::size_t i = page.begin; i < page.end; ++i) {
                auto row = keys.row(i);
                for (std::size_t j = 0; j < d; ++j) {
                    acc[j] += row[j];
                }
            }
            auto out = means.row(page.page_id);
            for (std::size_t j = 0; j < d; ++j) {
                out[j] = static_cast<float>(acc[j] / static_cast<double>(page.size()));
            }
        }
        index.mean_keys.push_back(std::move(means));
    }
    return index;
}

std::vector<double> score_pages(std::span<const HeadMatrix> question_queries, const PageIndex& index,
                                const ScoreOptions& options, OpCounter* ops) {
    require(!question_queries.empty(), ErrorCode::ShapeMismatch, "no question queries");
    require(question_queries.size() == index.mean_keys.size(), ErrorCode::ShapeMismatch,
            "query heads " + std::to_string(question_queries.size()) + " != index heads " +
                std::to_string(index.mean_keys.size()));
    const std::size_t pages = index.num_pages();
    std::vector<double> pooled(pages, 0.0);
    for (std::size_t h = 0; h < question_queries.size(); ++h) {
        const std::size_t t = question_queries[h].rows();
        require(t >= 1, ErrorCode::ShapeMismatch, "empty question for head " + std::to_string(h));
        const HeadMatrix probs = attention_scores(question_queries[h], index.mean_keys[h], options.scale, ops);
        for (std::size_t p = 0; p < pages; ++p) {
            double mean = 0.0;
            for (std::size_t i = 0; i < t; ++i) {
                mean += probs.at(i, p);
            }
            mean /= static_cast<double>(t);
            pooled[p] = options.pooling == HeadPooling::Max ? std::max(pooled[p], mean) : pooled[p] + mean;
        }
    }
    // Max pooling breaks the sum-to-one property, so renormalize in both modes.
    const double total = std::accumulate(pooled.begin(), pooled.end(), 0.0);
    for (auto& s : pooled) {
        s /= total;
    }
    return pooled;
}

std::size_t pages_to_select(std::size_t num_pages, double ratio) {
    // The epsilon keeps ratios like 0.6 * 5 from landing just under an integer.
    const auto k = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(num_pages) + 1e-9));
    return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(num_pages, 1));
}

std::vector<Page> retrieve(const PageIndex& index, std::span<const double> scores, double ratio) {
    require(scores.size() == index.num_pages(), ErrorCode::ShapeMismatch,
            "score count " + std::to_string(scores.size()) + " != pages " + std::to_string(index.num_pages()));
    require(ratio > 0.0 && ratio <= 1.0, ErrorCode::InvalidConfig, "retrieval ratio must lie in (0, 1]");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    order.resize(std::min(order.size(), pages_to_select(index.num_pages(), ratio)));
    std::sort(order.begin(), order.end());
    std::vector<Page> out;
    out.reserve(order.size());
    for (auto id : order) {
        out.push_back(index.pages[id]);
    }
    return out;
}

namespace {

HeadMatrix gather_rows(const HeadMatrix& src, std::span<const std::size_t> rows) {
    HeadMatrix out(rows.size(), src.dim());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::copy_n(src.row(rows[i]).begin(), src.dim(), out.row(i).begin());
    }
    return out;
}

} // namespace

HeadMatrix ResponseContext::keys(const LayerCache& cache, std::size_t head) const {
    return gather_rows(cache.head_keys(head), cache_indices);
}

HeadMatrix ResponseContext::values(const LayerCache& cache, std::size_t head) const {
    return gather_rows(cache.head_values(head), cache_indices);
}

ResponseContext assemble_context(std::span<const Page> selected, const LayerCache& cache, std::size_t window_tokens) {
    const std::size_t length = cache.size();
    std::vector<bool> take(length, false);
    for (const auto& page : selected) {
        require(page.end <= length && page.begin <= page.end, ErrorCode::IndexOutOfRange,
                "page " + std::to_string(page.page_id) + " lies outside the cache");
        std::fill(take.begin() + static_cast<std::ptrdiff_t>(page.begin),
                  take.begin() + static_cast<std::ptrdiff_t>(page.end), true);
    }
    const std::size_t window = std::min(window_tokens, length);
    std::fill(take.end() - static_cast<std::ptrdiff_t>(window), take.end(), true);

    ResponseContext ctx;
    const auto positions = cache.positions();
    for (std::size_t i = 0; i < length; ++i) {
        if (take[i]) {
            ctx.cache_indices.push_back(i);
            ctx.positions.push_back(positions[i]);
        }
    }
    return ctx;
}

} // namespace livekv
