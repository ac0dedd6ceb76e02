// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "livekv/kv_cache.hpp"
#include "livekv/stream_engine.hpp"
#include "livekv/tensor.hpp"

namespace livekv {

using IdSet = std::set<std::int64_t>;

// Oracle relevance is position-aligned: each question row is rotated to the key's own
// stream position before the dot product with the stored (roped) key. That equals the
// dot product of the raw query with the de-roped key, computed without touching the
// engine's de-roping path.

/// Top-k stream positions per layer under pooled full attention over every token of the stream.
/// all_keys is [layer][head] T × d (roped); throws KTooLarge when k > T.
std::vector<IdSet> oracle_answer_tokens(const std::vector<std::vector<HeadMatrix>>& all_keys,
                                        std::span<const std::int64_t> positions, const QueryInput& query,
                                        std::size_t k, double rope_theta, bool scale = true);

/// Pooled per-token relevance of the question over a cache (rows, then heads), summing to 1.
std::vector<double> oracle_token_scores(std::span<const HeadMatrix> question, const LayerCache& cache,
                                        double rope_theta, bool scale = true);

/// oracle_token_scores summed within pages of size C. Throws EmptyCache.
std::vector<double> oracle_page_scores(std::span<const HeadMatrix> question, const LayerCache& cache,
                                       std::size_t page_size, double rope_theta, bool scale = true);

/// The k highest-scoring page ids (ties by lower id).
IdSet top_pages(std::span<const double> scores, std::size_t k);

/// |retained ∩ answers| / |answers| per layer. Throws EmptyAnswerSet.
std::vector<double> retention_ratio(const std::vector<IdSet>& retained, const std::vector<IdSet>& answers);

/// |approx ∩ oracle| / k for equal-size sets. Throws KZero / ShapeMismatch.
double recall_at_k(const IdSet& approx, const IdSet& oracle);

/// |approx ∩ oracle| / |oracle| with a fixed oracle set; monotone in approx.
double oracle_recall(const IdSet& approx, const IdSet& oracle);

/// Number of distinct buckets touched by the retained cache indices.
std::size_t coverage(std::span<const std::size_t> retained, std::size_t length, std::size_t num_buckets);

/// Mean pairwise cosine similarity of keys within each page (pages with >= 2 tokens),
/// averaged over pages and heads. derope=false measures the stored roped keys.
double intra_page_similarity(const LayerCache& cache, std::size_t page_size, double rope_theta, bool derope);

struct SampleStats {
    double mean = 0.0;
    double stderr_ = 0.0;
    std::size_t n = 0;
};

SampleStats summarize(std::span<const double> values);

struct SignTest {
    std::size_t wins = 0;
    std::size_t losses = 0;
    std::size_t ties = 0;
    double p_value = 1.0; // one-sided, P(X >= wins | n = wins + losses, p = 1/2)
};

/// Paired one-sided sign test that a > b. Ties are dropped.
SignTest sign_test(std::span<const double> a, std::span<const double> b);

/// One JSON object per (seed, layer) metric record, as a single line.
std::string metric_record_json(std::uint64_t seed, std::size_t layer, const std::string& metric, double value);

} // namespace livekv
