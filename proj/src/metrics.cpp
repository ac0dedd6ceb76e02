// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include "livekv/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "livekv/error.hpp"
#include "livekv/vsb.hpp"

namespace livekv {

namespace {

// cos/sin tables for each distinct position, computed in double.
struct AngleTable {
    std::size_t half = 0;
    std::vector<double> cosv;
    std::vector<double> sinv;

    AngleTable(std::span<const std::int64_t> positions, std::size_t dim, double theta) : half(dim / 2) {
        cosv.resize(positions.size() * half);
        sinv.resize(positions.size() * half);
        std::vector<double> freq(half);
        for (std::size_t i = 0; i < half; ++i) {
            freq[i] = 1.0 / std::pow(theta, static_cast<double>(2 * i) / static_cast<double>(dim));
        }
        for (std::size_t j = 0; j < positions.size(); ++j) {
            for (std::size_t i = 0; i < half; ++i) {
                const double angle = static_cast<double>(positions[j]) * freq[i];
                cosv[j * half + i] = std::cos(angle);
                sinv[j * half + i] = std::sin(angle);
            }
        }
    }

    // <rotate(q, position j), key>
    double aligned_dot(std::span<const float> q, std::span<const float> key, std::size_t j) const {
        const double* c = &cosv[j * half];
        const double* s = &sinv[j * half];
        double acc = 0.0;
        for (std::size_t i = 0; i < half; ++i) {
            const double r0 = q[i] * c[i] - q[i + half] * s[i];
            const double r1 = q[i] * s[i] + q[i + half] * c[i];
            acc += r0 * key[i] + r1 * key[i + half];
        }
        return acc;
    }
};

// Mean over question rows of softmax over all keys, accumulated into pooled (sum over heads).
void pooled_aligned_attention(std::span<const HeadMatrix> question, std::span<const HeadMatrix> keys,
                              const AngleTable& table, bool scale, std::vector<double>& pooled) {
    require(question.size() == keys.size(), ErrorCode::ShapeMismatch, "question and key head counts differ");
    const std::size_t n = pooled.size();
    std::vector<double> logits(n);
    for (std::size_t h = 0; h < keys.size(); ++h) {
        const std::size_t d = keys[h].dim();
        require(question[h].dim() == d, ErrorCode::ShapeMismatch, "question and key dims differ");
        require(keys[h].rows() == n, ErrorCode::ShapeMismatch, "key rows differ from position count");
        const std::size_t t = question[h].rows();
        require(t >= 1, ErrorCode::ShapeMismatch, "empty question");
        const double factor = scale ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
        for (std::size_t row = 0; row < t; ++row) {
            const auto q = question[h].row(row);
            double mx = -INFINITY;
            for (std::size_t j = 0; j < n; ++j) {
                logits[j] = table.aligned_dot(q, keys[h].row(j), j) * factor;
                mx = std::max(mx, logits[j]);
            }
            double sum = 0.0;
            for (auto& x : logits) {
                x = std::exp(x - mx);
                sum += x;
            }
            for (std::size_t j = 0; j < n; ++j) {
                pooled[j] += logits[j] / sum / static_cast<double>(t) / static_cast<double>(keys.size());
            }
        }
    }
}

IdSet top_ids(const std::vector<double>& scores, std::span<const std::int64_t> ids, std::size_t k) {
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    IdSet out;
    for (std::size_t i = 0; i < k; ++i) {
        out.insert(ids[order[i]]);
    }
    return out;
}

} // namespace

std::vector<IdSet> oracle_answer_tokens(const std::vector<std::vector<HeadMatrix>>& all_keys,
                                        std::span<const std::int64_t> positions, const QueryInput& query,
                                        std::size_t k, double rope_theta, bool scale) {
    require(k <= positions.size(), ErrorCode::KTooLarge,
            "k = " + std::to_string(k) + " exceeds " + std::to_string(positions.size()) + " tokens");
    require(query.queries.size() == all_keys.size(), ErrorCode::ShapeMismatch, "question and key layer counts differ");
    std::vector<IdSet> out;
    if (all_keys.empty()) {
        return out;
    }
    const AngleTable table(positions, all_keys.front().front().dim(), rope_theta);
    for (std::size_t l = 0; l < all_keys.size(); ++l) {
        std::vector<double> pooled(positions.size(), 0.0);
        pooled_aligned_attention(query.queries[l], all_keys[l], table, scale, pooled);
        out.push_back(top_ids(pooled, positions, k));
    }
    return out;
}

std::vector<double> oracle_token_scores(std::span<const HeadMatrix> question, const LayerCache& cache,
                                        double rope_theta, bool scale) {
    require(!cache.empty(), ErrorCode::EmptyCache, "oracle over an empty cache");
    const AngleTable table(cache.positions(), cache.head_dim(), rope_theta);
    std::vector<double> pooled(cache.size(), 0.0);
    pooled_aligned_attention(question, cache.keys(), table, scale, pooled);
    return pooled;
}

std::vector<double> oracle_page_scores(std::span<const HeadMatrix> question, const LayerCache& cache,
                                       std::size_t page_size, double rope_theta, bool scale) {
    require(page_size >= 1, ErrorCode::InvalidConfig, "page size must be >= 1");
    const auto tokens = oracle_token_scores(question, cache, rope_theta, scale);
    std::vector<double> pages((tokens.size() + page_size - 1) / page_size, 0.0);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        pages[i / page_size] += tokens[i];
    }
    return pages;
}

IdSet top_pages(std::span<const double> scores, std::size_t k) {
    require(k <= scores.size(), ErrorCode::KTooLarge, "k exceeds page count");
    std::vector<std::int64_t> ids(scores.size());
    std::iota(ids.begin(), ids.end(), std::int64_t{0});
    return top_ids(std::vector<double>(scores.begin(), scores.end()), ids, k);
}

std::vector<double> retention_ratio(const std::vector<IdSet>& retained, const std::vector<IdSet>& answers) {
    require(retained.size() == answers.size(), ErrorCode::ShapeMismatch, "layer counts differ");
    std::vector<double> out;
    for (std::size_t l = 0; l < answers.size(); ++l) {
        require(!answers[l].empty(), ErrorCode::EmptyAnswerSet, "layer " + std::to_string(l) + " has no answers");
        std::size_t hit = 0;
        for (auto id : answers[l]) {
            hit += retained[l].count(id);
        }
        out.push_back(static_cast<double>(hit) / static_cast<double>(answers[l].size()));
    }
    return out;
}

double recall_at_k(const IdSet& approx, const IdSet& oracle) {
    require(!oracle.empty(), ErrorCode::KZero, "recall at k = 0");
    require(approx.size() == oracle.size(), ErrorCode::ShapeMismatch,
            "approx k = " + std::to_string(approx.size()) + " != oracle k = " + std::to_string(oracle.size()));
    return oracle_recall(approx, oracle);
}

double oracle_recall(const IdSet& approx, const IdSet& oracle) {
    require(!oracle.empty(), ErrorCode::KZero, "empty oracle set");
    std::size_t hit = 0;
    for (auto id : oracle) {
        hit += approx.count(id);
    }
    return static_cast<double>(hit) / static_cast<double>(oracle.size());
}

std::size_t coverage(std::span<const std::size_t> retained, std::size_t length, std::size_t num_buckets) {
    std::set<std::size_t> buckets;
    for (auto i : retained) {
        buckets.insert(bucket_of(i, length, num_buckets));
    }
    return buckets.size();
}

double intra_page_similarity(const LayerCache& cache, std::size_t page_size, double rope_theta, bool derope) {
    require(!cache.empty(), ErrorCode::EmptyCache, "similarity over an empty cache");
    require(page_size >= 1, ErrorCode::InvalidConfig, "page size must be >= 1");
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t h = 0; h < cache.num_heads(); ++h) {
        const HeadMatrix keys =
            derope ? rope_remove(cache.head_keys(h), cache.positions(), rope_theta) : cache.head_keys(h);
        for (std::size_t begin = 0; begin < cache.size(); begin += page_size) {
            const std::size_t end = std::min(cache.size(), begin + page_size);
            if (end - begin < 2) {
                continue;
            }
            double sum = 0.0;
            std::size_t pairs = 0;
            for (std::size_t i = begin; i < end; ++i) {
                for (std::size_t j = i + 1; j < end; ++j) {
                    sum += cosine_similarity(keys.row(i), keys.row(j));
                    ++pairs;
                }
            }
            total += sum / static_cast<double>(pairs);
            ++count;
        }
    }
    return count == 0 ? 0.0 : total / static_cast<double>(count);
}

SampleStats summarize(std::span<const double> values) {
    SampleStats s;
    s.n = values.size();
    if (s.n == 0) {
        return s;
    }
    s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(s.n);
    if (s.n > 1) {
        double ss = 0.0;
        for (double v : values) {
            ss += (v - s.mean) * (v - s.mean);
        }
        s.stderr_ = std::sqrt(ss / static_cast<double>(s.n - 1) / static_cast<double>(s.n));
    }
    return s;
}

SignTest sign_test(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), ErrorCode::ShapeMismatch, "paired samples differ in length");
    SignTest t;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] > b[i]) {
            ++t.wins;
        } else if (a[i] < b[i]) {
            ++t.losses;
        } else {
            ++t.ties;
        }
    }
    const std::size_t n = t.wins + t.losses;
    if (n == 0) {
        t.p_value = 1.0;
        return t;
    }
    // Sum of binomial(n, i) / 2^n for i >= wins, in log space.
    double p = 0.0;
    for (std::size_t i = t.wins; i <= n; ++i) {
        const double log_c = std::lgamma(static_cast<double>(n) + 1) - std::lgamma(static_cast<double>(i) + 1) -
                             std::lgamma(static_cast<double>(n - i) + 1);
        p += std::exp(log_c - static_cast<double>(n) * std::log(2.0));
    }
    t.p_value = std::min(1.0, p);
    return t;
}

std::string metric_record_json(std::uint64_t seed, std::size_t layer, const std::string& metric, double value) {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["layer"] = layer;
    j["metric"] = metric;
    j["value"] = value;
    return j.dump();
}

} // namespace livekv
