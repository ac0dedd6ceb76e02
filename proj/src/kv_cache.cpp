// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include "livekv/kv_cache.hpp"

#include <algorithm>
#include <string>

#include "livekv/error.hpp"

namespace livekv {

LayerCache::LayerCache(std::size_t num_heads, std::size_t head_dim, std::size_t budget)
    : head_dim_(head_dim), budget_(budget) {
    require(num_heads >= 1 && head_dim >= 1, ErrorCode::InvalidShape, "cache needs at least one head and dim");
    keys_.assign(num_heads, HeadMatrix(0, head_dim));
    values_.assign(num_heads, HeadMatrix(0, head_dim));
}

TokenRecord LayerCache::record(std::size_t index) const {
    require(index < size(), ErrorCode::IndexOutOfRange,
            "record " + std::to_string(index) + " of " + std::to_string(size()));
    TokenRecord r;
    r.stream_position = positions_[index];
    r.score = scores_[index];
    for (std::size_t h = 0; h < num_heads(); ++h) {
        auto k = keys_[h].row(index);
        auto v = values_[h].row(index);
        r.key.emplace_back(k.begin(), k.end());
        r.value.emplace_back(v.begin(), v.end());
    }
    return r;
}

void LayerCache::append_tokens(std::span<const TokenRecord> records) {
    std::int64_t last = max_position();
    for (const auto& r : records) {
        require(r.stream_position > last, ErrorCode::PositionOrderViolation,
                "position " + std::to_string(r.stream_position) + " does not follow " + std::to_string(last));
        require(r.key.size() == num_heads() && r.value.size() == num_heads(), ErrorCode::ShapeMismatch,
                "record head count differs from cache");
        for (std::size_t h = 0; h < num_heads(); ++h) {
            require(r.key[h].size() == head_dim_ && r.value[h].size() == head_dim_, ErrorCode::ShapeMismatch,
                    "record head_dim differs from cache");
        }
        last = r.stream_position;
    }
    for (const auto& r : records) {
        for (std::size_t h = 0; h < num_heads(); ++h) {
            keys_[h].append_row(r.key[h]);
            values_[h].append_row(r.value[h]);
        }
        positions_.push_back(r.stream_position);
        scores_.push_back(r.score);
    }
    ++version_;
    check_invariants();
}

void LayerCache::append_block(std::span<const std::int64_t> positions, std::span<const HeadMatrix> keys,
                              std::span<const HeadMatrix> values) {
    require(keys.size() == num_heads() && values.size() == num_heads(), ErrorCode::ShapeMismatch,
            "block head count differs from cache");
    for (std::size_t h = 0; h < num_heads(); ++h) {
        require(keys[h].rows() == positions.size() && values[h].rows() == positions.size(), ErrorCode::ShapeMismatch,
                "block rows differ from position count");
        require(keys[h].dim() == head_dim_ && values[h].dim() == head_dim_, ErrorCode::ShapeMismatch,
                "block head_dim differs from cache");
        require(keys[h].all_finite() && values[h].all_finite(), ErrorCode::NonFiniteInput,
                "block contains NaN or Inf");
    }
    std::int64_t last = max_position();
    for (auto p : positions) {
        require(p > last, ErrorCode::PositionOrderViolation,
                "position " + std::to_string(p) + " does not follow " + std::to_string(last));
        last = p;
    }
    for (std::size_t h = 0; h < num_heads(); ++h) {
        for (std::size_t i = 0; i < positions.size(); ++i) {
            keys_[h].append_row(keys[h].row(i));
            values_[h].append_row(values[h].row(i));
        }
    }
    positions_.insert(positions_.end(), positions.begin(), positions.end());
    scores_.resize(positions_.size(), 0.0f);
    ++version_;
}

void LayerCache::retain_indices(std::span<const std::size_t> keep) {
    std::vector<std::size_t> order(keep.begin(), keep.end());
    std::sort(order.begin(), order.end());
    order.erase(std::unique(order.begin(), order.end()), order.end());
    if (!order.empty()) {
        require(order.back() < size(), ErrorCode::IndexOutOfRange,
                "index " + std::to_string(order.back()) + " of " + std::to_string(size()));
    }

    auto gather = [&order](const HeadMatrix& m) {
        HeadMatrix out(order.size(), m.dim());
        for (std::size_t i = 0; i < order.size(); ++i) {
            std::copy_n(m.row(order[i]).begin(), m.dim(), out.row(i).begin());
        }
        return out;
    };
    for (std::size_t h = 0; h < num_heads(); ++h) {
        keys_[h] = gather(keys_[h]);
        values_[h] = gather(values_[h]);
    }
    std::vector<std::int64_t> pos(order.size());
    std::vector<float> sc(order.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        pos[i] = positions_[order[i]];
        sc[i] = scores_[order[i]];
    }
    positions_ = std::move(pos);
    scores_ = std::move(sc);
    ++version_;
    check_invariants();
}

void LayerCache::set_scores(std::span<const float> scores) {
    require(scores.size() == size(), ErrorCode::ShapeMismatch,
            "score count " + std::to_string(scores.size()) + " != cache length " + std::to_string(size()));
    scores_.assign(scores.begin(), scores.end());
}

void LayerCache::check_invariants() const {
    for (std::size_t i = 1; i < positions_.size(); ++i) {
        require(positions_[i - 1] < positions_[i], ErrorCode::PositionOrderViolation,
                "cache positions not strictly increasing at index " + std::to_string(i));
    }
}

} // namespace livekv
