// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "livekv/tensor.hpp"

namespace livekv {

/// One cached token. key/value are num_heads × head_dim, keys in roped form.
struct TokenRecord {
    std::vector<std::vector<float>> key;
    std::vector<std::vector<float>> value;
    std::int64_t stream_position = 0;
    float score = 0.0f;
};

// Column-oriented store for a single layer. Heads share one retained index set, so the
// per-head key/value matrices stay rectangular and row i of every matrix is token i.
class LayerCache {
public:
    LayerCache() = default;
    LayerCache(std::size_t num_heads, std::size_t head_dim, std::size_t budget);

    std::size_t size() const noexcept { return positions_.size(); }
    bool empty() const noexcept { return positions_.empty(); }
    std::size_t budget() const noexcept { return budget_; }
    std::size_t num_heads() const noexcept { return keys_.size(); }
    std::size_t head_dim() const noexcept { return head_dim_; }

    /// Bumped by every mutation; page indexes use it to detect staleness.
    std::uint64_t version() const noexcept { return version_; }

    const HeadMatrix& head_keys(std::size_t head) const { return keys_.at(head); }
    const HeadMatrix& head_values(std::size_t head) const { return values_.at(head); }
    std::span<const HeadMatrix> keys() const noexcept { return keys_; }
    std::span<const std::int64_t> positions() const noexcept { return positions_; }
    std::span<const float> scores() const noexcept { return scores_; }
    std::int64_t max_position() const noexcept { return positions_.empty() ? -1 : positions_.back(); }

    TokenRecord record(std::size_t index) const;

    /// Appends records in order. Throws PositionOrderViolation / ShapeMismatch / NonFiniteInput.
    void append_tokens(std::span<const TokenRecord> records);

    /// Bulk form of append_tokens: per-head n × d key and value blocks.
    void append_block(std::span<const std::int64_t> positions, std::span<const HeadMatrix> keys,
                      std::span<const HeadMatrix> values);

    /// Keeps the listed indices (any order, duplicates ignored); survivors keep stream order.
    void retain_indices(std::span<const std::size_t> keep);

    /// Stores the latest pooled importance per record.
    void set_scores(std::span<const float> scores);

    std::size_t bytes() const noexcept { return size() * num_heads() * head_dim_ * 2 * sizeof(float); }

private:
    void check_invariants() const;

    std::size_t head_dim_ = 0;
    std::size_t budget_ = 0;
    std::vector<HeadMatrix> keys_;
    std::vector<HeadMatrix> values_;
    std::vector<std::int64_t> positions_;
    std::vector<float> scores_;
    std::uint64_t version_ = 0;
};

} // namespace livekv
