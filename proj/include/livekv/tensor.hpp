// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace livekv {

struct ModelShape {
    std::size_t num_layers = 1;
    std::size_t num_heads = 1;
    std::size_t head_dim = 64; // must be even for rotary pairing
    double rope_theta = 10000.0;

    /// Throws InvalidShape / OddHeadDim.
    void validate() const;

    bool operator==(const ModelShape&) const = default;
};

/// Row-major matrix of 32-bit reals, one row per token (or query) for a single head.
class HeadMatrix {
public:
    HeadMatrix() = default;
    HeadMatrix(std::size_t rows, std::size_t dim);
    HeadMatrix(std::size_t rows, std::size_t dim, std::vector<float> data);

    /// Builds a matrix from nested rows; every row must have the same length.
    static HeadMatrix from_rows(const std::vector<std::vector<float>>& rows);

    std::size_t rows() const noexcept { return rows_; }
    std::size_t dim() const noexcept { return dim_; }
    bool empty() const noexcept { return rows_ == 0; }

    std::span<float> row(std::size_t i) noexcept { return {data_.data() + i * dim_, dim_}; }
    std::span<const float> row(std::size_t i) const noexcept { return {data_.data() + i * dim_, dim_}; }

    float& at(std::size_t i, std::size_t j) noexcept { return data_[i * dim_ + j]; }
    float at(std::size_t i, std::size_t j) const noexcept { return data_[i * dim_ + j]; }

    std::span<const float> data() const noexcept { return data_; }
    std::span<float> data() noexcept { return data_; }

    /// Appends one row; the row length must equal dim().
    void append_row(std::span<const float> values);

    bool all_finite() const noexcept;

    bool operator==(const HeadMatrix&) const = default;

private:
    std::size_t rows_ = 0;
    std::size_t dim_ = 0;
    std::vector<float> data_;
};

/// Counts multiply-accumulates and exponentials performed by the attention kernels.
struct OpCounter {
    std::uint64_t mac = 0;
    std::uint64_t exp = 0;

    std::uint64_t total() const noexcept { return mac + exp; }
    OpCounter& operator+=(const OpCounter& other) noexcept {
        mac += other.mac;
        exp += other.exp;
        return *this;
    }
};

/// Row-wise softmax with per-row max subtraction. Throws NonFiniteInput.
HeadMatrix softmax_rows(const HeadMatrix& logits);

/// softmax(Q Kᵀ [/ sqrt(d)]). Output is queries.rows() × keys.rows().
HeadMatrix attention_scores(const HeadMatrix& queries, const HeadMatrix& keys, bool scale = true,
                            OpCounter* ops = nullptr);

/// Rotary embedding, half-split ("rotate-half") pairing (i, i + d/2), frequency theta^(-2i/d).
HeadMatrix rope_apply(const HeadMatrix& keys, std::span<const std::int64_t> positions, double theta);

/// Exact inverse of rope_apply for the same positions.
HeadMatrix rope_remove(const HeadMatrix& keys, std::span<const std::int64_t> positions, double theta);

/// Rotates a single vector in place; sign = +1 applies, -1 removes.
void rope_rotate(std::span<float> vec, std::int64_t position, double theta, int sign);

/// a·b / (|a||b|). Returns 0 and sets *degenerate when either vector is all-zero.
float cosine_similarity(std::span<const float> a, std::span<const float> b, bool* degenerate = nullptr);

} // namespace livekv
