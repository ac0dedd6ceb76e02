// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include "livekv/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "livekv/error.hpp"

namespace livekv {

void ModelShape::validate() const {
    require(num_layers >= 1 && num_heads >= 1 && head_dim >= 1, ErrorCode::InvalidShape,
            "layers, heads and head_dim must all be >= 1");
    require(head_dim % 2 == 0, ErrorCode::OddHeadDim, "head_dim " + std::to_string(head_dim) + " is odd");
    require(std::isfinite(rope_theta) && rope_theta > 0.0, ErrorCode::InvalidShape, "rope_theta must be positive");
}

HeadMatrix::HeadMatrix(std::size_t rows, std::size_t dim) : rows_(rows), dim_(dim), data_(rows * dim, 0.0f) {}

HeadMatrix::HeadMatrix(std::size_t rows, std::size_t dim, std::vector<float> data)
    : rows_(rows), dim_(dim), data_(std::move(data)) {
    require(data_.size() == rows_ * dim_, ErrorCode::ShapeMismatch,
            "data length " + std::to_string(data_.size()) + " != rows*dim " + std::to_string(rows_ * dim_));
}

HeadMatrix HeadMatrix::from_rows(const std::vector<std::vector<float>>& rows) {
    if (rows.empty()) {
        return {};
    }
    HeadMatrix m(0, rows.front().size());
    for (const auto& r : rows) {
        m.append_row(r);
    }
    return m;
}

void HeadMatrix::append_row(std::span<const float> values) {
    if (rows_ == 0 && dim_ == 0) {
        dim_ = values.size();
    }
    require(values.size() == dim_, ErrorCode::ShapeMismatch,
            "row length " + std::to_string(values.size()) + " != dim " + std::to_string(dim_));
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
}

bool HeadMatrix::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

HeadMatrix softmax_rows(const HeadMatrix& logits) {
    require(logits.all_finite(), ErrorCode::NonFiniteInput, "softmax input contains NaN or Inf");
    HeadMatrix out(logits.rows(), logits.dim());
    std::vector<double> buf(logits.dim());
    for (std::size_t i = 0; i < logits.rows(); ++i) {
        auto in = logits.row(i);
        if (in.empty()) {
            continue;
        }
        const float mx = *std::max_element(in.begin(), in.end());
        double sum = 0.0;
        for (std::size_t j = 0; j < in.size(); ++j) {
            buf[j] = std::exp(static_cast<double>(in[j]) - mx);
            sum += buf[j];
        }
        auto o = out.row(i);
        for (std::size_t j = 0; j < in.size(); ++j) {
            o[j] = static_cast<float>(buf[j] / sum);
        }
    }
    return out;
}

HeadMatrix attention_scores(const HeadMatrix& queries, const HeadMatrix& keys, bool scale, OpCounter* ops) {
    require(queries.dim() == keys.dim(), ErrorCode::ShapeMismatch,
            "query dim " + std::to_string(queries.dim()) + " != key dim " + std::to_string(keys.dim()));
    const std::size_t d = queries.dim();
    const double factor = (scale && d > 0) ? 1.0 / std::sqrt(static_cast<double>(d)) : 1.0;
    HeadMatrix logits(queries.rows(), keys.rows());
    for (std::size_t i = 0; i < queries.rows(); ++i) {
        auto q = queries.row(i);
        auto out = logits.row(i);
        for (std::size_t j = 0; j < keys.rows(); ++j) {
            auto k = keys.row(j);
            float acc = 0.0f;
            for (std::size_t t = 0; t < d; ++t) {
                acc += q[t] * k[t];
            }
            out[j] = static_cast<float>(acc * factor);
        }
    }
    if (ops != nullptr) {
        ops->mac += static_cast<std::uint64_t>(queries.rows()) * keys.rows() * d;
        ops->exp += static_cast<std::uint64_t>(queries.rows()) * keys.rows();
    }
    return softmax_rows(logits);
}

namespace {

void rotate_pairs(std::span<float> vec, std::span<const double> cosv, std::span<const double> sinv, int sign) {
    const std::size_t half = vec.size() / 2;
    for (std::size_t i = 0; i < half; ++i) {
        const double x0 = vec[i];
        const double x1 = vec[i + half];
        const double s = sign * sinv[i];
        vec[i] = static_cast<float>(x0 * cosv[i] - x1 * s);
        vec[i + half] = static_cast<float>(x0 * s + x1 * cosv[i]);
    }
}

void angles_for(std::int64_t position, double theta, std::size_t dim, std::vector<double>& cosv,
                std::vector<double>& sinv) {
    const std::size_t half = dim / 2;
    cosv.resize(half);
    sinv.resize(half);
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::pow(theta, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
        const double angle = static_cast<double>(position) * freq;
        cosv[i] = std::cos(angle);
        sinv[i] = std::sin(angle);
    }
}

HeadMatrix rope_rows(const HeadMatrix& keys, std::span<const std::int64_t> positions, double theta, int sign) {
    require(keys.dim() % 2 == 0, ErrorCode::OddHeadDim, "head_dim " + std::to_string(keys.dim()) + " is odd");
    require(positions.size() == keys.rows(), ErrorCode::ShapeMismatch,
            "positions length " + std::to_string(positions.size()) + " != rows " + std::to_string(keys.rows()));
    HeadMatrix out = keys;
    std::vector<double> cosv;
    std::vector<double> sinv;
    std::int64_t cached = -1;
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        require(positions[i] >= 0, ErrorCode::PositionOrderViolation, "negative position");
        if (positions[i] != cached) {
            angles_for(positions[i], theta, keys.dim(), cosv, sinv);
            cached = positions[i];
        }
        rotate_pairs(out.row(i), cosv, sinv, sign);
    }
    return out;
}

} // namespace

HeadMatrix rope_apply(const HeadMatrix& keys, std::span<const std::int64_t> positions, double theta) {
    return rope_rows(keys, positions, theta, +1);
}

HeadMatrix rope_remove(const HeadMatrix& keys, std::span<const std::int64_t> positions, double theta) {
    return rope_rows(keys, positions, theta, -1);
}

void rope_rotate(std::span<float> vec, std::int64_t position, double theta, int sign) {
    require(vec.size() % 2 == 0, ErrorCode::OddHeadDim, "head_dim " + std::to_string(vec.size()) + " is odd");
    std::vector<double> cosv;
    std::vector<double> sinv;
    angles_for(position, theta, vec.size(), cosv, sinv);
    rotate_pairs(vec, cosv, sinv, sign);
}

float cosine_similarity(std::span<const float> a, std::span<const float> b, bool* degenerate) {
    require(a.size() == b.size(), ErrorCode::ShapeMismatch,
            "vector dims " + std::to_string(a.size()) + " and " + std::to_string(b.size()));
    double dot = 0.0;
    double na = 0.0;
    double nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    const bool zero = na == 0.0 || nb == 0.0;
    if (degenerate != nullptr) {
        *degenerate = zero;
    }
    if (zero) {
        return 0.0f;
    }
    const double c = dot / (std::sqrt(na) * std::sqrt(nb));
    return static_cast<float>(std::clamp(c, -1.0, 1.0));
}

} // namespace livekv
