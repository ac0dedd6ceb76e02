// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "livekv/kv_cache.hpp"
#include "livekv/stream_engine.hpp"
#include "livekv/tensor.hpp"

namespace livekv {

/// Parameters of a synthetic stream with planted sink, local and answer tokens.
///
/// Token roles live in disjoint rotary frequency bands so that the planted structure
/// survives RoPE at the scales the window sees: sinks in the slowest pairs, local-scene
/// anchors just below them, answer content in the fast pairs. Queries in the stream
/// weakly contain the sink direction and strongly contain their scene anchor; question
/// queries contain only the answer direction.
struct TraceSpec {
    ModelShape shape{4, 4, 64, 10000.0};
    std::size_t total_tokens = 2048;
    std::size_t chunk_size = 196;
    std::size_t num_sinks = 8;
    double sink_gain = 10.0;
    std::size_t local_cluster_size = 392; // 0 disables local tokens
    double local_fraction = 0.75;
    double local_gain = 5.0;
    double scene_gain = 3.0;
    std::size_t num_answer_tokens = 32;
    double answer_gain = 6.0;
    double answer_salience = 3.0; // sink-direction component of answer keys
    std::vector<std::vector<float>> answer_query; // heads × head_dim; empty = drawn from the seed
    std::size_t question_tokens = 8;
    double noise_std = 0.3;
    double query_noise_std = 0.5;
    double sink_query_weight = 0.4;
    std::uint64_t seed = 0;

    /// Throws InvalidSpec.
    void validate() const;
};

struct GroundTruth {
    std::vector<std::int64_t> sink_ids;
    std::vector<std::int64_t> local_ids;
    std::vector<std::int64_t> answer_ids;
    std::vector<std::vector<float>> answer_query; // heads × head_dim, unit per head
    QueryInput question;                          // layers × heads × t × d, raw form

    bool operator==(const GroundTruth& other) const;
};

/// A full stream: per layer, per head T × d matrices. Keys and stream queries are roped.
struct Trace {
    ModelShape shape;
    std::size_t chunk_size = 0;
    std::vector<std::int64_t> positions;
    std::vector<std::vector<HeadMatrix>> q; // empty for KV-only traces
    std::vector<std::vector<HeadMatrix>> k;
    std::vector<std::vector<HeadMatrix>> v;
    std::optional<GroundTruth> truth;

    std::size_t token_count() const noexcept { return positions.size(); }
    std::size_t num_chunks() const noexcept;
    bool has_queries() const noexcept { return !q.empty(); }

    /// Tokens [i*chunk_size, min(T, (i+1)*chunk_size)) as engine input.
    ChunkInput chunk(std::size_t index) const;

    bool operator==(const Trace& other) const;
};

Trace generate(const TraceSpec& spec);

/// Binary trace file (little-endian, magic "KVTR", version 1).
void write_trace(const Trace& trace, const std::string& path);
Trace read_trace(const std::string& path);

std::vector<std::uint8_t> encode_trace(const Trace& trace);
Trace decode_trace(const std::vector<std::uint8_t>& bytes);

/// Single layer cache as a one-layer KV-only trace with explicit positions.
void write_snapshot(const LayerCache& cache, double rope_theta, const std::string& path);
LayerCache read_snapshot(const std::string& path, std::size_t budget);

/// JSON sidecar text for a spec, and its inverse.
std::string spec_to_json(const TraceSpec& spec);
TraceSpec spec_from_json(const std::string& text);

/// 64-bit FNV-1a over a byte range.
std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes);

} // namespace livekv
