// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "livekv/kv_cache.hpp"
#include "livekv/par.hpp"
#include "livekv/tensor.hpp"
#include "livekv/vsb.hpp"

namespace livekv {

enum class CompressTrigger { AfterEachChunk, OnBudgetExceeded };
enum class RetrievalScope { PerLayer, Shared };

struct EngineConfig {
    ModelShape shape;
    VsbConfig vsb;
    RetrievalConfig retrieval;
    CompressTrigger compress_trigger = CompressTrigger::OnBudgetExceeded;
    CompressMode compress_mode = CompressMode::Vsb;
    ScoreOptions scoring;
    RetrievalScope retrieval_scope = RetrievalScope::PerLayer;
    std::size_t layer_threads = 1;
    std::uint64_t seed = 0;

    void validate() const;
};

/// n new tokens: per layer, per head Q/K/V blocks (n × d), keys and queries roped.
struct ChunkInput {
    std::vector<std::int64_t> positions;
    std::vector<std::vector<HeadMatrix>> q;
    std::vector<std::vector<HeadMatrix>> k;
    std::vector<std::vector<HeadMatrix>> v;

    std::size_t size() const noexcept { return positions.size(); }
};

/// Question query rows per layer, per head, in raw (pre-rotary) form.
struct QueryInput {
    std::vector<std::vector<HeadMatrix>> queries;

    std::size_t rows() const noexcept { return queries.empty() || queries[0].empty() ? 0 : queries[0][0].rows(); }
};

struct LayerResponse {
    ResponseContext context;
    std::vector<Page> selected_pages;
    std::vector<double> page_scores;
    std::size_t num_pages = 0;
    std::size_t cache_length = 0;
    OpCounter scoring_ops;   // page scoring against mean keys
    std::uint64_t attention_macs = 0; // t × context × d × heads for the response pass
};

struct QueryResult {
    std::vector<LayerResponse> layers;
};

struct LayerMemory {
    std::size_t tokens = 0;
    std::size_t bytes = 0;
};

struct MemoryReport {
    std::vector<LayerMemory> layers;
    std::size_t total_bytes() const noexcept;
};

/// Per-ingest bookkeeping handed to an optional observer (memory timelines, bound checks).
struct IngestEvent {
    std::size_t chunk_index = 0;
    std::size_t tokens_seen = 0;
    std::size_t max_length_before = 0; // after append, before compression
    std::size_t max_length_after = 0;
    bool compressed = false;
};

class StreamEngine {
public:
    explicit StreamEngine(EngineConfig config);

    const EngineConfig& config() const noexcept { return config_; }

    /// Encoding phase: append the chunk to every layer and compress when the trigger fires.
    void ingest_chunk(const ChunkInput& chunk);

    /// Response phase. Does not modify the caches; page indexes are rebuilt lazily.
    QueryResult answer_query(const QueryInput& query) const;

    /// answer_query with a different retrieval ratio; used for ratio sweeps over one encoding.
    QueryResult answer_query_at(const QueryInput& query, double retrieval_ratio) const;

    MemoryReport memory_report() const;

    const LayerCache& layer(std::size_t index) const { return caches_.at(index); }
    std::size_t num_layers() const noexcept { return caches_.size(); }
    std::size_t total_tokens_seen() const noexcept { return tokens_seen_; }
    std::size_t compression_rounds() const noexcept { return rounds_; }
    std::size_t chunks_seen() const noexcept { return chunks_; }
    const OpCounter& window_scoring_ops() const noexcept { return window_ops_; }

    /// Outcome of the most recent eviction in a layer (empty before the first one).
    const CompressResult& last_eviction(std::size_t layer) const { return last_eviction_.at(layer); }

    void set_observer(std::function<void(const IngestEvent&)> observer) { observer_ = std::move(observer); }

private:
    void check_chunk(const ChunkInput& chunk) const;
    void update_window(std::size_t layer, const std::vector<HeadMatrix>& queries);
    std::vector<HeadMatrix> window_for(std::size_t layer) const;
    std::shared_ptr<const PageIndex> page_index(std::size_t layer) const;

    EngineConfig config_;
    std::vector<LayerCache> caches_;
    std::vector<std::vector<HeadMatrix>> windows_; // [layer][head], last <= r query rows
    std::size_t tokens_seen_ = 0;
    std::size_t rounds_ = 0;
    std::size_t chunks_ = 0;
    std::int64_t last_position_ = -1;
    OpCounter window_ops_;
    std::vector<CompressResult> last_eviction_;
    std::function<void(const IngestEvent&)> observer_;

    mutable std::mutex index_mutex_;
    mutable std::vector<std::shared_ptr<const PageIndex>> indexes_;
};

/// Parses "key = value" lines ('#' comments) into a map. Keys are the kebab-case CLI flag names.
std::map<std::string, std::string> read_config_file(const std::string& path);

/// Applies one kebab-case setting to the config. Throws InvalidConfig on unknown keys or bad values.
void apply_setting(EngineConfig& config, const std::string& key, const std::string& value);

/// Kebab-case key/value pairs describing every field, in a fixed order.
std::vector<std::pair<std::string, std::string>> describe_config(const EngineConfig& config);

} // namespace livekv
