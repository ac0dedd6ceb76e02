// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include "livekv/stream_engine.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include "livekv/error.hpp"

namespace livekv {

void EngineConfig::validate() const {
    shape.validate();
    vsb.validate();
    retrieval.validate();
    require(layer_threads >= 1, ErrorCode::InvalidConfig, "layer-threads must be >= 1");
}

std::size_t MemoryReport::total_bytes() const noexcept {
    std::size_t total = 0;
    for (const auto& l : layers) {
        total += l.bytes;
    }
    return total;
}

StreamEngine::StreamEngine(EngineConfig config) : config_(std::move(config)) {
    config_.vsb.resolve_buckets();
    config_.validate();
    const auto& s = config_.shape;
    caches_.assign(s.num_layers, LayerCache(s.num_heads, s.head_dim, config_.vsb.budget_M));
    windows_.assign(s.num_layers, std::vector<HeadMatrix>(s.num_heads, HeadMatrix(0, s.head_dim)));
    indexes_.resize(s.num_layers);
    last_eviction_.resize(s.num_layers);
}

void StreamEngine::check_chunk(const ChunkInput& chunk) const {
    const auto& s = config_.shape;
    const std::size_t n = chunk.size();
    require(n >= 1, ErrorCode::ShapeMismatch, "empty chunk");
    require(n <= config_.vsb.budget_M, ErrorCode::ConfigInconsistent,
            "chunk of " + std::to_string(n) + " tokens exceeds budget " + std::to_string(config_.vsb.budget_M));
    auto check_block = [&](const std::vector<std::vector<HeadMatrix>>& block, const char* name) {
        require(block.size() == s.num_layers, ErrorCode::ShapeMismatch,
                std::string(name) + " has " + std::to_string(block.size()) + " layers");
        for (const auto& layer : block) {
            require(layer.size() == s.num_heads, ErrorCode::ShapeMismatch,
                    std::string(name) + " has " + std::to_string(layer.size()) + " heads");
            for (const auto& m : layer) {
                require(m.rows() == n && m.dim() == s.head_dim, ErrorCode::ShapeMismatch,
                        std::string(name) + " block is " + std::to_string(m.rows()) + "x" + std::to_string(m.dim()));
            }
        }
    };
    check_block(chunk.q, "Q");
    check_block(chunk.k, "K");
    check_block(chunk.v, "V");
    std::int64_t last = last_position_;
    for (auto p : chunk.positions) {
        require(p > last, ErrorCode::PositionOrderViolation,
                "position " + std::to_string(p) + " does not follow " + std::to_string(last));
        last = p;
    }
}

void StreamEngine::update_window(std::size_t layer, const std::vector<HeadMatrix>& queries) {
    const std::size_t r = config_.vsb.window_r;
    for (std::size_t h = 0; h < queries.size(); ++h) {
        const HeadMatrix& old = windows_[layer][h];
        const HeadMatrix& fresh = queries[h];
        const std::size_t total = old.rows() + fresh.rows();
        const std::size_t keep = std::min(r, total);
        HeadMatrix next(0, fresh.dim());
        for (std::size_t i = total - keep; i < total; ++i) {
            next.append_row(i < old.rows() ? old.row(i) : fresh.row(i - old.rows()));
        }
        windows_[layer][h] = std::move(next);
    }
}

std::vector<HeadMatrix> StreamEngine::window_for(std::size_t layer) const {
    // Never hand the scorer more rows than there are cached keys.
    const std::size_t length = caches_[layer].size();
    std::vector<HeadMatrix> out;
    for (const auto& w : windows_[layer]) {
        if (w.rows() <= length) {
            out.push_back(w);
            continue;
        }
        HeadMatrix trimmed(0, w.dim());
        for (std::size_t i = w.rows() - length; i < w.rows(); ++i) {
            trimmed.append_row(w.row(i));
        }
        out.push_back(std::move(trimmed));
    }
    return out;
}

void StreamEngine::ingest_chunk(const ChunkInput& chunk) {
    check_chunk(chunk);
    const std::size_t layers = caches_.size();
    for (std::size_t l = 0; l < layers; ++l) {
        caches_[l].append_block(chunk.positions, chunk.k[l], chunk.v[l]);
        update_window(l, chunk.q[l]);
    }
    last_position_ = chunk.positions.back();
    tokens_seen_ += chunk.size();

    IngestEvent event;
    event.chunk_index = chunks_++;
    event.tokens_seen = tokens_seen_;
    for (const auto& c : caches_) {
        event.max_length_before = std::max(event.max_length_before, c.size());
    }

    const bool every_chunk = config_.compress_trigger == CompressTrigger::AfterEachChunk;
    const bool over = event.max_length_before > config_.vsb.budget_M;
    if (every_chunk || over) {
        std::vector<OpCounter> ops(layers);
        auto work = [&](std::size_t l) {
            auto result = compress(caches_[l], window_for(l), config_.vsb, config_.compress_mode, config_.scoring,
                                   &ops[l], every_chunk);
            if (result.evicted) {
                last_eviction_[l] = std::move(result);
            }
        };
        const std::size_t threads = std::min(config_.layer_threads, layers);
        if (threads <= 1) {
            for (std::size_t l = 0; l < layers; ++l) {
                work(l);
            }
        } else {
            std::vector<std::exception_ptr> errors(threads);
            std::vector<std::thread> pool;
            for (std::size_t t = 0; t < threads; ++t) {
                pool.emplace_back([&, t] {
                    try {
                        for (std::size_t l = t; l < layers; l += threads) {
                            work(l);
                        }
                    } catch (...) {
                        errors[t] = std::current_exception();
                    }
                });
            }
            for (auto& th : pool) {
                th.join();
            }
            for (auto& e : errors) {
                if (e) {
                    std::rethrow_exception(e);
                }
            }
        }
        for (const auto& o : ops) {
            window_ops_ += o;
        }
        ++rounds_;
        event.compressed = true;
    }

    for (const auto& c : caches_) {
        event.max_length_after = std::max(event.max_length_after, c.size());
    }
    {
        std::lock_guard lock(index_mutex_);
        std::fill(indexes_.begin(), indexes_.end(), nullptr);
    }
    if (observer_) {
        observer_(event);
    }
}

std::shared_ptr<const PageIndex> StreamEngine::page_index(std::size_t layer) const {
    std::lock_guard lock(index_mutex_);
    auto& slot = indexes_[layer];
    if (!slot || slot->cache_version != caches_[layer].version()) {
        slot = std::make_shared<const PageIndex>(build_page_index(caches_[layer], config_.retrieval.page_size_C,
                                                                  config_.shape.rope_theta,
                                                                  config_.retrieval.derope_keys));
    }
    return slot;
}

QueryResult StreamEngine::answer_query(const QueryInput& query) const {
    return answer_query_at(query, config_.retrieval.retrieval_ratio);
}

QueryResult StreamEngine::answer_query_at(const QueryInput& query, double retrieval_ratio) const {
    require(tokens_seen_ > 0 && !caches_.empty() && !caches_[0].empty(), ErrorCode::EmptyCache,
            "no tokens have been ingested");
    const auto& s = config_.shape;
    require(query.queries.size() == s.num_layers, ErrorCode::ShapeMismatch,
            "query has " + std::to_string(query.queries.size()) + " layers");
    const std::size_t t = query.rows();
    require(t >= 1, ErrorCode::ShapeMismatch, "question must have at least one row");
    for (const auto& layer : query.queries) {
        require(layer.size() == s.num_heads, ErrorCode::ShapeMismatch, "question head count differs from model");
        for (const auto& m : layer) {
            require(m.rows() == t && m.dim() == s.head_dim, ErrorCode::ShapeMismatch, "question block shape differs");
        }
    }

    const std::size_t layers = caches_.size();
    std::vector<std::shared_ptr<const PageIndex>> indexes(layers);
    QueryResult result;
    result.layers.resize(layers);
    for (std::size_t l = 0; l < layers; ++l) {
        indexes[l] = page_index(l);
        std::vector<HeadMatrix> rows = query.queries[l];
        if (config_.retrieval.rope_queries) {
            std::vector<std::int64_t> pos(t);
            for (std::size_t i = 0; i < t; ++i) {
                pos[i] = last_position_ + 1 + static_cast<std::int64_t>(i);
            }
            for (auto& m : rows) {
                m = rope_apply(m, pos, s.rope_theta);
            }
        }
        auto& out = result.layers[l];
        out.page_scores = score_pages(rows, *indexes[l], config_.scoring, &out.scoring_ops);
        out.num_pages = indexes[l]->num_pages();
        out.cache_length = caches_[l].size();
    }

    if (config_.retrieval_scope == RetrievalScope::Shared) {
        std::vector<double> shared(result.layers[0].page_scores.size(), 0.0);
        for (const auto& lr : result.layers) {
            require(lr.page_scores.size() == shared.size(), ErrorCode::ShapeMismatch, "layers disagree on page count");
            for (std::size_t p = 0; p < shared.size(); ++p) {
                shared[p] += lr.page_scores[p] / static_cast<double>(layers);
            }
        }
        for (auto& lr : result.layers) {
            lr.page_scores = shared;
        }
    }

    for (std::size_t l = 0; l < layers; ++l) {
        auto& out = result.layers[l];
        indexes[l]->check_fresh(caches_[l]);
        out.selected_pages = retrieve(*indexes[l], out.page_scores, retrieval_ratio);
        out.context = assemble_context(out.selected_pages, caches_[l], config_.retrieval.sliding_window_tokens);
        out.attention_macs = static_cast<std::uint64_t>(t) * out.context.size() * s.head_dim * s.num_heads;
    }
    return result;
}

MemoryReport StreamEngine::memory_report() const {
    MemoryReport report;
    for (const auto& c : caches_) {
        report.layers.push_back({c.size(), c.bytes()});
    }
    return report;
}

// ---- configuration files -------------------------------------------------------------

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
    std::istringstream in(value);
    T out{};
    in >> out;
    require(!in.fail() && in.eof(), ErrorCode::InvalidConfig, "bad value '" + value + "' for " + key);
    if constexpr (std::is_unsigned_v<T>) {
        require(value.find('-') == std::string::npos, ErrorCode::InvalidConfig, key + " must be nonnegative");
    }
    return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
    if (value == "true" || value == "1" || value == "on") {
        return true;
    }
    if (value == "false" || value == "0" || value == "off") {
        return false;
    }
    fail(ErrorCode::InvalidConfig, "bad boolean '" + value + "' for " + key);
}

std::string fmt_double(double v) {
    std::ostringstream out;
    out.precision(17);
    out << v;
    return out.str();
}

} // namespace

std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    require(in.good(), ErrorCode::IoError, "cannot open config file " + path);
    std::map<std::string, std::string> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) {
            line.erase(hash);
        }
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string::npos, ErrorCode::InvalidConfig,
                path + ":" + std::to_string(lineno) + ": expected key = value");
        out[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return out;
}

void apply_setting(EngineConfig& c, const std::string& key, const std::string& value) {
    if (key == "num-layers") {
        c.shape.num_layers = parse_number<std::size_t>(key, value);
    } else if (key == "num-heads") {
        c.shape.num_heads = parse_number<std::size_t>(key, value);
    } else if (key == "head-dim") {
        c.shape.head_dim = parse_number<std::size_t>(key, value);
    } else if (key == "rope-theta") {
        c.shape.rope_theta = parse_number<double>(key, value);
    } else if (key == "budget") {
        c.vsb.budget_M = parse_number<std::size_t>(key, value);
    } else if (key == "num-buckets") {
        c.vsb.num_buckets_N = parse_number<std::size_t>(key, value);
    } else if (key == "bucket-capacity") {
        c.vsb.bucket_capacity_B = parse_number<std::size_t>(key, value);
    } else if (key == "window-r") {
        c.vsb.window_r = parse_number<std::size_t>(key, value);
    } else if (key == "phase1-ratio") {
        c.vsb.phase1_ratio_R = parse_number<double>(key, value);
    } else if (key == "page-size") {
        c.retrieval.page_size_C = parse_number<std::size_t>(key, value);
    } else if (key == "retrieval-ratio") {
        c.retrieval.retrieval_ratio = parse_number<double>(key, value);
    } else if (key == "window") {
        c.retrieval.sliding_window_tokens = parse_number<std::size_t>(key, value);
    } else if (key == "derope-keys") {
        c.retrieval.derope_keys = parse_bool(key, value);
    } else if (key == "rope-queries") {
        c.retrieval.rope_queries = parse_bool(key, value);
    } else if (key == "compress-trigger") {
        if (value == "after-each-chunk") {
            c.compress_trigger = CompressTrigger::AfterEachChunk;
        } else if (value == "on-budget-exceeded") {
            c.compress_trigger = CompressTrigger::OnBudgetExceeded;
        } else {
            fail(ErrorCode::InvalidConfig, "compress-trigger must be after-each-chunk or on-budget-exceeded");
        }
    } else if (key == "compress-mode") {
        if (value == "vsb") {
            c.compress_mode = CompressMode::Vsb;
        } else if (value == "topk") {
            c.compress_mode = CompressMode::TopK;
        } else {
            fail(ErrorCode::InvalidConfig, "compress-mode must be vsb or topk");
        }
    } else if (key == "scale") {
        c.scoring.scale = parse_bool(key, value);
    } else if (key == "head-pooling") {
        if (value == "mean") {
            c.scoring.pooling = HeadPooling::Mean;
        } else if (value == "max") {
            c.scoring.pooling = HeadPooling::Max;
        } else {
            fail(ErrorCode::InvalidConfig, "head-pooling must be mean or max");
        }
    } else if (key == "retrieval-scope") {
        if (value == "per-layer") {
            c.retrieval_scope = RetrievalScope::PerLayer;
        } else if (value == "shared") {
            c.retrieval_scope = RetrievalScope::Shared;
        } else {
            fail(ErrorCode::InvalidConfig, "retrieval-scope must be per-layer or shared");
        }
    } else if (key == "layer-threads") {
        c.layer_threads = parse_number<std::size_t>(key, value);
    } else if (key == "seed") {
        c.seed = parse_number<std::uint64_t>(key, value);
    } else {
        fail(ErrorCode::InvalidConfig, "unknown setting '" + key + "'");
    }
}

std::vector<std::pair<std::string, std::string>> describe_config(const EngineConfig& c) {
    auto b = [](bool v) { return std::string(v ? "true" : "false"); };
    return {
        {"num-layers", std::to_string(c.shape.num_layers)},
        {"num-heads", std::to_string(c.shape.num_heads)},
        {"head-dim", std::to_string(c.shape.head_dim)},
        {"rope-theta", fmt_double(c.shape.rope_theta)},
        {"budget", std::to_string(c.vsb.budget_M)},
        {"num-buckets", std::to_string(c.vsb.num_buckets_N)},
        {"bucket-capacity", std::to_string(c.vsb.bucket_capacity_B)},
        {"window-r", std::to_string(c.vsb.window_r)},
        {"phase1-ratio", fmt_double(c.vsb.phase1_ratio_R)},
        {"page-size", std::to_string(c.retrieval.page_size_C)},
        {"retrieval-ratio", fmt_double(c.retrieval.retrieval_ratio)},
        {"window", std::to_string(c.retrieval.sliding_window_tokens)},
        {"derope-keys", b(c.retrieval.derope_keys)},
        {"rope-queries", b(c.retrieval.rope_queries)},
        {"compress-trigger",
         c.compress_trigger == CompressTrigger::AfterEachChunk ? "after-each-chunk" : "on-budget-exceeded"},
        {"compress-mode", c.compress_mode == CompressMode::Vsb ? "vsb" : "topk"},
        {"scale", b(c.scoring.scale)},
        {"head-pooling", c.scoring.pooling == HeadPooling::Mean ? "mean" : "max"},
        {"retrieval-scope", c.retrieval_scope == RetrievalScope::PerLayer ? "per-layer" : "shared"},
        {"layer-threads", std::to_string(c.layer_threads)},
        {"seed", std::to_string(c.seed)},
    };
}

} // namespace livekv
