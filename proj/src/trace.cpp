// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include "livekv/trace.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "livekv/error.hpp"
#include "livekv/rng.hpp"

namespace livekv {

void TraceSpec::validate() const {
    try {
        shape.validate();
    } catch (const Error& e) {
        fail(ErrorCode::InvalidSpec, e.what());
    }
    require(total_tokens >= 1, ErrorCode::InvalidSpec, "total_tokens must be >= 1");
    require(chunk_size >= 1, ErrorCode::InvalidSpec, "chunk_size must be >= 1");
    require(num_sinks + num_answer_tokens <= total_tokens, ErrorCode::InvalidSpec,
            "sinks (" + std::to_string(num_sinks) + ") + answers (" + std::to_string(num_answer_tokens) +
                ") exceed total_tokens (" + std::to_string(total_tokens) + ")");
    require(std::isfinite(sink_gain) && sink_gain > 1.0, ErrorCode::InvalidSpec, "sink_gain must be > 1");
    require(local_fraction >= 0.0 && local_fraction <= 1.0, ErrorCode::InvalidSpec, "local_fraction must lie in [0, 1]");
    for (double g : {local_gain, scene_gain, answer_gain, answer_salience, sink_query_weight}) {
        require(std::isfinite(g) && g >= 0.0, ErrorCode::InvalidSpec, "gains must be finite and >= 0");
    }
    require(std::isfinite(noise_std) && noise_std >= 0.0, ErrorCode::InvalidSpec, "noise_std must be >= 0");
    require(std::isfinite(query_noise_std) && query_noise_std >= 0.0, ErrorCode::InvalidSpec,
            "query_noise_std must be >= 0");
    require(question_tokens >= 1, ErrorCode::InvalidSpec, "question_tokens must be >= 1");
    if (!answer_query.empty()) {
        require(answer_query.size() == shape.num_heads, ErrorCode::InvalidSpec, "answer_query needs one row per head");
        for (const auto& row : answer_query) {
            require(row.size() == shape.head_dim, ErrorCode::InvalidSpec, "answer_query rows must have head_dim entries");
            double norm = 0.0;
            for (float x : row) {
                require(std::isfinite(x), ErrorCode::InvalidSpec, "answer_query must be finite");
                norm += static_cast<double>(x) * x;
            }
            require(norm > 0.0, ErrorCode::InvalidSpec, "answer_query rows must be nonzero");
        }
    }
}

bool GroundTruth::operator==(const GroundTruth& o) const {
    return sink_ids == o.sink_ids && local_ids == o.local_ids && answer_ids == o.answer_ids &&
           answer_query == o.answer_query && question.queries == o.question.queries;
}

std::size_t Trace::num_chunks() const noexcept {
    return chunk_size == 0 ? 0 : (token_count() + chunk_size - 1) / chunk_size;
}

namespace {

HeadMatrix slice_rows(const HeadMatrix& m, std::size_t begin, std::size_t end) {
    std::vector<float> data(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.dim()),
                            m.data().begin() + static_cast<std::ptrdiff_t>(end * m.dim()));
    return HeadMatrix(end - begin, m.dim(), std::move(data));
}

std::vector<std::vector<HeadMatrix>> slice_block(const std::vector<std::vector<HeadMatrix>>& block, std::size_t begin,
                                                 std::size_t end) {
    std::vector<std::vector<HeadMatrix>> out(block.size());
    for (std::size_t l = 0; l < block.size(); ++l) {
        for (const auto& m : block[l]) {
            out[l].push_back(slice_rows(m, begin, end));
        }
    }
    return out;
}

} // namespace

ChunkInput Trace::chunk(std::size_t index) const {
    require(index < num_chunks(), ErrorCode::IndexOutOfRange, "chunk " + std::to_string(index));
    const std::size_t begin = index * chunk_size;
    const std::size_t end = std::min(token_count(), begin + chunk_size);
    ChunkInput c;
    c.positions.assign(positions.begin() + static_cast<std::ptrdiff_t>(begin),
                       positions.begin() + static_cast<std::ptrdiff_t>(end));
    c.q = slice_block(q, begin, end);
    c.k = slice_block(k, begin, end);
    c.v = slice_block(v, begin, end);
    return c;
}

bool Trace::operator==(const Trace& o) const {
    return shape == o.shape && chunk_size == o.chunk_size && positions == o.positions && q == o.q && k == o.k &&
           v == o.v && truth == o.truth;
}

// ---- generator -------------------------------------------------------------------------

namespace {

enum StreamTag : std::uint64_t { kRoles = 1, kAnswer, kHead, kKeys, kQueries, kQuestion, kValues };

enum class Role : std::uint8_t { Plain, Sink, Answer, Local };

using Vec = std::vector<double>;

struct Bands {
    std::vector<std::size_t> sink;
    std::vector<std::size_t> local;
    std::vector<std::size_t> answer;
};

// Coordinates of rotary pairs [lo, hi): both halves of each pair.
std::vector<std::size_t> pair_coords(std::size_t lo, std::size_t hi, std::size_t half) {
    std::vector<std::size_t> out;
    for (std::size_t i = lo; i < hi; ++i) {
        out.push_back(i);
    }
    for (std::size_t i = lo; i < hi; ++i) {
        out.push_back(i + half);
    }
    return out;
}

Bands make_bands(std::size_t dim) {
    const std::size_t half = dim / 2;
    Bands b;
    if (half < 4) {
        b.sink = b.local = b.answer = pair_coords(0, half, half);
        return b;
    }
    const std::size_t ns = std::max<std::size_t>(1, half / 8);
    const std::size_t nl = std::max<std::size_t>(1, half / 4);
    b.sink = pair_coords(half - ns, half, half);
    b.local = pair_coords(half - ns - nl, half - ns, half);
    b.answer = pair_coords(0, half - ns - nl, half);
    return b;
}

void normalize(Vec& v) {
    double n = 0.0;
    for (double x : v) {
        n += x * x;
    }
    n = std::sqrt(n);
    if (n > 0.0) {
        for (double& x : v) {
            x /= n;
        }
    }
}

double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        s += a[i] * b[i];
    }
    return s;
}

Vec random_in_band(Rng& rng, const std::vector<std::size_t>& band, std::size_t dim) {
    Vec v(dim, 0.0);
    for (auto i : band) {
        v[i] = rng.normal();
    }
    return v;
}

Vec unit_in_band(Rng& rng, const std::vector<std::size_t>& band, std::size_t dim) {
    Vec v = random_in_band(rng, band, dim);
    normalize(v);
    return v;
}

// Gram-Schmidt on Gaussian draws; cycles when more anchors are requested than the band holds.
std::vector<Vec> orthonormal_anchors(Rng& rng, const std::vector<std::size_t>& band, std::size_t dim,
                                     std::size_t count) {
    const std::size_t distinct = std::min(count, band.size());
    std::vector<Vec> basis;
    while (basis.size() < distinct) {
        Vec v = random_in_band(rng, band, dim);
        for (const auto& b : basis) {
            const double p = dot(v, b);
            for (std::size_t i = 0; i < dim; ++i) {
                v[i] -= p * b[i];
            }
        }
        if (std::sqrt(dot(v, v)) < 1e-6) {
            continue;
        }
        normalize(v);
        basis.push_back(std::move(v));
    }
    std::vector<Vec> out;
    for (std::size_t j = 0; j < count; ++j) {
        out.push_back(basis[j % distinct]);
    }
    return out;
}

} // namespace

Trace generate(const TraceSpec& spec) {
    spec.validate();
    const auto& shape = spec.shape;
    const std::size_t T = spec.total_tokens;
    const std::size_t d = shape.head_dim;
    const double root_d = std::sqrt(static_cast<double>(d));
    const Bands bands = make_bands(d);

    Trace trace;
    trace.shape = shape;
    trace.chunk_size = spec.chunk_size;
    trace.positions.resize(T);
    std::iota(trace.positions.begin(), trace.positions.end(), std::int64_t{0});

    // Roles.
    std::vector<Role> role(T, Role::Plain);
    {
        Rng rng(spec.seed, {kRoles});
        std::vector<std::size_t> perm(T);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        for (std::size_t i = 0; i < spec.num_sinks; ++i) {
            role[perm[i]] = Role::Sink;
        }
        for (std::size_t i = 0; i < spec.num_answer_tokens; ++i) {
            role[perm[spec.num_sinks + i]] = Role::Answer;
        }
        if (spec.local_cluster_size > 0) {
            for (std::size_t p = 0; p < T; ++p) {
                const bool draw = rng.uniform() < spec.local_fraction;
                if (draw && role[p] == Role::Plain) {
                    role[p] = Role::Local;
                }
            }
        }
    }

    GroundTruth truth;
    for (std::size_t p = 0; p < T; ++p) {
        const auto pos = static_cast<std::int64_t>(p);
        if (role[p] == Role::Sink) {
            truth.sink_ids.push_back(pos);
        } else if (role[p] == Role::Answer) {
            truth.answer_ids.push_back(pos);
        } else if (role[p] == Role::Local) {
            truth.local_ids.push_back(pos);
        }
    }

    // Answer direction per head, shared across layers.
    std::vector<Vec> answer_dir(shape.num_heads);
    for (std::size_t h = 0; h < shape.num_heads; ++h) {
        if (!spec.answer_query.empty()) {
            answer_dir[h].assign(spec.answer_query[h].begin(), spec.answer_query[h].end());
            normalize(answer_dir[h]);
        } else {
            Rng rng(spec.seed, {kAnswer, h});
            answer_dir[h] = unit_in_band(rng, bands.answer, d);
        }
        truth.answer_query.emplace_back(answer_dir[h].begin(), answer_dir[h].end());
    }

    const std::size_t clusters =
        spec.local_cluster_size > 0 ? (T + spec.local_cluster_size - 1) / spec.local_cluster_size : 0;

    trace.q.assign(shape.num_layers, {});
    trace.k.assign(shape.num_layers, {});
    trace.v.assign(shape.num_layers, {});
    truth.question.queries.assign(shape.num_layers, {});

    for (std::size_t l = 0; l < shape.num_layers; ++l) {
        for (std::size_t h = 0; h < shape.num_heads; ++h) {
            const Vec& a = answer_dir[h];
            Rng head_rng(spec.seed, {kHead, l, h});
            const Vec s = unit_in_band(head_rng, bands.sink, d);
            const auto anchors = orthonormal_anchors(head_rng, bands.local, d, clusters);
            std::vector<Vec> scene(clusters);
            for (auto& v : scene) {
                v = random_in_band(head_rng, bands.answer, d);
                const double p = dot(v, a);
                for (std::size_t i = 0; i < d; ++i) {
                    v[i] -= p * a[i];
                }
                normalize(v);
            }

            Rng key_rng(spec.seed, {kKeys, l, h});
            Rng query_rng(spec.seed, {kQueries, l, h});
            HeadMatrix keys(T, d);
            HeadMatrix queries(T, d);
            for (std::size_t p = 0; p < T; ++p) {
                const std::size_t c = clusters > 0 ? p / spec.local_cluster_size : 0;
                auto krow = keys.row(p);
                auto qrow = queries.row(p);
                for (std::size_t i = 0; i < d; ++i) {
                    double kv = spec.noise_std * key_rng.normal();
                    switch (role[p]) {
                    case Role::Sink: kv += spec.sink_gain * s[i]; break;
                    case Role::Answer: kv += spec.answer_gain * a[i] + spec.answer_salience * s[i]; break;
                    case Role::Local: kv += spec.local_gain * anchors[c][i] + spec.scene_gain * scene[c][i]; break;
                    case Role::Plain: break;
                    }
                    krow[i] = static_cast<float>(kv);

                    double qv = spec.sink_query_weight * s[i];
                    if (clusters > 0) {
                        qv += anchors[c][i];
                    }
                    qrow[i] = static_cast<float>(root_d * qv + spec.query_noise_std * query_rng.normal());
                }
            }
            trace.k[l].push_back(rope_apply(keys, trace.positions, shape.rope_theta));
            trace.q[l].push_back(rope_apply(queries, trace.positions, shape.rope_theta));

            Rng question_rng(spec.seed, {kQuestion, l, h});
            HeadMatrix question(spec.question_tokens, d);
            for (std::size_t t = 0; t < spec.question_tokens; ++t) {
                for (std::size_t i = 0; i < d; ++i) {
                    question.at(t, i) = static_cast<float>(root_d * a[i] + spec.query_noise_std * question_rng.normal());
                }
            }
            truth.question.queries[l].push_back(std::move(question));

            Rng value_rng(spec.seed, {kValues, l, h});
            HeadMatrix values(T, d);
            for (auto& x : values.data()) {
                x = static_cast<float>(value_rng.normal());
            }
            trace.v[l].push_back(std::move(values));
        }
    }
    trace.truth = std::move(truth);
    return trace;
}

// ---- binary format ---------------------------------------------------------------------

namespace {

constexpr std::uint32_t kVersion = 1;
constexpr std::uint32_t kHasTruth = 1u << 0;
constexpr std::uint32_t kHasPositions = 1u << 1;
constexpr std::uint32_t kKvOnly = 1u << 2;
constexpr std::size_t kHeaderBytes = 4 + 4 + 4 * 3 + 8 + 8 + 4 + 4;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u32(std::uint32_t v) { le(v, 4); }
    void u64(std::uint64_t v) { le(v, 8); }
    void i64(std::int64_t v) { le(static_cast<std::uint64_t>(v), 8); }
    void f64(double v) { le(std::bit_cast<std::uint64_t>(v), 8); }
    void f32s(std::span<const float> vs) {
        for (float v : vs) {
            le(std::bit_cast<std::uint32_t>(v), 4);
        }
    }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    void le(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) {
            out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
        }
    }
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(const std::vector<std::uint8_t>& in) : in_(in) {}

    std::size_t remaining() const noexcept { return in_.size() - pos_; }
    std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
    std::uint64_t u64() { return le(8); }
    std::int64_t i64() { return static_cast<std::int64_t>(le(8)); }
    double f64() { return std::bit_cast<double>(le(8)); }
    void f32s(std::span<float> out) {
        need(out.size() * 4);
        for (auto& v : out) {
            v = std::bit_cast<float>(static_cast<std::uint32_t>(le(4)));
        }
    }
    void need(std::uint64_t n) const {
        require(n <= remaining(), ErrorCode::CorruptTrace,
                "payload truncated: need " + std::to_string(n) + " bytes, have " + std::to_string(remaining()));
    }

private:
    std::uint64_t le(int n) {
        need(static_cast<std::uint64_t>(n));
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) {
            v |= static_cast<std::uint64_t>(in_[pos_++]) << (8 * i);
        }
        return v;
    }
    const std::vector<std::uint8_t>& in_;
    std::size_t pos_ = 0;
};

bool identity_positions(const std::vector<std::int64_t>& positions) {
    for (std::size_t i = 0; i < positions.size(); ++i) {
        if (positions[i] != static_cast<std::int64_t>(i)) {
            return false;
        }
    }
    return true;
}

std::uint32_t narrow32(std::size_t v, const char* what) {
    require(v <= std::numeric_limits<std::uint32_t>::max(), ErrorCode::InvalidShape,
            std::string(what) + " does not fit the file format");
    return static_cast<std::uint32_t>(v);
}

// Multiplies with an overflow guard; a header that overflows cannot describe a real payload.
std::uint64_t checked_mul(std::uint64_t a, std::uint64_t b) {
    require(b == 0 || a <= std::numeric_limits<std::uint64_t>::max() / b, ErrorCode::CorruptTrace,
            "declared sizes overflow");
    return a * b;
}

} // namespace

std::vector<std::uint8_t> encode_trace(const Trace& trace) {
    const auto& s = trace.shape;
    const std::size_t T = trace.token_count();
    require(trace.chunk_size >= 1, ErrorCode::InvalidShape, "chunk size must be >= 1");
    require(trace.k.size() == s.num_layers && trace.v.size() == s.num_layers, ErrorCode::ShapeMismatch,
            "trace layer count differs from shape");
    require(trace.q.empty() || trace.q.size() == s.num_layers, ErrorCode::ShapeMismatch,
            "trace query layer count differs from shape");

    std::uint32_t flags = 0;
    if (trace.truth) {
        flags |= kHasTruth;
    }
    const bool explicit_positions = !identity_positions(trace.positions);
    if (explicit_positions) {
        flags |= kHasPositions;
    }
    if (!trace.has_queries()) {
        flags |= kKvOnly;
    }

    Writer w;
    w.bytes("KVTR", 4);
    w.u32(kVersion);
    w.u32(narrow32(s.num_layers, "num_layers"));
    w.u32(narrow32(s.num_heads, "num_heads"));
    w.u32(narrow32(s.head_dim, "head_dim"));
    w.f64(s.rope_theta);
    w.u64(T);
    w.u32(narrow32(trace.chunk_size, "chunk_size"));
    w.u32(flags);
    if (explicit_positions) {
        for (auto p : trace.positions) {
            w.i64(p);
        }
    }

    auto emit = [&](const HeadMatrix& m, std::size_t begin, std::size_t end) {
        require(m.rows() == T && m.dim() == s.head_dim, ErrorCode::ShapeMismatch, "trace block shape differs");
        w.f32s(m.data().subspan(begin * s.head_dim, (end - begin) * s.head_dim));
    };
    for (std::size_t c = 0; c < trace.num_chunks(); ++c) {
        const std::size_t begin = c * trace.chunk_size;
        const std::size_t end = std::min(T, begin + trace.chunk_size);
        for (std::size_t l = 0; l < s.num_layers; ++l) {
            for (std::size_t h = 0; h < s.num_heads; ++h) {
                if (trace.has_queries()) {
                    emit(trace.q[l].at(h), begin, end);
                }
                emit(trace.k[l].at(h), begin, end);
                emit(trace.v[l].at(h), begin, end);
            }
        }
    }

    if (trace.truth) {
        const auto& g = *trace.truth;
        for (const auto* ids : {&g.sink_ids, &g.local_ids, &g.answer_ids}) {
            w.u32(narrow32(ids->size(), "id list"));
            for (auto id : *ids) {
                w.i64(id);
            }
        }
        require(g.answer_query.size() == s.num_heads, ErrorCode::ShapeMismatch, "answer_query head count differs");
        for (const auto& row : g.answer_query) {
            require(row.size() == s.head_dim, ErrorCode::ShapeMismatch, "answer_query row length differs");
            w.f32s(row);
        }
        const std::size_t t = g.question.rows();
        w.u32(narrow32(t, "question rows"));
        require(g.question.queries.size() == s.num_layers, ErrorCode::ShapeMismatch, "question layer count differs");
        for (const auto& layer : g.question.queries) {
            require(layer.size() == s.num_heads, ErrorCode::ShapeMismatch, "question head count differs");
            for (const auto& m : layer) {
                require(m.rows() == t && m.dim() == s.head_dim, ErrorCode::ShapeMismatch, "question block differs");
                w.f32s(m.data());
            }
        }
    }
    return w.take();
}

Trace decode_trace(const std::vector<std::uint8_t>& bytes) {
    require(bytes.size() >= 4 && std::memcmp(bytes.data(), "KVTR", 4) == 0, ErrorCode::NotATrace,
            "missing KVTR magic");
    require(bytes.size() >= 8, ErrorCode::CorruptTrace, "header truncated");
    Reader r(bytes);
    r.u32(); // magic, already checked
    const std::uint32_t version = r.u32();
    require(version == kVersion, ErrorCode::UnsupportedVersion, "file version " + std::to_string(version));
    require(bytes.size() >= kHeaderBytes, ErrorCode::CorruptTrace, "header truncated");

    Trace trace;
    trace.shape.num_layers = r.u32();
    trace.shape.num_heads = r.u32();
    trace.shape.head_dim = r.u32();
    trace.shape.rope_theta = r.f64();
    const std::uint64_t T = r.u64();
    trace.chunk_size = r.u32();
    const std::uint32_t flags = r.u32();
    try {
        trace.shape.validate();
    } catch (const Error& e) {
        fail(ErrorCode::CorruptTrace, std::string("bad shape in header: ") + e.what());
    }
    require(trace.chunk_size >= 1, ErrorCode::CorruptTrace, "chunk size 0 in header");
    require((flags & ~(kHasTruth | kHasPositions | kKvOnly)) == 0, ErrorCode::CorruptTrace, "unknown flag bits");

    const auto& s = trace.shape;
    const std::uint64_t tensors = (flags & kKvOnly) ? 2 : 3;
    std::uint64_t payload = checked_mul(checked_mul(checked_mul(T, s.head_dim), s.num_heads * s.num_layers),
                                        tensors * 4);
    if (flags & kHasPositions) {
        payload += checked_mul(T, 8);
    }
    require(payload <= r.remaining(), ErrorCode::CorruptTrace,
            "header declares " + std::to_string(T) + " tokens but payload holds fewer");

    trace.positions.resize(T);
    if (flags & kHasPositions) {
        for (auto& p : trace.positions) {
            p = r.i64();
        }
    } else {
        std::iota(trace.positions.begin(), trace.positions.end(), std::int64_t{0});
    }

    auto alloc = [&](std::vector<std::vector<HeadMatrix>>& block) {
        block.assign(s.num_layers, std::vector<HeadMatrix>(s.num_heads, HeadMatrix(T, s.head_dim)));
    };
    if (!(flags & kKvOnly)) {
        alloc(trace.q);
    }
    alloc(trace.k);
    alloc(trace.v);
    for (std::size_t c = 0; c < trace.num_chunks(); ++c) {
        const std::size_t begin = c * trace.chunk_size;
        const std::size_t end = std::min<std::size_t>(T, begin + trace.chunk_size);
        const std::size_t count = (end - begin) * s.head_dim;
        for (std::size_t l = 0; l < s.num_layers; ++l) {
            for (std::size_t h = 0; h < s.num_heads; ++h) {
                if (!(flags & kKvOnly)) {
                    r.f32s(trace.q[l][h].data().subspan(begin * s.head_dim, count));
                }
                r.f32s(trace.k[l][h].data().subspan(begin * s.head_dim, count));
                r.f32s(trace.v[l][h].data().subspan(begin * s.head_dim, count));
            }
        }
    }

    if (flags & kHasTruth) {
        GroundTruth g;
        for (auto* ids : {&g.sink_ids, &g.local_ids, &g.answer_ids}) {
            const std::uint32_t n = r.u32();
            r.need(checked_mul(n, 8));
            ids->resize(n);
            for (auto& id : *ids) {
                id = r.i64();
            }
        }
        g.answer_query.assign(s.num_heads, std::vector<float>(s.head_dim));
        for (auto& row : g.answer_query) {
            r.f32s(row);
        }
        const std::uint32_t t = r.u32();
        r.need(checked_mul(checked_mul(checked_mul(t, s.head_dim), s.num_heads * s.num_layers), 4));
        g.question.queries.assign(s.num_layers, std::vector<HeadMatrix>(s.num_heads, HeadMatrix(t, s.head_dim)));
        for (auto& layer : g.question.queries) {
            for (auto& m : layer) {
                r.f32s(m.data());
            }
        }
        trace.truth = std::move(g);
    }
    require(r.remaining() == 0, ErrorCode::CorruptTrace,
            std::to_string(r.remaining()) + " trailing bytes after declared payload");
    return trace;
}

void write_trace(const Trace& trace, const std::string& path) {
    const auto bytes = encode_trace(trace);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    require(out.good(), ErrorCode::IoError, "write to " + path + " failed");
}

Trace read_trace(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_trace(bytes);
}

void write_snapshot(const LayerCache& cache, double rope_theta, const std::string& path) {
    Trace t;
    t.shape = {1, cache.num_heads(), cache.head_dim(), rope_theta};
    t.chunk_size = std::max<std::size_t>(cache.size(), 1);
    t.positions.assign(cache.positions().begin(), cache.positions().end());
    t.k.resize(1);
    t.v.resize(1);
    for (std::size_t h = 0; h < cache.num_heads(); ++h) {
        t.k[0].push_back(cache.head_keys(h));
        t.v[0].push_back(cache.head_values(h));
    }
    write_trace(t, path);
}

LayerCache read_snapshot(const std::string& path, std::size_t budget) {
    const Trace t = read_trace(path);
    require(t.shape.num_layers == 1 && !t.has_queries(), ErrorCode::CorruptTrace, path + " is not a cache snapshot");
    LayerCache cache(t.shape.num_heads, t.shape.head_dim, budget);
    if (t.token_count() > 0) {
        cache.append_block(t.positions, t.k[0], t.v[0]);
    }
    return cache;
}

// ---- JSON sidecar ----------------------------------------------------------------------

std::string spec_to_json(const TraceSpec& spec) {
    nlohmann::ordered_json j;
    j["schema"] = "livekv.trace-spec/1";
    j["num_layers"] = spec.shape.num_layers;
    j["num_heads"] = spec.shape.num_heads;
    j["head_dim"] = spec.shape.head_dim;
    j["rope_theta"] = spec.shape.rope_theta;
    j["total_tokens"] = spec.total_tokens;
    j["chunk_size"] = spec.chunk_size;
    j["num_sinks"] = spec.num_sinks;
    j["sink_gain"] = spec.sink_gain;
    j["local_cluster_size"] = spec.local_cluster_size;
    j["local_fraction"] = spec.local_fraction;
    j["local_gain"] = spec.local_gain;
    j["scene_gain"] = spec.scene_gain;
    j["num_answer_tokens"] = spec.num_answer_tokens;
    j["answer_gain"] = spec.answer_gain;
    j["answer_salience"] = spec.answer_salience;
    j["answer_query"] = spec.answer_query;
    j["question_tokens"] = spec.question_tokens;
    j["noise_std"] = spec.noise_std;
    j["query_noise_std"] = spec.query_noise_std;
    j["sink_query_weight"] = spec.sink_query_weight;
    j["seed"] = spec.seed;
    return j.dump(2) + "\n";
}

TraceSpec spec_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidSpec, std::string("sidecar is not valid JSON: ") + e.what());
    }
    TraceSpec s;
    auto get = [&j](const char* key, auto& field) {
        if (j.contains(key)) {
            try {
                j.at(key).get_to(field);
            } catch (const nlohmann::json::exception& e) {
                fail(ErrorCode::InvalidSpec, std::string("bad field ") + key + ": " + e.what());
            }
        }
    };
    get("num_layers", s.shape.num_layers);
    get("num_heads", s.shape.num_heads);
    get("head_dim", s.shape.head_dim);
    get("rope_theta", s.shape.rope_theta);
    get("total_tokens", s.total_tokens);
    get("chunk_size", s.chunk_size);
    get("num_sinks", s.num_sinks);
    get("sink_gain", s.sink_gain);
    get("local_cluster_size", s.local_cluster_size);
    get("local_fraction", s.local_fraction);
    get("local_gain", s.local_gain);
    get("scene_gain", s.scene_gain);
    get("num_answer_tokens", s.num_answer_tokens);
    get("answer_gain", s.answer_gain);
    get("answer_salience", s.answer_salience);
    get("answer_query", s.answer_query);
    get("question_tokens", s.question_tokens);
    get("noise_std", s.noise_std);
    get("query_noise_std", s.query_noise_std);
    get("sink_query_weight", s.sink_query_weight);
    get("seed", s.seed);
    s.validate();
    return s;
}

std::uint64_t fnv1a64(const std::vector<std::uint8_t>& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (auto b : bytes) {
        h ^= b;
        h *= 0x100000001b3ULL;
    }
    return h;
}

} // namespace livekv
