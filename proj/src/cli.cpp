// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include "livekv/cli.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iterator>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "livekv/error.hpp"
#include "livekv/metrics.hpp"
#include "livekv/par.hpp"

namespace livekv::cli {

using nlohmann::ordered_json;

namespace {

double mean_of(const std::vector<double>& v) {
    if (v.empty()) {
        return 0.0;
    }
    double s = 0.0;
    for (double x : v) {
        s += x;
    }
    return s / static_cast<double>(v.size());
}

IdSet page_ids(const std::vector<Page>& pages) {
    IdSet out;
    for (const auto& p : pages) {
        out.insert(static_cast<std::int64_t>(p.page_id));
    }
    return out;
}

std::string hex64(std::uint64_t v) {
    std::ostringstream out;
    out << std::hex << std::setw(16) << std::setfill('0') << v;
    return out.str();
}

} // namespace

ordered_json run_pipeline(const Trace& trace, const EngineConfig& config_in, const PipelineOptions& options) {
    require(trace.has_queries(), ErrorCode::CorruptTrace, "KV-only traces carry no stream queries to score with");
    require(trace.token_count() > 0, ErrorCode::CorruptTrace, "trace holds no tokens");
    EngineConfig config = config_in;
    config.shape = trace.shape;
    config.vsb.resolve_buckets();
    StreamEngine engine(config);
    const std::size_t budget = engine.config().vsb.budget_M;
    const auto& shape = trace.shape;

    ordered_json timeline = ordered_json::array();
    std::size_t violations = 0;
    std::size_t max_seen = 0;
    std::uint64_t full_attention_mac = 0;
    std::size_t current_chunk = 0;
    engine.set_observer([&](const IngestEvent& e) {
        const bool over_chunk = e.max_length_before > budget + current_chunk;
        const bool over_round = e.compressed && e.max_length_after > budget;
        violations += (over_chunk ? 1 : 0) + (over_round ? 1 : 0);
        max_seen = std::max(max_seen, e.max_length_before);
        if (e.compressed) {
            full_attention_mac += static_cast<std::uint64_t>(shape.num_layers) * shape.num_heads *
                                  e.max_length_before * e.max_length_before * shape.head_dim;
        }
        timeline.push_back({{"chunk", e.chunk_index},
                            {"tokens_seen", e.tokens_seen},
                            {"length_before", e.max_length_before},
                            {"length_after", e.max_length_after},
                            {"compressed", e.compressed}});
    });
    for (std::size_t c = 0; c < trace.num_chunks(); ++c) {
        const ChunkInput chunk = trace.chunk(c);
        current_chunk = chunk.size();
        engine.ingest_chunk(chunk);
    }

    ordered_json report;
    ordered_json memory = ordered_json::array();
    const auto mem = engine.memory_report();
    for (std::size_t l = 0; l < mem.layers.size(); ++l) {
        memory.push_back({{"layer", l}, {"tokens", mem.layers[l].tokens}, {"bytes", mem.layers[l].bytes}});
    }
    report["encoding"] = {{"chunks", engine.chunks_seen()},
                          {"tokens_seen", engine.total_tokens_seen()},
                          {"compression_rounds", engine.compression_rounds()},
                          {"max_length_observed", max_seen},
                          {"bound_violations", violations},
                          {"memory_timeline", timeline},
                          {"final_memory", memory}};

    const auto& window_ops = engine.window_scoring_ops();
    ordered_json ops = {{"window_scoring_mac", window_ops.mac},
                        {"window_scoring_exp", window_ops.exp},
                        {"full_attention_mac_equivalent", full_attention_mac},
                        {"window_to_full_ratio", full_attention_mac == 0
                                                     ? 0.0
                                                     : static_cast<double>(window_ops.mac) /
                                                           static_cast<double>(full_attention_mac)}};

    std::optional<QueryInput> query = options.query;
    if (!query && trace.truth) {
        query = trace.truth->question;
    }

    std::vector<IdSet> answers;
    std::size_t oracle_k = options.oracle_k;
    if (oracle_k == 0 && trace.truth) {
        oracle_k = trace.truth->answer_ids.size();
    }
    if (query && oracle_k > 0) {
        answers = oracle_answer_tokens(trace.k, trace.positions, *query, oracle_k, shape.rope_theta,
                                       config.scoring.scale);
    }

    ordered_json layers = ordered_json::array();
    std::map<std::string, std::vector<double>> columns;
    QueryResult result;
    if (query) {
        result = engine.answer_query(*query);
    }
    std::uint64_t response_mac = 0;
    std::uint64_t page_scoring_mac = 0;
    for (std::size_t l = 0; l < engine.num_layers(); ++l) {
        const LayerCache& cache = engine.layer(l);
        ordered_json entry = {{"layer", l}, {"cache_length", cache.size()}};
        columns["cache_length"].push_back(static_cast<double>(cache.size()));

        const auto& ev = engine.last_eviction(l);
        if (ev.evicted) {
            const std::size_t cov = coverage(ev.retained, ev.length_before, engine.config().vsb.num_buckets_N);
            entry["coverage"] = cov;
            columns["coverage"].push_back(static_cast<double>(cov));
        } else {
            entry["coverage"] = nullptr;
        }

        if (!answers.empty()) {
            const auto pos = cache.positions();
            const double ratio = retention_ratio({IdSet(pos.begin(), pos.end())}, {answers[l]}).front();
            entry["retention_ratio"] = ratio;
            columns["retention_ratio"].push_back(ratio);
        }

        if (query) {
            const auto& lr = result.layers[l];
            const auto oracle_scores = oracle_page_scores(query->queries[l], cache, config.retrieval.page_size_C,
                                                          shape.rope_theta, config.scoring.scale);
            const IdSet approx = page_ids(lr.selected_pages);
            const IdSet oracle_same_k = top_pages(oracle_scores, approx.size());
            const IdSet oracle_ref =
                top_pages(oracle_scores, pages_to_select(oracle_scores.size(), options.reference_ratio));
            const double rk = recall_at_k(approx, oracle_same_k);
            const double orc = oracle_recall(approx, oracle_ref);
            entry["pages"] = lr.num_pages;
            entry["pages_selected"] = lr.selected_pages.size();
            entry["context_size"] = lr.context.size();
            entry["recall_at_k"] = rk;
            entry["oracle_recall"] = orc;
            entry["page_scoring_mac"] = lr.scoring_ops.mac;
            entry["response_attention_mac"] = lr.attention_macs;
            columns["pages"].push_back(static_cast<double>(lr.num_pages));
            columns["pages_selected"].push_back(static_cast<double>(lr.selected_pages.size()));
            columns["context_size"].push_back(static_cast<double>(lr.context.size()));
            columns["recall_at_k"].push_back(rk);
            columns["oracle_recall"].push_back(orc);
            response_mac += lr.attention_macs;
            page_scoring_mac += lr.scoring_ops.mac;
        }
        layers.push_back(entry);
    }
    ops["page_scoring_mac"] = page_scoring_mac;
    ops["response_attention_mac"] = response_mac;
    report["op_counts"] = ops;
    report["layers"] = layers;

    ordered_json curve = ordered_json::array();
    if (query) {
        for (double ratio : options.curve_ratios) {
            const QueryResult at = engine.answer_query_at(*query, ratio);
            std::vector<double> rk;
            std::vector<double> orc;
            std::vector<double> ctx;
            for (std::size_t l = 0; l < engine.num_layers(); ++l) {
                const auto oracle_scores = oracle_page_scores(query->queries[l], engine.layer(l),
                                                              config.retrieval.page_size_C, shape.rope_theta,
                                                              config.scoring.scale);
                const IdSet approx = page_ids(at.layers[l].selected_pages);
                rk.push_back(recall_at_k(approx, top_pages(oracle_scores, approx.size())));
                orc.push_back(oracle_recall(
                    approx, top_pages(oracle_scores, pages_to_select(oracle_scores.size(), options.reference_ratio))));
                ctx.push_back(static_cast<double>(at.layers[l].context.size()));
            }
            curve.push_back({{"ratio", ratio},
                             {"pages_selected", at.layers[0].selected_pages.size()},
                             {"context_size", mean_of(ctx)},
                             {"recall_at_k", mean_of(rk)},
                             {"oracle_recall", mean_of(orc)}});
        }
    }
    report["recall_curve"] = curve;

    ordered_json summary;
    for (const char* key : {"cache_length", "coverage", "retention_ratio", "pages", "pages_selected", "context_size",
                            "recall_at_k", "oracle_recall"}) {
        auto it = columns.find(key);
        if (it == columns.end() || it->second.empty()) {
            summary[key] = nullptr;
        } else {
            summary[key] = mean_of(it->second);
        }
    }
    report["summary"] = summary;
    return report;
}

// ---- command plumbing -------------------------------------------------------------------

namespace {

std::vector<std::uint8_t> read_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(in.good(), ErrorCode::IoError, "cannot open " + path);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string read_text(const std::string& path) {
    const auto bytes = read_bytes(path);
    return {bytes.begin(), bytes.end()};
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    require(out.good(), ErrorCode::IoError, "cannot open " + path + " for writing");
    out << text;
    require(out.good(), ErrorCode::IoError, "write to " + path + " failed");
}

std::string default_output(const std::string& file) {
    const char* dir = std::getenv("LIVEKV_OUT_DIR");
    if (dir == nullptr || *dir == '\0') {
        return file;
    }
    return (std::filesystem::path(dir) / file).string();
}

void emit(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text;
    } else {
        write_text(path, text);
    }
}

// Engine settings shared by run and sweep: --config FILE plus one flag per config key.
struct EngineFlags {
    std::string config_file;
    std::map<std::string, std::string> values;
    std::map<std::string, CLI::Option*> options;

    void attach(CLI::App* app, bool with_seed = true) {
        app->add_option("--config", config_file, "key = value file with engine settings")->check(CLI::ExistingFile);
        for (const auto& [key, fallback] : describe_config(EngineConfig{})) {
            if (key == "num-layers" || key == "num-heads" || key == "head-dim" || key == "rope-theta") {
                continue; // the trace defines the model shape
            }
            if (key == "seed" && !with_seed) {
                continue;
            }
            options[key] = app->add_option("--" + key, values[key], "engine setting (default " + fallback + ")");
        }
    }

    EngineConfig build() const {
        EngineConfig config;
        config.vsb.num_buckets_N = 0; // derived from budget and capacity unless set
        if (!config_file.empty()) {
            for (const auto& [key, value] : read_config_file(config_file)) {
                apply_setting(config, key, value);
            }
        }
        for (const auto& [key, opt] : options) {
            if (opt->count() > 0) {
                apply_setting(config, key, values.at(key));
            }
        }
        config.vsb.resolve_buckets();
        return config;
    }
};

QueryInput query_from_json(const std::string& text, const ModelShape& shape) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidConfig, std::string("query file is not valid JSON: ") + e.what());
    }
    const auto& q = j.contains("question") ? j.at("question") : j;
    QueryInput out;
    try {
        require(q.is_array() && q.size() == shape.num_layers, ErrorCode::ShapeMismatch,
                "query needs one entry per layer");
        for (const auto& layer : q) {
            require(layer.is_array() && layer.size() == shape.num_heads, ErrorCode::ShapeMismatch,
                    "query needs one entry per head");
            std::vector<HeadMatrix> heads;
            for (const auto& rows : layer) {
                heads.push_back(HeadMatrix::from_rows(rows.get<std::vector<std::vector<float>>>()));
            }
            out.queries.push_back(std::move(heads));
        }
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::ShapeMismatch, std::string("query file: ") + e.what());
    }
    return out;
}

std::vector<std::string> split_values(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        require(!item.empty(), ErrorCode::InvalidConfig, "empty entry in --values");
        out.push_back(item);
    }
    require(!out.empty(), ErrorCode::InvalidConfig, "empty parameter grid");
    return out;
}

std::string csv_number(const nlohmann::ordered_json& v) {
    if (v.is_null()) {
        return "";
    }
    std::ostringstream out;
    out << std::setprecision(10) << v.get<double>();
    return out.str();
}

// ---- gen-trace ---------------------------------------------------------------------------

struct GenArgs {
    TraceSpec spec;
    std::string output;
};

void attach_gen(CLI::App* cmd, GenArgs& a) {
    auto& s = a.spec;
    cmd->add_option("-o,--output", a.output, "trace path; the JSON sidecar is written next to it");
    cmd->add_option("--num-layers,--layers", s.shape.num_layers)->capture_default_str();
    cmd->add_option("--num-heads,--heads", s.shape.num_heads)->capture_default_str();
    cmd->add_option("--head-dim", s.shape.head_dim)->capture_default_str();
    cmd->add_option("--rope-theta", s.shape.rope_theta)->capture_default_str();
    cmd->add_option("--total-tokens,--tokens", s.total_tokens)->capture_default_str();
    cmd->add_option("--chunk-size", s.chunk_size)->capture_default_str();
    cmd->add_option("--num-sinks,--sinks", s.num_sinks)->capture_default_str();
    cmd->add_option("--sink-gain", s.sink_gain)->capture_default_str();
    cmd->add_option("--local-cluster-size", s.local_cluster_size)->capture_default_str();
    cmd->add_option("--local-fraction", s.local_fraction)->capture_default_str();
    cmd->add_option("--local-gain", s.local_gain)->capture_default_str();
    cmd->add_option("--scene-gain", s.scene_gain)->capture_default_str();
    cmd->add_option("--num-answer-tokens,--answers", s.num_answer_tokens)->capture_default_str();
    cmd->add_option("--answer-gain", s.answer_gain)->capture_default_str();
    cmd->add_option("--answer-salience", s.answer_salience)->capture_default_str();
    cmd->add_option("--question-tokens", s.question_tokens)->capture_default_str();
    cmd->add_option("--noise-std", s.noise_std)->capture_default_str();
    cmd->add_option("--query-noise-std", s.query_noise_std)->capture_default_str();
    cmd->add_option("--sink-query-weight", s.sink_query_weight)->capture_default_str();
    cmd->add_option("--seed", s.seed)->capture_default_str();
}

int cmd_gen_trace(const GenArgs& a, std::ostream& out) {
    const Trace trace = generate(a.spec);
    const std::string path = a.output.empty() ? default_output("trace.kvtr") : a.output;
    write_trace(trace, path);
    const std::string sidecar = std::filesystem::path(path).replace_extension(".json").string();
    write_text(sidecar, spec_to_json(a.spec));
    out << path << "\n" << sidecar << "\n";
    return kExitOk;
}

// ---- run -------------------------------------------------------------------------------

struct RunArgs {
    std::string trace;
    std::string output;
    std::string query;
    std::size_t oracle_k = 0;
    double reference_ratio = 0.4;
    bool timings = false;
    EngineFlags engine;
};

void attach_run(CLI::App* cmd, RunArgs& a) {
    cmd->add_option("trace,--trace", a.trace, "trace file")->required();
    cmd->add_option("-o,--output", a.output, "report path (default: stdout)");
    cmd->add_option("--query", a.query, "JSON question [layer][head][row][dim]; default: embedded question");
    cmd->add_option("--oracle-k", a.oracle_k, "oracle answer-set size (default: planted answer count)");
    cmd->add_option("--reference-ratio", a.reference_ratio, "ratio fixing the oracle page set for oracle_recall")
        ->capture_default_str();
    cmd->add_flag("--timings", a.timings, "add wall-clock timings (makes reports run-dependent)");
    a.engine.attach(cmd);
}

int cmd_run(const RunArgs& a, std::ostream& out, std::ostream& err) {
    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    const auto bytes = read_bytes(a.trace);
    const Trace trace = decode_trace(bytes);
    const EngineConfig config = a.engine.build();

    PipelineOptions options;
    options.oracle_k = a.oracle_k;
    options.reference_ratio = a.reference_ratio;
    if (!a.query.empty()) {
        options.query = query_from_json(read_text(a.query), trace.shape);
    }
    const auto t1 = clock::now();
    ordered_json body = run_pipeline(trace, config, options);
    const auto t2 = clock::now();

    EngineConfig echoed = config;
    echoed.shape = trace.shape;
    ordered_json report;
    report["schema"] = kRunSchema;
    report["seed"] = config.seed;
    report["trace"] = {{"path", a.trace},
                       {"fnv1a64", hex64(fnv1a64(bytes))},
                       {"tokens", trace.token_count()},
                       {"chunk_size", trace.chunk_size},
                       {"has_ground_truth", trace.truth.has_value()}};
    ordered_json cfg;
    for (const auto& [key, value] : describe_config(echoed)) {
        cfg[key] = value;
    }
    report["config"] = cfg;
    for (auto& [key, value] : body.items()) {
        report[key] = value;
    }
    if (a.timings) {
        using ms = std::chrono::duration<double, std::milli>;
        report["timings_ms"] = {{"load", ms(t1 - t0).count()}, {"pipeline", ms(t2 - t1).count()}};
    }
    emit(a.output, report.dump(2) + "\n", out);

    const auto violations = report["encoding"]["bound_violations"].get<std::size_t>();
    if (violations > 0) {
        err << "error: " << violations << " memory bound violations during the run\n";
        return kExitData;
    }
    return kExitOk;
}

// ---- sweep -----------------------------------------------------------------------------

struct SweepArgs {
    std::uint64_t seed = 0;
    std::size_t num_seeds = 1;
    std::string trace;
    std::string spec;
    std::string param = "retrieval-ratio";
    std::string values = "0.2,0.4,0.6,0.8,1.0";
    std::string output;
    double reference_ratio = 0.4;
    EngineFlags engine;
};

void attach_sweep(CLI::App* cmd, SweepArgs& a) {
    cmd->add_option("--seed", a.seed, "first trace seed")->required();
    cmd->add_option("--num-seeds", a.num_seeds, "number of consecutive seeds")->capture_default_str();
    cmd->add_option("--trace", a.trace, "sweep a fixed trace file instead of generated ones");
    cmd->add_option("--spec", a.spec, "JSON trace spec for generated traces (the seed is overridden)");
    cmd->add_option("--param", a.param, "engine setting to sweep")->capture_default_str();
    cmd->add_option("--values", a.values, "comma-separated grid")->capture_default_str();
    cmd->add_option("-o,--output", a.output, "CSV path (default: stdout)");
    cmd->add_option("--reference-ratio", a.reference_ratio)->capture_default_str();
    a.engine.attach(cmd, false);
}

int cmd_sweep(const SweepArgs& a, std::ostream& out) {
    require(a.num_seeds >= 1, ErrorCode::InvalidConfig, "--num-seeds must be >= 1");
    const auto grid = split_values(a.values);
    const EngineConfig base = a.engine.build();
    for (const auto& v : grid) {
        EngineConfig probe = base;
        apply_setting(probe, a.param, v);
    }
    TraceSpec spec;
    if (!a.spec.empty()) {
        spec = spec_from_json(read_text(a.spec));
    }
    std::optional<Trace> fixed;
    if (!a.trace.empty()) {
        fixed = read_trace(a.trace);
    }

    static const std::vector<std::string> metrics = {"cache_length",  "pages",        "pages_selected",
                                                     "context_size",  "recall_at_k",  "oracle_recall",
                                                     "coverage",      "retention_ratio"};
    std::ostringstream csv;
    csv << "# " << kSweepSchema << "\nseed,param,value";
    for (const auto& m : metrics) {
        csv << "," << m;
    }
    csv << "\n";
    PipelineOptions options;
    options.reference_ratio = a.reference_ratio;
    options.curve_ratios.clear();
    for (std::size_t i = 0; i < a.num_seeds; ++i) {
        const std::uint64_t seed = a.seed + i;
        Trace trace;
        if (fixed) {
            trace = *fixed;
        } else {
            spec.seed = seed;
            trace = generate(spec);
        }
        for (const auto& v : grid) {
            EngineConfig config = base;
            apply_setting(config, a.param, v);
            config.seed = seed;
            const auto report = run_pipeline(trace, config, options);
            csv << seed << "," << a.param << "," << v;
            for (const auto& m : metrics) {
                csv << "," << csv_number(report["summary"][m]);
            }
            csv << "\n";
        }
    }
    emit(a.output, csv.str(), out);
    return kExitOk;
}

// ---- plot ------------------------------------------------------------------------------

struct PlotArgs {
    std::string input;
    std::string output;
    std::string x = "value";
    std::string y = "recall_at_k";
};

void attach_plot(CLI::App* cmd, PlotArgs& a) {
    cmd->add_option("input,--input", a.input, "sweep CSV or run report JSON")->required();
    cmd->add_option("-o,--output", a.output, "SVG path");
    cmd->add_option("--x", a.x, "CSV column for the x axis")->capture_default_str();
    cmd->add_option("--y", a.y, "CSV column for the y axis")->capture_default_str();
}

int cmd_plot(const PlotArgs& a, std::ostream& out) {
    const std::string text = read_text(a.input);
    const bool is_report = std::filesystem::path(a.input).extension() == ".json";
    const std::string svg = render_svg(text, is_report, a.x, a.y);
    const std::string path = a.output.empty() ? default_output("plot.svg") : a.output;
    write_text(path, svg);
    out << path << "\n";
    return kExitOk;
}

int exit_code_for(ErrorCode code) {
    switch (code) {
    case ErrorCode::InvalidConfig:
    case ErrorCode::ConfigInconsistent:
    case ErrorCode::InvalidSpec: return kExitUsage;
    default: return kExitData;
    }
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"livekv: streaming KV-cache compression and retrieval harness"};
    app.require_subcommand(1);

    GenArgs gen;
    RunArgs run;
    SweepArgs sweep;
    PlotArgs plot;
    auto* gen_cmd = app.add_subcommand("gen-trace", "generate a synthetic trace and its JSON sidecar");
    auto* run_cmd = app.add_subcommand("run", "stream a trace, answer its question, emit a JSON report");
    auto* sweep_cmd = app.add_subcommand("sweep", "sweep one engine setting over a grid, emit CSV");
    auto* plot_cmd = app.add_subcommand("plot", "render an SVG chart from a sweep CSV or run report");
    attach_gen(gen_cmd, gen);
    attach_run(run_cmd, run);
    attach_sweep(sweep_cmd, sweep);
    attach_plot(plot_cmd, plot);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen_cmd) {
            return cmd_gen_trace(gen, out);
        }
        if (*run_cmd) {
            return cmd_run(run, out, err);
        }
        if (*sweep_cmd) {
            return cmd_sweep(sweep, out);
        }
        return cmd_plot(plot, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e.code());
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
}

} // namespace livekv::cli
