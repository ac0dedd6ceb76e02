// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "livekv/stream_engine.hpp"
#include "livekv/trace.hpp"

namespace livekv::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitData = 2;

inline constexpr const char* kRunSchema = "livekv.run/1";
inline constexpr const char* kSweepSchema = "livekv.sweep/1";

struct PipelineOptions {
    std::optional<QueryInput> query; // defaults to the trace's embedded question
    std::size_t oracle_k = 0;        // 0: number of planted answers
    std::vector<double> curve_ratios{0.2, 0.4, 0.6, 0.8, 1.0};
    double reference_ratio = 0.4;    // fixes the oracle page set used by oracle_recall
};

/// Streams every chunk of the trace through a fresh engine, answers the query and
/// evaluates it against the oracles. The returned JSON has no paths or timings, so it
/// depends only on (trace, config, options).
nlohmann::ordered_json run_pipeline(const Trace& trace, const EngineConfig& config, const PipelineOptions& options);

/// Entry point shared by the executable and the tests. args excludes the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// Renders an SVG chart from a sweep CSV (mean of y per x) or a run report (memory timeline).
std::string render_svg(const std::string& input_text, bool is_report, const std::string& x_column,
                       const std::string& y_column);

} // namespace livekv::cli
