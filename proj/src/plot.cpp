// Copyright (C) 2026 The livekv Authors
// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "livekv/cli.hpp"
#include "livekv/error.hpp"

namespace livekv::cli {

namespace {

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream in(line);
    std::string cell;
    while (std::getline(in, cell, ',')) {
        out.push_back(cell);
    }
    if (!line.empty() && line.back() == ',') {
        out.emplace_back();
    }
    return out;
}

double parse_cell(const std::string& cell, const std::string& column) {
    try {
        std::size_t used = 0;
        const double v = std::stod(cell, &used);
        require(used == cell.size(), ErrorCode::InvalidConfig, "non-numeric cell in column " + column);
        return v;
    } catch (const std::logic_error&) {
        fail(ErrorCode::InvalidConfig, "non-numeric cell '" + cell + "' in column " + column);
    }
}

// Mean of y per distinct x, ordered by x. Empty y cells are skipped.
Series series_from_csv(const std::string& text, const std::string& x_col, const std::string& y_col) {
    std::stringstream in(text);
    std::string line;
    std::vector<std::string> header;
    std::map<double, std::pair<double, std::size_t>> acc;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') {
            continue;
        }
        const auto cells = split_csv_line(line);
        if (header.empty()) {
            header = cells;
            continue;
        }
        auto col = [&](const std::string& name) {
            const auto it = std::find(header.begin(), header.end(), name);
            require(it != header.end(), ErrorCode::InvalidConfig, "no column named " + name);
            return static_cast<std::size_t>(it - header.begin());
        };
        const std::size_t xi = col(x_col);
        const std::size_t yi = col(y_col);
        if (yi >= cells.size() || cells[yi].empty() || xi >= cells.size()) {
            continue;
        }
        auto& slot = acc[parse_cell(cells[xi], x_col)];
        slot.first += parse_cell(cells[yi], y_col);
        ++slot.second;
    }
    Series s{y_col, {}};
    for (const auto& [x, sum] : acc) {
        s.points.emplace_back(x, sum.first / static_cast<double>(sum.second));
    }
    require(!s.points.empty(), ErrorCode::InvalidConfig, "no data points for " + y_col);
    return s;
}

std::vector<Series> series_from_report(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorCode::InvalidConfig, std::string("report is not valid JSON: ") + e.what());
    }
    require(j.contains("encoding") && j["encoding"].contains("memory_timeline"), ErrorCode::InvalidConfig,
            "report has no memory timeline");
    Series before{"length_before", {}};
    Series after{"length_after", {}};
    for (const auto& e : j["encoding"]["memory_timeline"]) {
        const double x = e.at("tokens_seen").get<double>();
        before.points.emplace_back(x, e.at("length_before").get<double>());
        after.points.emplace_back(x, e.at("length_after").get<double>());
    }
    require(!before.points.empty(), ErrorCode::InvalidConfig, "empty memory timeline");
    return {before, after};
}

std::string fmt(double v) {
    std::ostringstream out;
    out.precision(6);
    out << v;
    return out.str();
}

std::string draw(const std::vector<Series>& series, const std::string& x_label) {
    constexpr double W = 640, H = 400, L = 70, R = 20, T = 30, B = 50;
    double x0 = INFINITY, x1 = -INFINITY, y0 = 0.0, y1 = -INFINITY;
    for (const auto& s : series) {
        for (const auto& [x, y] : s.points) {
            x0 = std::min(x0, x);
            x1 = std::max(x1, x);
            y0 = std::min(y0, y);
            y1 = std::max(y1, y);
        }
    }
    if (x1 <= x0) {
        x1 = x0 + 1.0;
    }
    if (y1 <= y0) {
        y1 = y0 + 1.0;
    }
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double xv = x0 + (x1 - x0) * i / 4.0;
        const double yv = y0 + (y1 - y0) * i / 4.0;
        svg << "<text x=\"" << px(xv) << "\" y=\"" << H - B + 18 << "\" font-size=\"11\" text-anchor=\"middle\">"
            << fmt(xv) << "</text>\n";
        svg << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" font-size=\"11\" text-anchor=\"end\">"
            << fmt(yv) << "</text>\n";
    }
    svg << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 10 << "\" font-size=\"12\" text-anchor=\"middle\">"
        << x_label << "</text>\n";
    for (std::size_t k = 0; k < series.size(); ++k) {
        const char* color = colors[k % 4];
        svg << "<polyline fill=\"none\" stroke=\"" << color << "\" stroke-width=\"2\" points=\"";
        for (const auto& [x, y] : series[k].points) {
            svg << px(x) << "," << py(y) << " ";
        }
        svg << "\"/>\n";
        svg << "<text x=\"" << L + 10 << "\" y=\"" << T + 14 * (k + 1) << "\" font-size=\"12\" fill=\"" << color
            << "\">" << series[k].name << "</text>\n";
    }
    svg << "</svg>\n";
    return svg.str();
}

} // namespace

std::string render_svg(const std::string& input_text, bool is_report, const std::string& x_column,
                       const std::string& y_column) {
    if (is_report) {
        return draw(series_from_report(input_text), "tokens seen");
    }
    return draw({series_from_csv(input_text, x_column, y_column)}, x_column);
}

} // namespace livekv::cli
