// SPDX-License-Identifier: Apache-2.0
//
// Minimal SVG line plots.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "rlfseg/image_io.hpp"

namespace rlfseg {

struct PlotSeries {
    std::string name;
    std::vector<double> x, y; ///< NaN y values break the line
};

namespace detail {

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '&': out += "&amp;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

inline std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

} // namespace detail

inline std::string line_plot_svg(const std::string& title, const std::string& xlabel, const std::string& ylabel,
                                 const std::vector<PlotSeries>& series) {
    constexpr double W = 640, H = 420, L = 70, R = 150, T = 40, B = 55;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : series)
        for (std::size_t i = 0; i < s.x.size() && i < s.y.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]);
            x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]);
            y1 = std::max(y1, s.y[i]);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x0 -= 0.5, x1 += 0.5;
    if (y1 == y0) y0 -= 0.5, y1 += 0.5;
    const double pad = 0.05 * (y1 - y0);
    y0 -= pad;
    y1 += pad;
    auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * (W - L - R); };
    auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };

    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};
    std::string svg = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + detail::fmt(W) + "\" height=\"" +
                      detail::fmt(H) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    svg += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    svg += "<text x=\"" + detail::fmt(W / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
           detail::xml_escape(title) + "</text>\n";
    svg += "<line x1=\"" + detail::fmt(L) + "\" y1=\"" + detail::fmt(H - B) + "\" x2=\"" + detail::fmt(W - R) +
           "\" y2=\"" + detail::fmt(H - B) + "\" stroke=\"black\"/>\n";
    svg += "<line x1=\"" + detail::fmt(L) + "\" y1=\"" + detail::fmt(T) + "\" x2=\"" + detail::fmt(L) + "\" y2=\"" +
           detail::fmt(H - B) + "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        const double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
        svg += "<text x=\"" + detail::fmt(px(xv)) + "\" y=\"" + detail::fmt(H - B + 16) +
               "\" text-anchor=\"middle\">" + detail::fmt(xv) + "</text>\n";
        svg += "<text x=\"" + detail::fmt(L - 6) + "\" y=\"" + detail::fmt(py(yv) + 4) + "\" text-anchor=\"end\">" +
               detail::fmt(yv) + "</text>\n";
    }
    svg += "<text x=\"" + detail::fmt((L + W - R) / 2) + "\" y=\"" + detail::fmt(H - 12) +
           "\" text-anchor=\"middle\">" + detail::xml_escape(xlabel) + "</text>\n";
    svg += "<text transform=\"translate(16," + detail::fmt((T + H - B) / 2) +
           ") rotate(-90)\" text-anchor=\"middle\">" + detail::xml_escape(ylabel) + "</text>\n";

    for (std::size_t s = 0; s < series.size(); ++s) {
        const std::string color = colors[s % 6];
        std::string path;
        bool pen = false;
        for (std::size_t i = 0; i < series[s].x.size() && i < series[s].y.size(); ++i) {
            if (!std::isfinite(series[s].y[i])) {
                pen = false;
                continue;
            }
            path += (pen ? " L" : " M") + detail::fmt(px(series[s].x[i])) + " " + detail::fmt(py(series[s].y[i]));
            pen = true;
            svg += "<circle cx=\"" + detail::fmt(px(series[s].x[i])) + "\" cy=\"" + detail::fmt(py(series[s].y[i])) +
                   "\" r=\"3\" fill=\"" + color + "\"/>\n";
        }
        if (!path.empty()) svg += "<path d=\"" + path + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"2\"/>\n";
        const double ly = T + 10 + 18 * static_cast<double>(s);
        svg += "<rect x=\"" + detail::fmt(W - R + 12) + "\" y=\"" + detail::fmt(ly - 8) +
               "\" width=\"12\" height=\"3\" fill=\"" + color + "\"/>\n";
        svg += "<text x=\"" + detail::fmt(W - R + 30) + "\" y=\"" + detail::fmt(ly - 3) + "\">" +
               detail::xml_escape(series[s].name) + "</text>\n";
    }
    svg += "</svg>\n";
    return svg;
}

inline void write_line_plot(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                            const std::string& ylabel, const std::vector<PlotSeries>& series) {
    io::write_atomic(path, line_plot_svg(title, xlabel, ylabel, series));
}

} // namespace rlfseg
