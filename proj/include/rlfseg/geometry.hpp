// SPDX-License-Identifier: Apache-2.0
//
// Contours, polygon simplification, scanline rasterization and binary morphology
// on MaskImage. Contours run along pixel edges ("crack" contours), so a vertex
// (x, y) is a pixel corner and pixel (x, y) covers [x, x+1] x [y, y+1].
#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "rlfseg/codec.hpp"

namespace rlfseg::geom {

struct Point {
    double x = 0, y = 0;
    friend bool operator==(const Point&, const Point&) = default;
};

using Polygon = std::vector<Point>;

/// Closed boundary loops of the foreground (pixels > 0.5). Foreground lies to the
/// right of travel in image coordinates. Collinear vertices are dropped.
inline std::vector<Polygon> trace_contours(const MaskImage& m) {
    const int h = m.height(), w = m.width();
    auto fg = [&](int y, int x) { return y >= 0 && y < h && x >= 0 && x < w && m.fg(y, x); };
    using Key = std::pair<int, int>; // (y, x) corner
    std::map<Key, std::vector<Key>> next;
    auto edge = [&](int x0, int y0, int x1, int y1) { next[{y0, x0}].push_back({y1, x1}); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!fg(y, x)) continue;
            if (!fg(y - 1, x)) edge(x, y, x + 1, y);
            if (!fg(y, x + 1)) edge(x + 1, y, x + 1, y + 1);
            if (!fg(y + 1, x)) edge(x + 1, y + 1, x, y + 1);
            if (!fg(y, x - 1)) edge(x, y + 1, x, y);
        }

    std::vector<Polygon> loops;
    while (!next.empty()) {
        auto it = next.begin();
        const Key start = it->first;
        Key cur = start, prev = start;
        std::vector<Key> chain;
        do {
            auto& outs = next[cur];
            std::size_t pick = 0;
            if (outs.size() > 1) {
                // at a saddle corner take the right turn so diagonal neighbours stay separate
                const int dx = cur.second - prev.second, dy = cur.first - prev.first;
                for (std::size_t k = 0; k < outs.size(); ++k) {
                    const int ex = outs[k].second - cur.second, ey = outs[k].first - cur.first;
                    if (dx * ey - dy * ex > 0) pick = k;
                }
            }
            const Key nxt = outs[pick];
            outs.erase(outs.begin() + static_cast<long>(pick));
            if (outs.empty()) next.erase(cur);
            chain.push_back(cur);
            prev = cur;
            cur = nxt;
        } while (cur != start);

        Polygon poly;
        const std::size_t n = chain.size();
        for (std::size_t i = 0; i < n; ++i) {
            const Key& a = chain[(i + n - 1) % n];
            const Key& b = chain[i];
            const Key& c = chain[(i + 1) % n];
            const int cross = (b.second - a.second) * (c.first - b.first) - (b.first - a.first) * (c.second - b.second);
            if (cross != 0) poly.push_back({static_cast<double>(b.second), static_cast<double>(b.first)});
        }
        loops.push_back(std::move(poly));
    }
    return loops;
}

inline double point_segment_distance(const Point& p, const Point& a, const Point& b) {
    const double vx = b.x - a.x, vy = b.y - a.y;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0 ? ((p.x - a.x) * vx + (p.y - a.y) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double dx = a.x + t * vx - p.x, dy = a.y + t * vy - p.y;
    return std::sqrt(dx * dx + dy * dy);
}

namespace detail {

inline void dp_recurse(const Polygon& pts, std::size_t first, std::size_t last, double tol, std::vector<char>& keep) {
    if (last <= first + 1) return;
    double best = -1;
    std::size_t idx = first;
    for (std::size_t i = first + 1; i < last; ++i) {
        const double d = point_segment_distance(pts[i], pts[first], pts[last]);
        if (d > best) {
            best = d;
            idx = i;
        }
    }
    if (best > tol) {
        keep[idx] = 1;
        dp_recurse(pts, first, idx, tol, keep);
        dp_recurse(pts, idx, last, tol, keep);
    }
}

} // namespace detail

/// Douglas-Peucker on a closed loop: split at the first vertex and the vertex
/// farthest from it, then simplify both chains.
inline Polygon simplify_closed(const Polygon& loop, double tolerance) {
    if (loop.size() <= 3) return loop;
    std::size_t far = 0;
    double best = -1;
    for (std::size_t i = 1; i < loop.size(); ++i) {
        const double d = std::hypot(loop[i].x - loop[0].x, loop[i].y - loop[0].y);
        if (d > best) {
            best = d;
            far = i;
        }
    }
    Polygon closed = loop;
    closed.push_back(loop[0]);
    std::vector<char> keep(closed.size(), 0);
    keep[0] = keep[far] = keep[closed.size() - 1] = 1;
    detail::dp_recurse(closed, 0, far, tolerance, keep);
    detail::dp_recurse(closed, far, closed.size() - 1, tolerance, keep);
    Polygon out;
    for (std::size_t i = 0; i + 1 < closed.size(); ++i)
        if (keep[i]) out.push_back(closed[i]);
    return out;
}

/// Even-odd fill of all loops, sampling at pixel centres.
inline MaskImage rasterize(const std::vector<Polygon>& loops, int h, int w) {
    MaskImage m(h, w);
    std::vector<double> xs;
    for (int y = 0; y < h; ++y) {
        const double cy = y + 0.5;
        xs.clear();
        for (const auto& poly : loops) {
            const std::size_t n = poly.size();
            for (std::size_t i = 0; i < n; ++i) {
                const Point& a = poly[i];
                const Point& b = poly[(i + 1) % n];
                if ((a.y <= cy) == (b.y <= cy)) continue;
                xs.push_back(a.x + (cy - a.y) * (b.x - a.x) / (b.y - a.y));
            }
        }
        std::sort(xs.begin(), xs.end());
        for (std::size_t k = 0; k + 1 < xs.size(); k += 2)
            for (int x = 0; x < w; ++x) {
                const double cx = x + 0.5;
                if (cx > xs[k] && cx < xs[k + 1]) m.at(y, x) = 1.f;
            }
    }
    return m;
}

enum class Element { disk, box };

namespace detail {

inline bool in_element(Element e, int dy, int dx, int radius) {
    return e == Element::box || dy * dy + dx * dx <= radius * radius;
}

} // namespace detail

/// Disk: Euclidean distance <= radius. Box: Chebyshev distance <= radius.
inline MaskImage dilate(const MaskImage& m, int radius, Element e = Element::disk) {
    const int h = m.height(), w = m.width();
    MaskImage out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!m.fg(y, x)) continue;
            for (int dy = -radius; dy <= radius; ++dy)
                for (int dx = -radius; dx <= radius; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (detail::in_element(e, dy, dx, radius) && yy >= 0 && yy < h && xx >= 0 && xx < w)
                        out.at(yy, xx) = 1.f;
                }
        }
    return out;
}

/// Outside the frame counts as foreground so masks touching the border are not eaten.
inline MaskImage erode(const MaskImage& m, int radius, Element e = Element::disk) {
    const int h = m.height(), w = m.width();
    MaskImage out(h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            bool all = m.fg(y, x);
            for (int dy = -radius; dy <= radius && all; ++dy)
                for (int dx = -radius; dx <= radius && all; ++dx) {
                    const int yy = y + dy, xx = x + dx;
                    if (detail::in_element(e, dy, dx, radius) && yy >= 0 && yy < h && xx >= 0 && xx < w)
                        all = m.fg(yy, xx);
                }
            out.at(y, x) = all ? 1.f : 0.f;
        }
    return out;
}

inline MaskImage open(const MaskImage& m, int radius, Element e = Element::disk) {
    return dilate(erode(m, radius, e), radius, e);
}
inline MaskImage close(const MaskImage& m, int radius, Element e = Element::disk) {
    return erode(dilate(m, radius, e), radius, e);
}

namespace detail {

// Components of pixels whose foreground state equals `value` (8-connected for
// foreground, 4-connected for background); calls keep(size, touches_border) and
// flips the components it rejects.
template <class Keep>
MaskImage filter_components(const MaskImage& m, bool value, Keep keep) {
    const int h = m.height(), w = m.width();
    MaskImage out = m;
    std::vector<char> seen(static_cast<std::size_t>(h) * w, 0);
    std::vector<std::pair<int, int>> comp, stack;
    for (int y0 = 0; y0 < h; ++y0)
        for (int x0 = 0; x0 < w; ++x0) {
            if (seen[static_cast<std::size_t>(y0) * w + x0] || m.fg(y0, x0) != value) continue;
            comp.clear();
            stack.assign(1, {y0, x0});
            seen[static_cast<std::size_t>(y0) * w + x0] = 1;
            bool border = false;
            while (!stack.empty()) {
                const auto [y, x] = stack.back();
                stack.pop_back();
                comp.emplace_back(y, x);
                border |= y == 0 || x == 0 || y == h - 1 || x == w - 1;
                const int ny[8] = {y - 1, y + 1, y, y, y - 1, y - 1, y + 1, y + 1};
                const int nx[8] = {x, x, x - 1, x + 1, x - 1, x + 1, x - 1, x + 1};
                for (int k = 0; k < (value ? 8 : 4); ++k) {
                    if (ny[k] < 0 || ny[k] >= h || nx[k] < 0 || nx[k] >= w) continue;
                    auto& s = seen[static_cast<std::size_t>(ny[k]) * w + nx[k]];
                    if (s || m.fg(ny[k], nx[k]) != value) continue;
                    s = 1;
                    stack.emplace_back(ny[k], nx[k]);
                }
            }
            if (!keep(comp.size(), border))
                for (auto [y, x] : comp) out.at(y, x) = value ? 0.f : 1.f;
        }
    return out;
}

} // namespace detail

/// Area opening: drops foreground components smaller than min_area pixels.
inline MaskImage area_open(const MaskImage& m, std::size_t min_area) {
    return detail::filter_components(m, true, [&](std::size_t n, bool) { return n >= min_area; });
}

/// Area closing: fills enclosed holes smaller than min_area pixels.
inline MaskImage area_close(const MaskImage& m, std::size_t min_area) {
    return detail::filter_components(m, false, [&](std::size_t n, bool border) { return border || n >= min_area; });
}

inline MaskImage intersect(const MaskImage& a, const MaskImage& b) {
    MaskImage out(a.height(), a.width());
    for (std::size_t i = 0; i < a.data.size(); ++i) out.data[i] = a.data[i] > 0.5f && b.data[i] > 0.5f ? 1.f : 0.f;
    return out;
}

inline bool contains(const MaskImage& outer, const MaskImage& inner) {
    for (std::size_t i = 0; i < inner.data.size(); ++i)
        if (inner.data[i] > 0.5f && !(outer.data[i] > 0.5f)) return false;
    return true;
}

inline std::size_t vertex_count(const std::vector<Polygon>& loops) {
    std::size_t n = 0;
    for (const auto& l : loops) n += l.size();
    return n;
}

} // namespace rlfseg::geom
