// SPDX-License-Identifier: Apache-2.0
//
// Iterative label refinement. A fixed set of anchor points is drawn from the
// starting mask once; a point-prompted refiner is then applied repeatedly to its
// own output until two consecutive masks agree (IoU >= tau) or the iteration
// budget runs out.
#pragma once

#include <deque>
#include <functional>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "rlfseg/geometry.hpp"
#include "rlfseg/metrics.hpp"
#include "rlfseg/synth.hpp"

namespace rlfseg {

struct AnchorPoint {
    int y = 0, x = 0;
    friend bool operator==(const AnchorPoint&, const AnchorPoint&) = default;
};

using AnchorSet = std::vector<AnchorPoint>;

namespace detail {

struct KMeansFit {
    std::vector<std::array<double, 2>> centroids;
    double sse = std::numeric_limits<double>::infinity();
};

inline double sq_dist(const std::array<double, 2>& a, const std::array<double, 2>& b) {
    const double dy = a[0] - b[0], dx = a[1] - b[1];
    return dy * dy + dx * dx;
}

inline KMeansFit kmeans_once(const std::vector<std::array<double, 2>>& pts, int k, std::mt19937_64& rng) {
    KMeansFit fit;
    // k-means++ seeding
    fit.centroids.push_back(pts[std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng)]);
    std::vector<double> d2(pts.size());
    while (static_cast<int>(fit.centroids.size()) < k) {
        double total = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            d2[i] = std::numeric_limits<double>::infinity();
            for (const auto& c : fit.centroids) d2[i] = std::min(d2[i], sq_dist(pts[i], c));
            total += d2[i];
        }
        std::size_t pick;
        if (total <= 0)
            pick = std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng);
        else
            pick = std::discrete_distribution<std::size_t>(d2.begin(), d2.end())(rng);
        fit.centroids.push_back(pts[pick]);
    }

    std::vector<int> assign(pts.size(), -1);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            int best = 0;
            for (int c = 1; c < k; ++c)
                if (sq_dist(pts[i], fit.centroids[static_cast<std::size_t>(c)]) <
                    sq_dist(pts[i], fit.centroids[static_cast<std::size_t>(best)]))
                    best = c;
            changed |= assign[i] != best;
            assign[i] = best;
        }
        if (!changed) break;
        std::vector<std::array<double, 2>> sum(static_cast<std::size_t>(k), {0, 0});
        std::vector<int> count(static_cast<std::size_t>(k), 0);
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const auto c = static_cast<std::size_t>(assign[i]);
            sum[c][0] += pts[i][0];
            sum[c][1] += pts[i][1];
            ++count[c];
        }
        for (std::size_t c = 0; c < sum.size(); ++c)
            if (count[c] > 0) fit.centroids[c] = {sum[c][0] / count[c], sum[c][1] / count[c]};
    }
    fit.sse = 0;
    for (std::size_t i = 0; i < pts.size(); ++i)
        fit.sse += sq_dist(pts[i], fit.centroids[static_cast<std::size_t>(assign[i])]);
    return fit;
}

} // namespace detail

/// n anchors spread over the foreground: k-means++ seeded Lloyd iterations (best of
/// `restarts` by squared error), each centroid snapped to the nearest foreground
/// pixel. With fewer foreground pixels than n, anchors repeat.
inline AnchorSet sample_anchor_points(const MaskImage& m, int n, std::uint64_t seed, int restarts = 4) {
    require(n >= 1, "sample_anchor_points: need at least one point");
    require(restarts >= 1, "sample_anchor_points: need at least one restart");
    std::vector<std::array<double, 2>> pts;
    for (int y = 0; y < m.height(); ++y)
        for (int x = 0; x < m.width(); ++x)
            if (m.fg(y, x)) pts.push_back({static_cast<double>(y), static_cast<double>(x)});
    if (pts.empty()) throw InvalidArgument("sample_anchor_points: mask has no foreground pixels");

    detail::KMeansFit best;
    for (int r = 0; r < restarts; ++r) {
        std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + static_cast<std::uint64_t>(r));
        auto fit = detail::kmeans_once(pts, n, rng);
        if (fit.sse < best.sse) best = std::move(fit);
    }

    AnchorSet out;
    for (const auto& c : best.centroids) {
        const int y = static_cast<int>(std::lround(c[0])), x = static_cast<int>(std::lround(c[1]));
        if (m.contains_pixel(y, x) && m.fg(y, x)) {
            out.push_back({y, x});
            continue;
        }
        std::size_t nearest = 0;
        for (std::size_t i = 1; i < pts.size(); ++i)
            if (detail::sq_dist(pts[i], c) < detail::sq_dist(pts[nearest], c)) nearest = i;
        out.push_back({static_cast<int>(pts[nearest][0]), static_cast<int>(pts[nearest][1])});
    }
    return out;
}

/// A point-prompted mask predictor. Implementations may throw to signal failure.
class Refiner {
public:
    virtual ~Refiner() = default;
    virtual MaskImage refine(const RgbImage& image, const AnchorSet& anchors, const MaskImage& previous) = 0;
};

class IdentityRefiner final : public Refiner {
public:
    MaskImage refine(const RgbImage&, const AnchorSet&, const MaskImage& previous) override { return previous; }
};

struct RegionGrowConfig {
    int search_radius = 3;        ///< growth stays inside the previous mask dilated by this
    std::size_t min_area = 6;     ///< area open/close size; 0 disables smoothing
    double min_threshold = 0.05;  ///< bounds on the adaptive colour distance cut
    double max_threshold = 0.5;
};

/// Colour region growing from the anchors. The reference colour is the mean over
/// 3x3 windows at the anchors (restricted to the previous mask). Pixels of the
/// search band closer to it than half the distance to the nearest competing
/// colour are grown 8-connected from the anchors, then specks and pinholes are
/// removed by an area opening and closing.
class RegionGrowRefiner final : public Refiner {
public:
    explicit RegionGrowRefiner(RegionGrowConfig cfg = {}) : cfg_(cfg) {}

    MaskImage refine(const RgbImage& image, const AnchorSet& anchors, const MaskImage& previous) override {
        const int h = previous.height(), w = previous.width();
        require(image.height() == h && image.width() == w, "RegionGrowRefiner: image/mask size mismatch");
        require(!anchors.empty(), "RegionGrowRefiner: no anchors");
        for (const auto& a : anchors) require(previous.contains_pixel(a.y, a.x), "RegionGrowRefiner: anchor out of bounds");

        std::vector<std::array<double, 3>> window;
        for (const auto& a : anchors)
            for (int dy = -1; dy <= 1; ++dy)
                for (int dx = -1; dx <= 1; ++dx) {
                    const int y = a.y + dy, x = a.x + dx;
                    if (!previous.contains_pixel(y, x) || !previous.fg(y, x)) continue;
                    window.push_back({image.at(0, y, x), image.at(1, y, x), image.at(2, y, x)});
                }
        if (window.empty())
            for (const auto& a : anchors) window.push_back({image.at(0, a.y, a.x), image.at(1, a.y, a.x), image.at(2, a.y, a.x)});
        const auto ref = robust_mean(window, cfg_.min_threshold);

        const MaskImage band = geom::dilate(previous, cfg_.search_radius);
        std::vector<float> dist(static_cast<std::size_t>(h) * w, 0.f);
        std::vector<float> in_band;
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                double d2 = 0;
                for (int c = 0; c < 3; ++c) {
                    const double e = image.at(c, y, x) - ref[static_cast<std::size_t>(c)];
                    d2 += e * e;
                }
                dist[static_cast<std::size_t>(y) * w + x] = static_cast<float>(std::sqrt(d2));
                if (band.fg(y, x)) in_band.push_back(dist[static_cast<std::size_t>(y) * w + x]);
            }
        const double thr = adaptive_threshold(in_band, cfg_.min_threshold, cfg_.max_threshold);

        MaskImage grown(h, w);
        std::deque<AnchorPoint> queue;
        auto visit = [&](int y, int x) {
            if (!band.contains_pixel(y, x) || !band.fg(y, x) || grown.fg(y, x)) return;
            if (dist[static_cast<std::size_t>(y) * w + x] >= thr) return;
            grown.at(y, x) = 1.f;
            queue.push_back({y, x});
        };
        for (const auto& a : anchors) visit(a.y, a.x);
        while (!queue.empty()) {
            const auto p = queue.front();
            queue.pop_front();
            visit(p.y - 1, p.x);
            visit(p.y + 1, p.x);
            visit(p.y, p.x - 1);
            visit(p.y, p.x + 1);
            visit(p.y - 1, p.x - 1);
            visit(p.y - 1, p.x + 1);
            visit(p.y + 1, p.x - 1);
            visit(p.y + 1, p.x + 1);
        }
        if (cfg_.min_area > 0)
            grown = geom::intersect(geom::area_close(geom::area_open(grown, cfg_.min_area), cfg_.min_area), band);
        if (grown.foreground_count() == 0) return previous;
        return grown;
    }

    /// Mean of the colours within `radius` of the channel-wise median, so a window
    /// that straddles the label edge does not drag the reference towards the background.
    static std::array<double, 3> robust_mean(const std::vector<std::array<double, 3>>& px, double radius) {
        std::array<double, 3> med{};
        for (std::size_t c = 0; c < 3; ++c) {
            std::vector<double> v;
            for (const auto& p : px) v.push_back(p[c]);
            std::nth_element(v.begin(), v.begin() + static_cast<long>(v.size() / 2), v.end());
            med[c] = v[v.size() / 2];
        }
        std::array<double, 3> sum{};
        int n = 0;
        for (const auto& p : px) {
            const double d = std::hypot(p[0] - med[0], p[1] - med[1], p[2] - med[2]);
            if (d > radius) continue;
            for (std::size_t c = 0; c < 3; ++c) sum[c] += p[c];
            ++n;
        }
        if (n == 0) return med;
        for (auto& v : sum) v /= n;
        return sum;
    }

    /// Half the distance to the nearest competing colour. "Nearest" is the 2nd
    /// percentile of distances above lo, which ignores a handful of stray pixels.
    static double adaptive_threshold(std::vector<float> d, double lo, double hi) {
        std::erase_if(d, [&](float v) { return v <= lo; });
        if (d.empty()) return hi;
        const auto k = d.begin() + static_cast<long>(d.size() / 50);
        std::nth_element(d.begin(), k, d.end());
        return std::clamp(0.5 * *k, lo, hi);
    }

private:
    RegionGrowConfig cfg_;
};

struct RefineConfig {
    int points = 5;
    double tau = 0.99;
    int max_iterations = 10;
    std::uint64_t seed = 0;
};

struct RefineResult {
    MaskImage mask;
    int iterations = 0;
    bool converged = false;
    AnchorSet anchors;
    std::vector<double> iou_trace; ///< IoU(M_t, M_{t-1}) per iteration
    std::string warning;           ///< set when the refiner failed and the input was kept
};

/// M_t = refiner(P, M_{t-1}) with P drawn once from m0; stops once IoU(M_t, M_{t-1}) >= tau
/// or after max_iterations. A refiner exception returns m0 unchanged with a warning.
inline RefineResult refine_mask_iterative(const RgbImage& image, const MaskImage& m0, Refiner& refiner,
                                          const RefineConfig& cfg = {}) {
    require(cfg.max_iterations >= 1, "refine_mask_iterative: max_iterations must be >= 1");
    require(cfg.tau > 0 && cfg.tau <= 1, "refine_mask_iterative: tau must lie in (0, 1]");
    RefineResult r;
    r.anchors = sample_anchor_points(m0, cfg.points, cfg.seed);
    MaskImage prev = m0;
    try {
        for (int t = 1; t <= cfg.max_iterations; ++t) {
            MaskImage next = refiner.refine(image, r.anchors, prev);
            require(next.data.shape() == m0.data.shape(), "refiner returned a mask of the wrong size");
            const double j = iou(next, prev);
            r.iou_trace.push_back(j);
            r.iterations = t;
            prev = std::move(next);
            if (j >= cfg.tau) {
                r.converged = true;
                break;
            }
        }
    } catch (const std::exception& e) {
        RefineResult failed;
        failed.mask = m0;
        failed.anchors = r.anchors;
        failed.warning = std::string("refiner failed, keeping the input mask: ") + e.what();
        return failed;
    }
    r.mask = std::move(prev);
    return r;
}

struct RefineSummary {
    std::size_t refined = 0;
    std::size_t converged = 0;
    std::size_t failed = 0;
    std::size_t skipped_empty = 0;
    double mean_iterations = 0;
    std::vector<std::string> warnings;
};

/// Fills mask_refined for every record, starting from the polygonized label.
/// on_record, when set, sees each record with its refinement result.
inline RefineSummary refine_records(std::vector<SampleRecord>& records, Refiner& refiner, const RefineConfig& cfg = {},
                                    const std::function<void(const SampleRecord&, const RefineResult&)>& on_record = {}) {
    RefineSummary s;
    double iters = 0;
    for (auto& rec : records) {
        if (rec.mask_poly.foreground_count() == 0) {
            rec.mask_refined = rec.mask_poly;
            ++s.skipped_empty;
            s.warnings.push_back(rec.id + ": empty starting mask, copied unchanged");
            if (on_record) {
                RefineResult r;
                r.mask = rec.mask_poly;
                r.warning = "empty starting mask";
                on_record(rec, r);
            }
            continue;
        }
        RefineConfig c = cfg;
        c.seed = cfg.seed ^ rec.scene.seed;
        auto r = refine_mask_iterative(rec.image, rec.mask_poly, refiner, c);
        if (!r.warning.empty()) {
            ++s.failed;
            s.warnings.push_back(rec.id + ": " + r.warning);
        }
        s.converged += r.converged;
        iters += r.iterations;
        ++s.refined;
        if (on_record) on_record(rec, r);
        rec.mask_refined = std::move(r.mask);
    }
    if (s.refined > 0) s.mean_iterations = iters / static_cast<double>(s.refined);
    return s;
}

} // namespace rlfseg
