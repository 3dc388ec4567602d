// SPDX-License-Identifier: Apache-2.0
//
// Segmentation quality: IoU, best global threshold mIoU, pixel-pooled average
// precision and boundary F-score.
#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "rlfseg/codec.hpp"
#include "rlfseg/errors.hpp"

namespace rlfseg {

/// |a ∩ b| / |a ∪ b| over pixels > 0.5. Two empty masks score 1.
inline double iou(const MaskImage& a, const MaskImage& b) {
    require(a.data.shape() == b.data.shape(), "iou: shape mismatch " + a.data.shape_string() + " vs " +
                                                  b.data.shape_string());
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        const bool x = a.data[i] > 0.5f, y = b.data[i] > 0.5f;
        inter += x && y;
        uni += x || y;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

inline MaskImage binarize(const MaskImage& gray, double threshold) {
    MaskImage m(gray.height(), gray.width());
    for (std::size_t i = 0; i < gray.data.size(); ++i) m.data[i] = gray.data[i] >= threshold ? 1.f : 0.f;
    return m;
}

/// {0.00, 0.05, ..., 1.00}
inline std::vector<double> default_threshold_grid() {
    std::vector<double> g;
    for (int k = 0; k <= 20; ++k) g.push_back(k / 20.0);
    return g;
}

struct ThresholdSweep {
    double miou = 0;
    double best_threshold = 0;
    std::vector<double> curve;              ///< mean IoU per grid entry
    std::vector<double> per_sample_at_best; ///< IoU of each sample at best_threshold
    std::vector<double> per_sample_best;    ///< each sample's own best IoU over the grid
};

/// Single global threshold maximizing mean IoU; lowest threshold wins ties.
inline ThresholdSweep best_threshold_miou(const std::vector<MaskImage>& pred_gray, const std::vector<MaskImage>& truth,
                                          const std::vector<double>& grid = default_threshold_grid()) {
    require(!pred_gray.empty(), "best_threshold_miou: empty prediction list");
    require(pred_gray.size() == truth.size(), "best_threshold_miou: list lengths differ");
    require(!grid.empty(), "best_threshold_miou: empty threshold grid");
    const std::size_t n = pred_gray.size();
    std::vector<std::vector<double>> table(grid.size(), std::vector<double>(n));
    ThresholdSweep s;
    s.curve.resize(grid.size());
    for (std::size_t g = 0; g < grid.size(); ++g) {
        double sum = 0;
        for (std::size_t i = 0; i < n; ++i) {
            table[g][i] = iou(binarize(pred_gray[i], grid[g]), truth[i]);
            sum += table[g][i];
        }
        s.curve[g] = sum / static_cast<double>(n);
    }
    std::size_t best = 0;
    for (std::size_t g = 1; g < grid.size(); ++g)
        if (s.curve[g] > s.curve[best] || (s.curve[g] == s.curve[best] && grid[g] < grid[best])) best = g;
    s.miou = s.curve[best];
    s.best_threshold = grid[best];
    s.per_sample_at_best = table[best];
    s.per_sample_best.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t g = 0; g < grid.size(); ++g) s.per_sample_best[i] = std::max(s.per_sample_best[i], table[g][i]);
    return s;
}

struct PrPoint {
    double threshold, precision, recall;
};

struct ApResult {
    double ap = 0;
    std::vector<PrPoint> curve; ///< one point per unique score, descending threshold
};

/// All-points interpolated AP over pixels pooled across the dataset. Scores are
/// swept over their unique values; a pixel is positive at threshold s when score >= s.
inline ApResult average_precision_scores(std::vector<std::pair<float, bool>> scored) {
    const std::size_t positives = static_cast<std::size_t>(
        std::count_if(scored.begin(), scored.end(), [](const auto& p) { return p.second; }));
    if (positives == 0)
        throw InvalidArgument("average_precision: ground truth has no positive pixels (" +
                              std::to_string(scored.size()) + " pixels scanned); recall is undefined");
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    ApResult r;
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < scored.size();) {
        const float s = scored[i].first;
        for (; i < scored.size() && scored[i].first == s; ++i) (scored[i].second ? tp : fp)++;
        r.curve.push_back({s, static_cast<double>(tp) / static_cast<double>(tp + fp),
                           static_cast<double>(tp) / static_cast<double>(positives)});
    }
    // precision envelope, right to left
    std::vector<double> env(r.curve.size());
    double best = 0;
    for (std::size_t k = r.curve.size(); k-- > 0;) {
        best = std::max(best, r.curve[k].precision);
        env[k] = best;
    }
    double prev_recall = 0;
    for (std::size_t k = 0; k < r.curve.size(); ++k) {
        r.ap += (r.curve[k].recall - prev_recall) * env[k];
        prev_recall = r.curve[k].recall;
    }
    return r;
}

inline ApResult average_precision(const std::vector<MaskImage>& pred_gray, const std::vector<MaskImage>& truth) {
    require(!pred_gray.empty(), "average_precision: empty prediction list");
    require(pred_gray.size() == truth.size(), "average_precision: list lengths differ");
    std::vector<std::pair<float, bool>> scored;
    for (std::size_t i = 0; i < pred_gray.size(); ++i) {
        require(pred_gray[i].data.shape() == truth[i].data.shape(), "average_precision: shape mismatch");
        for (std::size_t k = 0; k < truth[i].data.size(); ++k)
            scored.emplace_back(pred_gray[i].data[k], truth[i].data[k] > 0.5f);
    }
    return average_precision_scores(std::move(scored));
}

/// Foreground pixels with a 4-neighbour in the background; outside the frame counts as background.
inline std::vector<std::pair<int, int>> boundary_pixels(const MaskImage& m) {
    std::vector<std::pair<int, int>> out;
    const int h = m.height(), w = m.width();
    auto fg = [&](int y, int x) { return y >= 0 && y < h && x >= 0 && x < w && m.fg(y, x); };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (fg(y, x) && (!fg(y - 1, x) || !fg(y + 1, x) || !fg(y, x - 1) || !fg(y, x + 1))) out.emplace_back(y, x);
    return out;
}

/// F1 of boundary pixels matched within Euclidean `radius`.
inline double boundary_f_score(const MaskImage& pred, const MaskImage& truth, int radius = 2) {
    require(pred.data.shape() == truth.data.shape(), "boundary_f_score: shape mismatch");
    require(radius >= 0, "boundary_f_score: negative radius");
    const int h = pred.height(), w = pred.width();
    const auto bp = boundary_pixels(pred), bt = boundary_pixels(truth);
    if (bp.empty() && bt.empty()) return 1.0;
    if (bp.empty() || bt.empty()) return 0.0;

    auto to_grid = [&](const std::vector<std::pair<int, int>>& pts) {
        std::vector<char> g(static_cast<std::size_t>(h) * w, 0);
        for (auto [y, x] : pts) g[static_cast<std::size_t>(y) * w + x] = 1;
        return g;
    };
    const auto gp = to_grid(bp), gt = to_grid(bt);
    auto near = [&](const std::vector<char>& g, int y, int x) {
        for (int dy = -radius; dy <= radius; ++dy)
            for (int dx = -radius; dx <= radius; ++dx) {
                if (dy * dy + dx * dx > radius * radius) continue;
                const int yy = y + dy, xx = x + dx;
                if (yy >= 0 && yy < h && xx >= 0 && xx < w && g[static_cast<std::size_t>(yy) * w + xx]) return true;
            }
        return false;
    };
    std::size_t mp = 0, mt = 0;
    for (auto [y, x] : bp) mp += near(gt, y, x);
    for (auto [y, x] : bt) mt += near(gp, y, x);
    const double precision = static_cast<double>(mp) / static_cast<double>(bp.size());
    const double recall = static_cast<double>(mt) / static_cast<double>(bt.size());
    return precision + recall == 0 ? 0.0 : 2 * precision * recall / (precision + recall);
}

} // namespace rlfseg
