// SPDX-License-Identifier: Apache-2.0
//
// Synthetic text-referred shapes benchmark. Each scene holds 2-4 flat-coloured
// shapes on a flat background; the prompt names the target by size, colour and
// kind. Labels come in two flavours: the exact rasterization and a polygonized
// version that mimics coarse polygon annotations.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "rlfseg/codec.hpp"
#include "rlfseg/geometry.hpp"
#include "rlfseg/prompt.hpp"

namespace rlfseg {

enum class ShapeKind { circle, square, triangle };
enum class ShapeSize { small, large };
enum class Difficulty { easy, hard };

inline constexpr std::array<const char*, 3> kKindNames{"circle", "square", "triangle"};
inline constexpr std::array<const char*, 2> kSizeNames{"small", "large"};

struct PaletteColor {
    const char* name;
    float r, g, b;
};

inline constexpr std::array<PaletteColor, 8> kPalette{{
    {"red", 0.90f, 0.10f, 0.10f},
    {"green", 0.10f, 0.75f, 0.20f},
    {"blue", 0.15f, 0.30f, 0.95f},
    {"yellow", 0.95f, 0.90f, 0.10f},
    {"cyan", 0.10f, 0.85f, 0.90f},
    {"magenta", 0.90f, 0.20f, 0.85f},
    {"orange", 1.00f, 0.55f, 0.05f},
    {"purple", 0.50f, 0.20f, 0.70f},
}};

inline const char* to_string(Difficulty d) { return d == Difficulty::easy ? "easy" : "hard"; }

/// The closed prompt grammar vocabulary, in a fixed order.
inline Vocabulary grammar_vocabulary() {
    std::vector<std::string> words{"the"};
    for (auto s : kSizeNames) words.emplace_back(s);
    for (const auto& c : kPalette) words.emplace_back(c.name);
    for (auto k : kKindNames) words.emplace_back(k);
    words.emplace_back("left");
    words.emplace_back("of");
    return Vocabulary(words);
}

struct Shape {
    ShapeKind kind = ShapeKind::circle;
    int color = 0;
    ShapeSize size = ShapeSize::small;
    double cx = 0, cy = 0;
    double radius = 0; ///< equal-area disk radius
    double angle = 0;  ///< rotation in radians (squares, triangles)

    /// Radius of the smallest centred disk that contains the shape.
    double bounding_radius() const {
        switch (kind) {
        case ShapeKind::circle: return radius;
        case ShapeKind::square: return radius * std::sqrt(std::numbers::pi) / std::sqrt(2.0);
        case ShapeKind::triangle: return radius * std::sqrt(4 * std::numbers::pi / (3 * std::sqrt(3.0)));
        }
        return radius;
    }

    bool contains(double px, double py) const {
        const double dx = px - cx, dy = py - cy;
        switch (kind) {
        case ShapeKind::circle: return dx * dx + dy * dy <= radius * radius;
        case ShapeKind::square: {
            const double half = radius * std::sqrt(std::numbers::pi) / 2.0;
            const double c = std::cos(angle), s = std::sin(angle);
            const double u = c * dx + s * dy, v = -s * dx + c * dy;
            return std::abs(u) <= half && std::abs(v) <= half;
        }
        case ShapeKind::triangle: {
            const double r = bounding_radius();
            std::array<geom::Point, 3> v;
            for (int k = 0; k < 3; ++k) {
                const double a = angle - std::numbers::pi / 2 + k * 2 * std::numbers::pi / 3;
                v[static_cast<std::size_t>(k)] = {cx + r * std::cos(a), cy + r * std::sin(a)};
            }
            auto side = [&](const geom::Point& a, const geom::Point& b) {
                return (b.x - a.x) * (py - a.y) - (b.y - a.y) * (px - a.x);
            };
            const double s0 = side(v[0], v[1]), s1 = side(v[1], v[2]), s2 = side(v[2], v[0]);
            return (s0 >= 0 && s1 >= 0 && s2 >= 0) || (s0 <= 0 && s1 <= 0 && s2 <= 0);
        }
        }
        return false;
    }

    MaskImage rasterize(int h, int w) const {
        MaskImage m(h, w);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) m.at(y, x) = contains(x + 0.5, y + 0.5) ? 1.f : 0.f;
        return m;
    }

    int shared_attributes(const Shape& o) const {
        return (kind == o.kind) + (color == o.color) + (size == o.size);
    }

    std::string phrase() const {
        return std::string(kSizeNames[static_cast<std::size_t>(size)]) + " " + kPalette[static_cast<std::size_t>(color)].name +
               " " + kKindNames[static_cast<std::size_t>(kind)];
    }

    friend bool operator==(const Shape&, const Shape&) = default;
};

struct Rect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0; ///< half-open
    bool empty() const { return x1 <= x0 || y1 <= y0; }
    friend bool operator==(const Rect&, const Rect&) = default;
};

struct SceneSpec {
    std::vector<Shape> shapes;
    int target_index = 0;
    std::uint64_t seed = 0;
    Difficulty difficulty = Difficulty::easy;
    std::array<float, 3> background{0, 0, 0};
    Rect bright_region; ///< near-white patch (hard scenes)
    float bright_level = 0;
    int relation_index = -1; ///< shape referenced by a "left of" clause, or -1
    std::uint64_t reseeded_from = 0; ///< retry seed actually used when placement failed, else 0

    const Shape& target() const { return shapes.at(static_cast<std::size_t>(target_index)); }
    friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

struct SampleRecord {
    std::string id;
    std::string split;
    SceneSpec scene;
    std::string prompt;
    RgbImage image;
    MaskImage mask_clean;
    MaskImage mask_poly;
    std::optional<MaskImage> mask_refined;
    friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct SynthConfig {
    int height = 64;
    int width = 64;
    double small_radius_min = 4.5, small_radius_max = 6.0;
    double large_radius_min = 9.0, large_radius_max = 12.0;
    double max_overlap = 0.20;
    double poly_tolerance = 3.0;
    int max_attempts = 200;
};

// ---------------------------------------------------------------------------

struct PolygonizeResult {
    MaskImage mask;
    std::size_t vertices_before = 0;
    std::size_t vertices_after = 0;
    bool degenerate = false;
};

/// Traces the crack contour, simplifies each loop by Douglas-Peucker and refills.
/// Loops that collapse below three vertices leave the mask unchanged.
inline PolygonizeResult polygonize_label_detailed(const MaskImage& clean, double tolerance_px) {
    require(tolerance_px >= 0, "polygonize_label: negative tolerance");
    require(clean.foreground_count() > 0, "polygonize_label: empty mask");
    const auto loops = geom::trace_contours(clean);
    PolygonizeResult r;
    r.vertices_before = geom::vertex_count(loops);
    std::vector<geom::Polygon> simplified;
    for (const auto& l : loops) {
        auto s = geom::simplify_closed(l, tolerance_px);
        if (s.size() < 3) {
            r.degenerate = true;
            r.mask = clean;
            r.vertices_after = r.vertices_before;
            return r;
        }
        simplified.push_back(std::move(s));
    }
    r.vertices_after = geom::vertex_count(simplified);
    r.mask = geom::rasterize(simplified, clean.height(), clean.width());
    return r;
}

inline MaskImage polygonize_label(const MaskImage& clean, double tolerance_px = 3.0) {
    return polygonize_label_detailed(clean, tolerance_px).mask;
}

// ---------------------------------------------------------------------------

namespace detail {

inline float quantize(double v) { return static_cast<float>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.f; }

inline std::size_t overlap_pixels(const MaskImage& a, const MaskImage& b) {
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) n += a.data[i] > 0.5f && b.data[i] > 0.5f;
    return n;
}

inline Shape random_shape(std::mt19937_64& rng, ShapeKind kind, int color, ShapeSize size, const SynthConfig& cfg) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Shape s;
    s.kind = kind;
    s.color = color;
    s.size = size;
    s.radius = size == ShapeSize::small ? cfg.small_radius_min + u(rng) * (cfg.small_radius_max - cfg.small_radius_min)
                                        : cfg.large_radius_min + u(rng) * (cfg.large_radius_max - cfg.large_radius_min);
    s.angle = kind == ShapeKind::square ? u(rng) * std::numbers::pi / 2
            : kind == ShapeKind::triangle ? u(rng) * 2 * std::numbers::pi / 3
                                          : 0.0;
    const double br = s.bounding_radius() + 1.0;
    s.cx = br + u(rng) * (cfg.width - 2 * br);
    s.cy = br + u(rng) * (cfg.height - 2 * br);
    return s;
}

/// Attribute triple differing from `target` in exactly (3 - shared) positions.
inline std::tuple<ShapeKind, int, ShapeSize> perturb_attributes(std::mt19937_64& rng, const Shape& target, int shared) {
    std::array<bool, 3> keep{false, false, false};
    std::vector<int> idx{0, 1, 2};
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int k = 0; k < shared; ++k) keep[static_cast<std::size_t>(idx[static_cast<std::size_t>(k)])] = true;
    ShapeKind kind = target.kind;
    int color = target.color;
    ShapeSize size = target.size;
    if (!keep[0]) {
        std::uniform_int_distribution<int> d(1, 2);
        kind = static_cast<ShapeKind>((static_cast<int>(target.kind) + d(rng)) % 3);
    }
    if (!keep[1]) {
        std::uniform_int_distribution<int> d(1, static_cast<int>(kPalette.size()) - 1);
        color = (target.color + d(rng)) % static_cast<int>(kPalette.size());
    }
    if (!keep[2]) size = target.size == ShapeSize::small ? ShapeSize::large : ShapeSize::small;
    return {kind, color, size};
}

inline std::optional<SceneSpec> try_scene(std::uint64_t seed, Difficulty difficulty, const SynthConfig& cfg) {
    std::mt19937_64 rng(seed * 0xD1B54A32D192ED03ull + 0x632BE59BD9B4E019ull);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    SceneSpec sc;
    sc.seed = seed;
    sc.difficulty = difficulty;

    // background: dark-to-mid gray with a slight tint; pure black a quarter of the time
    if (u(rng) < 0.25) {
        sc.background = {0.f, 0.f, 0.f};
    } else {
        const double base = 0.05 + 0.30 * u(rng);
        for (auto& c : sc.background) c = quantize(base + 0.06 * (u(rng) - 0.5));
    }
    if (difficulty == Difficulty::hard) {
        const int bw = 18 + static_cast<int>(u(rng) * 18), bh = 18 + static_cast<int>(u(rng) * 18);
        const int x0 = static_cast<int>(u(rng) * (cfg.width - bw)), y0 = static_cast<int>(u(rng) * (cfg.height - bh));
        sc.bright_region = {x0, y0, x0 + bw, y0 + bh};
        sc.bright_level = quantize(0.90 + 0.10 * u(rng));
    }

    std::uniform_int_distribution<int> nshapes(2, 4), pick_kind(0, 2), pick_color(0, 7), pick_size(0, 1);
    const int n = nshapes(rng);
    const Shape target = random_shape(rng, static_cast<ShapeKind>(pick_kind(rng)), pick_color(rng),
                                      static_cast<ShapeSize>(pick_size(rng)), cfg);
    std::vector<Shape> distractors;
    for (int k = 0; k < n - 1; ++k) {
        int shared;
        if (difficulty == Difficulty::hard && k == 0)
            shared = 2;
        else
            shared = std::uniform_int_distribution<int>(0, 1)(rng);
        auto [kind, color, size] = perturb_attributes(rng, target, shared);
        distractors.push_back(random_shape(rng, kind, color, size, cfg));
    }

    // placement: re-draw centres until overlaps are acceptable
    std::vector<Shape> all = distractors;
    all.push_back(target);
    for (int attempt = 0; attempt < cfg.max_attempts; ++attempt) {
        std::vector<MaskImage> masks;
        for (auto& s : all) masks.push_back(s.rasterize(cfg.height, cfg.width));
        bool ok = true;
        for (std::size_t i = 0; i < all.size() && ok; ++i)
            for (std::size_t j = i + 1; j < all.size() && ok; ++j) {
                const double dist = std::hypot(all[i].cx - all[j].cx, all[i].cy - all[j].cy);
                if (all[i].color == all[j].color) {
                    ok = dist >= all[i].bounding_radius() + all[j].bounding_radius() + 4.0;
                } else {
                    const double smaller =
                        static_cast<double>(std::min(masks[i].foreground_count(), masks[j].foreground_count()));
                    ok = static_cast<double>(overlap_pixels(masks[i], masks[j])) <= cfg.max_overlap * smaller;
                }
            }
        if (ok) {
            sc.shapes = all;
            sc.target_index = static_cast<int>(all.size()) - 1;
            break;
        }
        for (auto& s : all) {
            const double br = s.bounding_radius() + 1.0;
            s.cx = br + u(rng) * (cfg.width - 2 * br);
            s.cy = br + u(rng) * (cfg.height - 2 * br);
        }
    }
    if (sc.shapes.empty()) return std::nullopt;

    if (difficulty == Difficulty::hard && u(rng) < 0.5) {
        // "left of" clause: a reference to the right whose (colour, kind) pair is unique
        for (int i = 0; i < sc.target_index; ++i) {
            const Shape& r = sc.shapes[static_cast<std::size_t>(i)];
            int same_pair = 0;
            for (const auto& s : sc.shapes) same_pair += s.color == r.color && s.kind == r.kind;
            if (same_pair == 1 && r.cx > sc.target().cx + 4.0) {
                sc.relation_index = i;
                break;
            }
        }
    }
    return sc;
}

} // namespace detail

inline std::string prompt_for(const SceneSpec& sc) {
    std::string p = "the " + sc.target().phrase();
    if (sc.relation_index >= 0) {
        const Shape& r = sc.shapes.at(static_cast<std::size_t>(sc.relation_index));
        p += std::string(" left of the ") + kPalette[static_cast<std::size_t>(r.color)].name + " " +
             kKindNames[static_cast<std::size_t>(r.kind)];
    }
    return p;
}

inline RgbImage render_scene(const SceneSpec& sc, const SynthConfig& cfg) {
    RgbImage img(cfg.height, cfg.width);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < cfg.height; ++y)
            for (int x = 0; x < cfg.width; ++x) img.at(c, y, x) = sc.background[static_cast<std::size_t>(c)];
    const Rect& b = sc.bright_region;
    if (!b.empty())
        for (int c = 0; c < 3; ++c)
            for (int y = b.y0; y < b.y1; ++y)
                for (int x = b.x0; x < b.x1; ++x) img.at(c, y, x) = sc.bright_level;
    for (const auto& s : sc.shapes) { // target is last, hence fully visible
        const auto& col = kPalette[static_cast<std::size_t>(s.color)];
        const std::array<float, 3> rgb{detail::quantize(col.r), detail::quantize(col.g), detail::quantize(col.b)};
        for (int y = 0; y < cfg.height; ++y)
            for (int x = 0; x < cfg.width; ++x)
                if (s.contains(x + 0.5, y + 0.5))
                    for (int c = 0; c < 3; ++c) img.at(c, y, x) = rgb[static_cast<std::size_t>(c)];
    }
    return img;
}

inline Difficulty difficulty_for_seed(std::uint64_t seed, double hard_fraction) {
    std::mt19937_64 rng(seed ^ 0x5851F42D4C957F2Dull);
    return std::uniform_real_distribution<double>(0.0, 1.0)(rng) < hard_fraction ? Difficulty::hard : Difficulty::easy;
}

namespace detail {

// splitmix64 finalizer; keeps retry streams away from neighbouring scene seeds
inline std::uint64_t retry_seed(std::uint64_t seed, std::uint64_t retry) {
    std::uint64_t z = seed + retry * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace detail

/// Deterministic scene from a seed. If placement fails, derived retry seeds are tried
/// and the one that succeeded is recorded in reseeded_from.
inline SampleRecord generate_scene(std::uint64_t seed, Difficulty difficulty, const SynthConfig& cfg = {}) {
    std::optional<SceneSpec> sc = detail::try_scene(seed, difficulty, cfg);
    std::uint64_t used = seed;
    for (std::uint64_t retry = 1; !sc; ++retry) {
        used = detail::retry_seed(seed, retry);
        sc = detail::try_scene(used, difficulty, cfg);
    }
    sc->seed = seed;
    if (used != seed) sc->reseeded_from = used;

    SampleRecord r;
    r.id = "scene_" + std::to_string(seed);
    r.scene = *sc;
    r.prompt = prompt_for(*sc);
    r.image = render_scene(*sc, cfg);
    r.mask_clean = sc->target().rasterize(cfg.height, cfg.width);
    r.mask_poly = polygonize_label(r.mask_clean, cfg.poly_tolerance);
    return r;
}

/// Invariant violations of a generated record; empty when the record is valid.
inline std::vector<std::string> audit_scene(const SampleRecord& r, const SynthConfig& cfg = {}) {
    std::vector<std::string> v;
    const SceneSpec& sc = r.scene;
    if (sc.shapes.size() < 2 || sc.shapes.size() > 4) v.push_back("shape count out of range");
    const Shape& t = sc.target();
    int matches = 0, two_shared = 0;
    for (std::size_t i = 0; i < sc.shapes.size(); ++i) {
        const Shape& s = sc.shapes[i];
        if (s.shared_attributes(t) == 3) ++matches;
        if (static_cast<int>(i) != sc.target_index && s.shared_attributes(t) == 2) ++two_shared;
        const double br = s.bounding_radius();
        if (s.cx - br < 0 || s.cy - br < 0 || s.cx + br > cfg.width || s.cy + br > cfg.height)
            v.push_back("shape " + std::to_string(i) + " leaves the frame");
    }
    if (matches != 1) v.push_back("prompt does not identify a unique shape");
    if (sc.difficulty == Difficulty::easy && two_shared > 0) v.push_back("easy scene has a two-attribute distractor");
    if (sc.difficulty == Difficulty::hard && two_shared == 0) v.push_back("hard scene lacks a two-attribute distractor");
    for (std::size_t i = 0; i < sc.shapes.size(); ++i)
        for (std::size_t j = i + 1; j < sc.shapes.size(); ++j) {
            const auto a = sc.shapes[i].rasterize(cfg.height, cfg.width), b = sc.shapes[j].rasterize(cfg.height, cfg.width);
            const double smaller = static_cast<double>(std::min(a.foreground_count(), b.foreground_count()));
            if (static_cast<double>(detail::overlap_pixels(a, b)) > cfg.max_overlap * smaller)
                v.push_back("shapes " + std::to_string(i) + "," + std::to_string(j) + " overlap too much");
        }
    if (!(r.mask_clean == t.rasterize(cfg.height, cfg.width))) v.push_back("clean mask is not the target rasterization");
    if (r.prompt != prompt_for(sc)) v.push_back("prompt does not match scene");
    return v;
}

} // namespace rlfseg
