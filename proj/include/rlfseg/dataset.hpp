// SPDX-License-Identifier: Apache-2.0
//
// On-disk layout:
//
//   <root>/images/<id>.ppm
//   <root>/masks_clean/<id>.pgm
//   <root>/masks_poly/<id>.pgm
//   <root>/masks_refined/<id>.refined.pgm   (written by the refinement pass)
//   <root>/index.jsonl                      (one JSON object per record)
#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlfseg/image_io.hpp"
#include "rlfseg/synth.hpp"

namespace rlfseg {

namespace fs = std::filesystem;

struct DatasetSpec {
    std::uint64_t seed = 0;
    int train = 5000;
    int val = 500;
    int test = 500;
    double hard_fraction = 0.3;
    SynthConfig synth;

    /// Splits a total record count 10:1:1 into train/val/test.
    static DatasetSpec with_total(int total, std::uint64_t seed = 0) {
        require(total >= 0, "dataset size must be non-negative");
        DatasetSpec s;
        s.seed = seed;
        s.val = static_cast<int>(std::lround(total / 12.0));
        s.test = s.val;
        s.train = total - s.val - s.test;
        return s;
    }
    int total() const { return train + val + test; }
};

inline constexpr std::uint64_t kSplitStride = 100'000'000ull;

/// Scene seed for record i of a split. Split ranges never intersect.
inline std::uint64_t scene_seed(std::uint64_t base, int split_index, int i) {
    return base * 3 * kSplitStride + static_cast<std::uint64_t>(split_index) * kSplitStride + static_cast<std::uint64_t>(i);
}

inline std::vector<SampleRecord> generate_dataset(const DatasetSpec& spec) {
    std::vector<SampleRecord> out;
    out.reserve(static_cast<std::size_t>(spec.total()));
    const std::array<std::pair<const char*, int>, 3> splits{{{"train", spec.train}, {"val", spec.val}, {"test", spec.test}}};
    for (int s = 0; s < 3; ++s) {
        const auto [name, n] = splits[static_cast<std::size_t>(s)];
        for (int i = 0; i < n; ++i) {
            const std::uint64_t seed = scene_seed(spec.seed, s, i);
            SampleRecord r = generate_scene(seed, difficulty_for_seed(seed, spec.hard_fraction), spec.synth);
            char buf[32];
            std::snprintf(buf, sizeof buf, "%s_%06d", name, i);
            r.id = buf;
            r.split = name;
            out.push_back(std::move(r));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON

inline nlohmann::json scene_to_json(const SceneSpec& sc) {
    nlohmann::json shapes = nlohmann::json::array();
    for (const auto& s : sc.shapes)
        shapes.push_back({{"kind", kKindNames[static_cast<std::size_t>(s.kind)]},
                          {"color", kPalette[static_cast<std::size_t>(s.color)].name},
                          {"size", kSizeNames[static_cast<std::size_t>(s.size)]},
                          {"cx", s.cx},
                          {"cy", s.cy},
                          {"radius", s.radius},
                          {"angle", s.angle}});
    return {{"shapes", shapes},
            {"target_index", sc.target_index},
            {"seed", sc.seed},
            {"difficulty", to_string(sc.difficulty)},
            {"background", sc.background},
            {"bright_region", {sc.bright_region.x0, sc.bright_region.y0, sc.bright_region.x1, sc.bright_region.y1}},
            {"bright_level", sc.bright_level},
            {"relation_index", sc.relation_index},
            {"reseeded_from", sc.reseeded_from}};
}

namespace detail {

template <std::size_t N>
int lookup(const std::array<const char*, N>& names, const std::string& v) {
    for (std::size_t i = 0; i < N; ++i)
        if (v == names[i]) return static_cast<int>(i);
    throw DataError("unknown attribute value '" + v + "'");
}

inline int color_index(const std::string& name) {
    for (std::size_t i = 0; i < kPalette.size(); ++i)
        if (name == kPalette[i].name) return static_cast<int>(i);
    throw DataError("unknown colour '" + name + "'");
}

} // namespace detail

inline SceneSpec scene_from_json(const nlohmann::json& j) {
    SceneSpec sc;
    for (const auto& s : j.at("shapes")) {
        Shape sh;
        sh.kind = static_cast<ShapeKind>(detail::lookup(kKindNames, s.at("kind").get<std::string>()));
        sh.color = detail::color_index(s.at("color").get<std::string>());
        sh.size = static_cast<ShapeSize>(detail::lookup(kSizeNames, s.at("size").get<std::string>()));
        sh.cx = s.at("cx").get<double>();
        sh.cy = s.at("cy").get<double>();
        sh.radius = s.at("radius").get<double>();
        sh.angle = s.at("angle").get<double>();
        sc.shapes.push_back(sh);
    }
    sc.target_index = j.at("target_index").get<int>();
    sc.seed = j.at("seed").get<std::uint64_t>();
    sc.difficulty = j.at("difficulty").get<std::string>() == "hard" ? Difficulty::hard : Difficulty::easy;
    sc.background = j.at("background").get<std::array<float, 3>>();
    const auto br = j.at("bright_region").get<std::array<int, 4>>();
    sc.bright_region = {br[0], br[1], br[2], br[3]};
    sc.bright_level = j.at("bright_level").get<float>();
    sc.relation_index = j.at("relation_index").get<int>();
    sc.reseeded_from = j.at("reseeded_from").get<std::uint64_t>();
    return sc;
}

struct RecordPaths {
    fs::path image, mask_clean, mask_poly, mask_refined;
};

inline RecordPaths record_paths(const fs::path& root, const std::string& id) {
    return {root / "images" / (id + ".ppm"), root / "masks_clean" / (id + ".pgm"), root / "masks_poly" / (id + ".pgm"),
            root / "masks_refined" / (id + ".refined.pgm")};
}

inline void write_dataset(const std::vector<SampleRecord>& records, const fs::path& root) {
    for (auto d : {"images", "masks_clean", "masks_poly", "masks_refined"}) fs::create_directories(root / d);
    std::string index;
    for (const auto& r : records) {
        const auto p = record_paths(root, r.id);
        io::write_ppm(p.image, r.image);
        io::write_pgm(p.mask_clean, r.mask_clean);
        io::write_pgm(p.mask_poly, r.mask_poly);
        if (r.mask_refined) io::write_pgm(p.mask_refined, *r.mask_refined);
        const nlohmann::json j{{"id", r.id},
                               {"split", r.split},
                               {"prompt", r.prompt},
                               {"image", fs::relative(p.image, root).string()},
                               {"mask_clean", fs::relative(p.mask_clean, root).string()},
                               {"mask_poly", fs::relative(p.mask_poly, root).string()},
                               {"mask_refined", fs::relative(p.mask_refined, root).string()},
                               {"scene", scene_to_json(r.scene)}};
        index += j.dump() + "\n";
    }
    io::write_atomic(root / "index.jsonl", index);
}

struct RecordError {
    std::string id;
    std::string message;
};

struct DatasetReadResult {
    std::vector<SampleRecord> records;
    std::vector<RecordError> errors;
};

/// Reads every index entry. In tolerant mode broken records are reported and skipped;
/// otherwise the first failure throws DataError. Refined masks are optional.
inline DatasetReadResult read_dataset(const fs::path& root, bool tolerant = false, const std::string& split = "") {
    std::ifstream in(root / "index.jsonl");
    if (!in) throw DataError("cannot open dataset index " + (root / "index.jsonl").string());
    DatasetReadResult out;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string id = "line " + std::to_string(lineno);
        try {
            const auto j = nlohmann::json::parse(line);
            id = j.at("id").get<std::string>();
            const std::string sp = j.at("split").get<std::string>();
            if (!split.empty() && sp != split) continue;
            SampleRecord r;
            r.id = id;
            r.split = sp;
            r.prompt = j.at("prompt").get<std::string>();
            r.scene = scene_from_json(j.at("scene"));
            r.image = io::read_ppm(root / j.at("image").get<std::string>());
            r.mask_clean = io::read_pgm(root / j.at("mask_clean").get<std::string>());
            r.mask_poly = io::read_pgm(root / j.at("mask_poly").get<std::string>());
            const fs::path refined = root / j.value("mask_refined", "masks_refined/" + id + ".refined.pgm");
            if (fs::exists(refined)) r.mask_refined = io::read_pgm(refined);
            out.records.push_back(std::move(r));
        } catch (const std::exception& e) {
            if (!tolerant) throw DataError(root.string() + ": record " + id + ": " + e.what());
            out.errors.push_back({id, e.what()});
        }
    }
    return out;
}

} // namespace rlfseg
