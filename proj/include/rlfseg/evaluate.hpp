// SPDX-License-Identifier: Apache-2.0
//
// Runs a sampler over dataset records and scores the decoded masks against the
// clean ground truth: best-threshold mIoU, pooled AP and boundary F.
#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "rlfseg/codec.hpp"
#include "rlfseg/image_io.hpp"
#include "rlfseg/metrics.hpp"
#include "rlfseg/prompt.hpp"
#include "rlfseg/samplers.hpp"
#include "rlfseg/synth.hpp"

namespace rlfseg {

enum class SamplerKind { one_step, aos, euler };

struct SamplerSpec {
    SamplerKind kind = SamplerKind::one_step;
    int steps = 1; ///< Euler only
    AosConfig aos;

    std::string name() const {
        switch (kind) {
        case SamplerKind::one_step: return "one_step";
        case SamplerKind::aos: return "aos";
        case SamplerKind::euler: return "euler_" + std::to_string(steps);
        }
        return "?";
    }

    /// "one_step", "aos", "euler_K" or "euler" with K given separately.
    static SamplerSpec parse(const std::string& s, int default_steps = 1) {
        SamplerSpec out;
        if (s == "one_step") return out;
        if (s == "aos") {
            out.kind = SamplerKind::aos;
            return out;
        }
        out.kind = SamplerKind::euler;
        out.steps = default_steps;
        if (s == "euler" || s == "euler_k") return out;
        if (s.starts_with("euler_")) {
            try {
                std::size_t used = 0;
                out.steps = std::stoi(s.substr(6), &used);
                if (used == s.size() - 6 && out.steps >= 1) return out;
            } catch (const std::exception&) {
            }
        }
        throw InvalidArgument("unknown sampler '" + s + "' (expected one_step, aos or euler_K)");
    }
};

struct EvalRow {
    std::string id;
    Difficulty difficulty = Difficulty::easy;
    double iou = 0;        ///< at the report's best threshold
    double iou_image_best = 0; ///< at this sample's own best threshold (auxiliary)
    double boundary_f = 0; ///< at the report's best threshold
    double gamma = 0;      ///< AOS only
    std::size_t stable = 0; ///< AOS only: size of the stable region
    std::uint64_t pred_hash = 0; ///< FNV-1a of the grayscale prediction
};

struct EvalReport {
    std::string sampler;
    double miou = 0;
    double best_threshold = 0;
    double ap = 0;
    double boundary_f = 0;
    std::vector<EvalRow> rows;
    std::vector<PrPoint> pr_curve; ///< pooled pixels, descending threshold
    std::vector<MaskImage> predictions; ///< grayscale, one per record
};

struct EvalOptions {
    int batch_size = 16;
    std::vector<double> thresholds = default_threshold_grid();
    int boundary_radius = 2;
};

namespace detail {

inline std::uint64_t fnv1a(const void* data, std::size_t n) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) h = (h ^ p[i]) * 0x100000001b3ull;
    return h;
}

} // namespace detail

/// Scores precomputed grayscale predictions against the clean masks of `records`.
inline EvalReport score_predictions(const std::string& sampler, const std::vector<SampleRecord>& records,
                                    std::vector<MaskImage> preds, const EvalOptions& opt = {}) {
    require(!records.empty(), "evaluate: no records");
    require(records.size() == preds.size(), "evaluate: one prediction per record required");
    std::vector<MaskImage> truth;
    for (const auto& r : records) truth.push_back(r.mask_clean);
    EvalReport rep;
    rep.sampler = sampler;
    const ThresholdSweep sweep = best_threshold_miou(preds, truth, opt.thresholds);
    rep.miou = sweep.miou;
    rep.best_threshold = sweep.best_threshold;
    ApResult ap = average_precision(preds, truth);
    rep.ap = ap.ap;
    rep.pr_curve = std::move(ap.curve);
    double bf = 0;
    for (std::size_t i = 0; i < records.size(); ++i) {
        EvalRow row;
        row.id = records[i].id;
        row.difficulty = records[i].scene.difficulty;
        row.iou = sweep.per_sample_at_best[i];
        row.iou_image_best = sweep.per_sample_best[i];
        row.boundary_f = boundary_f_score(binarize(preds[i], rep.best_threshold), truth[i], opt.boundary_radius);
        row.pred_hash = detail::fnv1a(preds[i].data.data(), preds[i].data.size() * sizeof(float));
        bf += row.boundary_f;
        rep.rows.push_back(std::move(row));
    }
    rep.boundary_f = bf / static_cast<double>(records.size());
    rep.predictions = std::move(preds);
    return rep;
}

/// Samples a mask for every record and scores it.
inline EvalReport evaluate(const FlowNet& net, const nn::ParamStore<float>& p, const std::vector<SampleRecord>& records,
                           const Vocabulary& vocab, const SamplerSpec& sampler, const EvalOptions& opt = {}) {
    require(opt.batch_size >= 1, "evaluate: batch size must be >= 1");
    const LatentCodec codec;
    const auto shape = codec.config().latent_shape();
    const std::size_t per = Tensor<float>::count(shape);
    const LatentGrid& zb = codec.black_reference(shape);
    std::vector<MaskImage> preds;
    std::vector<double> gammas;
    std::vector<std::size_t> stable;
    for (std::size_t start = 0; start < records.size(); start += static_cast<std::size_t>(opt.batch_size)) {
        const std::size_t b = std::min(records.size() - start, static_cast<std::size_t>(opt.batch_size));
        std::vector<int> bshape{static_cast<int>(b)};
        bshape.insert(bshape.end(), shape.begin(), shape.end());
        Tensor<float> z1(bshape);
        PromptBatch prompts;
        for (std::size_t n = 0; n < b; ++n) {
            const auto& r = records[start + n];
            const LatentGrid z = codec.encode_image(r.image);
            std::copy(z.data.begin(), z.data.end(), z1.data() + n * per);
            prompts.push_back(tokenize_prompt(r.prompt, vocab).ids);
        }
        Tensor<float> z0;
        switch (sampler.kind) {
        case SamplerKind::one_step: z0 = one_step_sample(net, p, z1, prompts); break;
        case SamplerKind::euler: z0 = multi_step_euler(net, p, z1, prompts, sampler.steps); break;
        case SamplerKind::aos: {
            auto r = aos_sample(net, p, z1, prompts, zb, sampler.aos);
            z0 = std::move(r.z0);
            for (const auto& s : r.regions) {
                gammas.push_back(s.gamma);
                stable.push_back(s.indices.size());
            }
            break;
        }
        }
        for (std::size_t n = 0; n < b; ++n) {
            LatentGrid g{Tensor<float>(shape), LatentSpace::mask};
            std::copy(z0.data() + n * per, z0.data() + (n + 1) * per, g.data.data());
            preds.push_back(codec.decode_to_mask(g, -1.f));
        }
    }
    EvalReport rep = score_predictions(sampler.name(), records, std::move(preds), opt);
    for (std::size_t i = 0; i < gammas.size(); ++i) {
        rep.rows[i].gamma = gammas[i];
        rep.rows[i].stable = stable[i];
    }
    return rep;
}

/// Per-sample CSV; the gamma and stable columns appear only for AOS reports.
inline void write_eval_csv(const std::filesystem::path& path, const EvalReport& rep) {
    const bool aos = rep.sampler == "aos";
    std::string out = aos ? "id,difficulty,iou,boundary_f,gamma,stable_count,pred_hash,iou_image_best\n"
                          : "id,difficulty,iou,boundary_f,pred_hash,iou_image_best\n";
    char buf[160];
    for (const auto& r : rep.rows) {
        out += r.id + "," + to_string(r.difficulty);
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g", r.iou, r.boundary_f);
        out += buf;
        if (aos) {
            std::snprintf(buf, sizeof buf, ",%.9g,%zu", r.gamma, r.stable);
            out += buf;
        }
        std::snprintf(buf, sizeof buf, ",%016llx,%.9g\n", static_cast<unsigned long long>(r.pred_hash),
                      r.iou_image_best);
        out += buf;
    }
    io::write_atomic(path, out);
}

/// PR curve as threshold,precision,recall. Long curves are thinned to about
/// max_points evenly spaced points; the first and last points are always kept.
inline void write_pr_csv(const std::filesystem::path& path, const std::vector<PrPoint>& curve,
                         std::size_t max_points = 2000) {
    std::string out = "threshold,precision,recall\n";
    const std::size_t stride = std::max<std::size_t>(1, (curve.size() + max_points - 1) / max_points);
    char buf[96];
    for (std::size_t i = 0; i < curve.size(); ++i) {
        if (i % stride != 0 && i + 1 != curve.size()) continue;
        std::snprintf(buf, sizeof buf, "%.9g,%.9g,%.9g\n", curve[i].threshold, curve[i].precision, curve[i].recall);
        out += buf;
    }
    io::write_atomic(path, out);
}

/// Records restricted to one difficulty ("all", "easy" or "hard").
inline std::vector<SampleRecord> filter_difficulty(const std::vector<SampleRecord>& records, const std::string& which) {
    if (which == "all") return records;
    require(which == "easy" || which == "hard", "difficulty filter must be all, easy or hard (got '" + which + "')");
    std::vector<SampleRecord> out;
    for (const auto& r : records)
        if (to_string(r.scene.difficulty) == which) out.push_back(r);
    return out;
}

} // namespace rlfseg
