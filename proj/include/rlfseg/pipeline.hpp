// SPDX-License-Identifier: Apache-2.0
//
// The five commands behind the rlfseg tool. Each takes the merged run config
// and a prepared run directory, and writes its outputs there (the dataset
// commands also write into the data directory).
#pragma once

#include <chrono>
#include <cmath>
#include <ctime>
#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rlfseg/config.hpp"
#include "rlfseg/dataset.hpp"
#include "rlfseg/evaluate.hpp"
#include "rlfseg/plot.hpp"
#include "rlfseg/refine.hpp"
#include "rlfseg/training.hpp"

namespace rlfseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Config views

inline FlowNetConfig net_config(const RunConfig& c, int vocab_size) {
    FlowNetConfig n;
    const CodecConfig codec;
    n.latent_channels = codec.latent_channels();
    n.latent_height = codec.latent_height();
    n.latent_width = codec.latent_width();
    n.ch1 = static_cast<int>(c.integer("model_ch1"));
    n.ch2 = static_cast<int>(c.integer("model_ch2"));
    n.ch3 = static_cast<int>(c.integer("model_ch3"));
    n.groups = static_cast<int>(c.integer("model_groups"));
    n.time_dim = static_cast<int>(c.integer("model_time_dim"));
    n.cond_dim = static_cast<int>(c.integer("model_cond_dim"));
    n.emb_dim = static_cast<int>(c.integer("model_emb_dim"));
    n.vocab_size = vocab_size;
    for (int w : {n.ch1, n.ch2, n.ch3, n.ch1 + n.ch2, n.ch2 + n.ch3})
        require(n.groups >= 1 && w >= 1 && w % n.groups == 0, "model widths must be positive multiples of model_groups");
    require(n.time_dim >= 2 && n.cond_dim >= 1 && n.emb_dim >= 1, "model embedding sizes must be positive");
    return n;
}

inline TrainConfig train_config(const RunConfig& c) {
    TrainConfig t;
    t.opt.lr = c.real("lr");
    t.opt.clip_norm = c.real("clip_norm");
    t.batch_size = static_cast<int>(c.integer("batch_size"));
    t.steps = c.integer("steps");
    t.seed = static_cast<std::uint64_t>(c.integer("seed"));
    t.rds = c.flag("rds");
    t.checkpoint_every = c.integer("checkpoint_every");
    t.validate();
    return t;
}

inline RefineConfig refine_config(const RunConfig& c) {
    RefineConfig r;
    r.points = static_cast<int>(c.integer("anchor_points"));
    r.tau = c.real("tau");
    r.max_iterations = static_cast<int>(c.integer("max_iterations"));
    r.seed = static_cast<std::uint64_t>(c.integer("seed"));
    require(r.points >= 1, "anchor_points must be >= 1");
    require(r.tau > 0 && r.tau <= 1, "tau must lie in (0, 1]");
    require(r.max_iterations >= 1, "max_iterations must be >= 1");
    return r;
}

inline AosConfig aos_config(const RunConfig& c) {
    AosConfig a;
    a.epsilon = c.real("aos_epsilon");
    a.gamma_cap = c.real("aos_gamma_cap");
    a.validate();
    return a;
}

inline EvalOptions eval_options(const RunConfig& c) {
    EvalOptions o;
    o.batch_size = static_cast<int>(c.integer("eval_batch"));
    o.boundary_radius = static_cast<int>(c.integer("boundary_radius"));
    require(o.batch_size >= 1, "eval_batch must be >= 1");
    return o;
}

/// Sampler list for eval: one_step, aos, euler_K, or euler_k (one per configured K).
inline std::vector<SamplerSpec> sampler_list(const RunConfig& c) {
    const std::string s = c.str("sampler");
    std::vector<SamplerSpec> out;
    if (s == "euler_k" || s == "euler") {
        for (int k : c.integers("euler_steps")) out.push_back(SamplerSpec::parse("euler_" + std::to_string(k)));
    } else {
        out.push_back(SamplerSpec::parse(s));
    }
    for (auto& sp : out) sp.aos = aos_config(c);
    return out;
}

// ---------------------------------------------------------------------------
// Run directories

/// Creates the run directory (run_dir, or runs/<command>-<timestamp>) and echoes the config into it.
inline fs::path prepare_run_dir(const RunConfig& c, const std::string& command) {
    fs::path dir = c.str("run_dir");
    if (dir.empty()) {
        const std::time_t now = std::time(nullptr);
        char buf[32];
        std::strftime(buf, sizeof buf, "%Y%m%d-%H%M%S", std::localtime(&now));
        dir = fs::path("runs") / (command + "-" + buf);
        for (int k = 2; fs::exists(dir); ++k) dir = fs::path("runs") / (command + "-" + buf + "-" + std::to_string(k));
    }
    fs::create_directories(dir);
    io::write_atomic(dir / "config.txt", "# rlfseg " + command + "\n" + c.echo());
    return dir;
}

inline Vocabulary dataset_vocabulary(const fs::path& data) {
    return fs::exists(data / "vocab.txt") ? Vocabulary::load((data / "vocab.txt").string()) : grammar_vocabulary();
}

inline fs::path resolve_checkpoint(const std::string& path) {
    require(!path.empty(), "no checkpoint given (set checkpoint=<file or training run dir>)");
    return fs::is_directory(path) ? latest_checkpoint(path) : fs::path(path);
}

namespace detail {

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string file_checksum(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw DataError("cannot read " + p.string());
    const std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return hex64(fnv1a(s.data(), s.size()));
}

inline void write_json(const fs::path& p, const nlohmann::json& j) { io::write_atomic(p, j.dump(2) + "\n"); }

inline double json_num(double v) { return std::isfinite(v) ? v : 0.0; }

} // namespace detail

// ---------------------------------------------------------------------------
// gen-data

struct GenDataResult {
    std::size_t records = 0;
    std::string index_checksum;
};

inline GenDataResult cmd_gen_data(const RunConfig& c, const fs::path& run_dir, std::ostream& log) {
    const long long size = c.integer("size");
    require(size >= 1, "size must be >= 1");
    auto spec = DatasetSpec::with_total(static_cast<int>(size), static_cast<std::uint64_t>(c.integer("seed")));
    spec.hard_fraction = c.real("hard_fraction");
    require(spec.hard_fraction >= 0 && spec.hard_fraction <= 1, "hard_fraction must lie in [0, 1]");
    const fs::path data = c.str("data");
    const auto records = generate_dataset(spec);
    write_dataset(records, data);
    grammar_vocabulary().save((data / "vocab.txt").string());
    GenDataResult r{records.size(), detail::file_checksum(data / "index.jsonl")};
    detail::write_json(run_dir / "summary.json", {{"records", r.records},
                                                  {"train", spec.train},
                                                  {"val", spec.val},
                                                  {"test", spec.test},
                                                  {"index_checksum", r.index_checksum}});
    log << "wrote " << r.records << " records (" << spec.train << " train, " << spec.val << " val, " << spec.test
        << " test) to " << data.string() << "\n";
    return r;
}

// ---------------------------------------------------------------------------
// refine-labels

struct RefineLabelsResult {
    std::size_t records = 0;
    std::size_t refined = 0;
    std::size_t skipped_empty = 0;
    std::size_t failed = 0;
    double mean_iterations = 0;
    bool cached = false;
};

inline RefineLabelsResult cmd_refine_labels(const RunConfig& c, const fs::path& run_dir, std::ostream& log) {
    const fs::path data = c.str("data");
    const RefineConfig rc = refine_config(c);
    const std::string refiner_name = c.str("refiner");
    require(refiner_name == "region_grow" || refiner_name == "identity", "refiner must be region_grow or identity");
    auto read = read_dataset(data, c.flag("tolerant"));
    for (const auto& e : read.errors) log << "skipped " << e.id << ": " << e.message << "\n";
    if (read.records.empty()) throw DataError("no readable records in " + data.string());

    const std::string key = "refiner=" + refiner_name + "\nanchor_points=" + std::to_string(rc.points) +
                            "\ntau=" + c.str("tau") + "\nmax_iterations=" + std::to_string(rc.max_iterations) +
                            "\nseed=" + std::to_string(rc.seed) + "\nrecords=" + std::to_string(read.records.size()) +
                            "\n";
    const fs::path meta = data / "refine_meta.txt", sidecar = data / "refine.jsonl";
    RefineLabelsResult res;
    res.records = read.records.size();
    const bool complete = std::all_of(read.records.begin(), read.records.end(),
                                      [](const SampleRecord& r) { return r.mask_refined.has_value(); });
    if (complete && fs::exists(meta) && fs::exists(sidecar)) {
        std::ifstream in(meta);
        const std::string old((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        if (old == key) {
            res.cached = true;
            log << "refined labels already up to date for " << res.records << " records\n";
            detail::write_json(run_dir / "summary.json", {{"records", res.records}, {"cached", true}});
            return res;
        }
    }

    std::unique_ptr<Refiner> refiner;
    if (refiner_name == "identity")
        refiner = std::make_unique<IdentityRefiner>();
    else
        refiner = std::make_unique<RegionGrowRefiner>();
    std::string lines;
    const auto summary = refine_records(read.records, *refiner, rc, [&](const SampleRecord& rec, const RefineResult& r) {
        nlohmann::json anchors = nlohmann::json::array();
        for (const auto& a : r.anchors) anchors.push_back({a.y, a.x});
        nlohmann::json j{{"id", rec.id},
                         {"iterations", r.iterations},
                         {"converged", r.converged},
                         {"self_iou", r.iou_trace.empty() ? nlohmann::json(nullptr) : nlohmann::json(r.iou_trace.back())},
                         {"anchors", anchors}};
        if (!r.warning.empty()) j["warning"] = r.warning;
        lines += j.dump() + "\n";
    });
    for (const auto& rec : read.records) io::write_pgm(record_paths(data, rec.id).mask_refined, *rec.mask_refined);
    io::write_atomic(sidecar, lines);
    io::write_atomic(meta, key);
    for (const auto& w : summary.warnings) log << "warning: " << w << "\n";
    res.refined = summary.refined;
    res.skipped_empty = summary.skipped_empty;
    res.failed = summary.failed;
    res.mean_iterations = summary.mean_iterations;
    detail::write_json(run_dir / "summary.json", {{"records", res.records},
                                                  {"refined", res.refined},
                                                  {"converged", summary.converged},
                                                  {"failed", res.failed},
                                                  {"skipped_empty", res.skipped_empty},
                                                  {"mean_iterations", res.mean_iterations},
                                                  {"cached", false}});
    log << "refined " << res.refined << " labels, mean iterations " << res.mean_iterations << " (" << summary.converged
        << " converged, " << res.failed << " failed, " << res.skipped_empty << " empty)\n";
    return res;
}

// ---------------------------------------------------------------------------
// train

struct TrainResult {
    TrainState<float> state;
    FlowNetConfig net;
    std::vector<double> losses;
    std::vector<double> epoch_rates;
    double seconds = 0;
};

inline std::vector<TrainExample> training_examples(const std::vector<SampleRecord>& records, const Vocabulary& vocab,
                                                   bool need_refined) {
    std::vector<TrainExample> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        if (need_refined && !r.mask_refined)
            throw DataError("record " + r.id + " has no refined mask; run refine-labels first or set rds=off");
        out.push_back({r.id, r.image, r.mask_poly, r.mask_refined ? *r.mask_refined : r.mask_poly,
                       tokenize_prompt(r.prompt, vocab).ids});
    }
    return out;
}

inline TrainResult cmd_train(const RunConfig& c, const fs::path& run_dir, std::ostream& log) {
    const TrainConfig tc = train_config(c);
    const fs::path data = c.str("data");
    const Vocabulary vocab = dataset_vocabulary(data);
    auto read = read_dataset(data, c.flag("tolerant"), "train");
    for (const auto& e : read.errors) log << "skipped " << e.id << ": " << e.message << "\n";
    if (read.records.empty()) throw DataError("no training records in " + data.string());
    const auto examples = training_examples(read.records, vocab, tc.rds);
    read.records.clear();

    TrainResult res;
    res.net = net_config(c, vocab.size());
    const FlowNet net(res.net);
    TrainLoopOptions opts;
    opts.run_dir = run_dir;
    if (!c.str("resume").empty()) opts.resume_from = resolve_checkpoint(c.str("resume"));
    opts.checkpoint_meta = {{"data", data.string()}, {"rds", tc.rds ? "on" : "off"}};
    const long long every = c.integer("log_every");
    double window = 0;
    int in_window = 0;
    opts.on_step = [&](const StepRecord& r) {
        res.losses.push_back(r.loss);
        window += r.loss;
        ++in_window;
        if (every > 0 && r.step % every == 0) {
            log << "step " << r.step << " loss " << window / in_window;
            if (tc.rds) log << " chose_original " << r.chose_original_rate;
            log << " grad_norm " << r.grad_norm << "\n";
            log.flush();
            window = 0;
            in_window = 0;
        }
    };
    const auto t0 = std::chrono::steady_clock::now();
    res.state = train_loop(net, examples, tc, opts);
    res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    if (tc.rds && fs::exists(run_dir / "epochs.csv")) {
        std::ifstream in(run_dir / "epochs.csv");
        std::string line;
        std::getline(in, line);
        while (std::getline(in, line)) {
            const auto a = line.find(','), b = line.find(',', a + 1);
            res.epoch_rates.push_back(std::stod(line.substr(a + 1, b - a - 1)));
        }
    }
    if (!res.losses.empty()) {
        PlotSeries s{"loss (moving mean of 100)", {}, {}};
        double acc = 0;
        for (std::size_t i = 0; i < res.losses.size(); ++i) {
            acc += res.losses[i];
            if (i >= 100) acc -= res.losses[i - 100];
            if ((i + 1) % 50 == 0 || i + 1 == res.losses.size()) {
                s.x.push_back(static_cast<double>(res.state.step - static_cast<std::int64_t>(res.losses.size()) + 1 +
                                                  static_cast<std::int64_t>(i)));
                s.y.push_back(acc / static_cast<double>(std::min<std::size_t>(i + 1, 100)));
            }
        }
        write_line_plot(run_dir / "loss.svg", "training loss", "step", "loss", {s});
    }
    if (!res.epoch_rates.empty()) {
        PlotSeries s{"chose_original_rate", {}, res.epoch_rates};
        for (std::size_t i = 0; i < res.epoch_rates.size(); ++i) s.x.push_back(static_cast<double>(i + 1));
        write_line_plot(run_dir / "chose_original.svg", "original label selected, per epoch", "epoch", "rate", {s});
    }
    nlohmann::json summary{{"steps", res.state.step},
                           {"skipped_total", res.state.skipped_total},
                           {"seconds", res.seconds},
                           {"parameters", res.state.params.parameter_count()},
                           {"rds", tc.rds}};
    if (!res.losses.empty()) {
        const std::size_t n = std::min<std::size_t>(res.losses.size(), 100);
        summary["final_loss_mean100"] =
            std::accumulate(res.losses.end() - static_cast<std::ptrdiff_t>(n), res.losses.end(), 0.0) / n;
    }
    if (!res.epoch_rates.empty()) summary["chose_original_rate_per_epoch"] = res.epoch_rates;
    detail::write_json(run_dir / "summary.json", summary);
    log << "trained " << res.state.step << " steps in " << res.seconds << " s; checkpoints in "
        << (run_dir / "checkpoints").string() << "\n";
    return res;
}

// ---------------------------------------------------------------------------
// eval

struct LoadedModel {
    FlowNet net;
    nn::ParamStore<float> params;
    fs::path path;
};

inline LoadedModel load_model(const RunConfig& c) {
    const fs::path p = resolve_checkpoint(c.str("checkpoint"));
    auto ck = load_checkpoint(p);
    return {FlowNet(ck.net), std::move(ck.state.params), p};
}

inline std::vector<SampleRecord> eval_records(const RunConfig& c, std::ostream& log) {
    auto read = read_dataset(c.str("data"), c.flag("tolerant"), c.str("eval_split"));
    for (const auto& e : read.errors) log << "skipped " << e.id << ": " << e.message << "\n";
    auto records = filter_difficulty(read.records, c.str("eval_difficulty"));
    if (records.empty())
        throw DataError("no " + c.str("eval_difficulty") + " records in split '" + c.str("eval_split") + "' of " +
                        c.str("data"));
    return records;
}

inline std::vector<EvalReport> cmd_eval(const RunConfig& c, const fs::path& run_dir, std::ostream& log) {
    const auto model = load_model(c);
    const Vocabulary vocab = dataset_vocabulary(c.str("data"));
    require(vocab.size() <= model.net.config().vocab_size, "dataset vocabulary is larger than the checkpoint's");
    const auto records = eval_records(c, log);
    const EvalOptions opt = eval_options(c);
    std::vector<EvalReport> reports;
    std::string table = "sampler,records,miou,best_threshold,ap,boundary_f\n";
    nlohmann::json summary = nlohmann::json::array();
    for (const auto& sp : sampler_list(c)) {
        EvalReport rep = evaluate(model.net, model.params, records, vocab, sp, opt);
        write_eval_csv(run_dir / ("eval_" + rep.sampler + ".csv"), rep);
        write_pr_csv(run_dir / ("pr_" + rep.sampler + ".csv"), rep.pr_curve);
        if (c.flag("save_predictions")) {
            const fs::path dir = run_dir / ("pred_" + rep.sampler);
            fs::create_directories(dir);
            for (std::size_t i = 0; i < records.size(); ++i)
                io::write_pgm(dir / (records[i].id + ".pgm"), rep.predictions[i]);
        }
        char buf[160];
        std::snprintf(buf, sizeof buf, "%s,%zu,%.6f,%.3f,%.6f,%.6f\n", rep.sampler.c_str(), records.size(), rep.miou,
                      rep.best_threshold, rep.ap, rep.boundary_f);
        table += buf;
        nlohmann::json j{{"sampler", rep.sampler},      {"records", records.size()}, {"miou", rep.miou},
                         {"best_threshold", rep.best_threshold}, {"ap", rep.ap},   {"boundary_f", rep.boundary_f}};
        if (sp.kind == SamplerKind::aos) {
            std::size_t active = 0;
            double mean = 0;
            for (const auto& r : rep.rows) {
                active += r.gamma > 0;
                mean += r.gamma;
            }
            j["gamma_mean"] = mean / static_cast<double>(rep.rows.size());
            j["gamma_positive"] = active;
        }
        summary.push_back(j);
        log << rep.sampler << ": mIoU " << rep.miou << " (threshold " << rep.best_threshold << "), AP " << rep.ap
            << ", boundary F " << rep.boundary_f << " on " << records.size() << " records\n";
        rep.predictions.clear();
        reports.push_back(std::move(rep));
    }
    io::write_atomic(run_dir / "summary.csv", table);
    detail::write_json(run_dir / "summary.json", {{"checkpoint", model.path.string()}, {"reports", summary}});
    return reports;
}

// ---------------------------------------------------------------------------
// diagnose-steps

struct StepsRow {
    int steps = 1;
    double miou = 0, best_threshold = 0, ap = 0, boundary_f = 0;
};

struct CosineRow {
    double t = 0;
    double cosine = 0; ///< mean over samples with a defined cosine; NaN if none
    double norm = 0;
};

struct DiagnoseResult {
    std::vector<StepsRow> steps;
    std::vector<CosineRow> cosine;
};

inline DiagnoseResult cmd_diagnose_steps(const RunConfig& c, const fs::path& run_dir, std::ostream& log) {
    const auto model = load_model(c);
    const Vocabulary vocab = dataset_vocabulary(c.str("data"));
    const auto records = eval_records(c, log);
    const EvalOptions opt = eval_options(c);
    DiagnoseResult res;

    std::string csv = "K,miou,best_threshold,ap,boundary_f\n";
    PlotSeries miou{"mIoU", {}, {}}, bf{"boundary F", {}, {}};
    for (int k : c.integers("euler_steps")) {
        SamplerSpec sp;
        sp.kind = SamplerKind::euler;
        sp.steps = k;
        require(k >= 1, "euler_steps entries must be >= 1");
        const EvalReport rep = evaluate(model.net, model.params, records, vocab, sp, opt);
        res.steps.push_back({k, rep.miou, rep.best_threshold, rep.ap, rep.boundary_f});
        char buf[128];
        std::snprintf(buf, sizeof buf, "%d,%.6f,%.3f,%.6f,%.6f\n", k, rep.miou, rep.best_threshold, rep.ap, rep.boundary_f);
        csv += buf;
        miou.x.push_back(k);
        miou.y.push_back(rep.miou);
        bf.x.push_back(k);
        bf.y.push_back(rep.boundary_f);
        log << "K=" << k << ": mIoU " << rep.miou << ", boundary F " << rep.boundary_f << "\n";
    }
    io::write_atomic(run_dir / "steps.csv", csv);
    write_line_plot(run_dir / "steps.svg", "segmentation quality vs Euler steps", "K", "score", {miou, bf});

    const auto t_list = c.reals("t_list");
    const std::size_t n = std::min<std::size_t>(records.size(), static_cast<std::size_t>(c.integer("diag_samples")));
    require(n >= 1, "diag_samples must be >= 1");
    const LatentCodec codec;
    const auto shape = codec.config().latent_shape();
    const std::size_t per = Tensor<float>::count(shape);
    std::vector<double> cos_sum(t_list.size(), 0), norm_sum(t_list.size(), 0);
    std::vector<std::size_t> cos_n(t_list.size(), 0);
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(opt.batch_size)) {
        const std::size_t b = std::min(n - start, static_cast<std::size_t>(opt.batch_size));
        std::vector<int> bshape{static_cast<int>(b)};
        bshape.insert(bshape.end(), shape.begin(), shape.end());
        Tensor<float> z1(bshape);
        PromptBatch prompts;
        for (std::size_t i = 0; i < b; ++i) {
            const LatentGrid z = codec.encode_image(records[start + i].image);
            std::copy(z.data.begin(), z.data.end(), z1.data() + i * per);
            prompts.push_back(tokenize_prompt(records[start + i].prompt, vocab).ids);
        }
        const auto pts = path_crossing_diagnostic(model.net, model.params, z1, prompts, t_list);
        for (std::size_t k = 0; k < pts.size(); ++k)
            for (std::size_t i = 0; i < b; ++i) {
                norm_sum[k] += pts[k].norm[i];
                if (!std::isnan(pts[k].cosine[i])) {
                    cos_sum[k] += pts[k].cosine[i];
                    ++cos_n[k];
                }
            }
    }
    std::string ccsv = "t,cosine_vs_t1,velocity_norm\n";
    PlotSeries cs{"mean cosine vs t=1", {}, {}};
    for (std::size_t k = 0; k < t_list.size(); ++k) {
        CosineRow row{t_list[k], cos_n[k] ? cos_sum[k] / static_cast<double>(cos_n[k]) : std::nan(""),
                      norm_sum[k] / static_cast<double>(n)};
        res.cosine.push_back(row);
        ccsv += detail::csv_num(row.t) + "," + detail::csv_num(row.cosine) + "," + detail::csv_num(row.norm) + "\n";
        cs.x.push_back(row.t);
        cs.y.push_back(row.cosine);
    }
    io::write_atomic(run_dir / "cosine.csv", ccsv);
    write_line_plot(run_dir / "cosine.svg", "velocity direction along the Euler path", "t", "cosine", {cs});
    log << "wrote steps.csv, cosine.csv and plots to " << run_dir.string() << "\n";
    return res;
}

} // namespace rlfseg
