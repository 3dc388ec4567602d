// SPDX-License-Identifier: Apache-2.0
//
// Flow-matching objective on the straight path z_t = t z1 + (1-t) z0 with target
// z1 - z0, the per-sample dynamic selection between two candidate labels, Adam
// with global-norm clipping, and the training loop with checkpoints and CSV logs.
//
// The loss functions are templated on the model. A model provides
//   template <class T> struct Cache;
//   Tensor<T> forward(p, z, std::span<const T> t, const PromptBatch&, Cache<T>*) const;
//   void backward(p, g, const Cache<T>&, const Tensor<T>& dv) const;   // accumulates into g
#pragma once

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "rlfseg/checkpoint.hpp"
#include "rlfseg/codec.hpp"
#include "rlfseg/flow_net.hpp"

namespace rlfseg {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Objective

/// t z1 + (1-t) z0, elementwise.
inline LatentGrid interpolate_latents(const LatentGrid& z0, const LatentGrid& z1, double t) {
    require(z0.data.shape() == z1.data.shape(), "interpolate_latents: shape mismatch " + z0.data.shape_string() +
                                                    " vs " + z1.data.shape_string());
    require(t >= 0 && t <= 1, "interpolate_latents: t must lie in [0,1]");
    LatentGrid out = z1;
    const float tf = static_cast<float>(t);
    for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = tf * z1.data[i] + (1.f - tf) * z0.data[i];
    return out;
}

/// Batched interpolation with one t per sample; z0, z1 are [B, ...].
template <class T>
Tensor<T> interpolate_batch(const Tensor<T>& z0, const Tensor<T>& z1, std::span<const T> t) {
    require(z0.shape() == z1.shape(), "interpolate_batch: shape mismatch");
    require(t.size() == static_cast<std::size_t>(z1.dim(0)), "interpolate_batch: one t per sample required");
    Tensor<T> out(z1.shape());
    const std::size_t per = z1.size() / t.size();
    for (std::size_t n = 0; n < t.size(); ++n)
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) out[i] = t[n] * z1[i] + (T(1) - t[n]) * z0[i];
    return out;
}

template <class T>
struct FlowBatch {
    Tensor<T> z1;         ///< image latents [B, C, H, W]
    Tensor<T> z0_orig;    ///< latents of the original labels
    Tensor<T> z0_refined; ///< latents of the refined labels (may be empty)
    PromptBatch prompts;
    std::vector<T> t;

    int size() const { return z1.rank() > 0 ? z1.dim(0) : 0; }
};

enum class Label { orig, refined };

struct LossOutput {
    double loss = 0;                 ///< mean over the batch of per-sample losses
    std::vector<double> per_sample;  ///< mean over latent entries of (target - v)^2
    std::vector<char> chose_original; ///< filled by dynamic_selection_loss
};

namespace detail {

template <class T>
const Tensor<T>& label_latent(const FlowBatch<T>& b, Label which) {
    const Tensor<T>& z0 = which == Label::orig ? b.z0_orig : b.z0_refined;
    require(z0.shape() == b.z1.shape(), std::string("flow loss: ") + (which == Label::orig ? "original" : "refined") +
                                            " label latents do not match the image latents");
    return z0;
}

/// Loss of v against z1 - z0 per sample; optionally the gradient d loss / d v.
template <class T>
LossOutput regression_loss(const Tensor<T>& v, const Tensor<T>& z1, const Tensor<T>& z0, Tensor<T>* dv) {
    const std::size_t b = static_cast<std::size_t>(z1.dim(0)), per = z1.size() / b;
    LossOutput out;
    out.per_sample.resize(b);
    if (dv) *dv = Tensor<T>(v.shape());
    const T scale = T(2) / static_cast<T>(per * b);
    for (std::size_t n = 0; n < b; ++n) {
        double acc = 0;
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) {
            const T diff = v[i] - (z1[i] - z0[i]);
            acc += static_cast<double>(diff) * static_cast<double>(diff);
            if (dv) (*dv)[i] = scale * diff;
        }
        out.per_sample[n] = acc / static_cast<double>(per);
    }
    out.loss = std::accumulate(out.per_sample.begin(), out.per_sample.end(), 0.0) / static_cast<double>(b);
    return out;
}

} // namespace detail

/// Flow-matching loss against one label. When grads is non-null the parameter
/// gradients of the batch-mean loss are accumulated into it.
template <class Model, class T>
LossOutput flow_matching_loss(const Model& model, const nn::ParamStore<T>& p, const FlowBatch<T>& batch, Label which,
                              nn::ParamStore<T>* grads = nullptr) {
    require(batch.size() > 0, "flow_matching_loss: empty batch");
    const Tensor<T>& z0 = detail::label_latent(batch, which);
    const Tensor<T> zt = interpolate_batch(z0, batch.z1, std::span<const T>(batch.t));
    if (!grads) {
        const Tensor<T> v = model.template forward<T>(p, zt, std::span<const T>(batch.t), batch.prompts, nullptr);
        return detail::regression_loss<T>(v, batch.z1, z0, nullptr);
    }
    typename Model::template Cache<T> cache;
    const Tensor<T> v = model.template forward<T>(p, zt, std::span<const T>(batch.t), batch.prompts, &cache);
    Tensor<T> dv;
    LossOutput out = detail::regression_loss<T>(v, batch.z1, z0, &dv);
    model.backward(p, *grads, cache, dv);
    return out;
}

/// Per sample, the lower of the two label losses (ties go to the refined label),
/// both evaluated at the same z1 and t. Gradients come from the selected label only.
template <class Model, class T>
LossOutput dynamic_selection_loss(const Model& model, const nn::ParamStore<T>& p, const FlowBatch<T>& batch,
                                  nn::ParamStore<T>* grads = nullptr) {
    const LossOutput lo = flow_matching_loss(model, p, batch, Label::orig);
    const LossOutput lr = flow_matching_loss(model, p, batch, Label::refined);
    const std::size_t b = static_cast<std::size_t>(batch.size()), per = batch.z1.size() / b;

    LossOutput out;
    out.per_sample.resize(b);
    out.chose_original.resize(b);
    for (std::size_t n = 0; n < b; ++n) {
        out.chose_original[n] = lo.per_sample[n] < lr.per_sample[n];
        out.per_sample[n] = out.chose_original[n] ? lo.per_sample[n] : lr.per_sample[n];
    }
    out.loss = std::accumulate(out.per_sample.begin(), out.per_sample.end(), 0.0) / static_cast<double>(b);

    if (grads) {
        FlowBatch<T> chosen;
        chosen.z1 = batch.z1;
        chosen.prompts = batch.prompts;
        chosen.t = batch.t;
        chosen.z0_orig = batch.z0_refined;
        for (std::size_t n = 0; n < b; ++n)
            if (out.chose_original[n])
                std::copy(batch.z0_orig.data() + n * per, batch.z0_orig.data() + (n + 1) * per,
                          chosen.z0_orig.data() + n * per);
        (void)flow_matching_loss(model, p, chosen, Label::orig, grads);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Optimizer

struct OptimizerConfig {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double clip_norm = 1.0; ///< global gradient norm cap; <= 0 disables clipping
};

template <class T>
struct AdamState {
    nn::ParamStore<T> m, v;
    std::int64_t t = 0;

    static AdamState like(const nn::ParamStore<T>& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
    friend bool operator==(const AdamState&, const AdamState&) = default;
};

template <class T>
double global_norm(const nn::ParamStore<T>& g) {
    double s = 0;
    for (const auto& t : g.tensors)
        for (T v : t) s += static_cast<double>(v) * static_cast<double>(v);
    return std::sqrt(s);
}

/// Bias-corrected Adam step. Gradients are rescaled first so that their global
/// norm is at most clip_norm. Returns the pre-clip norm.
template <class T>
double adam_step(nn::ParamStore<T>& p, nn::ParamStore<T> g, AdamState<T>& s, const OptimizerConfig& cfg) {
    const double norm = global_norm(g);
    const double scale = cfg.clip_norm > 0 && norm > cfg.clip_norm ? cfg.clip_norm / norm : 1.0;
    ++s.t;
    const double c1 = 1 - std::pow(cfg.beta1, static_cast<double>(s.t));
    const double c2 = 1 - std::pow(cfg.beta2, static_cast<double>(s.t));
    for (int k = 0; k < p.size(); ++k) {
        auto& w = p[k];
        auto& m = s.m[k];
        auto& v = s.v[k];
        const auto& gk = g[k];
        for (std::size_t i = 0; i < w.size(); ++i) {
            const double gi = static_cast<double>(gk[i]) * scale;
            const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1 - cfg.beta1) * gi;
            const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1 - cfg.beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            w[i] = static_cast<T>(static_cast<double>(w[i]) - cfg.lr * (mi / c1) / (std::sqrt(vi / c2) + cfg.eps));
        }
    }
    return norm;
}

// ---------------------------------------------------------------------------
// Training state and checkpoints

struct TrainConfig {
    OptimizerConfig opt;
    int batch_size = 8;
    std::int64_t steps = 20000;
    std::uint64_t seed = 0;
    bool rds = true;
    std::int64_t checkpoint_every = 2000;
    int max_consecutive_skips = 10;

    void validate() const {
        require(opt.lr >= 0, "train: learning rate must be non-negative");
        require(batch_size >= 1, "train: batch size must be >= 1");
        require(steps >= 0, "train: steps must be >= 0");
        require(opt.beta1 >= 0 && opt.beta1 < 1 && opt.beta2 >= 0 && opt.beta2 < 1, "train: betas must lie in [0,1)");
        require(opt.eps > 0, "train: eps must be positive");
    }
};

template <class T>
struct TrainState {
    nn::ParamStore<T> params;
    AdamState<T> adam;
    std::int64_t step = 0;
    std::int64_t skipped_total = 0;
    int consecutive_skips = 0;
    // running chose_original tally for the current epoch
    std::int64_t epoch_chosen = 0;
    std::int64_t epoch_seen = 0;
};

struct StepRecord {
    std::int64_t step = 0;
    double loss = 0;
    double chose_original_rate = std::numeric_limits<double>::quiet_NaN();
    double grad_norm = 0;
    bool skipped = false;
};

inline void put_net_config(Archive& a, const FlowNetConfig& c) {
    const std::pair<const char*, int> fields[] = {
        {"latent_channels", c.latent_channels}, {"latent_height", c.latent_height}, {"latent_width", c.latent_width},
        {"ch1", c.ch1}, {"ch2", c.ch2}, {"ch3", c.ch3}, {"groups", c.groups}, {"time_dim", c.time_dim},
        {"cond_dim", c.cond_dim}, {"emb_dim", c.emb_dim}, {"vocab_size", c.vocab_size}};
    for (const auto& [k, v] : fields) a.meta[std::string("net.") + k] = std::to_string(v);
}

inline FlowNetConfig get_net_config(const Archive& a) {
    FlowNetConfig c;
    std::pair<const char*, int*> fields[] = {
        {"latent_channels", &c.latent_channels}, {"latent_height", &c.latent_height}, {"latent_width", &c.latent_width},
        {"ch1", &c.ch1}, {"ch2", &c.ch2}, {"ch3", &c.ch3}, {"groups", &c.groups}, {"time_dim", &c.time_dim},
        {"cond_dim", &c.cond_dim}, {"emb_dim", &c.emb_dim}, {"vocab_size", &c.vocab_size}};
    for (auto& [k, v] : fields) {
        const std::string& s = a.at(std::string("net.") + k);
        try {
            *v = std::stoi(s);
        } catch (const std::exception&) {
            throw DataError(std::string("checkpoint: bad value for net.") + k + ": '" + s + "'");
        }
    }
    return c;
}

namespace detail {

inline std::int64_t meta_int(const Archive& a, const std::string& key) {
    try {
        return std::stoll(a.at(key));
    } catch (const DataError&) {
        throw;
    } catch (const std::exception&) {
        throw DataError("checkpoint: bad integer for " + key);
    }
}

} // namespace detail

template <class T>
void save_checkpoint(const fs::path& path, const FlowNetConfig& net, const TrainState<T>& s, bool final_mark,
                     const std::map<std::string, std::string>& extra = {}) {
    Archive a;
    a.meta = extra;
    put_net_config(a, net);
    a.meta["step"] = std::to_string(s.step);
    a.meta["final"] = final_mark ? "1" : "0";
    a.meta["skipped_total"] = std::to_string(s.skipped_total);
    a.meta["consecutive_skips"] = std::to_string(s.consecutive_skips);
    a.meta["epoch_chosen"] = std::to_string(s.epoch_chosen);
    a.meta["epoch_seen"] = std::to_string(s.epoch_seen);
    a.meta["adam.t"] = std::to_string(s.adam.t);
    add_params(a, s.params, "param/");
    add_params(a, s.adam.m, "adam.m/");
    add_params(a, s.adam.v, "adam.v/");
    save_archive(path, a);
}

struct LoadedCheckpoint {
    FlowNetConfig net;
    TrainState<float> state;
    bool final_mark = false;
    std::map<std::string, std::string> meta;
};

inline LoadedCheckpoint load_checkpoint(const fs::path& path) {
    const Archive a = load_archive(path);
    LoadedCheckpoint c;
    c.meta = a.meta;
    c.net = get_net_config(a);
    const FlowNet model(c.net);
    const auto like = model.init_params<float>(0);
    c.state.params = read_params(a, like, "param/");
    if (a.find<float>("adam.m/" + like.names.front())) {
        c.state.adam.m = read_params(a, like, "adam.m/");
        c.state.adam.v = read_params(a, like, "adam.v/");
        c.state.adam.t = detail::meta_int(a, "adam.t");
    } else {
        c.state.adam = AdamState<float>::like(like);
    }
    c.state.step = detail::meta_int(a, "step");
    c.state.skipped_total = detail::meta_int(a, "skipped_total");
    c.state.consecutive_skips = static_cast<int>(detail::meta_int(a, "consecutive_skips"));
    c.state.epoch_chosen = detail::meta_int(a, "epoch_chosen");
    c.state.epoch_seen = detail::meta_int(a, "epoch_seen");
    c.final_mark = a.at("final") == "1";
    return c;
}

// ---------------------------------------------------------------------------
// Data

struct TrainExample {
    std::string id;
    RgbImage image;
    MaskImage label_orig;
    MaskImage label_refined;
    std::vector<int> prompt;
};

namespace detail {

inline std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a * 0x9E3779B97F4A7C15ull + b + 0x632BE59BD9B4E019ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

} // namespace detail

/// Shuffled example order for one pass over n examples.
inline std::vector<int> epoch_order(std::uint64_t seed, std::int64_t epoch, int n) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 rng(detail::mix_seed(seed, static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
}

/// Batch for a given step. Example order and t draws depend only on (seed, step),
/// so a resumed run sees the same batches as an uninterrupted one.
template <class T>
FlowBatch<T> make_batch(const std::vector<TrainExample>& data, const LatentCodec& codec, const TrainConfig& cfg,
                        std::int64_t step, std::vector<int>* indices = nullptr) {
    const int n = static_cast<int>(data.size());
    const int b = cfg.batch_size;
    const auto shape = codec.config().latent_shape();
    const std::size_t per = Tensor<float>::count(shape);
    std::vector<int> bshape{b};
    bshape.insert(bshape.end(), shape.begin(), shape.end());
    FlowBatch<T> batch{Tensor<T>(bshape), Tensor<T>(bshape), Tensor<T>(bshape), {}, {}};

    std::int64_t cached_epoch = -1;
    std::vector<int> order;
    std::mt19937_64 trng(detail::mix_seed(cfg.seed ^ 0xA5A5A5A5ull, static_cast<std::uint64_t>(step)));
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (indices) indices->clear();
    for (int j = 0; j < b; ++j) {
        const std::int64_t k = step * b + j;
        const std::int64_t epoch = k / n;
        if (epoch != cached_epoch) {
            order = epoch_order(cfg.seed, epoch, n);
            cached_epoch = epoch;
        }
        const TrainExample& ex = data[static_cast<std::size_t>(order[static_cast<std::size_t>(k % n)])];
        if (indices) indices->push_back(order[static_cast<std::size_t>(k % n)]);
        auto put = [&](Tensor<T>& dst, const LatentGrid& z) {
            for (std::size_t i = 0; i < per; ++i) dst[static_cast<std::size_t>(j) * per + i] = static_cast<T>(z.data[i]);
        };
        put(batch.z1, codec.encode_image(ex.image));
        put(batch.z0_orig, codec.encode_mask(ex.label_orig));
        put(batch.z0_refined, codec.encode_mask(ex.label_refined));
        batch.prompts.push_back(ex.prompt);
        batch.t.push_back(static_cast<T>(u(trng)));
    }
    return batch;
}

// ---------------------------------------------------------------------------
// Steps and loop

/// One optimizer update. Non-finite gradients skip the update and are counted;
/// too many consecutive skips raise NumericalError.
template <class Model, class T>
StepRecord train_step(const Model& model, TrainState<T>& s, const FlowBatch<T>& batch, const TrainConfig& cfg) {
    require(batch.size() > 0, "train_step: empty batch");
    auto g = s.params.zeros_like();
    StepRecord r;
    const LossOutput out = cfg.rds ? dynamic_selection_loss(model, s.params, batch, &g)
                                   : flow_matching_loss(model, s.params, batch, Label::orig, &g);
    r.loss = out.loss;
    if (!std::isfinite(out.loss)) throw NumericalError("train_step: non-finite loss");
    if (cfg.rds) {
        const auto chosen = std::count(out.chose_original.begin(), out.chose_original.end(), char(1));
        r.chose_original_rate = static_cast<double>(chosen) / static_cast<double>(batch.size());
        s.epoch_chosen += chosen;
        s.epoch_seen += batch.size();
    }
    if (!g.all_finite()) {
        r.skipped = true;
        r.grad_norm = std::numeric_limits<double>::quiet_NaN();
        ++s.skipped_total;
        if (++s.consecutive_skips > cfg.max_consecutive_skips)
            throw NumericalError("train_step: " + std::to_string(s.consecutive_skips) +
                                 " consecutive steps with non-finite gradients");
    } else {
        s.consecutive_skips = 0;
        r.grad_norm = adam_step(s.params, std::move(g), s.adam, cfg.opt);
    }
    r.step = ++s.step;
    return r;
}

struct TrainLoopOptions {
    fs::path run_dir;
    std::optional<fs::path> resume_from;
    std::map<std::string, std::string> checkpoint_meta; ///< copied into every checkpoint header
    std::function<void(const StepRecord&)> on_step;     ///< progress hook
};

inline fs::path checkpoint_path(const fs::path& run_dir, std::int64_t step) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "step_%08lld.ckpt", static_cast<long long>(step));
    return run_dir / "checkpoints" / buf;
}

/// Highest-step checkpoint in run_dir/checkpoints.
inline fs::path latest_checkpoint(const fs::path& run_dir) {
    const fs::path dir = run_dir / "checkpoints";
    if (!fs::is_directory(dir)) throw DataError("no checkpoints directory in " + run_dir.string());
    fs::path best;
    for (const auto& e : fs::directory_iterator(dir)) {
        const auto name = e.path().filename().string();
        if (name.starts_with("step_") && name.ends_with(".ckpt") && (best.empty() || name > best.filename().string()))
            best = e.path();
    }
    if (best.empty()) throw DataError("no checkpoints found in " + dir.string());
    return best;
}

namespace detail {

inline std::string csv_num(double v) {
    if (std::isnan(v)) return "nan";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

/// Keeps the header and rows whose first field is <= max_key.
inline void truncate_csv(const fs::path& path, std::int64_t max_key) {
    if (!fs::exists(path)) return;
    std::ifstream in(path);
    std::string header, line, kept;
    std::getline(in, header);
    while (std::getline(in, line)) {
        const auto comma = line.find(',');
        if (line.empty() || std::stoll(line.substr(0, comma)) > max_key) continue;
        kept += line + "\n";
    }
    io::write_atomic(path, header + "\n" + kept);
}

} // namespace detail

/// Runs cfg.steps optimizer updates (counting from a resumed checkpoint if given).
/// Writes run_dir/metrics.csv (per step), run_dir/epochs.csv (per completed epoch,
/// RDS only) and checkpoints: one at step 0, every cfg.checkpoint_every steps, and
/// the last one with final=1 in its header.
inline TrainState<float> train_loop(const FlowNet& model, const std::vector<TrainExample>& data, const TrainConfig& cfg,
                                    const TrainLoopOptions& opts) {
    cfg.validate();
    require(!data.empty(), "train_loop: empty training set");
    const LatentCodec codec;
    fs::create_directories(opts.run_dir / "checkpoints");
    const fs::path metrics = opts.run_dir / "metrics.csv", epochs = opts.run_dir / "epochs.csv";

    TrainState<float> s;
    if (opts.resume_from) {
        auto ck = load_checkpoint(*opts.resume_from);
        if (!(ck.net == model.config()))
            throw DataError(opts.resume_from->string() + ": checkpoint architecture differs from the configured model");
        s = std::move(ck.state);
        detail::truncate_csv(metrics, s.step);
        detail::truncate_csv(epochs, s.step * cfg.batch_size / static_cast<std::int64_t>(data.size()));
    } else {
        s.params = model.init_params<float>(cfg.seed);
        s.adam = AdamState<float>::like(s.params);
        io::write_atomic(metrics, cfg.rds ? "step,loss,chose_original_rate,grad_norm\n" : "step,loss,grad_norm\n");
        if (cfg.rds) io::write_atomic(epochs, "epoch,chose_original_rate,samples\n");
        save_checkpoint(checkpoint_path(opts.run_dir, 0), model.config(), s, cfg.steps == 0, opts.checkpoint_meta);
    }

    std::ofstream log(metrics, std::ios::app), elog;
    if (cfg.rds) elog.open(epochs, std::ios::app);
    if (!log) throw DataError("cannot append to " + metrics.string());
    const std::int64_t n = static_cast<std::int64_t>(data.size());
    std::vector<int> idx;
    while (s.step < cfg.steps) {
        const FlowBatch<float> batch = make_batch<float>(data, codec, cfg, s.step, &idx);
        StepRecord r;
        try {
            r = train_step(model, s, batch, cfg);
        } catch (const NumericalError& e) {
            std::string ids;
            for (int i : idx) ids += (ids.empty() ? "" : " ") + data[static_cast<std::size_t>(i)].id;
            throw NumericalError(std::string(e.what()) + " at step " + std::to_string(s.step + 1) + " (samples: " + ids +
                                 ")");
        }
        log << r.step << ',' << detail::csv_num(r.loss) << ','
            << (cfg.rds ? detail::csv_num(r.chose_original_rate) + "," : "") << detail::csv_num(r.grad_norm) << '\n';

        // an epoch ends when the sample counter crosses a multiple of n
        const std::int64_t before = (r.step - 1) * cfg.batch_size / n, after = r.step * cfg.batch_size / n;
        if (cfg.rds && after > before && s.epoch_seen > 0) {
            elog << after << ',' << detail::csv_num(static_cast<double>(s.epoch_chosen) / s.epoch_seen) << ','
                 << s.epoch_seen << '\n';
            elog.flush();
            s.epoch_chosen = s.epoch_seen = 0;
        }
        if (opts.on_step) opts.on_step(r);
        if (cfg.checkpoint_every > 0 && r.step % cfg.checkpoint_every == 0 && r.step != cfg.steps) {
            log.flush();
            save_checkpoint(checkpoint_path(opts.run_dir, r.step), model.config(), s, false, opts.checkpoint_meta);
        }
    }
    log.flush();
    if (s.step > 0) save_checkpoint(checkpoint_path(opts.run_dir, s.step), model.config(), s, true, opts.checkpoint_meta);
    return s;
}

} // namespace rlfseg
