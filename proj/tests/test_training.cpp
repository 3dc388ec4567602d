// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <fstream>
#include <random>

#include "rlfseg/training.hpp"
#include "test_models.hpp"
#include "test_util.hpp"

using namespace rlfseg;
using test_models::AffineField;

namespace {

FlowNetConfig tiny_config(int channels = 3, int side = 8) {
    FlowNetConfig c;
    c.latent_channels = channels;
    c.latent_height = side;
    c.latent_width = side;
    c.ch1 = 4;
    c.ch2 = 4;
    c.ch3 = 4;
    c.groups = 2;
    c.time_dim = 8;
    c.cond_dim = 4;
    c.emb_dim = 8;
    c.vocab_size = 5;
    return c;
}

template <class T>
Tensor<T> random_tensor(std::vector<int> shape, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Tensor<T> t(std::move(shape));
    for (auto& v : t) v = static_cast<T>(n(rng));
    return t;
}

template <class T>
FlowBatch<T> random_batch(int b, const std::vector<int>& latent, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<int> shape{b};
    shape.insert(shape.end(), latent.begin(), latent.end());
    FlowBatch<T> batch{random_tensor<T>(shape, rng), random_tensor<T>(shape, rng), random_tensor<T>(shape, rng), {}, {}};
    std::uniform_real_distribution<double> u(0, 1);
    std::uniform_int_distribution<int> tok(0, 4);
    for (int n = 0; n < b; ++n) {
        batch.t.push_back(static_cast<T>(u(rng)));
        batch.prompts.push_back({tok(rng), tok(rng)});
    }
    return batch;
}

/// 64x64 scenes of random rectangles; the refined label is the exact rectangle
/// and the original is shifted by a pixel.
std::vector<TrainExample> toy_examples(int n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<int> pos(4, 40), size(8, 20), tok(1, 4);
    std::uniform_real_distribution<float> col(0.f, 1.f);
    std::vector<TrainExample> out;
    for (int k = 0; k < n; ++k) {
        TrainExample ex{"toy_" + std::to_string(k), RgbImage(64, 64, 0.f), MaskImage(64, 64), MaskImage(64, 64),
                        {tok(rng)}};
        const int y0 = pos(rng), x0 = pos(rng), h = size(rng), w = size(rng);
        const float r = col(rng), g = col(rng), b = col(rng);
        for (int y = y0; y < y0 + h; ++y)
            for (int x = x0; x < x0 + w; ++x) {
                ex.image.at(0, y, x) = r;
                ex.image.at(1, y, x) = g;
                ex.image.at(2, y, x) = b;
                ex.label_refined.at(y, x) = 1.f;
                ex.label_orig.at(y + 1, x + 1) = 1.f;
            }
        out.push_back(std::move(ex));
    }
    return out;
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

// ---------------------------------------------------------------------------
// Interpolation

TEST(Interpolate, EndpointsAreExact) {
    std::mt19937_64 rng(1);
    LatentGrid z0{random_tensor<float>({3, 4, 4}, rng), LatentSpace::mask};
    LatentGrid z1{random_tensor<float>({3, 4, 4}, rng), LatentSpace::image};
    EXPECT_EQ(interpolate_latents(z0, z1, 0.0).data, z0.data);
    EXPECT_EQ(interpolate_latents(z0, z1, 1.0).data, z1.data);
}

TEST(Interpolate, LinearInTAndSymmetric) {
    std::mt19937_64 rng(2);
    const auto z0 = random_tensor<double>({4, 2, 3, 3}, rng), z1 = random_tensor<double>({4, 2, 3, 3}, rng);
    std::uniform_real_distribution<double> u(0, 1);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> t(4), s(4);
        for (auto& v : t) v = u(rng);
        for (std::size_t i = 0; i < 4; ++i) s[i] = 1 - t[i];
        const auto a = interpolate_batch<double>(z0, z1, t);
        const auto b = interpolate_batch<double>(z1, z0, s);
        for (std::size_t i = 0; i < a.size(); ++i) {
            ASSERT_NEAR(a[i], b[i], 1e-12);
            const std::size_t n = i / (a.size() / 4);
            ASSERT_NEAR(a[i] - z0[i], t[n] * (z1[i] - z0[i]), 1e-12);
        }
    }
}

TEST(Interpolate, RejectsBadInput) {
    LatentGrid a{Tensor<float>({3, 4, 4}), LatentSpace::mask}, b{Tensor<float>({3, 4, 2}), LatentSpace::image};
    EXPECT_THROW(interpolate_latents(a, b, 0.5), InvalidArgument);
    EXPECT_THROW(interpolate_latents(a, a, 1.5), InvalidArgument);
}

// ---------------------------------------------------------------------------
// Loss

TEST(FlowLoss, ConstantTargetOracle) {
    // z1 = 1, z0 = 0.5 everywhere and v = 0: every entry is off by 0.5.
    const AffineField m;
    const auto p = AffineField::params<double>(0, 0);
    FlowBatch<double> b{Tensor<double>({2, 3, 4, 4}, 1.0), Tensor<double>({2, 3, 4, 4}, 0.5), {}, {{1}, {2}}, {0.3, 0.9}};
    const auto out = flow_matching_loss(m, p, b, Label::orig);
    EXPECT_DOUBLE_EQ(out.loss, 0.25);
    EXPECT_DOUBLE_EQ(out.per_sample[0], 0.25);
    EXPECT_DOUBLE_EQ(out.per_sample[1], 0.25);
}

TEST(FlowLoss, FreshNetworkLossIsMeanSquaredTarget) {
    const FlowNet net(tiny_config());
    const auto p = net.init_params<double>(3);
    const auto b = random_batch<double>(3, net.config().latent_shape(), 4);
    double expect = 0;
    for (std::size_t i = 0; i < b.z1.size(); ++i) expect += std::pow(b.z1[i] - b.z0_orig[i], 2);
    expect /= static_cast<double>(b.z1.size());
    EXPECT_NEAR(flow_matching_loss(net, p, b, Label::orig).loss, expect, 1e-12);
}

TEST(FlowLoss, AffineGradientMatchesClosedForm) {
    const AffineField m;
    const auto p = AffineField::params<double>(0.3, -0.2);
    const auto b = random_batch<double>(4, {2, 3, 3}, 5);
    auto g = p.zeros_like();
    (void)flow_matching_loss(m, p, b, Label::refined, &g);
    double da = 0, db = 0;
    const auto zt = interpolate_batch<double>(b.z0_refined, b.z1, b.t);
    for (std::size_t i = 0; i < zt.size(); ++i) {
        const double r = 0.3 * zt[i] - 0.2 - (b.z1[i] - b.z0_refined[i]);
        da += 2 * r * zt[i] / static_cast<double>(zt.size());
        db += 2 * r / static_cast<double>(zt.size());
    }
    EXPECT_NEAR(g[0][0], da, 1e-12);
    EXPECT_NEAR(g[1][0], db, 1e-12);
}

TEST(FlowLoss, NetworkGradientsMatchFiniteDifferences) {
    const FlowNet net(tiny_config());
    auto p = net.init_params<double>(9);
    test_util::randomize(p, 10, 0.3);
    const auto b = random_batch<double>(2, net.config().latent_shape(), 11);
    for (bool rds : {false, true}) {
        auto g = p.zeros_like();
        auto f = [&](const nn::ParamStore<double>& q) {
            return rds ? dynamic_selection_loss(net, q, b).loss : flow_matching_loss(net, q, b, Label::orig).loss;
        };
        if (rds)
            (void)dynamic_selection_loss(net, p, b, &g);
        else
            (void)flow_matching_loss(net, p, b, Label::orig, &g);
        const auto r = test_util::check_param_gradients(p, g, f, 60, 12);
        EXPECT_LT(r.max_rel_error, 1e-5) << (rds ? "rds: " : "plain: ") << r.worst;
    }
}

TEST(FlowLoss, BatchOrderDoesNotChangeTheLoss) {
    const FlowNet net(tiny_config());
    auto p = net.init_params<double>(1);
    test_util::randomize(p, 2, 0.2);
    const auto b = random_batch<double>(4, net.config().latent_shape(), 3);
    const std::vector<int> perm{2, 0, 3, 1};
    auto q = b;
    const std::size_t per = b.z1.size() / 4;
    for (int n = 0; n < 4; ++n) {
        const std::size_t src = static_cast<std::size_t>(perm[static_cast<std::size_t>(n)]) * per, dst = n * per;
        std::copy_n(b.z1.data() + src, per, q.z1.data() + dst);
        std::copy_n(b.z0_orig.data() + src, per, q.z0_orig.data() + dst);
        std::copy_n(b.z0_refined.data() + src, per, q.z0_refined.data() + dst);
        q.t[static_cast<std::size_t>(n)] = b.t[static_cast<std::size_t>(perm[static_cast<std::size_t>(n)])];
        q.prompts[static_cast<std::size_t>(n)] = b.prompts[static_cast<std::size_t>(perm[static_cast<std::size_t>(n)])];
    }
    const auto a = dynamic_selection_loss(net, p, b), c = dynamic_selection_loss(net, p, q);
    EXPECT_NEAR(a.loss, c.loss, 1e-12);
    for (int n = 0; n < 4; ++n) {
        EXPECT_NEAR(c.per_sample[static_cast<std::size_t>(n)],
                    a.per_sample[static_cast<std::size_t>(perm[static_cast<std::size_t>(n)])], 1e-12);
    }
}

// ---------------------------------------------------------------------------
// Dynamic selection

TEST(DynamicSelection, EqualsPerSampleMinimum) {
    const AffineField m;
    std::mt19937_64 rng(20);
    std::normal_distribution<double> n(0, 1);
    for (int trial = 0; trial < 1000; ++trial) {
        const auto p = AffineField::params<double>(n(rng), n(rng));
        const int b = 1 + trial % 5;
        const auto batch = random_batch<double>(b, {2, 2, 2}, 1000 + static_cast<std::uint64_t>(trial));
        const auto lo = flow_matching_loss(m, p, batch, Label::orig);
        const auto lr = flow_matching_loss(m, p, batch, Label::refined);
        const auto ds = dynamic_selection_loss(m, p, batch);
        double mean = 0;
        for (int k = 0; k < b; ++k) {
            const auto i = static_cast<std::size_t>(k);
            ASSERT_EQ(ds.per_sample[i], std::min(lo.per_sample[i], lr.per_sample[i]));
            ASSERT_EQ(ds.chose_original[i] != 0, lo.per_sample[i] < lr.per_sample[i]);
            mean += ds.per_sample[i];
        }
        ASSERT_NEAR(ds.loss, mean / b, 1e-15);
        ASSERT_LE(ds.loss, std::min(lo.loss, lr.loss) + 1e-15);
    }
}

TEST(DynamicSelection, TiesGoToTheRefinedLabel) {
    const AffineField m;
    const auto p = AffineField::params<double>(0.5, 0.1);
    auto b = random_batch<double>(3, {2, 2, 2}, 7);
    b.z0_refined = b.z0_orig;
    const auto ds = dynamic_selection_loss(m, p, b);
    for (char c : ds.chose_original) EXPECT_EQ(c, 0);
}

TEST(DynamicSelection, GradientIgnoresTheRejectedLabel) {
    const FlowNet net(tiny_config());
    auto p = net.init_params<double>(4);
    test_util::randomize(p, 5, 0.2);
    const auto b = random_batch<double>(3, net.config().latent_shape(), 6);
    auto g = p.zeros_like();
    const auto ds = dynamic_selection_loss(net, p, b, &g);

    // gradient of the plain loss on the selected labels
    FlowBatch<double> chosen = b;
    const std::size_t per = b.z1.size() / 3;
    for (std::size_t n = 0; n < 3; ++n)
        if (!ds.chose_original[n]) std::copy_n(b.z0_refined.data() + n * per, per, chosen.z0_orig.data() + n * per);
    auto g_ref = p.zeros_like();
    (void)flow_matching_loss(net, p, chosen, Label::orig, &g_ref);
    EXPECT_EQ(g, g_ref);

    // push every rejected label further away; the selection and gradient stay put
    auto far = b;
    for (std::size_t n = 0; n < 3; ++n) {
        Tensor<double>& rejected = ds.chose_original[n] ? far.z0_refined : far.z0_orig;
        const Tensor<double>& kept = ds.chose_original[n] ? b.z0_refined : b.z0_orig;
        for (std::size_t i = n * per; i < (n + 1) * per; ++i) rejected[i] = kept[i] + (kept[i] - b.z1[i]) * 3 + 5;
    }
    auto g_far = p.zeros_like();
    const auto ds_far = dynamic_selection_loss(net, p, far, &g_far);
    ASSERT_EQ(ds_far.chose_original, ds.chose_original);
    EXPECT_EQ(g_far, g);
}

// ---------------------------------------------------------------------------
// Optimizer

TEST(Adam, ScalarOracle) {
    auto p = AffineField::params<double>(1.0, 0.0);
    auto s = AdamState<double>::like(p);
    OptimizerConfig cfg;
    cfg.lr = 0.1;
    auto g = p.zeros_like();
    g[0][0] = 0.5;
    // m = 0.05, v = 0.00025; bias-corrected 0.5 and 0.25
    EXPECT_DOUBLE_EQ(adam_step(p, g, s, cfg), 0.5);
    EXPECT_NEAR(p[0][0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
    EXPECT_EQ(p[1][0], 0.0);
    g[0][0] = -0.25;
    (void)adam_step(p, g, s, cfg);
    const double m = 0.9 * 0.05 + 0.1 * -0.25, v = 0.999 * 0.00025 + 0.001 * 0.0625;
    const double mh = m / (1 - 0.81), vh = v / (1 - 0.999 * 0.999);
    EXPECT_NEAR(p[0][0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8) - 0.1 * mh / (std::sqrt(vh) + 1e-8), 1e-14);
    EXPECT_EQ(s.t, 2);
}

TEST(Adam, ClipsByGlobalNorm) {
    auto p = AffineField::params<double>(0, 0);
    auto s = AdamState<double>::like(p);
    auto g = p.zeros_like();
    g[0][0] = 3;
    g[1][0] = 4;
    OptimizerConfig cfg;
    EXPECT_DOUBLE_EQ(adam_step(p, g, s, cfg), 5.0);
    EXPECT_NEAR(s.m[0][0], 0.1 * 0.6, 1e-15);
    EXPECT_NEAR(s.m[1][0], 0.1 * 0.8, 1e-15);
}

TEST(Adam, ZeroLearningRateLeavesParametersUnchanged) {
    const FlowNet net(tiny_config());
    auto p = net.init_params<float>(1);
    test_util::randomize(p, 2, 0.1);
    const auto before = p;
    auto s = AdamState<float>::like(p);
    OptimizerConfig cfg;
    cfg.lr = 0;
    auto g = p;
    for (int k = 0; k < 5; ++k) (void)adam_step(p, g, s, cfg);
    EXPECT_EQ(p, before);
}

TEST(TrainStep, SkipsNonFiniteGradientsThenGivesUp) {
    AffineField m;
    m.poison = true;
    TrainState<double> s{AffineField::params<double>(0.1, 0.1), {}, 0, 0, 0, 0, 0};
    s.adam = AdamState<double>::like(s.params);
    const auto before = s.params;
    TrainConfig cfg;
    const auto b = random_batch<double>(2, {2, 2, 2}, 3);
    for (int k = 1; k <= 10; ++k) {
        const auto r = train_step(m, s, b, cfg);
        EXPECT_TRUE(r.skipped);
        EXPECT_EQ(s.consecutive_skips, k);
    }
    EXPECT_EQ(s.params, before);
    EXPECT_THROW(train_step(m, s, b, cfg), NumericalError);
    m.poison = false;
    s.consecutive_skips = 0;
    EXPECT_FALSE(train_step(m, s, b, cfg).skipped);
    EXPECT_EQ(s.consecutive_skips, 0);
    EXPECT_EQ(s.skipped_total, 11);
}

TEST(TrainStep, NonFiniteLossIsNumericalError) {
    const AffineField m;
    TrainState<double> s{AffineField::params<double>(0.1, std::numeric_limits<double>::infinity()), {}, 0, 0, 0, 0, 0};
    s.adam = AdamState<double>::like(s.params);
    TrainConfig cfg;
    EXPECT_THROW(train_step(m, s, random_batch<double>(2, {2, 2, 2}, 3), cfg), NumericalError);
}

// ---------------------------------------------------------------------------
// Data order

TEST(EpochOrder, IsAPermutationAndDeterministic) {
    const auto a = epoch_order(5, 0, 50), b = epoch_order(5, 0, 50), c = epoch_order(5, 1, 50);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    auto sorted = a;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) EXPECT_EQ(sorted[static_cast<std::size_t>(i)], i);
}

TEST(MakeBatch, EveryExampleOncePerEpoch) {
    const auto data = toy_examples(10, 1);
    const LatentCodec codec;
    TrainConfig cfg;
    cfg.batch_size = 4;
    cfg.seed = 3;
    std::vector<int> seen, idx;
    for (std::int64_t step = 0; step < 5; ++step) {
        const auto b = make_batch<float>(data, codec, cfg, step, &idx);
        seen.insert(seen.end(), idx.begin(), idx.end());
        for (float t : b.t) EXPECT_TRUE(t >= 0.f && t <= 1.f);
    }
    for (int e = 0; e < 2; ++e) {
        std::vector<int> epoch(seen.begin() + e * 10, seen.begin() + (e + 1) * 10);
        std::sort(epoch.begin(), epoch.end());
        for (int i = 0; i < 10; ++i) EXPECT_EQ(epoch[static_cast<std::size_t>(i)], i);
    }
    const auto again = make_batch<float>(data, codec, cfg, 3, &idx);
    const auto first = make_batch<float>(data, codec, cfg, 3);
    EXPECT_EQ(again.z1, first.z1);
    EXPECT_EQ(again.t, first.t);
}

// ---------------------------------------------------------------------------
// Checkpoints and the loop

TEST(Checkpoint, RoundTripIsBitExact) {
    const auto dir = test_util::temp_dir("ckpt_roundtrip");
    const FlowNet net(tiny_config());
    TrainState<float> s;
    s.params = net.init_params<float>(4);
    test_util::randomize(s.params, 5, 0.3);
    s.adam = AdamState<float>::like(s.params);
    s.adam.m = s.params;
    s.adam.t = 17;
    s.step = 42;
    s.skipped_total = 3;
    s.epoch_chosen = 7;
    s.epoch_seen = 9;
    save_checkpoint(dir / "a.ckpt", net.config(), s, true, {{"note", "x=y"}});
    const auto c = load_checkpoint(dir / "a.ckpt");
    EXPECT_EQ(c.net, net.config());
    EXPECT_EQ(c.state.params, s.params);
    EXPECT_EQ(c.state.adam, s.adam);
    EXPECT_EQ(c.state.step, 42);
    EXPECT_EQ(c.state.skipped_total, 3);
    EXPECT_EQ(c.state.epoch_chosen, 7);
    EXPECT_EQ(c.state.epoch_seen, 9);
    EXPECT_TRUE(c.final_mark);
    EXPECT_EQ(c.meta.at("note"), "x=y");
}

TEST(Checkpoint, CorruptFilesAreDataErrors) {
    const auto dir = test_util::temp_dir("ckpt_corrupt");
    const FlowNet net(tiny_config());
    TrainState<float> s;
    s.params = net.init_params<float>(1);
    s.adam = AdamState<float>::like(s.params);
    save_checkpoint(dir / "ok.ckpt", net.config(), s, false);
    const std::string bytes = slurp(dir / "ok.ckpt");
    auto write = [&](const std::string& name, const std::string& content) {
        std::ofstream(dir / name, std::ios::binary) << content;
        return dir / name;
    };
    EXPECT_THROW(load_checkpoint(write("trunc.ckpt", bytes.substr(0, bytes.size() - 7))), DataError);
    EXPECT_THROW(load_checkpoint(write("tail.ckpt", bytes + "x")), DataError);
    EXPECT_THROW(load_checkpoint(write("magic.ckpt", "NOTACKPT" + bytes.substr(8))), DataError);
    EXPECT_THROW(load_checkpoint(write("empty.ckpt", "")), DataError);
    EXPECT_THROW(load_checkpoint(dir / "missing.ckpt"), DataError);
}

TEST(TrainLoop, ZeroStepsWritesOnlyTheInitialCheckpoint) {
    const auto dir = test_util::temp_dir("loop_zero");
    const FlowNet net(tiny_config(48, 16));
    TrainConfig cfg;
    cfg.steps = 0;
    cfg.seed = 8;
    const auto s = train_loop(net, toy_examples(4, 2), cfg, {dir, {}, {}, {}});
    EXPECT_EQ(s.step, 0);
    std::vector<std::string> files;
    for (const auto& e : std::filesystem::directory_iterator(dir / "checkpoints")) files.push_back(e.path().filename());
    ASSERT_EQ(files, std::vector<std::string>{"step_00000000.ckpt"});
    const auto c = load_checkpoint(dir / "checkpoints" / files[0]);
    EXPECT_TRUE(c.final_mark);
    EXPECT_EQ(c.state.params, net.init_params<float>(8));
    EXPECT_EQ(slurp(dir / "metrics.csv"), "step,loss,chose_original_rate,grad_norm\n");
}

TEST(TrainLoop, LogsAndCheckpoints) {
    const auto dir = test_util::temp_dir("loop_logs");
    const FlowNet net(tiny_config(48, 16));
    const auto data = toy_examples(6, 3);
    TrainConfig cfg;
    cfg.steps = 6;
    cfg.batch_size = 2;
    cfg.checkpoint_every = 4;
    cfg.opt.lr = 1e-3;
    (void)train_loop(net, data, cfg, {dir, {}, {}, {}});
    for (int step : {0, 4, 6}) EXPECT_TRUE(std::filesystem::exists(checkpoint_path(dir, step))) << step;
    EXPECT_EQ(latest_checkpoint(dir), checkpoint_path(dir, 6));
    EXPECT_TRUE(load_checkpoint(checkpoint_path(dir, 6)).final_mark);
    EXPECT_FALSE(load_checkpoint(checkpoint_path(dir, 4)).final_mark);
    std::ifstream in(dir / "metrics.csv");
    std::string line;
    int rows = 0;
    std::getline(in, line);
    while (std::getline(in, line)) ++rows;
    EXPECT_EQ(rows, 6);
    // 12 samples over 6 examples: two epochs
    const std::string epochs = slurp(dir / "epochs.csv");
    EXPECT_EQ(std::count(epochs.begin(), epochs.end(), '\n'), 3);

    const auto plain = test_util::temp_dir("loop_plain");
    cfg.rds = false;
    (void)train_loop(net, data, cfg, {plain, {}, {}, {}});
    EXPECT_TRUE(slurp(plain / "metrics.csv").starts_with("step,loss,grad_norm\n"));
    EXPECT_FALSE(std::filesystem::exists(plain / "epochs.csv"));
}

TEST(TrainLoop, DeterministicAndResumable) {
    const FlowNet net(tiny_config(48, 16));
    const auto data = toy_examples(5, 4);
    TrainConfig cfg;
    cfg.steps = 6;
    cfg.batch_size = 3;
    cfg.checkpoint_every = 3;
    cfg.seed = 21;
    cfg.opt.lr = 1e-3;
    const auto a_dir = test_util::temp_dir("loop_a"), b_dir = test_util::temp_dir("loop_b");
    const auto a = train_loop(net, data, cfg, {a_dir, {}, {}, {}});
    const auto b = train_loop(net, data, cfg, {b_dir, {}, {}, {}});
    EXPECT_EQ(a.params, b.params);
    EXPECT_EQ(slurp(a_dir / "metrics.csv"), slurp(b_dir / "metrics.csv"));

    // resume b from its step-3 checkpoint and finish again
    const auto r = train_loop(net, data, cfg, {b_dir, checkpoint_path(b_dir, 3), {}, {}});
    EXPECT_EQ(r.step, 6);
    EXPECT_EQ(r.params, a.params);
    EXPECT_EQ(r.adam, a.adam);
    EXPECT_EQ(slurp(a_dir / "metrics.csv"), slurp(b_dir / "metrics.csv"));
    EXPECT_EQ(slurp(a_dir / "epochs.csv"), slurp(b_dir / "epochs.csv"));

    cfg.seed = 22;
    const auto c = train_loop(net, data, cfg, {test_util::temp_dir("loop_c"), {}, {}, {}});
    EXPECT_NE(c.params, a.params);
}

TEST(TrainLoop, ResumeRejectsADifferentArchitecture) {
    const auto dir = test_util::temp_dir("loop_arch");
    TrainConfig cfg;
    cfg.steps = 0;
    (void)train_loop(FlowNet(tiny_config(48, 16)), toy_examples(2, 1), cfg, {dir, {}, {}, {}});
    auto other = tiny_config(48, 16);
    other.ch1 = 8;
    cfg.steps = 1;
    EXPECT_THROW(train_loop(FlowNet(other), toy_examples(2, 1), cfg, {dir, checkpoint_path(dir, 0), {}, {}}), DataError);
}

TEST(TrainLoop, LossDecreasesOnToyData) {
    const FlowNet net(tiny_config(48, 16));
    const auto data = toy_examples(8, 5);
    TrainConfig cfg;
    cfg.steps = 60;
    cfg.batch_size = 4;
    cfg.opt.lr = 3e-3;
    cfg.checkpoint_every = 0;
    std::vector<double> losses;
    (void)train_loop(net, data, cfg,
                     {test_util::temp_dir("loop_loss"), {}, {}, [&](const StepRecord& r) { losses.push_back(r.loss); }});
    ASSERT_EQ(losses.size(), 60u);
    const double first = std::accumulate(losses.begin(), losses.begin() + 10, 0.0);
    const double last = std::accumulate(losses.end() - 10, losses.end(), 0.0);
    EXPECT_LT(last, 0.7 * first);
}
