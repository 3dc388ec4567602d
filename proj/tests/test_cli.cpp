// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cstdlib>
#include <fstream>
#include <sys/wait.h>

#include "rlfseg/pipeline.hpp"
#include "test_util.hpp"

using namespace rlfseg;

#ifndef RLFSEG_CLI
#error "RLFSEG_CLI must point at the rlfseg executable"
#endif

namespace {

const std::string kTiny = " --model_ch1 8 --model_ch2 8 --model_ch3 8 --model_groups 4 --model_emb_dim 16"
                          " --model_time_dim 16 --model_cond_dim 8 --log_every 0";

int run_cli(const std::string& args, const fs::path& cwd) {
    const std::string cmd = "cd '" + cwd.string() + "' && '" RLFSEG_CLI "' " + args + " > cli.log 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> read_csv(const fs::path& p) {
    std::vector<std::vector<std::string>> rows;
    std::ifstream in(p);
    for (std::string line; std::getline(in, line);) {
        std::vector<std::string> cells;
        std::istringstream ls(line);
        for (std::string cell; std::getline(ls, cell, ',');) cells.push_back(cell);
        rows.push_back(std::move(cells));
    }
    return rows;
}

std::size_t count_lines(const fs::path& p) {
    const std::string s = slurp(p);
    return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n'));
}

/// One small dataset with refined labels and a briefly trained model, shared by the suite.
class Cli : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        dir_ = test_util::temp_dir("cli");
        ASSERT_EQ(run_cli("gen-data --size 36 --seed 3 --data data --run_dir runs/gen", dir_), 0);
        ASSERT_EQ(run_cli("refine-labels --data data --run_dir runs/refine", dir_), 0);
        ASSERT_EQ(run_cli("train --data data --steps 20 --batch_size 4 --lr 1e-3 --run_dir runs/train" + kTiny, dir_), 0);
    }
    static fs::path dir_;
};

fs::path Cli::dir_;

} // namespace

TEST(CliStandalone, DefaultGenDataWritesSixThousandRecords) {
    const auto dir = test_util::temp_dir("cli_default");
    ASSERT_EQ(run_cli("gen-data --run_dir r", dir), 0);
    EXPECT_EQ(count_lines(dir / "data" / "index.jsonl"), 6000u);
}

TEST(CliStandalone, GenDataSizeAndDeterminism) {
    const auto dir = test_util::temp_dir("cli_gen");
    ASSERT_EQ(run_cli("gen-data --size 10 --data a --run_dir r1", dir), 0);
    ASSERT_EQ(run_cli("gen-data --size 10 --data b --run_dir r2", dir), 0);
    EXPECT_EQ(count_lines(dir / "a" / "index.jsonl"), 10u);
    EXPECT_EQ(slurp(dir / "a" / "index.jsonl"), slurp(dir / "b" / "index.jsonl"));
    EXPECT_EQ(slurp(dir / "a" / "images" / "train_000003.ppm"), slurp(dir / "b" / "images" / "train_000003.ppm"));
    const auto s1 = nlohmann::json::parse(slurp(dir / "r1" / "summary.json"));
    const auto s2 = nlohmann::json::parse(slurp(dir / "r2" / "summary.json"));
    EXPECT_EQ(s1["index_checksum"], s2["index_checksum"]);
    ASSERT_EQ(run_cli("gen-data --size 10 --seed 1 --data c --run_dir r3", dir), 0);
    EXPECT_NE(slurp(dir / "a" / "index.jsonl"), slurp(dir / "c" / "index.jsonl"));
}

TEST(CliStandalone, ConfigFileEchoAndUnknownKeys) {
    const auto dir = test_util::temp_dir("cli_config");
    std::ofstream(dir / "ok.cfg") << "# small\nsize = 5\nseed=9\n";
    ASSERT_EQ(run_cli("gen-data --config ok.cfg --seed 4 --run_dir r", dir), 0);
    const std::string echo = slurp(dir / "r" / "config.txt");
    EXPECT_NE(echo.find("\nsize=5\n"), std::string::npos);
    EXPECT_NE(echo.find("\nseed=4\n"), std::string::npos) << "flags override the config file";
    EXPECT_NE(echo.find("\nlr=1e-4\n"), std::string::npos) << "defaults are echoed too";

    std::ofstream(dir / "bad.cfg") << "size=5\nwarp_factor=9\n";
    EXPECT_EQ(run_cli("gen-data --config bad.cfg --run_dir r2", dir), 1);
    EXPECT_EQ(run_cli("gen-data --warp_factor 9", dir), 1);
    EXPECT_EQ(run_cli("", dir), 1);
    EXPECT_EQ(run_cli("gen-data --size ten --run_dir r3", dir), 1);
}

TEST(CliStandalone, ExitCodes) {
    const auto dir = test_util::temp_dir("cli_exit");
    EXPECT_EQ(run_cli("train --data missing --run_dir r", dir), 2);
    EXPECT_EQ(run_cli("eval --data missing --checkpoint nothing.ckpt --run_dir r", dir), 2);
    ASSERT_EQ(run_cli("gen-data --size 12 --data d --run_dir g", dir), 0);
    EXPECT_EQ(run_cli("train --data d --steps 2 --run_dir t", dir), 2) << "rds needs refined labels";
    EXPECT_EQ(run_cli("train --data d --steps 16 --batch_size 2 --rds off --lr 1e30 --run_dir nan" + kTiny, dir), 3);
    EXPECT_NE(slurp(dir / "cli.log").find("samples: "), std::string::npos) << "numerical failures name the samples";
}

TEST_F(Cli, IdentityRefinerKeepsPolygonLabels) {
    const auto d = dir_ / "identity";
    fs::create_directories(d);
    ASSERT_EQ(run_cli("gen-data --size 12 --data d --run_dir g", d), 0);
    ASSERT_EQ(run_cli("refine-labels --refiner identity --data d --run_dir r", d), 0);
    for (const auto& r : read_dataset(d / "d").records) {
        ASSERT_TRUE(r.mask_refined.has_value());
        EXPECT_EQ(*r.mask_refined, r.mask_poly) << r.id;
    }
    const auto s = nlohmann::json::parse(slurp(d / "r" / "summary.json"));
    EXPECT_EQ(s["mean_iterations"].get<double>(), 1.0);
}

TEST_F(Cli, RefineSidecarAndIdempotence) {
    const auto s = nlohmann::json::parse(slurp(dir_ / "runs" / "refine" / "summary.json"));
    EXPECT_GE(s["mean_iterations"].get<double>(), 1.0);
    EXPECT_LE(s["mean_iterations"].get<double>(), 10.0);
    std::ifstream in(dir_ / "data" / "refine.jsonl");
    std::size_t lines = 0;
    for (std::string line; std::getline(in, line); ++lines) {
        const auto j = nlohmann::json::parse(line);
        EXPECT_TRUE(j.contains("id") && j.contains("iterations") && j.contains("self_iou") && j.contains("anchors"));
        EXPECT_EQ(j["anchors"].size(), 5u);
    }
    EXPECT_EQ(lines, 36u);

    const auto mask = record_paths(dir_ / "data", "train_000000").mask_refined;
    const auto stamp = fs::last_write_time(mask);
    const std::string sidecar = slurp(dir_ / "data" / "refine.jsonl");
    ASSERT_EQ(run_cli("refine-labels --data data --run_dir runs/refine_again", dir_), 0);
    EXPECT_TRUE(nlohmann::json::parse(slurp(dir_ / "runs" / "refine_again" / "summary.json"))["cached"].get<bool>());
    EXPECT_EQ(fs::last_write_time(mask), stamp);
    EXPECT_EQ(slurp(dir_ / "data" / "refine.jsonl"), sidecar);
}

TEST_F(Cli, ZeroStepsWritesOnlyTheInitialCheckpoint) {
    ASSERT_EQ(run_cli("train --data data --steps 0 --run_dir runs/zero" + kTiny, dir_), 0);
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(dir_ / "runs" / "zero" / "checkpoints"))
        files.push_back(e.path().filename().string());
    EXPECT_EQ(files, std::vector<std::string>{"step_00000000.ckpt"});
}

TEST_F(Cli, SelectionRateColumnOnlyWithRds) {
    ASSERT_EQ(run_cli("train --data data --steps 3 --batch_size 2 --rds off --run_dir runs/plain" + kTiny, dir_), 0);
    EXPECT_EQ(read_csv(dir_ / "runs" / "plain" / "metrics.csv")[0],
              (std::vector<std::string>{"step", "loss", "grad_norm"}));
    EXPECT_EQ(read_csv(dir_ / "runs" / "train" / "metrics.csv")[0],
              (std::vector<std::string>{"step", "loss", "chose_original_rate", "grad_norm"}));
    EXPECT_EQ(read_csv(dir_ / "runs" / "train" / "metrics.csv").size(), 21u);
}

TEST_F(Cli, TrainingIsDeterministic) {
    ASSERT_EQ(run_cli("train --data data --steps 5 --batch_size 3 --run_dir runs/det_a" + kTiny, dir_), 0);
    ASSERT_EQ(run_cli("train --data data --steps 5 --batch_size 3 --run_dir runs/det_b" + kTiny, dir_), 0);
    EXPECT_EQ(slurp(dir_ / "runs" / "det_a" / "checkpoints" / "step_00000005.ckpt"),
              slurp(dir_ / "runs" / "det_b" / "checkpoints" / "step_00000005.ckpt"));
    EXPECT_EQ(slurp(dir_ / "runs" / "det_a" / "metrics.csv"), slurp(dir_ / "runs" / "det_b" / "metrics.csv"));
}

TEST_F(Cli, UntrainedOneStepPredictsTheImage) {
    ASSERT_EQ(run_cli("train --data data --steps 0 --run_dir runs/untrained" + kTiny, dir_), 0);
    ASSERT_EQ(run_cli("eval --data data --checkpoint runs/untrained --sampler one_step --run_dir runs/eval0", dir_), 0);
    // the zero field maps every image latent to itself
    const auto records = read_dataset(dir_ / "data", false, "test").records;
    const LatentCodec codec;
    std::vector<MaskImage> gray;
    for (const auto& r : records) gray.push_back(codec.decode_to_mask(codec.encode_image(r.image), -1.f));
    const auto expect = score_predictions("one_step", records, gray);
    const auto rows = read_csv(dir_ / "runs" / "eval0" / "eval_one_step.csv");
    ASSERT_EQ(rows.size(), records.size() + 1);
    for (std::size_t i = 0; i < records.size(); ++i) {
        EXPECT_EQ(rows[i + 1][0], records[i].id);
        EXPECT_NEAR(std::stod(rows[i + 1][2]), expect.rows[i].iou, 1e-8);
        char hash[20];
        std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(expect.rows[i].pred_hash));
        EXPECT_EQ(rows[i + 1][4], hash);
    }
}

TEST_F(Cli, AosReportAgreesWithOneStepWhereGammaIsZero) {
    ASSERT_EQ(run_cli("eval --data data --checkpoint runs/train --sampler one_step --run_dir runs/e_one", dir_), 0);
    // a vanishing tolerance leaves every stable region empty
    ASSERT_EQ(run_cli("eval --data data --checkpoint runs/train --sampler aos --aos_epsilon 1e-30 --run_dir runs/e_aos",
                      dir_),
              0);
    const auto one = read_csv(dir_ / "runs" / "e_one" / "eval_one_step.csv");
    const auto aos = read_csv(dir_ / "runs" / "e_aos" / "eval_aos.csv");
    ASSERT_EQ(aos[0], (std::vector<std::string>{"id", "difficulty", "iou", "boundary_f", "gamma", "stable_count",
                                                "pred_hash", "iou_image_best"}));
    ASSERT_EQ(one.size(), aos.size());
    const auto pr = read_csv(dir_ / "runs" / "e_one" / "pr_one_step.csv");
    ASSERT_GT(pr.size(), 2u);
    EXPECT_EQ(pr[0], (std::vector<std::string>{"threshold", "precision", "recall"}));
    EXPECT_EQ(std::stod(pr.back()[2]), 1.0);
    int zero = 0;
    for (std::size_t i = 1; i < aos.size(); ++i) {
        ASSERT_EQ(aos[i][0], one[i][0]);
        if (std::stod(aos[i][4]) == 0) {
            ++zero;
            EXPECT_EQ(aos[i][6], one[i][4]) << aos[i][0];
        }
    }
    EXPECT_EQ(zero, static_cast<int>(aos.size()) - 1);
}

TEST_F(Cli, EulerReportsAndStepOneMatchesOneStep) {
    ASSERT_EQ(run_cli("eval --data data --checkpoint runs/train --sampler euler_k --euler_steps 1,2,5,15"
                     " --run_dir runs/e_euler",
                     dir_),
              0);
    ASSERT_EQ(run_cli("eval --data data --checkpoint runs/train --sampler one_step --run_dir runs/e_one2", dir_), 0);
    for (int k : {1, 2, 5, 15})
        EXPECT_TRUE(fs::exists(dir_ / "runs" / "e_euler" / ("eval_euler_" + std::to_string(k) + ".csv"))) << k;
    EXPECT_EQ(slurp(dir_ / "runs" / "e_euler" / "eval_euler_1.csv"), slurp(dir_ / "runs" / "e_one2" / "eval_one_step.csv"));
    EXPECT_EQ(read_csv(dir_ / "runs" / "e_euler" / "summary.csv").size(), 5u);
}

TEST_F(Cli, DiagnoseStepsOutputs) {
    ASSERT_EQ(run_cli("diagnose-steps --data data --checkpoint runs/train --euler_steps 1,3,8 --run_dir runs/diag", dir_),
              0);
    const auto steps = read_csv(dir_ / "runs" / "diag" / "steps.csv");
    ASSERT_EQ(steps.size(), 4u);
    EXPECT_EQ(steps[1][0], "1");
    EXPECT_EQ(steps[3][0], "8");
    const auto cos = read_csv(dir_ / "runs" / "diag" / "cosine.csv");
    EXPECT_EQ(cos[0], (std::vector<std::string>{"t", "cosine_vs_t1", "velocity_norm"}));
    std::vector<double> ts;
    for (std::size_t i = 1; i < cos.size(); ++i) ts.push_back(std::stod(cos[i][0]));
    for (double t : {0.9, 0.8, 0.7}) EXPECT_NE(std::find(ts.begin(), ts.end(), t), ts.end()) << t;
    EXPECT_EQ(std::stod(cos[1][1]), 1.0);
    for (const char* f : {"steps.svg", "cosine.svg"}) {
        const std::string svg = slurp(dir_ / "runs" / "diag" / f);
        EXPECT_GT(svg.size(), 200u) << f;
        EXPECT_TRUE(svg.starts_with("<svg")) << f;
    }
    EXPECT_EQ(run_cli("diagnose-steps --data data --checkpoint runs/train --t_list 0.9,0.5 --run_dir runs/diag2", dir_), 1);
}

TEST_F(Cli, ResumeContinuesARun) {
    ASSERT_EQ(run_cli("train --data data --steps 6 --batch_size 2 --checkpoint_every 3 --run_dir runs/full" + kTiny, dir_),
              0);
    ASSERT_EQ(run_cli("train --data data --steps 3 --batch_size 2 --checkpoint_every 3 --run_dir runs/part" + kTiny, dir_),
              0);
    ASSERT_EQ(run_cli("train --data data --steps 6 --batch_size 2 --checkpoint_every 3 --run_dir runs/part"
                     " --resume runs/part/checkpoints/step_00000003.ckpt" +
                         kTiny,
                     dir_),
              0);
    EXPECT_EQ(slurp(dir_ / "runs" / "full" / "metrics.csv"), slurp(dir_ / "runs" / "part" / "metrics.csv"));
    const auto a = load_checkpoint(dir_ / "runs" / "full" / "checkpoints" / "step_00000006.ckpt");
    const auto b = load_checkpoint(dir_ / "runs" / "part" / "checkpoints" / "step_00000006.ckpt");
    EXPECT_EQ(a.state.params, b.state.params);
}
