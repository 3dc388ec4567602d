// SPDX-License-Identifier: Apache-2.0
//
// rlfseg <command> [--config FILE] [--key value ...]
//
// Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "rlfseg/pipeline.hpp"

namespace {

using namespace rlfseg;

struct Command {
    const char* name;
    const char* help;
    void (*run)(const RunConfig&, const fs::path&);
};

const Command kCommands[] = {
    {"gen-data", "generate the synthetic dataset",
     [](const RunConfig& c, const fs::path& d) { (void)cmd_gen_data(c, d, std::cout); }},
    {"refine-labels", "refine polygonized labels and write the sidecar",
     [](const RunConfig& c, const fs::path& d) { (void)cmd_refine_labels(c, d, std::cout); }},
    {"train", "train the flow network",
     [](const RunConfig& c, const fs::path& d) { (void)cmd_train(c, d, std::cout); }},
    {"eval", "evaluate a checkpoint with one_step, aos or euler_k sampling",
     [](const RunConfig& c, const fs::path& d) { (void)cmd_eval(c, d, std::cout); }},
    {"diagnose-steps", "mIoU against Euler step count and path-crossing cosine curves",
     [](const RunConfig& c, const fs::path& d) { (void)cmd_diagnose_steps(c, d, std::cout); }},
};

int run(int argc, char** argv) {
    CLI::App app{"Rectified latent flow segmentation on synthetic shapes"};
    app.require_subcommand(1);
    std::map<std::string, std::map<std::string, std::string>> flags;
    std::map<std::string, std::string> config_files;
    std::map<std::string, CLI::App*> subs;
    for (const auto& cmd : kCommands) {
        CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
        sub->add_option("--config", config_files[cmd.name], "flat key=value config file");
        for (const auto& k : kConfigKeys)
            sub->add_option(std::string("--") + k.name, flags[cmd.name][k.name],
                            std::string(k.help) + " [" + k.default_value + "]");
        subs[cmd.name] = sub;
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    for (const auto& cmd : kCommands) {
        CLI::App* sub = subs[cmd.name];
        if (!sub->parsed()) continue;
        RunConfig cfg;
        if (!config_files[cmd.name].empty()) cfg.merge_file(config_files[cmd.name]);
        for (const auto& k : kConfigKeys)
            if (sub->count(std::string("--") + k.name) > 0) cfg.set(k.name, flags[cmd.name][k.name]);
        const fs::path dir = prepare_run_dir(cfg, cmd.name);
        std::cout << "run directory: " << dir.string() << "\n";
        cmd.run(cfg, dir);
        return 0;
    }
    return 1;
}

} // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const rlfseg::InvalidArgument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const rlfseg::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const rlfseg::DataError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
