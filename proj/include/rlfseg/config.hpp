// SPDX-License-Identifier: Apache-2.0
//
// Flat key=value run configuration. Every key has a default and a one-line
// description; files and command-line flags may only set known keys.
#pragma once

#include <array>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "rlfseg/errors.hpp"

namespace rlfseg {

struct ConfigKey {
    const char* name;
    const char* default_value;
    const char* help;
};

inline constexpr std::array<ConfigKey, 37> kConfigKeys{{
    {"seed", "0", "master seed for data, initialization, shuffling and anchors"},
    {"data", "data", "dataset directory"},
    {"run_dir", "", "output directory for this invocation (default: runs/<command>-<timestamp>)"},
    {"size", "6000", "total number of generated records, split 10:1:1"},
    {"hard_fraction", "0.3", "fraction of hard scenes"},
    {"refiner", "region_grow", "label refiner: region_grow or identity"},
    {"anchor_points", "5", "number of k-means anchor points"},
    {"tau", "0.99", "refinement stops once consecutive masks reach this IoU"},
    {"max_iterations", "10", "refinement iteration budget"},
    {"steps", "20000", "optimizer steps"},
    {"batch_size", "8", "training batch size"},
    {"lr", "1e-4", "Adam learning rate"},
    {"clip_norm", "1.0", "global gradient norm cap (0 disables)"},
    {"rds", "on", "dynamic selection between original and refined labels: on or off"},
    {"checkpoint_every", "2000", "checkpoint period in steps (0: only first and last)"},
    {"resume", "", "checkpoint to resume training from"},
    {"model_ch1", "32", "UNet width at full latent resolution"},
    {"model_ch2", "64", "UNet width at half resolution"},
    {"model_ch3", "128", "UNet width at quarter resolution"},
    {"model_groups", "8", "GroupNorm groups"},
    {"model_time_dim", "64", "sinusoidal time feature size"},
    {"model_cond_dim", "64", "prompt token embedding size"},
    {"model_emb_dim", "128", "time and condition embedding width"},
    {"checkpoint", "", "checkpoint file, or a training run directory (latest checkpoint)"},
    {"sampler", "one_step", "one_step, aos or euler_k"},
    {"euler_steps", "1,2,5,15", "step counts K for euler_k and diagnose-steps"},
    {"eval_split", "test", "split to evaluate: train, val or test"},
    {"eval_difficulty", "all", "all, easy or hard"},
    {"eval_batch", "16", "evaluation batch size"},
    {"aos_epsilon", "0.01", "stable-region tolerance"},
    {"aos_gamma_cap", "1.0", "upper bound on the AOS scale"},
    {"boundary_radius", "2", "boundary F matching radius in pixels"},
    {"t_list", "1.0,0.9,0.8,0.7,0.5,0.3,0.1", "path-crossing nodes, descending from 1.0"},
    {"diag_samples", "64", "records used for the path-crossing cosine curves"},
    {"save_predictions", "off", "write grayscale predictions as PGM files: on or off"},
    {"log_every", "100", "progress line period in steps (0: silent)"},
    {"tolerant", "off", "skip unreadable records instead of failing: on or off"},
}};

class RunConfig {
public:
    RunConfig() {
        for (const auto& k : kConfigKeys) values_[k.name] = k.default_value;
    }

    static bool known(const std::string& key) {
        for (const auto& k : kConfigKeys)
            if (key == k.name) return true;
        return false;
    }

    void set(const std::string& key, const std::string& value) {
        if (!known(key)) throw InvalidArgument("unknown config key '" + key + "'");
        values_[key] = value;
    }

    /// key=value lines; '#' starts a comment; blank lines are ignored.
    void merge_text(const std::string& text, const std::string& origin = "config") {
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            const auto eq = line.find('=');
            if (trim(line).empty()) continue;
            if (eq == std::string::npos)
                throw InvalidArgument(origin + ":" + std::to_string(lineno) + ": expected key=value");
            const std::string key = trim(line.substr(0, eq));
            if (!known(key)) throw InvalidArgument(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
            values_[key] = trim(line.substr(eq + 1));
        }
    }

    void merge_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot read config file " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        merge_text(ss.str(), path);
    }

    const std::string& str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw InvalidArgument("unknown config key '" + key + "'");
        return it->second;
    }

    long long integer(const std::string& key) const {
        const std::string& v = str(key);
        try {
            std::size_t used = 0;
            const long long x = std::stoll(v, &used);
            if (used == v.size()) return x;
        } catch (const std::exception&) {
        }
        throw InvalidArgument("config key '" + key + "' expects an integer, got '" + v + "'");
    }

    double real(const std::string& key) const {
        const std::string& v = str(key);
        try {
            std::size_t used = 0;
            const double x = std::stod(v, &used);
            if (used == v.size()) return x;
        } catch (const std::exception&) {
        }
        throw InvalidArgument("config key '" + key + "' expects a number, got '" + v + "'");
    }

    bool flag(const std::string& key) const {
        const std::string& v = str(key);
        if (v == "on" || v == "true" || v == "1") return true;
        if (v == "off" || v == "false" || v == "0") return false;
        throw InvalidArgument("config key '" + key + "' expects on or off, got '" + v + "'");
    }

    std::vector<double> reals(const std::string& key) const {
        std::vector<double> out;
        std::istringstream in(str(key));
        for (std::string item; std::getline(in, item, ',');) {
            RunConfig tmp;
            tmp.values_[key] = trim(item);
            out.push_back(tmp.real(key));
        }
        if (out.empty()) throw InvalidArgument("config key '" + key + "' expects a comma-separated list");
        return out;
    }

    std::vector<int> integers(const std::string& key) const {
        std::vector<int> out;
        for (double v : reals(key)) {
            if (v != static_cast<int>(v)) throw InvalidArgument("config key '" + key + "' expects integers");
            out.push_back(static_cast<int>(v));
        }
        return out;
    }

    /// Effective configuration, one key=value per line in declaration order.
    std::string echo() const {
        std::string out;
        for (const auto& k : kConfigKeys) out += std::string(k.name) + "=" + values_.at(k.name) + "\n";
        return out;
    }

    friend bool operator==(const RunConfig&, const RunConfig&) = default;

private:
    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return "";
        return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
    }

    std::map<std::string, std::string> values_;
};

} // namespace rlfseg
