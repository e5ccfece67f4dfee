// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "finmoe/agents.hpp"
#include "finmoe/model.hpp"
#include "finmoe/sft.hpp"

namespace finmoe {

struct DataConfig {
    std::string corpus_path;   // JSONL corpus; empty means synthesize
    int synth_n = 300;         // used when corpus_path is empty
    uint64_t synth_seed = 1;
    TemplatePolicy policy = TemplatePolicy::round_robin;
    SplitRatios ratios;        // 0.9 / 0.1
    int test_count = 200;      // drawn from the held-out pool
    uint64_t split_seed = 7;
};

struct CliConfig {
    ModelConfig model;
    TrainConfig train;
    DataConfig data;
};

// Reads the JSON config (sections model/train/data); absent fields keep
// their defaults; a malformed field is a ConfigError naming it.
CliConfig load_cli_config(const std::string& path);
std::string cli_config_to_json(const CliConfig& cfg);

// Dispatches one subcommand (build-dataset, train, eval, moa-run,
// route-stats, gradcheck). args excludes the program name. Returns the
// process exit code: 0 success, 1 runtime failure, 2 usage/config error.
int run_command(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace finmoe
