#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "antlm/config.hpp"
#include "antlm/eval.hpp"

namespace antlm {

// Subcommand bodies, shaped as library calls so tests can drive them
// directly. The CLI entrypoint maps exceptions to exit codes
// (ConfigError/ParseError -> 2, anything else -> 1).

struct TokenizerTrainArgs {
    std::string config_path;            // optional; flags below override
    std::vector<std::string> corpus;    // corpus files
    int64_t vocab_size = 0;             // 0 = from config
    std::string out_path;
};
void cmd_tokenizer_train(const TokenizerTrainArgs& args);

struct TrainArgs {
    std::string config_path;
    std::string schedule_override;            // empty = keep config
    std::optional<uint64_t> seed_override;
    std::string out_dir;                      // empty = config checkpoint_dir
    bool resume = false;
    int64_t halt_after_epoch = 0;             // 0 = run to completion
    std::string scoring = "auto";             // auto|clm|pll|both
};
void cmd_train(const TrainArgs& args);

struct EvalArgs {
    std::string checkpoint_path;
    std::string pairs_path;
    std::string scoring = "clm";  // clm|pll|both
    std::string out_dir = ".";
    bool quiet = false;
};
std::vector<EvalReport> cmd_eval(const EvalArgs& args);

struct CompareArgs {
    std::string config_path;
    std::vector<std::string> schedules;
    std::vector<uint64_t> seeds;
    std::string out_dir = ".";
    int64_t jobs = 1;
};

struct CompareCell {
    std::string schedule;
    uint64_t seed = 0;
    bool failed = false;
    std::string error;
    double macro_clm = 0.0;
    double macro_pll = 0.0;
};

struct CompareResult {
    std::vector<std::string> schedules;  // input order
    std::vector<uint64_t> seeds;
    std::vector<CompareCell> cells;      // schedule-major, seed-minor

    // NaN when every seed failed.
    double median_macro(const std::string& schedule, ScoringMode mode) const;
};
CompareResult cmd_compare(const CompareArgs& args);

std::string compare_grid_csv(const CompareResult& r);
std::string compare_summary_table(const CompareResult& r);

}  // namespace antlm
