#include <CLI11.hpp>
#include <iostream>

#include "antlm/commands.hpp"
#include "antlm/errors.hpp"

using namespace antlm;

int main(int argc, char** argv) {
    CLI::App app{"antlm: alternating CLM/MLM language-model training laboratory"};
    app.require_subcommand(1);

    TokenizerTrainArgs tt;
    CLI::App* tok_cmd = app.add_subcommand("tokenizer-train", "Train and save a BPE tokenizer");
    tok_cmd->add_option("--config", tt.config_path, "Run config file");
    tok_cmd->add_option("--corpus", tt.corpus, "Corpus file(s)");
    tok_cmd->add_option("--vocab-size", tt.vocab_size, "Target vocabulary size");
    tok_cmd->add_option("--out", tt.out_path, "Output tokenizer file");

    TrainArgs tr;
    CLI::App* train_cmd = app.add_subcommand("train", "Train a model with a phase schedule");
    train_cmd->add_option("--config", tr.config_path, "Run config file");
    train_cmd->add_option("--schedule", tr.schedule_override,
                          "Schedule string, e.g. 4_CLM+16_MLM+4_CLM (overrides config)");
    uint64_t seed_value = 0;
    CLI::Option* seed_opt = train_cmd->add_option("--seed", seed_value, "Seed (overrides config)");
    train_cmd->add_option("--out", tr.out_dir, "Output directory (overrides checkpoint_dir)");
    train_cmd->add_flag("--resume", tr.resume, "Resume from the latest checkpoint in --out");
    train_cmd->add_option("--halt-after-epoch", tr.halt_after_epoch,
                          "Stop cleanly after N epochs (testing aid)");
    train_cmd->add_option("--scoring", tr.scoring, "Phase-boundary eval scorer: auto|clm|pll|both");

    EvalArgs ev;
    CLI::App* eval_cmd = app.add_subcommand("eval", "Score minimal pairs with a checkpoint");
    eval_cmd->add_option("--checkpoint", ev.checkpoint_path, "Checkpoint file")->required();
    eval_cmd->add_option("--pairs", ev.pairs_path, "Tab-separated minimal-pair file")->required();
    eval_cmd->add_option("--scoring", ev.scoring, "clm|pll|both");
    eval_cmd->add_option("--out", ev.out_dir, "Directory for eval.csv");

    CompareArgs cp;
    std::string schedules_joined;
    std::string seeds_joined;
    CLI::App* cmp_cmd = app.add_subcommand("compare", "Train a schedule grid and compare");
    cmp_cmd->add_option("--config", cp.config_path, "Base run config")->required();
    cmp_cmd->add_option("--schedules", schedules_joined, "Comma-separated schedule strings")
        ->required();
    cmp_cmd->add_option("--seeds", seeds_joined, "Comma-separated seeds")->required();
    cmp_cmd->add_option("--out", cp.out_dir, "Output directory for the grid");
    cmp_cmd->add_option("--jobs", cp.jobs, "Parallel training processes");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*tok_cmd) {
            cmd_tokenizer_train(tt);
        } else if (*train_cmd) {
            if (*seed_opt) tr.seed_override = seed_value;
            cmd_train(tr);
        } else if (*eval_cmd) {
            cmd_eval(ev);
        } else if (*cmp_cmd) {
            std::string cur;
            for (char c : schedules_joined + ",") {
                if (c == ',') {
                    if (!cur.empty()) cp.schedules.push_back(cur);
                    cur.clear();
                } else {
                    cur.push_back(c);
                }
            }
            for (char c : seeds_joined + ",") {
                if (c == ',') {
                    if (!cur.empty()) {
                        try {
                            cp.seeds.push_back(std::stoull(cur));
                        } catch (const std::exception&) {
                            throw ParseError("--seeds: '" + cur + "' is not an integer");
                        }
                    }
                    cur.clear();
                } else {
                    cur.push_back(c);
                }
            }
            const CompareResult r = cmd_compare(cp);
            std::cout << compare_summary_table(r);
        }
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        std::cerr << "parse error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
