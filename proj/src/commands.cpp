#include "antlm/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <sstream>
#include <thread>

#include "antlm/checkpoint.hpp"
#include "antlm/data.hpp"
#include "antlm/errors.hpp"
#include "antlm/metrics.hpp"

namespace fs = std::filesystem;

namespace antlm {

namespace {

std::string read_corpus_files(const std::vector<std::string>& files) {
    if (files.empty()) throw ConfigError("no corpus files given");
    std::string raw;
    for (size_t i = 0; i < files.size(); ++i) {
        if (i) raw += "\n\n";  // file boundary is a document boundary
        raw += read_file(files[i]);
    }
    return raw;
}

Tokenizer load_tokenizer_checked(const RunConfig& cfg) {
    if (cfg.tokenizer_path.empty()) throw ConfigError("paths.tokenizer is not set");
    Tokenizer tok = Tokenizer::deserialize(read_file(cfg.tokenizer_path));
    if (tok.vocab_size() != cfg.model.vocab_size) {
        throw ConfigError("model.vocab_size " + std::to_string(cfg.model.vocab_size) +
                          " does not match tokenizer vocabulary " +
                          std::to_string(tok.vocab_size()) + "; set model.vocab_size = " +
                          std::to_string(tok.vocab_size()));
    }
    return tok;
}

std::string ckpt_name(int64_t epochs_completed) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "ckpt_epoch%06lld.antlm",
                  static_cast<long long>(epochs_completed));
    return buf;
}

std::optional<fs::path> latest_checkpoint(const fs::path& dir) {
    std::optional<fs::path> best;
    int64_t best_epochs = -1;
    if (!fs::exists(dir)) return best;
    std::vector<fs::path> entries;
    for (const auto& e : fs::directory_iterator(dir)) {
        if (e.path().extension() == ".antlm") entries.push_back(e.path());
    }
    std::sort(entries.begin(), entries.end());
    for (const auto& p : entries) {
        try {
            const Checkpoint c = Checkpoint::load(p.string());
            if (c.epochs_completed > best_epochs) {
                best_epochs = c.epochs_completed;
                best = p;
            }
        } catch (const Error&) {
            // not a readable checkpoint; skip
        }
    }
    return best;
}

std::vector<ScoringMode> scoring_modes(const std::string& flag, Objective outgoing) {
    if (flag == "clm") return {ScoringMode::CausalLogProb};
    if (flag == "pll") return {ScoringMode::PseudoLogLikelihood};
    if (flag == "both") return {ScoringMode::CausalLogProb, ScoringMode::PseudoLogLikelihood};
    if (flag == "auto") {
        return {outgoing == Objective::CLM ? ScoringMode::CausalLogProb
                                           : ScoringMode::PseudoLogLikelihood};
    }
    throw ConfigError("unknown --scoring value '" + flag + "' (want auto|clm|pll|both)");
}

}  // namespace

void cmd_tokenizer_train(const TokenizerTrainArgs& args) {
    RunConfig cfg;
    if (!args.config_path.empty()) cfg = RunConfig::load(args.config_path);
    std::vector<std::string> files = args.corpus.empty() ? cfg.corpus_files() : args.corpus;
    const int64_t vocab_size = args.vocab_size > 0 ? args.vocab_size : cfg.tokenizer_vocab_size;
    const std::string out = args.out_path.empty() ? cfg.tokenizer_path : args.out_path;
    if (out.empty()) throw ConfigError("tokenizer-train: no output path given");

    const std::string cleaned = preprocess_text(read_corpus_files(files));
    const Tokenizer tok = train_bpe(cleaned, vocab_size);
    if (const fs::path parent = fs::path(out).parent_path(); !parent.empty()) {
        fs::create_directories(parent);
    }
    write_file(out, tok.serialize());
    std::cerr << "tokenizer: " << tok.vocab_size() << " tokens (" << tok.merges.size()
              << " merges) -> " << out << "\n";
}

namespace {

struct TrainSession {
    RunConfig cfg;
    Tokenizer tok;
    PackedDataset data;
    std::unique_ptr<TransformerLM> model;
    TrainerState state;
    std::vector<MinimalPair> pairs;  // empty when no pairs file configured
};

TrainSession prepare_session(RunConfig cfg) {
    cfg.validate();
    TrainSession s;
    s.cfg = cfg;
    s.tok = load_tokenizer_checked(cfg);
    s.data = load_corpus(s.tok, read_corpus_files(cfg.corpus_files()), cfg.effective_seq_len());
    if (s.data.sequences.rows == 0) {
        throw ConfigError("corpus packs to zero rows at seq_len " +
                          std::to_string(cfg.effective_seq_len()));
    }
    ModelConfig mc = cfg.model;
    mc.seed = cfg.seed;
    s.model = std::make_unique<TransformerLM>(mc);
    s.state.optim = AdamWState::init(s.model->parameters(), cfg.weight_decay);
    if (!cfg.eval_pairs_path.empty()) {
        const PairFile pf = parse_pair_file(read_file(cfg.eval_pairs_path));
        s.pairs = pf.pairs;
    }
    return s;
}

// Shared by cmd_train and compare cells. Returns the training log.
TrainingLog run_session(TrainSession& s, const fs::path& out_dir, const std::string& scoring,
                        int64_t halt_after_epoch, bool write_checkpoints) {
    fs::create_directories(out_dir);
    MetricsCsv metrics((out_dir / "metrics.csv").string());
    std::optional<PhaseEvalCsv> phase_eval;
    if (!s.pairs.empty()) phase_eval.emplace((out_dir / "phase_eval.csv").string());

    const VocabView vocab = s.tok.vocab_view();
    TrainOptions opts = s.cfg.train_options();

    TrainHooks hooks;
    hooks.on_metrics = [&](const MetricsRow& row) { metrics.append(row); };
    hooks.on_epoch_end = [&](const EpochEndInfo& info) {
        const bool eval_now = info.phase_boundary || (info.epoch + 1) % s.cfg.eval_every == 0;
        if (eval_now && phase_eval) {
            for (ScoringMode mode : scoring_modes(scoring, info.objective)) {
                const EvalReport rep = minimal_pair_accuracy(*s.model, s.tok, s.pairs, mode);
                phase_eval->append(info.epoch, info.phase_index, info.objective, rep);
            }
        }
        if (info.phase_boundary && write_checkpoints) {
            const Checkpoint c = Checkpoint::capture(s.cfg, s.tok, *s.model, s.state,
                                                     Rng(s.cfg.seed).state());
            c.save((out_dir / ckpt_name(s.state.epochs_completed)).string());
        }
    };
    if (halt_after_epoch > 0) {
        hooks.should_halt = [halt_after_epoch](int64_t done) { return done >= halt_after_epoch; };
    }

    TrainingLog log = run_training(*s.model, s.data, opts, s.state, vocab, hooks);

    if (!log.halted && write_checkpoints) {
        const Checkpoint c =
            Checkpoint::capture(s.cfg, s.tok, *s.model, s.state, Rng(s.cfg.seed).state());
        c.save((out_dir / "ckpt_final.antlm").string());
    }
    return log;
}

}  // namespace

void cmd_train(const TrainArgs& args) {
    RunConfig cfg;
    std::optional<Checkpoint> resume_from;
    fs::path out_dir;

    if (args.resume) {
        if (args.out_dir.empty() && args.config_path.empty()) {
            throw ConfigError("--resume needs --out or --config to locate the checkpoint dir");
        }
        const fs::path dir = args.out_dir.empty()
                                 ? fs::path(RunConfig::load(args.config_path).checkpoint_dir)
                                 : fs::path(args.out_dir);
        const auto latest = latest_checkpoint(dir);
        if (!latest) throw ConfigError("--resume: no checkpoint found under " + dir.string());
        resume_from = Checkpoint::load(latest->string());
        cfg = RunConfig::parse(resume_from->config_text);  // resumed runs keep their config
        out_dir = dir;
        std::cerr << "resuming from " << latest->string() << " (epochs completed: "
                  << resume_from->epochs_completed << ")\n";
    } else {
        if (args.config_path.empty()) throw ConfigError("train: --config is required");
        cfg = RunConfig::load(args.config_path);
        if (!args.schedule_override.empty()) cfg.schedule_text = args.schedule_override;
        if (args.seed_override) cfg.seed = *args.seed_override;
        out_dir = args.out_dir.empty() ? fs::path(cfg.checkpoint_dir) : fs::path(args.out_dir);
        if (out_dir.empty()) throw ConfigError("train: no output directory (set paths.checkpoint_dir or --out)");
    }

    TrainSession s = prepare_session(cfg);
    if (resume_from) {
        resume_from->restore_params(*s.model);
        s.state = resume_from->restore_trainer_state(s.model->parameters(), cfg.weight_decay);
    }
    const TrainingLog log =
        run_session(s, out_dir, args.scoring, args.halt_after_epoch, /*write_checkpoints=*/true);
    std::cerr << "training " << (log.halted ? "halted" : "complete") << " after "
              << log.epochs_completed << " epochs\n";
}

std::vector<EvalReport> cmd_eval(const EvalArgs& args) {
    const Checkpoint ckpt = Checkpoint::load(args.checkpoint_path);
    const RunConfig cfg = RunConfig::parse(ckpt.config_text);
    const Tokenizer tok = Tokenizer::deserialize(ckpt.tokenizer_text);
    ModelConfig mc = cfg.model;
    mc.seed = cfg.seed;
    TransformerLM model(mc);
    ckpt.restore_params(model);

    const PairFile pf = parse_pair_file(read_file(args.pairs_path));
    for (const auto& m : pf.malformed) std::cerr << args.pairs_path << ": " << m << "\n";
    const size_t considered = pf.pairs.size() + pf.malformed.size();
    if (considered == 0) throw ContractError("eval: pair file has no pairs");
    if (pf.malformed.size() * 20 > considered) {  // > 5%
        throw ParseError("eval: " + std::to_string(pf.malformed.size()) + " of " +
                         std::to_string(considered) + " lines malformed (> 5%), aborting");
    }
    if (pf.pairs.empty()) throw ContractError("eval: pair file has no valid pairs");

    std::vector<EvalReport> reports;
    std::ostringstream csv;
    bool header_done = false;
    for (ScoringMode mode : scoring_modes(args.scoring, Objective::CLM)) {
        const EvalReport rep = minimal_pair_accuracy(model, tok, pf.pairs, mode);
        if (!args.quiet) std::cout << eval_report_table(rep) << "\n";
        std::string block = eval_report_csv(rep);
        if (header_done) block = block.substr(block.find('\n') + 1);  // keep one header
        header_done = true;
        csv << block;
        reports.push_back(rep);
    }
    fs::create_directories(args.out_dir);
    write_file((fs::path(args.out_dir) / "eval.csv").string(), csv.str());
    return reports;
}

double CompareResult::median_macro(const std::string& schedule, ScoringMode mode) const {
    std::vector<double> vals;
    for (const CompareCell& c : cells) {
        if (c.schedule != schedule || c.failed) continue;
        vals.push_back(mode == ScoringMode::CausalLogProb ? c.macro_clm : c.macro_pll);
    }
    if (vals.empty()) return std::nan("");
    std::sort(vals.begin(), vals.end());
    const size_t n = vals.size();
    return n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
}

CompareResult cmd_compare(const CompareArgs& args) {
    if (args.schedules.size() < 1) throw ConfigError("compare: need at least one schedule");
    if (args.seeds.empty()) throw ConfigError("compare: need at least one seed");
    RunConfig base = RunConfig::load(args.config_path);
    if (base.eval_pairs_path.empty()) throw ConfigError("compare: paths.eval_pairs is required");

    // Equal-total check (the harness still runs unequal totals, with a warning).
    std::vector<int64_t> totals;
    for (const auto& s : args.schedules) totals.push_back(parse_schedule(s).total_epochs());
    for (size_t i = 1; i < totals.size(); ++i) {
        if (totals[i] != totals[0]) {
            std::cerr << "compare: warning: schedule '" << args.schedules[i] << "' totals "
                      << totals[i] << " epochs vs '" << args.schedules[0] << "' at " << totals[0]
                      << "\n";
        }
    }

    CompareResult result;
    result.schedules = args.schedules;
    result.seeds = args.seeds;
    result.cells.resize(args.schedules.size() * args.seeds.size());

    std::vector<std::pair<size_t, size_t>> cells;  // (schedule idx, seed idx)
    for (size_t si = 0; si < args.schedules.size(); ++si) {
        for (size_t ki = 0; ki < args.seeds.size(); ++ki) cells.emplace_back(si, ki);
    }

    const fs::path out_root(args.out_dir);
    fs::create_directories(out_root);

    auto run_cell = [&](size_t cell_idx) {
        const auto [si, ki] = cells[cell_idx];
        CompareCell& cell = result.cells[si * args.seeds.size() + ki];
        cell.schedule = args.schedules[si];
        cell.seed = args.seeds[ki];
        try {
            RunConfig cfg = base;
            cfg.schedule_text = args.schedules[si];
            cfg.seed = args.seeds[ki];
            const fs::path cell_dir =
                out_root / ("cell_" + std::to_string(si) + "_s" + std::to_string(cell.seed));
            TrainSession s = prepare_session(cfg);
            run_session(s, cell_dir, "both", 0, /*write_checkpoints=*/false);
            cell.macro_clm =
                minimal_pair_accuracy(*s.model, s.tok, s.pairs, ScoringMode::CausalLogProb)
                    .macro_average;
            cell.macro_pll =
                minimal_pair_accuracy(*s.model, s.tok, s.pairs, ScoringMode::PseudoLogLikelihood)
                    .macro_average;
        } catch (const std::exception& e) {
            cell.failed = true;
            cell.error = e.what();
            std::cerr << "compare: cell schedule='" << cell.schedule << "' seed=" << cell.seed
                      << " failed: " << e.what() << "\n";
        }
    };

    const int64_t jobs = std::max<int64_t>(1, std::min<int64_t>(args.jobs,
                                                                static_cast<int64_t>(cells.size())));
    if (jobs == 1) {
        for (size_t i = 0; i < cells.size(); ++i) run_cell(i);
    } else {
        std::atomic<size_t> next{0};
        std::vector<std::thread> workers;
        for (int64_t w = 0; w < jobs; ++w) {
            workers.emplace_back([&] {
                while (true) {
                    const size_t i = next.fetch_add(1);
                    if (i >= cells.size()) return;
                    run_cell(i);
                }
            });
        }
        for (auto& t : workers) t.join();
    }

    write_file((out_root / "grid.csv").string(), compare_grid_csv(result));
    return result;
}

namespace {

std::string fmt_macro(double v) {
    if (std::isnan(v)) return "NA";
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", v);
    return buf;
}

}  // namespace

std::string compare_grid_csv(const CompareResult& r) {
    // one row per schedule; per-seed and median columns for each scorer
    std::ostringstream os;
    os << "schedule,total_epochs";
    for (ScoringMode mode : {ScoringMode::CausalLogProb, ScoringMode::PseudoLogLikelihood}) {
        for (uint64_t s : r.seeds) os << ',' << scoring_mode_name(mode) << "_s" << s;
        os << ',' << scoring_mode_name(mode) << "_median";
    }
    os << "\n";
    for (const auto& sched : r.schedules) {
        os << sched << ',' << parse_schedule(sched).total_epochs();
        for (ScoringMode mode : {ScoringMode::CausalLogProb, ScoringMode::PseudoLogLikelihood}) {
            for (size_t ki = 0; ki < r.seeds.size(); ++ki) {
                const CompareCell* cell = nullptr;
                for (const auto& c : r.cells) {
                    if (c.schedule == sched && c.seed == r.seeds[ki]) cell = &c;
                }
                if (!cell || cell->failed) {
                    os << ",NA";
                } else {
                    os << ','
                       << fmt_macro(mode == ScoringMode::CausalLogProb ? cell->macro_clm
                                                                       : cell->macro_pll);
                }
            }
            os << ',' << fmt_macro(r.median_macro(sched, mode));
        }
        os << "\n";
    }
    return os.str();
}

std::string compare_summary_table(const CompareResult& r) {
    std::ostringstream os;
    size_t w = 8;
    for (const auto& s : r.schedules) w = std::max(w, s.size());
    os << "schedule" << std::string(w - 8 + 2, ' ') << "median clm   median pll\n";
    for (const auto& s : r.schedules) {
        os << s << std::string(w - s.size() + 2, ' ')
           << fmt_macro(r.median_macro(s, ScoringMode::CausalLogProb)) << "     "
           << fmt_macro(r.median_macro(s, ScoringMode::PseudoLogLikelihood)) << "\n";
    }
    return os.str();
}

}  // namespace antlm
