#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "antlm/model.hpp"
#include "antlm/objectives.hpp"
#include "antlm/trainer.hpp"

namespace antlm {

// Operator-facing run configuration. File format: flat UTF-8 `key = value`
// lines with dotted section names and '#' comments.
struct RunConfig {
    RunConfig() { mlm.lr.kind = LRKind::CosineWithRestarts; }

    ModelConfig model;
    MaskingPolicy masking;
    std::string schedule_text = "1_CLM";
    ObjectiveOptions clm;   // defaults to cosine decay
    ObjectiveOptions mlm;   // defaults to cosine with restarts
    double weight_decay = 0.01;
    double grad_clip_norm = 0.0;
    LRTimeline lr_timeline = LRTimeline::PerObjective;
    uint64_t seed = 0;
    int64_t train_seq_len = 0;  // 0 = model.max_seq_len
    int64_t eval_every = 1;     // epochs
    int64_t log_every = 10;     // steps
    bool log_timing = true;

    std::string corpus_path;      // comma-separated list accepted
    std::string tokenizer_path;
    std::string checkpoint_dir;
    std::string eval_pairs_path;
    int64_t tokenizer_vocab_size = 512;

    void validate() const;
    int64_t effective_seq_len() const {
        return train_seq_len > 0 ? train_seq_len : model.max_seq_len;
    }
    std::vector<std::string> corpus_files() const;

    TrainOptions train_options() const;

    // Canonical serialization: fixed key order, deterministic bytes.
    std::string serialize() const;
    static RunConfig parse(const std::string& text);
    static RunConfig load(const std::string& path);
};

MaskStrategy parse_mask_strategy(const std::string& s);
const char* mask_strategy_name(MaskStrategy s);
LRKind parse_lr_kind(const std::string& s);
const char* lr_kind_name(LRKind k);

}  // namespace antlm
