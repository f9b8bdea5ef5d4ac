#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "antlm/data.hpp"
#include "antlm/model.hpp"
#include "antlm/objectives.hpp"
#include "antlm/schedule.hpp"

namespace antlm {

enum class LRTimeline { PerObjective, Global };

struct ObjectiveOptions {
    LRScheduleSpec lr;       // CLM defaults to cosine decay, MLM to restarts
    int64_t batch_size = 32;
};

struct TrainOptions {
    TrainOptions() { mlm.lr.kind = LRKind::CosineWithRestarts; }

    TrainingSchedule schedule;
    ObjectiveOptions clm;
    ObjectiveOptions mlm;
    MaskingPolicy masking;
    double weight_decay = 0.0;
    double grad_clip_norm = 0.0;  // 0 = off
    LRTimeline lr_timeline = LRTimeline::PerObjective;
    uint64_t seed = 0;
    int64_t log_every = 10;  // steps
    bool log_timing = true;  // false writes 0 for tokens_per_sec / wall_ms

    const ObjectiveOptions& for_objective(Objective o) const {
        return o == Objective::CLM ? clm : mlm;
    }
};

struct MetricsRow {
    int64_t epoch = 0;
    int64_t phase_index = 0;
    Objective objective = Objective::CLM;
    int64_t step = 0;  // global step
    double lr = 0.0;
    double loss = 0.0;
    double perplexity = 0.0;
    double tokens_per_sec = 0.0;
    int64_t wall_ms = 0;
};

struct EpochEndInfo {
    int64_t epoch = 0;  // just completed, 0-based
    int64_t phase_index = 0;
    Objective objective = Objective::CLM;
    bool phase_boundary = false;  // last epoch of its phase
    double mean_epoch_loss = 0.0;
};

struct TrainHooks {
    std::function<void(const MetricsRow&)> on_metrics;
    std::function<void(const EpochEndInfo&)> on_epoch_end;
    // Return true to stop cleanly after the given number of completed epochs
    // (simulates an interrupted run for resume testing).
    std::function<bool(int64_t epochs_completed)> should_halt;
    // Observation point for constructed batches (tests, debugging).
    std::function<void(int64_t epoch, Objective objective, const TokenGrid& inputs,
                       const TokenGrid& targets, const BitGrid& loss_mask)>
        on_batch;
};

// Mutable cross-epoch state; checkpointable so a resumed run continues
// bit-identically.
struct TrainerState {
    AdamWState optim;
    int64_t epochs_completed = 0;
    int64_t global_step = 0;
    int64_t clm_steps = 0;
    int64_t mlm_steps = 0;

    int64_t& steps_of(Objective o) { return o == Objective::CLM ? clm_steps : mlm_steps; }
};

struct TrainingLog {
    std::vector<MetricsRow> rows;
    int64_t epochs_completed = 0;
    bool halted = false;
};

int64_t steps_per_epoch(int64_t n_rows, int64_t batch_size);

// The alternation loop: per epoch the schedule picks the objective, which
// picks batch construction (shift vs corruption), the attention mask
// (Causal vs Bidirectional) and the LR schedule. Optimizer moments persist
// across phase switches.
TrainingLog run_training(TransformerLM& model, const PackedDataset& data,
                         const TrainOptions& options, TrainerState& state,
                         const VocabView& vocab, const TrainHooks& hooks);

}  // namespace antlm
