#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "antlm/model.hpp"
#include "antlm/tensor.hpp"

namespace antlm {

enum class Objective { CLM, MLM };

const char* objective_name(Objective o);

struct Phase {
    Objective objective;
    int64_t epochs;
};

struct TrainingSchedule {
    std::vector<Phase> phases;

    int64_t total_epochs() const {
        int64_t n = 0;
        for (const Phase& p : phases) n += p.epochs;
        return n;
    }
    int64_t epochs_of(Objective o) const {
        int64_t n = 0;
        for (const Phase& p : phases) {
            if (p.objective == o) n += p.epochs;
        }
        return n;
    }
    bool operator==(const TrainingSchedule&) const = default;
};

inline bool operator==(const Phase& a, const Phase& b) {
    return a.objective == b.objective && a.epochs == b.epochs;
}

// Grammar: schedule := phase ("+" phase)* ; phase := INT "_" ("CLM"|"MLM").
// Case-sensitive names, surrounding whitespace tolerated; errors carry the
// character position.
TrainingSchedule parse_schedule(const std::string& text);
std::string format_schedule(const TrainingSchedule& s);

struct EpochSlot {
    Objective objective;
    int64_t phase_index;
    int64_t epoch_in_phase;
};
EpochSlot objective_for_epoch(const TrainingSchedule& s, int64_t epoch);

enum class LRKind { CosineDecay, CosineWithRestarts };

struct LRScheduleSpec {
    LRKind kind = LRKind::CosineDecay;
    double base_lr = 1e-3;
    int64_t num_cycles = 4;     // restarts only
    int64_t warmup_steps = 0;

    void validate() const;
};

// Linear warmup 0 -> base over warmup_steps, then with progress
// p = (step-warmup)/(total-warmup): CosineDecay gives base/2*(1+cos(pi p));
// CosineWithRestarts runs num_cycles hard-restarting cosine cycles.
double lr_at(const LRScheduleSpec& spec, int64_t step, int64_t total_steps);

struct AdamWState {
    std::vector<std::vector<float>> m;
    std::vector<std::vector<float>> v;
    int64_t step = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;

    static AdamWState init(const std::vector<NamedParam>& params, double weight_decay);
};

// One decoupled-weight-decay Adam step over all parameters; gradients are
// read from each tensor's grad buffer. NaN anywhere in the gradients rejects
// the whole step with no state mutated.
void adamw_step(std::vector<NamedParam>& params, AdamWState& state, double lr);

}  // namespace antlm
