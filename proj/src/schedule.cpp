#include "antlm/schedule.hpp"

#include <cmath>
#include <sstream>

#include "antlm/errors.hpp"

namespace antlm {

const char* objective_name(Objective o) { return o == Objective::CLM ? "CLM" : "MLM"; }

TrainingSchedule parse_schedule(const std::string& text) {
    TrainingSchedule sched;
    size_t i = 0;
    const auto fail = [&](const std::string& why) {
        throw ParseError("schedule: " + why + " at position " + std::to_string(i) + " in '" +
                         text + "'");
    };
    const auto skip_ws = [&] {
        while (i < text.size() && (text[i] == ' ' || text[i] == '\t')) ++i;
    };
    skip_ws();
    if (i >= text.size()) fail("empty schedule");
    while (true) {
        skip_ws();
        if (i >= text.size() || !std::isdigit(static_cast<unsigned char>(text[i]))) {
            fail("expected epoch count");
        }
        int64_t epochs = 0;
        while (i < text.size() && std::isdigit(static_cast<unsigned char>(text[i]))) {
            epochs = epochs * 10 + (text[i] - '0');
            if (epochs > 1000000) fail("epoch count too large");
            ++i;
        }
        if (epochs == 0) fail("epoch count must be positive");
        if (i >= text.size() || text[i] != '_') fail("expected '_' after epoch count");
        ++i;
        Objective obj;
        if (text.compare(i, 3, "CLM") == 0) {
            obj = Objective::CLM;
        } else if (text.compare(i, 3, "MLM") == 0) {
            obj = Objective::MLM;
        } else {
            fail("unknown objective name (want CLM or MLM)");
            obj = Objective::CLM;  // unreachable
        }
        i += 3;
        sched.phases.push_back({obj, epochs});
        skip_ws();
        if (i >= text.size()) break;
        if (text[i] != '+') fail("expected '+' between phases");
        ++i;
    }
    return sched;
}

std::string format_schedule(const TrainingSchedule& s) {
    std::ostringstream os;
    for (size_t i = 0; i < s.phases.size(); ++i) {
        if (i) os << "+";
        os << s.phases[i].epochs << "_" << objective_name(s.phases[i].objective);
    }
    return os.str();
}

EpochSlot objective_for_epoch(const TrainingSchedule& s, int64_t epoch) {
    if (epoch < 0 || epoch >= s.total_epochs()) {
        throw ContractError("objective_for_epoch: epoch " + std::to_string(epoch) +
                            " outside [0," + std::to_string(s.total_epochs()) + ")");
    }
    int64_t base = 0;
    for (size_t i = 0; i < s.phases.size(); ++i) {
        if (epoch < base + s.phases[i].epochs) {
            return {s.phases[i].objective, static_cast<int64_t>(i), epoch - base};
        }
        base += s.phases[i].epochs;
    }
    throw ContractError("objective_for_epoch: unreachable");
}

void LRScheduleSpec::validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("lr: base_lr must be positive");
    if (kind == LRKind::CosineWithRestarts && num_cycles < 1) {
        throw ConfigError("lr: num_cycles must be >= 1 for cosine with restarts");
    }
    if (warmup_steps < 0) throw ConfigError("lr: warmup_steps must be nonnegative");
}

double lr_at(const LRScheduleSpec& spec, int64_t step, int64_t total_steps) {
    spec.validate();
    if (total_steps <= 0) throw ContractError("lr_at: total_steps must be positive");
    if (step < 0 || step > total_steps) {
        throw ContractError("lr_at: step " + std::to_string(step) + " outside [0," +
                            std::to_string(total_steps) + "]");
    }
    if (spec.warmup_steps > 0 && step < spec.warmup_steps) {
        return spec.base_lr * static_cast<double>(step) / static_cast<double>(spec.warmup_steps);
    }
    const int64_t span = total_steps - spec.warmup_steps;
    const double p = span <= 0 ? 1.0
                               : static_cast<double>(step - spec.warmup_steps) /
                                     static_cast<double>(span);
    if (spec.kind == LRKind::CosineDecay) {
        return spec.base_lr * 0.5 * (1.0 + std::cos(M_PI * p));
    }
    // Hard restarts: cycle position in [0,1); the very end of training maps
    // to the end of the final cycle rather than a phantom restart.
    double u = p * static_cast<double>(spec.num_cycles);
    double pos = u - std::floor(u);
    if (p >= 1.0) pos = 1.0;
    return spec.base_lr * 0.5 * (1.0 + std::cos(M_PI * pos));
}

AdamWState AdamWState::init(const std::vector<NamedParam>& params, double weight_decay_) {
    AdamWState s;
    s.weight_decay = weight_decay_;
    for (const auto& p : params) {
        s.m.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0f);
        s.v.emplace_back(static_cast<size_t>(p.tensor.numel()), 0.0f);
    }
    return s;
}

void adamw_step(std::vector<NamedParam>& params, AdamWState& state, double lr) {
    if (params.size() != state.m.size()) {
        throw ContractError("adamw_step: state was initialized for a different parameter set");
    }
    // Reject the step before touching anything if any gradient is NaN.
    for (auto& p : params) {
        for (float g : p.tensor.grad_mut()) {
            if (std::isnan(g)) {
                throw NumericError("adamw_step: NaN gradient in '" + p.name + "', step rejected");
            }
        }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto vals = params[pi].tensor.values_mut();
        auto grads = params[pi].tensor.grad_mut();
        auto& m = state.m[pi];
        auto& v = state.v[pi];
        if (m.size() != vals.size()) {
            throw ContractError("adamw_step: shape drift on '" + params[pi].name + "'");
        }
        for (size_t i = 0; i < vals.size(); ++i) {
            const double g = grads[i];
            m[i] = static_cast<float>(state.beta1 * m[i] + (1.0 - state.beta1) * g);
            v[i] = static_cast<float>(state.beta2 * v[i] + (1.0 - state.beta2) * g * g);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            double w = vals[i];
            w -= lr * state.weight_decay * w;  // decoupled decay, gradient-independent
            w -= lr * mhat / (std::sqrt(vhat) + state.eps);
            vals[i] = static_cast<float>(w);
        }
    }
}

}  // namespace antlm
