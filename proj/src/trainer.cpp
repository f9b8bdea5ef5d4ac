#include "antlm/trainer.hpp"

#include <chrono>
#include <cmath>

#include "antlm/errors.hpp"

namespace antlm {

namespace {

constexpr uint64_t kShuffleStream = 0xA11C0DE1;
constexpr uint64_t kMlmStream = 0xA11C0DE2;

double grad_global_norm(std::vector<NamedParam>& params) {
    double sq = 0.0;
    for (auto& p : params) {
        for (float g : p.tensor.grad_mut()) sq += static_cast<double>(g) * g;
    }
    return std::sqrt(sq);
}

void clip_gradients(std::vector<NamedParam>& params, double max_norm) {
    const double norm = grad_global_norm(params);
    if (norm <= max_norm || norm == 0.0) return;
    const float s = static_cast<float>(max_norm / norm);
    for (auto& p : params) {
        for (float& g : p.tensor.grad_mut()) g *= s;
    }
}

}  // namespace

int64_t steps_per_epoch(int64_t n_rows, int64_t batch_size) {
    if (n_rows <= 0) throw ContractError("training corpus packs to zero rows");
    if (n_rows < batch_size) return 1;  // single short batch
    return n_rows / batch_size;         // trailing partial batch dropped
}

TrainingLog run_training(TransformerLM& model, const PackedDataset& data,
                         const TrainOptions& options, TrainerState& state,
                         const VocabView& vocab, const TrainHooks& hooks) {
    options.masking.validate();
    const TrainingSchedule& sched = options.schedule;
    if (sched.phases.empty()) throw ConfigError("run_training: empty schedule");
    const int64_t n_rows = data.sequences.rows;

    auto params = model.parameters();
    TrainingLog log;
    log.epochs_completed = state.epochs_completed;

    // Step horizons. Per-objective: each objective's scheduler runs over that
    // objective's own cumulative steps; global: one shared timeline.
    const int64_t spe_clm = steps_per_epoch(n_rows, options.clm.batch_size);
    const int64_t spe_mlm = steps_per_epoch(n_rows, options.mlm.batch_size);
    const int64_t total_clm = sched.epochs_of(Objective::CLM) * spe_clm;
    const int64_t total_mlm = sched.epochs_of(Objective::MLM) * spe_mlm;
    const int64_t total_global = total_clm + total_mlm;

    const auto t_start = std::chrono::steady_clock::now();
    auto wall_ms = [&]() -> int64_t {
        if (!options.log_timing) return 0;
        return std::chrono::duration_cast<std::chrono::milliseconds>(
                   std::chrono::steady_clock::now() - t_start)
            .count();
    };

    for (int64_t epoch = state.epochs_completed; epoch < sched.total_epochs(); ++epoch) {
        const EpochSlot slot = objective_for_epoch(sched, epoch);
        const Objective obj = slot.objective;
        const ObjectiveOptions& oo = options.for_objective(obj);
        const MaskMode mode = obj == Objective::CLM ? MaskMode::Causal : MaskMode::Bidirectional;
        const int64_t spe = obj == Objective::CLM ? spe_clm : spe_mlm;

        std::vector<int64_t> order(static_cast<size_t>(n_rows));
        for (int64_t i = 0; i < n_rows; ++i) order[static_cast<size_t>(i)] = i;
        Rng shuffle_rng(Rng::derive(options.seed, {kShuffleStream, static_cast<uint64_t>(epoch)}));
        shuffle_rng.shuffle(order);

        double epoch_loss = 0.0;
        for (int64_t s = 0; s < spe; ++s) {
            const int64_t bs = std::min<int64_t>(oo.batch_size, n_rows);
            TokenGrid tokens(bs, data.sequences.cols);
            BitGrid word_starts(bs, data.sequences.cols);
            for (int64_t r = 0; r < bs; ++r) {
                const int64_t src = order[static_cast<size_t>(s * bs + r)];
                for (int64_t c = 0; c < data.sequences.cols; ++c) {
                    tokens.at(r, c) = data.sequences.at(src, c);
                    word_starts.at(r, c) = data.word_starts.at(src, c);
                }
            }

            TokenGrid inputs;
            TokenGrid targets;
            BitGrid loss_mask;
            if (obj == Objective::CLM) {
                ClmBatch b = make_clm_batch(tokens, BitGrid(bs, tokens.cols, 0));
                inputs = std::move(b.inputs);
                targets = std::move(b.targets);
                loss_mask = std::move(b.loss_mask);
            } else {
                const uint64_t seed = Rng::derive(
                    options.seed,
                    {kMlmStream, static_cast<uint64_t>(epoch), static_cast<uint64_t>(s)});
                CorruptedBatch b = make_mlm_batch(tokens, word_starts, options.masking, vocab, seed);
                inputs = std::move(b.inputs);
                targets = std::move(b.targets);
                loss_mask = std::move(b.loss_mask);
            }

            if (hooks.on_batch) hooks.on_batch(epoch, obj, inputs, targets, loss_mask);

            const int64_t obj_step = state.steps_of(obj);
            const int64_t lr_step = options.lr_timeline == LRTimeline::PerObjective
                                        ? obj_step
                                        : state.global_step;
            const int64_t lr_total = options.lr_timeline == LRTimeline::PerObjective
                                         ? (obj == Objective::CLM ? total_clm : total_mlm)
                                         : total_global;
            const double lr = lr_at(oo.lr, lr_step, std::max<int64_t>(lr_total, 1));

            Tape tape;
            double loss_value;
            {
                Tape::Scope scope(tape);
                const auto abort_with_diagnostic = [&](const char* what) {
                    MetricsRow diag{epoch,
                                    slot.phase_index,
                                    obj,
                                    state.global_step,
                                    lr,
                                    std::nan(""),
                                    std::nan(""),
                                    0.0,
                                    wall_ms()};
                    if (hooks.on_metrics) hooks.on_metrics(diag);
                    throw NumericError("run_training: " + std::string(what) + " at epoch " +
                                       std::to_string(epoch) + " step " + std::to_string(s));
                };
                Tensor loss;
                try {
                    Tensor logits = model.forward(inputs, mode, BitGrid(bs, inputs.cols, 0));
                    loss = cross_entropy(logits, targets, loss_mask);
                } catch (const NumericError&) {
                    abort_with_diagnostic("NaN loss");
                }
                loss_value = loss.item();
                if (std::isnan(loss_value)) abort_with_diagnostic("NaN loss");
                for (auto& p : params) p.tensor.zero_grad();
                tape.backward(loss);
            }
            if (options.grad_clip_norm > 0.0) clip_gradients(params, options.grad_clip_norm);
            adamw_step(params, state.optim, lr);

            epoch_loss += loss_value;
            state.steps_of(obj) += 1;
            state.global_step += 1;

            const bool last_step_of_run =
                epoch + 1 == sched.total_epochs() && s + 1 == spe;
            if (state.global_step % options.log_every == 0 || last_step_of_run ||
                (s + 1 == spe && slot.epoch_in_phase + 1 ==
                                     sched.phases[static_cast<size_t>(slot.phase_index)].epochs)) {
                MetricsRow row;
                row.epoch = epoch;
                row.phase_index = slot.phase_index;
                row.objective = obj;
                row.step = state.global_step;
                row.lr = lr;
                row.loss = loss_value;
                row.perplexity = std::exp(loss_value);
                const int64_t ms = wall_ms();
                row.wall_ms = ms;
                row.tokens_per_sec =
                    !options.log_timing || ms == 0
                        ? 0.0
                        : static_cast<double>(state.global_step) * static_cast<double>(bs) *
                              static_cast<double>(inputs.cols) * 1000.0 / static_cast<double>(ms);
                log.rows.push_back(row);
                if (hooks.on_metrics) hooks.on_metrics(row);
            }
        }

        state.epochs_completed = epoch + 1;
        log.epochs_completed = state.epochs_completed;

        EpochEndInfo info;
        info.epoch = epoch;
        info.phase_index = slot.phase_index;
        info.objective = obj;
        info.phase_boundary =
            slot.epoch_in_phase + 1 == sched.phases[static_cast<size_t>(slot.phase_index)].epochs;
        info.mean_epoch_loss = epoch_loss / static_cast<double>(spe);
        if (hooks.on_epoch_end) hooks.on_epoch_end(info);

        if (hooks.should_halt && hooks.should_halt(state.epochs_completed)) {
            log.halted = true;
            return log;
        }
    }
    return log;
}

}  // namespace antlm
