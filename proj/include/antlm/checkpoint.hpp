#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "antlm/config.hpp"
#include "antlm/data.hpp"
#include "antlm/model.hpp"
#include "antlm/trainer.hpp"

namespace antlm {

// Binary checkpoint: magic "ANTLM1", a version byte, then little-endian
// length-prefixed sections (config text, tokenizer text, named parameter
// tensors, optional optimizer state, rng state, progress counters).
// save(load(x)) == x byte-for-byte.
struct Checkpoint {
    static constexpr char kMagic[6] = {'A', 'N', 'T', 'L', 'M', '1'};
    static constexpr uint8_t kVersion = 1;

    std::string config_text;
    std::string tokenizer_text;

    struct Param {
        std::string name;
        Shape shape;
        std::vector<float> values;
    };
    std::vector<Param> params;

    struct OptimState {
        int64_t step = 0;
        std::vector<std::vector<float>> m;
        std::vector<std::vector<float>> v;
    };
    std::optional<OptimState> optim;

    std::array<uint64_t, 4> rng_state{};
    int64_t epochs_completed = 0;
    int64_t phase_index = 0;
    int64_t epoch_in_phase = 0;
    int64_t global_step = 0;
    int64_t clm_steps = 0;
    int64_t mlm_steps = 0;

    std::vector<uint8_t> serialize() const;
    static Checkpoint deserialize(const std::vector<uint8_t>& bytes);

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    // Collects everything from a live training run.
    static Checkpoint capture(const RunConfig& config, const Tokenizer& tok,
                              const TransformerLM& model, const TrainerState& state,
                              const std::array<uint64_t, 4>& rng_state);

    // Pushes parameter bytes back into a freshly constructed model.
    void restore_params(TransformerLM& model) const;
    TrainerState restore_trainer_state(const std::vector<NamedParam>& params,
                                       double weight_decay) const;
};

}  // namespace antlm
