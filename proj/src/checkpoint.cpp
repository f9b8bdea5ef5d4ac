#include "antlm/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "antlm/errors.hpp"
#include "antlm/schedule.hpp"

namespace antlm {

namespace {

// Little-endian primitive writers. x86-64 is little-endian but the byte
// order is pinned explicitly so files stay portable.
void put_u8(std::vector<uint8_t>& out, uint8_t v) { out.push_back(v); }

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_i64(std::vector<uint8_t>& out, int64_t v) { put_u64(out, static_cast<uint64_t>(v)); }

void put_f32s(std::vector<uint8_t>& out, const std::vector<float>& v) {
    put_u64(out, v.size());
    for (float f : v) {
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        put_u32(out, bits);
    }
}

void put_str(std::vector<uint8_t>& out, const std::string& s) {
    put_u64(out, s.size());
    out.insert(out.end(), s.begin(), s.end());
}

struct Reader {
    const std::vector<uint8_t>& b;
    size_t i = 0;

    void need(size_t n) const {
        if (i + n > b.size()) throw ParseError("checkpoint: truncated at byte " + std::to_string(i));
    }
    uint8_t u8() {
        need(1);
        return b[i++];
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int k = 0; k < 4; ++k) v |= static_cast<uint32_t>(b[i++]) << (8 * k);
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int k = 0; k < 8; ++k) v |= static_cast<uint64_t>(b[i++]) << (8 * k);
        return v;
    }
    int64_t i64() { return static_cast<int64_t>(u64()); }
    std::vector<float> f32s() {
        const uint64_t n = u64();
        std::vector<float> v(n);
        for (uint64_t k = 0; k < n; ++k) {
            const uint32_t bits = u32();
            std::memcpy(&v[k], &bits, 4);
        }
        return v;
    }
    std::string str() {
        const uint64_t n = u64();
        need(n);
        std::string s(reinterpret_cast<const char*>(b.data() + i), n);
        i += n;
        return s;
    }
};

}  // namespace

std::vector<uint8_t> Checkpoint::serialize() const {
    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 6);
    put_u8(out, kVersion);

    put_str(out, config_text);
    put_str(out, tokenizer_text);

    put_u32(out, static_cast<uint32_t>(params.size()));
    for (const Param& p : params) {
        put_str(out, p.name);
        put_u32(out, static_cast<uint32_t>(p.shape.size()));
        for (int64_t d : p.shape) put_i64(out, d);
        put_f32s(out, p.values);
    }

    put_u8(out, optim.has_value() ? 1 : 0);
    if (optim) {
        put_i64(out, optim->step);
        put_u32(out, static_cast<uint32_t>(optim->m.size()));
        for (const auto& m : optim->m) put_f32s(out, m);
        for (const auto& v : optim->v) put_f32s(out, v);
    }

    for (uint64_t w : rng_state) put_u64(out, w);
    put_i64(out, epochs_completed);
    put_i64(out, phase_index);
    put_i64(out, epoch_in_phase);
    put_i64(out, global_step);
    put_i64(out, clm_steps);
    put_i64(out, mlm_steps);
    return out;
}

Checkpoint Checkpoint::deserialize(const std::vector<uint8_t>& bytes) {
    Reader r{bytes};
    r.need(7);
    if (std::memcmp(bytes.data(), kMagic, 6) != 0) {
        throw ParseError("checkpoint: bad magic (not an ANTLM1 file)");
    }
    r.i = 6;
    const uint8_t version = r.u8();
    if (version != kVersion) {
        throw ParseError("checkpoint: unsupported version " + std::to_string(version));
    }
    Checkpoint c;
    c.config_text = r.str();
    c.tokenizer_text = r.str();
    const uint32_t n_params = r.u32();
    for (uint32_t i = 0; i < n_params; ++i) {
        Param p;
        p.name = r.str();
        const uint32_t nd = r.u32();
        for (uint32_t d = 0; d < nd; ++d) p.shape.push_back(r.i64());
        p.values = r.f32s();
        if (shape_numel(p.shape) != static_cast<int64_t>(p.values.size())) {
            throw ParseError("checkpoint: parameter '" + p.name + "' shape/payload mismatch");
        }
        c.params.push_back(std::move(p));
    }
    if (r.u8()) {
        OptimState s;
        s.step = r.i64();
        const uint32_t n = r.u32();
        for (uint32_t i = 0; i < n; ++i) s.m.push_back(r.f32s());
        for (uint32_t i = 0; i < n; ++i) s.v.push_back(r.f32s());
        c.optim = std::move(s);
    }
    for (auto& w : c.rng_state) w = r.u64();
    c.epochs_completed = r.i64();
    c.phase_index = r.i64();
    c.epoch_in_phase = r.i64();
    c.global_step = r.i64();
    c.clm_steps = r.i64();
    c.mlm_steps = r.i64();
    if (r.i != bytes.size()) throw ParseError("checkpoint: trailing bytes");
    return c;
}

void Checkpoint::save(const std::string& path) const {
    const auto bytes = serialize();
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint: " + path);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("checkpoint write failed: " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open checkpoint: " + path);
    std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize(bytes);
}

Checkpoint Checkpoint::capture(const RunConfig& config, const Tokenizer& tok,
                               const TransformerLM& model, const TrainerState& state,
                               const std::array<uint64_t, 4>& rng_state) {
    Checkpoint c;
    c.config_text = config.serialize();
    c.tokenizer_text = tok.serialize();
    for (const auto& p : model.parameters()) {
        c.params.push_back({p.name, p.tensor.shape(),
                            std::vector<float>(p.tensor.values().begin(), p.tensor.values().end())});
    }
    OptimState s;
    s.step = state.optim.step;
    s.m = state.optim.m;
    s.v = state.optim.v;
    c.optim = std::move(s);
    c.rng_state = rng_state;
    c.epochs_completed = state.epochs_completed;
    const TrainingSchedule sched = parse_schedule(config.schedule_text);
    if (state.epochs_completed > 0 && state.epochs_completed < sched.total_epochs()) {
        const EpochSlot slot = objective_for_epoch(sched, state.epochs_completed);
        c.phase_index = slot.phase_index;
        c.epoch_in_phase = slot.epoch_in_phase;
    } else if (state.epochs_completed >= sched.total_epochs()) {
        c.phase_index = static_cast<int64_t>(sched.phases.size());
        c.epoch_in_phase = 0;
    }
    c.global_step = state.global_step;
    c.clm_steps = state.clm_steps;
    c.mlm_steps = state.mlm_steps;
    return c;
}

void Checkpoint::restore_params(TransformerLM& model) const {
    auto live = model.parameters();
    if (live.size() != params.size()) {
        throw ConfigError("checkpoint: parameter count mismatch (file " +
                          std::to_string(params.size()) + ", model " +
                          std::to_string(live.size()) + ")");
    }
    for (size_t i = 0; i < live.size(); ++i) {
        if (live[i].name != params[i].name || live[i].tensor.shape() != params[i].shape) {
            throw ConfigError("checkpoint: parameter '" + params[i].name +
                              "' does not match the model architecture");
        }
        auto dst = live[i].tensor.values_mut();
        std::copy(params[i].values.begin(), params[i].values.end(), dst.begin());
    }
}

TrainerState Checkpoint::restore_trainer_state(const std::vector<NamedParam>& live_params,
                                               double weight_decay) const {
    TrainerState s;
    s.optim = AdamWState::init(live_params, weight_decay);
    if (optim) {
        if (optim->m.size() != s.optim.m.size()) {
            throw ConfigError("checkpoint: optimizer state does not match parameter set");
        }
        s.optim.step = optim->step;
        s.optim.m = optim->m;
        s.optim.v = optim->v;
    }
    s.epochs_completed = epochs_completed;
    s.global_step = global_step;
    s.clm_steps = clm_steps;
    s.mlm_steps = mlm_steps;
    return s;
}

}  // namespace antlm
