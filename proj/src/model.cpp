#include "antlm/model.hpp"

#include <cmath>

namespace antlm {

void ModelConfig::validate() const {
    if (layers < 0) throw ConfigError("model: layers must be >= 0");
    if (attention_heads <= 0) throw ConfigError("model: attention_heads must be positive");
    if (hidden_size <= 0) throw ConfigError("model: hidden_size must be positive");
    if (hidden_size % attention_heads != 0) {
        throw ConfigError("model: hidden_size " + std::to_string(hidden_size) +
                          " not divisible by attention_heads " + std::to_string(attention_heads));
    }
    if (intermediate_size <= 0) throw ConfigError("model: intermediate_size must be positive");
    if (vocab_size <= 0) throw ConfigError("model: vocab_size must be positive");
    if (max_seq_len <= 0) throw ConfigError("model: max_seq_len must be positive");
    if (position_buckets <= 0) throw ConfigError("model: position_buckets must be positive");
    if (position_buckets > max_seq_len) {
        throw ConfigError("model: position_buckets " + std::to_string(position_buckets) +
                          " exceeds max_seq_len " + std::to_string(max_seq_len));
    }
}

AttentionMask build_attention_mask(int64_t seq_len, MaskMode mode,
                                   const std::vector<uint8_t>& padding) {
    if (seq_len <= 0) throw ContractError("build_attention_mask: seq_len must be positive");
    if (static_cast<int64_t>(padding.size()) != seq_len) {
        throw ContractError("build_attention_mask: padding length " +
                            std::to_string(padding.size()) + " != seq_len " +
                            std::to_string(seq_len));
    }
    AttentionMask m;
    m.allowed = BitGrid(seq_len, seq_len, 0);
    m.padding = padding;
    for (int64_t i = 0; i < seq_len; ++i) {
        for (int64_t j = 0; j < seq_len; ++j) {
            const bool pattern = mode == MaskMode::Causal ? (j <= i) : true;
            m.allowed.at(i, j) = (pattern && !padding[static_cast<size_t>(j)]) ? 1 : 0;
        }
    }
    return m;
}

int64_t relative_bucket(int64_t i, int64_t j, int64_t position_buckets) {
    const int64_t limit = position_buckets - 1;
    int64_t delta = j - i;
    if (delta > limit) delta = limit;
    if (delta < -limit) delta = -limit;
    return delta + limit;
}

Tensor relative_bias_matrix(const Tensor& table, int64_t seq_len, int64_t position_buckets) {
    if (table.ndim() != 2 || table.dim(1) != 2 * position_buckets - 1) {
        throw ShapeError("relative_bias_matrix: table must be [heads, 2*buckets-1], got " +
                         shape_str(table.shape()));
    }
    const int64_t H = table.dim(0);
    const int64_t W = table.dim(1);
    Tensor out = Tensor::zeros({H, seq_len, seq_len});
    const float* tp = table.values().data();
    float* op = out.values_mut().data();
    for (int64_t h = 0; h < H; ++h) {
        for (int64_t i = 0; i < seq_len; ++i) {
            for (int64_t j = 0; j < seq_len; ++j) {
                op[(h * seq_len + i) * seq_len + j] =
                    tp[h * W + relative_bucket(i, j, position_buckets)];
            }
        }
    }

    Tape* t = Tape::active();
    if (t && t->involves(table)) {
        const int64_t it = t->ensure_slot(table);
        auto od = out.data();
        t->record({it}, out, [=](Tape& tp2) {
            if (!tp2.wants_grad(it)) return;
            auto go = tp2.grad_read(od->tape_id);
            auto dt = tp2.grad_acc(it);
            for (int64_t h = 0; h < H; ++h) {
                for (int64_t i = 0; i < seq_len; ++i) {
                    for (int64_t j = 0; j < seq_len; ++j) {
                        dt[h * W + relative_bucket(i, j, position_buckets)] +=
                            go[(h * seq_len + i) * seq_len + j];
                    }
                }
            }
        });
    }
    return out;
}

namespace {

// Core of attention shared by the public op and TransformerLM::forward:
// per-batch-row key padding instead of a single shared padding vector.
Tensor attention_batched(const Tensor& q, const Tensor& k, const Tensor& v,
                         const BitGrid& allowed, const BitGrid& key_padding, const Tensor& bias) {
    const int64_t dh = q.dim(3);
    Tensor scores = scale(matmul(q, transpose_last2(k)), 1.0f / std::sqrt(static_cast<float>(dh)));
    scores = add(scores, bias);  // bias [H,T,T] broadcasts over batch
    Tensor weights = masked_softmax(scores, allowed, key_padding);
    return matmul(weights, v);
}

}  // namespace

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                 const Tensor& bias) {
    if (q.ndim() != 4 || k.ndim() != 4 || v.ndim() != 4) {
        throw ShapeError("attention: q,k,v must be [B,heads,T,d_head]");
    }
    const int64_t B = q.dim(0), T = q.dim(2);
    BitGrid pad(B, T, 0);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t t = 0; t < T; ++t) pad.at(b, t) = mask.padding[static_cast<size_t>(t)];
    }
    return attention_batched(q, k, v, mask.allowed, pad, bias);
}

TransformerLM::TransformerLM(const ModelConfig& config) : config_(config) {
    config_.validate();
    Rng rng(config_.seed);
    const int64_t d = config_.hidden_size;
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));

    token_embedding = Tensor::randn({config_.vocab_size, d}, rng, proj_std);
    token_embedding.set_requires_grad(true);
    relative_bias_table =
        Tensor::zeros({config_.attention_heads, 2 * config_.position_buckets - 1});
    relative_bias_table.set_requires_grad(true);

    layers.resize(static_cast<size_t>(config_.layers));
    for (auto& l : layers) {
        l.norm1_gain = Tensor::full({d}, 1.0f).set_requires_grad(true);
        l.norm1_bias = Tensor::zeros({d}).set_requires_grad(true);
        l.wq = Tensor::randn({d, d}, rng, proj_std).set_requires_grad(true);
        l.wk = Tensor::randn({d, d}, rng, proj_std).set_requires_grad(true);
        l.wv = Tensor::randn({d, d}, rng, proj_std).set_requires_grad(true);
        l.wo = Tensor::randn({d, d}, rng, proj_std).set_requires_grad(true);
        l.norm2_gain = Tensor::full({d}, 1.0f).set_requires_grad(true);
        l.norm2_bias = Tensor::zeros({d}).set_requires_grad(true);
        l.w_ff_in = Tensor::randn({d, 2 * config_.intermediate_size}, rng, proj_std)
                        .set_requires_grad(true);
        l.w_ff_out = Tensor::randn({config_.intermediate_size, d}, rng, proj_std)
                         .set_requires_grad(true);
    }
    final_norm_gain = Tensor::full({d}, 1.0f).set_requires_grad(true);
    final_norm_bias = Tensor::zeros({d}).set_requires_grad(true);
}

std::vector<NamedParam> TransformerLM::parameters() {
    std::vector<NamedParam> out;
    out.push_back({"token_embedding", token_embedding});
    out.push_back({"relative_bias_table", relative_bias_table});
    for (size_t i = 0; i < layers.size(); ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        Layer& l = layers[i];
        out.push_back({p + "norm1_gain", l.norm1_gain});
        out.push_back({p + "norm1_bias", l.norm1_bias});
        out.push_back({p + "wq", l.wq});
        out.push_back({p + "wk", l.wk});
        out.push_back({p + "wv", l.wv});
        out.push_back({p + "wo", l.wo});
        out.push_back({p + "norm2_gain", l.norm2_gain});
        out.push_back({p + "norm2_bias", l.norm2_bias});
        out.push_back({p + "w_ff_in", l.w_ff_in});
        out.push_back({p + "w_ff_out", l.w_ff_out});
    }
    out.push_back({"final_norm_gain", final_norm_gain});
    out.push_back({"final_norm_bias", final_norm_bias});
    return out;
}

std::vector<NamedParam> TransformerLM::parameters() const {
    return const_cast<TransformerLM*>(this)->parameters();
}

int64_t TransformerLM::count_parameters_formula(const ModelConfig& c) {
    const int64_t d = c.hidden_size, I = c.intermediate_size;
    // embedding + bias table + L * (4 projections + GLU in/out + 2 norms) + final norm;
    // the tied output head contributes nothing extra.
    return c.vocab_size * d + c.attention_heads * (2 * c.position_buckets - 1) +
           c.layers * (4 * d * d + d * 2 * I + I * d + 4 * d) + 2 * d;
}

int64_t TransformerLM::count_parameters() const {
    int64_t total = 0;
    for (const auto& p : parameters()) total += p.tensor.numel();
    return total;
}

Tensor TransformerLM::forward(const TokenGrid& tokens, MaskMode mode) const {
    return forward(tokens, mode, BitGrid(tokens.rows, tokens.cols, 0));
}

Tensor TransformerLM::forward(const TokenGrid& tokens, MaskMode mode,
                              const BitGrid& padding) const {
    const int64_t B = tokens.rows, T = tokens.cols;
    if (T > config_.max_seq_len) {
        throw ContractError("forward: sequence length " + std::to_string(T) +
                            " exceeds max_seq_len " + std::to_string(config_.max_seq_len));
    }
    if (T <= 0 || B <= 0) throw ContractError("forward: empty token grid");
    if (padding.rows != B || padding.cols != T) {
        throw ContractError("forward: padding grid must match tokens");
    }
    const int64_t d = config_.hidden_size;
    const int64_t H = config_.attention_heads;
    const int64_t dh = config_.head_dim();

    const AttentionMask mode_mask =
        build_attention_mask(T, mode, std::vector<uint8_t>(static_cast<size_t>(T), 0));

    Tensor x = embedding_lookup(token_embedding, tokens);
    Tensor bias = relative_bias_matrix(relative_bias_table, T, config_.position_buckets);

    for (const Layer& l : layers) {
        Tensor h = layer_norm(x, l.norm1_gain, l.norm1_bias, 1e-5f);
        auto heads_view = [&](const Tensor& m) {
            return permute(reshape(m, {B, T, H, dh}), {0, 2, 1, 3});
        };
        Tensor q = heads_view(matmul(h, l.wq));
        Tensor k = heads_view(matmul(h, l.wk));
        Tensor v = heads_view(matmul(h, l.wv));
        Tensor ctx = attention_batched(q, k, v, mode_mask.allowed, padding, bias);
        ctx = reshape(permute(ctx, {0, 2, 1, 3}), {B, T, d});
        x = add(x, matmul(ctx, l.wo));

        Tensor h2 = layer_norm(x, l.norm2_gain, l.norm2_bias, 1e-5f);
        Tensor u = matmul(h2, l.w_ff_in);
        Tensor gate = slice_last(u, 0, config_.intermediate_size);
        Tensor val = slice_last(u, config_.intermediate_size, 2 * config_.intermediate_size);
        Tensor act = mul(gelu(gate), val);
        x = add(x, matmul(act, l.w_ff_out));
    }
    x = layer_norm(x, final_norm_gain, final_norm_bias, 1e-5f);
    return matmul(x, transpose_last2(token_embedding));
}

}  // namespace antlm
