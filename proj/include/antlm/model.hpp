#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "antlm/tensor.hpp"

namespace antlm {

struct ModelConfig {
    int64_t layers = 2;
    int64_t attention_heads = 2;
    int64_t hidden_size = 64;
    int64_t intermediate_size = 128;
    int64_t vocab_size = 512;
    int64_t max_seq_len = 64;
    int64_t position_buckets = 32;
    uint64_t seed = 0;

    void validate() const;
    int64_t head_dim() const { return hidden_size / attention_heads; }
};

enum class MaskMode { Causal, Bidirectional };

struct AttentionMask {
    BitGrid allowed;               // TxT, 1 = attend
    std::vector<uint8_t> padding;  // length T, 1 = padded
};

// (3, Causal) -> lower triangle; (3, Bidirectional) -> all ones; padded
// positions are blocked as keys for every query.
AttentionMask build_attention_mask(int64_t seq_len, MaskMode mode,
                                   const std::vector<uint8_t>& padding);

// Signed distance j-i clipped to [-(buckets-1), buckets-1], shifted to be
// a nonnegative index into a (2*buckets-1)-wide table. i = j maps to the
// center bucket buckets-1.
int64_t relative_bucket(int64_t i, int64_t j, int64_t position_buckets);

struct NamedParam {
    std::string name;
    Tensor tensor;
};

// One shared-parameter transformer serving both objectives: pre-norm blocks,
// GELU-gated feed-forward, bucketed relative-position attention bias, output
// head tied to the token embedding. Only the attention mask changes between
// Causal and Bidirectional forwards.
class TransformerLM {
public:
    explicit TransformerLM(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }

    // All tape leaves, in serialization order. Shared by both mask modes.
    std::vector<NamedParam> parameters();
    std::vector<NamedParam> parameters() const;

    int64_t count_parameters() const;
    static int64_t count_parameters_formula(const ModelConfig& c);

    // Logits [B,T,vocab] at every position.
    Tensor forward(const TokenGrid& tokens, MaskMode mode, const BitGrid& padding) const;
    Tensor forward(const TokenGrid& tokens, MaskMode mode) const;  // no padding

    struct Layer {
        Tensor norm1_gain, norm1_bias;
        Tensor wq, wk, wv, wo;
        Tensor norm2_gain, norm2_bias;
        Tensor w_ff_in;   // hidden -> 2*intermediate (gate | value)
        Tensor w_ff_out;  // intermediate -> hidden
    };

    Tensor token_embedding;
    Tensor relative_bias_table;  // [heads, 2*position_buckets-1]
    std::vector<Layer> layers;
    Tensor final_norm_gain, final_norm_bias;

private:
    ModelConfig config_;
};

// Standalone attention per the module contract: scores = q k^T / sqrt(d_head)
// + bias, blocked entries excluded before softmax, fully blocked rows yield
// zeros. q,k,v are [B,heads,T,d_head]; bias is [heads,T,T].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionMask& mask,
                 const Tensor& bias);

// Gather of relative_bias_table into a dense [heads,T,T] bias; gradient
// scatter-adds back into the table.
Tensor relative_bias_matrix(const Tensor& table, int64_t seq_len, int64_t position_buckets);

}  // namespace antlm
