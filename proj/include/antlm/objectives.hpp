#pragma once

#include <cstdint>
#include <vector>

#include "antlm/grid.hpp"
#include "antlm/rng.hpp"
#include "antlm/tensor.hpp"

namespace antlm {

enum class MaskStrategy { Subword, WholeWord, Span };

struct MaskingPolicy {
    double select_rate = 0.15;
    double mask_frac = 0.80;
    double random_frac = 0.10;
    double keep_frac = 0.10;
    MaskStrategy strategy = MaskStrategy::Span;
    double span_geometric_p = 0.2;
    int64_t span_max = 10;

    void validate() const;
};

// Tokenizer-independent view of what corruption needs to know about the
// vocabulary: where [MASK] lives and which ids are fair game for random
// replacement.
struct VocabView {
    int32_t mask_id = -1;
    std::vector<int32_t> non_special_ids;
    std::vector<uint8_t> is_special;  // indexed by id

    bool special(int32_t id) const {
        return id >= 0 && id < static_cast<int32_t>(is_special.size()) &&
               is_special[static_cast<size_t>(id)];
    }
};

struct CorruptedBatch {
    TokenGrid inputs;
    TokenGrid targets;  // original tokens at selected positions, 0 elsewhere
    BitGrid loss_mask;  // 1 at selected positions
};

struct ClmBatch {
    TokenGrid inputs;
    TokenGrid targets;  // inputs shifted left; sentinel 0 at the last column
    BitGrid loss_mask;  // 0 at final position and at padding
};

// Next-token batch: targets[t] = inputs[t+1]; inputs are the raw tokens,
// untouched.
ClmBatch make_clm_batch(const TokenGrid& tokens, const BitGrid& padding);

// Deterministic count max(1, round(rate * candidates)) sampled without
// replacement; WholeWord expands every hit to its full word; Span draws
// contiguous runs with truncated-geometric lengths and trims to the budget.
std::vector<int64_t> select_mask_positions(const std::vector<int32_t>& tokens,
                                           const std::vector<uint8_t>& word_starts,
                                           const MaskingPolicy& policy, const VocabView& vocab,
                                           Rng& rng);

// Length draw used by Span selection, exposed for distribution tests.
int64_t sample_span_length(const MaskingPolicy& policy, Rng& rng);

// Exact 80/10/10 partition of k selected positions: largest-remainder
// apportionment with ties resolved mask > random > keep.
struct CorruptionCounts {
    int64_t masked = 0;
    int64_t random = 0;
    int64_t kept = 0;
};
CorruptionCounts partition_counts(int64_t k, const MaskingPolicy& policy);

// One sequence's corruption: selected positions become [MASK] / random /
// unchanged per the exact partition; targets hold the originals.
CorruptedBatch apply_corruption(const std::vector<int32_t>& tokens,
                                const std::vector<int64_t>& positions,
                                const MaskingPolicy& policy, const VocabView& vocab, Rng& rng);

// Whole-batch MLM construction with per-row derived seeds.
CorruptedBatch make_mlm_batch(const TokenGrid& tokens, const BitGrid& word_starts,
                              const MaskingPolicy& policy, const VocabView& vocab, uint64_t seed);

Tensor clm_loss(const Tensor& logits, const ClmBatch& batch);
Tensor mlm_loss(const Tensor& logits, const CorruptedBatch& batch);

}  // namespace antlm
