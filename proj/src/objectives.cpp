#include "antlm/objectives.hpp"

#include <algorithm>
#include <cmath>

#include "antlm/errors.hpp"

namespace antlm {

void MaskingPolicy::validate() const {
    if (!(select_rate > 0.0 && select_rate <= 1.0)) {
        throw ConfigError("masking: select_rate must be in (0,1]");
    }
    if (std::abs(mask_frac + random_frac + keep_frac - 1.0) > 1e-9) {
        throw ConfigError("masking: mask/random/keep fractions must sum to 1");
    }
    if (mask_frac < 0 || random_frac < 0 || keep_frac < 0) {
        throw ConfigError("masking: fractions must be nonnegative");
    }
    if (!(span_geometric_p > 0.0 && span_geometric_p < 1.0)) {
        throw ConfigError("masking: span_geometric_p must be in (0,1)");
    }
    if (span_max < 1) throw ConfigError("masking: span_max must be >= 1");
}

ClmBatch make_clm_batch(const TokenGrid& tokens, const BitGrid& padding) {
    if (tokens.cols < 2) {
        throw ContractError("make_clm_batch: sequence length must be >= 2, got " +
                            std::to_string(tokens.cols));
    }
    if (padding.rows != tokens.rows || padding.cols != tokens.cols) {
        throw ContractError("make_clm_batch: padding grid must match tokens");
    }
    ClmBatch b;
    b.inputs = tokens;
    b.targets = TokenGrid(tokens.rows, tokens.cols, 0);
    b.loss_mask = BitGrid(tokens.rows, tokens.cols, 0);
    for (int64_t r = 0; r < tokens.rows; ++r) {
        for (int64_t t = 0; t + 1 < tokens.cols; ++t) {
            if (padding.at(r, t) || padding.at(r, t + 1)) continue;
            b.targets.at(r, t) = tokens.at(r, t + 1);
            b.loss_mask.at(r, t) = 1;
        }
    }
    return b;
}

int64_t sample_span_length(const MaskingPolicy& policy, Rng& rng) {
    // Inverse-CDF draw from geometric(p) truncated to [1, span_max].
    const double p = policy.span_geometric_p;
    const double z = 1.0 - std::pow(1.0 - p, static_cast<double>(policy.span_max));
    const double u = rng.uniform() * z;
    const int64_t len = 1 + static_cast<int64_t>(std::floor(std::log1p(-u) / std::log1p(-p)));
    return std::clamp<int64_t>(len, 1, policy.span_max);
}

namespace {

std::vector<int64_t> candidate_positions(const std::vector<int32_t>& tokens,
                                         const VocabView& vocab) {
    std::vector<int64_t> cand;
    for (size_t i = 0; i < tokens.size(); ++i) {
        if (!vocab.special(tokens[i])) cand.push_back(static_cast<int64_t>(i));
    }
    return cand;
}

int64_t selection_budget(double rate, int64_t n_candidates) {
    return std::max<int64_t>(1, std::llround(rate * static_cast<double>(n_candidates)));
}

}  // namespace

std::vector<int64_t> select_mask_positions(const std::vector<int32_t>& tokens,
                                           const std::vector<uint8_t>& word_starts,
                                           const MaskingPolicy& policy, const VocabView& vocab,
                                           Rng& rng) {
    if (word_starts.size() != tokens.size()) {
        throw ContractError("select_mask_positions: word_starts must align with tokens");
    }
    policy.validate();
    std::vector<int64_t> cand = candidate_positions(tokens, vocab);
    if (cand.empty()) throw ContractError("select_mask_positions: no candidate positions");
    const int64_t budget = selection_budget(policy.select_rate, static_cast<int64_t>(cand.size()));

    std::vector<uint8_t> selected(tokens.size(), 0);
    std::vector<int64_t> order;  // selection order, used for span trimming

    auto mark = [&](int64_t pos) {
        if (!selected[static_cast<size_t>(pos)]) {
            selected[static_cast<size_t>(pos)] = 1;
            order.push_back(pos);
        }
    };

    switch (policy.strategy) {
        case MaskStrategy::Subword: {
            std::vector<int64_t> pool = cand;
            rng.shuffle(pool);
            for (int64_t i = 0; i < budget; ++i) mark(pool[static_cast<size_t>(i)]);
            break;
        }
        case MaskStrategy::WholeWord: {
            // Group candidates into words: a word is a maximal candidate run
            // beginning at a word_start flag (specials break runs).
            std::vector<std::vector<int64_t>> words;
            for (int64_t pos : cand) {
                const bool starts =
                    word_starts[static_cast<size_t>(pos)] || words.empty() ||
                    words.back().back() != pos - 1;
                if (starts) words.emplace_back();
                words.back().push_back(pos);
            }
            rng.shuffle(words);
            for (const auto& w : words) {
                if (static_cast<int64_t>(order.size()) >= budget) break;
                for (int64_t pos : w) mark(pos);
            }
            break;
        }
        case MaskStrategy::Span: {
            std::vector<uint8_t> is_cand(tokens.size(), 0);
            for (int64_t pos : cand) is_cand[static_cast<size_t>(pos)] = 1;
            while (static_cast<int64_t>(order.size()) < budget) {
                const int64_t len = sample_span_length(policy, rng);
                const int64_t start = cand[static_cast<size_t>(
                    rng.uniform_int(static_cast<int64_t>(cand.size())))];
                for (int64_t pos = start;
                     pos < static_cast<int64_t>(tokens.size()) && pos < start + len &&
                     is_cand[static_cast<size_t>(pos)];
                     ++pos) {
                    mark(pos);
                }
            }
            // The last span may overshoot by at most span_max - 1; trim back.
            while (static_cast<int64_t>(order.size()) > budget) {
                selected[static_cast<size_t>(order.back())] = 0;
                order.pop_back();
            }
            break;
        }
    }
    std::vector<int64_t> out;
    for (size_t i = 0; i < selected.size(); ++i) {
        if (selected[i]) out.push_back(static_cast<int64_t>(i));
    }
    return out;
}

CorruptionCounts partition_counts(int64_t k, const MaskingPolicy& policy) {
    // Largest-remainder apportionment of k over the three classes,
    // remainders tied in class order mask > random > keep.
    const double quotas[3] = {policy.mask_frac * static_cast<double>(k),
                              policy.random_frac * static_cast<double>(k),
                              policy.keep_frac * static_cast<double>(k)};
    int64_t counts[3];
    double rem[3];
    int64_t assigned = 0;
    for (int i = 0; i < 3; ++i) {
        counts[i] = static_cast<int64_t>(std::floor(quotas[i] + 1e-12));
        rem[i] = quotas[i] - static_cast<double>(counts[i]);
        assigned += counts[i];
    }
    int idx[3] = {0, 1, 2};
    std::stable_sort(idx, idx + 3, [&](int a, int b) { return rem[a] > rem[b] + 1e-12; });
    for (int64_t s = 0; s < k - assigned; ++s) ++counts[idx[s % 3]];
    return {counts[0], counts[1], counts[2]};
}

CorruptedBatch apply_corruption(const std::vector<int32_t>& tokens,
                                const std::vector<int64_t>& positions,
                                const MaskingPolicy& policy, const VocabView& vocab, Rng& rng) {
    if (vocab.mask_id < 0) throw ConfigError("apply_corruption: vocabulary lacks [MASK]");
    for (int64_t p : positions) {
        if (p < 0 || p >= static_cast<int64_t>(tokens.size())) {
            throw ContractError("apply_corruption: position out of range");
        }
    }
    const int64_t k = static_cast<int64_t>(positions.size());
    const CorruptionCounts counts = partition_counts(k, policy);

    std::vector<int64_t> shuffled = positions;
    rng.shuffle(shuffled);

    CorruptedBatch out;
    out.inputs = TokenGrid(1, static_cast<int64_t>(tokens.size()));
    out.targets = TokenGrid(1, static_cast<int64_t>(tokens.size()), 0);
    out.loss_mask = BitGrid(1, static_cast<int64_t>(tokens.size()), 0);
    std::copy(tokens.begin(), tokens.end(), out.inputs.v.begin());

    for (int64_t i = 0; i < k; ++i) {
        const int64_t pos = shuffled[static_cast<size_t>(i)];
        out.targets.at(0, pos) = tokens[static_cast<size_t>(pos)];
        out.loss_mask.at(0, pos) = 1;
        if (i < counts.masked) {
            out.inputs.at(0, pos) = vocab.mask_id;
        } else if (i < counts.masked + counts.random) {
            const int64_t pick = rng.uniform_int(static_cast<int64_t>(vocab.non_special_ids.size()));
            out.inputs.at(0, pos) = vocab.non_special_ids[static_cast<size_t>(pick)];
        }  // else kept unchanged
    }
    return out;
}

CorruptedBatch make_mlm_batch(const TokenGrid& tokens, const BitGrid& word_starts,
                              const MaskingPolicy& policy, const VocabView& vocab, uint64_t seed) {
    CorruptedBatch out;
    out.inputs = TokenGrid(tokens.rows, tokens.cols);
    out.targets = TokenGrid(tokens.rows, tokens.cols, 0);
    out.loss_mask = BitGrid(tokens.rows, tokens.cols, 0);
    for (int64_t r = 0; r < tokens.rows; ++r) {
        std::vector<int32_t> row(tokens.v.begin() + r * tokens.cols,
                                 tokens.v.begin() + (r + 1) * tokens.cols);
        std::vector<uint8_t> ws(word_starts.v.begin() + r * word_starts.cols,
                                word_starts.v.begin() + (r + 1) * word_starts.cols);
        Rng rng(Rng::derive(seed, {static_cast<uint64_t>(r)}));
        const auto positions = select_mask_positions(row, ws, policy, vocab, rng);
        const CorruptedBatch one = apply_corruption(row, positions, policy, vocab, rng);
        std::copy(one.inputs.v.begin(), one.inputs.v.end(), out.inputs.v.begin() + r * tokens.cols);
        std::copy(one.targets.v.begin(), one.targets.v.end(),
                  out.targets.v.begin() + r * tokens.cols);
        std::copy(one.loss_mask.v.begin(), one.loss_mask.v.end(),
                  out.loss_mask.v.begin() + r * tokens.cols);
    }
    return out;
}

Tensor clm_loss(const Tensor& logits, const ClmBatch& batch) {
    return cross_entropy(logits, batch.targets, batch.loss_mask);
}

Tensor mlm_loss(const Tensor& logits, const CorruptedBatch& batch) {
    return cross_entropy(logits, batch.targets, batch.loss_mask);
}

}  // namespace antlm
