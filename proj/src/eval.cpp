#include "antlm/eval.hpp"

#include <cmath>
#include <sstream>

#include "antlm/errors.hpp"

namespace antlm {

namespace {

constexpr uint64_t kEvalStream = 0xA11C0DE3;

// log softmax(logits_row)[target] with the usual max-subtraction, in double.
double log_prob_at(std::span<const float> row, int32_t target) {
    float mx = row[0];
    for (float v : row) mx = std::max(mx, v);
    double denom = 0.0;
    for (float v : row) denom += std::exp(static_cast<double>(v) - mx);
    return static_cast<double>(row[static_cast<size_t>(target)]) - mx - std::log(denom);
}

constexpr int64_t kPllChunk = 32;

}  // namespace

const char* scoring_mode_name(ScoringMode m) {
    return m == ScoringMode::CausalLogProb ? "clm" : "pll";
}

double clm_sentence_logprob(const TransformerLM& model, const std::vector<int32_t>& tokens) {
    if (tokens.empty()) throw ContractError("clm_sentence_logprob: empty sentence");
    const int64_t n = static_cast<int64_t>(tokens.size());
    if (n + 1 > model.config().max_seq_len) {
        throw ContractError("clm_sentence_logprob: sentence length " + std::to_string(n + 1) +
                            " (with BOS) exceeds max_seq_len");
    }
    TokenGrid grid(1, n + 1);
    grid.at(0, 0) = Tokenizer::kDoc;
    for (int64_t i = 0; i < n; ++i) grid.at(0, i + 1) = tokens[static_cast<size_t>(i)];
    const Tensor logits = model.forward(grid, MaskMode::Causal);
    const int64_t V = logits.dim(2);
    double score = 0.0;
    for (int64_t t = 0; t < n; ++t) {
        score += log_prob_at(logits.values().subspan(static_cast<size_t>(t * V),
                                                     static_cast<size_t>(V)),
                             tokens[static_cast<size_t>(t)]);
    }
    return score;
}

namespace {

double pll_batched_range(const TransformerLM& model, const std::vector<int32_t>& tokens,
                         int64_t begin, int64_t end) {
    const int64_t n = static_cast<int64_t>(tokens.size());
    const int64_t rows = end - begin;
    TokenGrid grid(rows, n);
    for (int64_t r = 0; r < rows; ++r) {
        for (int64_t i = 0; i < n; ++i) grid.at(r, i) = tokens[static_cast<size_t>(i)];
        grid.at(r, begin + r) = Tokenizer::kMask;
    }
    const Tensor logits = model.forward(grid, MaskMode::Bidirectional);
    const int64_t V = logits.dim(2);
    double score = 0.0;
    for (int64_t r = 0; r < rows; ++r) {
        const int64_t t = begin + r;
        score += log_prob_at(logits.values().subspan(static_cast<size_t>((r * n + t) * V),
                                                     static_cast<size_t>(V)),
                             tokens[static_cast<size_t>(t)]);
    }
    return score;
}

}  // namespace

double mlm_pseudo_loglik(const TransformerLM& model, const std::vector<int32_t>& tokens) {
    if (tokens.empty()) throw ContractError("mlm_pseudo_loglik: empty sentence");
    const int64_t n = static_cast<int64_t>(tokens.size());
    if (n > model.config().max_seq_len) {
        throw ContractError("mlm_pseudo_loglik: sentence exceeds max_seq_len");
    }
    double score = 0.0;
    for (int64_t begin = 0; begin < n; begin += kPllChunk) {
        score += pll_batched_range(model, tokens, begin, std::min(n, begin + kPllChunk));
    }
    return score;
}

double mlm_pseudo_loglik_loop(const TransformerLM& model, const std::vector<int32_t>& tokens) {
    if (tokens.empty()) throw ContractError("mlm_pseudo_loglik_loop: empty sentence");
    const int64_t n = static_cast<int64_t>(tokens.size());
    double score = 0.0;
    for (int64_t t = 0; t < n; ++t) score += pll_batched_range(model, tokens, t, t + 1);
    return score;
}

SentenceScorer make_scorer(const TransformerLM& model, const Tokenizer& tok, ScoringMode mode) {
    return [&model, &tok, mode](const std::string& sentence) {
        const Encoded enc = encode(tok, normalize_line(sentence));
        if (enc.ids.empty()) throw ContractError("scorer: sentence encodes to zero tokens");
        return mode == ScoringMode::CausalLogProb ? clm_sentence_logprob(model, enc.ids)
                                                  : mlm_pseudo_loglik(model, enc.ids);
    };
}

EvalReport minimal_pair_accuracy(const SentenceScorer& scorer,
                                 const std::vector<MinimalPair>& pairs, ScoringMode mode) {
    if (pairs.empty()) throw ContractError("minimal_pair_accuracy: no pairs");
    std::map<std::string, int64_t> correct, total;
    for (const MinimalPair& p : pairs) {
        const double g = scorer(p.good);
        const double b = scorer(p.bad);
        total[p.phenomenon] += 1;
        if (g > b) correct[p.phenomenon] += 1;  // ties count incorrect
    }
    EvalReport r;
    r.scoring_mode = mode;
    double acc_sum = 0.0;
    for (const auto& [phen, n] : total) {
        const double acc = static_cast<double>(correct[phen]) / static_cast<double>(n);
        r.per_phenomenon[phen] = acc;
        r.pairs_per_phenomenon[phen] = n;
        r.n_pairs += n;
        acc_sum += acc;
    }
    r.macro_average = acc_sum / static_cast<double>(total.size());
    return r;
}

EvalReport minimal_pair_accuracy(const TransformerLM& model, const Tokenizer& tok,
                                 const std::vector<MinimalPair>& pairs, ScoringMode mode) {
    return minimal_pair_accuracy(make_scorer(model, tok, mode), pairs, mode);
}

double perplexity(const TransformerLM& model, const PackedDataset& data, Objective objective,
                  const MaskingPolicy& policy, const VocabView& vocab, uint64_t seed) {
    if (data.sequences.rows == 0) throw ContractError("perplexity: empty dataset");
    double nll_sum = 0.0;
    int64_t count = 0;
    const int64_t chunk = 16;
    for (int64_t begin = 0; begin < data.sequences.rows; begin += chunk) {
        const int64_t rows = std::min(chunk, data.sequences.rows - begin);
        TokenGrid tokens(rows, data.sequences.cols);
        BitGrid starts(rows, data.sequences.cols);
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c = 0; c < data.sequences.cols; ++c) {
                tokens.at(r, c) = data.sequences.at(begin + r, c);
                starts.at(r, c) = data.word_starts.at(begin + r, c);
            }
        }
        TokenGrid inputs, targets;
        BitGrid mask;
        MaskMode mode;
        if (objective == Objective::CLM) {
            ClmBatch b = make_clm_batch(tokens, BitGrid(rows, tokens.cols, 0));
            inputs = std::move(b.inputs);
            targets = std::move(b.targets);
            mask = std::move(b.loss_mask);
            mode = MaskMode::Causal;
        } else {
            CorruptedBatch b = make_mlm_batch(
                tokens, starts, policy, vocab,
                Rng::derive(seed, {kEvalStream, static_cast<uint64_t>(begin)}));
            inputs = std::move(b.inputs);
            targets = std::move(b.targets);
            mask = std::move(b.loss_mask);
            mode = MaskMode::Bidirectional;
        }
        const Tensor logits = model.forward(inputs, mode);
        const int64_t V = logits.dim(2);
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t t = 0; t < tokens.cols; ++t) {
                if (!mask.at(r, t)) continue;
                nll_sum -= log_prob_at(
                    logits.values().subspan(static_cast<size_t>(((r * tokens.cols) + t) * V),
                                            static_cast<size_t>(V)),
                    targets.at(r, t));
                ++count;
            }
        }
    }
    if (count == 0) throw NumericError("perplexity: no scored positions");
    return std::exp(nll_sum / static_cast<double>(count));
}

double mlm_masked_accuracy(const TransformerLM& model, const PackedDataset& data,
                           const MaskingPolicy& policy, const VocabView& vocab, uint64_t seed) {
    if (data.sequences.rows == 0) throw ContractError("mlm_masked_accuracy: empty dataset");
    int64_t hit = 0, count = 0;
    const int64_t chunk = 16;
    for (int64_t begin = 0; begin < data.sequences.rows; begin += chunk) {
        const int64_t rows = std::min(chunk, data.sequences.rows - begin);
        TokenGrid tokens(rows, data.sequences.cols);
        BitGrid starts(rows, data.sequences.cols);
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t c = 0; c < data.sequences.cols; ++c) {
                tokens.at(r, c) = data.sequences.at(begin + r, c);
                starts.at(r, c) = data.word_starts.at(begin + r, c);
            }
        }
        CorruptedBatch b = make_mlm_batch(
            tokens, starts, policy, vocab,
            Rng::derive(seed, {kEvalStream, static_cast<uint64_t>(begin)}));
        const Tensor logits = model.forward(b.inputs, MaskMode::Bidirectional);
        const int64_t V = logits.dim(2);
        for (int64_t r = 0; r < rows; ++r) {
            for (int64_t t = 0; t < tokens.cols; ++t) {
                if (!b.loss_mask.at(r, t)) continue;
                const auto row = logits.values().subspan(
                    static_cast<size_t>(((r * tokens.cols) + t) * V), static_cast<size_t>(V));
                int64_t argmax = 0;
                for (int64_t v = 1; v < V; ++v) {
                    if (row[static_cast<size_t>(v)] > row[static_cast<size_t>(argmax)]) argmax = v;
                }
                if (argmax == b.targets.at(r, t)) ++hit;
                ++count;
            }
        }
    }
    return static_cast<double>(hit) / static_cast<double>(count);
}

PairFile parse_pair_file(const std::string& contents) {
    PairFile out;
    std::istringstream is(contents);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        const size_t t1 = line.find('\t');
        const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
        if (t1 == std::string::npos || t2 == std::string::npos) {
            out.malformed.push_back("line " + std::to_string(lineno) +
                                    ": expected phenomenon<TAB>good<TAB>bad");
            continue;
        }
        MinimalPair p;
        p.phenomenon = line.substr(0, t1);
        p.good = line.substr(t1 + 1, t2 - t1 - 1);
        p.bad = line.substr(t2 + 1);
        if (p.phenomenon.empty() || p.good.empty() || p.bad.empty()) {
            out.malformed.push_back("line " + std::to_string(lineno) + ": empty field");
            continue;
        }
        if (p.good == p.bad) {
            out.malformed.push_back("line " + std::to_string(lineno) + ": good == bad");
            continue;
        }
        out.pairs.push_back(std::move(p));
    }
    return out;
}

}  // namespace antlm
