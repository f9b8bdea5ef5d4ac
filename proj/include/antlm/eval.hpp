#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "antlm/data.hpp"
#include "antlm/model.hpp"
#include "antlm/objectives.hpp"
#include "antlm/schedule.hpp"

namespace antlm {

struct MinimalPair {
    std::string good;
    std::string bad;
    std::string phenomenon;
};

enum class ScoringMode { CausalLogProb, PseudoLogLikelihood };

const char* scoring_mode_name(ScoringMode m);

struct EvalReport {
    std::map<std::string, double> per_phenomenon;  // label -> accuracy
    std::map<std::string, int64_t> pairs_per_phenomenon;
    double macro_average = 0.0;
    int64_t n_pairs = 0;
    ScoringMode scoring_mode = ScoringMode::CausalLogProb;
};

// Sum of log p(token_t | tokens_<t) under the causal mask; a DOC token is
// prepended as BOS.
double clm_sentence_logprob(const TransformerLM& model, const std::vector<int32_t>& tokens);

// Pseudo log-likelihood: sum over t of log p(token_t | sequence with
// position t masked) under bidirectional attention, one masked copy per
// position, batched.
double mlm_pseudo_loglik(const TransformerLM& model, const std::vector<int32_t>& tokens);
// One-position-at-a-time reference path (the batched op must match it).
double mlm_pseudo_loglik_loop(const TransformerLM& model, const std::vector<int32_t>& tokens);

using SentenceScorer = std::function<double(const std::string&)>;

// Pair counts correct iff score(good) > score(bad); ties are incorrect.
// macro_average is the unweighted mean over phenomena.
EvalReport minimal_pair_accuracy(const SentenceScorer& scorer,
                                 const std::vector<MinimalPair>& pairs, ScoringMode mode);
EvalReport minimal_pair_accuracy(const TransformerLM& model, const Tokenizer& tok,
                                 const std::vector<MinimalPair>& pairs, ScoringMode mode);

SentenceScorer make_scorer(const TransformerLM& model, const Tokenizer& tok, ScoringMode mode);

// exp(mean NLL) under the batch construction matching the objective.
double perplexity(const TransformerLM& model, const PackedDataset& data, Objective objective,
                  const MaskingPolicy& policy, const VocabView& vocab, uint64_t seed);

// Fraction of MLM-selected positions whose argmax logit equals the original
// token (under a deterministic corruption of the given seed).
double mlm_masked_accuracy(const TransformerLM& model, const PackedDataset& data,
                           const MaskingPolicy& policy, const VocabView& vocab, uint64_t seed);

// Tab-separated pair file: phenomenon<TAB>good<TAB>bad, '#' comments.
// Malformed lines are collected with their line numbers; more than 5%
// malformed aborts.
struct PairFile {
    std::vector<MinimalPair> pairs;
    std::vector<std::string> malformed;  // "line N: why"
};
PairFile parse_pair_file(const std::string& contents);

}  // namespace antlm
