#pragma once

#include <cstdint>
#include <string>

namespace testgrammar {

// Deterministic synthetic corpus from a small probabilistic grammar
// (number-agreeing determiner/noun/verb clauses), plus generated minimal
// pairs covering three phenomena: subject_verb_agreement,
// determiner_noun_agreement and word_order. Corpus lines hold several
// sentences each so corpus-wide line dedup keeps the volume intact.
struct GrammarOutput {
    std::string corpus;     // plain text, blank lines as document breaks
    std::string pairs_tsv;  // phenomenon<TAB>good<TAB>bad
};

GrammarOutput generate(uint64_t seed, int64_t target_tokens, int64_t pairs_per_phenomenon);

}  // namespace testgrammar
