#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "antlm/grid.hpp"
#include "antlm/objectives.hpp"

namespace antlm {

// UTF-8 corpus cleaning: validates encoding (error carries the byte offset),
// composes common Latin combining sequences, maps curly quotes / dashes /
// ellipses to ASCII, collapses whitespace runs, drops exact-duplicate lines
// corpus-wide (first kept), and turns blank lines into document boundaries.
// Idempotent.
std::string preprocess_text(const std::string& raw);

// Single-line variant (no dedup, no document handling) used when normalizing
// standalone sentences for scoring.
std::string normalize_line(const std::string& line);

struct Tokenizer {
    // id layout: specials first, then alphabet (sorted), then merge products
    // in merge order. Word-internal subwords carry the "##" prefix.
    static constexpr int32_t kPad = 0;
    static constexpr int32_t kDoc = 1;
    static constexpr int32_t kMask = 2;
    static constexpr int32_t kUnk = 3;
    static constexpr int32_t kNumSpecials = 4;

    std::vector<std::string> id_to_token;
    std::unordered_map<std::string, int32_t> token_to_id;
    std::vector<std::pair<std::string, std::string>> merges;  // in training order
    std::vector<uint8_t> word_start;                          // per id

    int32_t vocab_size() const { return static_cast<int32_t>(id_to_token.size()); }
    bool is_special(int32_t id) const { return id >= 0 && id < kNumSpecials; }

    VocabView vocab_view() const;

    std::string serialize() const;
    static Tokenizer deserialize(const std::string& text);
};

// Greedy highest-frequency pair merging over the cleaned corpus, ties broken
// lexicographically. Deterministic. vocab_size counts specials + alphabet +
// merges.
Tokenizer train_bpe(const std::string& cleaned_corpus, int64_t vocab_size);

struct Encoded {
    std::vector<int32_t> ids;
    std::vector<uint8_t> word_starts;
};

// Whitespace-normalized text in, subword ids out. Unknown symbols become UNK.
Encoded encode(const Tokenizer& tok, const std::string& text);
std::string decode(const Tokenizer& tok, const std::vector<int32_t>& ids);

// Documents of a cleaned corpus (blank-line separated).
std::vector<std::string> split_documents(const std::string& cleaned);

struct PackedDataset {
    TokenGrid sequences;   // [N, seq_len], no PAD
    BitGrid word_starts;   // aligned flags
};

// Greedy fixed-length packing of the document stream, one DOC separator
// between documents; the trailing remainder shorter than seq_len is dropped.
PackedDataset pack_sequences(const std::vector<std::vector<int32_t>>& documents,
                             const Tokenizer& tok, int64_t seq_len);

// Convenience: clean -> split -> encode -> pack.
PackedDataset load_corpus(const Tokenizer& tok, const std::string& raw_corpus, int64_t seq_len);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& contents);

}  // namespace antlm
