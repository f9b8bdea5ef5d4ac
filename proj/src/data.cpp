#include "antlm/data.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "antlm/errors.hpp"

namespace antlm {

namespace {

// ---- UTF-8 ----

uint32_t utf8_decode(const std::string& s, size_t& i) {
    const auto fail = [&](const char* why) {
        throw IoError("invalid UTF-8 at byte offset " + std::to_string(i) + ": " + why);
    };
    const uint8_t b0 = static_cast<uint8_t>(s[i]);
    if (b0 < 0x80) {
        ++i;
        return b0;
    }
    int extra = 0;
    uint32_t cp = 0;
    if ((b0 & 0xE0) == 0xC0) {
        extra = 1;
        cp = b0 & 0x1F;
    } else if ((b0 & 0xF0) == 0xE0) {
        extra = 2;
        cp = b0 & 0x0F;
    } else if ((b0 & 0xF8) == 0xF0) {
        extra = 3;
        cp = b0 & 0x07;
    } else {
        fail("bad leading byte");
    }
    if (i + static_cast<size_t>(extra) >= s.size()) fail("truncated sequence");
    for (int k = 1; k <= extra; ++k) {
        const uint8_t b = static_cast<uint8_t>(s[i + static_cast<size_t>(k)]);
        if ((b & 0xC0) != 0x80) fail("bad continuation byte");
        cp = (cp << 6) | (b & 0x3F);
    }
    static const uint32_t kMin[4] = {0, 0x80, 0x800, 0x10000};
    if (cp < kMin[extra]) fail("overlong encoding");
    if (cp >= 0xD800 && cp <= 0xDFFF) fail("surrogate codepoint");
    if (cp > 0x10FFFF) fail("codepoint out of range");
    i += static_cast<size_t>(extra) + 1;
    return cp;
}

void utf8_append(std::string& out, uint32_t cp) {
    if (cp < 0x80) {
        out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
        out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
        out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
        out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
        out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
}

// Composition of the common Latin base + combining-mark pairs (the slice of
// canonical composition this corpus tooling needs; full Unicode tables are
// out of proportion here).
uint32_t compose_latin(uint32_t base, uint32_t mark) {
    struct Entry {
        uint32_t mark;
        const char* bases;
        const uint32_t* composed;
    };
    static const uint32_t grave[] = {0xC0, 0xC8, 0xCC, 0xD2, 0xD9, 0xE0, 0xE8, 0xEC, 0xF2, 0xF9};
    static const uint32_t acute[] = {0xC1, 0xC9, 0xCD, 0xD3, 0xDA, 0xDD, 0x106, 0x143, 0x15A, 0x179,
                                     0xE1, 0xE9, 0xED, 0xF3, 0xFA, 0xFD, 0x107, 0x144, 0x15B, 0x17A};
    static const uint32_t circ[] = {0xC2, 0xCA, 0xCE, 0xD4, 0xDB, 0xE2, 0xEA, 0xEE, 0xF4, 0xFB};
    static const uint32_t tilde[] = {0xC3, 0xD1, 0xD5, 0xE3, 0xF1, 0xF5};
    static const uint32_t diaer[] = {0xC4, 0xCB, 0xCF, 0xD6, 0xDC, 0xE4, 0xEB, 0xEF, 0xF6, 0xFC, 0xFF};
    static const uint32_t caron[] = {0x10C, 0x160, 0x17D, 0x10D, 0x161, 0x17E};
    static const uint32_t cedil[] = {0xC7, 0xE7};
    static const Entry table[] = {
        {0x300, "AEIOUaeiou", grave},
        {0x301, "AEIOUYCNSZaeiouycnsz", acute},
        {0x302, "AEIOUaeiou", circ},
        {0x303, "ANOano", tilde},
        {0x308, "AEIOUaeiouy", diaer},
        {0x30C, "CSZcsz", caron},
        {0x327, "Cc", cedil},
    };
    for (const Entry& e : table) {
        if (e.mark != mark) continue;
        for (const char* p = e.bases; *p; ++p) {
            if (static_cast<uint32_t>(*p) == base) return e.composed[p - e.bases];
        }
    }
    return 0;
}

bool is_space_cp(uint32_t cp) {
    return cp == ' ' || cp == '\t' || cp == '\r' || cp == '\f' || cp == '\v' || cp == 0xA0 ||
           (cp >= 0x2000 && cp <= 0x200A) || cp == 0x202F || cp == 0x3000;
}

// One line: compose marks, normalize punctuation, collapse whitespace.
std::string normalize_codepoints(const std::vector<uint32_t>& cps) {
    std::vector<uint32_t> composed;
    composed.reserve(cps.size());
    for (uint32_t cp : cps) {
        if (!composed.empty()) {
            if (const uint32_t c = compose_latin(composed.back(), cp)) {
                composed.back() = c;
                continue;
            }
        }
        composed.push_back(cp);
    }
    std::string out;
    bool pending_space = false;
    bool any = false;
    auto push = [&](const char* s) {
        if (pending_space && any) out.push_back(' ');
        pending_space = false;
        any = true;
        out += s;
    };
    auto push_cp = [&](uint32_t cp) {
        if (pending_space && any) out.push_back(' ');
        pending_space = false;
        any = true;
        utf8_append(out, cp);
    };
    for (uint32_t cp : composed) {
        if (is_space_cp(cp)) {
            pending_space = true;
            continue;
        }
        switch (cp) {
            case 0x2018:
            case 0x2019:
            case 0x201A:
            case 0x2032:
                push("'");
                break;
            case 0x201C:
            case 0x201D:
            case 0x201E:
            case 0xAB:
            case 0xBB:
                push("\"");
                break;
            case 0x2010:
            case 0x2011:
            case 0x2012:
            case 0x2013:
            case 0x2014:
            case 0x2015:
                push("-");
                break;
            case 0x2026:
                push("...");
                break;
            default:
                push_cp(cp);
        }
    }
    return out;
}

}  // namespace

std::string normalize_line(const std::string& line) {
    std::vector<uint32_t> cps;
    size_t i = 0;
    while (i < line.size()) cps.push_back(utf8_decode(line, i));
    return normalize_codepoints(cps);
}

std::string preprocess_text(const std::string& raw) {
    // Validate + split into lines first so encoding errors report a global
    // byte offset.
    std::vector<std::vector<uint32_t>> lines(1);
    size_t i = 0;
    while (i < raw.size()) {
        const uint32_t cp = utf8_decode(raw, i);
        if (cp == '\n') {
            lines.emplace_back();
        } else {
            lines.back().push_back(cp);
        }
    }
    std::set<std::string> seen;
    std::string out;
    bool boundary_pending = false;
    bool any = false;
    for (const auto& cps : lines) {
        const std::string norm = normalize_codepoints(cps);
        if (norm.empty()) {
            boundary_pending = true;
            continue;
        }
        if (!seen.insert(norm).second) continue;  // exact duplicate, keep first
        if (any) out += boundary_pending ? "\n\n" : "\n";
        boundary_pending = false;
        any = true;
        out += norm;
    }
    return out;
}

// ---- Tokenizer ----

namespace {

const char* kSpecialNames[4] = {"<pad>", "<doc>", "<mask>", "<unk>"};

std::vector<std::string> word_to_symbols(const std::string& word) {
    std::vector<std::string> syms;
    size_t i = 0;
    bool first = true;
    while (i < word.size()) {
        const size_t start = i;
        utf8_decode(word, i);
        std::string s = first ? "" : "##";
        s += word.substr(start, i - start);
        syms.push_back(std::move(s));
        first = false;
    }
    return syms;
}

std::string merge_product(const std::string& a, const std::string& b) {
    return a + (b.rfind("##", 0) == 0 ? b.substr(2) : b);
}

std::vector<std::string> split_words(const std::string& text) {
    std::vector<std::string> words;
    std::string cur;
    for (char c : text) {
        if (c == ' ' || c == '\n') {
            if (!cur.empty()) words.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    if (!cur.empty()) words.push_back(std::move(cur));
    return words;
}

void finalize_tokenizer(Tokenizer& tok) {
    tok.token_to_id.clear();
    for (size_t i = 0; i < tok.id_to_token.size(); ++i) {
        tok.token_to_id[tok.id_to_token[i]] = static_cast<int32_t>(i);
    }
    tok.word_start.assign(tok.id_to_token.size(), 0);
    for (size_t i = 0; i < tok.id_to_token.size(); ++i) {
        const std::string& t = tok.id_to_token[i];
        tok.word_start[i] =
            (static_cast<int32_t>(i) >= Tokenizer::kNumSpecials && t.rfind("##", 0) != 0) ? 1 : 0;
    }
}

}  // namespace

VocabView Tokenizer::vocab_view() const {
    VocabView v;
    v.mask_id = kMask;
    v.is_special.assign(id_to_token.size(), 0);
    for (int32_t i = 0; i < kNumSpecials; ++i) v.is_special[static_cast<size_t>(i)] = 1;
    for (int32_t i = kNumSpecials; i < vocab_size(); ++i) v.non_special_ids.push_back(i);
    return v;
}

Tokenizer train_bpe(const std::string& cleaned_corpus, int64_t vocab_size) {
    std::map<std::vector<std::string>, int64_t> word_freq_map;
    for (const std::string& w : split_words(cleaned_corpus)) {
        ++word_freq_map[word_to_symbols(w)];
    }
    std::vector<std::pair<std::vector<std::string>, int64_t>> words(word_freq_map.begin(),
                                                                    word_freq_map.end());
    std::set<std::string> alphabet;
    for (const auto& [syms, freq] : words) {
        for (const auto& s : syms) alphabet.insert(s);
    }
    const int64_t floor_size = Tokenizer::kNumSpecials + static_cast<int64_t>(alphabet.size());
    if (vocab_size < floor_size) {
        throw ConfigError("train_bpe: vocab_size " + std::to_string(vocab_size) +
                          " is below specials + alphabet = " + std::to_string(floor_size));
    }

    Tokenizer tok;
    for (const char* s : kSpecialNames) tok.id_to_token.emplace_back(s);
    for (const auto& s : alphabet) tok.id_to_token.push_back(s);
    std::set<std::string> vocab_set(tok.id_to_token.begin(), tok.id_to_token.end());

    while (static_cast<int64_t>(tok.id_to_token.size()) < vocab_size) {
        // Count adjacent pairs, weighted by word frequency. An ordered map
        // gives the lexicographic tie-break for free.
        std::map<std::pair<std::string, std::string>, int64_t> pair_count;
        for (const auto& [syms, freq] : words) {
            for (size_t i = 0; i + 1 < syms.size(); ++i) {
                pair_count[{syms[i], syms[i + 1]}] += freq;
            }
        }
        std::pair<std::string, std::string> best;
        int64_t best_count = 0;
        for (const auto& [pair, count] : pair_count) {
            if (count > best_count && !vocab_set.count(merge_product(pair.first, pair.second))) {
                best = pair;
                best_count = count;
            }
        }
        if (best_count == 0) break;  // nothing left to merge

        const std::string product = merge_product(best.first, best.second);
        for (auto& [syms, freq] : words) {
            std::vector<std::string> merged;
            merged.reserve(syms.size());
            for (size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i] == best.first && syms[i + 1] == best.second) {
                    merged.push_back(product);
                    ++i;
                } else {
                    merged.push_back(syms[i]);
                }
            }
            syms = std::move(merged);
        }
        tok.merges.push_back(best);
        tok.id_to_token.push_back(product);
        vocab_set.insert(product);
    }
    finalize_tokenizer(tok);
    return tok;
}

Encoded encode(const Tokenizer& tok, const std::string& text) {
    std::map<std::pair<std::string, std::string>, int64_t> rank;
    for (size_t i = 0; i < tok.merges.size(); ++i) rank[tok.merges[i]] = static_cast<int64_t>(i);

    Encoded out;
    for (const std::string& w : split_words(text)) {
        std::vector<std::string> syms = word_to_symbols(w);
        while (syms.size() > 1) {
            int64_t best_rank = -1;
            for (size_t i = 0; i + 1 < syms.size(); ++i) {
                auto it = rank.find({syms[i], syms[i + 1]});
                if (it != rank.end() && (best_rank < 0 || it->second < best_rank)) {
                    best_rank = it->second;
                }
            }
            if (best_rank < 0) break;
            // merge every occurrence of the best pair, left to right
            const auto pair = tok.merges[static_cast<size_t>(best_rank)];
            std::vector<std::string> merged;
            merged.reserve(syms.size());
            for (size_t i = 0; i < syms.size(); ++i) {
                if (i + 1 < syms.size() && syms[i] == pair.first && syms[i + 1] == pair.second) {
                    merged.push_back(merge_product(pair.first, pair.second));
                    ++i;
                } else {
                    merged.push_back(syms[i]);
                }
            }
            syms = std::move(merged);
        }
        bool first = true;
        for (const auto& s : syms) {
            auto it = tok.token_to_id.find(s);
            out.ids.push_back(it != tok.token_to_id.end() ? it->second : Tokenizer::kUnk);
            out.word_starts.push_back(first ? 1 : 0);
            first = false;
        }
    }
    return out;
}

std::string decode(const Tokenizer& tok, const std::vector<int32_t>& ids) {
    std::string out;
    for (int32_t id : ids) {
        if (id < 0 || id >= tok.vocab_size()) {
            throw IndexError("decode: id " + std::to_string(id) + " outside vocabulary");
        }
        const std::string& t = tok.id_to_token[static_cast<size_t>(id)];
        if (tok.is_special(id)) {
            if (id == Tokenizer::kDoc) {
                out += out.empty() ? "" : "\n";
            }
            // other specials render as nothing
            continue;
        }
        if (t.rfind("##", 0) == 0) {
            out += t.substr(2);
        } else {
            if (!out.empty() && out.back() != '\n') out.push_back(' ');
            out += t;
        }
    }
    return out;
}

std::string Tokenizer::serialize() const {
    std::ostringstream os;
    os << "antlm-tokenizer 1\n";
    os << "[specials]\n";
    for (const char* s : kSpecialNames) os << s << "\n";
    os << "[merges]\n";
    for (const auto& [a, b] : merges) os << a << " " << b << "\n";
    os << "[vocab]\n";
    for (const auto& t : id_to_token) os << t << "\n";
    return os.str();
}

Tokenizer Tokenizer::deserialize(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    auto next = [&](const char* what) {
        if (!std::getline(is, line)) throw ParseError(std::string("tokenizer file: missing ") + what);
        return line;
    };
    if (next("header") != "antlm-tokenizer 1") {
        throw ParseError("tokenizer file: bad header '" + line + "'");
    }
    if (next("[specials]") != "[specials]") throw ParseError("tokenizer file: expected [specials]");
    Tokenizer tok;
    for (int i = 0; i < kNumSpecials; ++i) {
        if (next("special") != kSpecialNames[i]) {
            throw ParseError("tokenizer file: special #" + std::to_string(i) + " must be " +
                             kSpecialNames[i]);
        }
    }
    if (next("[merges]") != "[merges]") throw ParseError("tokenizer file: expected [merges]");
    while (next("merge or [vocab]") != "[vocab]") {
        const size_t sp = line.find(' ');
        if (sp == std::string::npos || sp == 0 || sp + 1 >= line.size()) {
            throw ParseError("tokenizer file: malformed merge line '" + line + "'");
        }
        tok.merges.emplace_back(line.substr(0, sp), line.substr(sp + 1));
    }
    std::vector<std::string> vocab;
    while (std::getline(is, line)) {
        if (!line.empty()) vocab.push_back(line);
    }
    // Verify the vocab is exactly the deterministic derivation:
    // specials, alphabet, then one product per merge in order.
    const size_t n_alpha = vocab.size() - static_cast<size_t>(kNumSpecials) - tok.merges.size();
    if (vocab.size() < static_cast<size_t>(kNumSpecials) + tok.merges.size()) {
        throw ParseError("tokenizer file: vocab smaller than specials + merges");
    }
    std::set<std::string> known;
    for (size_t i = 0; i < vocab.size(); ++i) {
        if (i < static_cast<size_t>(kNumSpecials)) {
            if (vocab[i] != kSpecialNames[i]) {
                throw ParseError("tokenizer file: vocab entry " + std::to_string(i) +
                                 " must be the special " + kSpecialNames[i]);
            }
        } else if (i < static_cast<size_t>(kNumSpecials) + n_alpha) {
            known.insert(vocab[i]);
        } else {
            const auto& m = tok.merges[i - static_cast<size_t>(kNumSpecials) - n_alpha];
            if (!known.count(m.first) || !known.count(m.second)) {
                throw ParseError("tokenizer file: merge '" + m.first + " " + m.second +
                                 "' uses symbols not yet derived");
            }
            const std::string product = merge_product(m.first, m.second);
            if (product != vocab[i]) {
                throw ParseError("tokenizer file: vocab entry '" + vocab[i] +
                                 "' does not match merge product '" + product + "'");
            }
            known.insert(product);
        }
    }
    tok.id_to_token = vocab;
    finalize_tokenizer(tok);
    return tok;
}

std::vector<std::string> split_documents(const std::string& cleaned) {
    std::vector<std::string> docs;
    std::string cur;
    size_t i = 0;
    while (i < cleaned.size()) {
        if (cleaned.compare(i, 2, "\n\n") == 0) {
            if (!cur.empty()) docs.push_back(std::move(cur));
            cur.clear();
            i += 2;
        } else {
            cur.push_back(cleaned[i]);
            ++i;
        }
    }
    if (!cur.empty()) docs.push_back(std::move(cur));
    return docs;
}

PackedDataset pack_sequences(const std::vector<std::vector<int32_t>>& documents,
                             const Tokenizer& tok, int64_t seq_len) {
    if (seq_len < 2) throw ContractError("pack_sequences: seq_len must be >= 2");
    std::vector<int32_t> stream;
    for (size_t d = 0; d < documents.size(); ++d) {
        if (d > 0) stream.push_back(Tokenizer::kDoc);
        stream.insert(stream.end(), documents[d].begin(), documents[d].end());
    }
    const int64_t n_rows = static_cast<int64_t>(stream.size()) / seq_len;
    PackedDataset ds;
    ds.sequences = TokenGrid(n_rows, seq_len);
    ds.word_starts = BitGrid(n_rows, seq_len, 0);
    for (int64_t i = 0; i < n_rows * seq_len; ++i) {
        const int32_t id = stream[static_cast<size_t>(i)];
        ds.sequences.v[static_cast<size_t>(i)] = id;
        ds.word_starts.v[static_cast<size_t>(i)] = tok.word_start[static_cast<size_t>(id)];
    }
    return ds;
}

PackedDataset load_corpus(const Tokenizer& tok, const std::string& raw_corpus, int64_t seq_len) {
    const std::string cleaned = preprocess_text(raw_corpus);
    std::vector<std::vector<int32_t>> docs;
    for (const std::string& doc : split_documents(cleaned)) {
        docs.push_back(encode(tok, doc).ids);
    }
    return pack_sequences(docs, tok, seq_len);
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open file: " + path);
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

void write_file(const std::string& path, const std::string& contents) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write file: " + path);
    f << contents;
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace antlm
