#include "grammar.hpp"

#include <set>
#include <vector>

#include "antlm/rng.hpp"

namespace testgrammar {

namespace {

using antlm::Rng;

const std::vector<std::pair<std::string, std::string>> kNouns = {
    {"cat", "cats"},   {"dog", "dogs"},     {"bird", "birds"}, {"horse", "horses"},
    {"cow", "cows"},   {"fox", "foxes"},    {"lion", "lions"}, {"tiger", "tigers"},
    {"bear", "bears"}, {"rabbit", "rabbits"},
};

// strictly singular / strictly plural determiners, plus "the" for both
const std::vector<std::string> kDetSg = {"one", "this", "every"};
const std::vector<std::string> kDetPl = {"two", "many", "these"};

const std::vector<std::pair<std::string, std::string>> kIntransitive = {
    {"sleeps", "sleep"}, {"runs", "run"},   {"jumps", "jump"},
    {"waits", "wait"},   {"sings", "sing"}, {"swims", "swim"},
};

const std::vector<std::pair<std::string, std::string>> kTransitive = {
    {"chases", "chase"},   {"sees", "see"},   {"likes", "like"},
    {"follows", "follow"}, {"finds", "find"}, {"watches", "watch"},
};

const std::vector<std::string> kAdverbs = {"quietly", "quickly", "often", "today"};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(v.size())))];
}

std::string det_for(bool plural, Rng& rng, bool allow_the = true) {
    const double u = rng.uniform();
    if (allow_the && u < 0.4) return "the";
    return plural ? pick(kDetPl, rng) : pick(kDetSg, rng);
}

std::string noun_phrase(bool plural, Rng& rng) {
    const auto& n = pick(kNouns, rng);
    return det_for(plural, rng) + " " + (plural ? n.second : n.first);
}

// Returns token count through the out-parameter.
std::string sentence(Rng& rng, int64_t& tokens) {
    const bool plural = rng.uniform() < 0.5;
    std::string s = noun_phrase(plural, rng);
    tokens = 3;  // det noun ... "."
    if (rng.uniform() < 0.5) {
        const auto& v = pick(kIntransitive, rng);
        s += " " + (plural ? v.second : v.first);
        tokens += 1;
        if (rng.uniform() < 0.4) {
            s += " " + pick(kAdverbs, rng);
            tokens += 1;
        }
    } else {
        const auto& v = pick(kTransitive, rng);
        const bool obj_plural = rng.uniform() < 0.5;
        s += " " + (plural ? v.second : v.first) + " " + noun_phrase(obj_plural, rng);
        tokens += 3;
    }
    s += " .";
    return s;
}

}  // namespace

GrammarOutput generate(uint64_t seed, int64_t target_tokens, int64_t pairs_per_phenomenon) {
    Rng rng(seed);
    GrammarOutput out;

    int64_t tokens = 0;
    int64_t lines_in_doc = 0;
    while (tokens < target_tokens) {
        std::string line;
        for (int k = 0; k < 8; ++k) {
            int64_t t = 0;
            if (k) line += " ";
            line += sentence(rng, t);
            tokens += t;
        }
        out.corpus += line + "\n";
        if (++lines_in_doc >= 20) {
            out.corpus += "\n";  // document break
            lines_in_doc = 0;
        }
    }

    // Minimal pairs from an independent substream so the exact corpus
    // sentences are not replayed.
    Rng prng(antlm::Rng::derive(seed, {0xBADC0FFE}));
    std::set<std::string> seen;
    auto add_pair = [&](const std::string& phen, const std::string& good,
                        const std::string& bad) {
        if (good == bad) return false;
        const std::string key = phen + "\t" + good + "\t" + bad;
        if (!seen.insert(key).second) return false;
        out.pairs_tsv += key + "\n";
        return true;
    };

    for (int64_t made = 0; made < pairs_per_phenomenon;) {
        // subject-verb agreement: flip only the verb's number
        const bool plural = prng.uniform() < 0.5;
        const auto& n = pick(kNouns, prng);
        const std::string np = det_for(plural, prng) + " " + (plural ? n.second : n.first);
        const auto& v = pick(kIntransitive, prng);
        const std::string good = np + " " + (plural ? v.second : v.first) + " .";
        const std::string bad = np + " " + (plural ? v.first : v.second) + " .";
        if (add_pair("subject_verb_agreement", good, bad)) ++made;
    }
    for (int64_t made = 0; made < pairs_per_phenomenon;) {
        // determiner-noun agreement: flip only the determiner, avoiding "the"
        const bool plural = prng.uniform() < 0.5;
        const auto& n = pick(kNouns, prng);
        const std::string noun = plural ? n.second : n.first;
        const std::string det_good = plural ? pick(kDetPl, prng) : pick(kDetSg, prng);
        const std::string det_bad = plural ? pick(kDetSg, prng) : pick(kDetPl, prng);
        const auto& v = pick(kIntransitive, prng);
        const std::string verb = plural ? v.second : v.first;
        const std::string good = det_good + " " + noun + " " + verb + " .";
        const std::string bad = det_bad + " " + noun + " " + verb + " .";
        if (add_pair("determiner_noun_agreement", good, bad)) ++made;
    }
    for (int64_t made = 0; made < pairs_per_phenomenon;) {
        // word order: move the transitive verb behind its object
        const bool subj_plural = prng.uniform() < 0.5;
        const bool obj_plural = prng.uniform() < 0.5;
        const std::string subj = noun_phrase(subj_plural, prng);
        const std::string obj = noun_phrase(obj_plural, prng);
        const auto& v = pick(kTransitive, prng);
        const std::string verb = subj_plural ? v.second : v.first;
        const std::string good = subj + " " + verb + " " + obj + " .";
        const std::string bad = subj + " " + obj + " " + verb + " .";
        if (add_pair("word_order", good, bad)) ++made;
    }
    return out;
}

}  // namespace testgrammar
