#include <doctest.h>

#include <cmath>
#include <set>

#include "antlm/objectives.hpp"
#include "antlm/tensor.hpp"
#include "helpers.hpp"

using namespace antlm;
using namespace testutil;

namespace {

VocabView fake_vocab(int32_t size = 50) {
    VocabView v;
    v.mask_id = 2;
    v.is_special.assign(static_cast<size_t>(size), 0);
    for (int32_t i = 0; i < 4; ++i) v.is_special[static_cast<size_t>(i)] = 1;
    for (int32_t i = 4; i < size; ++i) v.non_special_ids.push_back(i);
    return v;
}

std::vector<int32_t> plain_tokens(int64_t n, Rng& rng, int32_t vocab = 50) {
    std::vector<int32_t> t(static_cast<size_t>(n));
    for (auto& v : t) v = 4 + static_cast<int32_t>(rng.uniform_int(vocab - 4));
    return t;
}

// Independent oracle: the exact partition minimizes the L1 distance to the
// ideal quotas; ties prefer more masked, then more random.
CorruptionCounts l1_optimal_counts(int64_t k, const MaskingPolicy& policy) {
    CorruptionCounts best{-1, -1, -1};
    double best_cost = 1e300;
    for (int64_t m = 0; m <= k; ++m) {
        for (int64_t r = 0; r + m <= k; ++r) {
            const int64_t keep = k - m - r;
            const double cost = std::abs(m - policy.mask_frac * k) +
                                std::abs(r - policy.random_frac * k) +
                                std::abs(keep - policy.keep_frac * k);
            if (cost < best_cost - 1e-9 ||
                (cost < best_cost + 1e-9 &&
                 (m > best.masked || (m == best.masked && r > best.random)))) {
                best = {m, r, keep};
                best_cost = std::min(best_cost, cost);
            }
        }
    }
    return best;
}

}  // namespace

TEST_CASE("make_clm_batch shift construction") {
    TokenGrid tokens(1, 3);
    tokens.v = {5, 6, 7};
    ClmBatch b = make_clm_batch(tokens, BitGrid(1, 3, 0));
    CHECK(b.inputs.v == std::vector<int32_t>{5, 6, 7});  // bit-identical to raw tokens
    CHECK(b.targets.at(0, 0) == 6);
    CHECK(b.targets.at(0, 1) == 7);
    CHECK(b.loss_mask.v == std::vector<uint8_t>{1, 1, 0});

    BitGrid all_pad(1, 3, 1);
    ClmBatch padded = make_clm_batch(tokens, all_pad);
    CHECK(padded.loss_mask.v == std::vector<uint8_t>{0, 0, 0});

    TokenGrid tiny(1, 1, 5);
    CHECK_THROWS_AS(make_clm_batch(tiny, BitGrid(1, 1, 0)), ContractError);
}

TEST_CASE("clm targets satisfy the shift invariant wherever masked") {
    Rng rng(91);
    TokenGrid tokens(3, 12);
    for (auto& v : tokens.v) v = static_cast<int32_t>(4 + rng.uniform_int(46));
    ClmBatch b = make_clm_batch(tokens, BitGrid(3, 12, 0));
    for (int64_t r = 0; r < 3; ++r) {
        for (int64_t t = 0; t < 12; ++t) {
            if (b.loss_mask.at(r, t)) {
                CHECK(t < 11);
                CHECK(b.targets.at(r, t) == b.inputs.at(r, t + 1));
            }
        }
    }
}

TEST_CASE("subword selection count is deterministic in size") {
    Rng rng(93);
    const VocabView vocab = fake_vocab();
    MaskingPolicy policy;
    policy.strategy = MaskStrategy::Subword;
    std::vector<int32_t> tokens = plain_tokens(20, rng);
    std::vector<uint8_t> starts(20, 1);
    const auto sel = select_mask_positions(tokens, starts, policy, vocab, rng);
    CHECK(sel.size() == 3);  // round(0.15 * 20)

    // specials are never candidates
    tokens[0] = 0;
    tokens[5] = 2;
    const auto sel2 = select_mask_positions(tokens, starts, policy, vocab, rng);
    for (int64_t p : sel2) {
        CHECK(p != 0);
        CHECK(p != 5);
    }

    std::vector<int32_t> all_special(4, 1);
    std::vector<uint8_t> st4(4, 1);
    CHECK_THROWS_AS(select_mask_positions(all_special, st4, policy, vocab, rng), ContractError);
}

TEST_CASE("whole-word selection expands to full words") {
    Rng rng(97);
    const VocabView vocab = fake_vocab();
    MaskingPolicy policy;
    policy.strategy = MaskStrategy::WholeWord;
    // words of sizes 3,1,2,1,3,2 over 12 positions
    std::vector<uint8_t> starts = {1, 0, 0, 1, 1, 0, 1, 1, 0, 0, 1, 0};
    std::vector<int32_t> tokens = plain_tokens(12, rng);
    for (int trial = 0; trial < 50; ++trial) {
        const auto sel = select_mask_positions(tokens, starts, policy, vocab, rng);
        std::set<int64_t> s(sel.begin(), sel.end());
        // if any token of a word is selected, the whole word is
        const std::vector<std::pair<int64_t, int64_t>> words = {{0, 3}, {3, 4},  {4, 6},
                                                                {6, 7}, {7, 10}, {10, 12}};
        for (const auto& [b, e] : words) {
            bool any = false, all = true;
            for (int64_t p = b; p < e; ++p) {
                any = any || s.count(p);
                all = all && s.count(p);
            }
            if (any) CHECK(all);
        }
        CHECK(sel.size() >= 2);  // budget max(1, round(0.15*12)) = 2, words may overshoot
    }
}

TEST_CASE("span selection yields contiguous runs trimmed to budget") {
    Rng rng(101);
    const VocabView vocab = fake_vocab();
    MaskingPolicy policy;  // Span by default
    std::vector<int32_t> tokens = plain_tokens(64, rng);
    std::vector<uint8_t> starts(64, 1);
    for (int trial = 0; trial < 50; ++trial) {
        const auto sel = select_mask_positions(tokens, starts, policy, vocab, rng);
        CHECK(sel.size() == 10);  // round(0.15 * 64)
        std::set<int64_t> s(sel.begin(), sel.end());
        int64_t runs = 0;
        for (int64_t p : sel) {
            if (!s.count(p - 1)) ++runs;
        }
        CHECK(runs >= 1);
        CHECK(runs <= 10);
    }
}

TEST_CASE("span lengths follow the truncated geometric distribution (chi-square)") {
    Rng rng(103);
    MaskingPolicy policy;
    const int64_t N = 100000;
    std::vector<int64_t> hist(11, 0);
    for (int64_t i = 0; i < N; ++i) {
        const int64_t len = sample_span_length(policy, rng);
        REQUIRE(len >= 1);
        REQUIRE(len <= 10);
        ++hist[static_cast<size_t>(len)];
    }
    const double p = policy.span_geometric_p;
    const double z = 1.0 - std::pow(1.0 - p, 10.0);
    double stat = 0.0;
    for (int64_t l = 1; l <= 10; ++l) {
        const double expected = N * (p * std::pow(1.0 - p, static_cast<double>(l - 1)) / z);
        const double diff = static_cast<double>(hist[static_cast<size_t>(l)]) - expected;
        stat += diff * diff / expected;
    }
    // chi-square critical value, 9 dof, alpha = 0.01
    CHECK(stat < 21.665994333461924);
}

TEST_CASE("partition counts: paper case, boundary case, exhaustive oracle") {
    MaskingPolicy policy;
    const CorruptionCounts ten = partition_counts(10, policy);
    CHECK(ten.masked == 8);
    CHECK(ten.random == 1);
    CHECK(ten.kept == 1);

    const CorruptionCounts one = partition_counts(1, policy);
    CHECK(one.masked == 1);
    CHECK(one.random == 0);
    CHECK(one.kept == 0);

    for (int64_t k = 1; k <= 50; ++k) {
        const CorruptionCounts got = partition_counts(k, policy);
        const CorruptionCounts want = l1_optimal_counts(k, policy);
        CHECK(got.masked + got.random + got.kept == k);
        CHECK(got.masked == want.masked);
        CHECK(got.random == want.random);
        CHECK(got.kept == want.kept);
    }
}

TEST_CASE("apply_corruption classes, specials, reconstruction, determinism") {
    Rng seed_rng(107);
    const VocabView vocab = fake_vocab();
    MaskingPolicy policy;

    int64_t random_replacements = 0;
    for (int trial = 0; trial < 10000; ++trial) {
        Rng rng(seed_rng.next_u64());
        std::vector<int32_t> tokens = plain_tokens(32, rng);
        std::vector<int64_t> positions;
        for (int64_t i = 0; i < 10; ++i) positions.push_back(i * 3);
        const CorruptedBatch b = apply_corruption(tokens, positions, policy, vocab, rng);
        int64_t masked = 0, changed_non_mask = 0, kept = 0;
        for (int64_t pos : positions) {
            const int32_t in = b.inputs.at(0, pos);
            CHECK(b.loss_mask.at(0, pos) == 1);
            CHECK(b.targets.at(0, pos) == tokens[static_cast<size_t>(pos)]);
            if (in == vocab.mask_id) {
                ++masked;
            } else if (in != tokens[static_cast<size_t>(pos)]) {
                ++changed_non_mask;
                CHECK(!vocab.special(in));
                ++random_replacements;
            } else {
                ++kept;
            }
        }
        CHECK(masked == 8);
        // a "random" draw may land on the original token, so changed <= 1
        CHECK(changed_non_mask <= 1);
        CHECK(masked + changed_non_mask + kept == 10);
        for (int64_t i = 0; i < 32; ++i) {
            if (!b.loss_mask.at(0, i)) {
                CHECK(b.inputs.at(0, i) == tokens[static_cast<size_t>(i)]);
                CHECK(b.targets.at(0, i) == 0);
            }
        }
        // reconstruction: originals recoverable from (inputs, targets, loss_mask)
        for (int64_t i = 0; i < 32; ++i) {
            const int32_t original =
                b.loss_mask.at(0, i) ? b.targets.at(0, i) : b.inputs.at(0, i);
            CHECK(original == tokens[static_cast<size_t>(i)]);
        }
    }
    CHECK(random_replacements > 0);

    VocabView no_mask = vocab;
    no_mask.mask_id = -1;
    Rng rng(1);
    std::vector<int32_t> tokens = plain_tokens(8, rng);
    CHECK_THROWS_AS(apply_corruption(tokens, {0, 1}, policy, no_mask, rng), ConfigError);
}

TEST_CASE("make_mlm_batch is deterministic in (tokens, policy, seed)") {
    Rng rng(109);
    const VocabView vocab = fake_vocab();
    MaskingPolicy policy;
    TokenGrid tokens(4, 32);
    for (auto& v : tokens.v) v = 4 + static_cast<int32_t>(rng.uniform_int(46));
    BitGrid starts(4, 32, 1);
    const CorruptedBatch a = make_mlm_batch(tokens, starts, policy, vocab, 42);
    const CorruptedBatch b = make_mlm_batch(tokens, starts, policy, vocab, 42);
    CHECK(a.inputs.v == b.inputs.v);
    CHECK(a.targets.v == b.targets.v);
    CHECK(a.loss_mask.v == b.loss_mask.v);
    const CorruptedBatch c = make_mlm_batch(tokens, starts, policy, vocab, 43);
    CHECK(a.inputs.v != c.inputs.v);
}

TEST_CASE("subword corruption rate stays inside [0.13, 0.17]") {
    Rng rng(113);
    const VocabView vocab = fake_vocab();
    MaskingPolicy policy;
    policy.strategy = MaskStrategy::Subword;
    for (int trial = 0; trial < 2000; ++trial) {
        std::vector<int32_t> tokens = plain_tokens(128, rng);
        std::vector<uint8_t> starts(128, 1);
        const auto sel = select_mask_positions(tokens, starts, policy, vocab, rng);
        const double rate = static_cast<double>(sel.size()) / 128.0;
        CHECK(rate >= 0.13);
        CHECK(rate <= 0.17);
    }
}

TEST_CASE("policy validation") {
    MaskingPolicy bad;
    bad.mask_frac = 0.7;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    MaskingPolicy bad2;
    bad2.select_rate = 0.0;
    CHECK_THROWS_AS(bad2.validate(), ConfigError);
}

TEST_CASE("clm_loss and mlm_loss delegate to cross_entropy") {
    Rng rng(127);
    const int64_t B = 2, T = 6, V = 16;
    TokenGrid tokens(B, T);
    for (auto& v : tokens.v) v = 4 + static_cast<int32_t>(rng.uniform_int(12));
    ClmBatch cb = make_clm_batch(tokens, BitGrid(B, T, 0));

    Tensor uniform = Tensor::zeros({B, T, V});
    CHECK(clm_loss(uniform, cb).item() == doctest::Approx(std::log(16.0)).epsilon(1e-6));

    Tensor sharp = Tensor::zeros({B, T, V});
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t t = 0; t < T; ++t) {
            if (cb.loss_mask.at(b, t)) {
                sharp.values_mut()[(b * T + t) * V + cb.targets.at(b, t)] = 40.0f;
            }
        }
    }
    CHECK(clm_loss(sharp, cb).item() < 1e-6);

    Tensor logits = random_tensor({B, T, V}, rng, -2, 2);
    CHECK(clm_loss(logits, cb).item() ==
          cross_entropy(logits, cb.targets, cb.loss_mask).item());

    const VocabView vocab = fake_vocab(V);
    MaskingPolicy policy;
    BitGrid starts(B, T, 1);
    CorruptedBatch mb = make_mlm_batch(tokens, starts, policy, vocab, 7);
    CHECK(mlm_loss(uniform, mb).item() == doctest::Approx(std::log(16.0)).epsilon(1e-6));
    CHECK(mlm_loss(logits, mb).item() ==
          cross_entropy(logits, mb.targets, mb.loss_mask).item());

    // loss ignores logits at non-selected positions, bit for bit
    Tensor perturbed = Tensor::from(logits.shape(),
                                    {logits.values().begin(), logits.values().end()});
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t t = 0; t < T; ++t) {
            if (!mb.loss_mask.at(b, t)) {
                for (int64_t v = 0; v < V; ++v) {
                    perturbed.values_mut()[(b * T + t) * V + v] += 3.0f;
                }
            }
        }
    }
    CHECK(mlm_loss(perturbed, mb).item() == mlm_loss(logits, mb).item());

    // MLM targets at selected positions are the originals, never [MASK]
    for (int64_t i = 0; i < B * T; ++i) {
        if (mb.loss_mask.v[static_cast<size_t>(i)]) {
            CHECK(mb.targets.v[static_cast<size_t>(i)] != vocab.mask_id);
        }
    }
}
