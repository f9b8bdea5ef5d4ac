#include <doctest.h>

#include <cmath>

#include "antlm/tensor.hpp"
#include "helpers.hpp"

using namespace antlm;
using namespace testutil;

namespace {

// Naive triple-loop product over 2-D matrices, the independent matmul oracle.
std::vector<float> naive_matmul(const std::vector<float>& a, const std::vector<float>& b,
                                int64_t m, int64_t k, int64_t n) {
    std::vector<float> c(static_cast<size_t>(m * n), 0.0f);
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int64_t p = 0; p < k; ++p) {
                acc += static_cast<double>(a[static_cast<size_t>(i * k + p)]) *
                       b[static_cast<size_t>(p * n + j)];
            }
            c[static_cast<size_t>(i * n + j)] = static_cast<float>(acc);
        }
    }
    return c;
}

}  // namespace

TEST_CASE("matmul identity and fixed product") {
    Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
    Tensor col = Tensor::from({2, 1}, {5, 6});
    Tensor r1 = matmul(eye, col);
    CHECK(r1.values()[0] == doctest::Approx(5));
    CHECK(r1.values()[1] == doctest::Approx(6));

    Tensor a = Tensor::from({2, 2}, {1, 2, 3, 4});
    Tensor r2 = matmul(a, col);
    CHECK(r2.values()[0] == doctest::Approx(17));
    CHECK(r2.values()[1] == doctest::Approx(39));
}

TEST_CASE("matmul matches naive oracle on random shapes incl. broadcast") {
    Rng rng(11);
    for (int trial = 0; trial < 10; ++trial) {
        const int64_t m = 1 + rng.uniform_int(5);
        const int64_t k = 1 + rng.uniform_int(5);
        const int64_t n = 1 + rng.uniform_int(5);
        Tensor a = random_tensor({m, k}, rng);
        Tensor b = random_tensor({k, n}, rng);
        Tensor c = matmul(a, b);
        const auto want = naive_matmul(
            {a.values().begin(), a.values().end()}, {b.values().begin(), b.values().end()}, m, k, n);
        CHECK(rel_err_norm(c.values(), want) < 1e-6);
    }
    // batched x 2-D weight
    Tensor a3 = random_tensor({3, 4, 5}, rng);
    Tensor w = random_tensor({5, 2}, rng);
    Tensor c3 = matmul(a3, w);
    REQUIRE(c3.shape() == Shape{3, 4, 2});
    for (int64_t b = 0; b < 3; ++b) {
        std::vector<float> slice(a3.values().begin() + b * 20, a3.values().begin() + (b + 1) * 20);
        const auto want = naive_matmul(slice, {w.values().begin(), w.values().end()}, 4, 5, 2);
        CHECK(rel_err_norm(std::span<const float>(c3.values().data() + b * 8, 8), want) < 1e-6);
    }
    // broadcast of b over leading batch dims
    Tensor a4 = random_tensor({2, 3, 2, 4}, rng);
    Tensor b4 = random_tensor({1, 1, 4, 3}, rng);
    Tensor c4 = matmul(a4, b4);
    REQUIRE(c4.shape() == Shape{2, 3, 2, 3});
}

TEST_CASE("matmul shape errors name both shapes") {
    Tensor a = Tensor::zeros({2, 3});
    Tensor b = Tensor::zeros({4, 2});
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), ShapeError);
    CHECK_THROWS_AS(matmul(Tensor::zeros({3}), b), ShapeError);
}

TEST_CASE("matmul gradient matches finite differences") {
    Rng rng(7);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a = random_tensor({3, 3}, rng);
        Tensor b = random_tensor({3, 3}, rng);
        const double err = gradcheck(
            [](const std::vector<Tensor>& ls) { return sum(matmul(ls[0], ls[1])); }, {a, b}, 1e-3);
        CHECK(err < 1e-3);
    }
}

TEST_CASE("softmax basics") {
    Tensor u = softmax(Tensor::from({3}, {0, 0, 0}), 0);
    for (float v : u.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-6));

    Tensor two = softmax(Tensor::from({2}, {0.0f, std::log(3.0f)}), 0);
    CHECK(two.values()[0] == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(two.values()[1] == doctest::Approx(0.75).epsilon(1e-6));

    CHECK_THROWS_AS(softmax(Tensor::zeros({2, 2}), 2), ContractError);
}

TEST_CASE("softmax shift invariance and row sums") {
    Rng rng(3);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({4, 6}, rng, -3, 3);
        const float c = static_cast<float>(rng.uniform() * 10 - 5);
        Tensor shifted = add(x, Tensor::full({4, 6}, c));
        Tensor y0 = softmax(x, 1);
        Tensor y1 = softmax(shifted, 1);
        CHECK(rel_err_norm(y0.values(), y1.values()) < 1e-5);
        for (int64_t r = 0; r < 4; ++r) {
            double s = 0.0;
            for (int64_t j = 0; j < 6; ++j) s += y0.values()[r * 6 + j];
            CHECK(std::abs(s - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("softmax gradient matches finite differences over both axes") {
    Rng rng(5);
    for (int64_t axis = 0; axis < 2; ++axis) {
        for (int trial = 0; trial < 5; ++trial) {
            Tensor x = random_tensor({4, 5}, rng, -2, 2);
            Tensor w = random_tensor({4, 5}, rng);
            const double err = gradcheck(
                [axis, &w](const std::vector<Tensor>& ls) {
                    return sum(mul(softmax(ls[0], axis), w));
                },
                {x}, 1e-3);
            CHECK(err < 1e-3);
        }
    }
}

TEST_CASE("layer_norm zero-variance input and mean contract") {
    Tensor x = Tensor::full({6}, 3.25f);
    Tensor gain = Tensor::full({6}, 1.0f);
    Tensor bias = Tensor::zeros({6});
    Tensor y = layer_norm(x, gain, bias, 1e-5f);
    for (float v : y.values()) CHECK(std::abs(v) < 1e-6);

    Rng rng(9);
    Tensor r = random_tensor({4, 8}, rng, -2, 2);
    Tensor g8 = Tensor::full({8}, 1.0f);
    Tensor b8 = Tensor::zeros({8});
    Tensor yn = layer_norm(r, g8, b8, 1e-5f);
    for (int64_t row = 0; row < 4; ++row) {
        double mean = 0.0;
        for (int64_t j = 0; j < 8; ++j) mean += yn.values()[row * 8 + j];
        mean /= 8;
        CHECK(std::abs(mean) < 1e-5);
    }
    CHECK_THROWS_AS(layer_norm(r, Tensor::zeros({7}), b8, 1e-5f), ShapeError);
    CHECK_THROWS_AS(layer_norm(r, g8, b8, 0.0f), ContractError);
}

TEST_CASE("layer_norm gradient matches finite differences") {
    Rng rng(13);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({4, 8}, rng, -2, 2);
        Tensor gain = random_tensor({8}, rng, 0.5, 1.5);
        Tensor bias = random_tensor({8}, rng, -0.5, 0.5);
        Tensor w = random_tensor({4, 8}, rng);
        const double err = gradcheck(
            [&w](const std::vector<Tensor>& ls) {
                return sum(mul(layer_norm(ls[0], ls[1], ls[2], 1e-5f), w));
            },
            {x, gain, bias}, 1e-3);
        CHECK(err < 1e-3);
    }
}

TEST_CASE("gelu values against the high-precision tanh-form reference") {
    Tensor x = Tensor::from({3}, {0.0f, 1.0f, 10.0f});
    Tensor y = gelu(x);
    CHECK(y.values()[0] == doctest::Approx(0.0));
    CHECK(y.values()[1] == doctest::Approx(0.8411919906082767).epsilon(1e-6));
    CHECK(std::abs(y.values()[2] - 10.0f) < 1e-4);
}

TEST_CASE("gelu gradient matches finite differences") {
    Rng rng(17);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor x = random_tensor({12}, rng, -3, 3);
        Tensor w = random_tensor({12}, rng);
        const double err = gradcheck(
            [&w](const std::vector<Tensor>& ls) { return sum(mul(gelu(ls[0]), w)); }, {x}, 1e-3);
        CHECK(err < 1e-3);
    }
}

TEST_CASE("embedding_lookup gather, counting-oracle gradient, bounds") {
    Rng rng(21);
    Tensor table = random_tensor({5, 3}, rng);
    TokenGrid ids(2, 4, 0);
    Tensor out = embedding_lookup(table, ids);
    REQUIRE(out.shape() == Shape{2, 4, 3});
    for (int64_t i = 0; i < 8; ++i) {
        for (int64_t j = 0; j < 3; ++j) {
            CHECK(out.values()[i * 3 + j] == table.values()[j]);
        }
    }

    // gradient of sum(output) w.r.t. table = per-row occurrence counts
    TokenGrid mixed(2, 3);
    mixed.v = {0, 2, 2, 4, 0, 2};
    table.set_requires_grad(true);
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor loss = sum(embedding_lookup(table, mixed));
        tape.backward(loss);
    }
    const int64_t counts[5] = {2, 0, 3, 0, 1};
    for (int64_t r = 0; r < 5; ++r) {
        for (int64_t j = 0; j < 3; ++j) {
            CHECK(table.grad()[r * 3 + j] == doctest::Approx(static_cast<double>(counts[r])));
        }
    }

    TokenGrid bad(1, 1);
    bad.v = {5};
    CHECK_THROWS_WITH_AS(embedding_lookup(table, bad), doctest::Contains("5"), IndexError);
}

TEST_CASE("cross_entropy uniform, near-one-hot, empty-mask error") {
    const int64_t V = 64;
    Tensor logits = Tensor::zeros({1, 2, V});
    TokenGrid targets(1, 2, 7);
    BitGrid mask(1, 2, 1);
    Tensor loss = cross_entropy(logits, targets, mask);
    CHECK(loss.item() == doctest::Approx(std::log(64.0)).epsilon(1e-6));

    Tensor sharp = Tensor::zeros({1, 1, V});
    sharp.values_mut()[7] = 30.0f;
    TokenGrid t1(1, 1, 7);
    BitGrid m1(1, 1, 1);
    CHECK(cross_entropy(sharp, t1, m1).item() < 1e-6);

    BitGrid zero_mask(1, 2, 0);
    CHECK_THROWS_AS(cross_entropy(logits, targets, zero_mask), NumericError);

    TokenGrid out_of_range(1, 2, static_cast<int32_t>(V));
    CHECK_THROWS_AS(cross_entropy(logits, out_of_range, mask), IndexError);
}

TEST_CASE("cross_entropy value and gradient against brute-force oracle") {
    Rng rng(23);
    const int64_t B = 2, T = 3, V = 8;
    for (int trial = 0; trial < 10; ++trial) {
        Tensor logits = random_tensor({B, T, V}, rng, -4, 4);
        TokenGrid targets(B, T);
        BitGrid mask(B, T);
        int64_t count = 0;
        for (auto& v : targets.v) v = static_cast<int32_t>(rng.uniform_int(V));
        for (auto& m : mask.v) m = rng.uniform() < 0.7 ? 1 : 0;
        for (auto m : mask.v) count += m;
        if (count == 0) {
            mask.v[0] = 1;
            count = 1;
        }

        // independent double-precision oracle for value and gradient
        double want = 0.0;
        std::vector<float> want_grad(static_cast<size_t>(B * T * V), 0.0f);
        for (int64_t b = 0; b < B; ++b) {
            for (int64_t t = 0; t < T; ++t) {
                if (!mask.at(b, t)) continue;
                double denom = 0.0;
                for (int64_t v = 0; v < V; ++v) {
                    denom += std::exp(static_cast<double>(logits.values()[(b * T + t) * V + v]));
                }
                const int32_t tgt = targets.at(b, t);
                want -= std::log(
                    std::exp(static_cast<double>(logits.values()[(b * T + t) * V + tgt])) / denom);
                for (int64_t v = 0; v < V; ++v) {
                    const double p =
                        std::exp(static_cast<double>(logits.values()[(b * T + t) * V + v])) / denom;
                    want_grad[static_cast<size_t>((b * T + t) * V + v)] =
                        static_cast<float>((p - (v == tgt ? 1.0 : 0.0)) / static_cast<double>(count));
                }
            }
        }
        want /= static_cast<double>(count);

        logits.set_requires_grad(true);
        Tape tape;
        double got;
        {
            Tape::Scope scope(tape);
            Tensor loss = cross_entropy(logits, targets, mask);
            got = loss.item();
            tape.backward(loss);
        }
        CHECK(std::abs(got - want) < 1e-5);
        CHECK(rel_err_norm(logits.grad(), want_grad) < 1e-5);
    }
}

TEST_CASE("cross_entropy is invariant to per-position logit shifts") {
    Rng rng(29);
    Tensor logits = random_tensor({2, 3, 8}, rng, -3, 3);
    TokenGrid targets(2, 3);
    for (auto& v : targets.v) v = static_cast<int32_t>(rng.uniform_int(8));
    BitGrid mask(2, 3, 1);
    const float base = cross_entropy(logits, targets, mask).item();

    Tensor shifted =
        Tensor::from(logits.shape(), {logits.values().begin(), logits.values().end()});
    for (int64_t p = 0; p < 6; ++p) {
        const float c = static_cast<float>(rng.uniform() * 4 - 2);
        for (int64_t v = 0; v < 8; ++v) shifted.values_mut()[p * 8 + v] += c;
    }
    CHECK(std::abs(cross_entropy(shifted, targets, mask).item() - base) < 1e-5);
}

TEST_CASE("backward fills leaves, accumulates, and enforces scalar contract") {
    Rng rng(31);
    Tensor x = random_tensor({3, 4}, rng);
    x.set_requires_grad(true);
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor loss = sum(x);
        tape.backward(loss);
        for (float g : x.grad()) CHECK(g == doctest::Approx(1.0));
        tape.backward(loss);  // second call accumulates
        for (float g : x.grad()) CHECK(g == doctest::Approx(2.0));

        Tensor vec = add(x, x);
        CHECK_THROWS_AS(tape.backward(vec), ContractError);
    }
    Tensor detached = Tensor::zeros({1});
    CHECK_THROWS_AS(backward(detached), ContractError);
}

TEST_CASE("composed matmul+softmax+cross_entropy graph passes finite differences") {
    Rng rng(37);
    const int64_t B = 2, T = 3, d = 4, V = 6;
    TokenGrid targets(B, T);
    for (auto& v : targets.v) v = static_cast<int32_t>(rng.uniform_int(V));
    BitGrid mask(B, T, 1);
    for (int trial = 0; trial < 5; ++trial) {
        Tensor x = random_tensor({B, T, d}, rng);
        Tensor w = random_tensor({d, V}, rng);
        // h balances float32 forward noise against truncation error
        const double err = gradcheck(
            [&](const std::vector<Tensor>& ls) {
                Tensor logits = matmul(softmax(ls[0], 2), ls[1]);
                return cross_entropy(logits, targets, mask);
            },
            {x, w}, 5e-3);
        CHECK(err < 1e-3);
    }
}

TEST_CASE("numeric_gradient closed forms") {
    // f implemented in double by the test, so the analytic answer is exact
    Tensor x = Tensor::from({2}, {1, 2});
    Tensor g = numeric_gradient(
        [](const Tensor& t) {
            double s = 0.0;
            for (float v : t.values()) s += static_cast<double>(v) * v;
            return s;
        },
        x, 1e-4);
    CHECK(std::abs(g.values()[0] - 2.0) < 1e-6);
    CHECK(std::abs(g.values()[1] - 4.0) < 1e-6);

    Tensor c = numeric_gradient([](const Tensor&) { return 42.0; }, x, 1e-4);
    for (float v : c.values()) CHECK(v == 0.0f);

    CHECK_THROWS_AS(numeric_gradient([](const Tensor&) { return 0.0; }, x, 0.0), ContractError);
}

TEST_CASE("masked_softmax honors masks and zeroes fully blocked rows") {
    Rng rng(41);
    const int64_t B = 2, H = 2, T = 4;
    Tensor scores = random_tensor({B, H, T, T}, rng, -2, 2);
    BitGrid allowed(T, T, 0);
    for (int64_t i = 0; i < T; ++i) {
        for (int64_t j = 0; j <= i; ++j) allowed.at(i, j) = 1;  // causal pattern
    }
    BitGrid padding(B, T, 0);
    padding.at(1, 0) = 1;  // row 1: key 0 padded, so its query row 0 is fully blocked

    Tensor y = masked_softmax(scores, allowed, padding);
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t h = 0; h < H; ++h) {
            for (int64_t i = 0; i < T; ++i) {
                double s = 0.0;
                bool any = false;
                for (int64_t j = 0; j < T; ++j) {
                    const float v = y.values()[((b * H + h) * T + i) * T + j];
                    const bool ok = allowed.at(i, j) && !padding.at(b, j);
                    if (!ok) CHECK(v == 0.0f);
                    s += v;
                    any = any || ok;
                }
                if (any) {
                    CHECK(std::abs(s - 1.0) < 1e-6);
                } else {
                    CHECK(s == 0.0);  // fully blocked row: zeros, not NaN
                }
            }
        }
    }

    Tensor w = random_tensor({B, H, T, T}, rng);
    const double err = gradcheck(
        [&](const std::vector<Tensor>& ls) {
            return sum(mul(masked_softmax(ls[0], allowed, padding), w));
        },
        {scores}, 1e-3);
    CHECK(err < 1e-3);
}

TEST_CASE("shape-plumbing ops pass finite differences") {
    Rng rng(43);
    Tensor x = random_tensor({2, 3, 4}, rng);
    Tensor w1 = random_tensor({4, 3, 2}, rng);
    CHECK(gradcheck(
              [&](const std::vector<Tensor>& ls) {
                  return sum(mul(permute(ls[0], {2, 1, 0}), w1));
              },
              {x}) < 1e-3);
    Tensor w2 = random_tensor({2, 4, 3}, rng);
    CHECK(gradcheck(
              [&](const std::vector<Tensor>& ls) {
                  return sum(mul(transpose_last2(ls[0]), w2));
              },
              {x}) < 1e-3);
    Tensor w3 = random_tensor({24}, rng);
    CHECK(gradcheck(
              [&](const std::vector<Tensor>& ls) { return sum(mul(reshape(ls[0], {24}), w3)); },
              {x}) < 1e-3);
    Tensor w4 = random_tensor({2, 3, 2}, rng);
    CHECK(gradcheck(
              [&](const std::vector<Tensor>& ls) {
                  return sum(mul(slice_last(ls[0], 1, 3), w4));
              },
              {x}) < 1e-3);
    Tensor b = random_tensor({4}, rng);
    CHECK(gradcheck(
              [&](const std::vector<Tensor>& ls) {
                  return sum(mul(add(ls[0], ls[1]), scale(ls[0], 0.5f)));
              },
              {x, b}) < 1e-3);
}

TEST_CASE("ops never mutate their inputs") {
    Rng rng(47);
    Tensor a = random_tensor({3, 3}, rng);
    Tensor b = random_tensor({3, 3}, rng);
    Frozen fa(a), fb(b);
    (void)matmul(a, b);
    (void)softmax(a, 1);
    (void)gelu(a);
    (void)add(a, b);
    (void)mul(a, b);
    (void)sub(a, b);
    (void)scale(a, 2.0f);
    (void)sum(a);
    (void)permute(a, {1, 0});
    (void)reshape(a, {9});
    (void)slice_last(a, 0, 2);
    Tensor gain = Tensor::full({3}, 1.0f);
    Tensor bias = Tensor::zeros({3});
    Frozen fg(gain), fbi(bias);
    (void)layer_norm(a, gain, bias, 1e-5f);
    CHECK(fa.unchanged());
    CHECK(fb.unchanged());
    CHECK(fg.unchanged());
    CHECK(fbi.unchanged());
}

TEST_CASE("op outputs carry no NaN on sane inputs") {
    Rng rng(53);
    Tensor a = random_tensor({4, 4}, rng, -30, 30);
    for (const Tensor& t : {softmax(a, 1), gelu(a),
                            layer_norm(a, Tensor::full({4}, 1.0f), Tensor::zeros({4}), 1e-5f)}) {
        for (float v : t.values()) CHECK(!std::isnan(v));
    }
}
