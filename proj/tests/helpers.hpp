#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "antlm/rng.hpp"
#include "antlm/tensor.hpp"

namespace testutil {

using antlm::Rng;
using antlm::Shape;
using antlm::Tape;
using antlm::Tensor;

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (auto& v : t.values_mut()) {
        v = static_cast<float>(lo + (hi - lo) * rng.uniform());
    }
    return t;
}

inline double l2(std::span<const float> v) {
    double s = 0.0;
    for (float x : v) s += static_cast<double>(x) * x;
    return std::sqrt(s);
}

// Norm-relative disagreement between two same-shaped buffers.
inline double rel_err_norm(std::span<const float> a, std::span<const float> b) {
    double diff = 0.0;
    for (size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - b[i];
        diff += d * d;
    }
    const double scale = std::max({l2(a), l2(b), 1e-12});
    return std::sqrt(diff) / scale;
}

// Analytic-vs-finite-difference check: build() must construct a scalar loss
// from the given leaves (pure; callable with or without an active tape).
// Returns the worst norm-relative error over all leaves.
inline double gradcheck(const std::function<Tensor(const std::vector<Tensor>&)>& build,
                        std::vector<Tensor> leaves, double h = 1e-3) {
    for (auto& l : leaves) {
        l.set_requires_grad(true);
        l.zero_grad();  // grads accumulate across calls by contract
    }
    Tape tape;
    {
        Tape::Scope scope(tape);
        Tensor loss = build(leaves);
        tape.backward(loss);
    }
    double worst = 0.0;
    for (size_t i = 0; i < leaves.size(); ++i) {
        const Tensor fd = antlm::numeric_gradient(
            [&](const Tensor& x) {
                std::vector<Tensor> probe = leaves;
                probe[i] = x;
                return static_cast<double>(build(probe).item());
            },
            leaves[i], h);
        worst = std::max(worst, rel_err_norm(leaves[i].grad(), fd.values()));
    }
    return worst;
}

// Snapshot-compare helper for the "ops never mutate inputs" property.
struct Frozen {
    std::vector<float> copy;
    const Tensor* t;
    explicit Frozen(const Tensor& tensor)
        : copy(tensor.values().begin(), tensor.values().end()), t(&tensor) {}
    bool unchanged() const {
        return std::equal(copy.begin(), copy.end(), t->values().begin(), t->values().end());
    }
};

}  // namespace testutil
