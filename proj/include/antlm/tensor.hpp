#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "antlm/errors.hpp"
#include "antlm/grid.hpp"
#include "antlm/rng.hpp"

namespace antlm {

class Tape;

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorData {
    Shape shape;
    std::vector<float> values;
    std::vector<float> grad;  // leaves only; allocated on first accumulation
    bool requires_grad = false;
    Tape* tape = nullptr;  // compared by address against the active tape only
    uint64_t tape_epoch = 0;
    int64_t tape_id = -1;
};

// Value-semantics handle onto a shared buffer. Ops never mutate inputs;
// each op allocates a fresh output. Gradients accumulate additively on
// leaves until zero_grad().
class Tensor {
public:
    Tensor() : d_(std::make_shared<TensorData>()) {}

    static Tensor zeros(Shape shape);
    static Tensor full(Shape shape, float value);
    static Tensor from(Shape shape, std::vector<float> values);
    static Tensor scalar(float value);
    // Normal(0, stddev), deterministic in rng stream order.
    static Tensor randn(Shape shape, Rng& rng, double stddev);

    const Shape& shape() const { return d_->shape; }
    int64_t ndim() const { return static_cast<int64_t>(d_->shape.size()); }
    int64_t numel() const { return static_cast<int64_t>(d_->values.size()); }
    int64_t dim(int64_t i) const { return d_->shape[static_cast<size_t>(i)]; }

    std::span<const float> values() const { return d_->values; }
    // Single-writer surface used by the optimizer and initializers.
    std::span<float> values_mut() { return d_->values; }

    bool has_grad() const { return !d_->grad.empty(); }
    std::span<const float> grad() const;
    std::span<float> grad_mut();
    void zero_grad();

    Tensor& set_requires_grad(bool b) {
        d_->requires_grad = b;
        return *this;
    }
    bool requires_grad() const { return d_->requires_grad; }
    int64_t tape_id() const { return d_->tape_id; }

    float item() const;

    const std::shared_ptr<TensorData>& data() const { return d_; }

private:
    explicit Tensor(std::shared_ptr<TensorData> d) : d_(std::move(d)) {}
    std::shared_ptr<TensorData> d_;
};

// Reverse-mode tape. Nodes are recorded in execution order (inputs always
// precede their consumers); backward() walks them once in reverse.
// Gradients of intermediate nodes live in per-call scratch; only leaves
// (tensors not produced by a node on this tape) accumulate persistently.
//
// A tape is single-writer. Independent tapes on separate threads are fine:
// the active tape is thread-local.
class Tape {
public:
    Tape();
    ~Tape();
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // RAII activation; ops record onto the innermost active tape.
    class Scope {
    public:
        explicit Scope(Tape& t);
        ~Scope();
        Scope(const Scope&) = delete;
        Scope& operator=(const Scope&) = delete;

    private:
        Tape* prev_;
    };

    static Tape* active();

    size_t node_count() const { return nodes_.size(); }

    // Fills grad on every requires_grad leaf reachable from loss.
    // Repeated calls accumulate.
    void backward(const Tensor& loss);

    // --- recording api (used by ops) ---
    bool attached(const TensorData& t) const {
        return t.tape == this && t.tape_epoch == epoch_;
    }
    bool involves(const Tensor& t) const {
        return t.requires_grad() || attached(*t.data());
    }
    int64_t ensure_slot(const Tensor& t);
    using BackwardFn = std::function<void(Tape&)>;
    void record(std::vector<int64_t> input_ids, const Tensor& out, BackwardFn fn);

    // --- gradient buffers during backward (called from node closures) ---
    bool wants_grad(int64_t id) const;
    std::span<const float> grad_read(int64_t id);
    std::span<float> grad_acc(int64_t id);

private:
    struct Slot {
        std::shared_ptr<TensorData> tensor;
        bool is_node_output = false;
    };
    struct Node {
        std::vector<int64_t> inputs;
        int64_t output;
        BackwardFn fn;
    };
    std::vector<Slot> slots_;
    std::vector<Node> nodes_;
    std::vector<std::vector<float>> scratch_;
    bool in_backward_ = false;
    uint64_t epoch_;
};

// ---- differentiable ops ----

// Batched matrix product (leading dims broadcast numpy-style).
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, int64_t axis);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps);
Tensor gelu(const Tensor& x);
Tensor embedding_lookup(const Tensor& table, const TokenGrid& ids);
// Mean of -log softmax(logits)[target] over positions with loss_mask = 1.
Tensor cross_entropy(const Tensor& logits, const TokenGrid& targets, const BitGrid& loss_mask);

Tensor add(const Tensor& a, const Tensor& b);  // broadcasting
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float s);
Tensor sum(const Tensor& x);  // total sum -> scalar
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int64_t>& perm);
Tensor transpose_last2(const Tensor& x);
Tensor slice_last(const Tensor& x, int64_t begin, int64_t end);

// Row-wise softmax of [B,H,T,T] scores where position (b,*,i,j) participates
// iff allowed(i,j) and key j of row b is not padding. Fully blocked rows
// produce zeros, not NaN.
Tensor masked_softmax(const Tensor& scores, const BitGrid& allowed, const BitGrid& key_padding);

void backward(const Tensor& loss);

// Central differences (f(x+h*e)-f(x-h*e)) / (x_plus - x_minus) per element,
// with the denominator taken from the actually-representable float values.
Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace antlm
