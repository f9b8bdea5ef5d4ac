#include "antlm/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <sstream>

namespace antlm {

namespace {

using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapM = Eigen::Map<MatF>;
using MapMC = Eigen::Map<const MatF>;

thread_local Tape* g_active_tape = nullptr;
std::atomic<uint64_t> g_tape_epoch{1};

Shape broadcast_shapes(const Shape& a, const Shape& b, const char* op) {
    const size_t n = std::max(a.size(), b.size());
    Shape out(n, 1);
    for (size_t i = 0; i < n; ++i) {
        const int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
        const int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
        if (da != db && da != 1 && db != 1) {
            throw ShapeError(std::string(op) + ": shapes " + shape_str(a) + " and " +
                             shape_str(b) + " are not broadcast-compatible");
        }
        out[n - 1 - i] = std::max(da, db);
    }
    return out;
}

std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size());
    int64_t acc = 1;
    for (size_t i = s.size(); i-- > 0;) {
        st[i] = acc;
        acc *= s[i];
    }
    return st;
}

// Strides of `from` aligned to (possibly larger) `to`, 0 on broadcast dims.
std::vector<int64_t> broadcast_strides(const Shape& from, const Shape& to) {
    auto fst = row_major_strides(from);
    std::vector<int64_t> st(to.size(), 0);
    for (size_t i = 0; i < from.size(); ++i) {
        const size_t j = to.size() - from.size() + i;
        st[j] = (from[i] == 1 && to[j] != 1) ? 0 : fst[i];
    }
    return st;
}

// Walks an output shape once, tracking flat offsets into two broadcast inputs.
struct BinaryIter {
    BinaryIter(const Shape& out, const Shape& a, const Shape& b)
        : shape(out),
          sa(broadcast_strides(a, out)),
          sb(broadcast_strides(b, out)),
          idx(out.size(), 0) {}

    const Shape& shape;
    std::vector<int64_t> sa, sb;
    std::vector<int64_t> idx;
    int64_t oa = 0, ob = 0;

    bool step() {  // advance one element; false when exhausted
        for (size_t d = shape.size(); d-- > 0;) {
            ++idx[d];
            oa += sa[d];
            ob += sb[d];
            if (idx[d] < shape[d]) return true;
            oa -= sa[d] * shape[d];
            ob -= sb[d] * shape[d];
            idx[d] = 0;
        }
        return false;
    }
};

void check_finite_ok(double v, const char* op) {
    if (std::isnan(v)) throw NumericError(std::string(op) + ": produced NaN");
}

}  // namespace

int64_t shape_numel(const Shape& s) {
    int64_t n = 1;
    for (int64_t d : s) n *= d;
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << ']';
    return os.str();
}

// ---------------- Tensor ----------------

Tensor Tensor::zeros(Shape shape) {
    Tensor t;
    const int64_t n = shape_numel(shape);
    t.d_->shape = std::move(shape);
    t.d_->values.assign(static_cast<size_t>(n), 0.0f);
    return t;
}

Tensor Tensor::full(Shape shape, float value) {
    Tensor t = zeros(std::move(shape));
    std::fill(t.d_->values.begin(), t.d_->values.end(), value);
    return t;
}

Tensor Tensor::from(Shape shape, std::vector<float> values) {
    if (shape_numel(shape) != static_cast<int64_t>(values.size())) {
        throw ShapeError("Tensor::from: shape " + shape_str(shape) + " wants " +
                         std::to_string(shape_numel(shape)) + " values, got " +
                         std::to_string(values.size()));
    }
    Tensor t;
    t.d_->shape = std::move(shape);
    t.d_->values = std::move(values);
    return t;
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
    Tensor t = zeros(std::move(shape));
    for (auto& v : t.d_->values) v = static_cast<float>(rng.normal() * stddev);
    return t;
}

std::span<const float> Tensor::grad() const { return d_->grad; }

std::span<float> Tensor::grad_mut() {
    if (d_->grad.empty()) d_->grad.assign(d_->values.size(), 0.0f);
    return d_->grad;
}

void Tensor::zero_grad() { std::fill(d_->grad.begin(), d_->grad.end(), 0.0f); }

float Tensor::item() const {
    if (numel() != 1) throw ContractError("item(): tensor is not scalar, shape " + shape_str(shape()));
    return d_->values[0];
}

// ---------------- Tape ----------------

Tape::Tape() : epoch_(g_tape_epoch.fetch_add(1)) {}
Tape::~Tape() = default;

Tape::Scope::Scope(Tape& t) : prev_(g_active_tape) { g_active_tape = &t; }
Tape::Scope::~Scope() { g_active_tape = prev_; }

Tape* Tape::active() { return g_active_tape; }

int64_t Tape::ensure_slot(const Tensor& t) {
    TensorData& d = *t.data();
    if (attached(d)) return d.tape_id;
    d.tape = this;
    d.tape_epoch = epoch_;
    d.tape_id = static_cast<int64_t>(slots_.size());
    slots_.push_back({t.data(), false});
    return d.tape_id;
}

void Tape::record(std::vector<int64_t> input_ids, const Tensor& out, BackwardFn fn) {
    TensorData& d = *out.data();
    d.tape = this;
    d.tape_epoch = epoch_;
    d.tape_id = static_cast<int64_t>(slots_.size());
    slots_.push_back({out.data(), true});
    nodes_.push_back(Node{std::move(input_ids), d.tape_id, std::move(fn)});
}

bool Tape::wants_grad(int64_t id) const {
    const Slot& s = slots_[static_cast<size_t>(id)];
    return s.is_node_output || s.tensor->requires_grad;
}

std::span<const float> Tape::grad_read(int64_t id) {
    return grad_acc(id);
}

std::span<float> Tape::grad_acc(int64_t id) {
    Slot& s = slots_[static_cast<size_t>(id)];
    if (s.is_node_output) {
        auto& buf = scratch_[static_cast<size_t>(id)];
        if (buf.empty()) buf.assign(s.tensor->values.size(), 0.0f);
        return buf;
    }
    if (s.tensor->grad.empty()) s.tensor->grad.assign(s.tensor->values.size(), 0.0f);
    return s.tensor->grad;
}

void Tape::backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
    }
    if (!attached(*loss.data())) {
        throw ContractError("backward: loss is not attached to this tape");
    }
    scratch_.assign(slots_.size(), {});
    in_backward_ = true;
    grad_acc(loss.tape_id())[0] += 1.0f;
    for (size_t i = nodes_.size(); i-- > 0;) nodes_[i].fn(*this);
    in_backward_ = false;
    scratch_.clear();
}

void backward(const Tensor& loss) {
    TensorData& d = *loss.data();
    if (d.tape == nullptr) throw ContractError("backward: loss is not tape-attached");
    d.tape->backward(loss);
}

// ---------------- op helpers ----------------

namespace {

struct Rec {
    Tape* tape = nullptr;
    bool on = false;
};

Rec recording_for(std::initializer_list<const Tensor*> inputs) {
    Tape* t = Tape::active();
    if (!t) return {};
    for (const Tensor* in : inputs) {
        if (t->involves(*in)) return {t, true};
    }
    return {t, false};
}

}  // namespace

// ---------------- matmul ----------------

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.ndim() < 2 || b.ndim() < 2) {
        throw ShapeError("matmul: operands must have >= 2 dims, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
    }
    const int64_t m = a.dim(a.ndim() - 2), k = a.dim(a.ndim() - 1);
    const int64_t kb = b.dim(b.ndim() - 2), n = b.dim(b.ndim() - 1);
    if (k != kb) {
        throw ShapeError("matmul: inner dimensions disagree: " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
    }
    Shape lead_a(a.shape().begin(), a.shape().end() - 2);
    Shape lead_b(b.shape().begin(), b.shape().end() - 2);
    Shape lead = broadcast_shapes(lead_a, lead_b, "matmul");
    Shape out_shape = lead;
    out_shape.push_back(m);
    out_shape.push_back(n);
    Tensor out = Tensor::zeros(out_shape);

    const int64_t batches = shape_numel(lead);
    const auto sa = broadcast_strides(lead_a, lead);
    const auto sb = broadcast_strides(lead_b, lead);
    const auto sl = row_major_strides(lead);

    // flat offsets (in units of one matrix) per batch index
    std::vector<int64_t> offs_a(static_cast<size_t>(batches), 0);
    std::vector<int64_t> offs_b(static_cast<size_t>(batches), 0);
    for (int64_t i = 0; i < batches; ++i) {
        for (size_t d = 0; d < lead.size(); ++d) {
            const int64_t id = (i / sl[d]) % lead[d];
            offs_a[static_cast<size_t>(i)] += id * sa[d];
            offs_b[static_cast<size_t>(i)] += id * sb[d];
        }
    }

    const float* ap = a.values().data();
    const float* bp = b.values().data();
    float* op = out.values_mut().data();
    if (b.ndim() == 2 && batches > 0) {
        // [L..,m,k] x [k,n]: one flattened GEMM
        MapMC A(ap, batches * m, k);
        MapMC B(bp, k, n);
        MapM C(op, batches * m, n);
        C.noalias() = A * B;
    } else {
        for (int64_t i = 0; i < batches; ++i) {
            MapMC A(ap + offs_a[static_cast<size_t>(i)] * m * k, m, k);
            MapMC B(bp + offs_b[static_cast<size_t>(i)] * k * n, k, n);
            MapM C(op + i * m * n, m, n);
            C.noalias() = A * B;
        }
    }

    auto rec = recording_for({&a, &b});
    if (rec.on) {
        const int64_t ia = rec.tape->ensure_slot(a);
        const int64_t ib = rec.tape->ensure_slot(b);
        auto ad = a.data();
        auto bd = b.data();
        auto od = out.data();
        const bool b2d = (b.ndim() == 2);
        rec.tape->record({ia, ib}, out, [=](Tape& tp) {
            auto go = tp.grad_read(od->tape_id);
            const float* gop = go.data();
            if (tp.wants_grad(ia)) {
                float* dap = tp.grad_acc(ia).data();
                if (b2d && batches > 0) {
                    MapM DA(dap, batches * m, k);
                    MapMC GO(gop, batches * m, n);
                    MapMC B(bd->values.data(), k, n);
                    DA.noalias() += GO * B.transpose();
                } else {
                    for (int64_t i = 0; i < batches; ++i) {
                        MapM DA(dap + offs_a[static_cast<size_t>(i)] * m * k, m, k);
                        MapMC GO(gop + i * m * n, m, n);
                        MapMC B(bd->values.data() + offs_b[static_cast<size_t>(i)] * k * n, k, n);
                        DA.noalias() += GO * B.transpose();
                    }
                }
            }
            if (tp.wants_grad(ib)) {
                float* dbp = tp.grad_acc(ib).data();
                if (b2d && batches > 0) {
                    MapM DB(dbp, k, n);
                    MapMC A(ad->values.data(), batches * m, k);
                    MapMC GO(gop, batches * m, n);
                    DB.noalias() += A.transpose() * GO;
                } else {
                    for (int64_t i = 0; i < batches; ++i) {
                        MapM DB(dbp + offs_b[static_cast<size_t>(i)] * k * n, k, n);
                        MapMC A(ad->values.data() + offs_a[static_cast<size_t>(i)] * m * k, m, k);
                        MapMC GO(gop + i * m * n, m, n);
                        DB.noalias() += A.transpose() * GO;
                    }
                }
            }
        });
    }
    return out;
}

// ---------------- softmax ----------------

Tensor softmax(const Tensor& x, int64_t axis) {
    const int64_t nd = x.ndim();
    if (axis < -nd || axis >= nd) {
        throw ContractError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                            shape_str(x.shape()));
    }
    if (axis < 0) axis += nd;
    const int64_t n = x.dim(axis);
    int64_t inner = 1, outer = 1;
    for (int64_t i = 0; i < nd; ++i) {
        if (i < axis) outer *= x.dim(i);
        if (i > axis) inner *= x.dim(i);
    }
    Tensor out = Tensor::zeros(x.shape());
    const float* xp = x.values().data();
    float* yp = out.values_mut().data();
    for (int64_t o = 0; o < outer; ++o) {
        for (int64_t in = 0; in < inner; ++in) {
            const int64_t base = o * n * inner + in;
            float mx = xp[base];
            for (int64_t j = 1; j < n; ++j) mx = std::max(mx, xp[base + j * inner]);
            double denom = 0.0;
            for (int64_t j = 0; j < n; ++j) {
                const float e = std::exp(xp[base + j * inner] - mx);
                yp[base + j * inner] = e;
                denom += e;
            }
            const float inv = static_cast<float>(1.0 / denom);
            for (int64_t j = 0; j < n; ++j) yp[base + j * inner] *= inv;
        }
    }

    auto rec = recording_for({&x});
    if (rec.on) {
        const int64_t ix = rec.tape->ensure_slot(x);
        auto od = out.data();
        rec.tape->record({ix}, out, [=](Tape& tp) {
            if (!tp.wants_grad(ix)) return;
            auto go = tp.grad_read(od->tape_id);
            auto dx = tp.grad_acc(ix);
            const float* y = od->values.data();
            for (int64_t o = 0; o < outer; ++o) {
                for (int64_t in = 0; in < inner; ++in) {
                    const int64_t base = o * n * inner + in;
                    double dot = 0.0;
                    for (int64_t j = 0; j < n; ++j) {
                        dot += static_cast<double>(go[base + j * inner]) * y[base + j * inner];
                    }
                    for (int64_t j = 0; j < n; ++j) {
                        const int64_t p = base + j * inner;
                        dx[p] += y[p] * (go[p] - static_cast<float>(dot));
                    }
                }
            }
        });
    }
    return out;
}

// ---------------- layer_norm ----------------

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, float eps) {
    if (x.ndim() < 1) throw ShapeError("layer_norm: input needs at least 1 dim");
    const int64_t d = x.dim(x.ndim() - 1);
    if (gain.numel() != d || bias.numel() != d) {
        throw ShapeError("layer_norm: gain/bias must match last dim " + std::to_string(d) +
                         ", got " + shape_str(gain.shape()) + " and " + shape_str(bias.shape()));
    }
    if (!(eps > 0.0f)) throw ContractError("layer_norm: eps must be > 0");
    const int64_t rows = x.numel() / d;
    Tensor out = Tensor::zeros(x.shape());
    auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(x.numel()));
    auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(rows));
    const float* xp = x.values().data();
    const float* gp = gain.values().data();
    const float* bp = bias.values().data();
    float* yp = out.values_mut().data();
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = xp + r * d;
        double mu = 0.0;
        for (int64_t j = 0; j < d; ++j) mu += row[j];
        mu /= static_cast<double>(d);
        double var = 0.0;
        for (int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mu;
            var += c * c;
        }
        var /= static_cast<double>(d);
        const float inv = static_cast<float>(1.0 / std::sqrt(var + eps));
        (*inv_std)[static_cast<size_t>(r)] = inv;
        for (int64_t j = 0; j < d; ++j) {
            const float xh = (row[j] - static_cast<float>(mu)) * inv;
            (*xhat)[static_cast<size_t>(r * d + j)] = xh;
            yp[r * d + j] = xh * gp[j] + bp[j];
        }
    }

    auto rec = recording_for({&x, &gain, &bias});
    if (rec.on) {
        const int64_t ix = rec.tape->ensure_slot(x);
        const int64_t ig = rec.tape->ensure_slot(gain);
        const int64_t ib = rec.tape->ensure_slot(bias);
        auto gd = gain.data();
        auto od = out.data();
        rec.tape->record({ix, ig, ib}, out, [=](Tape& tp) {
            auto go = tp.grad_read(od->tape_id);
            const float* gp2 = gd->values.data();
            if (tp.wants_grad(ix)) {
                auto dx = tp.grad_acc(ix);
                for (int64_t r = 0; r < rows; ++r) {
                    const float inv = (*inv_std)[static_cast<size_t>(r)];
                    double s1 = 0.0, s2 = 0.0;
                    for (int64_t j = 0; j < d; ++j) {
                        const double dxh = static_cast<double>(go[r * d + j]) * gp2[j];
                        s1 += dxh;
                        s2 += dxh * (*xhat)[static_cast<size_t>(r * d + j)];
                    }
                    for (int64_t j = 0; j < d; ++j) {
                        const size_t p = static_cast<size_t>(r * d + j);
                        const double dxh = static_cast<double>(go[p]) * gp2[j];
                        dx[p] += static_cast<float>(
                            inv * (dxh - s1 / d - (*xhat)[p] * s2 / d));
                    }
                }
            }
            if (tp.wants_grad(ig)) {
                auto dg = tp.grad_acc(ig);
                for (int64_t r = 0; r < rows; ++r) {
                    for (int64_t j = 0; j < d; ++j) {
                        dg[j] += go[r * d + j] * (*xhat)[static_cast<size_t>(r * d + j)];
                    }
                }
            }
            if (tp.wants_grad(ib)) {
                auto db = tp.grad_acc(ib);
                for (int64_t r = 0; r < rows; ++r) {
                    for (int64_t j = 0; j < d; ++j) db[j] += go[r * d + j];
                }
            }
        });
    }
    return out;
}

// ---------------- gelu ----------------

namespace {
constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
}  // namespace

Tensor gelu(const Tensor& x) {
    Tensor out = Tensor::zeros(x.shape());
    const float* xp = x.values().data();
    float* yp = out.values_mut().data();
    const int64_t n = x.numel();
    for (int64_t i = 0; i < n; ++i) {
        const double v = xp[i];
        const double u = kGeluC * (v + kGeluA * v * v * v);
        yp[i] = static_cast<float>(0.5 * v * (1.0 + std::tanh(u)));
    }

    auto rec = recording_for({&x});
    if (rec.on) {
        const int64_t ix = rec.tape->ensure_slot(x);
        auto xd = x.data();
        auto od = out.data();
        rec.tape->record({ix}, out, [=](Tape& tp) {
            if (!tp.wants_grad(ix)) return;
            auto go = tp.grad_read(od->tape_id);
            auto dx = tp.grad_acc(ix);
            const float* xv = xd->values.data();
            for (int64_t i = 0; i < n; ++i) {
                const double v = xv[i];
                const double u = kGeluC * (v + kGeluA * v * v * v);
                const double th = std::tanh(u);
                const double du = kGeluC * (1.0 + 3.0 * kGeluA * v * v);
                const double dy = 0.5 * (1.0 + th) + 0.5 * v * (1.0 - th * th) * du;
                dx[i] += go[i] * static_cast<float>(dy);
            }
        });
    }
    return out;
}

// ---------------- embedding_lookup ----------------

Tensor embedding_lookup(const Tensor& table, const TokenGrid& ids) {
    if (table.ndim() != 2) {
        throw ShapeError("embedding_lookup: table must be 2-D, got " + shape_str(table.shape()));
    }
    const int64_t V = table.dim(0), d = table.dim(1);
    for (int64_t b = 0; b < ids.rows; ++b) {
        for (int64_t t = 0; t < ids.cols; ++t) {
            const int32_t id = ids.at(b, t);
            if (id < 0 || id >= V) {
                throw IndexError("embedding_lookup: id " + std::to_string(id) + " at (" +
                                 std::to_string(b) + "," + std::to_string(t) +
                                 ") outside [0," + std::to_string(V) + ")");
            }
        }
    }
    Tensor out = Tensor::zeros({ids.rows, ids.cols, d});
    const float* tp = table.values().data();
    float* op = out.values_mut().data();
    for (int64_t i = 0; i < ids.rows * ids.cols; ++i) {
        std::copy_n(tp + static_cast<int64_t>(ids.v[static_cast<size_t>(i)]) * d, d, op + i * d);
    }

    auto rec = recording_for({&table});
    if (rec.on) {
        const int64_t it = rec.tape->ensure_slot(table);
        auto od = out.data();
        auto ids_copy = std::make_shared<TokenGrid>(ids);
        rec.tape->record({it}, out, [=](Tape& tp2) {
            if (!tp2.wants_grad(it)) return;
            auto go = tp2.grad_read(od->tape_id);
            auto dt = tp2.grad_acc(it);
            const int64_t count = ids_copy->rows * ids_copy->cols;
            for (int64_t i = 0; i < count; ++i) {
                const int64_t row = ids_copy->v[static_cast<size_t>(i)];
                for (int64_t j = 0; j < d; ++j) dt[row * d + j] += go[i * d + j];
            }
        });
    }
    return out;
}

// ---------------- cross_entropy ----------------

Tensor cross_entropy(const Tensor& logits, const TokenGrid& targets, const BitGrid& loss_mask) {
    if (logits.ndim() != 3) {
        throw ShapeError("cross_entropy: logits must be [B,T,V], got " + shape_str(logits.shape()));
    }
    const int64_t B = logits.dim(0), T = logits.dim(1), V = logits.dim(2);
    if (targets.rows != B || targets.cols != T || loss_mask.rows != B || loss_mask.cols != T) {
        throw ShapeError("cross_entropy: targets/loss_mask must be [" + std::to_string(B) + "," +
                         std::to_string(T) + "]");
    }
    int64_t count = 0;
    for (uint8_t m : loss_mask.v) count += m ? 1 : 0;
    if (count == 0) throw NumericError("cross_entropy: loss_mask selects no positions");

    auto lse = std::make_shared<std::vector<double>>(static_cast<size_t>(B * T), 0.0);
    const float* lp = logits.values().data();
    double total = 0.0;
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t t = 0; t < T; ++t) {
            if (!loss_mask.at(b, t)) continue;
            const int32_t tgt = targets.at(b, t);
            if (tgt < 0 || tgt >= V) {
                throw IndexError("cross_entropy: target " + std::to_string(tgt) + " at (" +
                                 std::to_string(b) + "," + std::to_string(t) + ") outside [0," +
                                 std::to_string(V) + ")");
            }
            const float* row = lp + (b * T + t) * V;
            float mx = row[0];
            for (int64_t j = 1; j < V; ++j) mx = std::max(mx, row[j]);
            double s = 0.0;
            for (int64_t j = 0; j < V; ++j) s += std::exp(static_cast<double>(row[j]) - mx);
            const double l = mx + std::log(s);
            (*lse)[static_cast<size_t>(b * T + t)] = l;
            total += l - static_cast<double>(row[tgt]);
        }
    }
    const double mean = total / static_cast<double>(count);
    check_finite_ok(mean, "cross_entropy");
    Tensor out = Tensor::scalar(static_cast<float>(mean));

    auto rec = recording_for({&logits});
    if (rec.on) {
        const int64_t il = rec.tape->ensure_slot(logits);
        auto ld = logits.data();
        auto od = out.data();
        auto tgt_copy = std::make_shared<TokenGrid>(targets);
        auto mask_copy = std::make_shared<BitGrid>(loss_mask);
        rec.tape->record({il}, out, [=](Tape& tp) {
            if (!tp.wants_grad(il)) return;
            const float g = tp.grad_read(od->tape_id)[0];
            auto dl = tp.grad_acc(il);
            const float* lv = ld->values.data();
            const float scale = g / static_cast<float>(count);
            for (int64_t b = 0; b < B; ++b) {
                for (int64_t t = 0; t < T; ++t) {
                    if (!mask_copy->at(b, t)) continue;
                    const int64_t base = (b * T + t) * V;
                    const double l = (*lse)[static_cast<size_t>(b * T + t)];
                    const int32_t tgt = tgt_copy->at(b, t);
                    for (int64_t j = 0; j < V; ++j) {
                        const float p = static_cast<float>(std::exp(static_cast<double>(lv[base + j]) - l));
                        dl[base + j] += scale * (p - (j == tgt ? 1.0f : 0.0f));
                    }
                }
            }
        });
    }
    return out;
}

// ---------------- elementwise with broadcasting ----------------

namespace {

enum class BinOp { Add, Sub, Mul };

Tensor binary_op(const Tensor& a, const Tensor& b, BinOp op, const char* name) {
    Shape out_shape = broadcast_shapes(a.shape(), b.shape(), name);
    Tensor out = Tensor::zeros(out_shape);
    const float* ap = a.values().data();
    const float* bp = b.values().data();
    float* op_ = out.values_mut().data();
    const int64_t n = out.numel();
    if (a.shape() == b.shape()) {
        switch (op) {
            case BinOp::Add:
                for (int64_t i = 0; i < n; ++i) op_[i] = ap[i] + bp[i];
                break;
            case BinOp::Sub:
                for (int64_t i = 0; i < n; ++i) op_[i] = ap[i] - bp[i];
                break;
            case BinOp::Mul:
                for (int64_t i = 0; i < n; ++i) op_[i] = ap[i] * bp[i];
                break;
        }
    } else {
        BinaryIter it(out_shape, a.shape(), b.shape());
        int64_t i = 0;
        do {
            const float x = ap[it.oa], y = bp[it.ob];
            op_[i++] = op == BinOp::Add ? x + y : op == BinOp::Sub ? x - y : x * y;
        } while (it.step());
    }

    auto rec = recording_for({&a, &b});
    if (rec.on) {
        const int64_t ia = rec.tape->ensure_slot(a);
        const int64_t ib = rec.tape->ensure_slot(b);
        auto ad = a.data();
        auto bd = b.data();
        auto od = out.data();
        const Shape ash = a.shape(), bsh = b.shape(), osh = out_shape;
        rec.tape->record({ia, ib}, out, [=](Tape& tp) {
            auto go = tp.grad_read(od->tape_id);
            const bool wa = tp.wants_grad(ia), wb = tp.wants_grad(ib);
            if (!wa && !wb) return;
            std::span<float> da = wa ? tp.grad_acc(ia) : std::span<float>{};
            std::span<float> db = wb ? tp.grad_acc(ib) : std::span<float>{};
            const float* av = ad->values.data();
            const float* bv = bd->values.data();
            BinaryIter it(osh, ash, bsh);
            int64_t i = 0;
            do {
                const float g = go[i++];
                switch (op) {
                    case BinOp::Add:
                        if (wa) da[it.oa] += g;
                        if (wb) db[it.ob] += g;
                        break;
                    case BinOp::Sub:
                        if (wa) da[it.oa] += g;
                        if (wb) db[it.ob] -= g;
                        break;
                    case BinOp::Mul:
                        if (wa) da[it.oa] += g * bv[it.ob];
                        if (wb) db[it.ob] += g * av[it.oa];
                        break;
                }
            } while (it.step());
        });
    }
    return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Add, "add"); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Sub, "sub"); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_op(a, b, BinOp::Mul, "mul"); }

Tensor scale(const Tensor& x, float s) {
    Tensor out = Tensor::zeros(x.shape());
    const float* xp = x.values().data();
    float* yp = out.values_mut().data();
    for (int64_t i = 0; i < x.numel(); ++i) yp[i] = xp[i] * s;

    auto rec = recording_for({&x});
    if (rec.on) {
        const int64_t ix = rec.tape->ensure_slot(x);
        auto od = out.data();
        const int64_t n = x.numel();
        rec.tape->record({ix}, out, [=](Tape& tp) {
            if (!tp.wants_grad(ix)) return;
            auto go = tp.grad_read(od->tape_id);
            auto dx = tp.grad_acc(ix);
            for (int64_t i = 0; i < n; ++i) dx[i] += go[i] * s;
        });
    }
    return out;
}

Tensor sum(const Tensor& x) {
    double acc = 0.0;
    for (float v : x.values()) acc += v;
    Tensor out = Tensor::scalar(static_cast<float>(acc));

    auto rec = recording_for({&x});
    if (rec.on) {
        const int64_t ix = rec.tape->ensure_slot(x);
        auto od = out.data();
        const int64_t n = x.numel();
        rec.tape->record({ix}, out, [=](Tape& tp) {
            if (!tp.wants_grad(ix)) return;
            const float g = tp.grad_read(od->tape_id)[0];
            auto dx = tp.grad_acc(ix);
            for (int64_t i = 0; i < n; ++i) dx[i] += g;
        });
    }
    return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
    if (shape_numel(shape) != x.numel()) {
        throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
    }
    Tensor out = Tensor::from(shape, std::vector<float>(x.values().begin(), x.values().end()));

    auto rec = recording_for({&x});
    if (rec.on) {
        const int64_t ix = rec.tape->ensure_slot(x);
        auto od = out.data();
        const int64_t n = x.numel();
        rec.tape->record({ix}, out, [=](Tape& tp) {
            if (!tp.wants_grad(ix)) return;
            auto go = tp.grad_read(od->tape_id);
            auto dx = tp.grad_acc(ix);
            for (int64_t i = 0; i < n; ++i) dx[i] += go[i];
        });
    }
    return out;
}

Tensor permute(const Tensor& x, const std::vector<int64_t>& perm) {
    const int64_t nd = x.ndim();
    if (static_cast<int64_t>(perm.size()) != nd) {
        throw ContractError("permute: perm size must equal ndim");
    }
    std::vector<bool> seen(static_cast<size_t>(nd), false);
    for (int64_t p : perm) {
        if (p < 0 || p >= nd || seen[static_cast<size_t>(p)]) {
            throw ContractError("permute: invalid permutation");
        }
        seen[static_cast<size_t>(p)] = true;
    }
    Shape out_shape(static_cast<size_t>(nd));
    for (int64_t i = 0; i < nd; ++i) out_shape[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
    Tensor out = Tensor::zeros(out_shape);

    const auto xst = row_major_strides(x.shape());
    // stride of output dim i in the input
    std::vector<int64_t> src_stride(static_cast<size_t>(nd));
    for (int64_t i = 0; i < nd; ++i) src_stride[static_cast<size_t>(i)] = xst[static_cast<size_t>(perm[static_cast<size_t>(i)])];

    const float* xp = x.values().data();
    float* yp = out.values_mut().data();
    std::vector<int64_t> idx(static_cast<size_t>(nd), 0);
    int64_t src = 0;
    const int64_t n = out.numel();
    for (int64_t i = 0; i < n; ++i) {
        yp[i] = xp[src];
        for (size_t d2 = static_cast<size_t>(nd); d2-- > 0;) {
            ++idx[d2];
            src += src_stride[d2];
            if (idx[d2] < out_shape[d2]) break;
            src -= src_stride[d2] * out_shape[d2];
            idx[d2] = 0;
        }
    }

    auto rec = recording_for({&x});
    if (rec.on) {
        const int64_t ix = rec.tape->ensure_slot(x);
        auto od = out.data();
        const Shape osh = out_shape;
        rec.tape->record({ix}, out, [=](Tape& tp) {
            if (!tp.wants_grad(ix)) return;
            auto go = tp.grad_read(od->tape_id);
            auto dx = tp.grad_acc(ix);
            std::vector<int64_t> idx2(osh.size(), 0);
            int64_t src2 = 0;
            const int64_t total = static_cast<int64_t>(go.size());
            for (int64_t i = 0; i < total; ++i) {
                dx[src2] += go[i];
                for (size_t d2 = osh.size(); d2-- > 0;) {
                    ++idx2[d2];
                    src2 += src_stride[d2];
                    if (idx2[d2] < osh[d2]) break;
                    src2 -= src_stride[d2] * osh[d2];
                    idx2[d2] = 0;
                }
            }
        });
    }
    return out;
}

Tensor transpose_last2(const Tensor& x) {
    const int64_t nd = x.ndim();
    if (nd < 2) throw ShapeError("transpose_last2: needs >= 2 dims");
    std::vector<int64_t> perm(static_cast<size_t>(nd));
    for (int64_t i = 0; i < nd; ++i) perm[static_cast<size_t>(i)] = i;
    std::swap(perm[static_cast<size_t>(nd - 2)], perm[static_cast<size_t>(nd - 1)]);
    return permute(x, perm);
}

Tensor slice_last(const Tensor& x, int64_t begin, int64_t end) {
    const int64_t last = x.dim(x.ndim() - 1);
    if (begin < 0 || end > last || begin >= end) {
        throw ContractError("slice_last: invalid range [" + std::to_string(begin) + "," +
                            std::to_string(end) + ") for dim " + std::to_string(last));
    }
    Shape out_shape = x.shape();
    out_shape.back() = end - begin;
    Tensor out = Tensor::zeros(out_shape);
    const int64_t rows = x.numel() / last;
    const int64_t w = end - begin;
    const float* xp = x.values().data();
    float* yp = out.values_mut().data();
    for (int64_t r = 0; r < rows; ++r) std::copy_n(xp + r * last + begin, w, yp + r * w);

    auto rec = recording_for({&x});
    if (rec.on) {
        const int64_t ix = rec.tape->ensure_slot(x);
        auto od = out.data();
        rec.tape->record({ix}, out, [=](Tape& tp) {
            if (!tp.wants_grad(ix)) return;
            auto go = tp.grad_read(od->tape_id);
            auto dx = tp.grad_acc(ix);
            for (int64_t r = 0; r < rows; ++r) {
                for (int64_t j = 0; j < w; ++j) dx[r * last + begin + j] += go[r * w + j];
            }
        });
    }
    return out;
}

// ---------------- masked_softmax ----------------

Tensor masked_softmax(const Tensor& scores, const BitGrid& allowed, const BitGrid& key_padding) {
    if (scores.ndim() != 4) {
        throw ShapeError("masked_softmax: scores must be [B,H,T,T], got " + shape_str(scores.shape()));
    }
    const int64_t B = scores.dim(0), H = scores.dim(1), T = scores.dim(2);
    if (scores.dim(3) != T || allowed.rows != T || allowed.cols != T) {
        throw ShapeError("masked_softmax: mask must be square TxT matching scores");
    }
    if (key_padding.rows != B || key_padding.cols != T) {
        throw ShapeError("masked_softmax: key_padding must be [B,T]");
    }
    Tensor out = Tensor::zeros(scores.shape());
    const float* sp = scores.values().data();
    float* yp = out.values_mut().data();
    for (int64_t b = 0; b < B; ++b) {
        for (int64_t h = 0; h < H; ++h) {
            for (int64_t i = 0; i < T; ++i) {
                const int64_t base = ((b * H + h) * T + i) * T;
                float mx = -std::numeric_limits<float>::infinity();
                for (int64_t j = 0; j < T; ++j) {
                    if (allowed.at(i, j) && !key_padding.at(b, j)) mx = std::max(mx, sp[base + j]);
                }
                if (mx == -std::numeric_limits<float>::infinity()) continue;  // fully blocked -> zeros
                double denom = 0.0;
                for (int64_t j = 0; j < T; ++j) {
                    if (allowed.at(i, j) && !key_padding.at(b, j)) {
                        const float e = std::exp(sp[base + j] - mx);
                        yp[base + j] = e;
                        denom += e;
                    }
                }
                const float inv = static_cast<float>(1.0 / denom);
                for (int64_t j = 0; j < T; ++j) yp[base + j] *= inv;
            }
        }
    }

    auto rec = recording_for({&scores});
    if (rec.on) {
        const int64_t is = rec.tape->ensure_slot(scores);
        auto od = out.data();
        rec.tape->record({is}, out, [=](Tape& tp) {
            if (!tp.wants_grad(is)) return;
            auto go = tp.grad_read(od->tape_id);
            auto dx = tp.grad_acc(is);
            const float* y = od->values.data();
            const int64_t rows = B * H * T;
            for (int64_t r = 0; r < rows; ++r) {
                const int64_t base = r * T;
                double dot = 0.0;
                for (int64_t j = 0; j < T; ++j) dot += static_cast<double>(go[base + j]) * y[base + j];
                for (int64_t j = 0; j < T; ++j) {
                    dx[base + j] += y[base + j] * (go[base + j] - static_cast<float>(dot));
                }
            }
        });
    }
    return out;
}

// ---------------- numeric_gradient ----------------

Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw ContractError("numeric_gradient: h must be > 0");
    Tensor g = Tensor::zeros(x.shape());
    std::vector<float> base(x.values().begin(), x.values().end());
    float* gp = g.values_mut().data();
    for (int64_t i = 0; i < x.numel(); ++i) {
        std::vector<float> vp = base, vm = base;
        vp[static_cast<size_t>(i)] = static_cast<float>(static_cast<double>(base[static_cast<size_t>(i)]) + h);
        vm[static_cast<size_t>(i)] = static_cast<float>(static_cast<double>(base[static_cast<size_t>(i)]) - h);
        const double denom = static_cast<double>(vp[static_cast<size_t>(i)]) -
                             static_cast<double>(vm[static_cast<size_t>(i)]);
        const double fp = f(Tensor::from(x.shape(), std::move(vp)));
        const double fm = f(Tensor::from(x.shape(), std::move(vm)));
        gp[i] = static_cast<float>((fp - fm) / denom);
    }
    return g;
}

}  // namespace antlm
