#pragma once

// Dense tensor core with reverse-mode automatic differentiation.
//
// A Tensor is a value-semantic handle to a TapeNode. Operations on tensors
// whose inputs require gradients record the node's inputs and a backward
// closure; Tensor::backward() walks the resulting DAG once in reverse
// topological order, accumulating gradients additively across fan-out, and
// then discards the tape (leaf gradients survive).
//
// Conventions:
//  - NCHW layout for all image-shaped tensors, row-major storage.
//  - Every operation verifies its result is finite and throws NumericError
//    otherwise; NaN/Inf never propagates silently.
//  - Values are immutable once a tensor participates in a graph; leaf values
//    may be rewritten between forward passes (weight init, optimizer steps).

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <memory>
#include <unordered_set>
#include <vector>

#include "softpose/common.hpp"

namespace softpose {

struct TapeNode {
    const char* op = "leaf";
    Shape shape;
    std::vector<real> value;
    std::vector<real> grad; // allocated lazily, same length as value
    bool requires_grad = false;
    std::vector<std::shared_ptr<TapeNode>> inputs;
    std::function<void(TapeNode&)> backward_fn;

    void ensure_grad() {
        if (grad.size() != value.size()) grad.assign(value.size(), real(0));
    }
};

namespace detail {

inline void ensure_finite(const TapeNode& n) {
    for (real v : n.value) {
        if (!std::isfinite(v))
            throw NumericError(std::string(n.op) + " produced a non-finite value");
    }
}

} // namespace detail

class Tensor {
  public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        return filled(std::move(shape), real(0), requires_grad);
    }

    static Tensor filled(Shape shape, real v, bool requires_grad = false) {
        auto n = std::make_shared<TapeNode>();
        n->shape = std::move(shape);
        n->value.assign(static_cast<size_t>(numel(n->shape)), v);
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor from(Shape shape, std::vector<real> data, bool requires_grad = false) {
        detail::check(numel(shape) == static_cast<int64_t>(data.size()),
                      "tensor data length does not match shape " + shape_str(shape));
        auto n = std::make_shared<TapeNode>();
        n->shape = std::move(shape);
        n->value = std::move(data);
        n->requires_grad = requires_grad;
        detail::ensure_finite(*n);
        return Tensor(std::move(n));
    }

    static Tensor scalar(real v, bool requires_grad = false) {
        return from({1}, {v}, requires_grad);
    }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(node_->shape.size()); }
    int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
    bool requires_grad() const { return node_->requires_grad; }
    /// Only meaningful on leaves; flip before building a graph on top.
    void set_requires_grad(bool rg) { node_->requires_grad = rg; }

    const real* data() const { return node_->value.data(); }
    /// Mutable access to leaf values; callers must not mutate a tensor while
    /// a tape referencing it is alive.
    real* data() { return node_->value.data(); }
    const std::vector<real>& values() const { return node_->value; }

    const std::vector<real>& grad() const {
        const_cast<TapeNode*>(node_.get())->ensure_grad();
        return node_->grad;
    }

    real item() const {
        detail::check(size() == 1, "item() requires a scalar tensor");
        return node_->value[0];
    }

    void zero_grad() {
        if (!node_->grad.empty()) std::fill(node_->grad.begin(), node_->grad.end(), real(0));
    }

    /// Reverse-mode sweep from a scalar. Populates grad on every tensor in
    /// the tape that requires gradients, then frees the tape.
    void backward() const;

    std::shared_ptr<TapeNode> node() const { return node_; }
    explicit Tensor(std::shared_ptr<TapeNode> n) : node_(std::move(n)) {}

  private:
    std::shared_ptr<TapeNode> node_;
};

namespace detail {

inline Tensor make_result(const char* op, Shape shape, std::vector<real> value,
                          std::vector<Tensor> inputs,
                          std::function<void(TapeNode&)> backward_fn) {
    auto n = std::make_shared<TapeNode>();
    n->op = op;
    n->shape = std::move(shape);
    n->value = std::move(value);
    ensure_finite(*n);
    bool rg = false;
    for (const Tensor& t : inputs) rg = rg || t.requires_grad();
    n->requires_grad = rg;
    if (rg) {
        n->inputs.reserve(inputs.size());
        for (Tensor& t : inputs) n->inputs.push_back(t.node());
        n->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(n));
}

inline void accumulate(TapeNode& dst, const std::vector<real>& g) {
    if (!dst.requires_grad) return;
    dst.ensure_grad();
    for (size_t i = 0; i < g.size(); ++i) dst.grad[i] += g[i];
}

} // namespace detail

inline void Tensor::backward() const {
    detail::check(node_ != nullptr && size() == 1, "backward() requires a scalar loss");
    detail::check(node_->requires_grad, "backward() on a tensor with requires_grad=false");

    // Iterative DFS post-order; each node is visited exactly once.
    std::vector<TapeNode*> order;
    std::unordered_set<TapeNode*> seen;
    std::vector<std::pair<TapeNode*, size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
        auto& [n, next] = stack.back();
        if (next < n->inputs.size()) {
            TapeNode* child = n->inputs[next++].get();
            if (child->requires_grad && seen.insert(child).second)
                stack.emplace_back(child, 0);
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    node_->ensure_grad();
    node_->grad[0] = real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TapeNode* n = *it;
        if (n->backward_fn) n->backward_fn(*n);
    }
    // The tape is single-use: release interior nodes, keep leaf grads.
    for (TapeNode* n : order) {
        if (!n->inputs.empty()) {
            n->backward_fn = nullptr;
            n->inputs.clear();
        }
    }
}

// ---------------------------------------------------------------------------
// Elementwise operations. Binary ops accept equal shapes or a scalar on
// either side.
// ---------------------------------------------------------------------------

namespace detail {

enum class BinKind { add, sub, mul, div };

inline Tensor binary_op(const char* name, BinKind kind, const Tensor& a, const Tensor& b) {
    const bool a_scalar = a.size() == 1;
    const bool b_scalar = b.size() == 1;
    detail::check(a.shape() == b.shape() || a_scalar || b_scalar,
                  std::string(name) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                      shape_str(b.shape()));
    const Tensor& big = (b_scalar || a.shape() == b.shape()) ? a : b;
    const size_t n = static_cast<size_t>(big.size());
    const real* av = a.data();
    const real* bv = b.data();
    std::vector<real> out(n);
    auto A = [&](size_t i) { return a_scalar ? av[0] : av[i]; };
    auto B = [&](size_t i) { return b_scalar ? bv[0] : bv[i]; };
    switch (kind) {
        case BinKind::add: for (size_t i = 0; i < n; ++i) out[i] = A(i) + B(i); break;
        case BinKind::sub: for (size_t i = 0; i < n; ++i) out[i] = A(i) - B(i); break;
        case BinKind::mul: for (size_t i = 0; i < n; ++i) out[i] = A(i) * B(i); break;
        case BinKind::div: for (size_t i = 0; i < n; ++i) out[i] = A(i) / B(i); break;
    }
    auto an = a.node();
    auto bn = b.node();
    return make_result(name, big.shape(), std::move(out), {a, b}, [=](TapeNode& node) {
        const std::vector<real>& g = node.grad;
        auto add_to = [&](const std::shared_ptr<TapeNode>& dst, bool scalar, auto&& term) {
            if (!dst->requires_grad) return;
            dst->ensure_grad();
            if (scalar) {
                real s = 0;
                for (size_t i = 0; i < g.size(); ++i) s += term(i);
                dst->grad[0] += s;
            } else {
                for (size_t i = 0; i < g.size(); ++i) dst->grad[i] += term(i);
            }
        };
        const real* avv = an->value.data();
        const real* bvv = bn->value.data();
        auto A2 = [&](size_t i) { return a_scalar ? avv[0] : avv[i]; };
        auto B2 = [&](size_t i) { return b_scalar ? bvv[0] : bvv[i]; };
        switch (kind) {
            case BinKind::add:
                add_to(an, a_scalar, [&](size_t i) { return g[i]; });
                add_to(bn, b_scalar, [&](size_t i) { return g[i]; });
                break;
            case BinKind::sub:
                add_to(an, a_scalar, [&](size_t i) { return g[i]; });
                add_to(bn, b_scalar, [&](size_t i) { return -g[i]; });
                break;
            case BinKind::mul:
                add_to(an, a_scalar, [&](size_t i) { return g[i] * B2(i); });
                add_to(bn, b_scalar, [&](size_t i) { return g[i] * A2(i); });
                break;
            case BinKind::div:
                add_to(an, a_scalar, [&](size_t i) { return g[i] / B2(i); });
                add_to(bn, b_scalar,
                       [&](size_t i) { return -g[i] * A2(i) / (B2(i) * B2(i)); });
                break;
        }
    });
}

template <typename Fwd, typename Bwd>
Tensor unary_op(const char* name, const Tensor& a, Fwd fwd, Bwd bwd) {
    const size_t n = static_cast<size_t>(a.size());
    std::vector<real> out(n);
    const real* av = a.data();
    for (size_t i = 0; i < n; ++i) out[i] = fwd(av[i]);
    auto an = a.node();
    return make_result(name, a.shape(), std::move(out), {a}, [an, bwd](TapeNode& node) {
        if (!an->requires_grad) return;
        an->ensure_grad();
        for (size_t i = 0; i < node.grad.size(); ++i)
            an->grad[i] += bwd(an->value[i], node.value[i]) * node.grad[i];
    });
}

} // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
    return detail::binary_op("add", detail::BinKind::add, a, b);
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
    return detail::binary_op("sub", detail::BinKind::sub, a, b);
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
    return detail::binary_op("mul", detail::BinKind::mul, a, b);
}
inline Tensor div(const Tensor& a, const Tensor& b) {
    return detail::binary_op("div", detail::BinKind::div, a, b);
}

inline Tensor exp(const Tensor& a) {
    return detail::unary_op("exp", a, [](real x) { return std::exp(x); },
                            [](real, real y) { return y; });
}
inline Tensor log(const Tensor& a) {
    return detail::unary_op("log", a, [](real x) { return std::log(x); },
                            [](real x, real) { return real(1) / x; });
}
inline Tensor relu(const Tensor& a) {
    return detail::unary_op("relu", a, [](real x) { return x > 0 ? x : real(0); },
                            [](real x, real) { return x > 0 ? real(1) : real(0); });
}
inline Tensor sigmoid(const Tensor& a) {
    return detail::unary_op("sigmoid", a,
                            [](real x) {
                                // Evaluate via exp(-|x|) so neither branch overflows.
                                if (x >= 0) return real(1) / (real(1) + std::exp(-x));
                                real e = std::exp(x);
                                return e / (real(1) + e);
                            },
                            [](real, real y) { return y * (real(1) - y); });
}
inline Tensor scale(const Tensor& a, real c) {
    return detail::unary_op("scale", a, [c](real x) { return x * c; },
                            [c](real, real) { return c; });
}
/// |x|, with the subgradient at zero defined as 0.
inline Tensor abs(const Tensor& a) {
    return detail::unary_op("abs", a, [](real x) { return std::fabs(x); },
                            [](real x, real) {
                                return x > 0 ? real(1) : (x < 0 ? real(-1) : real(0));
                            });
}
/// Clamp to [lo, hi]; gradient passes through where lo <= x <= hi.
inline Tensor clamp(const Tensor& a, real lo, real hi) {
    return detail::unary_op("clamp", a,
                            [lo, hi](real x) { return std::min(std::max(x, lo), hi); },
                            [lo, hi](real x, real) {
                                return (x >= lo && x <= hi) ? real(1) : real(0);
                            });
}

// ---------------------------------------------------------------------------
// Reductions over an arbitrary axis subset. Reduced axes are removed from the
// output shape; reducing every axis yields a scalar of shape [1].
// ---------------------------------------------------------------------------

namespace detail {

struct ReducePlan {
    Shape out_shape;
    std::vector<int64_t> out_index; // input linear index -> output linear index
    int64_t group = 1;              // elements per output cell
};

inline ReducePlan reduce_plan(const Shape& shape, const std::vector<int>& axes) {
    const int r = static_cast<int>(shape.size());
    std::vector<bool> reduced(static_cast<size_t>(r), false);
    for (int a : axes) {
        detail::check(a >= 0 && a < r, "reduce: invalid axis");
        reduced[static_cast<size_t>(a)] = true;
    }
    ReducePlan plan;
    for (int d = 0; d < r; ++d) {
        if (!reduced[static_cast<size_t>(d)]) plan.out_shape.push_back(shape[static_cast<size_t>(d)]);
        else plan.group *= shape[static_cast<size_t>(d)];
    }
    if (plan.out_shape.empty()) plan.out_shape = {1};

    std::vector<int64_t> out_strides(static_cast<size_t>(r), 0);
    int64_t stride = 1;
    for (int d = r - 1; d >= 0; --d) {
        if (!reduced[static_cast<size_t>(d)]) {
            out_strides[static_cast<size_t>(d)] = stride;
            stride *= shape[static_cast<size_t>(d)];
        }
    }
    const int64_t n = numel(shape);
    plan.out_index.resize(static_cast<size_t>(n));
    std::vector<int> coord(static_cast<size_t>(r), 0);
    int64_t oi = 0;
    for (int64_t i = 0; i < n; ++i) {
        plan.out_index[static_cast<size_t>(i)] = oi;
        for (int d = r - 1; d >= 0; --d) {
            auto ud = static_cast<size_t>(d);
            if (++coord[ud] < shape[ud]) {
                oi += out_strides[ud];
                break;
            }
            coord[ud] = 0;
            oi -= out_strides[ud] * (shape[ud] - 1);
        }
    }
    return plan;
}

inline std::vector<int> all_axes(const Tensor& a) {
    std::vector<int> axes(static_cast<size_t>(a.rank()));
    for (size_t i = 0; i < axes.size(); ++i) axes[i] = static_cast<int>(i);
    return axes;
}

} // namespace detail

inline Tensor reduce_sum(const Tensor& a, const std::vector<int>& axes) {
    auto plan = detail::reduce_plan(a.shape(), axes);
    std::vector<real> out(static_cast<size_t>(numel(plan.out_shape)), real(0));
    const real* av = a.data();
    for (size_t i = 0; i < static_cast<size_t>(a.size()); ++i)
        out[static_cast<size_t>(plan.out_index[i])] += av[i];
    auto an = a.node();
    auto idx = std::make_shared<std::vector<int64_t>>(std::move(plan.out_index));
    return detail::make_result("reduce_sum", plan.out_shape, std::move(out), {a},
                               [an, idx](TapeNode& node) {
                                   if (!an->requires_grad) return;
                                   an->ensure_grad();
                                   for (size_t i = 0; i < an->grad.size(); ++i)
                                       an->grad[i] += node.grad[static_cast<size_t>((*idx)[i])];
                               });
}

inline Tensor reduce_mean(const Tensor& a, const std::vector<int>& axes) {
    auto plan = detail::reduce_plan(a.shape(), axes);
    const real inv = real(1) / static_cast<real>(plan.group);
    std::vector<real> out(static_cast<size_t>(numel(plan.out_shape)), real(0));
    const real* av = a.data();
    for (size_t i = 0; i < static_cast<size_t>(a.size()); ++i)
        out[static_cast<size_t>(plan.out_index[i])] += av[i];
    for (real& v : out) v *= inv;
    auto an = a.node();
    auto idx = std::make_shared<std::vector<int64_t>>(std::move(plan.out_index));
    return detail::make_result("reduce_mean", plan.out_shape, std::move(out), {a},
                               [an, idx, inv](TapeNode& node) {
                                   if (!an->requires_grad) return;
                                   an->ensure_grad();
                                   for (size_t i = 0; i < an->grad.size(); ++i)
                                       an->grad[i] +=
                                           node.grad[static_cast<size_t>((*idx)[i])] * inv;
                               });
}

/// Max-reduction. The backward pass routes the gradient of each output cell
/// to the first maximal element of its group in row-major order.
inline Tensor reduce_max(const Tensor& a, const std::vector<int>& axes) {
    auto plan = detail::reduce_plan(a.shape(), axes);
    const size_t out_n = static_cast<size_t>(numel(plan.out_shape));
    std::vector<real> out(out_n);
    std::vector<int64_t> argmax(out_n, -1);
    const real* av = a.data();
    for (size_t i = 0; i < static_cast<size_t>(a.size()); ++i) {
        const size_t o = static_cast<size_t>(plan.out_index[i]);
        if (argmax[o] < 0 || av[i] > out[o]) {
            out[o] = av[i];
            argmax[o] = static_cast<int64_t>(i);
        }
    }
    auto an = a.node();
    auto am = std::make_shared<std::vector<int64_t>>(std::move(argmax));
    return detail::make_result("reduce_max", plan.out_shape, std::move(out), {a},
                               [an, am](TapeNode& node) {
                                   if (!an->requires_grad) return;
                                   an->ensure_grad();
                                   for (size_t o = 0; o < node.grad.size(); ++o)
                                       an->grad[static_cast<size_t>((*am)[o])] += node.grad[o];
                               });
}

inline Tensor reduce_sum(const Tensor& a) { return reduce_sum(a, detail::all_axes(a)); }
inline Tensor reduce_mean(const Tensor& a) { return reduce_mean(a, detail::all_axes(a)); }
inline Tensor reduce_max(const Tensor& a) { return reduce_max(a, detail::all_axes(a)); }

// ---------------------------------------------------------------------------
// Shape utilities.
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, Shape shape) {
    detail::check(numel(shape) == a.size(), "reshape: element count mismatch");
    auto an = a.node();
    return detail::make_result("reshape", std::move(shape), a.values(), {a},
                               [an](TapeNode& node) {
                                   if (!an->requires_grad) return;
                                   an->ensure_grad();
                                   for (size_t i = 0; i < node.grad.size(); ++i)
                                       an->grad[i] += node.grad[i];
                               });
}

/// Extract the element at a flat index as a scalar tensor.
inline Tensor select(const Tensor& a, int64_t index) {
    detail::check(index >= 0 && index < a.size(), "select: index out of range");
    auto an = a.node();
    return detail::make_result("select", {1}, {a.data()[index]}, {a},
                               [an, index](TapeNode& node) {
                                   if (!an->requires_grad) return;
                                   an->ensure_grad();
                                   an->grad[static_cast<size_t>(index)] += node.grad[0];
                               });
}

/// Channel slice [c0, c1) of an NCHW tensor.
inline Tensor slice_channels(const Tensor& a, int c0, int c1) {
    detail::check(a.rank() == 4, "slice_channels: expected NCHW tensor");
    const int n = a.dim(0), c = a.dim(1), h = a.dim(2), w = a.dim(3);
    detail::check(0 <= c0 && c0 < c1 && c1 <= c, "slice_channels: bad channel range");
    const int64_t hw = static_cast<int64_t>(h) * w;
    const int cs = c1 - c0;
    std::vector<real> out(static_cast<size_t>(n) * cs * hw);
    const real* av = a.data();
    for (int b = 0; b < n; ++b)
        std::memcpy(out.data() + static_cast<int64_t>(b) * cs * hw,
                    av + (static_cast<int64_t>(b) * c + c0) * hw,
                    static_cast<size_t>(cs) * hw * sizeof(real));
    auto an = a.node();
    return detail::make_result("slice_channels", {n, cs, h, w}, std::move(out), {a},
                               [an, n, c, c0, cs, hw](TapeNode& node) {
                                   if (!an->requires_grad) return;
                                   an->ensure_grad();
                                   for (int b = 0; b < n; ++b) {
                                       real* dst = an->grad.data() +
                                                   (static_cast<int64_t>(b) * c + c0) * hw;
                                       const real* src =
                                           node.grad.data() + static_cast<int64_t>(b) * cs * hw;
                                       for (int64_t i = 0; i < cs * hw; ++i) dst[i] += src[i];
                                   }
                               });
}

} // namespace softpose
