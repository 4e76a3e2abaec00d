#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "vidcap/tensor.hpp"

namespace vidcap {

// Multiply-accumulate bookkeeping. Only matmul contributes; scopes let the
// attention kernels separate score/value mixing from projections.
enum class MacScope { other, score, projection };

struct MacCounter {
    std::uint64_t score = 0;
    std::uint64_t projection = 0;
    std::uint64_t other = 0;

    void add(MacScope scope, std::uint64_t n) {
        switch (scope) {
            case MacScope::score: score += n; break;
            case MacScope::projection: projection += n; break;
            case MacScope::other: other += n; break;
        }
    }
    std::uint64_t total() const { return score + projection + other; }
    void reset() { score = projection = other = 0; }
};

class Graph;

// Lightweight handle to a node in a Graph.
struct Value {
    Graph* g = nullptr;
    std::int32_t idx = -1;

    bool valid() const { return g != nullptr && idx >= 0; }
    const Shape& shape() const;
    std::int64_t numel() const;
    const std::vector<double>& val() const;
    double scalar() const;
};

// Reverse-mode tape. Nodes are appended in evaluation order, which is by
// construction a topological order; backward walks the tape once in reverse.
// A Graph is confined to a single thread; independent graphs may run in
// parallel and may share read-only leaf tensors.
class Graph {
public:
    Graph() = default;
    Graph(const Graph&) = delete;
    Graph& operator=(const Graph&) = delete;

    // Binds an external tensor as a leaf. Gradients accumulate into
    // t.grad when t.requires_grad is set.
    Value leaf(Tensor& t) {
        int idx = add_node(t.shape, t.data, t.requires_grad, nullptr);
        nodes_[idx].bound = &t;
        leaves_.push_back(idx);
        return Value{this, idx};
    }

    Value constant(Tensor t) { return Value{this, add_node(t.shape, std::move(t.data), false, nullptr)}; }
    Value constant(Shape shape, std::vector<double> data) {
        return Value{this, add_node(std::move(shape), std::move(data), false, nullptr)};
    }

    // Accumulates chain-rule gradients of a scalar loss into every bound
    // leaf tensor that requires grad. Repeated calls accumulate.
    void backward(Value loss) {
        backward_local(loss);
        accumulate_leaf_grads();
    }

    // Same sweep but results stay inside the graph; the caller merges them
    // later with accumulate_leaf_grads(). Lets several graphs run on worker
    // threads against shared read-only parameter tensors.
    void backward_local(Value loss) {
        if (loss.g != this) throw ShapeError("loss belongs to a different graph");
        Node& ln = nodes_[loss.idx];
        if (shape_numel(ln.shape) != 1)
            throw ShapeError("backward requires a scalar loss, got shape " + shape_str(ln.shape));
        for (auto& n : nodes_) n.grad.clear();
        ln.grad.assign(1, 1.0);
        for (std::int32_t i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (!n.needs_grad || !n.back || n.grad.empty()) continue;
            n.back(*this);
        }
    }

    void accumulate_leaf_grads() {
        for (int idx : leaves_) {
            Node& n = nodes_[idx];
            Tensor* t = n.bound;
            if (!t || !t->requires_grad || n.grad.empty()) continue;
            for (std::size_t k = 0; k < n.grad.size(); ++k) t->grad[k] += n.grad[k];
        }
    }

    // Leaf gradient from the last backward_local sweep (empty if none flowed).
    const std::vector<double>& leaf_grad(Value v) const { return nodes_[v.idx].grad; }

    Tensor materialize(Value v) const {
        const Node& n = nodes_[v.idx];
        return Tensor(n.shape, n.val);
    }

    MacCounter& macs() { return macs_; }
    MacScope mac_scope() const { return scope_; }
    void set_mac_scope(MacScope s) { scope_ = s; }
    std::size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Shape shape;
        std::vector<double> val;
        std::vector<double> grad;
        bool needs_grad = false;
        Tensor* bound = nullptr;
        std::function<void(Graph&)> back;
    };

    int add_node(Shape shape, std::vector<double> val, bool needs_grad, std::function<void(Graph&)> back) {
        check_shape_valid(shape);
        Node n;
        n.shape = std::move(shape);
        n.val = std::move(val);
        n.needs_grad = needs_grad;
        n.back = std::move(back);
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size() - 1);
    }

    std::vector<double>& grad_buf(int idx) {
        Node& n = nodes_[idx];
        if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
        return n.grad;
    }

    std::vector<Node> nodes_;
    std::vector<int> leaves_;
    MacCounter macs_;
    MacScope scope_ = MacScope::other;

    friend struct Value;
    friend struct OpAccess;
};

// RAII tag for MAC accounting regions.
struct ScopedMacScope {
    Graph& g;
    MacScope prev;
    ScopedMacScope(Graph& graph, MacScope s) : g(graph), prev(graph.mac_scope()) { g.set_mac_scope(s); }
    ~ScopedMacScope() { g.set_mac_scope(prev); }
};

// Internal plumbing: op implementations live as free functions but need
// node-level access. The backward closure is attached after the output node
// exists so it can capture its own index.
struct OpAccess {
    static int add(Graph& g, Shape shape, std::vector<double> val, bool needs_grad) {
        return g.add_node(std::move(shape), std::move(val), needs_grad, nullptr);
    }
    static void set_back(Graph& g, int i, std::function<void(Graph&)> back) { g.nodes_[i].back = std::move(back); }
    static const Shape& shape(const Graph& g, int i) { return g.nodes_[i].shape; }
    static const std::vector<double>& val(const Graph& g, int i) { return g.nodes_[i].val; }
    static const std::vector<double>& grad(const Graph& g, int i) { return g.nodes_[i].grad; }
    static std::vector<double>& grad_buf(Graph& g, int i) { return g.grad_buf(i); }
    static bool needs_grad(const Graph& g, int i) { return g.nodes_[i].needs_grad; }
};

inline const Shape& Value::shape() const { return OpAccess::shape(*g, idx); }
inline std::int64_t Value::numel() const { return shape_numel(shape()); }
inline const std::vector<double>& Value::val() const { return OpAccess::val(*g, idx); }
inline double Value::scalar() const {
    if (numel() != 1) throw ShapeError("scalar() on non-scalar value of shape " + shape_str(shape()));
    return val()[0];
}

namespace detail {

inline Graph& same_graph(Value a, Value b) {
    if (a.g == nullptr || a.g != b.g) throw ShapeError("values belong to different graphs");
    return *a.g;
}

struct AxisSpan {
    std::int64_t outer, axis, inner;
};

inline AxisSpan axis_span(const Shape& s, int axis) {
    if (axis < 0 || axis >= static_cast<int>(s.size()))
        throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(s));
    AxisSpan sp{1, s[axis], 1};
    for (int i = 0; i < axis; ++i) sp.outer *= s[i];
    for (std::size_t i = static_cast<std::size_t>(axis) + 1; i < s.size(); ++i) sp.inner *= s[i];
    return sp;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Primitives. Each computes its value eagerly and attaches a closure that
// routes the output gradient to its inputs.
// ---------------------------------------------------------------------------

inline Value matmul(Value a, Value b) {
    Graph& g = detail::same_graph(a, b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != 2 || sb.size() != 2 || sa[1] != sb[0])
        throw ShapeError("matmul shape mismatch: " + shape_str(sa) + " x " + shape_str(sb));
    const std::int64_t m = sa[0], k = sa[1], n = sb[1];
    g.macs().add(g.mac_scope(), static_cast<std::uint64_t>(m) * k * n);

    std::vector<double> out(static_cast<std::size_t>(m * n), 0.0);
    {
        const double* A = a.val().data();
        const double* B = b.val().data();
        for (std::int64_t i = 0; i < m; ++i) {
            double* ci = out.data() + i * n;
            const double* ai = A + i * k;
            for (std::int64_t kk = 0; kk < k; ++kk) {
                const double av = ai[kk];
                const double* bk = B + kk * n;
                for (std::int64_t j = 0; j < n; ++j) ci[j] += av * bk[j];
            }
        }
    }

    const int ia = a.idx, ib = b.idx;
    const bool ng = OpAccess::needs_grad(g, ia) || OpAccess::needs_grad(g, ib);
    const int o = OpAccess::add(g, {m, n}, std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ia, ib, o, m, k, n](Graph& gg) {
            const std::vector<double>& dC = OpAccess::grad(gg, o);
            if (OpAccess::needs_grad(gg, ia)) {
                std::vector<double>& dA = OpAccess::grad_buf(gg, ia);
                const std::vector<double>& B = OpAccess::val(gg, ib);
                for (std::int64_t i = 0; i < m; ++i) {
                    const double* dci = dC.data() + i * n;
                    double* dai = dA.data() + i * k;
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        const double* bk = B.data() + kk * n;
                        double acc = 0.0;
                        for (std::int64_t j = 0; j < n; ++j) acc += dci[j] * bk[j];
                        dai[kk] += acc;
                    }
                }
            }
            if (OpAccess::needs_grad(gg, ib)) {
                std::vector<double>& dB = OpAccess::grad_buf(gg, ib);
                const std::vector<double>& A = OpAccess::val(gg, ia);
                for (std::int64_t i = 0; i < m; ++i) {
                    const double* ai = A.data() + i * k;
                    const double* dci = dC.data() + i * n;
                    for (std::int64_t kk = 0; kk < k; ++kk) {
                        const double av = ai[kk];
                        double* dbk = dB.data() + kk * n;
                        for (std::int64_t j = 0; j < n; ++j) dbk[j] += av * dci[j];
                    }
                }
            }
        });
    return Value{&g, o};
}

inline Value transpose(Value x) {
    Graph& g = *x.g;
    const Shape& s = x.shape();
    if (s.size() != 2) throw ShapeError("transpose expects a matrix, got " + shape_str(s));
    const std::int64_t m = s[0], n = s[1];
    std::vector<double> out(static_cast<std::size_t>(m * n));
    const double* X = x.val().data();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[j * m + i] = X[i * n + j];
    const int ix = x.idx;
    const bool ng = OpAccess::needs_grad(g, ix);
    const int o = OpAccess::add(g, {n, m}, std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, o, m, n](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
            for (std::int64_t j = 0; j < n; ++j)
                for (std::int64_t i = 0; i < m; ++i) dX[i * n + j] += dY[j * m + i];
        });
    return Value{&g, o};
}

inline Value add(Value a, Value b) {
    Graph& g = detail::same_graph(a, b);
    if (a.shape() != b.shape())
        throw ShapeError("add shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.val());
    const std::vector<double>& B = b.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
    const int ia = a.idx, ib = b.idx;
    const bool ng = OpAccess::needs_grad(g, ia) || OpAccess::needs_grad(g, ib);
    const int o = OpAccess::add(g, a.shape(), std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ia, ib, o](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            for (int in : {ia, ib}) {
                if (!OpAccess::needs_grad(gg, in)) continue;
                std::vector<double>& dX = OpAccess::grad_buf(gg, in);
                for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i];
            }
        });
    return Value{&g, o};
}

// a[m,n] + bias[n], broadcast over rows
inline Value add_bias(Value a, Value bias) {
    Graph& g = detail::same_graph(a, bias);
    const Shape& sa = a.shape();
    const Shape& sb = bias.shape();
    if (sa.size() != 2 || sb.size() != 1 || sa[1] != sb[0])
        throw ShapeError("add_bias shape mismatch: " + shape_str(sa) + " + " + shape_str(sb));
    const std::int64_t m = sa[0], n = sa[1];
    std::vector<double> out(a.val());
    const std::vector<double>& B = bias.val();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[i * n + j] += B[j];
    const int ia = a.idx, ib = bias.idx;
    const bool ng = OpAccess::needs_grad(g, ia) || OpAccess::needs_grad(g, ib);
    const int o = OpAccess::add(g, sa, std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ia, ib, o, m, n](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            if (OpAccess::needs_grad(gg, ia)) {
                std::vector<double>& dA = OpAccess::grad_buf(gg, ia);
                for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += dY[i];
            }
            if (OpAccess::needs_grad(gg, ib)) {
                std::vector<double>& dB = OpAccess::grad_buf(gg, ib);
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j) dB[j] += dY[i * n + j];
            }
        });
    return Value{&g, o};
}

inline Value mul(Value a, Value b) {
    Graph& g = detail::same_graph(a, b);
    if (a.shape() != b.shape())
        throw ShapeError("mul shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.val());
    const std::vector<double>& B = b.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
    const int ia = a.idx, ib = b.idx;
    const bool ng = OpAccess::needs_grad(g, ia) || OpAccess::needs_grad(g, ib);
    const int o = OpAccess::add(g, a.shape(), std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ia, ib, o](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            if (OpAccess::needs_grad(gg, ia)) {
                std::vector<double>& dA = OpAccess::grad_buf(gg, ia);
                const std::vector<double>& B = OpAccess::val(gg, ib);
                for (std::size_t i = 0; i < dY.size(); ++i) dA[i] += dY[i] * B[i];
            }
            if (OpAccess::needs_grad(gg, ib)) {
                std::vector<double>& dB = OpAccess::grad_buf(gg, ib);
                const std::vector<double>& A = OpAccess::val(gg, ia);
                for (std::size_t i = 0; i < dY.size(); ++i) dB[i] += dY[i] * A[i];
            }
        });
    return Value{&g, o};
}

inline Value scale(Value x, double c) {
    Graph& g = *x.g;
    std::vector<double> out(x.val());
    for (auto& v : out) v *= c;
    const int ix = x.idx;
    const bool ng = OpAccess::needs_grad(g, ix);
    const int o = OpAccess::add(g, x.shape(), std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, o, c](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
            for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += c * dY[i];
        });
    return Value{&g, o};
}

// x * s where s is a trainable scalar (shape [1])
inline Value scale_by(Value x, Value s) {
    Graph& g = detail::same_graph(x, s);
    if (s.numel() != 1) throw ShapeError("scale_by expects a scalar, got " + shape_str(s.shape()));
    const double sv = s.val()[0];
    std::vector<double> out(x.val());
    for (auto& v : out) v *= sv;
    const int ix = x.idx, is = s.idx;
    const bool ng = OpAccess::needs_grad(g, ix) || OpAccess::needs_grad(g, is);
    const int o = OpAccess::add(g, x.shape(), std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, is, o, sv](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            if (OpAccess::needs_grad(gg, ix)) {
                std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
                for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += sv * dY[i];
            }
            if (OpAccess::needs_grad(gg, is)) {
                const std::vector<double>& X = OpAccess::val(gg, ix);
                double acc = 0.0;
                for (std::size_t i = 0; i < dY.size(); ++i) acc += dY[i] * X[i];
                OpAccess::grad_buf(gg, is)[0] += acc;
            }
        });
    return Value{&g, o};
}

// x[m,n] * gate[n], broadcast over rows (per-dimension gating)
inline Value gate_rows(Value x, Value gate) {
    Graph& g = detail::same_graph(x, gate);
    const Shape& sx = x.shape();
    const Shape& sg = gate.shape();
    if (sx.size() != 2 || sg.size() != 1 || sx[1] != sg[0])
        throw ShapeError("gate_rows shape mismatch: " + shape_str(sx) + " * " + shape_str(sg));
    const std::int64_t m = sx[0], n = sx[1];
    std::vector<double> out(x.val());
    const std::vector<double>& G = gate.val();
    for (std::int64_t i = 0; i < m; ++i)
        for (std::int64_t j = 0; j < n; ++j) out[i * n + j] *= G[j];
    const int ix = x.idx, ig = gate.idx;
    const bool ng = OpAccess::needs_grad(g, ix) || OpAccess::needs_grad(g, ig);
    const int o = OpAccess::add(g, sx, std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, ig, o, m, n](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            if (OpAccess::needs_grad(gg, ix)) {
                std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
                const std::vector<double>& G = OpAccess::val(gg, ig);
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j) dX[i * n + j] += dY[i * n + j] * G[j];
            }
            if (OpAccess::needs_grad(gg, ig)) {
                std::vector<double>& dG = OpAccess::grad_buf(gg, ig);
                const std::vector<double>& X = OpAccess::val(gg, ix);
                for (std::int64_t i = 0; i < m; ++i)
                    for (std::int64_t j = 0; j < n; ++j) dG[j] += dY[i * n + j] * X[i * n + j];
            }
        });
    return Value{&g, o};
}

inline Value concat(Value a, Value b, int axis) {
    Graph& g = detail::same_graph(a, b);
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    if (sa.size() != sb.size()) throw ShapeError("concat rank mismatch: " + shape_str(sa) + " vs " + shape_str(sb));
    if (axis < 0 || axis >= static_cast<int>(sa.size())) throw ShapeError("concat axis out of range");
    for (std::size_t i = 0; i < sa.size(); ++i)
        if (static_cast<int>(i) != axis && sa[i] != sb[i])
            throw ShapeError("concat shape mismatch: " + shape_str(sa) + " vs " + shape_str(sb));
    Shape so = sa;
    so[axis] += sb[axis];
    auto spa = detail::axis_span(sa, axis);
    auto spb = detail::axis_span(sb, axis);
    std::vector<double> out(static_cast<std::size_t>(shape_numel(so)));
    const std::int64_t rowa = spa.axis * spa.inner, rowb = spb.axis * spb.inner;
    const double* A = a.val().data();
    const double* B = b.val().data();
    for (std::int64_t ou = 0; ou < spa.outer; ++ou) {
        double* dst = out.data() + ou * (rowa + rowb);
        std::copy(A + ou * rowa, A + (ou + 1) * rowa, dst);
        std::copy(B + ou * rowb, B + (ou + 1) * rowb, dst + rowa);
    }
    const int ia = a.idx, ib = b.idx;
    const bool ng = OpAccess::needs_grad(g, ia) || OpAccess::needs_grad(g, ib);
    const int o = OpAccess::add(g, so, std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ia, ib, o, rowa, rowb, outer = spa.outer](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            if (OpAccess::needs_grad(gg, ia)) {
                std::vector<double>& dA = OpAccess::grad_buf(gg, ia);
                for (std::int64_t ou = 0; ou < outer; ++ou)
                    for (std::int64_t j = 0; j < rowa; ++j) dA[ou * rowa + j] += dY[ou * (rowa + rowb) + j];
            }
            if (OpAccess::needs_grad(gg, ib)) {
                std::vector<double>& dB = OpAccess::grad_buf(gg, ib);
                for (std::int64_t ou = 0; ou < outer; ++ou)
                    for (std::int64_t j = 0; j < rowb; ++j) dB[ou * rowb + j] += dY[ou * (rowa + rowb) + rowa + j];
            }
        });
    return Value{&g, o};
}

// half-open [begin, end) along an axis
inline Value slice(Value x, int axis, std::int64_t begin, std::int64_t end) {
    Graph& g = *x.g;
    const Shape& s = x.shape();
    auto sp = detail::axis_span(s, axis);
    if (begin < 0 || end > sp.axis || begin >= end)
        throw ShapeError("slice range [" + std::to_string(begin) + "," + std::to_string(end) + ") invalid for axis of length " +
                         std::to_string(sp.axis));
    Shape so = s;
    so[axis] = end - begin;
    std::vector<double> out(static_cast<std::size_t>(shape_numel(so)));
    const double* X = x.val().data();
    const std::int64_t len = end - begin;
    for (std::int64_t ou = 0; ou < sp.outer; ++ou)
        for (std::int64_t i = 0; i < len; ++i)
            std::copy(X + (ou * sp.axis + begin + i) * sp.inner, X + (ou * sp.axis + begin + i + 1) * sp.inner,
                      out.data() + (ou * len + i) * sp.inner);
    const int ix = x.idx;
    const bool ng = OpAccess::needs_grad(g, ix);
    const int o = OpAccess::add(g, so, std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, o, sp, begin, len](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
            for (std::int64_t ou = 0; ou < sp.outer; ++ou)
                for (std::int64_t i = 0; i < len; ++i)
                    for (std::int64_t in = 0; in < sp.inner; ++in)
                        dX[(ou * sp.axis + begin + i) * sp.inner + in] += dY[(ou * len + i) * sp.inner + in];
        });
    return Value{&g, o};
}

inline Value reshape(Value x, Shape target) {
    Graph& g = *x.g;
    check_shape_valid(target);
    if (shape_numel(target) != x.numel())
        throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(target) + " changes element count");
    const int ix = x.idx;
    const bool ng = OpAccess::needs_grad(g, ix);
    const int o = OpAccess::add(g, std::move(target), x.val(), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, o](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
            for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i];
        });
    return Value{&g, o};
}

// numerically stable softmax along an axis; slices sum to 1
inline Value softmax(Value x, int axis) {
    Graph& g = *x.g;
    const Shape& s = x.shape();
    auto sp = detail::axis_span(s, axis);
    std::vector<double> out(x.val());
    for (std::int64_t ou = 0; ou < sp.outer; ++ou)
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            double mx = -HUGE_VAL;
            for (std::int64_t i = 0; i < sp.axis; ++i) mx = std::max(mx, out[(ou * sp.axis + i) * sp.inner + in]);
            double sum = 0.0;
            for (std::int64_t i = 0; i < sp.axis; ++i) {
                double& v = out[(ou * sp.axis + i) * sp.inner + in];
                v = std::exp(v - mx);
                sum += v;
            }
            for (std::int64_t i = 0; i < sp.axis; ++i) out[(ou * sp.axis + i) * sp.inner + in] /= sum;
        }
    const int ix = x.idx;
    const bool ng = OpAccess::needs_grad(g, ix);
    const int o = OpAccess::add(g, s, std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, o, sp](Graph& gg) {
            const std::vector<double>& Y = OpAccess::val(gg, o);
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
            for (std::int64_t ou = 0; ou < sp.outer; ++ou)
                for (std::int64_t in = 0; in < sp.inner; ++in) {
                    double dot = 0.0;
                    for (std::int64_t i = 0; i < sp.axis; ++i) {
                        const std::size_t k = (ou * sp.axis + i) * sp.inner + in;
                        dot += dY[k] * Y[k];
                    }
                    for (std::int64_t i = 0; i < sp.axis; ++i) {
                        const std::size_t k = (ou * sp.axis + i) * sp.inner + in;
                        dX[k] += Y[k] * (dY[k] - dot);
                    }
                }
        });
    return Value{&g, o};
}

// softmax over columns j <= i of a square score matrix; j > i is exactly 0
inline Value causal_softmax(Value x) {
    Graph& g = *x.g;
    const Shape& s = x.shape();
    if (s.size() != 2 || s[0] != s[1]) throw ShapeError("causal_softmax expects square scores, got " + shape_str(s));
    const std::int64_t n = s[0];
    std::vector<double> out(static_cast<std::size_t>(n * n), 0.0);
    const double* X = x.val().data();
    for (std::int64_t i = 0; i < n; ++i) {
        double mx = -HUGE_VAL;
        for (std::int64_t j = 0; j <= i; ++j) mx = std::max(mx, X[i * n + j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j <= i; ++j) {
            out[i * n + j] = std::exp(X[i * n + j] - mx);
            sum += out[i * n + j];
        }
        for (std::int64_t j = 0; j <= i; ++j) out[i * n + j] /= sum;
    }
    const int ix = x.idx;
    const bool ng = OpAccess::needs_grad(g, ix);
    const int o = OpAccess::add(g, s, std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, o, n](Graph& gg) {
            const std::vector<double>& Y = OpAccess::val(gg, o);
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
            for (std::int64_t i = 0; i < n; ++i) {
                double dot = 0.0;
                for (std::int64_t j = 0; j <= i; ++j) dot += dY[i * n + j] * Y[i * n + j];
                for (std::int64_t j = 0; j <= i; ++j) dX[i * n + j] += Y[i * n + j] * (dY[i * n + j] - dot);
            }
        });
    return Value{&g, o};
}

// per-row normalization over the last axis, then affine with gain/bias
inline Value layer_norm(Value x, Value gain, Value bias, double eps = 1e-5) {
    Graph& g = detail::same_graph(x, gain);
    detail::same_graph(x, bias);
    const Shape& s = x.shape();
    const std::int64_t d = s.back();
    if (gain.shape() != Shape{d} || bias.shape() != Shape{d})
        throw ShapeError("layer_norm gain/bias must have shape [" + std::to_string(d) + "]");
    const std::int64_t rows = x.numel() / d;
    std::vector<double> out(x.val());
    std::vector<double> xhat(out.size());
    std::vector<double> inv_sd(static_cast<std::size_t>(rows));
    const std::vector<double>& G = gain.val();
    const std::vector<double>& B = bias.val();
    for (std::int64_t r = 0; r < rows; ++r) {
        double* row = out.data() + r * d;
        double mean = 0.0;
        for (std::int64_t j = 0; j < d; ++j) mean += row[j];
        mean /= d;
        double var = 0.0;
        for (std::int64_t j = 0; j < d; ++j) {
            const double c = row[j] - mean;
            var += c * c;
        }
        var /= d;
        const double is = 1.0 / std::sqrt(var + eps);
        inv_sd[r] = is;
        for (std::int64_t j = 0; j < d; ++j) {
            const double h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            row[j] = h * G[j] + B[j];
        }
    }
    const int ix = x.idx, ig = gain.idx, ib = bias.idx;
    const bool ng = OpAccess::needs_grad(g, ix) || OpAccess::needs_grad(g, ig) || OpAccess::needs_grad(g, ib);
    const int o = OpAccess::add(g, s, std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, ig, ib, o, rows, d, xh = std::move(xhat), is = std::move(inv_sd)](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            const std::vector<double>& G = OpAccess::val(gg, ig);
            if (OpAccess::needs_grad(gg, ig)) {
                std::vector<double>& dG = OpAccess::grad_buf(gg, ig);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < d; ++j) dG[j] += dY[r * d + j] * xh[r * d + j];
            }
            if (OpAccess::needs_grad(gg, ib)) {
                std::vector<double>& dB = OpAccess::grad_buf(gg, ib);
                for (std::int64_t r = 0; r < rows; ++r)
                    for (std::int64_t j = 0; j < d; ++j) dB[j] += dY[r * d + j];
            }
            if (OpAccess::needs_grad(gg, ix)) {
                std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
                for (std::int64_t r = 0; r < rows; ++r) {
                    double sum_dh = 0.0, sum_dh_h = 0.0;
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double dh = dY[r * d + j] * G[j];
                        sum_dh += dh;
                        sum_dh_h += dh * xh[r * d + j];
                    }
                    const double inv_n = 1.0 / static_cast<double>(d);
                    for (std::int64_t j = 0; j < d; ++j) {
                        const double dh = dY[r * d + j] * G[j];
                        dX[r * d + j] += is[r] * (dh - inv_n * sum_dh - xh[r * d + j] * inv_n * sum_dh_h);
                    }
                }
            }
        });
    return Value{&g, o};
}

// removes an axis, keeping the max; gradient routes to the first argmax
inline Value max_pool_axis(Value x, int axis) {
    Graph& g = *x.g;
    const Shape& s = x.shape();
    auto sp = detail::axis_span(s, axis);
    Shape so;
    for (std::size_t i = 0; i < s.size(); ++i)
        if (static_cast<int>(i) != axis) so.push_back(s[i]);
    if (so.empty()) so.push_back(1);
    std::vector<double> out(static_cast<std::size_t>(sp.outer * sp.inner));
    std::vector<std::int64_t> arg(out.size());
    const double* X = x.val().data();
    for (std::int64_t ou = 0; ou < sp.outer; ++ou)
        for (std::int64_t in = 0; in < sp.inner; ++in) {
            double best = X[(ou * sp.axis) * sp.inner + in];
            std::int64_t besti = 0;
            for (std::int64_t i = 1; i < sp.axis; ++i) {
                const double v = X[(ou * sp.axis + i) * sp.inner + in];
                if (v > best) {
                    best = v;
                    besti = i;
                }
            }
            out[ou * sp.inner + in] = best;
            arg[ou * sp.inner + in] = besti;
        }
    const int ix = x.idx;
    const bool ng = OpAccess::needs_grad(g, ix);
    const int o = OpAccess::add(g, std::move(so), std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, o, sp, arg = std::move(arg)](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
            for (std::int64_t ou = 0; ou < sp.outer; ++ou)
                for (std::int64_t in = 0; in < sp.inner; ++in)
                    dX[(ou * sp.axis + arg[ou * sp.inner + in]) * sp.inner + in] += dY[ou * sp.inner + in];
        });
    return Value{&g, o};
}

inline Value tanh(Value x) {
    Graph& g = *x.g;
    std::vector<double> out(x.val());
    for (auto& v : out) v = std::tanh(v);
    const int ix = x.idx;
    const bool ng = OpAccess::needs_grad(g, ix);
    const int o = OpAccess::add(g, x.shape(), std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, o](Graph& gg) {
            const std::vector<double>& Y = OpAccess::val(gg, o);
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
            for (std::size_t i = 0; i < dY.size(); ++i) dX[i] += dY[i] * (1.0 - Y[i] * Y[i]);
        });
    return Value{&g, o};
}

// exact gaussian-error formulation
inline Value gelu(Value x) {
    Graph& g = *x.g;
    std::vector<double> out(x.val());
    for (auto& v : out) v = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
    const int ix = x.idx;
    const bool ng = OpAccess::needs_grad(g, ix);
    const int o = OpAccess::add(g, x.shape(), std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, o](Graph& gg) {
            const std::vector<double>& X = OpAccess::val(gg, ix);
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < dY.size(); ++i) {
                const double x = X[i];
                const double cdf = 0.5 * (1.0 + std::erf(x * M_SQRT1_2));
                const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
                dX[i] += dY[i] * (cdf + x * pdf);
            }
        });
    return Value{&g, o};
}

// rows of an embedding table; gradient scatters back into the table
inline Value embedding(Value table, const std::vector<int>& ids) {
    Graph& g = *table.g;
    const Shape& s = table.shape();
    if (s.size() != 2) throw ShapeError("embedding table must be 2-D, got " + shape_str(s));
    if (ids.empty()) throw ShapeError("embedding lookup needs at least one id");
    const std::int64_t v = s[0], d = s[1];
    for (int id : ids)
        if (id < 0 || id >= v) throw ShapeError("embedding id " + std::to_string(id) + " out of range [0," + std::to_string(v) + ")");
    const std::int64_t n = static_cast<std::int64_t>(ids.size());
    std::vector<double> out(static_cast<std::size_t>(n * d));
    const double* T = table.val().data();
    for (std::int64_t i = 0; i < n; ++i) std::copy(T + ids[i] * d, T + (ids[i] + 1) * d, out.data() + i * d);
    const int it = table.idx;
    const bool ng = OpAccess::needs_grad(g, it);
    const int o = OpAccess::add(g, {n, d}, std::move(out), ng);
    if (ng)
        OpAccess::set_back(g, o, [it, o, ids, d](Graph& gg) {
            const std::vector<double>& dY = OpAccess::grad(gg, o);
            std::vector<double>& dT = OpAccess::grad_buf(gg, it);
            for (std::size_t i = 0; i < ids.size(); ++i)
                for (std::int64_t j = 0; j < d; ++j) dT[ids[i] * d + j] += dY[i * d + j];
        });
    return Value{&g, o};
}

// mean negative log-likelihood of integer targets under row-wise softmax
inline Value cross_entropy(Value logits, const std::vector<int>& targets) {
    Graph& g = *logits.g;
    const Shape& s = logits.shape();
    if (s.size() != 2) throw ShapeError("cross_entropy expects [n,vocab] logits, got " + shape_str(s));
    const std::int64_t n = s[0], v = s[1];
    if (static_cast<std::int64_t>(targets.size()) != n)
        throw ShapeError("cross_entropy got " + std::to_string(targets.size()) + " targets for " + std::to_string(n) + " rows");
    for (int t : targets)
        if (t < 0 || t >= v) throw ShapeError("target id " + std::to_string(t) + " out of vocab range");
    const double* X = logits.val().data();
    std::vector<double> probs(static_cast<std::size_t>(n * v));
    double loss = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double mx = -HUGE_VAL;
        for (std::int64_t j = 0; j < v; ++j) mx = std::max(mx, X[i * v + j]);
        double sum = 0.0;
        for (std::int64_t j = 0; j < v; ++j) {
            probs[i * v + j] = std::exp(X[i * v + j] - mx);
            sum += probs[i * v + j];
        }
        for (std::int64_t j = 0; j < v; ++j) probs[i * v + j] /= sum;
        loss += std::log(sum) + mx - X[i * v + targets[i]];
    }
    loss /= static_cast<double>(n);
    const int ix = logits.idx;
    const bool ng = OpAccess::needs_grad(g, ix);
    const int o = OpAccess::add(g, {1}, {loss}, ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, o, targets, n, v, p = std::move(probs)](Graph& gg) {
            const double gout = OpAccess::grad(gg, o)[0];
            std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::int64_t i = 0; i < n; ++i)
                for (std::int64_t j = 0; j < v; ++j)
                    dX[i * v + j] += gout * inv_n * (p[i * v + j] - (j == targets[i] ? 1.0 : 0.0));
        });
    return Value{&g, o};
}

inline Value sum_all(Value x) {
    Graph& g = *x.g;
    double s = 0.0;
    for (double v : x.val()) s += v;
    const int ix = x.idx;
    const bool ng = OpAccess::needs_grad(g, ix);
    const int o = OpAccess::add(g, {1}, {s}, ng);
    if (ng)
        OpAccess::set_back(g, o, [ix, o](Graph& gg) {
            const double gout = OpAccess::grad(gg, o)[0];
            std::vector<double>& dX = OpAccess::grad_buf(gg, ix);
            for (auto& v : dX) v += gout;
        });
    return Value{&g, o};
}

inline Value mean_all(Value x) { return scale(sum_all(x), 1.0 / static_cast<double>(x.numel())); }

}  // namespace vidcap
