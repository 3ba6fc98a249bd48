#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <unordered_map>
#include <utility>
#include <vector>

#include "factguard/errors.hpp"
#include "factguard/matrix.hpp"

namespace factguard {

class GradientTape;

// Handle to one node on a tape. Cheap to copy; only meaningful together with
// the tape that produced it.
struct Value {
    GradientTape* tape = nullptr;
    int id = -1;
    bool valid() const { return tape != nullptr && id >= 0; }
};

// Reverse-mode tape: each op appends a node holding the forward value and a
// closure that scatters the node's gradient into its parents. One tape per
// training step; single-threaded by contract.
class GradientTape {
public:
    GradientTape() = default;
    GradientTape(const GradientTape&) = delete;
    GradientTape& operator=(const GradientTape&) = delete;

    // Leaf holding a copy of `m`. Trainable leaves participate in backward.
    Value leaf(RealMatrix m, bool needs_grad) {
        nodes_.push_back(Node{std::move(m), {}, false, needs_grad, {}});
        return Value{this, static_cast<int>(nodes_.size() - 1)};
    }

    Value constant(RealMatrix m) { return leaf(std::move(m), false); }

    // Binds an externally owned parameter tensor. Repeat binds of the same
    // tensor within one tape return the same leaf, and grad_for can retrieve
    // its gradient after backward().
    Value param(const RealMatrix& external) {
        auto it = bound_.find(&external);
        if (it != bound_.end()) return Value{this, it->second};
        Value v = leaf(external, true);
        bound_.emplace(&external, v.id);
        return v;
    }

    const RealMatrix& value(Value v) const { return nodes_[v.id].value; }

    bool has_grad(Value v) const { return nodes_[v.id].grad_set; }

    // Gradient of the last backward() target w.r.t. node `v`; zeros if the
    // node was not reached.
    RealMatrix grad(Value v) const {
        const Node& n = nodes_[v.id];
        if (!n.grad_set) return RealMatrix(n.value.rows(), n.value.cols());
        return n.grad;
    }

    // Gradient for an externally owned tensor previously passed to param().
    // Unbound or unreached tensors yield exact zeros.
    RealMatrix grad_for(const RealMatrix& external) const {
        auto it = bound_.find(&external);
        if (it == bound_.end()) return RealMatrix(external.rows(), external.cols());
        return grad(Value{const_cast<GradientTape*>(this), it->second});
    }

    // Accumulates loss gradients into every reachable node. `loss` must be a
    // 1x1 scalar node.
    void backward(Value loss) {
        Node& top = nodes_[loss.id];
        if (top.value.rows() != 1 || top.value.cols() != 1)
            throw ShapeError("backward target must be scalar, got " + top.value.shape_str());
        if (!std::isfinite(top.value(0, 0)))
            throw NumericError("backward target is not finite");
        accum(loss.id, RealMatrix(1, 1, Real(1)));
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[id];
            if (n.grad_set && n.needs_grad && n.backprop) n.backprop(*this, id);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

    // --- op construction API ---

    using Backprop = std::function<void(GradientTape&, int)>;

    Value make(RealMatrix value, std::initializer_list<Value> parents, Backprop backprop) {
        bool needs = false;
        for (const Value& p : parents) {
            if (p.tape != this) throw ArgumentError("mixing values from different tapes");
            needs = needs || nodes_[p.id].needs_grad;
        }
        nodes_.push_back(Node{std::move(value), {}, false, needs, needs ? std::move(backprop) : Backprop{}});
        return Value{this, static_cast<int>(nodes_.size() - 1)};
    }

    Value make(RealMatrix value, const std::vector<Value>& parents, Backprop backprop) {
        bool needs = false;
        for (const Value& p : parents) {
            if (p.tape != this) throw ArgumentError("mixing values from different tapes");
            needs = needs || nodes_[p.id].needs_grad;
        }
        nodes_.push_back(Node{std::move(value), {}, false, needs, needs ? std::move(backprop) : Backprop{}});
        return Value{this, static_cast<int>(nodes_.size() - 1)};
    }

    bool needs_grad(Value v) const { return nodes_[v.id].needs_grad; }

    // Adds `g` into the gradient buffer of node `id`.
    void accum(int id, const RealMatrix& g) {
        Node& n = nodes_[id];
        if (!n.needs_grad) return;
        if (!n.grad_set) {
            n.grad = RealMatrix(n.value.rows(), n.value.cols());
            n.grad_set = true;
        }
        if (!n.grad.same_shape(g))
            throw ShapeError("gradient shape " + g.shape_str() + " vs value " + n.grad.shape_str());
        for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
    }

    const RealMatrix& grad_ref(int id) const { return nodes_[id].grad; }

private:
    struct Node {
        RealMatrix value;
        RealMatrix grad;
        bool grad_set = false;
        bool needs_grad = false;
        Backprop backprop;
    };

    std::vector<Node> nodes_;
    std::unordered_map<const RealMatrix*, int> bound_;
};

// ---------------------------------------------------------------------------
// Differentiable ops. Each returns a new node; backward closures capture node
// ids only (the tape's node storage may reallocate as the graph grows).
// ---------------------------------------------------------------------------

namespace ops {

inline const RealMatrix& val(Value v) { return v.tape->value(v); }

inline Value add(Value a, Value b) {
    GradientTape& t = *a.tape;
    RealMatrix out = factguard::add(val(a), val(b));
    const int ia = a.id, ib = b.id;
    return t.make(std::move(out), {a, b}, [ia, ib](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        t.accum(ia, g);
        t.accum(ib, g);
    });
}

inline Value sub(Value a, Value b) {
    GradientTape& t = *a.tape;
    RealMatrix out = factguard::sub(val(a), val(b));
    const int ia = a.id, ib = b.id;
    return t.make(std::move(out), {a, b}, [ia, ib](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        t.accum(ia, g);
        t.accum(ib, factguard::scale(g, Real(-1)));
    });
}

inline Value mul(Value a, Value b) {
    GradientTape& t = *a.tape;
    if (!val(a).same_shape(val(b)))
        throw ShapeError("elementwise mul " + val(a).shape_str() + " vs " + val(b).shape_str());
    RealMatrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= val(b)[i];
    const int ia = a.id, ib = b.id;
    return t.make(std::move(out), {a, b}, [ia, ib](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        RealMatrix ga = g, gb = g;
        const RealMatrix& av = t.value(Value{&t, ia});
        const RealMatrix& bv = t.value(Value{&t, ib});
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] *= bv[i];
            gb[i] *= av[i];
        }
        t.accum(ia, ga);
        t.accum(ib, gb);
    });
}

inline Value scale(Value a, Real c) {
    GradientTape& t = *a.tape;
    RealMatrix out = factguard::scale(val(a), c);
    const int ia = a.id;
    return t.make(std::move(out), {a}, [ia, c](GradientTape& t, int self) {
        t.accum(ia, factguard::scale(t.grad_ref(self), c));
    });
}

// a * s where s is a 1x1 node (used for w_i * f_CtoR_i).
inline Value scale_by(Value a, Value s) {
    GradientTape& t = *a.tape;
    const RealMatrix& sv = val(s);
    if (sv.rows() != 1 || sv.cols() != 1) throw ShapeError("scale_by expects 1x1 scalar");
    RealMatrix out = factguard::scale(val(a), sv(0, 0));
    const int ia = a.id, is = s.id;
    return t.make(std::move(out), {a, s}, [ia, is](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        const RealMatrix& av = t.value(Value{&t, ia});
        const Real sval = t.value(Value{&t, is})(0, 0);
        t.accum(ia, factguard::scale(g, sval));
        RealMatrix gs(1, 1);
        for (std::size_t i = 0; i < g.size(); ++i) gs[0] += g[i] * av[i];
        t.accum(is, gs);
    });
}

inline Value matmul(Value a, Value b) {
    GradientTape& t = *a.tape;
    RealMatrix out = factguard::matmul(val(a), val(b));
    const int ia = a.id, ib = b.id;
    return t.make(std::move(out), {a, b}, [ia, ib](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        const RealMatrix& av = t.value(Value{&t, ia});
        const RealMatrix& bv = t.value(Value{&t, ib});
        t.accum(ia, factguard::matmul(g, factguard::transpose(bv)));
        t.accum(ib, factguard::matmul(factguard::transpose(av), g));
    });
}

inline Value transpose(Value a) {
    GradientTape& t = *a.tape;
    RealMatrix out = factguard::transpose(val(a));
    const int ia = a.id;
    return t.make(std::move(out), {a}, [ia](GradientTape& t, int self) {
        t.accum(ia, factguard::transpose(t.grad_ref(self)));
    });
}

// Adds row vector v [1xC] to every row of a [RxC].
inline Value add_rowvec(Value a, Value v) {
    GradientTape& t = *a.tape;
    const RealMatrix& av = val(a);
    const RealMatrix& vv = val(v);
    if (vv.rows() != 1 || vv.cols() != av.cols())
        throw ShapeError("add_rowvec " + av.shape_str() + " + " + vv.shape_str());
    RealMatrix out = av;
    for (std::size_t r = 0; r < out.rows(); ++r)
        for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += vv(0, c);
    const int ia = a.id, iv = v.id;
    return t.make(std::move(out), {a, v}, [ia, iv](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        t.accum(ia, g);
        RealMatrix gv(1, g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) gv(0, c) += g(r, c);
        t.accum(iv, gv);
    });
}

// Row-stable softmax over each row. Backward: s ⊙ (g − <g,s>) per row.
inline Value softmax_rows(Value a) {
    GradientTape& t = *a.tape;
    const RealMatrix& av = val(a);
    if (av.size() == 0) throw ArgumentError("softmax of empty matrix");
    RealMatrix out(av.rows(), av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r) {
        Real m = av(r, 0);
        for (std::size_t c = 1; c < av.cols(); ++c) m = std::max(m, av(r, c));
        Real sum = 0;
        for (std::size_t c = 0; c < av.cols(); ++c) {
            out(r, c) = std::exp(av(r, c) - m);
            sum += out(r, c);
        }
        for (std::size_t c = 0; c < av.cols(); ++c) out(r, c) /= sum;
    }
    const int ia = a.id;
    return t.make(std::move(out), {a}, [ia](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        const RealMatrix& s = t.value(Value{&t, self});
        RealMatrix ga(g.rows(), g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
            Real inner = 0;
            for (std::size_t c = 0; c < g.cols(); ++c) inner += g(r, c) * s(r, c);
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = s(r, c) * (g(r, c) - inner);
        }
        t.accum(ia, ga);
    });
}

inline Value sigmoid(Value a) {
    GradientTape& t = *a.tape;
    RealMatrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Real x = out[i];
        out[i] = x >= 0 ? Real(1) / (Real(1) + std::exp(-x))
                        : std::exp(x) / (Real(1) + std::exp(x));
    }
    const int ia = a.id;
    return t.make(std::move(out), {a}, [ia](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        const RealMatrix& s = t.value(Value{&t, self});
        RealMatrix ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * s[i] * (Real(1) - s[i]);
        t.accum(ia, ga);
    });
}

inline Value tanh_act(Value a) {
    GradientTape& t = *a.tape;
    RealMatrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    const int ia = a.id;
    return t.make(std::move(out), {a}, [ia](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        const RealMatrix& y = t.value(Value{&t, self});
        RealMatrix ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = g[i] * (Real(1) - y[i] * y[i]);
        t.accum(ia, ga);
    });
}

inline Value relu(Value a) {
    GradientTape& t = *a.tape;
    RealMatrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = out[i] > 0 ? out[i] : Real(0);
    const int ia = a.id;
    return t.make(std::move(out), {a}, [ia](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        const RealMatrix& x = t.value(Value{&t, ia});
        RealMatrix ga(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] = x[i] > 0 ? g[i] : Real(0);
        t.accum(ia, ga);
    });
}

// Exact gelu: x * Phi(x); derivative Phi(x) + x phi(x).
inline Value gelu(Value a) {
    GradientTape& t = *a.tape;
    RealMatrix out = val(a);
    for (std::size_t i = 0; i < out.size(); ++i) {
        const Real x = out[i];
        out[i] = x * Real(0.5) * (Real(1) + std::erf(x / std::sqrt(Real(2))));
    }
    const int ia = a.id;
    return t.make(std::move(out), {a}, [ia](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        const RealMatrix& x = t.value(Value{&t, ia});
        RealMatrix ga(g.rows(), g.cols());
        const Real inv_sqrt2pi = Real(0.3989422804014326779);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const Real cdf = Real(0.5) * (Real(1) + std::erf(x[i] / std::sqrt(Real(2))));
            const Real pdf = inv_sqrt2pi * std::exp(Real(-0.5) * x[i] * x[i]);
            ga[i] = g[i] * (cdf + x[i] * pdf);
        }
        t.accum(ia, ga);
    });
}

// Column-wise mean over rows: [TxD] -> [1xD].
inline Value mean_rows(Value a) {
    GradientTape& t = *a.tape;
    const RealMatrix& av = val(a);
    if (av.rows() == 0) throw ArgumentError("mean over zero rows");
    RealMatrix out(1, av.cols());
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < av.cols(); ++c) out(0, c) += av(r, c);
    for (std::size_t c = 0; c < av.cols(); ++c) out(0, c) /= Real(av.rows());
    const int ia = a.id;
    const std::size_t rows = av.rows();
    return t.make(std::move(out), {a}, [ia, rows](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        RealMatrix ga(rows, g.cols());
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < g.cols(); ++c) ga(r, c) = g(0, c) / Real(rows);
        t.accum(ia, ga);
    });
}

inline Value sum_all(Value a) {
    GradientTape& t = *a.tape;
    const RealMatrix& av = val(a);
    Real s = 0;
    for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
    const int ia = a.id;
    const std::size_t rows = av.rows(), cols = av.cols();
    return t.make(RealMatrix(1, 1, s), {a}, [ia, rows, cols](GradientTape& t, int self) {
        const Real g = t.grad_ref(self)(0, 0);
        t.accum(ia, RealMatrix(rows, cols, g));
    });
}

inline Value concat_cols(const std::vector<Value>& parts) {
    if (parts.empty()) throw ArgumentError("concat of zero parts");
    GradientTape& t = *parts[0].tape;
    const std::size_t rows = val(parts[0]).rows();
    std::size_t cols = 0;
    for (const Value& p : parts) {
        if (val(p).rows() != rows) throw ShapeError("concat_cols row mismatch");
        cols += val(p).cols();
    }
    RealMatrix out(rows, cols);
    std::size_t off = 0;
    std::vector<int> ids;
    std::vector<std::size_t> widths;
    for (const Value& p : parts) {
        const RealMatrix& pv = val(p);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < pv.cols(); ++c) out(r, off + c) = pv(r, c);
        ids.push_back(p.id);
        widths.push_back(pv.cols());
        off += pv.cols();
    }
    return t.make(std::move(out), parts, [ids, widths, rows](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        std::size_t off = 0;
        for (std::size_t k = 0; k < ids.size(); ++k) {
            RealMatrix gp(rows, widths[k]);
            for (std::size_t r = 0; r < rows; ++r)
                for (std::size_t c = 0; c < widths[k]; ++c) gp(r, c) = g(r, off + c);
            t.accum(ids[k], gp);
            off += widths[k];
        }
    });
}

inline Value slice_cols(Value a, std::size_t first, std::size_t count) {
    GradientTape& t = *a.tape;
    const RealMatrix& av = val(a);
    if (first + count > av.cols()) throw ShapeError("slice_cols out of range");
    RealMatrix out(av.rows(), count);
    for (std::size_t r = 0; r < av.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) out(r, c) = av(r, first + c);
    const int ia = a.id;
    const std::size_t rows = av.rows(), cols = av.cols();
    return t.make(std::move(out), {a}, [ia, first, count, rows, cols](GradientTape& t, int self) {
        const RealMatrix& g = t.grad_ref(self);
        RealMatrix ga(rows, cols);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < count; ++c) ga(r, first + c) = g(r, c);
        t.accum(ia, ga);
    });
}

// Embedding lookup: out[t] = table[ids[t]]. Scatter-add on backward.
inline Value gather_rows(Value table, std::vector<std::size_t> ids) {
    GradientTape& t = *table.tape;
    const RealMatrix& tv = val(table);
    RealMatrix out(ids.size(), tv.cols());
    for (std::size_t r = 0; r < ids.size(); ++r) {
        if (ids[r] >= tv.rows()) throw ArgumentError("gather_rows id out of range");
        for (std::size_t c = 0; c < tv.cols(); ++c) out(r, c) = tv(ids[r], c);
    }
    const int it = table.id;
    const std::size_t trows = tv.rows(), tcols = tv.cols();
    return t.make(std::move(out), {table},
                  [it, ids = std::move(ids), trows, tcols](GradientTape& t, int self) {
                      const RealMatrix& g = t.grad_ref(self);
                      RealMatrix gt(trows, tcols);
                      for (std::size_t r = 0; r < ids.size(); ++r)
                          for (std::size_t c = 0; c < tcols; ++c) gt(ids[r], c) += g(r, c);
                      t.accum(it, gt);
                  });
}

// Per-row layer normalization with learned gain/bias [1xD].
inline Value layer_norm_rows(Value x, Value gain, Value bias, Real eps = Real(1e-5)) {
    GradientTape& t = *x.tape;
    const RealMatrix& xv = val(x);
    const RealMatrix& gv = val(gain);
    const RealMatrix& bv = val(bias);
    const std::size_t R = xv.rows(), C = xv.cols();
    if (gv.rows() != 1 || gv.cols() != C || bv.rows() != 1 || bv.cols() != C)
        throw ShapeError("layer_norm gain/bias must be [1x" + std::to_string(C) + "]");
    RealMatrix out(R, C);
    RealMatrix xhat(R, C);
    std::vector<Real> inv_std(R);
    for (std::size_t r = 0; r < R; ++r) {
        Real mean = 0;
        for (std::size_t c = 0; c < C; ++c) mean += xv(r, c);
        mean /= Real(C);
        Real var = 0;
        for (std::size_t c = 0; c < C; ++c) {
            const Real d = xv(r, c) - mean;
            var += d * d;
        }
        var /= Real(C);
        inv_std[r] = Real(1) / std::sqrt(var + eps);
        for (std::size_t c = 0; c < C; ++c) {
            xhat(r, c) = (xv(r, c) - mean) * inv_std[r];
            out(r, c) = gv(0, c) * xhat(r, c) + bv(0, c);
        }
    }
    const int ix = x.id, ig = gain.id, ib = bias.id;
    return t.make(std::move(out), {x, gain, bias},
                  [ix, ig, ib, xhat = std::move(xhat), inv_std = std::move(inv_std), R,
                   C](GradientTape& t, int self) {
                      const RealMatrix& g = t.grad_ref(self);
                      const RealMatrix& gv = t.value(Value{&t, ig});
                      RealMatrix gx(R, C), gg(1, C), gb(1, C);
                      for (std::size_t r = 0; r < R; ++r) {
                          Real sum_gy = 0, sum_gy_xhat = 0;
                          for (std::size_t c = 0; c < C; ++c) {
                              const Real gy = g(r, c) * gv(0, c);
                              sum_gy += gy;
                              sum_gy_xhat += gy * xhat(r, c);
                              gg(0, c) += g(r, c) * xhat(r, c);
                              gb(0, c) += g(r, c);
                          }
                          for (std::size_t c = 0; c < C; ++c) {
                              const Real gy = g(r, c) * gv(0, c);
                              gx(r, c) = inv_std[r] *
                                         (gy - sum_gy / Real(C) - xhat(r, c) * sum_gy_xhat / Real(C));
                          }
                      }
                      t.accum(ix, gx);
                      t.accum(ig, gg);
                      t.accum(ib, gb);
                  });
}

// Binary cross entropy against a (possibly soft) constant target. The
// prediction is clamped to [1e-7, 1-1e-7]; outside that band the value is
// constant so the gradient is exactly zero, matching finite differences.
inline Value bce_loss(Value p, Real target) {
    if (target < Real(0) || target > Real(1))
        throw ArgumentError("bce target must lie in [0,1]");
    GradientTape& t = *p.tape;
    const RealMatrix& pv = val(p);
    if (pv.rows() != 1 || pv.cols() != 1) throw ShapeError("bce expects a 1x1 probability");
    const Real eps = Real(1e-7);
    const Real raw = pv(0, 0);
    const Real pc = std::min(std::max(raw, eps), Real(1) - eps);
    const Real loss = -(target * std::log(pc) + (Real(1) - target) * std::log(Real(1) - pc));
    const int ip = p.id;
    const bool inside = raw > eps && raw < Real(1) - eps;
    return t.make(RealMatrix(1, 1, loss), {p}, [ip, target, pc, inside](GradientTape& t, int self) {
        if (!inside) return;
        const Real g = t.grad_ref(self)(0, 0);
        const Real d = -target / pc + (Real(1) - target) / (Real(1) - pc);
        t.accum(ip, RealMatrix(1, 1, g * d));
    });
}

// Multiclass cross entropy of a [1xK] logit row against a class index.
inline Value cross_entropy_logits(Value logits, std::size_t cls) {
    GradientTape& t = *logits.tape;
    const RealMatrix& zv = val(logits);
    if (zv.rows() != 1 || zv.cols() < 2) throw ShapeError("cross_entropy expects [1xK], K>=2");
    if (cls >= zv.cols()) throw ArgumentError("class index out of range");
    Real m = zv(0, 0);
    for (std::size_t c = 1; c < zv.cols(); ++c) m = std::max(m, zv(0, c));
    Real sum = 0;
    for (std::size_t c = 0; c < zv.cols(); ++c) sum += std::exp(zv(0, c) - m);
    const Real lse = m + std::log(sum);
    const Real loss = lse - zv(0, cls);
    const int iz = logits.id;
    return t.make(RealMatrix(1, 1, loss), {logits}, [iz, cls](GradientTape& t, int self) {
        const Real g = t.grad_ref(self)(0, 0);
        const RealMatrix& z = t.value(Value{&t, iz});
        Real m = z(0, 0);
        for (std::size_t c = 1; c < z.cols(); ++c) m = std::max(m, z(0, c));
        Real sum = 0;
        RealMatrix gz(1, z.cols());
        for (std::size_t c = 0; c < z.cols(); ++c) {
            gz(0, c) = std::exp(z(0, c) - m);
            sum += gz(0, c);
        }
        for (std::size_t c = 0; c < z.cols(); ++c) {
            gz(0, c) = g * (gz(0, c) / sum - (c == cls ? Real(1) : Real(0)));
        }
        t.accum(iz, gz);
    });
}

// Mean squared error over all entries of two same-shaped matrices.
inline Value mse_loss(Value a, Value b) {
    GradientTape& t = *a.tape;
    const RealMatrix& av = val(a);
    const RealMatrix& bv = val(b);
    if (!av.same_shape(bv))
        throw ShapeError("mse " + av.shape_str() + " vs " + bv.shape_str());
    Real s = 0;
    for (std::size_t i = 0; i < av.size(); ++i) {
        const Real d = av[i] - bv[i];
        s += d * d;
    }
    const Real n = Real(av.size());
    const int ia = a.id, ib = b.id;
    return t.make(RealMatrix(1, 1, s / n), {a, b}, [ia, ib, n](GradientTape& t, int self) {
        const Real g = t.grad_ref(self)(0, 0);
        const RealMatrix& av = t.value(Value{&t, ia});
        const RealMatrix& bv = t.value(Value{&t, ib});
        RealMatrix ga(av.rows(), av.cols());
        for (std::size_t i = 0; i < av.size(); ++i) ga[i] = g * Real(2) * (av[i] - bv[i]) / n;
        t.accum(ia, ga);
        t.accum(ib, factguard::scale(ga, Real(-1)));
    });
}

} // namespace ops

} // namespace factguard
