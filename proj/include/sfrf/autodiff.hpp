#pragma once

// Reverse-mode automatic differentiation over Tensor values. The op set
// is closed: add/sub/mul/div, exp, log, abs, sigmoid, tanh, softmax,
// concat, slice, reshape, reductions, conv2d, bilinear sampling, resize,
// dropout, fft2/ifft2 and the complex accessors, plus the global
// correlation map. Higher-level operators are composed from these.
//
// Graphs are built eagerly; backward() walks the graph once in reverse
// topological order, so repeated runs over the same graph are
// bit-identical.

#include <algorithm>
#include <functional>
#include <memory>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "sfrf/fft.hpp"
#include "sfrf/rng.hpp"
#include "sfrf/tensor.hpp"

namespace sfrf::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // same shape, zero until backward touches it
    bool requires_grad = false;
    std::vector<Var> parents;
    // Reads this node's grad and accumulates into the parents' grads.
    std::function<void(Node&)> backprop;

    explicit Node(Tensor v, bool rg = false)
        : value(std::move(v)), grad(value.shape), requires_grad(rg) {}

    void zero_grad() { grad.fill(0.0); }
};

inline Var constant(Tensor t) { return std::make_shared<Node>(std::move(t), false); }
inline Var constant_scalar(double v) { return constant(Tensor({1}, {v})); }
inline Var param(Tensor t) { return std::make_shared<Node>(std::move(t), true); }

inline Var make_node(Tensor value, std::vector<Var> parents,
                     std::function<void(Node&)> backprop) {
    bool rg = false;
    for (const auto& p : parents) rg = rg || p->requires_grad;
    auto n = std::make_shared<Node>(std::move(value), rg);
    if (rg) {
        n->parents = std::move(parents);
        n->backprop = std::move(backprop);
    }
    return n;
}

// ---------------------------------------------------------------------------
// Graph traversal

inline void topo_order(const Var& root, std::vector<Node*>& order) {
    // iterative postorder DFS; each node visited exactly once
    std::vector<Node*> work;
    std::vector<Node*> result;
    std::unordered_map<const Node*, int> state;  // 0 unseen, 1 open, 2 done
    work.push_back(root.get());
    while (!work.empty()) {
        Node* n = work.back();
        int& st = state[n];
        if (st == 0) {
            st = 1;
            for (const auto& p : n->parents)
                if (p->requires_grad && state[p.get()] == 0) work.push_back(p.get());
        } else {
            work.pop_back();
            if (st == 1) {
                st = 2;
                result.push_back(n);
            }
        }
    }
    order = std::move(result);
}

inline void zero_all_grads(const Var& root) {
    std::vector<Node*> order;
    topo_order(root, order);
    for (Node* n : order) n->zero_grad();
}

inline void backward(const Var& root) {
    if (root->value.numel() != 1)
        throw std::invalid_argument("backward root must be scalar, got shape " +
                                    shape_str(root->value.shape));
    std::vector<Node*> order;
    topo_order(root, order);
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop) n->backprop(*n);
    }
}

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting

namespace detail {

template <class FwdFn, class BwdFn>
Var binary_op(const Var& a, const Var& b, FwdFn fwd, BwdFn bwd) {
    const Shape out_shape = broadcast_shape(a->value.shape, b->value.shape);
    const std::size_t r = out_shape.size();
    const auto sa = broadcast_strides(a->value.shape, r);
    const auto sb = broadcast_strides(b->value.shape, r);
    const std::size_t n = shape_numel(out_shape);

    Tensor out(out_shape);
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = fwd(a->value[ia], b->value[ib]);
        for (std::size_t ax = r; ax-- > 0;) {
            if (++idx[ax] < out_shape[ax]) {
                ia += sa[ax];
                ib += sb[ax];
                break;
            }
            idx[ax] = 0;
            ia -= sa[ax] * (out_shape[ax] - 1);
            ib -= sb[ax] * (out_shape[ax] - 1);
        }
    }

    auto ap = a, bp = b;
    return make_node(std::move(out), {a, b},
                     [ap, bp, out_shape, sa, sb, bwd](Node& self) {
                         const std::size_t r2 = out_shape.size();
                         const std::size_t n2 = shape_numel(out_shape);
                         std::vector<std::size_t> ix(r2, 0);
                         std::size_t ja = 0, jb = 0;
                         for (std::size_t i = 0; i < n2; ++i) {
                             double ga, gb;
                             bwd(ap->value[ja], bp->value[jb], self.value[i],
                                 self.grad[i], ga, gb);
                             if (ap->requires_grad) ap->grad[ja] += ga;
                             if (bp->requires_grad) bp->grad[jb] += gb;
                             for (std::size_t ax = r2; ax-- > 0;) {
                                 if (++ix[ax] < out_shape[ax]) {
                                     ja += sa[ax];
                                     jb += sb[ax];
                                     break;
                                 }
                                 ix[ax] = 0;
                                 ja -= sa[ax] * (out_shape[ax] - 1);
                                 jb -= sb[ax] * (out_shape[ax] - 1);
                             }
                         }
                     });
}

template <class FwdFn, class GradFn>
Var unary_op(const Var& a, FwdFn fwd, GradFn dfn) {
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] = fwd(a->value[i]);
    auto ap = a;
    return make_node(std::move(out), {a}, [ap, dfn](Node& self) {
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            ap->grad[i] += self.grad[i] * dfn(ap->value[i], self.value[i]);
    });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x + y; },
        [](double, double, double, double g, double& ga, double& gb) {
            ga = g;
            gb = g;
        });
}
inline Var sub(const Var& a, const Var& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x - y; },
        [](double, double, double, double g, double& ga, double& gb) {
            ga = g;
            gb = -g;
        });
}
inline Var mul(const Var& a, const Var& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x * y; },
        [](double x, double y, double, double g, double& ga, double& gb) {
            ga = g * y;
            gb = g * x;
        });
}
inline Var div(const Var& a, const Var& b) {
    return detail::binary_op(
        a, b, [](double x, double y) { return x / y; },
        [](double x, double y, double, double g, double& ga, double& gb) {
            ga = g / y;
            gb = -g * x / (y * y);
        });
}

inline Var add_scalar(const Var& a, double s) {
    return detail::unary_op(
        a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}
inline Var mul_scalar(const Var& a, double s) {
    return detail::unary_op(
        a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}
inline Var neg(const Var& a) { return mul_scalar(a, -1.0); }

inline Var exp_(const Var& a) {
    return detail::unary_op(
        a, [](double x) { return std::exp(x); },
        [](double, double y) { return y; });
}
inline Var log_(const Var& a) {
    return detail::unary_op(
        a, [](double x) { return std::log(x); },
        [](double x, double) { return 1.0 / x; });
}
inline Var abs_(const Var& a) {
    return detail::unary_op(
        a, [](double x) { return std::abs(x); },
        [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}
inline Var sigmoid(const Var& a) {
    return detail::unary_op(
        a,
        [](double x) {
            // saturating form, no overflow for large |x|
            return x >= 0 ? 1.0 / (1.0 + std::exp(-x))
                          : std::exp(x) / (1.0 + std::exp(x));
        },
        [](double, double y) { return y * (1.0 - y); });
}
inline Var tanh_(const Var& a) {
    return detail::unary_op(
        a, [](double x) { return std::tanh(x); },
        [](double, double y) { return 1.0 - y * y; });
}
inline Var clamp01(const Var& a) {
    return detail::unary_op(
        a, [](double x) { return std::min(1.0, std::max(0.0, x)); },
        [](double x, double) { return (x > 0.0 && x < 1.0) ? 1.0 : 0.0; });
}

// sqrt composed from the closed op set; callers keep x + eps > 0.
inline Var sqrt_eps(const Var& x, double eps) {
    return exp_(mul_scalar(log_(add_scalar(x, eps)), 0.5));
}

inline Var softplus(const Var& x) { return log_(add_scalar(exp_(x), 1.0)); }

// ---------------------------------------------------------------------------
// Shape ops

inline Var reshape(const Var& a, Shape s) {
    if (shape_numel(s) != a->value.numel())
        throw std::invalid_argument("reshape numel mismatch " + shape_str(a->value.shape) +
                                    " -> " + shape_str(s));
    Tensor out(std::move(s), a->value.data);
    auto ap = a;
    return make_node(std::move(out), {a}, [ap](Node& self) {
        for (std::size_t i = 0; i < self.grad.numel(); ++i) ap->grad[i] += self.grad[i];
    });
}

inline Var concat(const std::vector<Var>& parts, std::size_t axis) {
    if (parts.empty()) throw std::invalid_argument("concat of zero parts");
    const Shape& s0 = parts[0]->value.shape;
    if (axis >= s0.size()) throw std::invalid_argument("concat axis out of range");
    Shape out_shape = s0;
    out_shape[axis] = 0;
    for (const auto& p : parts) {
        const Shape& s = p->value.shape;
        if (s.size() != s0.size()) throw std::invalid_argument("concat rank mismatch");
        for (std::size_t i = 0; i < s.size(); ++i)
            if (i != axis && s[i] != s0[i])
                throw std::invalid_argument("concat extent mismatch on axis " +
                                            std::to_string(i));
        out_shape[axis] += s[axis];
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= out_shape[i];
    for (std::size_t i = axis + 1; i < out_shape.size(); ++i) inner *= out_shape[i];

    Tensor out(out_shape);
    std::size_t off = 0;
    for (const auto& p : parts) {
        const std::size_t ext = p->value.shape[axis];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t e = 0; e < ext; ++e)
                for (std::size_t i = 0; i < inner; ++i)
                    out[(o * out_shape[axis] + off + e) * inner + i] =
                        p->value[(o * ext + e) * inner + i];
        off += ext;
    }
    auto parts_copy = parts;
    const std::size_t total_axis = out_shape[axis];
    return make_node(std::move(out), parts,
                     [parts_copy, axis, outer, inner, total_axis](Node& self) {
                         std::size_t off2 = 0;
                         for (const auto& p : parts_copy) {
                             const std::size_t ext = p->value.shape[axis];
                             if (p->requires_grad)
                                 for (std::size_t o = 0; o < outer; ++o)
                                     for (std::size_t e = 0; e < ext; ++e)
                                         for (std::size_t i = 0; i < inner; ++i)
                                             p->grad[(o * ext + e) * inner + i] +=
                                                 self.grad[(o * total_axis + off2 + e) *
                                                               inner +
                                                           i];
                             off2 += ext;
                         }
                     });
}

inline Var slice(const Var& a, const std::vector<std::size_t>& offsets,
                 const Shape& extents) {
    const Shape& s = a->value.shape;
    if (offsets.size() != s.size() || extents.size() != s.size())
        throw std::invalid_argument("slice rank mismatch");
    for (std::size_t i = 0; i < s.size(); ++i)
        if (offsets[i] + extents[i] > s[i])
            throw std::invalid_argument("slice out of bounds on axis " + std::to_string(i));

    const std::size_t r = s.size();
    std::vector<std::size_t> in_strides(r, 1);
    for (std::size_t i = r - 1; i-- > 0;) in_strides[i] = in_strides[i + 1] * s[i + 1];

    Tensor out(extents);
    const std::size_t n = out.numel();
    std::vector<std::size_t> idx(r, 0);
    std::vector<std::size_t> src_index(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t src = 0;
        for (std::size_t ax = 0; ax < r; ++ax) src += (offsets[ax] + idx[ax]) * in_strides[ax];
        src_index[i] = src;
        out[i] = a->value[src];
        for (std::size_t ax = r; ax-- > 0;) {
            if (++idx[ax] < extents[ax]) break;
            idx[ax] = 0;
        }
    }
    auto ap = a;
    return make_node(std::move(out), {a}, [ap, src_index](Node& self) {
        for (std::size_t i = 0; i < src_index.size(); ++i)
            ap->grad[src_index[i]] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions

inline Var sum_all(const Var& a) {
    Tensor out({1}, {a->value.sum()});
    auto ap = a;
    return make_node(std::move(out), {a}, [ap](Node& self) {
        const double g = self.grad[0];
        for (std::size_t i = 0; i < ap->grad.numel(); ++i) ap->grad[i] += g;
    });
}

inline Var mean_all(const Var& a) {
    const double inv = 1.0 / static_cast<double>(a->value.numel());
    Tensor out({1}, {a->value.sum() * inv});
    auto ap = a;
    return make_node(std::move(out), {a}, [ap, inv](Node& self) {
        const double g = self.grad[0] * inv;
        for (std::size_t i = 0; i < ap->grad.numel(); ++i) ap->grad[i] += g;
    });
}

// Reduce one axis, keeping it with extent 1 so results broadcast back.
inline Var sum_axis(const Var& a, std::size_t axis, bool mean = false) {
    const Shape& s = a->value.shape;
    if (axis >= s.size()) throw std::invalid_argument("sum_axis axis out of range");
    Shape out_shape = s;
    out_shape[axis] = 1;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t ext = s[axis];
    const double scale = mean ? 1.0 / static_cast<double>(ext) : 1.0;

    Tensor out(out_shape);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            double acc = 0.0;
            for (std::size_t e = 0; e < ext; ++e) acc += a->value[(o * ext + e) * inner + i];
            out[o * inner + i] = acc * scale;
        }
    auto ap = a;
    return make_node(std::move(out), {a}, [ap, outer, inner, ext, scale](Node& self) {
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                const double g = self.grad[o * inner + i] * scale;
                for (std::size_t e = 0; e < ext; ++e)
                    ap->grad[(o * ext + e) * inner + i] += g;
            }
    });
}

inline Var mean_axis(const Var& a, std::size_t axis) { return sum_axis(a, axis, true); }

inline Var softmax(const Var& a, std::size_t axis) {
    const Shape& s = a->value.shape;
    if (axis >= s.size()) throw std::invalid_argument("softmax axis out of range");
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    const std::size_t ext = s[axis];

    Tensor out(s);
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t i = 0; i < inner; ++i) {
            double mx = -1e300;
            for (std::size_t e = 0; e < ext; ++e)
                mx = std::max(mx, a->value[(o * ext + e) * inner + i]);
            double denom = 0.0;
            for (std::size_t e = 0; e < ext; ++e) {
                const double v = std::exp(a->value[(o * ext + e) * inner + i] - mx);
                out[(o * ext + e) * inner + i] = v;
                denom += v;
            }
            for (std::size_t e = 0; e < ext; ++e) out[(o * ext + e) * inner + i] /= denom;
        }
    auto ap = a;
    return make_node(std::move(out), {a}, [ap, outer, inner, ext](Node& self) {
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < inner; ++i) {
                double dot = 0.0;
                for (std::size_t e = 0; e < ext; ++e) {
                    const std::size_t k = (o * ext + e) * inner + i;
                    dot += self.grad[k] * self.value[k];
                }
                for (std::size_t e = 0; e < ext; ++e) {
                    const std::size_t k = (o * ext + e) * inner + i;
                    ap->grad[k] += self.value[k] * (self.grad[k] - dot);
                }
            }
    });
}

// ---------------------------------------------------------------------------
// Dropout (inverted; mask drawn once at graph build time)

inline Var dropout(const Var& a, double rate, Rng& rng) {
    if (rate < 0.0 || rate >= 1.0)
        throw std::invalid_argument("dropout rate must be in [0,1)");
    if (rate == 0.0) return a;
    const double scale = 1.0 / (1.0 - rate);
    auto mask = std::make_shared<std::vector<double>>(a->value.numel());
    Tensor out(a->value.shape);
    for (std::size_t i = 0; i < out.numel(); ++i) {
        const double m = rng.uniform01() < rate ? 0.0 : scale;
        (*mask)[i] = m;
        out[i] = a->value[i] * m;
    }
    auto ap = a;
    return make_node(std::move(out), {a}, [ap, mask](Node& self) {
        for (std::size_t i = 0; i < self.grad.numel(); ++i)
            ap->grad[i] += self.grad[i] * (*mask)[i];
    });
}

}  // namespace sfrf::ad
