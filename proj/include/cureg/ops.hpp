#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "cureg/tensor.hpp"

// Differentiable operators. Binary elementwise operators broadcast with numpy rules: shapes are
// aligned at the trailing dimension and a dimension of size 1 (or a missing leading dimension)
// stretches to match the other operand.

namespace cureg::ad {

namespace detail {

struct BroadcastPlan {
    Shape out;
    std::vector<std::size_t> stride_a, stride_b;  // per output dimension, 0 where broadcast
    bool same = false;
};

inline std::vector<std::size_t> row_major_strides(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

inline BroadcastPlan plan_broadcast(const Shape& a, const Shape& b) {
    BroadcastPlan p;
    if (a == b) {
        p.out = a;
        p.same = true;
        return p;
    }
    const std::size_t r = std::max(a.size(), b.size());
    p.out.assign(r, 1);
    p.stride_a.assign(r, 0);
    p.stride_b.assign(r, 0);
    const auto sa = row_major_strides(a), sb = row_major_strides(b);
    for (std::size_t k = 0; k < r; ++k) {
        const std::size_t d = r - 1 - k;
        const std::size_t da = k < a.size() ? a[a.size() - 1 - k] : 1;
        const std::size_t db = k < b.size() ? b[b.size() - 1 - k] : 1;
        if (da != db && da != 1 && db != 1)
            throw ShapeError("broadcast: incompatible shapes " + to_string(a) + " and " + to_string(b));
        p.out[d] = std::max(da, db);
        if (da != 1) p.stride_a[d] = sa[a.size() - 1 - k];
        if (db != 1) p.stride_b[d] = sb[b.size() - 1 - k];
    }
    return p;
}

template <class F>
void for_each_broadcast(const BroadcastPlan& p, F&& f) {
    const std::size_t n = numel(p.out);
    if (p.same) {
        for (std::size_t i = 0; i < n; ++i) f(i, i, i);
        return;
    }
    const std::size_t r = p.out.size();
    std::vector<std::size_t> idx(r, 0);
    std::size_t ia = 0, ib = 0;
    for (std::size_t i = 0; i < n; ++i) {
        f(i, ia, ib);
        for (std::size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += p.stride_a[d];
            ib += p.stride_b[d];
            if (idx[d] < p.out[d]) break;
            ia -= p.stride_a[d] * p.out[d];
            ib -= p.stride_b[d] * p.out[d];
            idx[d] = 0;
        }
    }
}

// dOut -> (dA, dB) partials at one element, given a, b and the output value.
template <class T, class Fwd, class Bwd>
Tensor<T> binary_op(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, Bwd bwd) {
    const BroadcastPlan plan = plan_broadcast(a.shape(), b.shape());
    std::vector<T> out(numel(plan.out));
    const auto av = a.values(), bv = b.values();
    for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) { out[i] = fwd(av[ia], bv[ib]); });
    return make_result<T>(plan.out, std::move(out), {a, b}, name, [plan, bwd](Node<T>& n) {
        Node<T>& na = *n.parents[0];
        Node<T>& nb = *n.parents[1];
        for_each_broadcast(plan, [&](std::size_t i, std::size_t ia, std::size_t ib) {
            const auto [da, db] = bwd(na.value[ia], nb.value[ib], n.value[i]);
            if (na.requires_grad) na.grad[ia] += n.grad[i] * da;
            if (nb.requires_grad) nb.grad[ib] += n.grad[i] * db;
        });
    });
}

template <class T, class Fwd, class Bwd>
Tensor<T> unary_op(const Tensor<T>& x, const char* name, Fwd fwd, Bwd bwd) {
    std::vector<T> out(x.numel());
    const auto xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(xv[i]);
    return make_result<T>(x.shape(), std::move(out), {x}, name, [bwd](Node<T>& n) {
        Node<T>& nx = *n.parents[0];
        for (std::size_t i = 0; i < n.value.size(); ++i) nx.grad[i] += n.grad[i] * bwd(nx.value[i], n.value[i]);
    });
}

template <class T>
T sigmoid(T x) {
    if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
    const T e = std::exp(x);
    return e / (T(1) + e);
}

// Splits a shape around `axis` into (outer, extent, inner) block sizes.
inline std::array<std::size_t, 3> axis_blocks(const Shape& s, std::size_t axis, const char* op) {
    if (axis >= s.size())
        throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " invalid for shape " + to_string(s));
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
    for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
    return {outer, s[axis], inner};
}

}  // namespace detail

// ---- elementwise -------------------------------------------------------------------------------

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "add", [](T x, T y) { return x + y; }, [](T, T, T) { return std::pair<T, T>{T(1), T(1)}; });
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "sub", [](T x, T y) { return x - y; }, [](T, T, T) { return std::pair<T, T>{T(1), T(-1)}; });
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "mul", [](T x, T y) { return x * y; }, [](T x, T y, T) { return std::pair<T, T>{y, x}; });
}

template <class T>
Tensor<T> div(const Tensor<T>& a, const Tensor<T>& b) {
    return detail::binary_op(
        a, b, "div", [](T x, T y) { return x / y; },
        [](T, T y, T out) { return std::pair<T, T>{T(1) / y, -out / y}; });
}

template <class T>
Tensor<T> scale(const Tensor<T>& x, T c) {
    return detail::unary_op(x, "scale", [c](T v) { return c * v; }, [c](T, T) { return c; });
}

/// x + c for a constant c.
template <class T>
Tensor<T> shift(const Tensor<T>& x, T c) {
    return detail::unary_op(x, "shift", [c](T v) { return v + c; }, [](T, T) { return T(1); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op(
        x, "relu", [](T v) { return v > T(0) ? v : T(0); }, [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

/// x * sigmoid(x); derivative sigmoid(x) * (1 + x * (1 - sigmoid(x))).
template <class T>
Tensor<T> silu(const Tensor<T>& x) {
    return detail::unary_op(
        x, "silu", [](T v) { return v * detail::sigmoid(v); },
        [](T v, T) {
            const T s = detail::sigmoid(v);
            return s * (T(1) + v * (T(1) - s));
        });
}

template <class T>
Tensor<T> softplus(const Tensor<T>& x) {
    return detail::unary_op(
        x, "softplus",
        [](T v) { return v > T(0) ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
        [](T v, T) { return detail::sigmoid(v); });
}

template <class T>
Tensor<T> abs(const Tensor<T>& x) {
    return add(relu(x), relu(scale(x, T(-1))));
}

// ---- linear algebra -----------------------------------------------------------------------------

/// [m x k] * [k x n] -> [m x n]
template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
        throw ShapeError("matmul: shapes " + to_string(a.shape()) + " and " + to_string(b.shape()) + " do not chain");
    const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
    std::vector<T> out(m * n, T(0));
    const auto av = a.values(), bv = b.values();
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
            const T aip = av[i * k + p];
            const T* brow = bv.data() + p * n;
            T* orow = out.data() + i * n;
            for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
        }
    return make_result<T>({m, n}, std::move(out), {a, b}, "matmul", [m, k, n](Node<T>& node) {
        Node<T>& na = *node.parents[0];
        Node<T>& nb = *node.parents[1];
        const T* g = node.grad.data();
        if (na.requires_grad)  // dA = dC * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    T acc = 0;
                    for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * nb.value[p * n + j];
                    na.grad[i * k + p] += acc;
                }
        if (nb.requires_grad)  // dB = A^T * dC
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t p = 0; p < k; ++p) {
                    const T aip = na.value[i * k + p];
                    for (std::size_t j = 0; j < n; ++j) nb.grad[p * n + j] += aip * g[i * n + j];
                }
    });
}

template <class T>
Tensor<T> transpose(const Tensor<T>& x) {
    if (x.rank() != 2) throw ShapeError("transpose: expected a matrix, got " + to_string(x.shape()));
    const std::size_t r = x.dim(0), c = x.dim(1);
    std::vector<T> out(r * c);
    const auto xv = x.values();
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xv[i * c + j];
    return make_result<T>({c, r}, std::move(out), {x}, "transpose", [r, c](Node<T>& n) {
        Node<T>& nx = *n.parents[0];
        for (std::size_t i = 0; i < r; ++i)
            for (std::size_t j = 0; j < c; ++j) nx.grad[i * c + j] += n.grad[j * r + i];
    });
}

// ---- normalization and reductions ---------------------------------------------------------------

template <class T>
Tensor<T> softmax(const Tensor<T>& x, std::size_t axis) {
    const auto [outer, n, inner] = detail::axis_blocks(x.shape(), axis, "softmax");
    std::vector<T> out(x.numel());
    const auto xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            T mx = -std::numeric_limits<T>::infinity();
            for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, xv[base + j * inner]);
            T sum = 0;
            for (std::size_t j = 0; j < n; ++j) {
                out[base + j * inner] = std::exp(xv[base + j * inner] - mx);
                sum += out[base + j * inner];
            }
            for (std::size_t j = 0; j < n; ++j) out[base + j * inner] /= sum;
        }
    return make_result<T>(x.shape(), std::move(out), {x}, "softmax", [outer, n, inner](Node<T>& node) {
        Node<T>& nx = *node.parents[0];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t in = 0; in < inner; ++in) {
                const std::size_t base = o * n * inner + in;
                T dot = 0;
                for (std::size_t j = 0; j < n; ++j) dot += node.grad[base + j * inner] * node.value[base + j * inner];
                for (std::size_t j = 0; j < n; ++j) {
                    const std::size_t i = base + j * inner;
                    nx.grad[i] += node.value[i] * (node.grad[i] - dot);
                }
            }
    });
}

enum class Reduce { Sum, Mean, Max };

/// Reduces along `axis`, removing it. Max routes the gradient to the first maximal element.
template <class T>
Tensor<T> reduce(Reduce op, const Tensor<T>& x, std::size_t axis) {
    const auto [outer, n, inner] = detail::axis_blocks(x.shape(), axis, "reduce");
    Shape out_shape;
    for (std::size_t i = 0; i < x.rank(); ++i)
        if (i != axis) out_shape.push_back(x.dim(i));
    if (out_shape.empty()) out_shape.push_back(1);
    std::vector<T> out(outer * inner);
    std::vector<std::size_t> argmax;
    if (op == Reduce::Max) argmax.resize(out.size());
    const auto xv = x.values();
    for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t in = 0; in < inner; ++in) {
            const std::size_t base = o * n * inner + in;
            const std::size_t oi = o * inner + in;
            if (op == Reduce::Max) {
                std::size_t best = 0;
                for (std::size_t j = 1; j < n; ++j)
                    if (xv[base + j * inner] > xv[base + best * inner]) best = j;
                argmax[oi] = best;
                out[oi] = xv[base + best * inner];
            } else {
                T s = 0;
                for (std::size_t j = 0; j < n; ++j) s += xv[base + j * inner];
                out[oi] = op == Reduce::Mean ? s / static_cast<T>(n) : s;
            }
        }
    const char* name = op == Reduce::Max ? "reduce_max" : op == Reduce::Mean ? "reduce_mean" : "reduce_sum";
    return make_result<T>(std::move(out_shape), std::move(out), {x}, name,
                          [op, outer, n, inner, argmax = std::move(argmax)](Node<T>& node) {
                              Node<T>& nx = *node.parents[0];
                              for (std::size_t o = 0; o < outer; ++o)
                                  for (std::size_t in = 0; in < inner; ++in) {
                                      const std::size_t base = o * n * inner + in;
                                      const T g = node.grad[o * inner + in];
                                      if (op == Reduce::Max) {
                                          nx.grad[base + argmax[o * inner + in] * inner] += g;
                                      } else {
                                          const T w = op == Reduce::Mean ? g / static_cast<T>(n) : g;
                                          for (std::size_t j = 0; j < n; ++j) nx.grad[base + j * inner] += w;
                                      }
                                  }
                          });
}

// ---- layout -------------------------------------------------------------------------------------

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
    if (numel(shape) != x.numel())
        throw ShapeError("reshape: cannot view " + to_string(x.shape()) + " as " + to_string(shape));
    std::vector<T> out(x.values().begin(), x.values().end());
    return make_result<T>(std::move(shape), std::move(out), {x}, "reshape", [](Node<T>& n) {
        Node<T>& nx = *n.parents[0];
        for (std::size_t i = 0; i < n.grad.size(); ++i) nx.grad[i] += n.grad[i];
    });
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, std::size_t axis) {
    if (xs.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = xs.front().shape();
    if (axis >= first.size()) throw ShapeError("concat: axis " + std::to_string(axis) + " invalid for " + to_string(first));
    Shape out_shape = first;
    out_shape[axis] = 0;
    for (const auto& x : xs) {
        Shape a = x.shape(), b = first;
        if (a.size() != b.size()) throw ShapeError("concat: rank mismatch " + to_string(a) + " vs " + to_string(b));
        a[axis] = b[axis] = 0;
        if (a != b) throw ShapeError("concat: shapes " + to_string(x.shape()) + " and " + to_string(first) + " differ off-axis");
        out_shape[axis] += x.dim(axis);
    }
    const auto [outer, total, inner] = detail::axis_blocks(out_shape, axis, "concat");
    std::vector<T> out(numel(out_shape));
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& x : xs) {
        const std::size_t w = x.dim(axis) * inner;
        const auto xv = x.values();
        for (std::size_t o = 0; o < outer; ++o)
            std::copy_n(xv.data() + o * w, w, out.data() + o * total * inner + offset);
        widths.push_back(w);
        offset += w;
    }
    return make_result<T>(std::move(out_shape), std::move(out), xs, "concat",
                          [outer, total, inner, widths = std::move(widths)](Node<T>& n) {
                              std::size_t off = 0;
                              for (std::size_t k = 0; k < widths.size(); ++k) {
                                  Node<T>& p = *n.parents[k];
                                  if (p.requires_grad)
                                      for (std::size_t o = 0; o < outer; ++o)
                                          for (std::size_t i = 0; i < widths[k]; ++i)
                                              p.grad[o * widths[k] + i] += n.grad[o * total * inner + off + i];
                                  off += widths[k];
                              }
                          });
}

template <class T>
Tensor<T> sum_all(const Tensor<T>& x) {
    return reduce(Reduce::Sum, reshape(x, {x.numel()}), 0);
}

template <class T>
Tensor<T> mean_all(const Tensor<T>& x) {
    return reduce(Reduce::Mean, reshape(x, {x.numel()}), 0);
}

/// Elements [begin, end) along `axis`; the inverse of concat.
template <class T>
Tensor<T> slice(const Tensor<T>& x, std::size_t axis, std::size_t begin, std::size_t end) {
    const auto [outer, n, inner] = detail::axis_blocks(x.shape(), axis, "slice");
    if (begin >= end || end > n)
        throw ShapeError("slice: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") invalid for " +
                         to_string(x.shape()));
    Shape out_shape = x.shape();
    out_shape[axis] = end - begin;
    const std::size_t w = (end - begin) * inner;
    std::vector<T> out(outer * w);
    const auto xv = x.values();
    for (std::size_t o = 0; o < outer; ++o) std::copy_n(xv.data() + o * n * inner + begin * inner, w, out.data() + o * w);
    return make_result<T>(std::move(out_shape), std::move(out), {x}, "slice", [outer, n, inner, begin, w](Node<T>& node) {
        Node<T>& nx = *node.parents[0];
        for (std::size_t o = 0; o < outer; ++o)
            for (std::size_t i = 0; i < w; ++i) nx.grad[o * n * inner + begin * inner + i] += node.grad[o * w + i];
    });
}

// ---- convolution --------------------------------------------------------------------------------

struct ConvGeometry {
    std::size_t cin, cout;
    std::array<std::size_t, 3> in;      // D, H, W
    std::array<std::size_t, 3> kernel;  // kd, kh, kw
    std::array<std::size_t, 3> stride;
    std::array<std::size_t, 3> pad;
    std::array<std::size_t, 3> out;
};

namespace detail {

inline ConvGeometry plan_conv(std::size_t cin, std::size_t cout, std::array<std::size_t, 3> in,
                              std::array<std::size_t, 3> kernel, std::array<std::size_t, 3> stride,
                              std::array<std::size_t, 3> pad, const char* op) {
    ConvGeometry g{cin, cout, in, kernel, stride, pad, {}};
    for (int a = 0; a < 3; ++a) {
        if (stride[a] == 0) throw ShapeError(std::string(op) + ": stride must be positive");
        const std::size_t padded = in[a] + 2 * pad[a];
        if (kernel[a] == 0 || kernel[a] > padded)
            throw ShapeError(std::string(op) + ": kernel " + std::to_string(kernel[a]) + " does not fit padded extent " +
                             std::to_string(padded));
        if ((padded - kernel[a]) % stride[a] != 0)
            throw ShapeError(std::string(op) + ": output size (" + std::to_string(in[a]) + " + 2*" + std::to_string(pad[a]) +
                             " - " + std::to_string(kernel[a]) + ") / " + std::to_string(stride[a]) +
                             " + 1 is not integral");
        g.out[a] = (padded - kernel[a]) / stride[a] + 1;
    }
    return g;
}

// Valid output index range [lo, hi) along one axis for kernel tap k.
inline std::pair<std::size_t, std::size_t> tap_range(const ConvGeometry& g, int a, std::size_t k) {
    const long s = static_cast<long>(g.stride[a]);
    const long off = static_cast<long>(k) - static_cast<long>(g.pad[a]);  // input = o * s + off
    const long n_in = static_cast<long>(g.in[a]);
    const long n_out = static_cast<long>(g.out[a]);
    long lo = off >= 0 ? 0 : (-off + s - 1) / s;
    long hi = (n_in - 1 - off) >= 0 ? (n_in - 1 - off) / s + 1 : 0;
    lo = std::clamp(lo, 0L, n_out);
    hi = std::clamp(hi, lo, n_out);
    return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Visits every (weight tap, output row) pair; `f(w_index, x_row_offset, out_row_offset, ow_lo, ow_hi, kw_off)`.
template <class F>
void conv_visit(const ConvGeometry& g, F&& f) {
    const auto [D, H, W] = g.in;
    const auto [OD, OH, OW] = g.out;
    const auto [kd, kh, kw] = g.kernel;
    for (std::size_t co = 0; co < g.cout; ++co)
        for (std::size_t ci = 0; ci < g.cin; ++ci)
            for (std::size_t a = 0; a < kd; ++a) {
                const auto [d_lo, d_hi] = tap_range(g, 0, a);
                for (std::size_t b = 0; b < kh; ++b) {
                    const auto [h_lo, h_hi] = tap_range(g, 1, b);
                    for (std::size_t c = 0; c < kw; ++c) {
                        const auto [w_lo, w_hi] = tap_range(g, 2, c);
                        if (w_lo >= w_hi) continue;
                        const std::size_t widx = (((co * g.cin + ci) * kd + a) * kh + b) * kw + c;
                        for (std::size_t od = d_lo; od < d_hi; ++od) {
                            const std::size_t id = od * g.stride[0] + a - g.pad[0];
                            for (std::size_t oh = h_lo; oh < h_hi; ++oh) {
                                const std::size_t ih = oh * g.stride[1] + b - g.pad[1];
                                f(widx, ((ci * D + id) * H + ih) * W, ((co * OD + od) * OH + oh) * OW, w_lo, w_hi,
                                  c);
                            }
                        }
                    }
                }
            }
}

template <class T>
Tensor<T> conv_generic(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, const ConvGeometry& g,
                       Shape out_shape, const char* name) {
    const std::size_t out_spatial = g.out[0] * g.out[1] * g.out[2];
    std::vector<T> out(g.cout * out_spatial, T(0));
    if (b.defined())
        for (std::size_t co = 0; co < g.cout; ++co)
            std::fill_n(out.data() + co * out_spatial, out_spatial, b.values()[co]);
    const T* xv = x.values().data();
    const T* wv = w.values().data();
    const std::size_t sw = g.stride[2], pw = g.pad[2];
    conv_visit(g, [&](std::size_t widx, std::size_t xrow, std::size_t orow, std::size_t lo, std::size_t hi, std::size_t c) {
        const T wt = wv[widx];
        const std::size_t base = xrow + c;
        T* o = out.data() + orow;
        for (std::size_t ow = lo; ow < hi; ++ow) o[ow] += wt * xv[base + ow * sw - pw];
    });
    std::vector<Tensor<T>> parents{x, w};
    if (b.defined()) parents.push_back(b);
    const bool has_bias = b.defined();
    return make_result<T>(std::move(out_shape), std::move(out), std::move(parents), name, [g, has_bias](Node<T>& n) {
        Node<T>& nx = *n.parents[0];
        Node<T>& nw = *n.parents[1];
        const T* gr = n.grad.data();
        const std::size_t sw = g.stride[2], pw = g.pad[2];
        conv_visit(g, [&](std::size_t widx, std::size_t xrow, std::size_t orow, std::size_t lo, std::size_t hi,
                          std::size_t c) {
            const T* go = gr + orow;
            if (nx.requires_grad) {
                const T wt = nw.value[widx];
                T* dx = nx.grad.data();
                for (std::size_t ow = lo; ow < hi; ++ow) dx[xrow + c + ow * sw - pw] += wt * go[ow];
            }
            if (nw.requires_grad) {
                const T* xr = nx.value.data();
                T acc = 0;
                for (std::size_t ow = lo; ow < hi; ++ow) acc += xr[xrow + c + ow * sw - pw] * go[ow];
                nw.grad[widx] += acc;
            }
        });
        if (has_bias && n.parents[2]->requires_grad) {
            Node<T>& nb = *n.parents[2];
            const std::size_t sp = g.out[0] * g.out[1] * g.out[2];
            for (std::size_t co = 0; co < g.cout; ++co) {
                T s = 0;
                for (std::size_t i = 0; i < sp; ++i) s += gr[co * sp + i];
                nb.grad[co] += s;
            }
        }
    });
}

template <class T>
void check_bias(const Tensor<T>& b, std::size_t cout, const char* op) {
    if (b.defined() && (b.rank() != 1 || b.dim(0) != cout))
        throw ShapeError(std::string(op) + ": bias shape " + to_string(b.shape()) + " does not match " +
                         std::to_string(cout) + " output channels");
}

}  // namespace detail

/// Cross-correlation of x [Cin x D x H x W] with w [Cout x Cin x kd x kh x kw]; b is [Cout] or undefined.
/// Zero padding; the output extent (n + 2p - k) / s + 1 must be integral on every axis.
template <class T>
Tensor<T> conv3d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::array<std::size_t, 3> stride,
                 std::array<std::size_t, 3> pad) {
    if (x.rank() != 4 || w.rank() != 5 || w.dim(1) != x.dim(0))
        throw ShapeError("conv3d: input " + to_string(x.shape()) + " incompatible with kernel " + to_string(w.shape()));
    detail::check_bias(b, w.dim(0), "conv3d");
    const ConvGeometry g = detail::plan_conv(x.dim(0), w.dim(0), {x.dim(1), x.dim(2), x.dim(3)},
                                             {w.dim(2), w.dim(3), w.dim(4)}, stride, pad, "conv3d");
    return detail::conv_generic(x, w, b, g, {g.cout, g.out[0], g.out[1], g.out[2]}, "conv3d");
}

/// 2D analogue of conv3d: x [Cin x H x W], w [Cout x Cin x kh x kw].
template <class T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::array<std::size_t, 2> stride,
                 std::array<std::size_t, 2> pad) {
    if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0))
        throw ShapeError("conv2d: input " + to_string(x.shape()) + " incompatible with kernel " + to_string(w.shape()));
    detail::check_bias(b, w.dim(0), "conv2d");
    const ConvGeometry g = detail::plan_conv(x.dim(0), w.dim(0), {1, x.dim(1), x.dim(2)}, {1, w.dim(2), w.dim(3)},
                                             {1, stride[0], stride[1]}, {0, pad[0], pad[1]}, "conv2d");
    return detail::conv_generic(x, w, b, g, {g.cout, g.out[1], g.out[2]}, "conv2d");
}

}  // namespace cureg::ad
