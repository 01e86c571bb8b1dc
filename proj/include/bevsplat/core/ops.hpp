// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Expression-style free functions over Tensor<S>: elementwise algebra with
// NumPy-style right-aligned broadcasting, reductions, batched matmul,
// softmax, and shape surgery (reshape / slice / concat / gather).

#pragma once

#include "bevsplat/core/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace bevsplat {

namespace detail {

// Right-aligned broadcast of two shapes. Strides are in elements of the
// respective operand, expressed per output dimension (0 on broadcast dims).
struct BcastPlan {
    Shape out;
    std::vector<std::int64_t> sa, sb;
    bool equal = false;     // identical shapes
    bool b_scalar = false;  // b has a single element
    // a viewed as [rows, inner] with b one value per row / one row shared by all rows
    bool row_bcast = false;
    bool col_bcast = false;
    std::int64_t rows = 0, inner = 0;
};

inline BcastPlan plan_broadcast(const char* op, const Shape& a, const Shape& b) {
    BcastPlan p;
    size_t r = std::max(a.size(), b.size());
    p.out.resize(r);
    p.sa.assign(r, 0);
    p.sb.assign(r, 0);
    Shape ap(r, 1), bp(r, 1);
    std::copy(a.begin(), a.end(), ap.begin() + (r - a.size()));
    std::copy(b.begin(), b.end(), bp.begin() + (r - b.size()));
    for (size_t i = 0; i < r; ++i) {
        if (ap[i] == bp[i])
            p.out[i] = ap[i];
        else if (ap[i] == 1 || bp[i] == 1)
            p.out[i] = std::max(ap[i], bp[i]);
        else
            shape_error(op, a, b);
    }
    std::int64_t stra = 1, strb = 1;
    for (size_t i = r; i-- > 0;) {
        if (ap[i] != 1) p.sa[i] = stra;
        if (bp[i] != 1) p.sb[i] = strb;
        stra *= ap[i];
        strb *= bp[i];
    }
    p.equal = (ap == bp);
    p.b_scalar = (numel(b) == 1);
    if (!p.equal && !p.b_scalar) {
        // row broadcast: b == ap with all dims after some prefix equal to 1,
        // prefix dims matching -> one b element per row of a's [rows, inner] view
        size_t k = 0;
        while (k < r && ap[k] == bp[k]) ++k;
        bool trailing_ones = true;
        for (size_t i = k; i < r; ++i) trailing_ones = trailing_ones && bp[i] == 1;
        if (trailing_ones && k > 0) {
            p.row_bcast = true;
            p.rows = 1;
            for (size_t i = 0; i < k; ++i) p.rows *= ap[i];
            p.inner = numel(ap) / std::max<std::int64_t>(p.rows, 1);
        }
        // col broadcast: b has leading 1s and matches a's trailing dims
        size_t lead = 0;
        while (lead < r && bp[lead] == 1) ++lead;
        bool tail_match = true;
        for (size_t i = lead; i < r; ++i) tail_match = tail_match && ap[i] == bp[i];
        if (!p.row_bcast && tail_match && lead > 0 && lead < r) {
            p.col_bcast = true;
            p.inner = 1;
            for (size_t i = lead; i < r; ++i) p.inner *= ap[i];
            p.rows = numel(ap) / std::max<std::int64_t>(p.inner, 1);
        }
    }
    return p;
}

// Generic odometer walk calling fn(out_index, a_offset, b_offset).
template <class F>
inline void bcast_walk(const BcastPlan& p, F&& fn) {
    std::int64_t n = numel(p.out);
    size_t r = p.out.size();
    std::vector<std::int64_t> idx(r, 0);
    std::int64_t ia = 0, ib = 0;
    for (std::int64_t o = 0; o < n; ++o) {
        fn(o, ia, ib);
        for (size_t d = r; d-- > 0;) {
            ++idx[d];
            ia += p.sa[d];
            ib += p.sb[d];
            if (idx[d] < p.out[d]) break;
            idx[d] = 0;
            ia -= p.sa[d] * p.out[d];
            ib -= p.sb[d] * p.out[d];
        }
    }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting
// ---------------------------------------------------------------------------

namespace detail {

// FwdOp: (a,b)->out on Eigen arrays or scalars; DA/DB: d out / d a|b as
// value-level functions of (a_val, b_val, out_val).
template <class S, class Fwd, class Da, class Db>
Tensor<S> binary_op(const char* name, const Tensor<S>& a, const Tensor<S>& b, Fwd fwd, Da da,
                    Db db) {
    auto plan = plan_broadcast(name, a.shape(), b.shape());
    const VecX<S>& av = a.vals();
    const VecX<S>& bv = b.vals();
    VecX<S> out(numel(plan.out));
    if (plan.equal) {
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], bv[i]);
    } else if (plan.b_scalar) {
        S s = bv[0];
        for (std::int64_t i = 0; i < out.size(); ++i) out[i] = fwd(av[i], s);
    } else if (plan.row_bcast) {
        for (std::int64_t r = 0; r < plan.rows; ++r) {
            S s = bv[r];
            std::int64_t base = r * plan.inner;
            for (std::int64_t i = 0; i < plan.inner; ++i) out[base + i] = fwd(av[base + i], s);
        }
    } else if (plan.col_bcast) {
        for (std::int64_t r = 0; r < plan.rows; ++r) {
            std::int64_t base = r * plan.inner;
            for (std::int64_t i = 0; i < plan.inner; ++i) out[base + i] = fwd(av[base + i], bv[i]);
        }
    } else {
        bcast_walk(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
            out[o] = fwd(av[ia], bv[ib]);
        });
    }
    return make_op<S>(
        name, plan.out, std::move(out), {a.node(), b.node()},
        [plan, da, db](TensorNode<S>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            const VecX<S>& g = n.grad;
            bool wa = pa.requires_grad, wb = pb.requires_grad;
            VecX<S>* ga = wa ? &pa.grad_buf() : nullptr;
            VecX<S>* gb = wb ? &pb.grad_buf() : nullptr;
            if (plan.equal) {
                for (std::int64_t i = 0; i < g.size(); ++i) {
                    if (wa) (*ga)[i] += g[i] * da(pa.vals[i], pb.vals[i], n.vals[i]);
                    if (wb) (*gb)[i] += g[i] * db(pa.vals[i], pb.vals[i], n.vals[i]);
                }
            } else if (plan.b_scalar) {
                S bvv = pb.vals[0], acc = S(0);
                for (std::int64_t i = 0; i < g.size(); ++i) {
                    if (wa) (*ga)[i] += g[i] * da(pa.vals[i], bvv, n.vals[i]);
                    if (wb) acc += g[i] * db(pa.vals[i], bvv, n.vals[i]);
                }
                if (wb) (*gb)[0] += acc;
            } else if (plan.row_bcast) {
                for (std::int64_t r = 0; r < plan.rows; ++r) {
                    S bvv = pb.vals[r], acc = S(0);
                    std::int64_t base = r * plan.inner;
                    for (std::int64_t i = 0; i < plan.inner; ++i) {
                        std::int64_t o = base + i;
                        if (wa) (*ga)[o] += g[o] * da(pa.vals[o], bvv, n.vals[o]);
                        if (wb) acc += g[o] * db(pa.vals[o], bvv, n.vals[o]);
                    }
                    if (wb) (*gb)[r] += acc;
                }
            } else if (plan.col_bcast) {
                for (std::int64_t r = 0; r < plan.rows; ++r) {
                    std::int64_t base = r * plan.inner;
                    for (std::int64_t i = 0; i < plan.inner; ++i) {
                        std::int64_t o = base + i;
                        if (wa) (*ga)[o] += g[o] * da(pa.vals[o], pb.vals[i], n.vals[o]);
                        if (wb) (*gb)[i] += g[o] * db(pa.vals[o], pb.vals[i], n.vals[o]);
                    }
                }
            } else {
                bcast_walk(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
                    if (wa) (*ga)[ia] += n.grad[o] * da(pa.vals[ia], pb.vals[ib], n.vals[o]);
                    if (wb) (*gb)[ib] += n.grad[o] * db(pa.vals[ia], pb.vals[ib], n.vals[o]);
                });
            }
        });
}

}  // namespace detail

template <class S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "add", a, b, [](S x, S y) { return x + y; }, [](S, S, S) { return S(1); },
        [](S, S, S) { return S(1); });
}
template <class S>
Tensor<S> sub(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "sub", a, b, [](S x, S y) { return x - y; }, [](S, S, S) { return S(1); },
        [](S, S, S) { return S(-1); });
}
template <class S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "mul", a, b, [](S x, S y) { return x * y; }, [](S, S y, S) { return y; },
        [](S x, S, S) { return x; });
}
template <class S>
Tensor<S> div(const Tensor<S>& a, const Tensor<S>& b) {
    return detail::binary_op<S>(
        "div", a, b, [](S x, S y) { return x / y; }, [](S, S y, S) { return S(1) / y; },
        [](S x, S y, S) { return -x / (y * y); });
}

template <class S>
Tensor<S> operator+(const Tensor<S>& a, const Tensor<S>& b) {
    return add(a, b);
}
template <class S>
Tensor<S> operator-(const Tensor<S>& a, const Tensor<S>& b) {
    return sub(a, b);
}
template <class S>
Tensor<S> operator*(const Tensor<S>& a, const Tensor<S>& b) {
    return mul(a, b);
}
template <class S>
Tensor<S> operator/(const Tensor<S>& a, const Tensor<S>& b) {
    return div(a, b);
}
template <class S>
Tensor<S> operator*(const Tensor<S>& a, S s) {
    return mul(a, Tensor<S>::scalar(s));
}
template <class S>
Tensor<S> operator*(S s, const Tensor<S>& a) {
    return mul(a, Tensor<S>::scalar(s));
}
template <class S>
Tensor<S> operator+(const Tensor<S>& a, S s) {
    return add(a, Tensor<S>::scalar(s));
}
template <class S>
Tensor<S> operator-(const Tensor<S>& a, S s) {
    return sub(a, Tensor<S>::scalar(s));
}

// ---------------------------------------------------------------------------
// Elementwise unary ops
// ---------------------------------------------------------------------------

namespace detail {

template <class S, class Fwd, class Bwd>
Tensor<S> unary_op(const char* name, const Tensor<S>& x, Fwd fwd, Bwd dydx) {
    VecX<S> out(x.size());
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = fwd(x.vals()[i]);
    return make_op<S>("un", x.shape(), std::move(out), {x.node()}, [dydx](TensorNode<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        VecX<S>& g = p.grad_buf();
        for (std::int64_t i = 0; i < n.grad.size(); ++i)
            g[i] += n.grad[i] * dydx(p.vals[i], n.vals[i]);
    });
}

}  // namespace detail

template <class S>
Tensor<S> neg(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "neg", x, [](S v) { return -v; }, [](S, S) { return S(-1); });
}
template <class S>
Tensor<S> operator-(const Tensor<S>& x) {
    return neg(x);
}
template <class S>
Tensor<S> exp(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "exp", x, [](S v) { return std::exp(v); }, [](S, S y) { return y; });
}
template <class S>
Tensor<S> log(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "log", x, [](S v) { return std::log(v); }, [](S v, S) { return S(1) / v; });
}
template <class S>
Tensor<S> sqrt(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "sqrt", x, [](S v) { return std::sqrt(v); },
        [](S, S y) { return S(1) / (S(2) * y); });
}
template <class S>
Tensor<S> square(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "square", x, [](S v) { return v * v; }, [](S v, S) { return S(2) * v; });
}
template <class S>
Tensor<S> abs(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "abs", x, [](S v) { return std::abs(v); },
        [](S v, S) { return v > S(0) ? S(1) : (v < S(0) ? S(-1) : S(0)); });
}
template <class S>
Tensor<S> relu(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "relu", x, [](S v) { return v > S(0) ? v : S(0); },
        [](S v, S) { return v > S(0) ? S(1) : S(0); });
}
template <class S>
Tensor<S> sigmoid(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "sigmoid", x,
        [](S v) { return v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v)); },
        [](S, S y) { return y * (S(1) - y); });
}
template <class S>
Tensor<S> tanh(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "tanh", x, [](S v) { return std::tanh(v); }, [](S, S y) { return S(1) - y * y; });
}
template <class S>
Tensor<S> softplus(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "softplus", x,
        [](S v) { return std::max(v, S(0)) + std::log1p(std::exp(-std::abs(v))); },
        [](S v, S) {
            return v >= S(0) ? S(1) / (S(1) + std::exp(-v)) : std::exp(v) / (S(1) + std::exp(v));
        });
}
template <class S>
Tensor<S> sin(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "sin", x, [](S v) { return std::sin(v); }, [](S v, S) { return std::cos(v); });
}
template <class S>
Tensor<S> cos(const Tensor<S>& x) {
    return detail::unary_op<S>(
        "cos", x, [](S v) { return std::cos(v); }, [](S v, S) { return -std::sin(v); });
}
// Pass-through gradient inside [lo, hi], zero outside.
template <class S>
Tensor<S> clamp(const Tensor<S>& x, S lo, S hi) {
    return detail::unary_op<S>(
        "clamp", x, [lo, hi](S v) { return std::min(std::max(v, lo), hi); },
        [lo, hi](S v, S) { return (v >= lo && v <= hi) ? S(1) : S(0); });
}
template <class S>
Tensor<S> clamp_min(const Tensor<S>& x, S lo) {
    return detail::unary_op<S>(
        "clamp_min", x, [lo](S v) { return std::max(v, lo); },
        [lo](S v, S) { return v >= lo ? S(1) : S(0); });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> sum(const Tensor<S>& x) {
    VecX<S> out(1);
    out[0] = x.vals().sum();
    return detail::make_op<S>("sum", {1}, std::move(out), {x.node()}, [](TensorNode<S>& n) {
        auto& p = *n.parents[0];
        if (!p.requires_grad) return;
        p.grad_buf() += n.grad[0];
    });
}

template <class S>
Tensor<S> mean(const Tensor<S>& x) {
    return sum(x) * (S(1) / S(x.size()));
}

// Sum over one axis; keepdim retains a size-1 dim for broadcasting back.
template <class S>
Tensor<S> sum_axis(const Tensor<S>& x, int axis, bool keepdim = false) {
    int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw std::invalid_argument("sum_axis: axis out of range for " + shape_str(x.shape()));
    std::int64_t L = x.shape()[static_cast<size_t>(axis)];
    std::int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < r; ++i) inner *= x.shape()[static_cast<size_t>(i)];
    for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<size_t>(i)];
    Shape os;
    for (int i = 0; i < r; ++i)
        if (i != axis)
            os.push_back(x.shape()[static_cast<size_t>(i)]);
        else if (keepdim)
            os.push_back(1);
    if (os.empty()) os = {1};
    VecX<S> out = VecX<S>::Zero(outer * inner);
    const VecX<S>& v = x.vals();
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t l = 0; l < L; ++l) {
            std::int64_t src = (o * L + l) * inner;
            out.segment(o * inner, inner) += v.segment(src, inner);
        }
    return detail::make_op<S>(
        "sum_axis", os, std::move(out), {x.node()}, [L, inner, outer](TensorNode<S>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            VecX<S>& g = p.grad_buf();
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t l = 0; l < L; ++l)
                    g.segment((o * L + l) * inner, inner) += n.grad.segment(o * inner, inner);
        });
}

template <class S>
Tensor<S> mean_axis(const Tensor<S>& x, int axis, bool keepdim = false) {
    int r = x.rank();
    std::int64_t L = x.shape()[static_cast<size_t>(axis < 0 ? axis + r : axis)];
    return sum_axis(x, axis, keepdim) * (S(1) / S(L));
}

template <class S>
Tensor<S> dot(const Tensor<S>& a, const Tensor<S>& b) {
    return sum(mul(a, b));
}

// ---------------------------------------------------------------------------
// Matmul (batched, broadcasting batch dims) and transpose
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
    if (a.rank() < 2 || b.rank() < 2) shape_error("matmul", a.shape(), b.shape());
    std::int64_t M = a.dim(-2), K = a.dim(-1), Kb = b.dim(-2), N = b.dim(-1);
    if (K != Kb) shape_error("matmul", a.shape(), b.shape());
    Shape abatch(a.shape().begin(), a.shape().end() - 2);
    Shape bbatch(b.shape().begin(), b.shape().end() - 2);
    auto plan = detail::plan_broadcast("matmul", abatch, bbatch);
    Shape oshape = plan.out;
    oshape.push_back(M);
    oshape.push_back(N);
    std::int64_t nbatch = numel(plan.out);
    VecX<S> out(nbatch * M * N);
    const S* ap = a.vals().data();
    const S* bp = b.vals().data();
    // collect per-batch element offsets once; reused verbatim in backward
    std::vector<std::int64_t> offa(static_cast<size_t>(nbatch)), offb(static_cast<size_t>(nbatch));
    detail::bcast_walk(plan, [&](std::int64_t o, std::int64_t ia, std::int64_t ib) {
        offa[static_cast<size_t>(o)] = ia;
        offb[static_cast<size_t>(o)] = ib;
    });
    for (std::int64_t i = 0; i < nbatch; ++i) {
        ConstMatMap<S> A(ap + offa[static_cast<size_t>(i)] * M * K, M, K);
        ConstMatMap<S> B(bp + offb[static_cast<size_t>(i)] * K * N, K, N);
        MatMap<S> C(out.data() + i * M * N, M, N);
        C.noalias() = A * B;
    }
    return detail::make_op<S>(
        "matmul", oshape, std::move(out), {a.node(), b.node()},
        [M, K, N, nbatch, offa, offb](TensorNode<S>& n) {
            auto& pa = *n.parents[0];
            auto& pb = *n.parents[1];
            const S* gp = n.grad.data();
            if (pa.requires_grad) {
                VecX<S>& ga = pa.grad_buf();
                for (std::int64_t i = 0; i < nbatch; ++i) {
                    ConstMatMap<S> G(gp + i * M * N, M, N);
                    ConstMatMap<S> B(pb.vals.data() + offb[static_cast<size_t>(i)] * K * N, K, N);
                    MatMap<S> GA(ga.data() + offa[static_cast<size_t>(i)] * M * K, M, K);
                    GA.noalias() += G * B.transpose();
                }
            }
            if (pb.requires_grad) {
                VecX<S>& gb = pb.grad_buf();
                for (std::int64_t i = 0; i < nbatch; ++i) {
                    ConstMatMap<S> G(gp + i * M * N, M, N);
                    ConstMatMap<S> A(pa.vals.data() + offa[static_cast<size_t>(i)] * M * K, M, K);
                    MatMap<S> GB(gb.data() + offb[static_cast<size_t>(i)] * K * N, K, N);
                    GB.noalias() += A.transpose() * G;
                }
            }
        });
}

// Swap the last two axes.
template <class S>
Tensor<S> transpose_last(const Tensor<S>& x) {
    if (x.rank() < 2) throw std::invalid_argument("transpose_last needs rank>=2");
    std::int64_t M = x.dim(-2), N = x.dim(-1);
    std::int64_t nb = x.size() / (M * N);
    Shape os = x.shape();
    std::swap(os[os.size() - 1], os[os.size() - 2]);
    VecX<S> out(x.size());
    for (std::int64_t i = 0; i < nb; ++i) {
        ConstMatMap<S> A(x.vals().data() + i * M * N, M, N);
        MatMap<S> B(out.data() + i * M * N, N, M);
        B = A.transpose();
    }
    return detail::make_op<S>("transpose", os, std::move(out), {x.node()},
                              [M, N, nb](TensorNode<S>& n) {
                                  auto& p = *n.parents[0];
                                  if (!p.requires_grad) return;
                                  VecX<S>& g = p.grad_buf();
                                  for (std::int64_t i = 0; i < nb; ++i) {
                                      ConstMatMap<S> G(n.grad.data() + i * M * N, N, M);
                                      MatMap<S> GP(g.data() + i * M * N, M, N);
                                      GP += G.transpose();
                                  }
                              });
}

// ---------------------------------------------------------------------------
// Softmax
// ---------------------------------------------------------------------------

// Numerically stable softmax along `axis` (max-subtraction).
template <class S>
Tensor<S> softmax(const Tensor<S>& x, int axis = -1) {
    int r = x.rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r)
        throw std::invalid_argument("softmax: axis out of range for " + shape_str(x.shape()));
    std::int64_t L = x.shape()[static_cast<size_t>(axis)];
    std::int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < r; ++i) inner *= x.shape()[static_cast<size_t>(i)];
    for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<size_t>(i)];
    const VecX<S>& v = x.vals();
    VecX<S> out(x.size());
    for (std::int64_t o = 0; o < outer; ++o)
        for (std::int64_t in = 0; in < inner; ++in) {
            std::int64_t base = o * L * inner + in;
            S m = v[base];
            for (std::int64_t l = 1; l < L; ++l) m = std::max(m, v[base + l * inner]);
            S z = S(0);
            for (std::int64_t l = 0; l < L; ++l) {
                S e = std::exp(v[base + l * inner] - m);
                out[base + l * inner] = e;
                z += e;
            }
            for (std::int64_t l = 0; l < L; ++l) out[base + l * inner] /= z;
        }
    return detail::make_op<S>(
        "softmax", x.shape(), std::move(out), {x.node()},
        [L, inner, outer](TensorNode<S>& n) {
            auto& p = *n.parents[0];
            if (!p.requires_grad) return;
            VecX<S>& g = p.grad_buf();
            for (std::int64_t o = 0; o < outer; ++o)
                for (std::int64_t in = 0; in < inner; ++in) {
                    std::int64_t base = o * L * inner + in;
                    S acc = S(0);
                    for (std::int64_t l = 0; l < L; ++l)
                        acc += n.grad[base + l * inner] * n.vals[base + l * inner];
                    for (std::int64_t l = 0; l < L; ++l) {
                        std::int64_t k = base + l * inner;
                        g[k] += n.vals[k] * (n.grad[k] - acc);
                    }
                }
        });
}

// ---------------------------------------------------------------------------
// Shape surgery
// ---------------------------------------------------------------------------

template <class S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
    if (numel(shape) != x.size())
        shape_error("reshape", x.shape(), shape);
    VecX<S> out = x.vals();
    return detail::make_op<S>("reshape", std::move(shape), std::move(out), {x.node()},
                              [](TensorNode<S>& n) {
                                  auto& p = *n.parents[0];
                                  if (!p.requires_grad) return;
                                  p.grad_buf() += n.grad;
                              });
}

// Contiguous slice along one axis.
template <class S>
Tensor<S> slice(const Tensor<S>& x, int axis, std::int64_t start, std::int64_t len) {
    int r = x.rank();
    if (axis < 0) axis += r;
    std::int64_t L = x.shape()[static_cast<size_t>(axis)];
    if (start < 0 || len < 0 || start + len > L)
        throw std::invalid_argument("slice out of range on " + shape_str(x.shape()));
    std::int64_t inner = 1, outer = 1;
    for (int i = axis + 1; i < r; ++i) inner *= x.shape()[static_cast<size_t>(i)];
    for (int i = 0; i < axis; ++i) outer *= x.shape()[static_cast<size_t>(i)];
    Shape os = x.shape();
    os[static_cast<size_t>(axis)] = len;
    VecX<S> out(outer * len * inner);
    for (std::int64_t o = 0; o < outer; ++o)
        out.segment(o * len * inner, len * inner) =
            x.vals().segment((o * L + start) * inner, len * inner);
    return detail::make_op<S>("slice", os, std::move(out), {x.node()},
                              [L, inner, outer, start, len](TensorNode<S>& n) {
                                  auto& p = *n.parents[0];
                                  if (!p.requires_grad) return;
                                  VecX<S>& g = p.grad_buf();
                                  for (std::int64_t o = 0; o < outer; ++o)
                                      g.segment((o * L + start) * inner, len * inner) +=
                                          n.grad.segment(o * len * inner, len * inner);
                              });
}

template <class S>
Tensor<S> slice_last(const Tensor<S>& x, std::int64_t start, std::int64_t len) {
    return slice(x, -1, start, len);
}

template <class S>
Tensor<S> concat(const std::vector<Tensor<S>>& ts, int axis) {
    if (ts.empty()) throw std::invalid_argument("concat of zero tensors");
    int r = ts[0].rank();
    if (axis < 0) axis += r;
    std::int64_t inner = 1, outer = 1, Lsum = 0;
    for (int i = axis + 1; i < r; ++i) inner *= ts[0].shape()[static_cast<size_t>(i)];
    for (int i = 0; i < axis; ++i) outer *= ts[0].shape()[static_cast<size_t>(i)];
    std::vector<std::int64_t> ls;
    for (auto& t : ts) {
        for (int i = 0; i < r; ++i)
            if (i != axis && t.shape()[static_cast<size_t>(i)] != ts[0].shape()[static_cast<size_t>(i)])
                shape_error("concat", t.shape(), ts[0].shape());
        ls.push_back(t.shape()[static_cast<size_t>(axis)]);
        Lsum += ls.back();
    }
    Shape os = ts[0].shape();
    os[static_cast<size_t>(axis)] = Lsum;
    VecX<S> out(outer * Lsum * inner);
    std::int64_t off = 0;
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    for (size_t k = 0; k < ts.size(); ++k) {
        for (std::int64_t o = 0; o < outer; ++o)
            out.segment((o * Lsum + off) * inner, ls[k] * inner) =
                ts[k].vals().segment(o * ls[k] * inner, ls[k] * inner);
        off += ls[k];
        parents.push_back(ts[k].node());
    }
    return detail::make_op<S>("concat", os, std::move(out), std::move(parents),
                              [ls, inner, outer, Lsum](TensorNode<S>& n) {
                                  std::int64_t off2 = 0;
                                  for (size_t k = 0; k < n.parents.size(); ++k) {
                                      auto& p = *n.parents[k];
                                      if (p.requires_grad) {
                                          VecX<S>& g = p.grad_buf();
                                          for (std::int64_t o = 0; o < outer; ++o)
                                              g.segment(o * ls[k] * inner, ls[k] * inner) +=
                                                  n.grad.segment((o * Lsum + off2) * inner,
                                                                 ls[k] * inner);
                                      }
                                      off2 += ls[k];
                                  }
                              });
}

// out[i] = x.flat[idx[i]]; backward scatter-adds. Covers row gathering,
// permutations and column selection with precomputed flat indices.
template <class S>
Tensor<S> gather_flat(const Tensor<S>& x, std::vector<std::int64_t> idx, Shape out_shape) {
    if (numel(out_shape) != static_cast<std::int64_t>(idx.size()))
        throw std::invalid_argument("gather_flat: index count does not match out shape");
    VecX<S> out(static_cast<std::int64_t>(idx.size()));
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= x.size())
            throw std::invalid_argument("gather_flat: index out of range");
        out[static_cast<std::int64_t>(i)] = x.vals()[idx[i]];
    }
    return detail::make_op<S>("gather", std::move(out_shape), std::move(out), {x.node()},
                              [idx = std::move(idx)](TensorNode<S>& n) {
                                  auto& p = *n.parents[0];
                                  if (!p.requires_grad) return;
                                  VecX<S>& g = p.grad_buf();
                                  for (size_t i = 0; i < idx.size(); ++i)
                                      g[idx[i]] += n.grad[static_cast<std::int64_t>(i)];
                              });
}

// Gather whole rows of a [N, D] tensor.
template <class S>
Tensor<S> gather_rows(const Tensor<S>& x, const std::vector<std::int64_t>& rows) {
    if (x.rank() != 2) throw std::invalid_argument("gather_rows needs rank 2");
    std::int64_t D = x.dim(1);
    std::vector<std::int64_t> idx;
    idx.reserve(rows.size() * static_cast<size_t>(D));
    for (auto r : rows)
        for (std::int64_t d = 0; d < D; ++d) idx.push_back(r * D + d);
    return gather_flat(x, std::move(idx), {static_cast<std::int64_t>(rows.size()), D});
}

// L2-normalize along the last axis (eps keeps the zero vector finite).
template <class S>
Tensor<S> normalize_last(const Tensor<S>& x) {
    auto n2 = sum_axis(square(x), -1, true);
    return div(x, sqrt(n2 + S(1e-24)));
}

}  // namespace bevsplat
