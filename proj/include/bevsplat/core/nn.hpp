// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Neural building blocks on top of the tensor ops: affine layers, layer
// normalization, MLP chains, bilinear feature-map sampling and a small
// im2col convolution for the toy backbones.

#pragma once

#include "bevsplat/core/ops.hpp"

namespace bevsplat {

enum class Activation { Identity, Relu, Sigmoid, Tanh, Softplus };

inline Activation activation_from_string(const std::string& s) {
    if (s == "identity") return Activation::Identity;
    if (s == "relu") return Activation::Relu;
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "tanh") return Activation::Tanh;
    if (s == "softplus") return Activation::Softplus;
    throw std::invalid_argument("unknown activation: " + s);
}

template <class S>
Tensor<S> activate(const Tensor<S>& x, Activation a) {
    switch (a) {
        case Activation::Identity: return x;
        case Activation::Relu: return relu(x);
        case Activation::Sigmoid: return sigmoid(x);
        case Activation::Tanh: return tanh(x);
        case Activation::Softplus: return softplus(x);
    }
    throw std::logic_error("unreachable");
}

// x [.., in] @ w [in, out] + b [out]
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b) {
    return add(matmul(x, w), b);
}
template <class S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& w) {
    return matmul(x, w);
}

template <class S>
struct MlpLayer {
    Tensor<S> w, b;
    Activation act = Activation::Identity;
};

template <class S>
Tensor<S> mlp_forward(const Tensor<S>& x, const std::vector<MlpLayer<S>>& layers) {
    Tensor<S> h = x;
    for (auto& l : layers) h = activate(linear(h, l.w, l.b), l.act);
    return h;
}

// Layer normalization over the last axis with affine parameters.
template <class S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta,
                     S eps = S(1e-5)) {
    std::int64_t D = x.dim(-1);
    if (gamma.size() != D || beta.size() != D) shape_error("layer_norm", x.shape(), gamma.shape());
    std::int64_t rows = x.size() / D;
    VecX<S> out(x.size());
    VecX<S> xhat(x.size());
    VecX<S> istd(rows);
    const VecX<S>& v = x.vals();
    for (std::int64_t r = 0; r < rows; ++r) {
        auto seg = v.segment(r * D, D);
        S mu = seg.mean();
        S var = (seg - mu).square().mean();
        S is = S(1) / std::sqrt(var + eps);
        istd[r] = is;
        xhat.segment(r * D, D) = (seg - mu) * is;
        out.segment(r * D, D) = xhat.segment(r * D, D) * gamma.vals() + beta.vals();
    }
    return detail::make_op<S>(
        "layer_norm", x.shape(), std::move(out), {x.node(), gamma.node(), beta.node()},
        [D, rows, xhat = std::move(xhat), istd = std::move(istd)](TensorNode<S>& n) {
            auto& px = *n.parents[0];
            auto& pg = *n.parents[1];
            auto& pb = *n.parents[2];
            for (std::int64_t r = 0; r < rows; ++r) {
                auto g = n.grad.segment(r * D, D);
                auto xh = xhat.segment(r * D, D);
                if (pg.requires_grad) pg.grad_buf() += (g * xh).matrix().array();
                if (pb.requires_grad) pb.grad_buf() += g;
                if (px.requires_grad) {
                    VecX<S> gxh = g * pg.vals;
                    S m1 = gxh.mean();
                    S m2 = (gxh * xh).mean();
                    px.grad_buf().segment(r * D, D) += istd[r] * (gxh - m1 - xh * m2);
                }
            }
        });
}

// Bilinear interpolation of a [d, H, W] feature map at n continuous points.
// pts is [n, 2] as (u, v) = (x along W, y along H) in grid coordinates.
// Points outside [0, W-1] x [0, H-1] yield zeros and propagate zero gradient
// to both the map and the point.
template <class S>
Tensor<S> bilinear_sample(const Tensor<S>& feat, const Tensor<S>& pts) {
    if (feat.rank() != 3 || pts.rank() != 2 || pts.dim(1) != 2)
        shape_error("bilinear_sample", feat.shape(), pts.shape());
    std::int64_t d = feat.dim(0), H = feat.dim(1), W = feat.dim(2), n = pts.dim(0);
    std::int64_t HW = H * W;
    VecX<S> out = VecX<S>::Zero(n * d);
    const VecX<S>& f = feat.vals();
    const VecX<S>& p = pts.vals();
    for (std::int64_t i = 0; i < n; ++i) {
        S u = p[2 * i], v = p[2 * i + 1];
        if (!(u >= S(0) && u <= S(W - 1) && v >= S(0) && v <= S(H - 1))) continue;
        std::int64_t x0 = static_cast<std::int64_t>(std::floor(u));
        std::int64_t y0 = static_cast<std::int64_t>(std::floor(v));
        x0 = std::min(x0, W - 1);
        y0 = std::min(y0, H - 1);
        std::int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
        S fx = u - S(x0), fy = v - S(y0);
        S w00 = (S(1) - fx) * (S(1) - fy), w01 = fx * (S(1) - fy);
        S w10 = (S(1) - fx) * fy, w11 = fx * fy;
        for (std::int64_t c = 0; c < d; ++c) {
            const S* fc = f.data() + c * HW;
            out[i * d + c] = w00 * fc[y0 * W + x0] + w01 * fc[y0 * W + x1] +
                             w10 * fc[y1 * W + x0] + w11 * fc[y1 * W + x1];
        }
    }
    return detail::make_op<S>(
        "bilinear_sample", {n, d}, std::move(out), {feat.node(), pts.node()},
        [d, H, W, n, HW](TensorNode<S>& n_) {
            auto& pf = *n_.parents[0];
            auto& pp = *n_.parents[1];
            bool wf = pf.requires_grad, wp = pp.requires_grad;
            VecX<S>* gf = wf ? &pf.grad_buf() : nullptr;
            VecX<S>* gp = wp ? &pp.grad_buf() : nullptr;
            const VecX<S>& p = pp.vals;
            const VecX<S>& f = pf.vals;
            for (std::int64_t i = 0; i < n; ++i) {
                S u = p[2 * i], v = p[2 * i + 1];
                if (!(u >= S(0) && u <= S(W - 1) && v >= S(0) && v <= S(H - 1))) continue;
                std::int64_t x0 = std::min(static_cast<std::int64_t>(std::floor(u)), W - 1);
                std::int64_t y0 = std::min(static_cast<std::int64_t>(std::floor(v)), H - 1);
                std::int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                S fx = u - S(x0), fy = v - S(y0);
                S w00 = (S(1) - fx) * (S(1) - fy), w01 = fx * (S(1) - fy);
                S w10 = (S(1) - fx) * fy, w11 = fx * fy;
                S du = S(0), dv = S(0);
                for (std::int64_t c = 0; c < d; ++c) {
                    S g = n_.grad[i * d + c];
                    if (g == S(0)) continue;
                    const S* fc = f.data() + c * HW;
                    if (wf) {
                        S* gfc = gf->data() + c * HW;
                        gfc[y0 * W + x0] += g * w00;
                        gfc[y0 * W + x1] += g * w01;
                        gfc[y1 * W + x0] += g * w10;
                        gfc[y1 * W + x1] += g * w11;
                    }
                    if (wp) {
                        du += g * ((fc[y0 * W + x1] - fc[y0 * W + x0]) * (S(1) - fy) +
                                   (fc[y1 * W + x1] - fc[y1 * W + x0]) * fy);
                        dv += g * ((fc[y1 * W + x0] - fc[y0 * W + x0]) * (S(1) - fx) +
                                   (fc[y1 * W + x1] - fc[y0 * W + x1]) * fx);
                    }
                }
                if (wp) {
                    (*gp)[2 * i] += du;
                    (*gp)[2 * i + 1] += dv;
                }
            }
        });
}

// Strided 2D convolution (im2col + GEMM). x [Cin,H,W], w [Cout,Cin,kh,kw],
// b [Cout]; zero padding `pad` on all sides.
template <class S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& w, const Tensor<S>& b, int stride, int pad) {
    if (x.rank() != 3 || w.rank() != 4) shape_error("conv2d", x.shape(), w.shape());
    std::int64_t Cin = x.dim(0), H = x.dim(1), W = x.dim(2);
    std::int64_t Cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
    if (w.dim(1) != Cin) shape_error("conv2d", x.shape(), w.shape());
    std::int64_t Ho = (H + 2 * pad - kh) / stride + 1;
    std::int64_t Wo = (W + 2 * pad - kw) / stride + 1;
    std::int64_t K = Cin * kh * kw, Npix = Ho * Wo;
    // im2col: cols[K, Npix]
    Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cols(K, Npix);
    cols.setZero();
    const S* xp = x.vals().data();
    for (std::int64_t c = 0; c < Cin; ++c)
        for (std::int64_t i = 0; i < kh; ++i)
            for (std::int64_t j = 0; j < kw; ++j) {
                std::int64_t row = (c * kh + i) * kw + j;
                for (std::int64_t oy = 0; oy < Ho; ++oy) {
                    std::int64_t y = oy * stride - pad + i;
                    if (y < 0 || y >= H) continue;
                    for (std::int64_t ox = 0; ox < Wo; ++ox) {
                        std::int64_t xx = ox * stride - pad + j;
                        if (xx < 0 || xx >= W) continue;
                        cols(row, oy * Wo + ox) = xp[(c * H + y) * W + xx];
                    }
                }
            }
    VecX<S> out(Cout * Npix);
    ConstMatMap<S> Wm(w.vals().data(), Cout, K);
    MatMap<S> Om(out.data(), Cout, Npix);
    Om.noalias() = Wm * cols;
    for (std::int64_t c = 0; c < Cout; ++c) Om.row(c).array() += b.vals()[c];
    return detail::make_op<S>(
        "conv2d", {Cout, Ho, Wo}, std::move(out), {x.node(), w.node(), b.node()},
        [=, cols = std::move(cols)](TensorNode<S>& n) {
            auto& px = *n.parents[0];
            auto& pw = *n.parents[1];
            auto& pb = *n.parents[2];
            ConstMatMap<S> G(n.grad.data(), Cout, Npix);
            if (pb.requires_grad) {
                VecX<S>& gb = pb.grad_buf();
                for (std::int64_t c = 0; c < Cout; ++c) gb[c] += G.row(c).sum();
            }
            if (pw.requires_grad) {
                MatMap<S> GW(pw.grad_buf().data(), Cout, K);
                GW.noalias() += G * cols.transpose();
            }
            if (px.requires_grad) {
                ConstMatMap<S> Wm2(pw.vals.data(), Cout, K);
                Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> gcols =
                    Wm2.transpose() * G;
                S* gx = px.grad_buf().data();
                for (std::int64_t c = 0; c < Cin; ++c)
                    for (std::int64_t i = 0; i < kh; ++i)
                        for (std::int64_t j = 0; j < kw; ++j) {
                            std::int64_t row = (c * kh + i) * kw + j;
                            for (std::int64_t oy = 0; oy < Ho; ++oy) {
                                std::int64_t y = oy * stride - pad + i;
                                if (y < 0 || y >= H) continue;
                                for (std::int64_t ox = 0; ox < Wo; ++ox) {
                                    std::int64_t xx = ox * stride - pad + j;
                                    if (xx < 0 || xx >= W) continue;
                                    gx[(c * H + y) * W + xx] += gcols(row, oy * Wo + ox);
                                }
                            }
                        }
            }
        });
}

}  // namespace bevsplat
