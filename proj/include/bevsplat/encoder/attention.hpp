// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Attention building blocks for the Gaussian encoder: multi-head scaled
// dot-product attention with pre-norm residual blocks, and multi-scale
// deformable attention over feature pyramids.

#pragma once

#include "bevsplat/core/nn.hpp"
#include "bevsplat/core/optim.hpp"

namespace bevsplat::enc {

template <class S>
struct LayerNormP {
    Tensor<S> gamma, beta;
    LayerNormP() = default;
    LayerNormP(ParameterStore<S>& st, const std::string& p, std::int64_t d) {
        gamma = st.param(p + ".gamma", {d}, Init<S>::constant(1.0));
        beta = st.param(p + ".beta", {d}, Init<S>::zeros());
    }
    Tensor<S> forward(const Tensor<S>& x) const { return layer_norm(x, gamma, beta); }
};

// Position-wise FFN with pre-norm residual; hidden width 4d.
template <class S>
struct Ffn {
    LayerNormP<S> ln;
    Tensor<S> w1, b1, w2, b2;
    Ffn() = default;
    Ffn(ParameterStore<S>& st, const std::string& p, std::int64_t d) {
        ln = LayerNormP<S>(st, p + ".ln", d);
        w1 = st.param(p + ".w1", {d, 4 * d}, Init<S>::fan_in_uniform(d));
        b1 = st.param(p + ".b1", {4 * d}, Init<S>::zeros());
        w2 = st.param(p + ".w2", {4 * d, d}, Init<S>::fan_in_uniform(4 * d));
        b2 = st.param(p + ".b2", {d}, Init<S>::zeros());
    }
    Tensor<S> forward(const Tensor<S>& x) const {
        return add(x, linear(relu(linear(ln.forward(x), w1, b1)), w2, b2));
    }
};

template <class S>
struct MultiHeadAttention {
    std::int64_t d = 0, heads = 1;
    Tensor<S> wq, bq, wk, bk, wv, bv, wo, bo;

    MultiHeadAttention() = default;
    MultiHeadAttention(ParameterStore<S>& st, const std::string& p, std::int64_t dim,
                       std::int64_t h)
        : d(dim), heads(h) {
        if (d % heads != 0)
            throw std::invalid_argument("attention: feature dim must be divisible by heads");
        wq = st.param(p + ".wq", {d, d}, Init<S>::fan_in_uniform(d));
        bq = st.param(p + ".bq", {d}, Init<S>::zeros());
        wk = st.param(p + ".wk", {d, d}, Init<S>::fan_in_uniform(d));
        bk = st.param(p + ".bk", {d}, Init<S>::zeros());
        wv = st.param(p + ".wv", {d, d}, Init<S>::fan_in_uniform(d));
        bv = st.param(p + ".bv", {d}, Init<S>::zeros());
        wo = st.param(p + ".wo", {d, d}, Init<S>::fan_in_uniform(d));
        bo = st.param(p + ".bo", {d}, Init<S>::zeros());
    }

    // Pre-residual attention output; per-head weights softmax over the keys.
    Tensor<S> attend(const Tensor<S>& q_in, const Tensor<S>& k_in, const Tensor<S>& v_in) const {
        std::int64_t dh = d / heads;
        Tensor<S> q = linear(q_in, wq, bq);
        Tensor<S> k = linear(k_in, wk, bk);
        Tensor<S> v = linear(v_in, wv, bv);
        std::vector<Tensor<S>> outs;
        S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
        for (std::int64_t h = 0; h < heads; ++h) {
            Tensor<S> qh = slice_last(q, h * dh, dh);
            Tensor<S> kh = slice_last(k, h * dh, dh);
            Tensor<S> vh = slice_last(v, h * dh, dh);
            Tensor<S> scores = matmul(qh, transpose_last(kh)) * scale;
            outs.push_back(matmul(softmax(scores, -1), vh));
        }
        return linear(concat(outs, -1), wo, bo);
    }
};

// Pre-norm residual attention block: cross and self variants plus the FFN.
template <class S>
struct AttnBlock {
    LayerNormP<S> ln;
    MultiHeadAttention<S> attn;
    Ffn<S> ffn;

    AttnBlock() = default;
    AttnBlock(ParameterStore<S>& st, const std::string& p, std::int64_t d, std::int64_t heads)
        : ln(st, p + ".ln", d), attn(st, p + ".attn", d, heads), ffn(st, p + ".ffn", d) {}

    // keys/values are raw features; positional terms are added to keys only.
    Tensor<S> forward_cross(const Tensor<S>& x, const Tensor<S>& keys,
                            const Tensor<S>& key_pos = {}) const {
        Tensor<S> xn = ln.forward(x);
        Tensor<S> k_in = key_pos.defined() ? add(keys, key_pos) : keys;
        Tensor<S> y = add(x, attn.attend(xn, k_in, keys));
        return ffn.forward(y);
    }

    // positional embedding added to queries and keys, not values
    Tensor<S> forward_self(const Tensor<S>& x, const Tensor<S>& pos) const {
        Tensor<S> xn = ln.forward(x);
        Tensor<S> xp = pos.defined() ? add(xn, pos) : xn;
        Tensor<S> y = add(x, attn.attend(xp, xp, xn));
        return ffn.forward(y);
    }
};

// Fused multi-scale deformable sampling: one graph node computes the
// head-concatenated weighted samples for every (query point, head, level,
// slot) with an analytic backward to the value maps, the reference pixels,
// the offsets and the weights. Keeps the graph small and the loops tight.
//
// value_maps: L x [d, H_l, W_l]; pix: L x [N, 2] level pixel coords per
// point; offsets: [P, h*L*K*2]; weights: [P, h*L*K] (already softmaxed);
// N = P * n_pts. Returns [N, d].
template <class S>
Tensor<S> deformable_aggregate(const std::vector<Tensor<S>>& value_maps,
                               const std::vector<Tensor<S>>& pix, const Tensor<S>& offsets,
                               const Tensor<S>& weights, std::int64_t n_pts, std::int64_t heads,
                               std::int64_t K) {
    std::int64_t L = static_cast<std::int64_t>(value_maps.size());
    std::int64_t d = value_maps[0].dim(0);
    std::int64_t P = offsets.dim(0);
    std::int64_t N = P * n_pts;
    std::int64_t dh = d / heads;
    if (weights.dim(0) != P || offsets.dim(1) != heads * L * K * 2 ||
        weights.dim(1) != heads * L * K)
        shape_error("deformable_aggregate", offsets.shape(), weights.shape());
    for (auto& px : pix)
        if (px.dim(0) != N) shape_error("deformable_aggregate", px.shape(), {N, 2});

    std::vector<std::int64_t> Hs(static_cast<size_t>(L)), Ws(static_cast<size_t>(L));
    for (std::int64_t l = 0; l < L; ++l) {
        Hs[size_t(l)] = value_maps[size_t(l)].dim(1);
        Ws[size_t(l)] = value_maps[size_t(l)].dim(2);
    }
    VecX<S> out = VecX<S>::Zero(N * d);
    const S* offp = offsets.vals().data();
    const S* wtp = weights.vals().data();
    for (std::int64_t n = 0; n < N; ++n) {
        std::int64_t p = n / n_pts;
        S* orow = out.data() + n * d;
        for (std::int64_t l = 0; l < L; ++l) {
            const S* map = value_maps[size_t(l)].vals().data();
            const S* pxy = pix[size_t(l)].vals().data() + n * 2;
            std::int64_t H = Hs[size_t(l)], W = Ws[size_t(l)], HW = H * W;
            for (std::int64_t h = 0; h < heads; ++h) {
                for (std::int64_t k = 0; k < K; ++k) {
                    std::int64_t slot = (h * L + l) * K + k;
                    S u = pxy[0] + offp[p * heads * L * K * 2 + slot * 2];
                    S v = pxy[1] + offp[p * heads * L * K * 2 + slot * 2 + 1];
                    if (!(u >= S(0) && u <= S(W - 1) && v >= S(0) && v <= S(H - 1))) continue;
                    S w = wtp[p * heads * L * K + slot];
                    std::int64_t x0 = std::min(static_cast<std::int64_t>(std::floor(u)), W - 1);
                    std::int64_t y0 = std::min(static_cast<std::int64_t>(std::floor(v)), H - 1);
                    std::int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                    S fx = u - S(x0), fy = v - S(y0);
                    S w00 = w * (S(1) - fx) * (S(1) - fy), w01 = w * fx * (S(1) - fy);
                    S w10 = w * (S(1) - fx) * fy, w11 = w * fx * fy;
                    const S* base = map + h * dh * HW;
                    std::int64_t i00 = y0 * W + x0, i01 = y0 * W + x1;
                    std::int64_t i10 = y1 * W + x0, i11 = y1 * W + x1;
                    S* oh = orow + h * dh;
                    for (std::int64_t c = 0; c < dh; ++c) {
                        const S* mc = base + c * HW;
                        oh[c] += w00 * mc[i00] + w01 * mc[i01] + w10 * mc[i10] + w11 * mc[i11];
                    }
                }
            }
        }
    }
    std::vector<std::shared_ptr<TensorNode<S>>> parents;
    for (auto& m : value_maps) parents.push_back(m.node());
    for (auto& px : pix) parents.push_back(px.node());
    parents.push_back(offsets.node());
    parents.push_back(weights.node());
    auto bwd = [L, d, P, N, n_pts, dh, heads, K, Hs, Ws](TensorNode<S>& node) {
        auto& poff = *node.parents[static_cast<size_t>(2 * L)];
        auto& pwt = *node.parents[static_cast<size_t>(2 * L + 1)];
        const S* offp = poff.vals.data();
        const S* wtp = pwt.vals.data();
        VecX<S>* goff = poff.requires_grad ? &poff.grad_buf() : nullptr;
        VecX<S>* gwt = pwt.requires_grad ? &pwt.grad_buf() : nullptr;
        for (std::int64_t n = 0; n < N; ++n) {
            std::int64_t p = n / n_pts;
            const S* grow = node.grad.data() + n * d;
            for (std::int64_t l = 0; l < L; ++l) {
                auto& pmap = *node.parents[static_cast<size_t>(l)];
                auto& ppix = *node.parents[static_cast<size_t>(L + l)];
                const S* map = pmap.vals.data();
                const S* pxy = ppix.vals.data() + n * 2;
                VecX<S>* gmap = pmap.requires_grad ? &pmap.grad_buf() : nullptr;
                VecX<S>* gpix = ppix.requires_grad ? &ppix.grad_buf() : nullptr;
                std::int64_t H = Hs[size_t(l)], W = Ws[size_t(l)], HW = H * W;
                S du_total = S(0), dv_total = S(0);
                for (std::int64_t h = 0; h < heads; ++h) {
                    for (std::int64_t k = 0; k < K; ++k) {
                        std::int64_t slot = (h * L + l) * K + k;
                        S u = pxy[0] + offp[p * heads * L * K * 2 + slot * 2];
                        S v = pxy[1] + offp[p * heads * L * K * 2 + slot * 2 + 1];
                        if (!(u >= S(0) && u <= S(W - 1) && v >= S(0) && v <= S(H - 1))) continue;
                        S w = wtp[p * heads * L * K + slot];
                        std::int64_t x0 = std::min(static_cast<std::int64_t>(std::floor(u)), W - 1);
                        std::int64_t y0 = std::min(static_cast<std::int64_t>(std::floor(v)), H - 1);
                        std::int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                        S fx = u - S(x0), fy = v - S(y0);
                        S b00 = (S(1) - fx) * (S(1) - fy), b01 = fx * (S(1) - fy);
                        S b10 = (S(1) - fx) * fy, b11 = fx * fy;
                        const S* base = map + h * dh * HW;
                        S* gbase = gmap ? gmap->data() + h * dh * HW : nullptr;
                        std::int64_t i00 = y0 * W + x0, i01 = y0 * W + x1;
                        std::int64_t i10 = y1 * W + x0, i11 = y1 * W + x1;
                        const S* gh = grow + h * dh;
                        S gw = S(0), du = S(0), dv = S(0);
                        for (std::int64_t c = 0; c < dh; ++c) {
                            S g = gh[c];
                            if (g == S(0)) continue;
                            const S* mc = base + c * HW;
                            S s00 = mc[i00], s01 = mc[i01], s10 = mc[i10], s11 = mc[i11];
                            gw += g * (b00 * s00 + b01 * s01 + b10 * s10 + b11 * s11);
                            if (gbase) {
                                S* gc = gbase + c * HW;
                                gc[i00] += g * w * b00;
                                gc[i01] += g * w * b01;
                                gc[i10] += g * w * b10;
                                gc[i11] += g * w * b11;
                            }
                            du += g * w *
                                  ((s01 - s00) * (S(1) - fy) + (s11 - s10) * fy);
                            dv += g * w *
                                  ((s10 - s00) * (S(1) - fx) + (s11 - s01) * fx);
                        }
                        if (gwt) (*gwt)[p * heads * L * K + slot] += gw;
                        if (goff) {
                            (*goff)[p * heads * L * K * 2 + slot * 2] += du;
                            (*goff)[p * heads * L * K * 2 + slot * 2 + 1] += dv;
                        }
                        du_total += du;
                        dv_total += dv;
                    }
                }
                if (gpix) {
                    (*gpix)[n * 2] += du_total;
                    (*gpix)[n * 2 + 1] += dv_total;
                }
            }
        }
    };
    return detail::make_op<S>("deformable_aggregate", {N, d}, std::move(out), std::move(parents),
                              std::move(bwd));
}

// Multi-scale deformable attention. Offsets and per-slot weights are
// predicted from the query feature (zero-initialized: offsets start at the
// reference point, weights uniform). The output projection is bias-free so
// fully out-of-range points contribute exactly nothing.
template <class S>
struct DeformableAttention {
    std::int64_t d = 0, heads = 1, levels = 1, points = 1;  // points = K
    Tensor<S> w_off, b_off, w_wt, b_wt;
    std::vector<Tensor<S>> w_val, b_val;
    Tensor<S> w_out;

    DeformableAttention() = default;
    DeformableAttention(ParameterStore<S>& st, const std::string& p, std::int64_t dim,
                        std::int64_t h, std::int64_t n_levels, std::int64_t k)
        : d(dim), heads(h), levels(n_levels), points(k) {
        if (d % heads != 0)
            throw std::invalid_argument("deformable attention: dim must be divisible by heads");
        std::int64_t slots = heads * levels * points;
        w_off = st.param(p + ".w_off", {d, slots * 2}, Init<S>::zeros());
        b_off = st.param(p + ".b_off", {slots * 2}, Init<S>::zeros());
        w_wt = st.param(p + ".w_wt", {d, slots}, Init<S>::zeros());
        b_wt = st.param(p + ".b_wt", {slots}, Init<S>::zeros());
        for (std::int64_t l = 0; l < levels; ++l) {
            w_val.push_back(st.param(p + ".w_val" + std::to_string(l), {d, d},
                                     Init<S>::fan_in_uniform(d)));
            b_val.push_back(st.param(p + ".b_val" + std::to_string(l), {d}, Init<S>::zeros()));
        }
        w_out = st.param(p + ".w_out", {d, d}, Init<S>::fan_in_uniform(d));
    }

    // Pixel-wise value projection of a [d, H, W] map.
    Tensor<S> project_values(const Tensor<S>& map, std::int64_t level) const {
        std::int64_t H = map.dim(1), W = map.dim(2);
        Tensor<S> flat = transpose_last(reshape(map, {d, H * W}));  // [HW, d]
        Tensor<S> proj = linear(flat, w_val[static_cast<size_t>(level)],
                                b_val[static_cast<size_t>(level)]);
        return reshape(transpose_last(proj), {d, H, W});
    }

    // Head-concatenated weighted samples per point, before the output
    // projection: query [P, d], pix[l] holds level-l pixel coords [P*n_pts, 2]
    // (differentiable), value_maps[l] the projected [d, H_l, W_l] maps.
    Tensor<S> aggregate(const Tensor<S>& query, std::int64_t n_pts,
                        const std::vector<Tensor<S>>& pix,
                        const std::vector<Tensor<S>>& value_maps) const {
        Tensor<S> off = linear(query, w_off, b_off);
        Tensor<S> wt = reshape(
            softmax(reshape(linear(query, w_wt, b_wt), {query.dim(0), heads, levels * points}),
                    -1),
            {query.dim(0), heads * levels * points});
        return deformable_aggregate(value_maps, pix, off, wt, n_pts, heads, points);
    }

    // Full per-point deformable attention: output-projected and masked.
    // Returns [P, n_pts, d]; callers reduce over the points axis.
    Tensor<S> forward(const Tensor<S>& query, std::int64_t n_pts,
                      const std::vector<Tensor<S>>& pix, const std::vector<Tensor<S>>& value_maps,
                      const Tensor<S>& point_valid = {}) const {
        std::int64_t P = query.dim(0);
        Tensor<S> agg = aggregate(query, n_pts, pix, value_maps);
        Tensor<S> out = matmul(agg, w_out);  // bias-free
        if (point_valid.defined()) out = mul(out, point_valid);
        return reshape(out, {P, n_pts, d});
    }
};

}  // namespace bevsplat::enc
