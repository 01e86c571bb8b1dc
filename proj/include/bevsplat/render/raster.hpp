// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Differentiable probabilistic Gaussian-superposition rendering of semantic
// BEV maps. Two paths share the per-contribution arithmetic bit for bit:
//   - naive: every pixel tests every Gaussian against the alpha cutoff;
//   - tiled: Gaussians are binned to the tiles their cutoff ellipse's
//     bounding box overlaps, pixels test only binned Gaussians.
// Both iterate contributors in ascending Gaussian index, so the fast path
// reproduces the reference exactly under a matching cutoff.
//
// The whole raster is one graph node with a hand-derived backward to all
// Gaussian fields (means, scale/rotation/prior parameters, logits).

#pragma once

#include "bevsplat/core/parallel.hpp"
#include "bevsplat/scene/gaussian.hpp"

#include <numbers>

namespace bevsplat::raster {

using scene::GaussianSet;
using scene::SceneBounds;

struct RasterConfig {
    std::int64_t h = 64, w = 64;
    double resolution = 0.75;      // meters per pixel
    double cutoff = std::exp(-4.5);  // alpha cutoff; 0 disables culling
    std::int64_t tile = 16;        // tile edge in pixels for the fast path

    void validate() const {
        if (h < 1 || w < 1) throw std::invalid_argument("raster: h and w must be >= 1");
        if (!(cutoff >= 0.0 && cutoff < 1.0))
            throw std::invalid_argument("raster: cutoff must lie in [0, 1)");
        if (tile < 1) throw std::invalid_argument("raster: tile must be >= 1");
        if (!(resolution > 0)) throw std::invalid_argument("raster: resolution must be positive");
    }
};

enum class RenderPath { Naive, Tiled };

// Rendered map plus grid metadata. grid is [H, W, C+1] with channel 0 the
// background probability; channels sum to 1 per pixel.
template <class S>
struct SemanticBevMap {
    Tensor<S> grid;
    double resolution = 0;
    std::array<double, 2> origin{};  // BEV coordinate of pixel (0,0) center
    std::int64_t underflow_pixels = 0;  // pixels that fell back to uniform weights
};

// Value-level Gaussian (post-activation fields), the unit the scalar ops
// below operate on.
template <class S>
struct Gaussian2D {
    Eigen::Matrix<S, 2, 1> m;
    Eigen::Matrix<S, 2, 1> s;  // strictly positive
    Eigen::Matrix<S, 2, 1> r;  // unit norm (cos t, sin t)
    VecX<S> c;                 // semantic logits [C]
    S a = S(0.5);              // existence prior in (0,1)
};

// alpha(x; G) = exp(-1/2 (x-m)^T Sigma^-1 (x-m))
template <class S>
S alpha(const Eigen::Matrix<S, 2, 1>& x, const Gaussian2D<S>& g) {
    auto cov = scene::covariance(g.s(0), g.s(1), g.r(0), g.r(1));
    S det = cov(0, 0) * cov(1, 1) - cov(0, 1) * cov(1, 0);
    Eigen::Matrix<S, 2, 1> d = x - g.m;
    S q = (cov(1, 1) * d(0) * d(0) - S(2) * cov(0, 1) * d(0) * d(1) + cov(0, 0) * d(1) * d(1)) / det;
    return std::exp(S(-0.5) * q);
}

// 2D normal density: alpha / (2*pi*|Sigma|^{1/2}); |Sigma|^{1/2} = s1*s2.
// The normalizer cancels in the superposition ratio, so only the 2D power
// of 2*pi is used.
template <class S>
S gaussian_pdf(const Eigen::Matrix<S, 2, 1>& x, const Gaussian2D<S>& g) {
    return alpha(x, g) / (S(2) * static_cast<S>(std::numbers::pi) * g.s(0) * g.s(1));
}

// o(x) = sum_i w_i c_i with w_i = pdf_i a_i / sum_j pdf_j a_j. When every
// weight underflows to zero the weights fall back to uniform and
// *underflow is bumped.
template <class S>
VecX<S> superpose(const Eigen::Matrix<S, 2, 1>& x, const std::vector<Gaussian2D<S>>& gs,
                  std::int64_t* underflow = nullptr) {
    if (gs.empty()) throw std::invalid_argument("superpose: need at least one Gaussian");
    std::int64_t C = gs[0].c.size();
    VecX<S> o = VecX<S>::Zero(C);
    S wsum = S(0);
    std::vector<S> w(gs.size());
    for (size_t i = 0; i < gs.size(); ++i) {
        w[i] = gaussian_pdf(x, gs[i]) * gs[i].a;
        wsum += w[i];
    }
    if (wsum == S(0)) {
        if (underflow) ++*underflow;
        for (auto& g : gs) o += g.c;
        return o / S(gs.size());
    }
    for (size_t i = 0; i < gs.size(); ++i) o += (w[i] / wsum) * gs[i].c;
    return o;
}

namespace detail_render {

// Per-Gaussian quantities precomputed from the parameter-space inputs.
template <class S>
struct Prep {
    S mx, my;
    S a00, a01, a11;  // inverse covariance
    S norm;           // 1 / (2 pi s1 s2)
    S prior;          // sigmoid of the prior parameter
    // retained for the backward chain
    S s1, s2, sp1, sp2;
    S rc, rs;      // normalized rotation
    S rr0, rr1;    // raw rotation
    S inv_rnorm;   // 1/||raw||
    S pp;          // prior parameter
};

template <class S>
std::vector<Prep<S>> prepare(const VecX<S>& means, const VecX<S>& scale_param,
                             const VecX<S>& rot_raw, const VecX<S>& prior_param, std::int64_t P) {
    std::vector<Prep<S>> ps(static_cast<size_t>(P));
    for (std::int64_t i = 0; i < P; ++i) {
        Prep<S>& p = ps[static_cast<size_t>(i)];
        p.mx = means[2 * i];
        p.my = means[2 * i + 1];
        p.sp1 = scale_param[2 * i];
        p.sp2 = scale_param[2 * i + 1];
        auto splus = [](S v) {
            return std::max(v, S(0)) + std::log1p(std::exp(-std::abs(v)));
        };
        p.s1 = splus(p.sp1);
        p.s2 = splus(p.sp2);
        p.rr0 = rot_raw[2 * i];
        p.rr1 = rot_raw[2 * i + 1];
        p.inv_rnorm = S(1) / std::sqrt(p.rr0 * p.rr0 + p.rr1 * p.rr1 + S(1e-24));
        p.rc = p.rr0 * p.inv_rnorm;
        p.rs = p.rr1 * p.inv_rnorm;
        S l1 = p.s1 * p.s1, l2 = p.s2 * p.s2;
        S c2 = p.rc * p.rc, s2q = p.rs * p.rs, cs = p.rc * p.rs;
        S sig00 = c2 * l1 + s2q * l2;
        S sig01 = cs * (l1 - l2);
        S sig11 = s2q * l1 + c2 * l2;
        S det = l1 * l2;  // det(Sigma) = (s1 s2)^2 exactly
        p.a00 = sig11 / det;
        p.a01 = -sig01 / det;
        p.a11 = sig00 / det;
        p.norm = S(1) / (S(2) * static_cast<S>(std::numbers::pi) * p.s1 * p.s2);
        p.pp = prior_param[i];
        p.prior = p.pp >= S(0) ? S(1) / (S(1) + std::exp(-p.pp))
                               : std::exp(p.pp) / (S(1) + std::exp(p.pp));
    }
    return ps;
}

template <class S>
inline S alpha_at(const Prep<S>& p, S x, S y) {
    S dx = x - p.mx, dy = y - p.my;
    S q = p.a00 * dx * dx + S(2) * p.a01 * dx * dy + p.a11 * dy * dy;
    return std::exp(S(-0.5) * q);
}

// Tile bins: ascending Gaussian index per tile by construction.
template <class S>
std::vector<std::vector<std::int32_t>> bin_gaussians(const std::vector<Prep<S>>& ps,
                                                     const SceneBounds& b, const RasterConfig& cfg,
                                                     std::int64_t tx, std::int64_t ty) {
    std::vector<std::vector<std::int32_t>> bins(static_cast<size_t>(tx * ty));
    bool cull = cfg.cutoff > 0.0;
    double k = cull ? std::sqrt(-2.0 * std::log(cfg.cutoff)) : 0.0;
    for (std::int32_t i = 0; i < static_cast<std::int32_t>(ps.size()); ++i) {
        std::int64_t jx0 = 0, jx1 = tx - 1, jy0 = 0, jy1 = ty - 1;
        if (cull) {
            const Prep<S>& p = ps[static_cast<size_t>(i)];
            // Sigma diagonal from the inverse: var_x = a11/det(A), det(A) = 1/det(Sigma)
            S detA = p.a00 * p.a11 - p.a01 * p.a01;
            double varx = static_cast<double>(p.a11 / detA);
            double vary = static_cast<double>(p.a00 / detA);
            double hx = k * std::sqrt(std::max(0.0, varx)) + cfg.resolution;  // +1px margin
            double hy = k * std::sqrt(std::max(0.0, vary)) + cfg.resolution;
            double pxc = (static_cast<double>(p.mx) - b.x_min) / cfg.resolution - 0.5;
            double pyc = (static_cast<double>(p.my) - b.y_min) / cfg.resolution - 0.5;
            double hpx = hx / cfg.resolution, hpy = hy / cfg.resolution;
            std::int64_t px0 = static_cast<std::int64_t>(std::floor(pxc - hpx));
            std::int64_t px1 = static_cast<std::int64_t>(std::ceil(pxc + hpx));
            std::int64_t py0 = static_cast<std::int64_t>(std::floor(pyc - hpy));
            std::int64_t py1 = static_cast<std::int64_t>(std::ceil(pyc + hpy));
            if (px1 < 0 || py1 < 0 || px0 > cfg.w - 1 || py0 > cfg.h - 1) continue;
            jx0 = std::max<std::int64_t>(0, px0 / cfg.tile);
            jx1 = std::min(tx - 1, std::max<std::int64_t>(0, px1) / cfg.tile);
            jy0 = std::max<std::int64_t>(0, py0 / cfg.tile);
            jy1 = std::min(ty - 1, std::max<std::int64_t>(0, py1) / cfg.tile);
        }
        for (std::int64_t jy = jy0; jy <= jy1; ++jy)
            for (std::int64_t jx = jx0; jx <= jx1; ++jx)
                bins[static_cast<size_t>(jy * tx + jx)].push_back(i);
    }
    return bins;
}

// Forward for one pixel over a contributor candidate list (ascending index).
// Returns number of contributors; fills alphas/weights/indices scratch.
template <class S>
struct PixelScratch {
    std::vector<std::int32_t> idx;
    std::vector<S> al;
    std::vector<S> wt;  // norm * alpha * prior per contributor
};

template <class S, class List>
inline void forward_pixel(const std::vector<Prep<S>>& ps, const List& cand, S cutoff, S x, S y,
                          const S* logits, std::int64_t C, PixelScratch<S>& scr, S* out_pixel,
                          VecX<S>& o_buf, VecX<S>& sm_buf, bool& underflowed) {
    scr.idx.clear();
    scr.al.clear();
    scr.wt.clear();
    S pb = S(1);
    S wsum = S(0);
    for (auto gi : cand) {
        const Prep<S>& p = ps[static_cast<size_t>(gi)];
        S a = alpha_at(p, x, y);
        if (!(a >= cutoff)) continue;
        scr.idx.push_back(gi);
        scr.al.push_back(a);
        S w = p.norm * a * p.prior;
        scr.wt.push_back(w);
        pb *= (S(1) - a);
        wsum += w;
    }
    std::int64_t n = static_cast<std::int64_t>(scr.idx.size());
    o_buf.setZero();
    underflowed = false;
    if (n > 0) {
        if (wsum == S(0)) {
            underflowed = true;
            for (std::int64_t j = 0; j < n; ++j)
                for (std::int64_t c = 0; c < C; ++c)
                    o_buf[c] += logits[scr.idx[static_cast<size_t>(j)] * C + c];
            o_buf /= S(n);
        } else {
            for (std::int64_t j = 0; j < n; ++j) {
                S w = scr.wt[static_cast<size_t>(j)] / wsum;
                const S* ci = logits + scr.idx[static_cast<size_t>(j)] * C;
                for (std::int64_t c = 0; c < C; ++c) o_buf[c] += w * ci[c];
            }
        }
    }
    // softmax with max subtraction
    S mx = o_buf.maxCoeff();
    S z = S(0);
    for (std::int64_t c = 0; c < C; ++c) {
        sm_buf[c] = std::exp(o_buf[c] - mx);
        z += sm_buf[c];
    }
    sm_buf /= z;
    out_pixel[0] = pb;
    for (std::int64_t c = 0; c < C; ++c) out_pixel[1 + c] = (S(1) - pb) * sm_buf[c];
}

// Per-Gaussian intermediate gradients accumulated across pixels.
template <class S>
struct GradAccum {
    VecX<S> gm;     // [P*2]
    VecX<S> gA;     // [P*3] d/d a00, a01 (full sym), a11
    VecX<S> gnorm;  // [P]
    VecX<S> gprior; // [P]
    VecX<S> glog;   // [P*C]
    explicit GradAccum(std::int64_t P, std::int64_t C)
        : gm(VecX<S>::Zero(P * 2)),
          gA(VecX<S>::Zero(P * 3)),
          gnorm(VecX<S>::Zero(P)),
          gprior(VecX<S>::Zero(P)),
          glog(VecX<S>::Zero(P * C)) {}
    void add(const GradAccum& o) {
        gm += o.gm;
        gA += o.gA;
        gnorm += o.gnorm;
        gprior += o.gprior;
        glog += o.glog;
    }
};

// Backward for one pixel; mirrors forward_pixel's contributor set.
template <class S, class List>
inline void backward_pixel(const std::vector<Prep<S>>& ps, const List& cand, S cutoff, S x, S y,
                           const S* logits, std::int64_t C, const S* gout, PixelScratch<S>& scr,
                           VecX<S>& o_buf, VecX<S>& sm_buf, GradAccum<S>& acc) {
    bool underflowed = false;
    // recompute forward state
    VecX<S> pix(C + 1);
    forward_pixel(ps, cand, cutoff, x, y, logits, C, scr, pix.data(), o_buf, sm_buf, underflowed);
    S pb = pix[0];
    std::int64_t n = static_cast<std::int64_t>(scr.idx.size());
    // d loss / d p_b and d loss / d o
    S gdot = S(0);
    for (std::int64_t c = 0; c < C; ++c) gdot += gout[1 + c] * sm_buf[c];
    S gpb = gout[0] - gdot;
    VecX<S> gsm(C);
    for (std::int64_t c = 0; c < C; ++c) gsm[c] = (S(1) - pb) * gout[1 + c];
    S sdot = S(0);
    for (std::int64_t c = 0; c < C; ++c) sdot += gsm[c] * sm_buf[c];
    VecX<S> go(C);
    for (std::int64_t c = 0; c < C; ++c) go[c] = sm_buf[c] * (gsm[c] - sdot);

    if (n == 0) return;

    // leave-one-out products for d p_b / d alpha_i
    std::int64_t zeros = 0;
    S pnz = S(1);
    for (std::int64_t j = 0; j < n; ++j) {
        S f = S(1) - scr.al[static_cast<size_t>(j)];
        if (f == S(0))
            ++zeros;
        else
            pnz *= f;
    }
    S wsum = S(0);
    for (std::int64_t j = 0; j < n; ++j) wsum += scr.wt[static_cast<size_t>(j)];

    for (std::int64_t j = 0; j < n; ++j) {
        std::int32_t gi = scr.idx[static_cast<size_t>(j)];
        const Prep<S>& p = ps[static_cast<size_t>(gi)];
        S a = scr.al[static_cast<size_t>(j)];
        S f = S(1) - a;
        S loo = zeros == 0 ? pb / f : (zeros == 1 && f == S(0) ? pnz : S(0));
        S galpha = -gpb * loo;

        const S* ci = logits + gi * C;
        if (wsum != S(0)) {
            S w = scr.wt[static_cast<size_t>(j)] / wsum;
            // d o / d logits and d o / d wtilde
            S gw = S(0);
            for (std::int64_t c = 0; c < C; ++c) {
                acc.glog[gi * C + c] += go[c] * w;
                gw += go[c] * (ci[c] - o_buf[c]);
            }
            gw /= wsum;
            acc.gnorm[gi] += gw * a * p.prior;
            acc.gprior[gi] += gw * p.norm * a;
            galpha += gw * p.norm * p.prior;
        } else {
            // uniform fallback: weights constant, logits still receive gradient
            for (std::int64_t c = 0; c < C; ++c) acc.glog[gi * C + c] += go[c] / S(n);
        }

        // alpha = exp(-q/2)
        S gq = S(-0.5) * a * galpha;
        S dx = x - p.mx, dy = y - p.my;
        // q = a00 dx^2 + 2 a01 dx dy + a11 dy^2
        acc.gm[2 * gi] += -gq * (S(2) * p.a00 * dx + S(2) * p.a01 * dy);
        acc.gm[2 * gi + 1] += -gq * (S(2) * p.a01 * dx + S(2) * p.a11 * dy);
        acc.gA[3 * gi] += gq * dx * dx;
        acc.gA[3 * gi + 1] += gq * S(2) * dx * dy;
        acc.gA[3 * gi + 2] += gq * dy * dy;
    }
}

// Chain the per-Gaussian intermediate gradients into the parameter-space
// inputs (scale softplus, rotation normalization, prior sigmoid, A -> Sigma).
template <class S>
void chain_to_params(const std::vector<Prep<S>>& ps, const GradAccum<S>& acc, VecX<S>* g_means,
                     VecX<S>* g_scale, VecX<S>* g_rot, VecX<S>* g_prior, VecX<S>* g_logits,
                     std::int64_t C) {
    std::int64_t P = static_cast<std::int64_t>(ps.size());
    for (std::int64_t i = 0; i < P; ++i) {
        const Prep<S>& p = ps[static_cast<size_t>(i)];
        if (g_means) {
            (*g_means)[2 * i] += acc.gm[2 * i];
            (*g_means)[2 * i + 1] += acc.gm[2 * i + 1];
        }
        if (g_logits)
            for (std::int64_t c = 0; c < C; ++c) (*g_logits)[i * C + c] += acc.glog[i * C + c];
        if (g_prior) {
            S da = p.prior * (S(1) - p.prior);
            (*g_prior)[i] += acc.gprior[i] * da;
        }
        if (!g_scale && !g_rot) continue;
        // dL/dSigma = -A GA A  (A symmetric)
        Eigen::Matrix<S, 2, 2> A;
        A << p.a00, p.a01, p.a01, p.a11;
        Eigen::Matrix<S, 2, 2> GA;
        GA << acc.gA[3 * i], acc.gA[3 * i + 1] / S(2), acc.gA[3 * i + 1] / S(2), acc.gA[3 * i + 2];
        // gA[1] held dq/d(a01 with the 2x factor); as a full symmetric matrix
        // entry each off-diagonal carries half of it.
        Eigen::Matrix<S, 2, 2> GS = -(A * GA * A);
        Eigen::Matrix<S, 2, 2> R;
        R << p.rc, -p.rs, p.rs, p.rc;
        Eigen::Matrix<S, 2, 2> D = Eigen::Matrix<S, 2, 2>::Zero();
        D(0, 0) = p.s1 * p.s1;
        D(1, 1) = p.s2 * p.s2;
        // Sigma = R D R^T
        Eigen::Matrix<S, 2, 2> RtGR = R.transpose() * GS * R;
        S gs1 = RtGR(0, 0) * S(2) * p.s1;
        S gs2 = RtGR(1, 1) * S(2) * p.s2;
        // norm = 1/(2 pi s1 s2)
        gs1 += acc.gnorm[i] * (-p.norm / p.s1);
        gs2 += acc.gnorm[i] * (-p.norm / p.s2);
        if (g_scale) {
            auto dsplus = [](S v) {
                return v >= S(0) ? S(1) / (S(1) + std::exp(-v))
                                 : std::exp(v) / (S(1) + std::exp(v));
            };
            (*g_scale)[2 * i] += gs1 * dsplus(p.sp1);
            (*g_scale)[2 * i + 1] += gs2 * dsplus(p.sp2);
        }
        if (g_rot) {
            Eigen::Matrix<S, 2, 2> GR = S(2) * GS * R * D;
            S grc = GR(0, 0) + GR(1, 1);
            S grs = GR(1, 0) - GR(0, 1);
            // through r = raw/||raw||
            S dotp = grc * p.rc + grs * p.rs;
            (*g_rot)[2 * i] += (grc - p.rc * dotp) * p.inv_rnorm;
            (*g_rot)[2 * i + 1] += (grs - p.rs * dotp) * p.inv_rnorm;
        }
    }
}

}  // namespace detail_render

// Renders the set into an [H, W, C+1] probability raster; differentiable in
// every Gaussian field. `path` selects the per-pixel loop; outputs agree
// exactly for a common cutoff.
template <class S>
SemanticBevMap<S> render(const GaussianSet<S>& set, const SceneBounds& bounds,
                         const RasterConfig& cfg, RenderPath path = RenderPath::Tiled) {
    using namespace detail_render;
    cfg.validate();
    bounds.validate();
    std::int64_t P = set.count(), C = set.classes();
    std::int64_t H = cfg.h, W = cfg.w;
    if (C < 1) throw std::invalid_argument("render: need at least one semantic class");
    auto ps = prepare<S>(set.means.vals(), set.scale_param.vals(), set.rot_raw.vals(),
                         set.prior_param.vals(), P);
    const S cutoff = static_cast<S>(cfg.cutoff);
    const S* logits = set.logits.vals().data();
    VecX<S> out(H * W * (C + 1));
    std::int64_t underflow_total = 0;

    auto px_x = [x_min = bounds.x_min, res = cfg.resolution](std::int64_t j) {
        return static_cast<S>(x_min + (static_cast<double>(j) + 0.5) * res);
    };
    auto px_y = [y_min = bounds.y_min, res = cfg.resolution](std::int64_t i) {
        return static_cast<S>(y_min + (static_cast<double>(i) + 0.5) * res);
    };

    std::vector<std::int32_t> all(static_cast<size_t>(P));
    for (std::int32_t i = 0; i < P; ++i) all[static_cast<size_t>(i)] = i;
    std::int64_t tx = (W + cfg.tile - 1) / cfg.tile, ty = (H + cfg.tile - 1) / cfg.tile;
    std::vector<std::vector<std::int32_t>> bins;
    if (path == RenderPath::Tiled) bins = bin_gaussians(ps, bounds, cfg, tx, ty);

    // forward: pixels are written disjointly; tiles (or rows) are independent
    std::int64_t nuc = path == RenderPath::Tiled ? tx * ty : H;
    std::vector<std::int64_t> uf_counts(static_cast<size_t>(nuc), 0);
    auto run_unit = [&](std::int64_t u) {
        PixelScratch<S> scr;
        VecX<S> o_buf(C), sm_buf(C);
        bool uf = false;
        if (path == RenderPath::Tiled) {
            std::int64_t jy = u / tx, jx = u % tx;
            const auto& cand = bins[static_cast<size_t>(u)];
            for (std::int64_t i = jy * cfg.tile; i < std::min(H, (jy + 1) * cfg.tile); ++i)
                for (std::int64_t j = jx * cfg.tile; j < std::min(W, (jx + 1) * cfg.tile); ++j) {
                    forward_pixel(ps, cand, cutoff, px_x(j), px_y(i), logits, C, scr,
                                  out.data() + (i * W + j) * (C + 1), o_buf, sm_buf, uf);
                    if (uf) ++uf_counts[static_cast<size_t>(u)];
                }
        } else {
            for (std::int64_t j = 0; j < W; ++j) {
                forward_pixel(ps, all, cutoff, px_x(j), px_y(u), logits, C, scr,
                              out.data() + (u * W + j) * (C + 1), o_buf, sm_buf, uf);
                if (uf) ++uf_counts[static_cast<size_t>(u)];
            }
        }
    };
    parallel_chunks(nuc, worker_threads(), [&](int, std::int64_t b, std::int64_t e) {
        for (std::int64_t u = b; u < e; ++u) run_unit(u);
    });
    for (auto c : uf_counts) underflow_total += c;

    bool wants_grad = set.means.requires_grad() || set.scale_param.requires_grad() ||
                      set.rot_raw.requires_grad() || set.logits.requires_grad() ||
                      set.prior_param.requires_grad();
    SemanticBevMap<S> map;
    map.resolution = cfg.resolution;
    map.origin = {bounds.x_min + 0.5 * cfg.resolution, bounds.y_min + 0.5 * cfg.resolution};
    map.underflow_pixels = underflow_total;

    if (!wants_grad) {
        map.grid = Tensor<S>::from({H, W, C + 1}, std::move(out));
        return map;
    }

    auto bwd = [ps = std::move(ps), bins = std::move(bins), all = std::move(all), cutoff, path, H,
                W, C, P, tx, cfg, px_x, px_y](TensorNode<S>& n) {
        using namespace detail_render;
        auto& pm = *n.parents[0];
        auto& psc = *n.parents[1];
        auto& prot = *n.parents[2];
        auto& plog = *n.parents[3];
        auto& pprior = *n.parents[4];
        const S* logits = plog.vals.data();
        std::int64_t nuc = path == RenderPath::Tiled ? tx * ((H + cfg.tile - 1) / cfg.tile) : H;
        int nthreads = std::max(1, std::min<int>(worker_threads(), static_cast<int>(nuc)));
        std::vector<GradAccum<S>> partial(static_cast<size_t>(nthreads), GradAccum<S>(P, C));
        auto run_unit = [&](GradAccum<S>& acc, std::int64_t u) {
            PixelScratch<S> scr;
            VecX<S> o_buf(C), sm_buf(C);
            if (path == RenderPath::Tiled) {
                std::int64_t jy = u / tx, jx = u % tx;
                const auto& cand = bins[static_cast<size_t>(u)];
                for (std::int64_t i = jy * cfg.tile; i < std::min(H, (jy + 1) * cfg.tile); ++i)
                    for (std::int64_t j = jx * cfg.tile; j < std::min(W, (jx + 1) * cfg.tile); ++j)
                        backward_pixel(ps, cand, cutoff, px_x(j), px_y(i), logits, C,
                                       n.grad.data() + (i * W + j) * (C + 1), scr, o_buf, sm_buf,
                                       acc);
            } else {
                for (std::int64_t j = 0; j < W; ++j)
                    backward_pixel(ps, all, cutoff, px_x(j), px_y(u), logits, C,
                                   n.grad.data() + (u * W + j) * (C + 1), scr, o_buf, sm_buf, acc);
            }
        };
        parallel_chunks(nuc, nthreads, [&](int c, std::int64_t b, std::int64_t e) {
            for (std::int64_t u = b; u < e; ++u) run_unit(partial[static_cast<size_t>(c)], u);
        });
        GradAccum<S>& acc = partial[0];
        for (int c = 1; c < nthreads; ++c) acc.add(partial[static_cast<size_t>(c)]);  // chunk order
        chain_to_params(ps, acc, pm.requires_grad ? &pm.grad_buf() : nullptr,
                        psc.requires_grad ? &psc.grad_buf() : nullptr,
                        prot.requires_grad ? &prot.grad_buf() : nullptr,
                        pprior.requires_grad ? &pprior.grad_buf() : nullptr,
                        plog.requires_grad ? &plog.grad_buf() : nullptr, C);
    };
    map.grid = detail::make_op<S>("render", {H, W, C + 1}, std::move(out),
                                  {set.means.node(), set.scale_param.node(), set.rot_raw.node(),
                                   set.logits.node(), set.prior_param.node()},
                                  std::move(bwd));
    return map;
}

}  // namespace bevsplat::raster
