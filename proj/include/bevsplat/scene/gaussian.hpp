// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// 2D Gaussian scene primitives: columnar Gaussian sets, covariance algebra,
// sinusoidal positional embeddings and the query/pillar point constructions
// shared by the encoder and the renderer.
//
// Rotation convention (used everywhere): r = (cos t, sin t), stored as a free
// 2-vector and L2-normalized where a rotation is consumed. Scales are stored
// in softplus-inverse space so positivity is structural; the existence prior
// is stored as a logit.

#pragma once

#include "bevsplat/core/checkpoint.hpp"
#include "bevsplat/core/nn.hpp"
#include "bevsplat/core/optim.hpp"
#include "bevsplat/io/container.hpp"

#include <numbers>

namespace bevsplat::scene {

struct SceneBounds {
    double x_min = -10, x_max = 38;
    double y_min = -24, y_max = 24;
    double z_min = -1, z_max = 4;

    void validate() const {
        if (!(x_max > x_min && y_max > y_min && z_max > z_min))
            throw std::invalid_argument("degenerate scene bounds: max must exceed min per axis");
    }
    double x_extent() const { return x_max - x_min; }
    double y_extent() const { return y_max - y_min; }
};

inline double inv_softplus(double y) {
    // y = log(1 + e^x)  =>  x = y + log(1 - e^-y)
    return y + std::log(-std::expm1(-y));
}

// Columnar set of P Gaussians. All fields are plain value tensors here;
// the encoder rebuilds them as graph nodes when refining.
template <class S>
struct GaussianSet {
    Tensor<S> means;        // [P,2] meters
    Tensor<S> scale_param;  // [P,2] softplus-inverse space
    Tensor<S> rot_raw;      // [P,2] free vector, normalized on use
    Tensor<S> logits;       // [P,C]
    Tensor<S> prior_param;  // [P]   logit of the existence prior
    Tensor<S> f_exp;        // [P,d]
    Tensor<S> f_imp;        // [P,d]

    std::int64_t count() const { return means.dim(0); }
    std::int64_t classes() const { return logits.dim(1); }
    std::int64_t feat_dim() const { return f_exp.dim(1); }

    Tensor<S> scales() const { return softplus(scale_param); }
    Tensor<S> rotations() const { return normalize_last(rot_raw); }
    Tensor<S> priors() const { return sigmoid(prior_param); }

    GaussianSet detached() const {
        return {means.detach(),       scale_param.detach(), rot_raw.detach(), logits.detach(),
                prior_param.detach(), f_exp.detach(),       f_imp.detach()};
    }
};

// Means i.i.d. uniform over the BEV rectangle, scales at sigma0, rotation
// (1,0), zero logits, prior sigmoid(0)=0.5, features N(0, feat_std^2).
template <class S>
GaussianSet<S> init_gaussians(std::int64_t P, const SceneBounds& bounds, std::int64_t C,
                              std::int64_t d, Rng& rng, double sigma0 = 1.0,
                              double feat_std = 0.02) {
    bounds.validate();
    if (P < 1) throw std::invalid_argument("init_gaussians: P must be >= 1");
    VecX<S> m(P * 2);
    for (std::int64_t i = 0; i < P; ++i) {
        m[2 * i] = static_cast<S>(rng.uniform(bounds.x_min, bounds.x_max));
        m[2 * i + 1] = static_cast<S>(rng.uniform(bounds.y_min, bounds.y_max));
    }
    VecX<S> sp = VecX<S>::Constant(P * 2, static_cast<S>(inv_softplus(sigma0)));
    VecX<S> rr(P * 2);
    for (std::int64_t i = 0; i < P; ++i) {
        rr[2 * i] = S(1);
        rr[2 * i + 1] = S(0);
    }
    GaussianSet<S> g;
    g.means = Tensor<S>::from({P, 2}, std::move(m));
    g.scale_param = Tensor<S>::from({P, 2}, std::move(sp));
    g.rot_raw = Tensor<S>::from({P, 2}, std::move(rr));
    g.logits = Tensor<S>::zeros({P, C});
    g.prior_param = Tensor<S>::zeros({P});
    g.f_exp = Tensor<S>::from({P, d}, rng.normal_vec<S>(P * d, 0.0, feat_std));
    g.f_imp = Tensor<S>::from({P, d}, rng.normal_vec<S>(P * d, 0.0, feat_std));
    return g;
}

// Sigma = R diag(s) diag(s) R^T for r = (cos t, sin t), ||r|| = 1.
template <class S>
Eigen::Matrix<S, 2, 2> covariance(S s1, S s2, S rc, S rs) {
    if (!(s1 > S(0) && s2 > S(0)))
        throw std::invalid_argument("covariance: scales must be strictly positive");
    Eigen::Matrix<S, 2, 2> R;
    R << rc, -rs, rs, rc;
    Eigen::Matrix<S, 2, 2> D = Eigen::Matrix<S, 2, 2>::Zero();
    D(0, 0) = s1 * s1;
    D(1, 1) = s2 * s2;
    return R * D * R.transpose();
}

// Sinusoidal encoding of normalized (x,y) over the bounds: d/4 geometric
// frequency pairs per axis (base 1e4), axes concatenated. Differentiable in
// the input positions.
template <class S>
Tensor<S> sinusoidal_embed_2d(const Tensor<S>& pos_norm, std::int64_t d) {
    if (d % 4 != 0) throw std::invalid_argument("sinusoidal_embed_2d: d must be divisible by 4");
    std::int64_t n_freq = d / 4;
    VecX<S> fr(n_freq);
    for (std::int64_t k = 0; k < n_freq; ++k)
        fr[k] = static_cast<S>(2.0 * std::numbers::pi /
                               std::pow(1e4, static_cast<double>(k) / static_cast<double>(n_freq)));
    Tensor<S> freqs = Tensor<S>::from({1, n_freq}, std::move(fr));
    std::vector<Tensor<S>> parts;
    for (int axis = 0; axis < 2; ++axis) {
        Tensor<S> x = slice_last(pos_norm, axis, 1);  // [N,1]
        Tensor<S> ang = mul(x, freqs);                // [N,n_freq]
        parts.push_back(sin(ang));
        parts.push_back(cos(ang));
    }
    return concat(parts, 1);  // [N, d]
}

// Positional embedding head: sinusoidal encoding followed by a learnable
// 2-layer MLP to d.
template <class S>
struct PosEmbed {
    Tensor<S> w1, b1, w2, b2;
    SceneBounds bounds;
    std::int64_t d = 0;

    PosEmbed() = default;
    PosEmbed(ParameterStore<S>& store, const std::string& prefix, std::int64_t dim,
             const SceneBounds& b)
        : bounds(b), d(dim) {
        w1 = store.param(prefix + ".w1", {dim, dim}, Init<S>::fan_in_uniform(dim));
        b1 = store.param(prefix + ".b1", {dim}, Init<S>::zeros());
        w2 = store.param(prefix + ".w2", {dim, dim}, Init<S>::fan_in_uniform(dim));
        b2 = store.param(prefix + ".b2", {dim}, Init<S>::zeros());
    }

    Tensor<S> forward(const Tensor<S>& means) const {
        Tensor<S> shift = Tensor<S>::from(
            {1, 2}, std::vector<S>{static_cast<S>(bounds.x_min), static_cast<S>(bounds.y_min)});
        Tensor<S> scale =
            Tensor<S>::from({1, 2}, std::vector<S>{static_cast<S>(1.0 / bounds.x_extent()),
                                                   static_cast<S>(1.0 / bounds.y_extent())});
        Tensor<S> norm = mul(sub(means, shift), scale);
        Tensor<S> h = relu(linear(sinusoidal_embed_2d(norm, d), w1, b1));
        return linear(h, w2, b2);
    }
};

// Query points per Gaussian: 5 fixed (mean, +-R S e1, +-R S e2) plus n_l
// learnable offsets p mapped through tanh(p)/sqrt(2), which pins learnable
// points strictly inside the 1-sigma ellipse.
template <class S>
struct QueryPointSet {
    Tensor<S> pts;  // [P, n_q, 2] meters
    std::int64_t n_fixed = 5;
    std::int64_t n_learnable = 0;
    std::int64_t per_gaussian() const { return n_fixed + n_learnable; }
};

template <class S>
QueryPointSet<S> make_query_points(const Tensor<S>& means, const Tensor<S>& scale_param,
                                   const Tensor<S>& rot_raw, const Tensor<S>& learn_offsets) {
    std::int64_t P = means.dim(0);
    Tensor<S> rn = normalize_last(rot_raw);
    Tensor<S> sc = softplus(scale_param);
    Tensor<S> rc = slice_last(rn, 0, 1), rs = slice_last(rn, 1, 1);
    Tensor<S> s1 = slice_last(sc, 0, 1), s2 = slice_last(sc, 1, 1);
    Tensor<S> a1 = concat<S>({mul(rc, s1), mul(rs, s1)}, 1);        // R S e1, [P,2]
    Tensor<S> a2 = concat<S>({neg(mul(rs, s2)), mul(rc, s2)}, 1);  // R S e2, [P,2]
    std::vector<Tensor<S>> pts;
    auto push = [&](const Tensor<S>& p) { pts.push_back(reshape(p, {P, 1, 2})); };
    push(means);
    push(add(means, a1));
    push(sub(means, a1));
    push(add(means, a2));
    push(sub(means, a2));
    std::int64_t n_l = learn_offsets.defined() ? learn_offsets.dim(0) : 0;
    if (n_l > 0) {
        Tensor<S> t = tanh(learn_offsets) * static_cast<S>(1.0 / std::numbers::sqrt2);  // [n_l,2]
        for (std::int64_t j = 0; j < n_l; ++j) {
            Tensor<S> tj = slice(t, 0, j, 1);  // [1,2]
            Tensor<S> tx = slice_last(tj, 0, 1), ty = slice_last(tj, 1, 1);
            push(add(means, add(mul(a1, tx), mul(a2, ty))));
        }
    }
    QueryPointSet<S> q;
    q.pts = concat(pts, 1);
    q.n_learnable = n_l;
    return q;
}

// Pillars: per 2D query point, n_p heights linspace(z_min, z_g) with
// z_g = z_min + sigmoid(param) * (z_max - z_min) learnable per Gaussian.
// A single sample degenerates to z_min.
template <class S>
struct PillarQuerySet {
    Tensor<S> pts3d;  // [P, n_q, n_p, 3]
    Tensor<S> z_top;  // [P]
};

template <class S>
PillarQuerySet<S> make_pillar_points(const QueryPointSet<S>& base, const Tensor<S>& z_param,
                                     std::int64_t n_p, const SceneBounds& bounds) {
    if (n_p < 1) throw std::invalid_argument("make_pillar_points: n_p must be >= 1");
    std::int64_t P = base.pts.dim(0), n_q = base.pts.dim(1);
    Tensor<S> z_g = add(sigmoid(z_param) * static_cast<S>(bounds.z_max - bounds.z_min),
                        Tensor<S>::scalar(static_cast<S>(bounds.z_min)));  // [P]
    VecX<S> cf(n_p);
    for (std::int64_t j = 0; j < n_p; ++j)
        cf[j] = n_p == 1 ? S(0) : static_cast<S>(j) / static_cast<S>(n_p - 1);
    Tensor<S> coeff = Tensor<S>::from({1, n_p}, std::move(cf));
    Tensor<S> rel = sub(reshape(z_g, {P, 1}), Tensor<S>::scalar(static_cast<S>(bounds.z_min)));
    Tensor<S> heights = add(mul(rel, coeff), Tensor<S>::scalar(static_cast<S>(bounds.z_min)));
    // broadcast xy over n_p and heights over n_q, then join
    Tensor<S> xy = add(reshape(base.pts, {P, n_q, 1, 2}), Tensor<S>::zeros({1, 1, n_p, 2}));
    Tensor<S> zz = add(reshape(heights, {P, 1, n_p, 1}), Tensor<S>::zeros({1, n_q, 1, 1}));
    PillarQuerySet<S> out;
    out.pts3d = concat<S>({xy, zz}, 3);
    out.z_top = z_g;
    return out;
}

// --- serialization -----------------------------------------------------

template <class S>
void save_gaussian_set(const GaussianSet<S>& g, const SceneBounds& b, const std::string& path) {
    io::Container c("gaussian_set");
    c.set_meta_int("P", g.count());
    c.set_meta_int("C", g.classes());
    c.set_meta_int("d", g.feat_dim());
    c.set_meta_double("x_min", b.x_min);
    c.set_meta_double("x_max", b.x_max);
    c.set_meta_double("y_min", b.y_min);
    c.set_meta_double("y_max", b.y_max);
    c.set_meta_double("z_min", b.z_min);
    c.set_meta_double("z_max", b.z_max);
    detail::add_array<S>(c, "means", g.means.shape(), g.means.vals());
    detail::add_array<S>(c, "scale_param", g.scale_param.shape(), g.scale_param.vals());
    detail::add_array<S>(c, "rot_raw", g.rot_raw.shape(), g.rot_raw.vals());
    detail::add_array<S>(c, "logits", g.logits.shape(), g.logits.vals());
    detail::add_array<S>(c, "prior_param", g.prior_param.shape(), g.prior_param.vals());
    detail::add_array<S>(c, "f_exp", g.f_exp.shape(), g.f_exp.vals());
    detail::add_array<S>(c, "f_imp", g.f_imp.shape(), g.f_imp.vals());
    c.save(path);
}

template <class S>
std::pair<GaussianSet<S>, SceneBounds> load_gaussian_set(const std::string& path) {
    io::Container c = io::Container::load(path);
    if (c.kind() != "gaussian_set") throw IoError(path + " is not a gaussian_set container");
    SceneBounds b;
    b.x_min = c.meta_double("x_min");
    b.x_max = c.meta_double("x_max");
    b.y_min = c.meta_double("y_min");
    b.y_max = c.meta_double("y_max");
    b.z_min = c.meta_double("z_min");
    b.z_max = c.meta_double("z_max");
    auto t = [&](const char* name) {
        const io::Entry& e = c.find(name);
        return Tensor<S>::from(e.shape, detail::entry_vec<S>(e));
    };
    GaussianSet<S> g{t("means"),       t("scale_param"), t("rot_raw"), t("logits"),
                     t("prior_param"), t("f_exp"),       t("f_imp")};
    return {g, b};
}

}  // namespace bevsplat::scene
