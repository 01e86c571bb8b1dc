// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// The Gaussian encoder: per block, point cross-attention (deformable over
// BEV features), implicit point attention, image cross-attention (deformable
// over projected pillar points), implicit image attention, dual
// self-attention with positional embeddings, and the physical-attribute
// refinement head. Blocks have unshared weights.

#pragma once

#include "bevsplat/encoder/attention.hpp"
#include "bevsplat/scene/gaussian.hpp"

namespace bevsplat::enc {

using scene::GaussianSet;
using scene::PosEmbed;
using scene::SceneBounds;

template <class S>
struct BevFeaturePyramid {
    std::vector<Tensor<S>> levels;  // level l: [d, H_l, W_l] over the BEV extent
};

struct CameraModel {
    Eigen::Matrix<double, 3, 4> proj;  // homogeneous ego-frame 3D -> pixel
    std::int64_t image_w = 0, image_h = 0;

    void validate() const {
        if (image_w < 2 || image_h < 2) throw std::invalid_argument("camera: image too small");
    }
};

// Pinhole camera in the ego frame (x forward, y left, z up). The optical
// axis lies in the BEV plane, rotated by `yaw` from +x; the principal point
// sits at the image center.
inline CameraModel make_pinhole_camera(double fov_deg, std::int64_t image_w, std::int64_t image_h,
                                       const Eigen::Vector3d& position, double yaw) {
    double f = 0.5 * static_cast<double>(image_w - 1) / std::tan(0.5 * fov_deg * std::numbers::pi / 180.0);
    Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
    K(0, 0) = K(1, 1) = f;
    K(0, 2) = 0.5 * static_cast<double>(image_w - 1);
    K(1, 2) = 0.5 * static_cast<double>(image_h - 1);
    Eigen::Vector3d fwd(std::cos(yaw), std::sin(yaw), 0.0);
    Eigen::Vector3d right(std::sin(yaw), -std::cos(yaw), 0.0);
    Eigen::Vector3d down(0.0, 0.0, -1.0);
    Eigen::Matrix3d R;  // ego -> camera
    R.row(0) = right.transpose();
    R.row(1) = down.transpose();
    R.row(2) = fwd.transpose();
    Eigen::Matrix<double, 3, 4> Rt;
    Rt.block<3, 3>(0, 0) = R;
    Rt.col(3) = -R * position;
    CameraModel cam;
    cam.proj = K * Rt;
    cam.image_w = image_w;
    cam.image_h = image_h;
    cam.validate();
    return cam;
}

template <class S>
struct ImageFeaturePyramid {
    // levels[l][v]: [d, H_l, W_l] for camera view v
    std::vector<std::vector<Tensor<S>>> levels;
    std::vector<CameraModel> cams;

    std::int64_t views() const { return static_cast<std::int64_t>(cams.size()); }
};

struct EncoderConfig {
    std::int64_t blocks = 4;
    std::int64_t heads = 4;
    std::int64_t points = 4;  // K sampling points per (head, level)
    std::int64_t levels = 2;
    std::int64_t implicit_heads = 1;
    std::int64_t learnable_queries = 4;
    std::int64_t pillar_samples = 4;
    bool reduce_mean = false;  // false: sum over query points as printed
};

namespace detail_enc {

// Normalized [0,1]^2 scene coords -> per-level pixel coords (align-corners).
template <class S>
std::vector<Tensor<S>> bev_pixel_coords(const Tensor<S>& pts_m, std::int64_t n,
                                        const SceneBounds& b,
                                        const std::vector<Tensor<S>>& levels) {
    Tensor<S> shift = Tensor<S>::from(
        {1, 2}, std::vector<S>{static_cast<S>(b.x_min), static_cast<S>(b.y_min)});
    Tensor<S> inv = Tensor<S>::from({1, 2}, std::vector<S>{static_cast<S>(1.0 / b.x_extent()),
                                                           static_cast<S>(1.0 / b.y_extent())});
    Tensor<S> norm = mul(sub(reshape(pts_m, {n, 2}), shift), inv);
    std::vector<Tensor<S>> out;
    for (auto& lvl : levels) {
        Tensor<S> sc = Tensor<S>::from({1, 2}, std::vector<S>{static_cast<S>(lvl.dim(2) - 1),
                                                              static_cast<S>(lvl.dim(1) - 1)});
        out.push_back(mul(norm, sc));
    }
    return out;
}

// Projects [n, 3] ego-frame points through a camera. Returns pixel coords
// [n, 2] (clamped-depth projective divide) and a constant validity mask
// [n, 1]: positive depth and inside the image.
template <class S>
std::pair<Tensor<S>, Tensor<S>> project_points(const Tensor<S>& pts3d, std::int64_t n,
                                               const CameraModel& cam) {
    Tensor<S> homog = concat<S>({pts3d, Tensor<S>::full({n, 1}, S(1))}, 1);  // [n,4]
    VecX<S> pj(12);
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) pj[c * 3 + r] = static_cast<S>(cam.proj(r, c));
    Tensor<S> projT = Tensor<S>::from({4, 3}, std::move(pj));
    Tensor<S> uvw = matmul(homog, projT);  // [n,3]
    Tensor<S> w = slice_last(uvw, 2, 1);
    Tensor<S> uv = div(slice_last(uvw, 0, 2), clamp_min(w, S(1e-6)));
    VecX<S> mask(n);
    for (std::int64_t i = 0; i < n; ++i) {
        S wd = w.vals()[i];
        S u = uv.vals()[2 * i], v = uv.vals()[2 * i + 1];
        bool ok = wd > S(0.05) && u >= S(0) && u <= S(cam.image_w - 1) && v >= S(0) &&
                  v <= S(cam.image_h - 1);
        mask[i] = ok ? S(1) : S(0);
    }
    return {uv, Tensor<S>::from({n, 1}, std::move(mask))};
}

// flattened [HW, d] view of a [d, H, W] map
template <class S>
Tensor<S> flatten_map(const Tensor<S>& map) {
    std::int64_t d = map.dim(0), H = map.dim(1), W = map.dim(2);
    return transpose_last(reshape(map, {d, H * W}));
}

// constant sinusoidal position table for a H x W grid, normalized coords
template <class S>
Tensor<S> grid_pos_table(std::int64_t H, std::int64_t W, std::int64_t d) {
    VecX<S> pos(H * W * 2);
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j) {
            pos[(i * W + j) * 2] = W > 1 ? static_cast<S>(j) / static_cast<S>(W - 1) : S(0);
            pos[(i * W + j) * 2 + 1] = H > 1 ? static_cast<S>(i) / static_cast<S>(H - 1) : S(0);
        }
    return scene::sinusoidal_embed_2d(Tensor<S>::from({H * W, 2}, std::move(pos)), d);
}

}  // namespace detail_enc

template <class S>
struct EncoderBlock {
    std::int64_t d = 0;
    EncoderConfig cfg;
    SceneBounds bounds;

    Tensor<S> query_offsets;  // [n_l, 2] learnable query-point offsets
    Tensor<S> pillar_top;     // [P] learnable pillar-top logits
    DeformableAttention<S> pca;
    LayerNormP<S> pca_ln;
    Ffn<S> pca_ffn;
    AttnBlock<S> ipa;  // implicit point attention
    DeformableAttention<S> ica;
    LayerNormP<S> ica_ln;
    Ffn<S> ica_ffn;
    AttnBlock<S> iia;  // implicit image attention
    Tensor<S> view_embed;  // [N_views, d] additive view index encoding
    PosEmbed<S> pos_embed;
    AttnBlock<S> self_exp, self_imp;
    LayerNormP<S> refine_ln;
    Tensor<S> refine_w1, refine_b1, refine_w2, refine_b2;  // head: zero-init final layer

    EncoderBlock() = default;
    EncoderBlock(ParameterStore<S>& st, const std::string& p, std::int64_t dim, std::int64_t P,
                 std::int64_t C, std::int64_t n_views, const EncoderConfig& c,
                 const SceneBounds& b)
        : d(dim), cfg(c), bounds(b) {
        query_offsets =
            st.param(p + ".query_offsets", {cfg.learnable_queries, 2}, Init<S>::uniform(-1, 1));
        pillar_top = st.param(p + ".pillar_top", {P}, Init<S>::zeros());
        pca = DeformableAttention<S>(st, p + ".pca", d, cfg.heads, cfg.levels, cfg.points);
        pca_ln = LayerNormP<S>(st, p + ".pca_ln", d);
        pca_ffn = Ffn<S>(st, p + ".pca_ffn", d);
        ipa = AttnBlock<S>(st, p + ".ipa", d, cfg.implicit_heads);
        ica = DeformableAttention<S>(st, p + ".ica", d, cfg.heads, cfg.levels, cfg.points);
        ica_ln = LayerNormP<S>(st, p + ".ica_ln", d);
        ica_ffn = Ffn<S>(st, p + ".ica_ffn", d);
        iia = AttnBlock<S>(st, p + ".iia", d, cfg.implicit_heads);
        view_embed = st.param(p + ".view_embed", {std::max<std::int64_t>(n_views, 1), d},
                              Init<S>::normal(0, 0.02));
        pos_embed = PosEmbed<S>(st, p + ".pos_embed", d, b);
        self_exp = AttnBlock<S>(st, p + ".self_exp", d, cfg.heads);
        self_imp = AttnBlock<S>(st, p + ".self_imp", d, cfg.heads);
        refine_ln = LayerNormP<S>(st, p + ".refine_ln", d);
        refine_w1 = st.param(p + ".refine_w1", {d, d}, Init<S>::fan_in_uniform(d));
        refine_b1 = st.param(p + ".refine_b1", {d}, Init<S>::zeros());
        refine_w2 = st.param(p + ".refine_w2", {d, 2 + 2 + 2 + C + 1}, Init<S>::zeros());
        refine_b2 = st.param(p + ".refine_b2", {2 + 2 + 2 + C + 1}, Init<S>::zeros());
    }

    Tensor<S> reduce_points(const Tensor<S>& per_point) const {  // [P, n, d] -> [P, d]
        return cfg.reduce_mean ? mean_axis(per_point, 1) : sum_axis(per_point, 1);
    }

    // Eq. 1, pre-residual: sum (or mean) of per-query-point deformable
    // attention over the BEV pyramid.
    Tensor<S> pca_update(const GaussianSet<S>& g, const BevFeaturePyramid<S>& pyr,
                         const scene::QueryPointSet<S>& q) const {
        std::int64_t P = g.count(), n_q = q.pts.dim(1);
        std::vector<Tensor<S>> vmaps;
        for (std::int64_t l = 0; l < cfg.levels; ++l)
            vmaps.push_back(pca.project_values(pyr.levels[static_cast<size_t>(l)], l));
        auto pix = detail_enc::bev_pixel_coords(q.pts, P * n_q, bounds, pyr.levels);
        Tensor<S> fq = pca_ln.forward(g.f_exp);
        return reduce_points(pca.forward(fq, n_q, pix, vmaps));
    }

    Tensor<S> point_cross_attention(const GaussianSet<S>& g, const BevFeaturePyramid<S>& pyr,
                                    const scene::QueryPointSet<S>& q) const {
        return pca_ffn.forward(add(g.f_exp, pca_update(g, pyr, q)));
    }

    // Eq. 2: implicit features against the last-scale BEV map.
    Tensor<S> implicit_point_attention(const Tensor<S>& f_imp,
                                       const BevFeaturePyramid<S>& pyr) const {
        const Tensor<S>& last = pyr.levels.back();
        Tensor<S> keys = detail_enc::flatten_map(last);
        Tensor<S> pos = detail_enc::grid_pos_table<S>(last.dim(1), last.dim(2), d);
        return ipa.forward_cross(f_imp, keys, pos);
    }

    // Eq. 3, explicit half, pre-residual: pillar points projected into every
    // view, deformable-sampled per view and averaged over the views that see
    // them; fully invisible points contribute exactly nothing.
    Tensor<S> ica_update(const GaussianSet<S>& g, const ImageFeaturePyramid<S>& pyr,
                         const scene::QueryPointSet<S>& q) const {
        std::int64_t P = g.count(), n_q = q.pts.dim(1);
        std::int64_t n_p = cfg.pillar_samples;
        std::int64_t n_pts = n_q * n_p;
        std::int64_t N = P * n_pts;
        auto pillars = scene::make_pillar_points(q, pillar_top, n_p, bounds);
        Tensor<S> pts3d = reshape(pillars.pts3d, {N, 3});
        Tensor<S> fq = ica_ln.forward(g.f_exp);
        Tensor<S> agg_sum;      // [N, d] sum of per-view aggregates (masked)
        Tensor<S> count_sum;    // [N, 1] number of views that see each point
        for (std::int64_t v = 0; v < pyr.views(); ++v) {
            const CameraModel& cam = pyr.cams[static_cast<size_t>(v)];
            auto [uv, mask] = detail_enc::project_points(pts3d, N, cam);
            std::vector<Tensor<S>> pix, vmaps;
            for (std::int64_t l = 0; l < cfg.levels; ++l) {
                const Tensor<S>& lvl = pyr.levels[static_cast<size_t>(l)][static_cast<size_t>(v)];
                Tensor<S> sc = Tensor<S>::from(
                    {1, 2}, std::vector<S>{static_cast<S>(lvl.dim(2) - 1) /
                                               static_cast<S>(cam.image_w - 1),
                                           static_cast<S>(lvl.dim(1) - 1) /
                                               static_cast<S>(cam.image_h - 1)});
                pix.push_back(mul(uv, sc));
                vmaps.push_back(ica.project_values(lvl, l));
            }
            Tensor<S> agg = mul(ica.aggregate(fq, n_pts, pix, vmaps), mask);
            agg_sum = agg_sum.defined() ? add(agg_sum, agg) : agg;
            count_sum = count_sum.defined() ? add(count_sum, mask) : mask;
        }
        // mean over valid views
        Tensor<S> denom = clamp_min(count_sum.detach(), S(1));
        Tensor<S> per_point = matmul(div(agg_sum, denom), ica.w_out);
        return reduce_points(reshape(per_point, {P, n_pts, d}));
    }

    Tensor<S> image_cross_attention(const GaussianSet<S>& g, const ImageFeaturePyramid<S>& pyr,
                                    const scene::QueryPointSet<S>& q) const {
        return ica_ffn.forward(add(g.f_exp, ica_update(g, pyr, q)));
    }

    // Eq. 3, implicit half: all views' last-scale maps flattened jointly,
    // with the view index encoded additively on the keys.
    Tensor<S> implicit_image_attention(const Tensor<S>& f_imp,
                                       const ImageFeaturePyramid<S>& pyr) const {
        std::vector<Tensor<S>> keys, pos;
        for (std::int64_t v = 0; v < pyr.views(); ++v) {
            const Tensor<S>& last = pyr.levels.back()[static_cast<size_t>(v)];
            keys.push_back(detail_enc::flatten_map(last));
            Tensor<S> grid = detail_enc::grid_pos_table<S>(last.dim(1), last.dim(2), d);
            pos.push_back(add(grid, slice(view_embed, 0, v, 1)));
        }
        return iia.forward_cross(f_imp, concat(keys, 0), concat(pos, 0));
    }

    // Eq. 4: dual self-attention with shared positional embeddings.
    std::pair<Tensor<S>, Tensor<S>> gaussian_self_attention(const Tensor<S>& f_exp,
                                                            const Tensor<S>& f_imp,
                                                            const Tensor<S>& means) const {
        Tensor<S> e = pos_embed.forward(means);
        return {self_exp.forward_self(f_exp, e), self_imp.forward_self(f_imp, e)};
    }

    // Eq. 5: refinement of the physical attributes from the explicit
    // features. Means are residual and clamped to the scene bounds; scale,
    // rotation, logits and prior are replaced. The rotation head carries a
    // fixed raw bias of (1, 0) so the zero-initialized head yields identity.
    GaussianSet<S> refine_physical(const GaussianSet<S>& g, const Tensor<S>& f_exp,
                                   const Tensor<S>& f_imp) const {
        std::int64_t C = g.classes();
        Tensor<S> h = relu(linear(refine_ln.forward(f_exp), refine_w1, refine_b1));
        Tensor<S> heads_out = linear(h, refine_w2, refine_b2);
        Tensor<S> dmean = slice_last(heads_out, 0, 2);
        Tensor<S> s_param = slice_last(heads_out, 2, 2);
        Tensor<S> r_raw = add(slice_last(heads_out, 4, 2),
                              Tensor<S>::from({1, 2}, std::vector<S>{S(1), S(0)}));
        Tensor<S> logits = slice_last(heads_out, 6, C);
        Tensor<S> a_param = reshape(slice_last(heads_out, 6 + C, 1), {g.count()});
        Tensor<S> m = add(g.means, dmean);
        Tensor<S> mx = clamp(slice_last(m, 0, 1), static_cast<S>(bounds.x_min),
                             static_cast<S>(bounds.x_max));
        Tensor<S> my = clamp(slice_last(m, 1, 1), static_cast<S>(bounds.y_min),
                             static_cast<S>(bounds.y_max));
        GaussianSet<S> out;
        out.means = concat<S>({mx, my}, 1);
        out.scale_param = s_param;
        out.rot_raw = r_raw;
        out.logits = logits;
        out.prior_param = a_param;
        out.f_exp = f_exp;
        out.f_imp = f_imp;
        return out;
    }

    GaussianSet<S> forward(const GaussianSet<S>& g, const BevFeaturePyramid<S>& bev,
                           const ImageFeaturePyramid<S>& img) const {
        auto q = scene::make_query_points(g.means, g.scale_param, g.rot_raw, query_offsets);
        Tensor<S> f_exp = point_cross_attention(g, bev, q);
        Tensor<S> f_imp = implicit_point_attention(g.f_imp, bev);
        GaussianSet<S> g1 = g;
        g1.f_exp = f_exp;
        f_exp = image_cross_attention(g1, img, q);
        f_imp = implicit_image_attention(f_imp, img);
        auto [fe, fi] = gaussian_self_attention(f_exp, f_imp, g.means);
        return refine_physical(g, fe, fi);
    }
};

// B sequential blocks with unshared weights.
template <class S>
struct GaussianEncoder {
    std::vector<EncoderBlock<S>> blocks;
    EncoderConfig cfg;

    GaussianEncoder() = default;
    GaussianEncoder(ParameterStore<S>& st, const std::string& prefix, std::int64_t d,
                    std::int64_t P, std::int64_t C, std::int64_t n_views, const EncoderConfig& c,
                    const SceneBounds& b)
        : cfg(c) {
        for (std::int64_t i = 0; i < c.blocks; ++i)
            blocks.emplace_back(st, prefix + ".b" + std::to_string(i), d, P, C, n_views, c, b);
    }

    GaussianSet<S> run(const GaussianSet<S>& g, const BevFeaturePyramid<S>& bev,
                       const ImageFeaturePyramid<S>& img) const {
        GaussianSet<S> cur = g;
        for (auto& blk : blocks) cur = blk.forward(cur, bev, img);
        return cur;
    }
};

}  // namespace bevsplat::enc
