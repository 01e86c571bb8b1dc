// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Finite-difference verification suites used by the `gradcheck` CLI command
// and the acceptance tests: renderer+losses over every Gaussian field, each
// attention operator, and the end-to-end micro pipeline.

#pragma once

#include "bevsplat/core/gradcheck.hpp"
#include "bevsplat/sim/model.hpp"
#include "bevsplat/sim/train.hpp"

namespace bevsplat::sim {

struct GradSuiteRow {
    std::string name;
    double worst = 0;
    double tol = 1e-4;
    bool pass = false;
};

namespace detail_gs {

template <class S>
scene::GaussianSet<S> dense_scene(std::int64_t P, std::int64_t C, Rng& rng) {
    scene::GaussianSet<S> g;
    g.means = Tensor<S>::from({P, 2}, rng.template uniform_vec<S>(P * 2, -5, 5));
    g.scale_param = Tensor<S>::from({P, 2}, rng.template uniform_vec<S>(P * 2, 1.5, 2.5));
    g.rot_raw = Tensor<S>::from({P, 2}, rng.template uniform_vec<S>(P * 2, 0.4, 1.0));
    g.logits = Tensor<S>::from({P, C}, rng.template uniform_vec<S>(P * C, -2, 2));
    g.prior_param = Tensor<S>::from({P}, rng.template uniform_vec<S>(P, -1.0, 1.5));
    g.f_exp = Tensor<S>::zeros({P, 4});
    g.f_imp = Tensor<S>::zeros({P, 4});
    return g;
}

}  // namespace detail_gs

// (a) render + map_loss w.r.t. every Gaussian field, naive and tiled paths.
// Scenes cover the raster densely so the Lovasz term is locally smooth.
template <class S>
std::vector<GradSuiteRow> gradsuite_render(double tol = 1e-4) {
    std::vector<GradSuiteRow> rows;
    Rng rng(431);
    for (auto path : {raster::RenderPath::Naive, raster::RenderPath::Tiled}) {
        auto g = detail_gs::dense_scene<S>(8, 3, rng);
        for (auto* t : {&g.means, &g.scale_param, &g.rot_raw, &g.logits, &g.prior_param})
            t->set_requires_grad();
        SceneBounds b;
        b.x_min = b.y_min = -8;
        b.x_max = b.y_max = 8;
        raster::RasterConfig rc;
        rc.h = rc.w = 16;
        rc.resolution = 1.0;
        rc.cutoff = 0.0;
        std::vector<std::int32_t> gt(256);
        for (auto& c : gt) c = static_cast<std::int32_t>(rng.uniform_int(0, 3));
        auto f = [&] { return raster::map_loss(raster::render(g, b, rc, path), gt).total; };
        auto rep = gradcheck<S>(f,
                                {{"means", g.means},
                                 {"scale_param", g.scale_param},
                                 {"rot_raw", g.rot_raw},
                                 {"logits", g.logits},
                                 {"prior_param", g.prior_param}},
                                S(1e-6));
        GradSuiteRow r;
        r.name = std::string("render_map_loss.") +
                 (path == raster::RenderPath::Naive ? "naive" : "tiled");
        r.worst = static_cast<double>(rep.worst);
        r.tol = tol;
        r.pass = r.worst <= tol;
        rows.push_back(r);
    }
    return rows;
}

// (b) each attention operator against finite differences.
template <class S>
std::vector<GradSuiteRow> gradsuite_attention(double tol = 1e-4) {
    std::vector<GradSuiteRow> rows;
    auto push = [&](const std::string& name, S worst) {
        rows.push_back({name, static_cast<double>(worst), tol, worst <= static_cast<S>(tol)});
    };
    std::int64_t d = 8;
    {
        Rng rng(911);
        ParameterStore<S> st(101);
        enc::DeformableAttention<S> m(st, "da", d, 2, 2, 2);
        m.w_off.vals_mut() = rng.template uniform_vec<S>(m.w_off.size(), -0.2, 0.2);
        m.w_wt.vals_mut() = rng.template uniform_vec<S>(m.w_wt.size(), -0.5, 0.5);
        Tensor<S> map0 = Tensor<S>::from({d, 6, 8}, rng.template normal_vec<S>(d * 48, 0, 1));
        Tensor<S> map1 = Tensor<S>::from({d, 3, 4}, rng.template normal_vec<S>(d * 12, 0, 1));
        Tensor<S> q = Tensor<S>::from({2, d}, rng.template normal_vec<S>(2 * d, 0, 1));
        Tensor<S> p0 = Tensor<S>::from({4, 2}, rng.template uniform_vec<S>(8, 1.5, 5.0));
        Tensor<S> p1 = Tensor<S>::from({4, 2}, rng.template uniform_vec<S>(8, 0.8, 2.2));
        for (auto* t : {&q, &p0, &p1, &map0, &map1}) t->set_requires_grad();
        Rng rw(3);
        Tensor<S> w = Tensor<S>::from({2, 2, d}, rw.template normal_vec<S>(4 * d, 0, 1));
        auto f = [&] {
            std::vector<Tensor<S>> vmaps{m.project_values(map0, 0), m.project_values(map1, 1)};
            return sum(mul(m.forward(q, 2, {p0, p1}, vmaps), w));
        };
        std::vector<std::pair<std::string, Tensor<S>>> params{
            {"query", q}, {"pts0", p0}, {"pts1", p1}, {"map0", map0}, {"map1", map1}};
        for (auto& [k, t] : st.params()) params.push_back({k, t});
        push("deformable_attention", gradcheck<S>(f, params, S(1e-6)).worst);
    }
    {
        Rng rng(913);
        ParameterStore<S> st(103);
        enc::AttnBlock<S> blk(st, "cross", d, 2);
        Tensor<S> x = Tensor<S>::from({3, d}, rng.template normal_vec<S>(3 * d, 0, 1));
        Tensor<S> keys = Tensor<S>::from({7, d}, rng.template normal_vec<S>(7 * d, 0, 1));
        x.set_requires_grad();
        keys.set_requires_grad();
        Rng rw(5);
        Tensor<S> w = Tensor<S>::from({3, d}, rw.template normal_vec<S>(3 * d, 0, 1));
        auto f = [&] { return sum(mul(blk.forward_cross(x, keys), w)); };
        std::vector<std::pair<std::string, Tensor<S>>> params{{"x", x}, {"keys", keys}};
        for (auto& [k, t] : st.params()) params.push_back({k, t});
        push("cross_attention_block", gradcheck<S>(f, params, S(1e-6)).worst);
    }
    {
        Rng rng(917);
        ParameterStore<S> st(107);
        enc::AttnBlock<S> blk(st, "self", d, 2);
        Tensor<S> x = Tensor<S>::from({5, d}, rng.template normal_vec<S>(5 * d, 0, 1));
        Tensor<S> pos = Tensor<S>::from({5, d}, rng.template normal_vec<S>(5 * d, 0, 1));
        x.set_requires_grad();
        pos.set_requires_grad();
        Rng rw(7);
        Tensor<S> w = Tensor<S>::from({5, d}, rw.template normal_vec<S>(5 * d, 0, 1));
        auto f = [&] { return sum(mul(blk.forward_self(x, pos), w)); };
        std::vector<std::pair<std::string, Tensor<S>>> params{{"x", x}, {"pos", pos}};
        for (auto& [k, t] : st.params()) params.push_back({k, t});
        push("self_attention_block", gradcheck<S>(f, params, S(1e-6)).worst);
    }
    {
        // planner spatial + global attention through a full stage
        Rng rng(919);
        ParameterStore<S> st(109);
        plan::PlannerConfig pc;
        pc.stages = 1;
        pc.anchors = 3;
        pc.top_m = 2;
        pc.horizon = 4;
        pc.coord_scale = 10.0;
        plan::PlannerStage<S> stage(st, "pl", d, pc);
        stage.refine_w2.vals_mut() = rng.template normal_vec<S>(stage.refine_w2.size(), 0, 0.2);
        stage.score_w2.vals_mut() = rng.template normal_vec<S>(stage.score_w2.size(), 0, 0.2);
        scene::GaussianSet<S> g;
        std::int64_t P = 6;
        g.means = Tensor<S>::from({P, 2}, rng.template uniform_vec<S>(P * 2, -8, 8));
        g.scale_param = Tensor<S>::zeros({P, 2});
        g.rot_raw = Tensor<S>::from({P, 2}, rng.template uniform_vec<S>(P * 2, 0.4, 1));
        g.logits = Tensor<S>::zeros({P, 2});
        g.prior_param = Tensor<S>::zeros({P});
        g.f_exp = Tensor<S>::from({P, d}, rng.template normal_vec<S>(P * d, 0, 0.7));
        g.f_imp = Tensor<S>::from({P, d}, rng.template normal_vec<S>(P * d, 0, 0.7));
        g.f_exp.set_requires_grad();
        g.f_imp.set_requires_grad();
        Tensor<S> anchors =
            Tensor<S>::from({3, 4, 2}, rng.template uniform_vec<S>(24, -6, 6));
        Rng rw(9);
        Tensor<S> w = Tensor<S>::from({3, 4, 2}, rw.template normal_vec<S>(24, 0, 1));
        Tensor<S> ws = Tensor<S>::from({3}, rw.template normal_vec<S>(3, 0, 1));
        auto f = [&] {
            auto ts = stage.forward(anchors, g);
            return add(sum(mul(ts.trajectories, w)), sum(mul(ts.scores, ws)));
        };
        std::vector<std::pair<std::string, Tensor<S>>> params{{"f_exp", g.f_exp},
                                                              {"f_imp", g.f_imp}};
        for (auto& [k, t] : st.params()) params.push_back({k, t});
        push("planner_stage_attention", gradcheck<S>(f, params, S(1e-6)).worst);
    }
    return rows;
}

// Micro pipeline shared by (c) and the CLI: P=4, d=8, two levels, 8x8
// raster, k=3 anchors, T=4 waypoints.
inline PipelineSettings micro_settings() {
    PipelineSettings s;
    s.gaussians = 4;
    s.dim = 8;
    s.classes = 4;
    s.lidar_bins = 2;
    s.n_views = 1;
    s.bounds.x_min = s.bounds.y_min = -4;
    s.bounds.x_max = s.bounds.y_max = 4;
    s.bounds.z_min = -1;
    s.bounds.z_max = 3;
    s.sigma0 = 1.6;  // dense coverage keeps the losses locally smooth
    s.encoder.blocks = 1;
    s.encoder.heads = 2;
    s.encoder.points = 2;
    s.encoder.levels = 2;
    s.encoder.learnable_queries = 2;
    s.encoder.pillar_samples = 2;
    s.planner.stages = 2;
    s.planner.anchors = 3;
    s.planner.top_m = 2;
    s.planner.horizon = 4;
    s.planner.coord_scale = 4.0;
    s.raster.h = s.raster.w = 8;
    s.raster.resolution = 1.0;
    s.raster.cutoff = 0.0;
    return s;
}

inline SceneGenParams micro_scene_params() {
    SceneGenParams p;
    p.raster_h = p.raster_w = 8;
    p.resolution = 1.0;
    p.horizon = 4;
    p.n_views = 1;
    p.image_h = 12;
    p.image_w = 16;
    p.lidar_bins = 2;
    p.road_half_width = 2.5;
    p.ego_step_min = 0.6;
    p.ego_step_max = 0.8;
    p.difficulty = Difficulty::Easy;
    return p;
}

// (c) end-to-end loss w.r.t. every parameter tensor at the micro config
// (coordinates sampled per tensor; all tensors covered).
template <class S>
std::vector<GradSuiteRow> gradsuite_end_to_end(double tol = 1e-4,
                                               std::int64_t coords_per_tensor = 6) {
    auto settings = micro_settings();
    Pipeline<S> pipe(settings, 521);
    auto p = micro_scene_params();
    Rng srng(733);
    SceneSample smp = generate_scene(srng, settings.bounds, p);
    // anchors with a decisive winner margin (~2.5 m) so the winner argmin
    // cannot flip under the +-eps probes of the finite-difference check
    plan::AnchorVocabulary vocab;
    vocab.k = 3;
    vocab.horizon = 4;
    vocab.anchors.resize(24);
    for (int a = 0; a < 3; ++a)
        for (int t = 0; t < 4; ++t) {
            vocab.anchors[size_t((a * 4 + t) * 2)] = smp.gt_traj[size_t(2 * t)] + 0.1 * a;
            vocab.anchors[size_t((a * 4 + t) * 2 + 1)] =
                smp.gt_traj[size_t(2 * t + 1)] + 2.5 * a;
        }
    pipe.set_vocabulary(vocab);
    // Move off the zero-initialized origin: there every candidate trajectory
    // equals its anchor, the winner argmin is tied and the loss is not
    // differentiable. Small random head weights give a generic point; the
    // scale bias keeps the tiny raster densely covered so the Lovasz term
    // stays locally smooth.
    Rng nudge(97);
    for (auto& [name, t] : pipe.store().params())
        if (name.find("refine_w2") != std::string::npos ||
            name.find("score_w2") != std::string::npos)
            const_cast<Tensor<S>&>(t).vals_mut() +=
                nudge.template normal_vec<S>(t.size(), 0, 0.05);
    auto rb = pipe.store().get("enc.b0.refine_b2");
    rb.vals_mut()[2] = rb.vals_mut()[3] = static_cast<S>(scene::inv_softplus(1.8));
    auto f = [&] {
        auto out = pipe.forward(smp, p, true, raster::RenderPath::Naive);
        return pipe.loss(out, smp).total;
    };
    std::vector<std::pair<std::string, Tensor<S>>> params;
    for (auto& [k, t] : pipe.store().params()) params.push_back({k, t});
    auto rep = gradcheck<S>(f, params, S(1e-6), coords_per_tensor, 4441);
    GradSuiteRow r;
    r.name = "end_to_end_micro (worst: " + rep.worst_param + ")";
    r.worst = static_cast<double>(rep.worst);
    r.tol = tol;
    r.pass = r.worst <= tol;
    return {r};
}

template <class S>
std::vector<GradSuiteRow> run_gradient_suite(std::int64_t coords_per_tensor = 6) {
    std::vector<GradSuiteRow> rows;
    for (auto& r : gradsuite_render<S>()) rows.push_back(r);
    for (auto& r : gradsuite_attention<S>()) rows.push_back(r);
    for (auto& r : gradsuite_end_to_end<S>(1e-4, coords_per_tensor)) rows.push_back(r);
    return rows;
}

}  // namespace bevsplat::sim
