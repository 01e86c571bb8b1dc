// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Cascade anchor-trajectory planner. Each stage embeds its anchors, attends
// to the top-m nearest Gaussians per waypoint (spatial attention), then to
// all Gaussians (global attention), and emits a residual trajectory
// refinement plus a score. Stage s > 1 consumes stage s-1 outputs and
// re-selects its top-m sets from the current trajectories. Weights are
// unshared across stages.

#pragma once

#include "bevsplat/encoder/attention.hpp"
#include "bevsplat/planner/vocabulary.hpp"
#include "bevsplat/scene/gaussian.hpp"

#include <algorithm>
#include <numeric>

namespace bevsplat::plan {

using enc::AttnBlock;
using scene::GaussianSet;

struct PlannerConfig {
    std::int64_t stages = 2;
    std::int64_t anchors = 20;  // k
    std::int64_t top_m = 4;     // m nearest Gaussians per waypoint
    std::int64_t horizon = 8;   // T
    bool use_ego_state = false;
    double coord_scale = 24.0;  // meters; normalizes trajectory coords for embedding
};

template <class S>
struct TrajectorySet {
    Tensor<S> trajectories;  // [k, T, 2]
    Tensor<S> scores;        // [k]
    std::int64_t stage = 0;
};

// For each of the T waypoints, the indices of the m nearest Gaussians by
// Euclidean distance to the mean; ties by ascending Gaussian index; results
// concatenated in waypoint order, duplicates kept.
template <class S>
std::vector<std::int64_t> select_topm(const VecX<S>& anchor_tx2, std::int64_t T,
                                      const VecX<S>& means, std::int64_t P, std::int64_t m) {
    if (m > P) throw std::invalid_argument("select_topm: m exceeds the number of Gaussians");
    std::vector<std::int64_t> out;
    out.reserve(static_cast<size_t>(T * m));
    std::vector<std::pair<S, std::int64_t>> d(static_cast<size_t>(P));
    for (std::int64_t t = 0; t < T; ++t) {
        S wx = anchor_tx2[2 * t], wy = anchor_tx2[2 * t + 1];
        for (std::int64_t i = 0; i < P; ++i) {
            S dx = means[2 * i] - wx, dy = means[2 * i + 1] - wy;
            d[size_t(i)] = {dx * dx + dy * dy, i};
        }
        std::partial_sort(d.begin(), d.begin() + m, d.end());
        for (std::int64_t j = 0; j < m; ++j) out.push_back(d[size_t(j)].second);
    }
    return out;
}

template <class S>
struct PlannerStage {
    std::int64_t d = 0;
    PlannerConfig cfg;
    Tensor<S> embed_w1, embed_b1, embed_w2, embed_b2;  // anchor -> query feature
    Tensor<S> ego_w, ego_b;                            // optional ego-state embedding
    Tensor<S> kv_spatial, kv_global;                   // [2d, d] feature projections
    AttnBlock<S> spatial, global;
    Tensor<S> refine_w1, refine_b1, refine_w2, refine_b2;  // zero-init final layer
    Tensor<S> score_w1, score_b1, score_w2, score_b2;      // zero-init final layer

    PlannerStage() = default;
    PlannerStage(ParameterStore<S>& st, const std::string& p, std::int64_t dim,
                 const PlannerConfig& c)
        : d(dim), cfg(c) {
        std::int64_t in = c.horizon * 2;
        embed_w1 = st.param(p + ".embed_w1", {in, d}, Init<S>::fan_in_uniform(in));
        embed_b1 = st.param(p + ".embed_b1", {d}, Init<S>::zeros());
        embed_w2 = st.param(p + ".embed_w2", {d, d}, Init<S>::fan_in_uniform(d));
        embed_b2 = st.param(p + ".embed_b2", {d}, Init<S>::zeros());
        if (c.use_ego_state) {
            ego_w = st.param(p + ".ego_w", {2, d}, Init<S>::fan_in_uniform(2));
            ego_b = st.param(p + ".ego_b", {d}, Init<S>::zeros());
        }
        kv_spatial = st.param(p + ".kv_spatial", {2 * d, d}, Init<S>::fan_in_uniform(2 * d));
        kv_global = st.param(p + ".kv_global", {2 * d, d}, Init<S>::fan_in_uniform(2 * d));
        spatial = AttnBlock<S>(st, p + ".spatial", d, 1);
        global = AttnBlock<S>(st, p + ".global", d, 1);
        refine_w1 = st.param(p + ".refine_w1", {d, d}, Init<S>::fan_in_uniform(d));
        refine_b1 = st.param(p + ".refine_b1", {d}, Init<S>::zeros());
        refine_w2 = st.param(p + ".refine_w2", {d, c.horizon * 2}, Init<S>::zeros());
        refine_b2 = st.param(p + ".refine_b2", {c.horizon * 2}, Init<S>::zeros());
        score_w1 = st.param(p + ".score_w1", {d, d}, Init<S>::fan_in_uniform(d));
        score_b1 = st.param(p + ".score_b1", {d}, Init<S>::zeros());
        score_w2 = st.param(p + ".score_w2", {d, 1}, Init<S>::zeros());
        score_b2 = st.param(p + ".score_b2", {1}, Init<S>::zeros());
    }

    // anchors: [k, T, 2] (graph tensor in cascades); gaussians provide the
    // key/value features and the means for top-m selection.
    TrajectorySet<S> forward(const Tensor<S>& anchors, const GaussianSet<S>& g,
                             const Tensor<S>& ego_state = {}) const {
        std::int64_t k = anchors.dim(0), T = cfg.horizon, P = g.count();
        std::int64_t m = cfg.top_m;
        Tensor<S> flat = reshape(anchors, {k, T * 2}) * static_cast<S>(1.0 / cfg.coord_scale);
        Tensor<S> fq = linear(relu(linear(flat, embed_w1, embed_b1)), embed_w2, embed_b2);
        if (cfg.use_ego_state && ego_state.defined())
            fq = add(fq, linear(reshape(ego_state, {1, 2}) * static_cast<S>(1.0 / cfg.coord_scale),
                                ego_w, ego_b));

        Tensor<S> feats = concat<S>({g.f_exp, g.f_imp}, 1);  // [P, 2d]
        // Eq. 6: per-anchor spatial attention over the top-m subset
        Tensor<S> kv_sp = matmul(feats, kv_spatial);  // [P, d]
        std::vector<std::int64_t> rows;
        rows.reserve(static_cast<size_t>(k * T * m));
        for (std::int64_t a = 0; a < k; ++a) {
            VecX<S> atraj(T * 2);
            for (std::int64_t j = 0; j < T * 2; ++j) atraj[j] = anchors.vals()[a * T * 2 + j];
            auto idx = select_topm(atraj, T, g.means.vals(), P, m);
            rows.insert(rows.end(), idx.begin(), idx.end());
        }
        Tensor<S> subset = reshape(gather_rows(kv_sp, rows), {k, T * m, d});
        Tensor<S> fa = reshape(spatial.forward_cross(reshape(fq, {k, 1, d}), subset), {k, d});

        // Eq. 7: global attention over all Gaussians, residual trajectory
        Tensor<S> kv_gl = matmul(feats, kv_global);
        Tensor<S> fo = global.forward_cross(fa, kv_gl);
        Tensor<S> delta = linear(relu(linear(fo, refine_w1, refine_b1)), refine_w2, refine_b2);
        TrajectorySet<S> out;
        out.trajectories = add(anchors, reshape(delta, {k, T, 2}));
        out.scores =
            reshape(linear(relu(linear(fo, score_w1, score_b1)), score_w2, score_b2), {k});
        return out;
    }
};

template <class S>
struct CascadePlanner {
    PlannerConfig cfg;
    std::vector<PlannerStage<S>> stages;

    CascadePlanner() = default;
    CascadePlanner(ParameterStore<S>& st, const std::string& prefix, std::int64_t d,
                   const PlannerConfig& c)
        : cfg(c) {
        if (c.stages < 1) throw std::invalid_argument("planner: need at least one stage");
        for (std::int64_t i = 0; i < c.stages; ++i)
            stages.emplace_back(st, prefix + ".s" + std::to_string(i), d, c);
    }

    // Stage 1 consumes the vocabulary; stage s>1 the previous refined
    // trajectories. Returns every stage's output, final stage last.
    std::vector<TrajectorySet<S>> run(const AnchorVocabulary& vocab, const GaussianSet<S>& g,
                                      const Tensor<S>& ego_state = {}) const {
        if (vocab.horizon != cfg.horizon)
            throw std::invalid_argument("planner: vocabulary horizon mismatch");
        VecX<S> a0(static_cast<std::int64_t>(vocab.anchors.size()));
        for (std::int64_t i = 0; i < a0.size(); ++i)
            a0[i] = static_cast<S>(vocab.anchors[static_cast<size_t>(i)]);
        Tensor<S> anchors = Tensor<S>::from({vocab.k, vocab.horizon, 2}, std::move(a0));
        std::vector<TrajectorySet<S>> outs;
        for (size_t si = 0; si < stages.size(); ++si) {
            TrajectorySet<S> ts = stages[si].forward(anchors, g, ego_state);
            ts.stage = static_cast<std::int64_t>(si);
            anchors = ts.trajectories;
            outs.push_back(std::move(ts));
        }
        return outs;
    }
};

template <class S>
struct TrajectoryLoss {
    Tensor<S> l1;     // winner-takes-all L1, summed over stages
    Tensor<S> ce;     // score classification, summed over stages
    Tensor<S> total;
    std::vector<std::int64_t> winners;  // per stage
};

// Winner = argmin_i mean_t ||tau_i,t - gt_t||_2 (ties to the lowest index).
// Loss per stage = mean L1 over the winner's waypoints/coords plus cross
// entropy of the scores against the winner; stages summed (deep supervision).
template <class S>
TrajectoryLoss<S> trajectory_loss(const std::vector<TrajectorySet<S>>& stages,
                                  const VecX<S>& gt_tx2, std::int64_t T) {
    if (stages.empty()) throw std::invalid_argument("trajectory_loss: no stages");
    TrajectoryLoss<S> out;
    Tensor<S> gt = Tensor<S>::from({1, T, 2}, VecX<S>(gt_tx2));
    for (auto& ts : stages) {
        std::int64_t k = ts.trajectories.dim(0);
        if (ts.trajectories.dim(1) != T)
            throw std::invalid_argument("trajectory_loss: horizon mismatch");
        // winner by mean Euclidean waypoint distance, from forward values
        std::int64_t win = 0;
        S best = std::numeric_limits<S>::infinity();
        for (std::int64_t i = 0; i < k; ++i) {
            S acc = S(0);
            for (std::int64_t t = 0; t < T; ++t) {
                S dx = ts.trajectories.vals()[(i * T + t) * 2] - gt_tx2[2 * t];
                S dy = ts.trajectories.vals()[(i * T + t) * 2 + 1] - gt_tx2[2 * t + 1];
                acc += std::sqrt(dx * dx + dy * dy);
            }
            if (acc / S(T) < best) {
                best = acc / S(T);
                win = i;
            }
        }
        out.winners.push_back(win);
        Tensor<S> tau_w = slice(ts.trajectories, 0, win, 1);  // [1, T, 2]
        Tensor<S> l1 = mean(abs(sub(tau_w, gt)));
        Tensor<S> logp = log(clamp_min(softmax(ts.scores, 0), S(1e-12)));
        Tensor<S> ce = neg(gather_flat(logp, {win}, {1}));
        out.l1 = out.l1.defined() ? add(out.l1, l1) : l1;
        out.ce = out.ce.defined() ? add(out.ce, ce) : ce;
    }
    out.total = add(out.l1, out.ce);
    return out;
}

// Inference-time pick: highest score, ties to the lowest index.
template <class S>
std::pair<std::int64_t, VecX<S>> select_trajectory(const TrajectorySet<S>& ts) {
    std::int64_t k = ts.scores.size(), T = ts.trajectories.dim(1);
    std::int64_t best = 0;
    for (std::int64_t i = 1; i < k; ++i)
        if (ts.scores.vals()[i] > ts.scores.vals()[best]) best = i;
    VecX<S> tr(T * 2);
    for (std::int64_t j = 0; j < T * 2; ++j) tr[j] = ts.trajectories.vals()[best * T * 2 + j];
    return {best, tr};
}

}  // namespace bevsplat::plan
