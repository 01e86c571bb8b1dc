// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bevsplat/core/gradcheck.hpp"
#include "bevsplat/planner/planner.hpp"
#include "oracles.hpp"

#include <cstdio>
#include <numeric>

using namespace bevsplat;
using namespace bevsplat::plan;
using scene::GaussianSet;
using T = Tensor<double>;
using test_oracles::as_mat;
using test_oracles::attend_reference;

namespace {

std::vector<double> line_traj(double x0, double y0, double dx, double dy, std::int64_t T_) {
    std::vector<double> t(static_cast<size_t>(T_ * 2));
    for (std::int64_t i = 0; i < T_; ++i) {
        t[size_t(2 * i)] = x0 + dx * double(i + 1);
        t[size_t(2 * i + 1)] = y0 + dy * double(i + 1);
    }
    return t;
}

GaussianSet<double> random_set(std::int64_t P, std::int64_t d, Rng& rng) {
    GaussianSet<double> g;
    g.means = T::from({P, 2}, rng.uniform_vec<double>(P * 2, -10, 10));
    g.scale_param = T::zeros({P, 2});
    g.rot_raw = T::from({P, 2}, rng.uniform_vec<double>(P * 2, 0.4, 1));
    g.logits = T::zeros({P, 2});
    g.prior_param = T::zeros({P});
    g.f_exp = T::from({P, d}, rng.normal_vec<double>(P * d, 0, 0.7));
    g.f_imp = T::from({P, d}, rng.normal_vec<double>(P * d, 0, 0.7));
    return g;
}

PlannerConfig cfg_of(std::int64_t stages, std::int64_t k, std::int64_t m, std::int64_t T_) {
    PlannerConfig c;
    c.stages = stages;
    c.anchors = k;
    c.top_m = m;
    c.horizon = T_;
    return c;
}

}  // namespace

// ---------------------------------------------------------------------------
// anchor vocabulary (k-means)
// ---------------------------------------------------------------------------

TEST_CASE("vocabulary: exactly k distinct trajectories are a k-means fixed point") {
    Rng rng(5);
    std::int64_t T_ = 4, k = 5;
    std::vector<std::vector<double>> data;
    for (std::int64_t i = 0; i < k; ++i)
        data.push_back(line_traj(0, 0, 1.0 + 0.3 * double(i), 0.1 * double(i) - 0.2, T_));
    auto v = build_anchor_vocabulary(data, k, T_, rng);
    // every dataset trajectory appears as a centroid (order-free)
    for (auto& tr : data) {
        bool found = false;
        for (std::int64_t a = 0; a < k && !found; ++a) {
            double diff = 0;
            for (std::int64_t j = 0; j < T_ * 2; ++j)
                diff = std::max(diff, std::abs(v.anchors[size_t(a * T_ * 2 + j)] - tr[size_t(j)]));
            found = diff <= 1e-12;
        }
        CHECK(found);
    }
}

TEST_CASE("vocabulary: k=1 returns the dataset mean trajectory") {
    Rng rng(7);
    std::int64_t T_ = 3;
    std::vector<std::vector<double>> data{line_traj(0, 0, 1, 0, T_), line_traj(0, 0, 2, 1, T_),
                                          line_traj(1, -1, 0.5, 0.2, T_)};
    auto v = build_anchor_vocabulary(data, 1, T_, rng);
    for (std::int64_t j = 0; j < T_ * 2; ++j) {
        double mean = (data[0][size_t(j)] + data[1][size_t(j)] + data[2][size_t(j)]) / 3.0;
        CHECK(v.anchors[size_t(j)] == doctest::Approx(mean).epsilon(1e-12));
    }
}

TEST_CASE("vocabulary: three separated clusters recover their means (exhaustive oracle)") {
    Rng rng(11);
    std::int64_t T_ = 4;
    std::vector<std::vector<double>> data;
    std::vector<std::vector<double>> centers{line_traj(0, 0, 2, 0, T_),
                                             line_traj(0, 0, 2, 1.5, T_),
                                             line_traj(0, 0, 2, -1.5, T_)};
    Rng noise(13);
    std::vector<std::vector<std::vector<double>>> groups(3);
    for (int c = 0; c < 3; ++c)
        for (int i = 0; i < 12; ++i) {
            auto t = centers[size_t(c)];
            for (auto& x : t) x += noise.uniform(-0.05, 0.05);
            data.push_back(t);
            groups[size_t(c)].push_back(t);
        }
    auto v = build_anchor_vocabulary(data, 3, T_, rng);
    // oracle: per-group exhaustive means, matched to nearest centroid
    for (auto& grp : groups) {
        std::vector<double> mean(size_t(T_ * 2), 0.0);
        for (auto& t : grp)
            for (std::int64_t j = 0; j < T_ * 2; ++j) mean[size_t(j)] += t[size_t(j)] / 12.0;
        double best = 1e300;
        for (std::int64_t a = 0; a < 3; ++a) {
            double diff = 0;
            for (std::int64_t j = 0; j < T_ * 2; ++j)
                diff = std::max(diff, std::abs(v.anchors[size_t(a * T_ * 2 + j)] - mean[size_t(j)]));
            best = std::min(best, diff);
        }
        CHECK(best <= 1e-6);
    }
}

TEST_CASE("vocabulary: duplicate trajectories below k raise, small datasets raise") {
    Rng rng(17);
    std::int64_t T_ = 3;
    auto a = line_traj(0, 0, 1, 0, T_);
    std::vector<std::vector<double>> dup{a, a, a, line_traj(0, 0, 2, 0, T_)};
    CHECK_THROWS_AS(build_anchor_vocabulary(dup, 3, T_, rng), std::runtime_error);
    std::vector<std::vector<double>> two{a, line_traj(0, 0, 2, 0, T_)};
    CHECK_THROWS_AS(build_anchor_vocabulary(two, 3, T_, rng), std::invalid_argument);
}

TEST_CASE("vocabulary: serialization round-trips") {
    Rng rng(19);
    std::vector<std::vector<double>> data{line_traj(0, 0, 1, 0, 4), line_traj(0, 0, 2, 0.4, 4),
                                          line_traj(0, 0, 1.5, -0.4, 4)};
    auto v = build_anchor_vocabulary(data, 2, 4, rng);
    save_vocabulary(v, "vocab_roundtrip.bsc");
    auto v2 = load_vocabulary("vocab_roundtrip.bsc");
    CHECK(v2.k == v.k);
    CHECK(v2.horizon == v.horizon);
    for (size_t i = 0; i < v.anchors.size(); ++i) CHECK(v2.anchors[i] == v.anchors[i]);
    std::remove("vocab_roundtrip.bsc");
}

// ---------------------------------------------------------------------------
// top-m selection
// ---------------------------------------------------------------------------

TEST_CASE("select_topm: m = P selects every Gaussian per waypoint") {
    Rng rng(23);
    auto g = random_set(5, 4, rng);
    VecX<double> anchor(4);
    anchor << 0, 0, 1, 1;
    auto idx = select_topm(anchor, 2, g.means.vals(), 5, 5);
    CHECK(idx.size() == 10);
    for (int t = 0; t < 2; ++t) {
        std::vector<std::int64_t> slice_idx(idx.begin() + t * 5, idx.begin() + (t + 1) * 5);
        std::sort(slice_idx.begin(), slice_idx.end());
        for (std::int64_t i = 0; i < 5; ++i) CHECK(slice_idx[size_t(i)] == i);
    }
}

TEST_CASE("select_topm: one waypoint picks the two nearest of three") {
    VecX<double> means(6);
    means << 1, 0, 2, 0, 3, 0;  // distances 1, 2, 3 from the origin
    VecX<double> anchor(2);
    anchor << 0, 0;
    auto idx = select_topm(anchor, 1, means, 3, 2);
    CHECK(idx == std::vector<std::int64_t>{0, 1});
    CHECK_THROWS_AS(select_topm(anchor, 1, means, 3, 4), std::invalid_argument);
}

TEST_CASE("select_topm: 200 random instances match the exhaustive sort oracle") {
    Rng rng(29);
    for (int trial = 0; trial < 200; ++trial) {
        std::int64_t P = 32, T_ = 8, m = 4;
        VecX<double> means = rng.uniform_vec<double>(P * 2, -20, 20);
        VecX<double> anchor = rng.uniform_vec<double>(T_ * 2, -20, 20);
        auto got = select_topm(anchor, T_, means, P, m);
        // oracle: full sort with (distance, index) keys per waypoint
        std::vector<std::int64_t> want;
        for (std::int64_t t = 0; t < T_; ++t) {
            std::vector<std::pair<double, std::int64_t>> all;
            for (std::int64_t i = 0; i < P; ++i) {
                double dx = means[2 * i] - anchor[2 * t], dy = means[2 * i + 1] - anchor[2 * t + 1];
                all.push_back({std::hypot(dx, dy), i});
            }
            std::sort(all.begin(), all.end());
            for (std::int64_t j = 0; j < m; ++j) want.push_back(all[size_t(j)].second);
        }
        CHECK(got == want);
    }
}

// ---------------------------------------------------------------------------
// planner stages
// ---------------------------------------------------------------------------

TEST_CASE("spatial attention: equal subset features collapse to the value path") {
    Rng rng(31);
    std::int64_t d = 8, T_ = 4;
    ParameterStore<double> st(37);
    PlannerStage<double> stage(st, "p", d, cfg_of(1, 2, 2, T_));
    VecX<double> vrow = rng.normal_vec<double>(d, 0, 1);
    std::int64_t mT = 2 * T_;
    VecX<double> subset(mT * d);
    for (std::int64_t i = 0; i < mT; ++i) subset.segment(i * d, d) = vrow;
    T keys = T::from({1, mT, d}, subset);
    T q1 = T::from({1, 1, d}, rng.normal_vec<double>(d, 0, 1));
    T q2 = T::from({1, 1, d}, rng.normal_vec<double>(d, 0, 1));
    T a1 = stage.spatial.attn.attend(stage.spatial.ln.forward(q1), keys, keys);
    T a2 = stage.spatial.attn.attend(stage.spatial.ln.forward(q2), keys, keys);
    CHECK((a1.vals() - a2.vals()).abs().maxCoeff() <= 1e-12);
    // value path computed independently
    Eigen::MatrixXd vin(1, d), kin(1, d);
    for (std::int64_t c = 0; c < d; ++c) vin(0, c) = vrow[c];
    Eigen::MatrixXd want =
        attend_reference(stage.spatial.attn, as_mat(reshape(stage.spatial.ln.forward(q1), {1, d})),
                         vin, vin);
    for (std::int64_t c = 0; c < d; ++c) CHECK(std::abs(a1.vals()[c] - want(0, c)) <= 1e-10);
}

TEST_CASE("planner stage: zero-initialized refinement returns the anchors exactly") {
    Rng rng(41);
    std::int64_t d = 8, T_ = 4, k = 3;
    ParameterStore<double> st(43);
    auto cfg = cfg_of(2, k, 2, T_);
    CascadePlanner<double> planner(st, "plan", d, cfg);
    auto g = random_set(6, d, rng);
    std::vector<std::vector<double>> data{line_traj(0, 0, 1, 0, T_), line_traj(0, 0, 2, 0.5, T_),
                                          line_traj(0, 0, 1.5, -0.5, T_)};
    Rng vr(3);
    auto vocab = build_anchor_vocabulary(data, k, T_, vr);
    auto stages = planner.run(vocab, g);
    CHECK(stages.size() == 2);
    for (auto& ts : stages) {
        CHECK(ts.trajectories.shape() == Shape{k, T_, 2});
        for (std::int64_t i = 0; i < k * T_ * 2; ++i)
            CHECK(ts.trajectories.vals()[i] == vocab.anchors[size_t(i)]);
        CHECK(ts.scores.vals().abs().maxCoeff() == 0.0);
    }
}

TEST_CASE("planner stage: output shape is [k, T, 2] with T=8 giving 8x2 per anchor") {
    Rng rng(47);
    std::int64_t d = 8, T_ = 8, k = 4;
    ParameterStore<double> st(53);
    auto cfg = cfg_of(1, k, 3, T_);
    CascadePlanner<double> planner(st, "plan", d, cfg);
    auto g = random_set(12, d, rng);
    std::vector<std::vector<double>> data;
    for (int i = 0; i < 6; ++i) data.push_back(line_traj(0, 0, 1 + 0.2 * i, 0.1 * i, T_));
    Rng vr(5);
    auto vocab = build_anchor_vocabulary(data, k, T_, vr);
    auto stages = planner.run(vocab, g);
    CHECK(stages.size() == 1);
    CHECK(stages[0].trajectories.dim(1) == 8);
    CHECK(stages[0].trajectories.dim(2) == 2);
    CHECK(stages[0].scores.size() == k);
}

TEST_CASE("planner: the implicit features reach the trajectory (FD probe)") {
    Rng rng(59);
    std::int64_t d = 8, T_ = 4, k = 2;
    ParameterStore<double> st(61);
    auto cfg = cfg_of(1, k, 2, T_);
    CascadePlanner<double> planner(st, "plan", d, cfg);
    // randomize the refinement head so the identity shortcut is gone
    for (auto& stg : planner.stages) {
        stg.refine_w2.vals_mut() = rng.normal_vec<double>(stg.refine_w2.size(), 0, 0.3);
        stg.score_w2.vals_mut() = rng.normal_vec<double>(stg.score_w2.size(), 0, 0.3);
    }
    auto g = random_set(5, d, rng);
    g.f_imp.set_requires_grad();
    g.f_exp.set_requires_grad();
    std::vector<std::vector<double>> data{line_traj(0, 0, 1, 0, T_), line_traj(0, 0, 2, 0.5, T_)};
    Rng vr(7);
    auto vocab = build_anchor_vocabulary(data, k, T_, vr);
    auto f = [&] {
        auto stages = planner.run(vocab, g);
        return mean(stages.back().trajectories);
    };
    auto rep = gradcheck<double>(f, {{"f_imp", g.f_imp}, {"f_exp", g.f_exp}}, 1e-6);
    CHECK(rep.worst <= 1e-6);  // analytic gradient correct...
    T loss = f();
    g.f_imp.zero_grad();
    backward(loss);
    CHECK(g.f_imp.grad().abs().maxCoeff() > 0.0);  // ...and genuinely nonzero
}

TEST_CASE("cascade: a single stage equals one refine pass; stages chain on refined anchors") {
    Rng rng(67);
    std::int64_t d = 8, T_ = 4, k = 3;
    ParameterStore<double> st(71);
    auto cfg = cfg_of(2, k, 2, T_);
    CascadePlanner<double> planner(st, "plan", d, cfg);
    for (auto& stg : planner.stages)
        stg.refine_w2.vals_mut() = rng.normal_vec<double>(stg.refine_w2.size(), 0, 0.3);
    auto g = random_set(6, d, rng);
    std::vector<std::vector<double>> data{line_traj(0, 0, 1, 0, T_), line_traj(0, 0, 2, 0.5, T_),
                                          line_traj(0, 0, 1.5, -0.5, T_)};
    Rng vr(9);
    auto vocab = build_anchor_vocabulary(data, k, T_, vr);
    auto stages = planner.run(vocab, g);
    // stage 0 alone equals running the first stage module directly
    VecX<double> a0(k * T_ * 2);
    for (std::int64_t i = 0; i < a0.size(); ++i) a0[i] = vocab.anchors[size_t(i)];
    auto direct = planner.stages[0].forward(T::from({k, T_, 2}, a0), g);
    CHECK((stages[0].trajectories.vals() - direct.trajectories.vals()).abs().maxCoeff() == 0.0);
    // stage 1 consumed stage 0's refined output
    auto direct1 = planner.stages[1].forward(direct.trajectories, g);
    CHECK((stages[1].trajectories.vals() - direct1.trajectories.vals()).abs().maxCoeff() == 0.0);
}

// ---------------------------------------------------------------------------
// trajectory loss + selection
// ---------------------------------------------------------------------------

TEST_CASE("trajectory_loss: an exact winner leaves only the classification term") {
    std::int64_t T_ = 4, k = 3;
    VecX<double> gt(T_ * 2);
    for (std::int64_t t = 0; t < T_; ++t) {
        gt[2 * t] = double(t + 1);
        gt[2 * t + 1] = 0.3 * double(t);
    }
    VecX<double> trajs(k * T_ * 2);
    for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < T_ * 2; ++j)
            trajs[i * T_ * 2 + j] = gt[j] + (i == 1 ? 0.0 : 2.0);  // candidate 1 is exact
    TrajectorySet<double> ts;
    ts.trajectories = T::from({k, T_, 2}, trajs);
    ts.scores = T::from({k}, std::vector<double>{0.2, 1.4, -0.7});
    auto loss = trajectory_loss<double>({ts}, gt, T_);
    CHECK(loss.winners == std::vector<std::int64_t>{1});
    CHECK(loss.l1.item() == 0.0);
    double z = std::exp(0.2) + std::exp(1.4) + std::exp(-0.7);
    CHECK(loss.ce.item() == doctest::Approx(-std::log(std::exp(1.4) / z)).epsilon(1e-12));
    CHECK(loss.total.item() == doctest::Approx(loss.ce.item()).epsilon(1e-12));
}

TEST_CASE("trajectory_loss: k=1 has zero classification term (ln 1)") {
    std::int64_t T_ = 3;
    VecX<double> gt(T_ * 2);
    gt << 1, 0, 2, 0, 3, 0;
    VecX<double> traj(T_ * 2);
    traj << 1.5, 0.2, 2.5, -0.2, 3.5, 0.2;
    TrajectorySet<double> ts;
    ts.trajectories = T::from({1, T_, 2}, traj);
    ts.scores = T::from({1}, std::vector<double>{0.7});
    auto loss = trajectory_loss<double>({ts}, gt, T_);
    CHECK(loss.ce.item() == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(loss.l1.item() == doctest::Approx((0.5 + 0.2) * 3 / 6.0).epsilon(1e-12));
}

TEST_CASE("trajectory_loss: winner selection matches the exhaustive oracle on random sets") {
    Rng rng(73);
    for (int trial = 0; trial < 50; ++trial) {
        std::int64_t T_ = 5, k = 7;
        VecX<double> gt = rng.uniform_vec<double>(T_ * 2, -5, 5);
        VecX<double> trajs = rng.uniform_vec<double>(k * T_ * 2, -5, 5);
        TrajectorySet<double> ts;
        ts.trajectories = T::from({k, T_, 2}, trajs);
        ts.scores = T::from({k}, rng.uniform_vec<double>(k, -1, 1));
        auto loss = trajectory_loss<double>({ts}, gt, T_);
        // oracle
        double best = 1e300;
        std::int64_t want = 0;
        for (std::int64_t i = 0; i < k; ++i) {
            double acc = 0;
            for (std::int64_t t = 0; t < T_; ++t)
                acc += std::hypot(trajs[(i * T_ + t) * 2] - gt[2 * t],
                                  trajs[(i * T_ + t) * 2 + 1] - gt[2 * t + 1]);
            if (acc / double(T_) < best) {
                best = acc / double(T_);
                want = i;
            }
        }
        CHECK(loss.winners[0] == want);
    }
}

TEST_CASE("trajectory_loss: L1 gradients are exactly zero for non-winner trajectories") {
    Rng rng(79);
    std::int64_t T_ = 4, k = 4;
    VecX<double> gt = rng.uniform_vec<double>(T_ * 2, -3, 3);
    T trajs = T::from({k, T_, 2}, rng.uniform_vec<double>(k * T_ * 2, -3, 3));
    trajs.set_requires_grad();
    TrajectorySet<double> ts;
    ts.trajectories = trajs;
    ts.scores = T::from({k}, rng.uniform_vec<double>(k, -1, 1));
    auto loss = trajectory_loss<double>({ts}, gt, T_);
    backward(loss.l1);
    std::int64_t w = loss.winners[0];
    double win_mag = 0;
    for (std::int64_t i = 0; i < k; ++i)
        for (std::int64_t j = 0; j < T_ * 2; ++j) {
            double gv = trajs.grad()[i * T_ * 2 + j];
            if (i == w)
                win_mag += std::abs(gv);
            else
                CHECK(gv == 0.0);
        }
    CHECK(win_mag > 0.0);
}

TEST_CASE("select_trajectory: argmax with ties to the lowest index, shift invariant") {
    VecX<double> trajs(3 * 2 * 2);
    for (std::int64_t i = 0; i < trajs.size(); ++i) trajs[i] = double(i);
    TrajectorySet<double> ts;
    ts.trajectories = T::from({3, 2, 2}, trajs);
    ts.scores = T::from({3}, std::vector<double>{0.1, 0.9, 0.3});
    auto [idx, tr] = select_trajectory(ts);
    CHECK(idx == 1);
    CHECK(tr[0] == 4.0);  // row 1 starts at flat index 4
    // exhaustive max scan oracle + shift invariance
    for (double shift : {0.0, 5.0, -3.0}) {
        TrajectorySet<double> t2 = ts;
        VecX<double> sc = ts.scores.vals();
        for (auto& s : sc) s += shift;
        t2.scores = T::from({3}, sc);
        auto [i2, tr2] = select_trajectory(t2);
        CHECK(i2 == 1);
    }
    TrajectorySet<double> tie;
    tie.trajectories = T::from({3, 2, 2}, trajs);
    tie.scores = T::from({3}, std::vector<double>{0.5, 0.5, 0.2});
    CHECK(select_trajectory(tie).first == 0);
    TrajectorySet<double> single;
    single.trajectories = T::from({1, 2, 2}, std::vector<double>{1, 2, 3, 4});
    single.scores = T::from({1}, std::vector<double>{0.0});
    auto [i3, tr3] = select_trajectory(single);
    CHECK(i3 == 0);
    CHECK(tr3[3] == 4.0);
}

TEST_CASE("trajectory_loss: FD gradients through the full cascade") {
    Rng rng(83);
    std::int64_t d = 8, T_ = 4, k = 3;
    ParameterStore<double> st(89);
    auto cfg = cfg_of(2, k, 2, T_);
    CascadePlanner<double> planner(st, "plan", d, cfg);
    for (auto& stg : planner.stages) {
        stg.refine_w2.vals_mut() = rng.normal_vec<double>(stg.refine_w2.size(), 0, 0.2);
        stg.score_w2.vals_mut() = rng.normal_vec<double>(stg.score_w2.size(), 0, 0.2);
    }
    auto g = random_set(8, d, rng);
    g.f_exp.set_requires_grad();
    g.f_imp.set_requires_grad();
    std::vector<std::vector<double>> data{line_traj(0, 0, 1, 0, T_), line_traj(0, 0, 2, 0.5, T_),
                                          line_traj(0, 0, 1.5, -0.5, T_)};
    Rng vr(11);
    auto vocab = build_anchor_vocabulary(data, k, T_, vr);
    VecX<double> gt = rng.uniform_vec<double>(T_ * 2, -2, 2);
    auto f = [&] {
        auto stages = planner.run(vocab, g);
        return trajectory_loss<double>(stages, gt, T_).total;
    };
    std::vector<std::pair<std::string, T>> params{{"f_exp", g.f_exp}, {"f_imp", g.f_imp}};
    for (auto& [kname, t] : st.params()) params.push_back({kname, t});
    auto rep = gradcheck<double>(f, params, 1e-6, 6, 977);
    INFO("worst: ", rep.worst_param);
    CHECK(rep.worst <= 1e-4);
}
