// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "bevsplat/sim/train.hpp"

#include <filesystem>

using namespace bevsplat;
using namespace bevsplat::sim;
using scene::SceneBounds;
using T = Tensor<double>;

namespace {

SceneBounds default_bounds() {
    SceneBounds b;
    b.x_min = -10;
    b.x_max = 38;
    b.y_min = -24;
    b.y_max = 24;
    b.z_min = -1;
    b.z_max = 4;
    return b;
}

SceneGenParams small_params() {
    SceneGenParams p;
    p.raster_h = 64;
    p.raster_w = 64;
    p.resolution = 0.75;
    p.horizon = 8;
    p.n_views = 2;
    p.image_h = 24;
    p.image_w = 32;
    p.lidar_bins = 4;
    return p;
}

PipelineSettings micro_pipeline_settings() {
    PipelineSettings s;
    s.gaussians = 12;
    s.dim = 16;
    s.classes = 4;
    s.lidar_bins = 4;
    s.n_views = 2;
    s.bounds = default_bounds();
    s.encoder.blocks = 1;
    s.encoder.heads = 2;
    s.encoder.points = 2;
    s.encoder.levels = 2;
    s.encoder.learnable_queries = 2;
    s.encoder.pillar_samples = 2;
    s.planner.stages = 2;
    s.planner.anchors = 3;
    s.planner.top_m = 3;
    s.planner.horizon = 8;
    s.planner.coord_scale = 24.0;
    s.raster.h = 64;
    s.raster.w = 64;
    s.raster.resolution = 0.75;
    return s;
}

}  // namespace

TEST_CASE("generate_scene: empty difficulty has only drivable and lane classes") {
    Rng rng(7);
    SceneGenParams p = small_params();
    p.difficulty = Difficulty::Empty;
    auto s = generate_scene(rng, default_bounds(), p);
    bool saw_drivable = false, saw_lane = false;
    for (auto c : s.gt_map) {
        CHECK(c != 3);  // no vehicles
        CHECK(c != 4);  // no ego-path painting
        saw_drivable = saw_drivable || c == 1;
        saw_lane = saw_lane || c == 2;
    }
    CHECK(saw_drivable);
    CHECK(saw_lane);
}

TEST_CASE("generate_scene: ego waypoints lie on drivable pixels of the map") {
    SceneGenParams p = small_params();
    SceneBounds b = default_bounds();
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed + 50);
        auto s = generate_scene(rng, b, p);
        for (std::int64_t t = 0; t < p.horizon; ++t) {
            double x = s.gt_traj[size_t(2 * t)], y = s.gt_traj[size_t(2 * t + 1)];
            std::int64_t j = std::int64_t(std::floor((x - b.x_min) / p.resolution));
            std::int64_t i = std::int64_t(std::floor((y - b.y_min) / p.resolution));
            REQUIRE(i >= 0);
            REQUIRE(j >= 0);
            REQUIRE(i < p.raster_h);
            REQUIRE(j < p.raster_w);
            std::int32_t c = s.gt_map[static_cast<size_t>(i * p.raster_w + j)];
            // on the corridor: drivable, the ego-path band or a lane line edge
            CHECK(c != 0);
            CHECK(c != 3);
        }
    }
}

TEST_CASE("generate_scene: class-pixel counts match a supersampled rasterization oracle") {
    // The gt raster classifies pixel centers. The oracle rasterizes the same
    // analytic shapes with 4x4 supersampling; any disagreement must sit on a
    // class boundary (some sub-sample disagrees with the center).
    Rng rng(23);
    SceneGenParams p = small_params();
    SceneBounds b = default_bounds();
    auto s = generate_scene(rng, b, p);
    SceneGeometry geo;
    geo.curvature = s.curvature;
    geo.ego_lateral = s.ego_lateral;
    geo.vehicles = s.vehicles;
    geo.road_half = p.road_half_width;
    geo.lane_half = p.lane_line_half;
    geo.ego_half = p.ego_path_half;
    geo.build_polylines();
    geo.ego_path.pts.push_back(detail_sim::offset_point(0.0, geo.curvature, geo.ego_lateral));
    for (std::int64_t t = 0; t < p.horizon; ++t)
        geo.ego_path.pts.push_back({s.gt_traj[size_t(2 * t)], s.gt_traj[size_t(2 * t + 1)]});

    std::int64_t interior_mismatch = 0;
    for (std::int64_t i = 0; i < p.raster_h; ++i)
        for (std::int64_t j = 0; j < p.raster_w; ++j) {
            // supersample the pixel footprint
            std::array<std::int64_t, 5> counts{};
            for (int si = 0; si < 4; ++si)
                for (int sj = 0; sj < 4; ++sj) {
                    double x = b.x_min + (double(j) + (sj + 0.5) / 4.0) * p.resolution;
                    double y = b.y_min + (double(i) + (si + 0.5) / 4.0) * p.resolution;
                    ++counts[static_cast<size_t>(geo.class_at(x, y))];
                }
            std::int32_t got = s.gt_map[static_cast<size_t>(i * p.raster_w + j)];
            bool uniform = counts[static_cast<size_t>(got)] == 16;
            if (!uniform) continue;  // boundary band: +-1 px tolerance
            // interior pixel: the center classification must agree everywhere
            std::int64_t best = 0;
            for (std::int64_t c = 1; c < 5; ++c)
                if (counts[size_t(c)] > counts[size_t(best)]) best = c;
            if (best != got) ++interior_mismatch;
        }
    CHECK(interior_mismatch == 0);
}

TEST_CASE("generate_scene: deterministic for a fixed seed") {
    SceneGenParams p = small_params();
    Rng r1(99), r2(99);
    auto a = generate_scene(r1, default_bounds(), p);
    auto b = generate_scene(r2, default_bounds(), p);
    CHECK(a.gt_map == b.gt_map);
    CHECK(a.gt_traj == b.gt_traj);
    CHECK(a.bev_raster == b.bev_raster);
    for (size_t v = 0; v < a.images.size(); ++v) CHECK(a.images[v] == b.images[v]);
}

TEST_CASE("dataset: save -> load round trip is bit-exact") {
    SceneGenParams p = small_params();
    auto ds = generate_dataset(31, 3, default_bounds(), p);
    std::string dir = "dataset_roundtrip_test";
    save_dataset(ds, dir);
    auto ds2 = load_dataset(dir);
    REQUIRE(ds2.samples.size() == 3);
    for (size_t i = 0; i < 3; ++i) {
        CHECK(ds2.samples[i].gt_map == ds.samples[i].gt_map);
        CHECK(ds2.samples[i].gt_traj == ds.samples[i].gt_traj);
        CHECK(ds2.samples[i].bev_raster == ds.samples[i].bev_raster);
        for (size_t v = 0; v < ds.samples[i].images.size(); ++v)
            CHECK(ds2.samples[i].images[v] == ds.samples[i].images[v]);
    }
    CHECK(ds2.bounds.x_min == ds.bounds.x_min);
    CHECK(ds2.params.horizon == ds.params.horizon);
    std::filesystem::remove_all(dir);
}

TEST_CASE("metrics: perfect map has mIoU 1, perfect trajectory has zero errors") {
    std::vector<std::int32_t> gt{0, 1, 2, 1, 0, 2, 1, 1, 0};
    VecX<double> probs = VecX<double>::Zero(9 * 3);
    for (int i = 0; i < 9; ++i) probs[i * 3 + gt[size_t(i)]] = 1.0;
    raster::SemanticBevMap<double> m;
    m.grid = T::from({3, 3, 3}, probs);
    auto seg = seg_metrics(m, gt);
    CHECK(seg.miou == doctest::Approx(1.0));
    CHECK(seg.miou_foreground == doctest::Approx(1.0));

    std::vector<double> traj{1, 2, 3, 4, 5, 6};
    auto [ade, fde] = displacement_errors(traj, traj);
    CHECK(ade == 0.0);
    CHECK(fde == 0.0);
}

TEST_CASE("metrics: random 4x4 map against a hand-computed confusion matrix") {
    // gt / pred laid out explicitly; IoU per class from exhaustive counting
    std::vector<std::int32_t> gt{0, 0, 1, 1, 2, 2, 1, 0, 0, 1, 2, 2, 1, 1, 0, 0};
    std::vector<std::int32_t> pr{0, 1, 1, 1, 2, 0, 1, 0, 0, 2, 2, 2, 1, 0, 0, 0};
    VecX<double> probs = VecX<double>::Zero(16 * 3);
    for (int i = 0; i < 16; ++i) probs[i * 3 + pr[size_t(i)]] = 1.0;
    raster::SemanticBevMap<double> m;
    m.grid = T::from({4, 4, 3}, probs);
    auto seg = seg_metrics(m, gt);
    // exhaustive counting oracle
    double i0 = 5, u0 = 5 + 1 + 2;  // TP, TP+FN+FP for class 0
    double i1 = 4, u1 = 4 + 2 + 1;
    double i2 = 3, u2 = 3 + 1 + 1;
    CHECK(seg.iou[0] == doctest::Approx(i0 / u0));
    CHECK(seg.iou[1] == doctest::Approx(i1 / u1));
    CHECK(seg.iou[2] == doctest::Approx(i2 / u2));
    CHECK(seg.miou == doctest::Approx((i0 / u0 + i1 / u1 + i2 / u2) / 3.0));
    CHECK(seg.miou_foreground == doctest::Approx((i1 / u1 + i2 / u2) / 2.0));

    std::vector<double> p2{0, 0, 3, 4}, g2{0, 0, 0, 0};
    auto [ade, fde] = displacement_errors(p2, g2);
    CHECK(ade == doctest::Approx(2.5));
    CHECK(fde == doctest::Approx(5.0));
}

TEST_CASE("backbone: pyramid shapes and determinism") {
    ParameterStore<double> st(5);
    ConvPyramid<double> bb(st, "bb", 4, 16, 2);
    Rng rng(3);
    T x = T::from({4, 64, 64}, rng.normal_vec<double>(4 * 64 * 64, 0, 1));
    auto levels = bb.forward(x);
    REQUIRE(levels.size() == 2);
    CHECK(levels[0].shape() == Shape{16, 32, 32});
    CHECK(levels[1].shape() == Shape{16, 16, 16});
    auto again = bb.forward(x);
    CHECK((levels[0].vals() - again[0].vals()).abs().maxCoeff() == 0.0);
}

TEST_CASE("pipeline: forward produces a valid map, trajectories and is deterministic") {
    auto s = micro_pipeline_settings();
    SceneGenParams p = small_params();
    auto ds = generate_dataset(17, 2, s.bounds, p);
    Pipeline<double> pipe(s, 11);
    std::vector<std::vector<double>> trajs;
    for (auto& smp : ds.samples) trajs.push_back(smp.gt_traj);
    // a vocabulary whose k disagrees with the config is rejected
    Rng vr(5);
    auto small_vocab = plan::build_anchor_vocabulary(trajs, 2, 8, vr);
    CHECK_THROWS_AS(pipe.set_vocabulary(small_vocab), std::invalid_argument);
    auto full = plan::AnchorVocabulary{};
    full.k = 3;
    full.horizon = 8;
    full.anchors.assign(size_t(3 * 8 * 2), 0.0);
    for (int a = 0; a < 3; ++a)
        for (int t = 0; t < 8; ++t) {
            full.anchors[size_t((a * 8 + t) * 2)] = 2.5 * (t + 1);
            full.anchors[size_t((a * 8 + t) * 2 + 1)] = 0.4 * (a - 1) * (t + 1);
        }
    pipe.set_vocabulary(full);
    auto out = pipe.forward(ds.samples[0], ds.params, true);
    CHECK(out.map.grid.shape() == Shape{64, 64, 5});
    CHECK(out.stages.size() == 2);
    CHECK(out.stages.back().trajectories.shape() == Shape{3, 8, 2});
    auto lb = pipe.loss(out, ds.samples[0]);
    CHECK(std::isfinite(lb.total.item()));
    // determinism across fresh pipelines with the same seed
    Pipeline<double> pipe2(s, 11);
    pipe2.set_vocabulary(full);
    auto out2 = pipe2.forward(ds.samples[0], ds.params, true);
    CHECK((out.map.grid.vals() - out2.map.grid.vals()).abs().maxCoeff() == 0.0);
    CHECK((out.stages.back().trajectories.vals() - out2.stages.back().trajectories.vals())
              .abs()
              .maxCoeff() == 0.0);
}

TEST_CASE("pipeline: checkpoint round trip preserves forward outputs bit-exactly") {
    auto s = micro_pipeline_settings();
    SceneGenParams p = small_params();
    auto ds = generate_dataset(29, 4, s.bounds, p);
    Pipeline<double> pipe(s, 13);
    TrainSettings ts;
    ts.epochs = 2;
    ts.batch = 4;
    ts.lr_max = 3e-4;
    auto hist = train(pipe, ds, ts, nullptr);
    CHECK(hist.steps == 2);
    auto out = pipe.forward(ds.samples[0], ds.params, true);
    save_checkpoint(pipe.store(), "pipeline_ckpt_test.bsc");

    Pipeline<double> fresh(s, 13);
    load_checkpoint(fresh.store(), "pipeline_ckpt_test.bsc");
    fresh.mark_vocabulary_loaded();
    auto out2 = fresh.forward(ds.samples[0], ds.params, true);
    CHECK((out.map.grid.vals() - out2.map.grid.vals()).abs().maxCoeff() == 0.0);
    CHECK((out.stages.back().scores.vals() - out2.stages.back().scores.vals()).abs().maxCoeff() ==
          0.0);
    std::remove("pipeline_ckpt_test.bsc");
}

TEST_CASE("train: losses drop on a tiny overfit and evaluate reports coherent metrics") {
    auto s = micro_pipeline_settings();
    SceneGenParams p = small_params();
    p.difficulty = Difficulty::Easy;
    auto ds = generate_dataset(41, 3, s.bounds, p);
    Pipeline<double> pipe(s, 19);
    TrainSettings ts;
    ts.epochs = 100;
    ts.batch = 3;
    ts.lr_max = 3e-3;
    std::ostringstream log;
    auto hist = train(pipe, ds, ts, &log);
    REQUIRE(hist.steps == 100);
    double first5 = 0, last5 = 0;
    for (int i = 0; i < 5; ++i) {
        first5 += hist.total_loss[size_t(i)] / 5.0;
        last5 += hist.total_loss[size_t(hist.steps - 1 - i)] / 5.0;
    }
    CHECK(last5 < first5);
    CHECK(log.str().find("\"lr\"") != std::string::npos);

    auto ev = evaluate(pipe, ds);
    CHECK(ev.samples == 3);
    CHECK(ev.ade >= 0.0);
    CHECK(ev.seg.miou >= 0.0);
    CHECK(ev.seg.miou <= 1.0);
    CHECK(ev.dist_fg_init > 0.0);
    auto j = ev.to_json(ds.class_names);
    CHECK(j.contains("gaussian_migration"));
}
