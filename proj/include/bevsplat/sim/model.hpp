// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Full pipeline: toy backbones -> Gaussian encoder -> (renderer, cascade
// planner), with every weight in one ParameterStore. The initial Gaussian
// state and the anchor vocabulary live in the store as fixed buffers so a
// checkpoint reproduces inference bit for bit.

#pragma once

#include "bevsplat/config.hpp"
#include "bevsplat/planner/planner.hpp"
#include "bevsplat/render/loss.hpp"
#include "bevsplat/sim/backbone.hpp"
#include "bevsplat/sim/dataset.hpp"

namespace bevsplat::sim {

struct PipelineSettings {
    std::int64_t gaussians = 512;
    std::int64_t dim = 128;
    std::int64_t classes = 4;
    double sigma0 = 1.0;
    double feat_std = 0.02;
    std::int64_t lidar_bins = 8;
    std::int64_t n_views = 3;
    SceneBounds bounds;
    enc::EncoderConfig encoder;
    plan::PlannerConfig planner;
    raster::RasterConfig raster;
    double lovasz_weight = 1.0, map_weight = 1.0, traj_weight = 1.0;

    static PipelineSettings from_config(const Config& c) {
        PipelineSettings s;
        s.gaussians = c.geti("gaussians.count");
        s.dim = c.geti("gaussians.dim");
        s.classes = c.geti("scene.classes");
        s.sigma0 = c.getf("gaussians.sigma0");
        s.feat_std = c.getf("gaussians.feat_std");
        s.lidar_bins = c.geti("lidar.height_bins");
        s.n_views = c.geti("cameras.count");
        s.bounds.x_min = c.getf("scene.x_min");
        s.bounds.x_max = c.getf("scene.x_max");
        s.bounds.y_min = c.getf("scene.y_min");
        s.bounds.y_max = c.getf("scene.y_max");
        s.bounds.z_min = c.getf("scene.z_min");
        s.bounds.z_max = c.getf("scene.z_max");
        s.encoder.blocks = c.geti("encoder.blocks");
        s.encoder.heads = c.geti("encoder.heads");
        s.encoder.points = c.geti("encoder.points");
        s.encoder.levels = c.geti("encoder.levels");
        s.encoder.implicit_heads = c.geti("encoder.implicit_heads");
        s.encoder.learnable_queries = c.geti("queries.learnable");
        s.encoder.pillar_samples = c.geti("queries.pillar");
        s.encoder.reduce_mean = c.gets("encoder.query_reduce") == "mean";
        s.planner.stages = c.geti("planner.stages");
        s.planner.anchors = c.geti("planner.anchors");
        s.planner.top_m = c.geti("planner.top_m");
        s.planner.horizon = c.geti("planner.horizon");
        s.planner.use_ego_state = c.getb("planner.use_ego_state");
        s.planner.coord_scale = 0.5 * std::max(s.bounds.x_extent(), s.bounds.y_extent());
        s.raster.h = c.geti("raster.h");
        s.raster.w = c.geti("raster.w");
        s.raster.resolution = c.getf("raster.resolution");
        s.raster.cutoff = c.getf("raster.cutoff");
        s.raster.tile = c.geti("raster.tile");
        s.lovasz_weight = c.getf("loss.lovasz_weight");
        s.map_weight = c.getf("loss.map_weight");
        s.traj_weight = c.getf("loss.traj_weight");
        return s;
    }
};

template <class S>
Tensor<S> tensor_from_f64(const std::vector<double>& v, Shape shape) {
    VecX<S> out(static_cast<std::int64_t>(v.size()));
    for (std::int64_t i = 0; i < out.size(); ++i) out[i] = static_cast<S>(v[static_cast<size_t>(i)]);
    return Tensor<S>::from(std::move(shape), std::move(out));
}

template <class S>
struct PipelineOutput {
    scene::GaussianSet<S> refined;
    raster::SemanticBevMap<S> map;
    std::vector<plan::TrajectorySet<S>> stages;
    bool has_map = false;
};

template <class S>
struct LossBreakdown {
    Tensor<S> total;
    double map_ce = 0, map_lovasz = 0, traj_l1 = 0, traj_ce = 0;
};

template <class S>
class Pipeline {
  public:
    Pipeline(const PipelineSettings& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
        cfg_.bounds.validate();
        cfg_.raster.validate();
        Rng init_rng = store_.rng().fork();
        auto g0 = scene::init_gaussians<S>(cfg_.gaussians, cfg_.bounds, cfg_.classes, cfg_.dim,
                                           init_rng, cfg_.sigma0, cfg_.feat_std);
        init_.means = store_.buffer("init.means", g0.means.shape(), g0.means.vals());
        init_.scale_param =
            store_.buffer("init.scale_param", g0.scale_param.shape(), g0.scale_param.vals());
        init_.rot_raw = store_.buffer("init.rot_raw", g0.rot_raw.shape(), g0.rot_raw.vals());
        init_.logits = store_.buffer("init.logits", g0.logits.shape(), g0.logits.vals());
        init_.prior_param =
            store_.buffer("init.prior_param", g0.prior_param.shape(), g0.prior_param.vals());
        init_.f_exp = store_.buffer("init.f_exp", g0.f_exp.shape(), g0.f_exp.vals());
        init_.f_imp = store_.buffer("init.f_imp", g0.f_imp.shape(), g0.f_imp.vals());
        vocab_buf_ = store_.buffer("planner.vocab",
                                   {cfg_.planner.anchors, cfg_.planner.horizon, 2},
                                   Init<S>::zeros());
        bev_backbone_ = ConvPyramid<S>(store_, "backbone.bev", cfg_.lidar_bins, cfg_.dim,
                                       cfg_.encoder.levels);
        img_backbone_ = ConvPyramid<S>(store_, "backbone.img", 3, cfg_.dim, cfg_.encoder.levels);
        encoder_ = enc::GaussianEncoder<S>(store_, "enc", cfg_.dim, cfg_.gaussians, cfg_.classes,
                                           cfg_.n_views, cfg_.encoder, cfg_.bounds);
        planner_ = plan::CascadePlanner<S>(store_, "plan", cfg_.dim, cfg_.planner);
    }

    const PipelineSettings& settings() const { return cfg_; }
    ParameterStore<S>& store() { return store_; }
    const ParameterStore<S>& store() const { return store_; }
    const plan::CascadePlanner<S>& planner() const { return planner_; }

    scene::GaussianSet<S> initial_set() const { return init_; }

    void set_vocabulary(const plan::AnchorVocabulary& v) {
        if (v.k != cfg_.planner.anchors || v.horizon != cfg_.planner.horizon)
            throw std::invalid_argument("pipeline: vocabulary shape does not match the config");
        for (std::int64_t i = 0; i < vocab_buf_.size(); ++i)
            vocab_buf_.vals_mut()[i] = static_cast<S>(v.anchors[static_cast<size_t>(i)]);
        has_vocab_ = true;
    }
    plan::AnchorVocabulary vocabulary() const {
        plan::AnchorVocabulary v;
        v.k = cfg_.planner.anchors;
        v.horizon = cfg_.planner.horizon;
        v.anchors.resize(static_cast<size_t>(vocab_buf_.size()));
        for (std::int64_t i = 0; i < vocab_buf_.size(); ++i)
            v.anchors[static_cast<size_t>(i)] = static_cast<double>(vocab_buf_.vals()[i]);
        return v;
    }
    // after a checkpoint load the buffer carries the trained vocabulary
    void mark_vocabulary_loaded() { has_vocab_ = true; }

    std::pair<enc::BevFeaturePyramid<S>, enc::ImageFeaturePyramid<S>> encode_features(
        const SceneSample& smp, const SceneGenParams& p) const {
        enc::BevFeaturePyramid<S> bev;
        Tensor<S> braster = tensor_from_f64<S>(
            smp.bev_raster, {cfg_.lidar_bins, p.raster_h, p.raster_w});
        bev.levels = bev_backbone_.forward(braster);
        enc::ImageFeaturePyramid<S> img;
        img.levels.resize(static_cast<size_t>(cfg_.encoder.levels));
        img.cams = smp.cams;
        for (size_t v = 0; v < smp.images.size(); ++v) {
            Tensor<S> im = tensor_from_f64<S>(smp.images[v], {3, p.image_h, p.image_w});
            auto lv = img_backbone_.forward(im);
            for (std::int64_t l = 0; l < cfg_.encoder.levels; ++l)
                img.levels[static_cast<size_t>(l)].push_back(lv[static_cast<size_t>(l)]);
        }
        return {std::move(bev), std::move(img)};
    }

    // The map head is skippable at inference (want_map = false).
    PipelineOutput<S> forward(const SceneSample& smp, const SceneGenParams& p, bool want_map,
                              raster::RenderPath path = raster::RenderPath::Tiled) const {
        if (!has_vocab_)
            throw std::runtime_error("pipeline: anchor vocabulary not set (train or load first)");
        auto [bev, img] = encode_features(smp, p);
        PipelineOutput<S> out;
        out.refined = encoder_.run(init_, bev, img);
        if (want_map) {
            out.map = raster::render(out.refined, cfg_.bounds, cfg_.raster, path);
            out.has_map = true;
        }
        out.stages = planner_.run(vocabulary(), out.refined);
        return out;
    }

    LossBreakdown<S> loss(const PipelineOutput<S>& out, const SceneSample& smp) const {
        if (!out.has_map) throw std::invalid_argument("loss: forward must render the map");
        auto ml = raster::map_loss(out.map, smp.gt_map, cfg_.lovasz_weight);
        VecX<S> gt(static_cast<std::int64_t>(smp.gt_traj.size()));
        for (std::int64_t i = 0; i < gt.size(); ++i)
            gt[i] = static_cast<S>(smp.gt_traj[static_cast<size_t>(i)]);
        auto tl = plan::trajectory_loss(out.stages, gt, cfg_.planner.horizon);
        LossBreakdown<S> lb;
        lb.map_ce = static_cast<double>(ml.ce.item());
        lb.map_lovasz = static_cast<double>(ml.lovasz.item());
        lb.traj_l1 = static_cast<double>(tl.l1.item());
        lb.traj_ce = static_cast<double>(tl.ce.item());
        lb.total = add(ml.total * static_cast<S>(cfg_.map_weight),
                       tl.total * static_cast<S>(cfg_.traj_weight));
        return lb;
    }

  private:
    PipelineSettings cfg_;
    ParameterStore<S> store_;
    scene::GaussianSet<S> init_;
    Tensor<S> vocab_buf_;
    bool has_vocab_ = false;
    ConvPyramid<S> bev_backbone_, img_backbone_;
    enc::GaussianEncoder<S> encoder_;
    plan::CascadePlanner<S> planner_;
};

}  // namespace bevsplat::sim
