// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Training and evaluation loops. Map supervision applies to the final
// encoder block's Gaussians only (the pipeline renders the final set);
// trajectory supervision spans every cascade stage.

#pragma once

#include "bevsplat/core/checkpoint.hpp"
#include "bevsplat/sim/metrics.hpp"
#include "bevsplat/sim/model.hpp"

#include <nlohmann/json.hpp>

#include <mutex>
#include <ostream>

namespace bevsplat::sim {

struct TrainSettings {
    double lr_max = 6e-4;
    double lr_floor = 0.0;
    double weight_decay = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::int64_t epochs = 50;
    std::int64_t batch = 8;
    std::int64_t max_steps = 0;  // 0 = no cap
    std::int64_t log_every = 1;

    static TrainSettings from_config(const Config& c) {
        TrainSettings t;
        t.lr_max = c.getf("train.lr");
        t.lr_floor = c.getf("train.lr_floor");
        t.weight_decay = c.getf("train.weight_decay");
        t.beta1 = c.getf("train.beta1");
        t.beta2 = c.getf("train.beta2");
        t.eps = c.getf("train.eps");
        t.epochs = c.geti("train.epochs");
        t.batch = c.geti("train.batch");
        t.max_steps = c.geti("train.max_steps");
        t.log_every = c.geti("train.log_every");
        return t;
    }
};

struct TrainHistory {
    std::vector<double> total_loss;  // per step (batch mean)
    std::int64_t steps = 0;
};

// Builds the anchor vocabulary from the dataset trajectories, then runs
// AdamW with a cosine schedule. Per-step JSONL rows go to `log` when given.
//
// Batch items are independent graphs: with worker_threads() > 1 they are
// evaluated on replica pipelines (identical parameters), with per-replica
// gradients reduced in replica order, so a fixed thread count reproduces
// bit-exactly.
template <class S>
TrainHistory train(Pipeline<S>& pipe, const Dataset& ds, const TrainSettings& ts,
                   std::ostream* log = nullptr) {
    if (ds.samples.empty()) throw std::invalid_argument("train: empty dataset");
    std::vector<std::vector<double>> trajs;
    for (auto& s : ds.samples) trajs.push_back(s.gt_traj);
    Rng vocab_rng(pipe.store().seed() ^ 0x70c4bull);
    pipe.set_vocabulary(plan::build_anchor_vocabulary(
        trajs, pipe.settings().planner.anchors, pipe.settings().planner.horizon, vocab_rng));

    std::int64_t n = static_cast<std::int64_t>(ds.samples.size());
    std::int64_t batch = std::min<std::int64_t>(std::max<std::int64_t>(1, ts.batch), n);
    std::int64_t steps_per_epoch = (n + batch - 1) / batch;
    std::int64_t total_steps = ts.epochs * steps_per_epoch;
    if (ts.max_steps > 0) total_steps = std::min(total_steps, ts.max_steps);

    AdamWConfig adam;
    adam.weight_decay = ts.weight_decay;
    adam.beta1 = ts.beta1;
    adam.beta2 = ts.beta2;
    adam.eps = ts.eps;

    int workers = std::max(1, std::min<int>(worker_threads(), static_cast<int>(batch)));
    std::vector<std::unique_ptr<Pipeline<S>>> replicas;
    for (int r = 1; r < workers; ++r) {
        replicas.push_back(std::make_unique<Pipeline<S>>(pipe.settings(), pipe.store().seed()));
        replicas.back()->set_vocabulary(pipe.vocabulary());
    }
    auto sync_replicas = [&] {
        for (auto& rep : replicas)
            for (auto& [name, t] : rep->store().params())
                const_cast<Tensor<S>&>(t).vals_mut() = pipe.store().get(name).vals();
    };
    sync_replicas();

    TrainHistory hist;
    Rng order_rng(pipe.store().seed() ^ 0x0d9e57ull);
    std::vector<std::int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), std::int64_t(0));
    std::int64_t cursor = 0;
    auto reshuffle = [&] {
        for (std::int64_t i = n - 1; i > 0; --i)
            std::swap(order[size_t(i)], order[static_cast<size_t>(order_rng.uniform_int(0, i))]);
        cursor = 0;
    };
    reshuffle();

    for (std::int64_t step = 0; step < total_steps; ++step) {
        std::vector<std::int64_t> scenes(static_cast<size_t>(batch));
        for (std::int64_t bi = 0; bi < batch; ++bi) {
            if (cursor >= n) reshuffle();
            scenes[size_t(bi)] = order[size_t(cursor++)];
        }
        std::vector<std::array<double, 5>> per_scene(static_cast<size_t>(batch));
        std::exception_ptr err;
        std::mutex err_mu;
        pipe.store().zero_grad();
        for (auto& rep : replicas) rep->store().zero_grad();
        parallel_chunks(batch, workers, [&](int chunk, std::int64_t b, std::int64_t e) {
            Pipeline<S>& worker = chunk == 0 ? pipe : *replicas[static_cast<size_t>(chunk - 1)];
            try {
                for (std::int64_t bi = b; bi < e; ++bi) {
                    const SceneSample& smp = ds.samples[static_cast<size_t>(scenes[size_t(bi)])];
                    auto out = worker.forward(smp, ds.params, true, raster::RenderPath::Tiled);
                    auto lb = worker.loss(out, smp);
                    backward(lb.total * static_cast<S>(1.0 / double(batch)));
                    per_scene[size_t(bi)] = {static_cast<double>(lb.total.item()), lb.map_ce,
                                             lb.map_lovasz, lb.traj_l1, lb.traj_ce};
                }
            } catch (...) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!err) err = std::current_exception();
            }
        });
        if (err) std::rethrow_exception(err);
        // reduce replica gradients into the master, in replica order
        auto grads = collect_grads(pipe.store());
        for (auto& rep : replicas)
            for (auto& [name, t] : rep->store().params())
                if (t.grad().size() == t.size()) grads[name] += t.grad();
        double batch_total = 0, mce = 0, mlov = 0, tl1 = 0, tce = 0;
        for (auto& row : per_scene) {
            batch_total += row[0] / double(batch);
            mce += row[1] / double(batch);
            mlov += row[2] / double(batch);
            tl1 += row[3] / double(batch);
            tce += row[4] / double(batch);
        }
        adam.lr = cosine_lr(step, total_steps, ts.lr_max, ts.lr_floor);
        adamw_step(pipe.store(), grads, adam);
        if (!replicas.empty()) sync_replicas();
        hist.total_loss.push_back(batch_total);
        ++hist.steps;
        if (log && step % ts.log_every == 0) {
            nlohmann::json row{{"step", step},        {"lr", adam.lr},      {"loss", batch_total},
                               {"map_ce", mce},       {"map_lovasz", mlov}, {"traj_l1", tl1},
                               {"traj_ce", tce}};
            (*log) << row.dump() << "\n";
        }
    }
    return hist;
}

struct EvalResult {
    SegMetrics seg;
    double ade = 0, fde = 0;
    double dist_fg_init = 0, dist_fg_refined = 0;
    std::int64_t samples = 0;

    nlohmann::json to_json(const std::vector<std::string>& class_names) const {
        nlohmann::json j;
        j["samples"] = samples;
        j["miou"] = seg.miou;
        j["miou_foreground"] = seg.miou_foreground;
        for (size_t c = 0; c < seg.iou.size(); ++c) {
            std::string name = c < class_names.size() ? class_names[c] : std::to_string(c);
            if (!std::isnan(seg.iou[c])) j["iou"][name] = seg.iou[c];
        }
        j["ade"] = ade;
        j["fde"] = fde;
        j["gaussian_migration"] = {{"mean_dist_to_foreground_init", dist_fg_init},
                                   {"mean_dist_to_foreground_refined", dist_fg_refined},
                                   {"ratio", dist_fg_init > 0 ? dist_fg_refined / dist_fg_init
                                                              : 0.0}};
        return j;
    }
};

// Deterministic given checkpoint + dataset: per-scene mIoU / ADE / FDE plus
// the Gaussian migration statistic (distance to the nearest foreground pixel
// before vs after encoding).
template <class S>
EvalResult evaluate(Pipeline<S>& pipe, const Dataset& ds) {
    EvalResult r;
    std::vector<double> iou_sum;
    std::vector<std::int64_t> iou_cnt;
    for (auto& smp : ds.samples) {
        auto out = pipe.forward(smp, ds.params, true, raster::RenderPath::Tiled);
        auto seg = seg_metrics(out.map, smp.gt_map);
        if (iou_sum.empty()) {
            iou_sum.assign(seg.iou.size(), 0.0);
            iou_cnt.assign(seg.iou.size(), 0);
        }
        for (size_t c = 0; c < seg.iou.size(); ++c)
            if (!std::isnan(seg.iou[c])) {
                iou_sum[c] += seg.iou[c];
                ++iou_cnt[c];
            }
        auto [idx, traj] = plan::select_trajectory(out.stages.back());
        (void)idx;
        std::vector<double> pred(static_cast<size_t>(traj.size()));
        for (std::int64_t i = 0; i < traj.size(); ++i) pred[size_t(i)] = double(traj[i]);
        auto [ade, fde] = displacement_errors(pred, smp.gt_traj);
        r.ade += ade;
        r.fde += fde;

        auto means_of = [&](const Tensor<S>& m) {
            std::vector<double> v(static_cast<size_t>(m.size()));
            for (std::int64_t i = 0; i < m.size(); ++i) v[size_t(i)] = double(m.vals()[i]);
            return v;
        };
        r.dist_fg_init += mean_dist_to_foreground(means_of(pipe.initial_set().means), smp.gt_map,
                                                  ds.params.raster_h, ds.params.raster_w,
                                                  ds.bounds, ds.params.resolution);
        r.dist_fg_refined += mean_dist_to_foreground(means_of(out.refined.means), smp.gt_map,
                                                     ds.params.raster_h, ds.params.raster_w,
                                                     ds.bounds, ds.params.resolution);
        ++r.samples;
    }
    double inv = r.samples ? 1.0 / double(r.samples) : 0.0;
    r.ade *= inv;
    r.fde *= inv;
    r.dist_fg_init *= inv;
    r.dist_fg_refined *= inv;
    double sum = 0, sum_fg = 0;
    std::int64_t cnt = 0, cnt_fg = 0;
    for (size_t c = 0; c < iou_sum.size(); ++c) {
        if (iou_cnt[c] == 0) {
            r.seg.iou.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        double v = iou_sum[c] / double(iou_cnt[c]);
        r.seg.iou.push_back(v);
        sum += v;
        ++cnt;
        if (c >= 1) {
            sum_fg += v;
            ++cnt_fg;
        }
    }
    r.seg.miou = cnt ? sum / double(cnt) : 0;
    r.seg.miou_foreground = cnt_fg ? sum_fg / double(cnt_fg) : 0;
    return r;
}

}  // namespace bevsplat::sim
