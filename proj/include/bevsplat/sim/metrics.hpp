// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "bevsplat/render/raster.hpp"

namespace bevsplat::sim {

struct SegMetrics {
    std::vector<double> iou;  // per class, NaN when absent from both
    double miou = 0;            // over classes present in gt or prediction
    double miou_foreground = 0;  // classes >= 1
};

// mIoU from the argmax class map against ground-truth indices.
template <class S>
SegMetrics seg_metrics(const raster::SemanticBevMap<S>& pred,
                       const std::vector<std::int32_t>& gt) {
    std::int64_t K = pred.grid.dim(2);
    std::int64_t N = pred.grid.dim(0) * pred.grid.dim(1);
    std::vector<std::int64_t> inter(static_cast<size_t>(K), 0), uni(static_cast<size_t>(K), 0);
    for (std::int64_t i = 0; i < N; ++i) {
        std::int64_t am = 0;
        for (std::int64_t c = 1; c < K; ++c)
            if (pred.grid.vals()[i * K + c] > pred.grid.vals()[i * K + am]) am = c;
        std::int64_t g = gt[static_cast<size_t>(i)];
        if (am == g) {
            ++inter[static_cast<size_t>(g)];
            ++uni[static_cast<size_t>(g)];
        } else {
            ++uni[static_cast<size_t>(g)];
            ++uni[static_cast<size_t>(am)];
        }
    }
    SegMetrics m;
    double sum = 0, sum_fg = 0;
    std::int64_t cnt = 0, cnt_fg = 0;
    for (std::int64_t c = 0; c < K; ++c) {
        if (uni[static_cast<size_t>(c)] == 0) {
            m.iou.push_back(std::numeric_limits<double>::quiet_NaN());
            continue;
        }
        double v = double(inter[static_cast<size_t>(c)]) / double(uni[static_cast<size_t>(c)]);
        m.iou.push_back(v);
        sum += v;
        ++cnt;
        if (c >= 1) {
            sum_fg += v;
            ++cnt_fg;
        }
    }
    m.miou = cnt ? sum / double(cnt) : 0.0;
    m.miou_foreground = cnt_fg ? sum_fg / double(cnt_fg) : 0.0;
    return m;
}

// ADE = mean waypoint L2, FDE = final-waypoint L2 (meters).
inline std::pair<double, double> displacement_errors(const std::vector<double>& pred_tx2,
                                                     const std::vector<double>& gt_tx2) {
    if (pred_tx2.size() != gt_tx2.size() || pred_tx2.empty())
        throw std::invalid_argument("displacement_errors: trajectory shape mismatch");
    size_t T = pred_tx2.size() / 2;
    double ade = 0, fde = 0;
    for (size_t t = 0; t < T; ++t) {
        double d = std::hypot(pred_tx2[2 * t] - gt_tx2[2 * t], pred_tx2[2 * t + 1] - gt_tx2[2 * t + 1]);
        ade += d / double(T);
        if (t + 1 == T) fde = d;
    }
    return {ade, fde};
}

// Mean distance from Gaussian means to the nearest foreground pixel center.
inline double mean_dist_to_foreground(const std::vector<double>& means_px2,
                                      const std::vector<std::int32_t>& gt, std::int64_t H,
                                      std::int64_t W, const scene::SceneBounds& b, double res) {
    std::vector<std::array<double, 2>> fg;
    for (std::int64_t i = 0; i < H; ++i)
        for (std::int64_t j = 0; j < W; ++j)
            if (gt[static_cast<size_t>(i * W + j)] > 0)
                fg.push_back({b.x_min + (double(j) + 0.5) * res, b.y_min + (double(i) + 0.5) * res});
    if (fg.empty()) return 0.0;
    size_t P = means_px2.size() / 2;
    double total = 0;
    for (size_t p = 0; p < P; ++p) {
        double best = std::numeric_limits<double>::infinity();
        for (auto& f : fg)
            best = std::min(best,
                            std::hypot(means_px2[2 * p] - f[0], means_px2[2 * p + 1] - f[1]));
        total += best;
    }
    return total / double(P);
}

}  // namespace bevsplat::sim
