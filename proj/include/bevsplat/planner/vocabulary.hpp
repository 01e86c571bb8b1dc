// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Anchor trajectory vocabulary: k-means (k-means++ seeding, fixed iteration
// budget, deterministic from the seed) over flattened ego trajectories.

#pragma once

#include "bevsplat/core/random.hpp"
#include "bevsplat/io/container.hpp"

#include <Eigen/Core>

#include <set>

namespace bevsplat::plan {

struct AnchorVocabulary {
    std::int64_t k = 0, horizon = 0;
    std::vector<double> anchors;  // [k, T, 2] row-major

    double at(std::int64_t a, std::int64_t t, int c) const {
        return anchors[static_cast<size_t>((a * horizon + t) * 2 + c)];
    }
};

// trajs: n flattened [T*2] rows. Throws when there are fewer distinct
// trajectories than clusters (duplicate centroids would result).
inline AnchorVocabulary build_anchor_vocabulary(const std::vector<std::vector<double>>& trajs,
                                                std::int64_t k, std::int64_t horizon, Rng& rng,
                                                int iters = 50) {
    std::int64_t n = static_cast<std::int64_t>(trajs.size());
    if (k < 1) throw std::invalid_argument("vocabulary: k must be >= 1");
    if (n < k) throw std::invalid_argument("vocabulary: dataset smaller than k");
    std::int64_t D = static_cast<std::int64_t>(trajs[0].size());
    if (D != horizon * 2) throw std::invalid_argument("vocabulary: trajectory length mismatch");
    std::set<std::vector<double>> distinct(trajs.begin(), trajs.end());
    if (static_cast<std::int64_t>(distinct.size()) < k)
        throw std::runtime_error("vocabulary: fewer distinct trajectories than k, centroids would duplicate");

    auto dist2 = [&](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0;
        for (std::int64_t i = 0; i < D; ++i) s += (a[size_t(i)] - b[size_t(i)]) * (a[size_t(i)] - b[size_t(i)]);
        return s;
    };

    // k-means++ seeding
    std::vector<std::vector<double>> centers;
    centers.push_back(trajs[static_cast<size_t>(rng.uniform_int(0, n - 1))]);
    std::vector<double> d2(static_cast<size_t>(n));
    while (static_cast<std::int64_t>(centers.size()) < k) {
        double total = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            double best = dist2(trajs[size_t(i)], centers[0]);
            for (size_t c = 1; c < centers.size(); ++c)
                best = std::min(best, dist2(trajs[size_t(i)], centers[c]));
            d2[size_t(i)] = best;
            total += best;
        }
        double r = rng.uniform(0.0, total);
        std::int64_t pick = n - 1;
        double acc = 0;
        for (std::int64_t i = 0; i < n; ++i) {
            acc += d2[size_t(i)];
            if (acc >= r && d2[size_t(i)] > 0) {
                pick = i;
                break;
            }
        }
        centers.push_back(trajs[static_cast<size_t>(pick)]);
    }

    // Lloyd iterations; ties assign to the lowest cluster index
    std::vector<std::int64_t> assign(static_cast<size_t>(n), 0);
    for (int it = 0; it < iters; ++it) {
        for (std::int64_t i = 0; i < n; ++i) {
            double best = dist2(trajs[size_t(i)], centers[0]);
            std::int64_t bi = 0;
            for (std::int64_t c = 1; c < k; ++c) {
                double dd = dist2(trajs[size_t(i)], centers[size_t(c)]);
                if (dd < best) {
                    best = dd;
                    bi = c;
                }
            }
            assign[size_t(i)] = bi;
        }
        std::vector<std::vector<double>> sums(static_cast<size_t>(k),
                                              std::vector<double>(static_cast<size_t>(D), 0.0));
        std::vector<std::int64_t> counts(static_cast<size_t>(k), 0);
        for (std::int64_t i = 0; i < n; ++i) {
            ++counts[static_cast<size_t>(assign[size_t(i)])];
            for (std::int64_t j = 0; j < D; ++j)
                sums[static_cast<size_t>(assign[size_t(i)])][size_t(j)] += trajs[size_t(i)][size_t(j)];
        }
        for (std::int64_t c = 0; c < k; ++c) {
            if (counts[size_t(c)] == 0) {
                // adopt the point farthest from its current center
                double worst = -1;
                std::int64_t wi = 0;
                for (std::int64_t i = 0; i < n; ++i) {
                    double dd = dist2(trajs[size_t(i)], centers[static_cast<size_t>(assign[size_t(i)])]);
                    if (dd > worst) {
                        worst = dd;
                        wi = i;
                    }
                }
                centers[size_t(c)] = trajs[static_cast<size_t>(wi)];
            } else {
                for (std::int64_t j = 0; j < D; ++j)
                    centers[size_t(c)][size_t(j)] = sums[size_t(c)][size_t(j)] / double(counts[size_t(c)]);
            }
        }
    }

    AnchorVocabulary v;
    v.k = k;
    v.horizon = horizon;
    v.anchors.resize(static_cast<size_t>(k * horizon * 2));
    for (std::int64_t c = 0; c < k; ++c)
        for (std::int64_t j = 0; j < D; ++j)
            v.anchors[static_cast<size_t>(c * D + j)] = centers[size_t(c)][size_t(j)];
    return v;
}

inline void save_vocabulary(const AnchorVocabulary& v, const std::string& path) {
    io::Container c("anchor_vocabulary");
    c.set_meta_int("k", v.k);
    c.set_meta_int("horizon", v.horizon);
    c.add_f64("anchors", {v.k, v.horizon, 2}, v.anchors.data());
    c.save(path);
}

inline AnchorVocabulary load_vocabulary(const std::string& path) {
    io::Container c = io::Container::load(path);
    if (c.kind() != "anchor_vocabulary")
        throw IoError(path + " is not an anchor_vocabulary container");
    AnchorVocabulary v;
    v.k = c.meta_int("k");
    v.horizon = c.meta_int("horizon");
    v.anchors = c.find("anchors").as_f64();
    return v;
}

}  // namespace bevsplat::plan
