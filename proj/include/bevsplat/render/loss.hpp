// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Map construction losses over the rendered (C+1)-channel raster:
// pixelwise cross entropy plus the Lovasz-softmax relaxation of the
// Jaccard loss, averaged over classes present in the ground truth.

#pragma once

#include "bevsplat/render/raster.hpp"

#include <algorithm>

namespace bevsplat::raster {

template <class S>
struct MapLoss {
    Tensor<S> ce;
    Tensor<S> lovasz;
    Tensor<S> total;
};

// Lovasz extension gradient for the Jaccard loss, computed from the
// ground-truth memberships sorted by descending error. Constant w.r.t. the
// predictions (the sort permutation is frozen from the forward values).
template <class S>
VecX<S> lovasz_grad(const std::vector<S>& fg_sorted) {
    std::int64_t n = static_cast<std::int64_t>(fg_sorted.size());
    S gts = S(0);
    for (auto v : fg_sorted) gts += v;
    VecX<S> out(n);
    S inter = gts, uni = gts;
    S prev = S(0);
    for (std::int64_t k = 0; k < n; ++k) {
        inter -= fg_sorted[static_cast<size_t>(k)];
        uni += S(1) - fg_sorted[static_cast<size_t>(k)];
        S jacc = S(1) - inter / uni;
        out[k] = jacc - prev;
        prev = jacc;
    }
    return out;
}

// gt holds class indices in {0..C} (0 = background), row-major [H*W].
template <class S>
MapLoss<S> map_loss(const SemanticBevMap<S>& pred, const std::vector<std::int32_t>& gt,
                    double lovasz_weight = 1.0) {
    const Tensor<S>& grid = pred.grid;
    std::int64_t H = grid.dim(0), W = grid.dim(1), K = grid.dim(2);  // K = C+1
    std::int64_t N = H * W;
    if (static_cast<std::int64_t>(gt.size()) != N)
        throw std::invalid_argument("map_loss: ground truth size does not match raster");
    for (auto c : gt)
        if (c < 0 || c >= K)
            throw std::invalid_argument("map_loss: ground-truth class index out of range");
    Tensor<S> flat = reshape(grid, {N, K});

    // cross entropy: mean over pixels of -log p_true
    std::vector<std::int64_t> idx(static_cast<size_t>(N));
    for (std::int64_t i = 0; i < N; ++i) idx[static_cast<size_t>(i)] = i * K + gt[static_cast<size_t>(i)];
    Tensor<S> p_true = gather_flat(flat, std::move(idx), {N});
    Tensor<S> ce = neg(mean(log(clamp_min(p_true, S(1e-12)))));

    // Lovasz-softmax over classes present in gt
    std::vector<Tensor<S>> class_losses;
    for (std::int64_t c = 0; c < K; ++c) {
        std::int64_t support = 0;
        for (auto g : gt) support += (g == c);
        if (support == 0) continue;
        std::vector<std::int64_t> cidx(static_cast<size_t>(N));
        VecX<S> fg(N);
        for (std::int64_t i = 0; i < N; ++i) {
            cidx[static_cast<size_t>(i)] = i * K + c;
            fg[i] = gt[static_cast<size_t>(i)] == c ? S(1) : S(0);
        }
        Tensor<S> p_c = gather_flat(flat, std::move(cidx), {N});
        Tensor<S> errs = abs(sub(Tensor<S>::from({N}, fg), p_c));
        // sort errors descending; ties broken by pixel index for determinism
        std::vector<std::int64_t> perm(static_cast<size_t>(N));
        for (std::int64_t i = 0; i < N; ++i) perm[static_cast<size_t>(i)] = i;
        const VecX<S>& ev = errs.vals();
        std::stable_sort(perm.begin(), perm.end(),
                         [&](std::int64_t a, std::int64_t b) { return ev[a] > ev[b]; });
        std::vector<S> fg_sorted(static_cast<size_t>(N));
        for (std::int64_t i = 0; i < N; ++i)
            fg_sorted[static_cast<size_t>(i)] = fg[perm[static_cast<size_t>(i)]];
        Tensor<S> e_sorted = gather_flat(errs, std::move(perm), {N});
        Tensor<S> coeff = Tensor<S>::from({N}, lovasz_grad<S>(fg_sorted));
        class_losses.push_back(dot(e_sorted, coeff));
    }
    Tensor<S> lov = Tensor<S>::zeros({1});
    if (!class_losses.empty()) {
        lov = class_losses[0];
        for (size_t i = 1; i < class_losses.size(); ++i) lov = add(lov, class_losses[i]);
        lov = lov * (S(1) / S(class_losses.size()));
    }
    MapLoss<S> out;
    out.ce = ce;
    out.lovasz = lov;
    out.total = add(ce, lov * static_cast<S>(lovasz_weight));
    return out;
}

}  // namespace bevsplat::raster
