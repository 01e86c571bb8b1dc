// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Toy strided convolutional pyramids: one backbone for the BEV point
// histogram, one shared across camera views. Each level halves the spatial
// resolution and emits feature dim d.

#pragma once

#include "bevsplat/encoder/encoder.hpp"

namespace bevsplat::sim {

template <class S>
struct ConvPyramid {
    std::int64_t in_ch = 0, d = 0, levels = 0, width = 0;
    std::vector<Tensor<S>> conv_w, conv_b;  // stride-2 3x3 convs
    std::vector<Tensor<S>> proj_w, proj_b;  // 1x1 projections to d

    ConvPyramid() = default;
    ConvPyramid(ParameterStore<S>& st, const std::string& p, std::int64_t in, std::int64_t dim,
                std::int64_t n_levels)
        : in_ch(in), d(dim), levels(n_levels), width(std::max<std::int64_t>(8, dim / 2)) {
        std::int64_t c = in;
        for (std::int64_t l = 0; l < levels; ++l) {
            conv_w.push_back(st.param(p + ".conv_w" + std::to_string(l), {width, c, 3, 3},
                                      Init<S>::fan_in_uniform(c * 9)));
            conv_b.push_back(st.param(p + ".conv_b" + std::to_string(l), {width},
                                      Init<S>::zeros()));
            proj_w.push_back(st.param(p + ".proj_w" + std::to_string(l), {d, width, 1, 1},
                                      Init<S>::fan_in_uniform(width)));
            proj_b.push_back(st.param(p + ".proj_b" + std::to_string(l), {d}, Init<S>::zeros()));
            c = width;
        }
    }

    // x: [in_ch, H, W] -> levels of [d, H/2^l+1, W/2^l+1]
    std::vector<Tensor<S>> forward(const Tensor<S>& x) const {
        std::vector<Tensor<S>> out;
        Tensor<S> h = x;
        for (std::int64_t l = 0; l < levels; ++l) {
            h = relu(conv2d(h, conv_w[size_t(l)], conv_b[size_t(l)], 2, 1));
            out.push_back(conv2d(h, proj_w[size_t(l)], proj_b[size_t(l)], 1, 0));
        }
        return out;
    }
};

}  // namespace bevsplat::sim
