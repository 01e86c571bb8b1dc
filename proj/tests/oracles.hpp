// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Test-only reference implementations, written as plain scalar loops
// directly from the formulas. Independent of the tensor engine's code paths.

#pragma once

#include "bevsplat/encoder/attention.hpp"

#include <Eigen/Dense>

namespace test_oracles {

using bevsplat::Tensor;
using bevsplat::VecX;
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

inline Mat as_mat(const Tensor<double>& t) {
    return Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                          Eigen::RowMajor>>(t.vals().data(), t.dim(0), t.dim(1));
}

inline double bilerp(const VecX<double>& map, std::int64_t H, std::int64_t W, std::int64_t c,
                     double u, double v) {
    if (!(u >= 0 && u <= double(W - 1) && v >= 0 && v <= double(H - 1))) return 0.0;
    std::int64_t x0 = std::min<std::int64_t>(std::int64_t(std::floor(u)), W - 1);
    std::int64_t y0 = std::min<std::int64_t>(std::int64_t(std::floor(v)), H - 1);
    std::int64_t x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
    double fx = u - double(x0), fy = v - double(y0);
    auto F = [&](std::int64_t y, std::int64_t x) { return map[c * H * W + y * W + x]; };
    return (1 - fx) * (1 - fy) * F(y0, x0) + fx * (1 - fy) * F(y0, x1) +
           (1 - fx) * fy * F(y1, x0) + fx * fy * F(y1, x1);
}

// loop implementation of multi-head scaled dot-product attention
inline Mat attend_reference(const bevsplat::enc::MultiHeadAttention<double>& m, const Mat& q_in,
                            const Mat& k_in, const Mat& v_in) {
    std::int64_t P = q_in.rows(), M = k_in.rows(), d = m.d, h = m.heads, dh = d / h;
    auto lin = [&](const Mat& x, const Tensor<double>& w, const Tensor<double>& b) {
        Mat out(x.rows(), d);
        for (std::int64_t i = 0; i < x.rows(); ++i)
            for (std::int64_t j = 0; j < d; ++j) {
                double acc = b.vals()[j];
                for (std::int64_t c = 0; c < d; ++c) acc += x(i, c) * w.vals()[c * d + j];
                out(i, j) = acc;
            }
        return out;
    };
    Mat q = lin(q_in, m.wq, m.bq), k = lin(k_in, m.wk, m.bk), v = lin(v_in, m.wv, m.bv);
    Mat concat(P, d);
    for (std::int64_t hh = 0; hh < h; ++hh)
        for (std::int64_t i = 0; i < P; ++i) {
            Vec scores(M);
            for (std::int64_t j = 0; j < M; ++j) {
                double acc = 0;
                for (std::int64_t c = 0; c < dh; ++c)
                    acc += q(i, hh * dh + c) * k(j, hh * dh + c);
                scores[j] = acc / std::sqrt(double(dh));
            }
            double mx = scores.maxCoeff(), z = 0;
            for (std::int64_t j = 0; j < M; ++j) z += std::exp(scores[j] - mx);
            for (std::int64_t c = 0; c < dh; ++c) {
                double acc = 0;
                for (std::int64_t j = 0; j < M; ++j)
                    acc += std::exp(scores[j] - mx) / z * v(j, hh * dh + c);
                concat(i, hh * dh + c) = acc;
            }
        }
    return lin(concat, m.wo, m.bo);
}

// loop implementation of the multi-scale deformable attention module
inline Mat deform_reference(const bevsplat::enc::DeformableAttention<double>& m, const Mat& q_in,
                            const std::vector<Mat>& pix, const std::vector<Tensor<double>>& maps,
                            std::int64_t n_pts) {
    std::int64_t P = q_in.rows(), d = m.d, h = m.heads, L = m.levels, K = m.points;
    std::int64_t dh = d / h, N = P * n_pts;
    std::vector<VecX<double>> vproj;
    std::vector<std::int64_t> Hs, Ws;
    for (std::int64_t l = 0; l < L; ++l) {
        std::int64_t H = maps[size_t(l)].dim(1), W = maps[size_t(l)].dim(2);
        Hs.push_back(H);
        Ws.push_back(W);
        VecX<double> vp = VecX<double>::Zero(d * H * W);
        for (std::int64_t y = 0; y < H; ++y)
            for (std::int64_t x = 0; x < W; ++x)
                for (std::int64_t co = 0; co < d; ++co) {
                    double acc = m.b_val[size_t(l)].vals()[co];
                    for (std::int64_t ci = 0; ci < d; ++ci)
                        acc += maps[size_t(l)].vals()[(ci * H + y) * W + x] *
                               m.w_val[size_t(l)].vals()[ci * d + co];
                    vp[(co * H + y) * W + x] = acc;
                }
        vproj.push_back(std::move(vp));
    }
    Mat out = Mat::Zero(N, d);
    for (std::int64_t p = 0; p < P; ++p) {
        Vec off = Vec::Zero(h * L * K * 2), wl = Vec::Zero(h * L * K);
        for (std::int64_t j = 0; j < h * L * K * 2; ++j) {
            double acc = m.b_off.vals()[j];
            for (std::int64_t c = 0; c < d; ++c)
                acc += q_in(p, c) * m.w_off.vals()[c * h * L * K * 2 + j];
            off[j] = acc;
        }
        for (std::int64_t j = 0; j < h * L * K; ++j) {
            double acc = m.b_wt.vals()[j];
            for (std::int64_t c = 0; c < d; ++c)
                acc += q_in(p, c) * m.w_wt.vals()[c * h * L * K + j];
            wl[j] = acc;
        }
        for (std::int64_t hh = 0; hh < h; ++hh) {
            double mx = -1e300;
            for (std::int64_t s = 0; s < L * K; ++s) mx = std::max(mx, wl[hh * L * K + s]);
            double z = 0;
            for (std::int64_t s = 0; s < L * K; ++s) z += std::exp(wl[hh * L * K + s] - mx);
            for (std::int64_t s = 0; s < L * K; ++s)
                wl[hh * L * K + s] = std::exp(wl[hh * L * K + s] - mx) / z;
        }
        for (std::int64_t i = 0; i < n_pts; ++i) {
            Vec agg = Vec::Zero(d);
            for (std::int64_t hh = 0; hh < h; ++hh)
                for (std::int64_t l = 0; l < L; ++l)
                    for (std::int64_t k = 0; k < K; ++k) {
                        std::int64_t slot = ((hh * L + l) * K + k);
                        double u = pix[size_t(l)](p * n_pts + i, 0) + off[slot * 2];
                        double v = pix[size_t(l)](p * n_pts + i, 1) + off[slot * 2 + 1];
                        double w = wl[(hh * L + l) * K + k];
                        for (std::int64_t c = 0; c < dh; ++c)
                            agg[hh * dh + c] += w * bilerp(vproj[size_t(l)], Hs[size_t(l)],
                                                           Ws[size_t(l)], hh * dh + c, u, v);
                    }
            for (std::int64_t co = 0; co < d; ++co) {
                double acc = 0;
                for (std::int64_t c = 0; c < d; ++c) acc += agg[c] * m.w_out.vals()[c * d + co];
                out(p * n_pts + i, co) = acc;
            }
        }
    }
    return out;
}

}  // namespace test_oracles
