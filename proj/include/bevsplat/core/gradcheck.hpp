// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checking of reverse-mode gradients. Used by the
// unit suites, the acceptance suite and the `gradcheck` CLI command.

#pragma once

#include "bevsplat/core/random.hpp"
#include "bevsplat/core/tensor.hpp"

#include <functional>
#include <map>
#include <string>

namespace bevsplat {

template <class S>
struct GradCheckReport {
    std::map<std::string, S> max_rel_err;  // per parameter
    S worst = S(0);
    std::string worst_param;

    bool pass(S tol) const { return worst <= tol; }
};

// rel err = |analytic - numeric| / max(1, |analytic|, |numeric|); the mixed
// absolute/relative denominator keeps near-zero gradients comparable.
template <class S>
S fd_rel_err(S analytic, S numeric) {
    S denom = std::max(S(1), std::max(std::abs(analytic), std::abs(numeric)));
    return std::abs(analytic - numeric) / denom;
}

// f() must rebuild the graph from the current parameter values and return a
// scalar. Checks up to max_coords coordinates per parameter (all if <= 0),
// chosen deterministically from `seed`.
template <class S>
GradCheckReport<S> gradcheck(const std::function<Tensor<S>()>& f,
                             const std::vector<std::pair<std::string, Tensor<S>>>& params,
                             S eps = S(1e-6), std::int64_t max_coords = -1,
                             std::uint64_t seed = 0) {
    GradCheckReport<S> rep;
    for (auto& [name, p] : params) const_cast<Tensor<S>&>(p).zero_grad();
    Tensor<S> loss = f();
    backward(loss);
    std::map<std::string, VecX<S>> analytic;
    for (auto& [name, p] : params) {
        analytic[name] =
            p.grad().size() == p.size() ? p.grad() : VecX<S>(VecX<S>::Zero(p.size()));
    }
    Rng rng(seed ^ 0x5bf03635u);
    for (auto& [name, p] : params) {
        auto& vals = const_cast<Tensor<S>&>(p).vals_mut();
        std::vector<std::int64_t> coords;
        if (max_coords <= 0 || p.size() <= max_coords) {
            coords.resize(static_cast<size_t>(p.size()));
            for (std::int64_t i = 0; i < p.size(); ++i) coords[static_cast<size_t>(i)] = i;
        } else {
            for (std::int64_t i = 0; i < max_coords; ++i)
                coords.push_back(rng.uniform_int(0, p.size() - 1));
        }
        S worst = S(0);
        for (auto c : coords) {
            S orig = vals[c];
            vals[c] = orig + eps;
            S fp = f().item();
            vals[c] = orig - eps;
            S fm = f().item();
            vals[c] = orig;
            S numeric = (fp - fm) / (S(2) * eps);
            S err = fd_rel_err(analytic[name][c], numeric);
            worst = std::max(worst, err);
        }
        rep.max_rel_err[name] = worst;
        if (worst > rep.worst) {
            rep.worst = worst;
            rep.worst_param = name;
        }
    }
    return rep;
}

}  // namespace bevsplat
