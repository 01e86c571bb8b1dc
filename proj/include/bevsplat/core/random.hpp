// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "bevsplat/core/common.hpp"

#include <random>

namespace bevsplat {

// Seeded RNG wrapper. All randomness in the project flows through explicit
// Rng instances so runs are reproducible from the config seed.
class Rng {
  public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    double uniform(double lo = 0.0, double hi = 1.0) {
        return std::uniform_real_distribution<double>(lo, hi)(gen_);
    }
    double normal(double mu = 0.0, double sigma = 1.0) {
        return std::normal_distribution<double>(mu, sigma)(gen_);
    }
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {  // inclusive bounds
        return std::uniform_int_distribution<std::int64_t>(lo, hi)(gen_);
    }
    std::uint64_t next_u64() { return gen_(); }

    // Independent child stream; decouples consumers from each other's draw counts.
    Rng fork() { return Rng(gen_() ^ 0x9e3779b97f4a7c15ull); }

    template <class S>
    VecX<S> uniform_vec(std::int64_t n, double lo, double hi) {
        VecX<S> v(n);
        for (std::int64_t i = 0; i < n; ++i) v[i] = static_cast<S>(uniform(lo, hi));
        return v;
    }
    template <class S>
    VecX<S> normal_vec(std::int64_t n, double mu, double sigma) {
        VecX<S> v(n);
        for (std::int64_t i = 0; i < n; ++i) v[i] = static_cast<S>(normal(mu, sigma));
        return v;
    }

    std::mt19937_64& engine() { return gen_; }

  private:
    std::mt19937_64 gen_;
};

}  // namespace bevsplat
