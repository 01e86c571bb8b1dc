// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <thread>
#include <vector>

namespace bevsplat {

inline int& worker_threads() {
    static int n = 1;
    return n;
}

namespace detail_par {
inline bool& in_parallel_section() {
    thread_local bool flag = false;
    return flag;
}
}  // namespace detail_par

// Static contiguous partitioning of [0, n) over at most `threads` workers.
// Chunk boundaries depend only on (n, threads), so any reduction done in
// chunk order is deterministic for a fixed thread count. Nested calls run
// inline on the calling worker.
template <class F>
void parallel_chunks(std::int64_t n, int threads, F&& fn) {
    if (n <= 0) return;
    int t = static_cast<int>(std::max<std::int64_t>(1, std::min<std::int64_t>(threads, n)));
    if (t == 1 || detail_par::in_parallel_section()) {
        fn(0, std::int64_t(0), n);
        return;
    }
    std::vector<std::thread> pool;
    std::int64_t chunk = (n + t - 1) / t;
    for (int c = 0; c < t; ++c) {
        std::int64_t b = c * chunk, e = std::min(n, b + chunk);
        if (b >= e) break;
        pool.emplace_back([&fn, c, b, e] {
            detail_par::in_parallel_section() = true;
            fn(c, b, e);
            detail_par::in_parallel_section() = false;
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace bevsplat
