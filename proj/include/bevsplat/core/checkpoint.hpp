// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "bevsplat/core/optim.hpp"
#include "bevsplat/io/container.hpp"

namespace bevsplat {

namespace detail {
template <class S>
const char* dtype_name() {
    if constexpr (std::is_same_v<S, double>) return "f64";
    else return "f32";
}
template <class S>
void add_array(io::Container& c, const std::string& name, const Shape& shape, const VecX<S>& v) {
    if constexpr (std::is_same_v<S, double>)
        c.add_f64(name, shape, v.data());
    else
        c.add_f32(name, shape, v.data());
}
template <class S>
VecX<S> entry_vec(const io::Entry& e) {
    VecX<S> v(e.count());
    if (e.dtype != dtype_name<S>())
        throw IoError("checkpoint dtype " + e.dtype + " does not match pipeline precision");
    std::memcpy(v.data(), e.bytes.data(), e.bytes.size());
    return v;
}
}  // namespace detail

// Checkpoint = JSON header (paths, shapes, dtype, seed, step) + raw
// little-endian buffers in header order. Optimizer moments ride along under
// opt.m/ and opt.v/ so training resumes bit-exactly.
template <class S>
void save_checkpoint(const ParameterStore<S>& store, const std::string& path) {
    io::Container c("checkpoint");
    c.set_meta_int("seed", static_cast<std::int64_t>(store.seed()));
    c.set_meta_int("step", store.step());
    c.set_meta("dtype", detail::dtype_name<S>());
    for (auto& [p, t] : store.params()) detail::add_array<S>(c, "param/" + p, t.shape(), t.vals());
    for (auto& [p, t] : store.buffers())
        detail::add_array<S>(c, "buffer/" + p, t.shape(), t.vals());
    for (auto& [p, mv] : const_cast<ParameterStore<S>&>(store).raw_moments()) {
        Shape s{mv.first.size()};
        detail::add_array<S>(c, "opt.m/" + p, s, mv.first);
        detail::add_array<S>(c, "opt.v/" + p, s, mv.second);
    }
    c.save(path);
}

// Loads values into an already-constructed store (same config); shapes must
// agree and every stored parameter must exist.
template <class S>
void load_checkpoint(ParameterStore<S>& store, const std::string& path) {
    io::Container c = io::Container::load(path);
    if (c.kind() != "checkpoint") throw IoError(path + " is not a checkpoint container");
    store.step() = c.meta_int("step");
    auto load_into = [&](const std::string& prefix, const std::map<std::string, Tensor<S>>& dst) {
        for (auto& [p, t] : dst) {
            const io::Entry& e = c.find(prefix + p);
            if (e.shape != t.shape())
                throw IoError("checkpoint shape mismatch for " + p + ": stored " +
                              shape_str(e.shape) + " vs model " + shape_str(t.shape()));
            const_cast<Tensor<S>&>(t).vals_mut() = detail::entry_vec<S>(e);
        }
    };
    load_into("param/", store.params());
    load_into("buffer/", store.buffers());
    for (auto& e : c.entries()) {
        if (e.name.rfind("opt.m/", 0) == 0) {
            std::string p = e.name.substr(6);
            auto [m, v] = store.moments(p, e.count());
            m = detail::entry_vec<S>(e);
        } else if (e.name.rfind("opt.v/", 0) == 0) {
            std::string p = e.name.substr(6);
            auto [m, v] = store.moments(p, e.count());
            v = detail::entry_vec<S>(e);
        }
    }
}

}  // namespace bevsplat
