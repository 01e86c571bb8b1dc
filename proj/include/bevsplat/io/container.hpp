// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Shared on-disk container: "BSC1" magic, u64 header length, JSON header
// (kind, metadata, entry table), then raw little-endian buffers in header
// order. Used for checkpoints, Gaussian sets, rendered tensors and dataset
// samples.

#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace bevsplat::io {

struct Entry {
    std::string name;
    std::string dtype;  // "f64" | "f32" | "i32"
    std::vector<std::int64_t> shape;
    std::vector<std::uint8_t> bytes;

    std::int64_t count() const;
    std::vector<double> as_f64() const;
    std::vector<std::int32_t> as_i32() const;
};

std::size_t dtype_size(const std::string& dtype);

class Container {
  public:
    explicit Container(std::string kind = "container");

    std::string& kind() { return kind_; }
    const std::string& kind() const { return kind_; }

    void set_meta(const std::string& key, const std::string& v);
    void set_meta_int(const std::string& key, std::int64_t v);
    void set_meta_double(const std::string& key, double v);
    void set_meta_json(const std::string& key, const std::string& raw_json);
    std::string meta(const std::string& key) const;
    std::int64_t meta_int(const std::string& key) const;
    double meta_double(const std::string& key) const;
    bool has_meta(const std::string& key) const;

    void add_f64(const std::string& name, std::vector<std::int64_t> shape, const double* data);
    void add_f32(const std::string& name, std::vector<std::int64_t> shape, const float* data);
    void add_i32(const std::string& name, std::vector<std::int64_t> shape,
                 const std::int32_t* data);

    const Entry& find(const std::string& name) const;
    bool has(const std::string& name) const;
    const std::vector<Entry>& entries() const { return entries_; }

    void save(const std::string& path) const;
    static Container load(const std::string& path);

  private:
    std::string kind_;
    std::string meta_json_;  // serialized JSON object
    std::vector<Entry> entries_;
};

}  // namespace bevsplat::io
