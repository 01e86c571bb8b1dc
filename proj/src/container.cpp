// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/io/container.hpp"

#include "bevsplat/core/common.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <cstring>
#include <fstream>

static_assert(std::endian::native == std::endian::little,
              "container I/O assumes a little-endian host");

namespace bevsplat::io {

using nlohmann::json;

std::size_t dtype_size(const std::string& dtype) {
    if (dtype == "f64") return 8;
    if (dtype == "f32" || dtype == "i32") return 4;
    throw IoError("unknown dtype: " + dtype);
}

std::int64_t Entry::count() const {
    std::int64_t n = 1;
    for (auto e : shape) n *= e;
    return n;
}

std::vector<double> Entry::as_f64() const {
    std::vector<double> out(static_cast<size_t>(count()));
    if (dtype == "f64") {
        std::memcpy(out.data(), bytes.data(), bytes.size());
    } else if (dtype == "f32") {
        const float* p = reinterpret_cast<const float*>(bytes.data());
        for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(p[i]);
    } else {
        throw IoError("entry '" + name + "' is not float typed");
    }
    return out;
}

std::vector<std::int32_t> Entry::as_i32() const {
    if (dtype != "i32") throw IoError("entry '" + name + "' is not i32");
    std::vector<std::int32_t> out(static_cast<size_t>(count()));
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

Container::Container(std::string kind) : kind_(std::move(kind)), meta_json_("{}") {}

void Container::set_meta(const std::string& key, const std::string& v) {
    json m = json::parse(meta_json_);
    m[key] = v;
    meta_json_ = m.dump();
}
void Container::set_meta_int(const std::string& key, std::int64_t v) {
    json m = json::parse(meta_json_);
    m[key] = v;
    meta_json_ = m.dump();
}
void Container::set_meta_double(const std::string& key, double v) {
    json m = json::parse(meta_json_);
    m[key] = v;
    meta_json_ = m.dump();
}
void Container::set_meta_json(const std::string& key, const std::string& raw_json) {
    json m = json::parse(meta_json_);
    m[key] = json::parse(raw_json);
    meta_json_ = m.dump();
}
std::string Container::meta(const std::string& key) const {
    json m = json::parse(meta_json_);
    if (!m.contains(key)) throw IoError("missing container metadata key: " + key);
    if (m[key].is_string()) return m[key].get<std::string>();
    return m[key].dump();
}
std::int64_t Container::meta_int(const std::string& key) const {
    json m = json::parse(meta_json_);
    if (!m.contains(key)) throw IoError("missing container metadata key: " + key);
    return m[key].get<std::int64_t>();
}
double Container::meta_double(const std::string& key) const {
    json m = json::parse(meta_json_);
    if (!m.contains(key)) throw IoError("missing container metadata key: " + key);
    return m[key].get<double>();
}
bool Container::has_meta(const std::string& key) const {
    return json::parse(meta_json_).contains(key);
}

namespace {
template <class T>
void add_entry(std::vector<Entry>& entries, const std::string& name,
               std::vector<std::int64_t> shape, const T* data, const char* dtype) {
    Entry e;
    e.name = name;
    e.dtype = dtype;
    e.shape = std::move(shape);
    e.bytes.resize(static_cast<size_t>(e.count()) * sizeof(T));
    std::memcpy(e.bytes.data(), data, e.bytes.size());
    entries.push_back(std::move(e));
}
}  // namespace

void Container::add_f64(const std::string& name, std::vector<std::int64_t> shape,
                        const double* data) {
    add_entry(entries_, name, std::move(shape), data, "f64");
}
void Container::add_f32(const std::string& name, std::vector<std::int64_t> shape,
                        const float* data) {
    add_entry(entries_, name, std::move(shape), data, "f32");
}
void Container::add_i32(const std::string& name, std::vector<std::int64_t> shape,
                        const std::int32_t* data) {
    add_entry(entries_, name, std::move(shape), data, "i32");
}

const Entry& Container::find(const std::string& name) const {
    for (auto& e : entries_)
        if (e.name == name) return e;
    throw IoError("container entry not found: " + name);
}
bool Container::has(const std::string& name) const {
    for (auto& e : entries_)
        if (e.name == name) return true;
    return false;
}

void Container::save(const std::string& path) const {
    json hdr;
    hdr["kind"] = kind_;
    hdr["meta"] = json::parse(meta_json_);
    hdr["entries"] = json::array();
    for (auto& e : entries_) {
        hdr["entries"].push_back({{"name", e.name}, {"dtype", e.dtype}, {"shape", e.shape}});
    }
    std::string h = hdr.dump();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f.write("BSC1", 4);
    std::uint64_t len = h.size();
    f.write(reinterpret_cast<const char*>(&len), 8);
    f.write(h.data(), static_cast<std::streamsize>(h.size()));
    for (auto& e : entries_)
        f.write(reinterpret_cast<const char*>(e.bytes.data()),
                static_cast<std::streamsize>(e.bytes.size()));
    if (!f) throw IoError("write failed: " + path);
}

Container Container::load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "BSC1", 4) != 0) throw IoError("bad container magic in " + path);
    std::uint64_t len = 0;
    f.read(reinterpret_cast<char*>(&len), 8);
    std::string h(len, '\0');
    f.read(h.data(), static_cast<std::streamsize>(len));
    if (!f) throw IoError("truncated container header in " + path);
    json hdr = json::parse(h);
    Container c(hdr.at("kind").get<std::string>());
    c.meta_json_ = hdr.at("meta").dump();
    for (auto& je : hdr.at("entries")) {
        Entry e;
        e.name = je.at("name").get<std::string>();
        e.dtype = je.at("dtype").get<std::string>();
        e.shape = je.at("shape").get<std::vector<std::int64_t>>();
        e.bytes.resize(static_cast<size_t>(e.count()) * dtype_size(e.dtype));
        f.read(reinterpret_cast<char*>(e.bytes.data()),
               static_cast<std::streamsize>(e.bytes.size()));
        if (!f) throw IoError("truncated container data in " + path);
        c.entries_.push_back(std::move(e));
    }
    return c;
}

}  // namespace bevsplat::io
