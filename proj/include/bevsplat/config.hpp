// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace bevsplat {

// Flat namespaced key=value configuration. Every tunable in the pipeline is
// registered here with a typed default; unknown keys are rejected.
// Precedence: CLI overrides > config file > defaults.
class Config {
  public:
    struct Key {
        std::string name;
        char type;  // 'i' int, 'f' float, 's' string, 'b' bool
        std::string def;
        std::string desc;
    };

    Config();

    static const std::vector<Key>& registry();
    static std::string help_text();

    void load_file(const std::string& path);
    void set(const std::string& key, const std::string& value);

    std::int64_t geti(const std::string& key) const;
    double getf(const std::string& key) const;
    const std::string& gets(const std::string& key) const;
    bool getb(const std::string& key) const;

    // Cross-key consistency (raster extent vs scene bounds, dims, enums).
    void validate() const;

    std::string dump() const;

  private:
    const Key& lookup(const std::string& key) const;
    std::map<std::string, std::string> values_;
};

}  // namespace bevsplat
