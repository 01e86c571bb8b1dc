// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/config.hpp"

#include "bevsplat/core/common.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace bevsplat {

const std::vector<Config::Key>& Config::registry() {
    static const std::vector<Key> keys = {
        {"seed", 'i', "42", "global RNG seed"},
        {"precision", 's', "f64", "float width for the pipeline: f64 | f32"},
        {"threads", 'i', "1", "worker thread cap for parallel sections"},

        {"scene.x_min", 'f', "-10", "BEV extent, x minimum (m)"},
        {"scene.x_max", 'f', "38", "BEV extent, x maximum (m)"},
        {"scene.y_min", 'f', "-24", "BEV extent, y minimum (m)"},
        {"scene.y_max", 'f', "24", "BEV extent, y maximum (m)"},
        {"scene.z_min", 'f', "-1", "vertical extent minimum (m)"},
        {"scene.z_max", 'f', "4", "vertical extent maximum (m)"},
        {"scene.classes", 'i', "4", "number of foreground semantic classes"},

        {"dataset.count", 'i', "8", "number of scenes generated by gen-data"},
        {"dataset.difficulty", 's', "normal", "scene difficulty: empty | easy | normal"},

        {"gaussians.count", 'i', "512", "number of scene Gaussians P"},
        {"gaussians.dim", 'i', "128", "feature dimensionality d (multiple of 4)"},
        {"gaussians.sigma0", 'f', "1.0", "initial per-axis Gaussian scale (m)"},
        {"gaussians.feat_std", 'f', "0.02", "stddev of the initial Gaussian features"},

        {"queries.learnable", 'i', "4", "learnable query points per Gaussian"},
        {"queries.pillar", 'i', "4", "pillar samples per 2D query point (n_p)"},

        {"encoder.blocks", 'i', "4", "number of encoder blocks"},
        {"encoder.heads", 'i', "4", "heads per deformable attention layer"},
        {"encoder.points", 'i', "4", "sampling points per (head, level) (K)"},
        {"encoder.levels", 'i', "2", "feature pyramid levels (n_s)"},
        {"encoder.query_reduce", 's', "sum", "query-point aggregation: sum | mean"},
        {"encoder.implicit_heads", 'i', "1", "heads for the implicit cross-attention"},

        {"raster.h", 'i', "64", "semantic map rows"},
        {"raster.w", 'i', "64", "semantic map columns"},
        {"raster.resolution", 'f', "0.75", "meters per map pixel"},
        {"raster.cutoff", 'f', "0.011108996538242306", "alpha cutoff (default exp(-4.5))"},
        {"raster.tile", 'i', "16", "tile edge in pixels for the fast renderer"},

        {"loss.lovasz_weight", 'f', "1.0", "weight of the Lovasz term in the map loss"},
        {"loss.map_weight", 'f', "1.0", "weight of the map loss in the total loss"},
        {"loss.traj_weight", 'f', "1.0", "weight of the trajectory loss in the total loss"},

        {"planner.stages", 'i', "2", "cascade refinement stages"},
        {"planner.anchors", 'i', "20", "anchor vocabulary size k"},
        {"planner.top_m", 'i', "4", "nearest Gaussians per waypoint (m)"},
        {"planner.horizon", 'i', "8", "trajectory waypoints T"},
        {"planner.use_ego_state", 'b', "false", "add an ego-state embedding to the query"},

        {"train.lr", 'f', "6e-4", "maximum learning rate"},
        {"train.lr_floor", 'f', "0.0", "cosine schedule floor"},
        {"train.weight_decay", 'f', "1e-4", "AdamW decoupled weight decay"},
        {"train.beta1", 'f', "0.9", "AdamW beta1"},
        {"train.beta2", 'f', "0.999", "AdamW beta2"},
        {"train.eps", 'f', "1e-8", "AdamW epsilon"},
        {"train.epochs", 'i', "50", "training epochs over the dataset"},
        {"train.batch", 'i', "8", "scenes per optimizer step"},
        {"train.max_steps", 'i', "0", "hard cap on optimizer steps (0 = no cap)"},
        {"train.log_every", 'i', "1", "JSONL logging stride"},

        {"cameras.count", 'i', "3", "synthetic camera views N"},
        {"cameras.image_h", 'i', "32", "camera image rows"},
        {"cameras.image_w", 'i', "48", "camera image columns"},
        {"cameras.fov_deg", 'f', "70", "horizontal field of view (degrees)"},

        {"lidar.height_bins", 'i', "8", "height bins of the BEV point histogram"},
    };
    return keys;
}

Config::Config() {
    for (auto& k : registry()) values_[k.name] = k.def;
}

const Config::Key& Config::lookup(const std::string& key) const {
    for (auto& k : registry())
        if (k.name == key) return k;
    throw ConfigError("unknown config key: " + key);
}

void Config::set(const std::string& key, const std::string& value) {
    const Key& k = lookup(key);
    // type check now so errors carry the offending key
    try {
        if (k.type == 'i') (void)std::stoll(value);
        if (k.type == 'f') (void)std::stod(value);
        if (k.type == 'b' && value != "true" && value != "false" && value != "0" && value != "1")
            throw std::invalid_argument("bool");
    } catch (const std::exception&) {
        throw ConfigError("invalid value for config key " + key + ": '" + value + "'");
    }
    values_[key] = value;
}

void Config::load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config file: " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        auto notspace = [](unsigned char c) { return !std::isspace(c); };
        auto b = std::find_if(line.begin(), line.end(), notspace);
        auto e = std::find_if(line.rbegin(), line.rend(), notspace).base();
        if (b >= e) continue;
        std::string s(b, e);
        auto eq = s.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config parse error at line " + std::to_string(lineno) +
                              ": expected key = value");
        auto trim = [&](std::string t) {
            auto b2 = std::find_if(t.begin(), t.end(), notspace);
            auto e2 = std::find_if(t.rbegin(), t.rend(), notspace).base();
            return b2 < e2 ? std::string(b2, e2) : std::string();
        };
        set(trim(s.substr(0, eq)), trim(s.substr(eq + 1)));
    }
}

std::int64_t Config::geti(const std::string& key) const {
    lookup(key);
    return std::stoll(values_.at(key));
}
double Config::getf(const std::string& key) const {
    lookup(key);
    return std::stod(values_.at(key));
}
const std::string& Config::gets(const std::string& key) const {
    lookup(key);
    return values_.at(key);
}
bool Config::getb(const std::string& key) const {
    lookup(key);
    const std::string& v = values_.at(key);
    return v == "true" || v == "1";
}

void Config::validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
    if (gets("precision") != "f64" && gets("precision") != "f32")
        fail("precision must be f64 or f32");
    if (gets("encoder.query_reduce") != "sum" && gets("encoder.query_reduce") != "mean")
        fail("encoder.query_reduce must be sum or mean");
    const std::string& d = gets("dataset.difficulty");
    if (d != "empty" && d != "easy" && d != "normal")
        fail("dataset.difficulty must be empty, easy or normal");
    if (geti("gaussians.dim") % 4 != 0) fail("gaussians.dim must be a multiple of 4");
    if (getf("scene.x_max") <= getf("scene.x_min") || getf("scene.y_max") <= getf("scene.y_min") ||
        getf("scene.z_max") <= getf("scene.z_min"))
        fail("scene bounds must have max > min on every axis");
    double ex = getf("scene.x_max") - getf("scene.x_min");
    double ey = getf("scene.y_max") - getf("scene.y_min");
    double res = getf("raster.resolution");
    if (std::abs(ex - res * static_cast<double>(geti("raster.w"))) > 1e-9 ||
        std::abs(ey - res * static_cast<double>(geti("raster.h"))) > 1e-9)
        fail("raster extent (h,w,resolution) must match the scene bounds");
    if (getf("raster.cutoff") < 0 || getf("raster.cutoff") >= 1)
        fail("raster.cutoff must lie in [0, 1)");
    if (geti("raster.tile") < 1) fail("raster.tile must be >= 1");
    if (geti("planner.top_m") > geti("gaussians.count"))
        fail("planner.top_m cannot exceed gaussians.count");
    if (geti("planner.horizon") < 2) fail("planner.horizon must be >= 2");
    if (geti("scene.classes") < 1) fail("scene.classes must be >= 1");
    if (geti("encoder.levels") < 1) fail("encoder.levels must be >= 1");
    if (geti("queries.pillar") < 1) fail("queries.pillar must be >= 1");
    if (geti("threads") < 1) fail("threads must be >= 1");
}

std::string Config::dump() const {
    std::ostringstream os;
    for (auto& k : registry()) os << k.name << " = " << values_.at(k.name) << "\n";
    return os.str();
}

std::string Config::help_text() {
    std::ostringstream os;
    os << "Config keys (key = default  # description):\n";
    for (auto& k : registry())
        os << "  " << k.name << " = " << k.def << "  # " << k.desc << "\n";
    return os.str();
}

}  // namespace bevsplat
