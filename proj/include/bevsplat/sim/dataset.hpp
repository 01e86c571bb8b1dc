// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Dataset directory layout: index.json (sample list, bounds, class names,
// camera metadata, raster geometry) plus one binary container per sample.

#pragma once

#include "bevsplat/sim/scenegen.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

namespace bevsplat::sim {

struct Dataset {
    SceneBounds bounds;
    SceneGenParams params;
    std::vector<SceneSample> samples;
    std::uint64_t seed = 0;
    std::vector<std::string> class_names{"background", "drivable", "lane_line", "vehicle",
                                         "ego_path"};
};

inline Dataset generate_dataset(std::uint64_t seed, std::int64_t count, const SceneBounds& bounds,
                                const SceneGenParams& params) {
    Dataset ds;
    ds.bounds = bounds;
    ds.params = params;
    ds.seed = seed;
    Rng rng(seed);
    for (std::int64_t i = 0; i < count; ++i) {
        Rng scene_rng = rng.fork();
        ds.samples.push_back(generate_scene(scene_rng, bounds, params));
    }
    return ds;
}

inline std::string sample_file(std::int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%04lld.bsc", static_cast<long long>(i));
    return buf;
}

inline void save_dataset(const Dataset& ds, const std::string& dir) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json idx;
    idx["count"] = ds.samples.size();
    idx["seed"] = ds.seed;
    idx["class_names"] = ds.class_names;
    idx["bounds"] = {{"x_min", ds.bounds.x_min}, {"x_max", ds.bounds.x_max},
                     {"y_min", ds.bounds.y_min}, {"y_max", ds.bounds.y_max},
                     {"z_min", ds.bounds.z_min}, {"z_max", ds.bounds.z_max}};
    idx["raster"] = {{"h", ds.params.raster_h},
                     {"w", ds.params.raster_w},
                     {"resolution", ds.params.resolution}};
    idx["horizon"] = ds.params.horizon;
    idx["lidar_bins"] = ds.params.lidar_bins;
    idx["image"] = {{"h", ds.params.image_h}, {"w", ds.params.image_w}};
    idx["fov_deg"] = ds.params.fov_deg;
    idx["difficulty"] = ds.params.difficulty == Difficulty::Empty ? "empty"
                        : ds.params.difficulty == Difficulty::Easy ? "easy"
                                                                   : "normal";
    idx["cameras"] = nlohmann::json::array();
    if (!ds.samples.empty())
        for (auto& cam : ds.samples[0].cams) {
            std::vector<double> pr(cam.proj.data(), cam.proj.data() + 12);  // column-major
            idx["cameras"].push_back(
                {{"proj_colmajor", pr}, {"image_w", cam.image_w}, {"image_h", cam.image_h}});
        }
    idx["samples"] = nlohmann::json::array();
    for (size_t i = 0; i < ds.samples.size(); ++i)
        idx["samples"].push_back(sample_file(static_cast<std::int64_t>(i)));
    std::ofstream f(dir + "/index.json");
    if (!f) throw IoError("cannot write dataset index in " + dir);
    f << idx.dump(2) << "\n";

    for (size_t i = 0; i < ds.samples.size(); ++i) {
        const SceneSample& s = ds.samples[i];
        io::Container c("scene_sample");
        c.add_i32("gt_map", {ds.params.raster_h, ds.params.raster_w}, s.gt_map.data());
        c.add_f64("gt_traj", {ds.params.horizon, 2}, s.gt_traj.data());
        c.add_f64("bev_raster", {ds.params.lidar_bins, ds.params.raster_h, ds.params.raster_w},
                  s.bev_raster.data());
        for (size_t v = 0; v < s.images.size(); ++v)
            c.add_f64("image_" + std::to_string(v), {3, ds.params.image_h, ds.params.image_w},
                      s.images[v].data());
        c.save(dir + "/" + sample_file(static_cast<std::int64_t>(i)));
    }
}

inline Dataset load_dataset(const std::string& dir) {
    std::ifstream f(dir + "/index.json");
    if (!f) throw IoError("cannot open dataset index: " + dir + "/index.json");
    nlohmann::json idx = nlohmann::json::parse(f);
    Dataset ds;
    ds.seed = idx.at("seed").get<std::uint64_t>();
    ds.class_names = idx.at("class_names").get<std::vector<std::string>>();
    auto& b = idx.at("bounds");
    ds.bounds.x_min = b.at("x_min");
    ds.bounds.x_max = b.at("x_max");
    ds.bounds.y_min = b.at("y_min");
    ds.bounds.y_max = b.at("y_max");
    ds.bounds.z_min = b.at("z_min");
    ds.bounds.z_max = b.at("z_max");
    ds.params.raster_h = idx.at("raster").at("h");
    ds.params.raster_w = idx.at("raster").at("w");
    ds.params.resolution = idx.at("raster").at("resolution");
    ds.params.horizon = idx.at("horizon");
    ds.params.lidar_bins = idx.at("lidar_bins");
    ds.params.image_h = idx.at("image").at("h");
    ds.params.image_w = idx.at("image").at("w");
    ds.params.fov_deg = idx.at("fov_deg");
    ds.params.difficulty = difficulty_from_string(idx.at("difficulty"));
    std::vector<CameraModel> cams;
    for (auto& jc : idx.at("cameras")) {
        CameraModel cam;
        auto pr = jc.at("proj_colmajor").get<std::vector<double>>();
        std::copy(pr.begin(), pr.end(), cam.proj.data());
        cam.image_w = jc.at("image_w");
        cam.image_h = jc.at("image_h");
        cams.push_back(cam);
    }
    ds.params.n_views = static_cast<std::int64_t>(cams.size());
    for (auto& name : idx.at("samples").get<std::vector<std::string>>()) {
        io::Container c = io::Container::load(dir + "/" + name);
        SceneSample s;
        s.gt_map = c.find("gt_map").as_i32();
        s.gt_traj = c.find("gt_traj").as_f64();
        s.bev_raster = c.find("bev_raster").as_f64();
        for (std::int64_t v = 0; v < ds.params.n_views; ++v)
            s.images.push_back(c.find("image_" + std::to_string(v)).as_f64());
        s.cams = cams;
        ds.samples.push_back(std::move(s));
    }
    return ds;
}

}  // namespace bevsplat::sim
