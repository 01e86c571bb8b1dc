// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// bevsplat CLI: dataset generation, training, evaluation, map rendering,
// trajectory planning, gradient checking and benchmarks.
//
// Exit codes: 0 success, 1 check failure, 2 config error, 3 I/O error.

#include "bevsplat/config.hpp"
#include "bevsplat/core/checkpoint.hpp"
#include "bevsplat/io/image.hpp"
#include "bevsplat/planner/planner.hpp"
#include "bevsplat/sim/gradsuite.hpp"
#include "bevsplat/sim/model.hpp"
#include "bevsplat/sim/train.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

using namespace bevsplat;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct CommonOpts {
    std::string config_file;
    std::vector<std::string> sets;
    std::int64_t seed = -1;
    std::int64_t threads = 0;
    std::string precision;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_file, "config file (key = value lines)");
    cmd->add_option("--set", o.sets, "override a config key: --set key=value")->take_all();
    cmd->add_option("--seed", o.seed, "override the global seed");
    cmd->add_option("--threads", o.threads, "worker thread cap");
    cmd->add_option("--precision", o.precision, "float width: f64 | f32");
}

Config build_config(const CommonOpts& o) {
    Config cfg;
    if (!o.config_file.empty()) cfg.load_file(o.config_file);
    for (auto& kv : o.sets) {
        auto eq = kv.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.seed >= 0) cfg.set("seed", std::to_string(o.seed));
    if (o.threads > 0) cfg.set("threads", std::to_string(o.threads));
    if (!o.precision.empty()) cfg.set("precision", o.precision);
    cfg.validate();
    worker_threads() = static_cast<int>(cfg.geti("threads"));
    return cfg;
}

sim::SceneGenParams scene_params_from(const Config& c) {
    sim::SceneGenParams p;
    p.raster_h = c.geti("raster.h");
    p.raster_w = c.geti("raster.w");
    p.resolution = c.getf("raster.resolution");
    p.horizon = c.geti("planner.horizon");
    p.n_views = c.geti("cameras.count");
    p.image_h = c.geti("cameras.image_h");
    p.image_w = c.geti("cameras.image_w");
    p.fov_deg = c.getf("cameras.fov_deg");
    p.lidar_bins = c.geti("lidar.height_bins");
    p.difficulty = sim::difficulty_from_string(c.gets("dataset.difficulty"));
    return p;
}

scene::SceneBounds bounds_from(const Config& c) {
    scene::SceneBounds b;
    b.x_min = c.getf("scene.x_min");
    b.x_max = c.getf("scene.x_max");
    b.y_min = c.getf("scene.y_min");
    b.y_max = c.getf("scene.y_max");
    b.z_min = c.getf("scene.z_min");
    b.z_max = c.getf("scene.z_max");
    return b;
}

void require_dataset_match(const Config& c, const sim::Dataset& ds) {
    auto b = bounds_from(c);
    auto close = [](double a, double b2) { return std::abs(a - b2) <= 1e-9; };
    if (!close(b.x_min, ds.bounds.x_min) || !close(b.x_max, ds.bounds.x_max) ||
        !close(b.y_min, ds.bounds.y_min) || !close(b.y_max, ds.bounds.y_max))
        throw ConfigError("scene bounds in the config do not match the dataset");
    if (c.geti("raster.h") != ds.params.raster_h || c.geti("raster.w") != ds.params.raster_w ||
        !close(c.getf("raster.resolution"), ds.params.resolution))
        throw ConfigError("raster geometry in the config does not match the dataset");
    if (c.geti("planner.horizon") != ds.params.horizon)
        throw ConfigError("planner.horizon does not match the dataset trajectories");
    if (c.geti("cameras.count") != ds.params.n_views)
        throw ConfigError("cameras.count does not match the dataset");
    if (c.geti("lidar.height_bins") != ds.params.lidar_bins)
        throw ConfigError("lidar.height_bins does not match the dataset");
}

std::vector<std::int32_t> argmax_map(const VecX<double>& grid, std::int64_t H, std::int64_t W,
                                     std::int64_t K) {
    std::vector<std::int32_t> cls(static_cast<size_t>(H * W));
    for (std::int64_t i = 0; i < H * W; ++i) {
        std::int64_t am = 0;
        for (std::int64_t c = 1; c < K; ++c)
            if (grid[i * K + c] > grid[i * K + am]) am = c;
        cls[static_cast<size_t>(i)] = static_cast<std::int32_t>(am);
    }
    return cls;
}

// ---------------------------------------------------------------------------
// commands (f64 pipeline; f32 dispatched where supported)
// ---------------------------------------------------------------------------

int cmd_gen_data(const Config& cfg, const std::string& out, std::int64_t count) {
    auto params = scene_params_from(cfg);
    auto ds = sim::generate_dataset(static_cast<std::uint64_t>(cfg.geti("seed")),
                                    count > 0 ? count : cfg.geti("dataset.count"),
                                    bounds_from(cfg), params);
    sim::save_dataset(ds, out);
    json j{{"command", "gen-data"},
           {"out", out},
           {"count", ds.samples.size()},
           {"seed", cfg.geti("seed")},
           {"difficulty", cfg.gets("dataset.difficulty")}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

template <class S>
int cmd_train(const Config& cfg, const std::string& data_dir, const std::string& out_dir) {
    auto ds = sim::load_dataset(data_dir);
    require_dataset_match(cfg, ds);
    auto settings = sim::PipelineSettings::from_config(cfg);
    sim::Pipeline<S> pipe(settings, static_cast<std::uint64_t>(cfg.geti("seed")));
    fs::create_directories(out_dir);
    std::ofstream log(out_dir + "/train_log.jsonl");
    if (!log) throw IoError("cannot write training log in " + out_dir);
    auto ts = sim::TrainSettings::from_config(cfg);
    auto hist = sim::train(pipe, ds, ts, &log);
    save_checkpoint(pipe.store(), out_dir + "/checkpoint.bsc");
    plan::save_vocabulary(pipe.vocabulary(), out_dir + "/vocabulary.bsc");
    json j{{"command", "train"},
           {"steps", hist.steps},
           {"final_loss", hist.total_loss.empty() ? 0.0 : hist.total_loss.back()},
           {"checkpoint", out_dir + "/checkpoint.bsc"},
           {"log", out_dir + "/train_log.jsonl"},
           {"parameters", pipe.store().num_scalars()}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

template <class S>
int cmd_eval(const Config& cfg, const std::string& ckpt, const std::string& data_dir,
             const std::string& out_file, const std::string& dump_gaussians,
             std::int64_t dump_sample) {
    auto ds = sim::load_dataset(data_dir);
    require_dataset_match(cfg, ds);
    auto settings = sim::PipelineSettings::from_config(cfg);
    sim::Pipeline<S> pipe(settings, static_cast<std::uint64_t>(cfg.geti("seed")));
    load_checkpoint(pipe.store(), ckpt);
    pipe.mark_vocabulary_loaded();
    if (!dump_gaussians.empty()) {
        if (dump_sample < 0 || dump_sample >= static_cast<std::int64_t>(ds.samples.size()))
            throw ConfigError("--sample index out of range");
        auto out = pipe.forward(ds.samples[static_cast<size_t>(dump_sample)], ds.params, false);
        scene::save_gaussian_set(out.refined.detached(), settings.bounds, dump_gaussians);
    }
    auto ev = sim::evaluate(pipe, ds);
    json j = ev.to_json(ds.class_names);
    j["command"] = "eval";
    j["checkpoint"] = ckpt;
    if (!out_file.empty()) {
        std::ofstream f(out_file);
        if (!f) throw IoError("cannot write " + out_file);
        f << j.dump(2) << "\n";
    }
    std::cout << j.dump(2) << "\n";
    return 0;
}

template <class S>
int cmd_render(const Config& cfg, const std::string& gs_file, const std::string& out_prefix) {
    auto [set, bounds] = scene::load_gaussian_set<S>(gs_file);
    raster::RasterConfig rc;
    rc.h = cfg.geti("raster.h");
    rc.w = cfg.geti("raster.w");
    rc.cutoff = cfg.getf("raster.cutoff");
    rc.tile = cfg.geti("raster.tile");
    double rx = bounds.x_extent() / static_cast<double>(rc.w);
    double ry = bounds.y_extent() / static_cast<double>(rc.h);
    if (std::abs(rx - ry) > 1e-9)
        throw ConfigError("raster.h/raster.w do not match the stored bounds aspect ratio");
    rc.resolution = rx;
    auto map = raster::render(set, bounds, rc, raster::RenderPath::Tiled);
    VecX<double> grid(map.grid.size());
    for (std::int64_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(map.grid.vals()[i]);
    auto cls = argmax_map(grid, rc.h, rc.w, set.classes() + 1);
    io::write_class_map_ppm(out_prefix + ".ppm", static_cast<int>(rc.h), static_cast<int>(rc.w),
                            cls);
    io::Container c("semantic_map");
    c.set_meta_double("resolution", map.resolution);
    c.set_meta_double("origin_x", map.origin[0]);
    c.set_meta_double("origin_y", map.origin[1]);
    c.set_meta_int("underflow_pixels", map.underflow_pixels);
    detail::add_array<S>(c, "map", map.grid.shape(), map.grid.vals());
    c.save(out_prefix + ".bsc");
    json j{{"command", "render"},
           {"ppm", out_prefix + ".ppm"},
           {"tensor", out_prefix + ".bsc"},
           {"underflow_pixels", map.underflow_pixels},
           {"gaussians", set.count()}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

template <class S>
int cmd_plan(const Config& cfg, const std::string& gs_file, const std::string& ckpt,
             const std::string& vocab_file, const std::string& out_prefix) {
    auto [set, bounds] = scene::load_gaussian_set<S>(gs_file);
    if (set.feat_dim() != cfg.geti("gaussians.dim"))
        throw ConfigError("gaussian set feature dim does not match gaussians.dim");
    auto settings = sim::PipelineSettings::from_config(cfg);
    plan::AnchorVocabulary vocab;
    ParameterStore<S> local_store(static_cast<std::uint64_t>(cfg.geti("seed")));
    std::unique_ptr<plan::CascadePlanner<S>> local_planner;
    std::unique_ptr<sim::Pipeline<S>> pipe;
    if (!ckpt.empty()) {
        pipe = std::make_unique<sim::Pipeline<S>>(settings,
                                                  static_cast<std::uint64_t>(cfg.geti("seed")));
        load_checkpoint(pipe->store(), ckpt);
        pipe->mark_vocabulary_loaded();
        vocab = pipe->vocabulary();
    } else {
        // fresh planner weights from the seed; zero-initialized refinement
        // heads return the vocabulary unchanged
        local_planner = std::make_unique<plan::CascadePlanner<S>>(local_store, "plan",
                                                                  settings.dim, settings.planner);
        if (vocab_file.empty())
            throw ConfigError("plan: --vocab is required when no checkpoint is given");
    }
    if (!vocab_file.empty()) vocab = plan::load_vocabulary(vocab_file);

    const plan::CascadePlanner<S>& planner = pipe ? pipe->planner() : *local_planner;
    std::vector<plan::TrajectorySet<S>> stages = planner.run(vocab, set);
    auto [sel, traj] = plan::select_trajectory(stages.back());

    // overlay SVG: argmax class map with the candidate trajectories on top
    raster::RasterConfig rc;
    rc.h = cfg.geti("raster.h");
    rc.w = cfg.geti("raster.w");
    rc.cutoff = cfg.getf("raster.cutoff");
    rc.tile = cfg.geti("raster.tile");
    rc.resolution = bounds.x_extent() / static_cast<double>(rc.w);
    if (std::abs(rc.resolution - bounds.y_extent() / static_cast<double>(rc.h)) > 1e-9)
        throw ConfigError("raster.h/raster.w do not match the stored bounds aspect ratio");
    auto map = raster::render(set, bounds, rc, raster::RenderPath::Tiled);
    VecX<double> grid(map.grid.size());
    for (std::int64_t i = 0; i < grid.size(); ++i) grid[i] = static_cast<double>(map.grid.vals()[i]);
    auto cls = argmax_map(grid, rc.h, rc.w, set.classes() + 1);
    std::vector<io::SvgPolyline> lines;
    std::int64_t T = stages.back().trajectories.dim(1);
    for (std::int64_t i = 0; i < stages.back().trajectories.dim(0); ++i) {
        io::SvgPolyline pl;
        pl.pts.push_back({(0.0 - bounds.x_min) / rc.resolution, (0.0 - bounds.y_min) / rc.resolution});
        for (std::int64_t t = 0; t < T; ++t) {
            double x = static_cast<double>(stages.back().trajectories.vals()[(i * T + t) * 2]);
            double y = static_cast<double>(stages.back().trajectories.vals()[(i * T + t) * 2 + 1]);
            pl.pts.push_back({(x - bounds.x_min) / rc.resolution, (y - bounds.y_min) / rc.resolution});
        }
        pl.color = i == sel ? "#ff2222" : "#ffccaa";
        pl.width = i == sel ? 0.8 : 0.35;
        pl.dashed = i != sel;
        lines.push_back(std::move(pl));
    }
    io::write_overlay_svg(out_prefix + ".svg", static_cast<int>(rc.h), static_cast<int>(rc.w),
                          cls, lines);

    json j{{"command", "plan"},
           {"selected", sel},
           {"svg", out_prefix + ".svg"},
           {"stages", json::array()}};
    for (auto& ts : stages) {
        json stage{{"stage", ts.stage}, {"scores", json::array()}, {"trajectories", json::array()}};
        for (std::int64_t i = 0; i < ts.scores.size(); ++i)
            stage["scores"].push_back(static_cast<double>(ts.scores.vals()[i]));
        for (std::int64_t i = 0; i < ts.trajectories.dim(0); ++i) {
            json tr = json::array();
            for (std::int64_t t = 0; t < ts.trajectories.dim(1); ++t)
                tr.push_back({static_cast<double>(ts.trajectories.vals()[(i * ts.trajectories.dim(1) + t) * 2]),
                              static_cast<double>(ts.trajectories.vals()[(i * ts.trajectories.dim(1) + t) * 2 + 1])});
            stage["trajectories"].push_back(tr);
        }
        j["stages"].push_back(stage);
    }
    std::ofstream f(out_prefix + ".json");
    if (!f) throw IoError("cannot write " + out_prefix + ".json");
    f << j.dump(2) << "\n";
    std::cout << j.dump(2) << "\n";
    return 0;
}

int cmd_gradcheck(std::int64_t coords) {
    auto rows = sim::run_gradient_suite<double>(coords);
    bool all = true;
    for (auto& r : rows) {
        std::printf("[%s] %-45s worst rel err %.3e (tol %.0e)\n", r.pass ? "PASS" : "FAIL",
                    r.name.c_str(), r.worst, r.tol);
        all = all && r.pass;
    }
    return all ? 0 : 1;
}

int cmd_bench(const Config& cfg, std::int64_t P, std::int64_t H, std::int64_t W,
              std::int64_t repeats) {
    using clock = std::chrono::steady_clock;
    Rng rng(static_cast<std::uint64_t>(cfg.geti("seed")));
    scene::SceneBounds b;
    b.x_min = b.y_min = -24;
    b.x_max = b.y_max = 24;
    scene::GaussianSet<double> g;
    g.means = Tensor<double>::from({P, 2}, rng.uniform_vec<double>(P * 2, -22, 22));
    g.scale_param = Tensor<double>::from({P, 2}, rng.uniform_vec<double>(P * 2, -0.3, 1.2));
    g.rot_raw = Tensor<double>::from({P, 2}, rng.uniform_vec<double>(P * 2, 0.3, 1));
    g.logits = Tensor<double>::from({P, 4}, rng.uniform_vec<double>(P * 4, -2, 2));
    g.prior_param = Tensor<double>::from({P}, rng.uniform_vec<double>(P, -1, 1));
    g.f_exp = Tensor<double>::zeros({P, 4});
    g.f_imp = Tensor<double>::zeros({P, 4});
    raster::RasterConfig rc;
    rc.h = H;
    rc.w = W;
    rc.resolution = 48.0 / static_cast<double>(W);
    rc.tile = cfg.geti("raster.tile");
    rc.cutoff = cfg.getf("raster.cutoff");
    finite_checks() = false;
    auto time_path = [&](raster::RenderPath path) {
        double best = 1e300;
        for (std::int64_t r = 0; r < repeats; ++r) {
            auto t0 = clock::now();
            auto map = raster::render(g, b, rc, path);
            auto t1 = clock::now();
            (void)map;
            best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
        }
        return best;
    };
    double tiled_ms = time_path(raster::RenderPath::Tiled);
    double naive_ms = time_path(raster::RenderPath::Naive);
    finite_checks() = true;

    // encoder step latency at the overfit scale
    auto settings = sim::micro_settings();
    settings.gaussians = 128;
    settings.dim = 64;
    settings.encoder.blocks = 2;
    settings.encoder.heads = 4;
    settings.encoder.points = 4;
    settings.planner.anchors = 4;
    settings.planner.horizon = 8;
    settings.planner.coord_scale = 24.0;
    settings.bounds.x_min = settings.bounds.y_min = -24;
    settings.bounds.x_max = settings.bounds.y_max = 24;
    settings.raster.h = settings.raster.w = 64;
    settings.raster.resolution = 0.75;
    settings.raster.cutoff = std::exp(-4.5);
    settings.n_views = 3;
    settings.lidar_bins = 8;
    sim::Pipeline<double> pipe(settings, 7);
    sim::SceneGenParams sp;
    sp.raster_h = sp.raster_w = 64;
    sp.resolution = 0.75;
    sp.horizon = 8;
    sp.n_views = 3;
    sp.image_h = 32;
    sp.image_w = 48;
    sp.lidar_bins = 8;
    Rng srng(3);
    auto smp = sim::generate_scene(srng, settings.bounds, sp);
    plan::AnchorVocabulary vocab;
    vocab.k = 4;
    vocab.horizon = 8;
    vocab.anchors.assign(4 * 8 * 2, 0.0);
    for (int a = 0; a < 4; ++a)
        for (int t = 0; t < 8; ++t) {
            vocab.anchors[size_t((a * 8 + t) * 2)] = 2.5 * (t + 1);
            vocab.anchors[size_t((a * 8 + t) * 2 + 1)] = 0.5 * (a - 1.5) * (t + 1);
        }
    pipe.set_vocabulary(vocab);
    double step_ms = 0;
    {
        auto t0 = clock::now();
        auto out = pipe.forward(smp, sp, true, raster::RenderPath::Tiled);
        auto lb = pipe.loss(out, smp);
        pipe.store().zero_grad();
        backward(lb.total);
        auto t1 = clock::now();
        step_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }

    json j{{"command", "bench"},
           {"renderer", {{"gaussians", P},
                         {"raster", {H, W}},
                         {"naive_ms", naive_ms},
                         {"tiled_ms", tiled_ms},
                         {"speedup", naive_ms / tiled_ms}}},
           {"encoder_step", {{"gaussians", settings.gaussians},
                             {"dim", settings.dim},
                             {"blocks", settings.encoder.blocks},
                             {"forward_backward_ms", step_ms}}},
           {"threads", worker_threads()}};
    std::cout << j.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"bevsplat: sparse Gaussian BEV scene fusion, differentiable semantic map "
                 "rendering and cascade trajectory planning"};
    app.require_subcommand(1);
    app.footer(Config::help_text());

    CommonOpts gen_o, train_o, eval_o, render_o, plan_o, grad_o, bench_o;
    std::string gen_out, train_data, train_out, eval_ckpt, eval_data, eval_out;
    std::string render_gs, render_out, plan_gs, plan_ckpt, plan_vocab, plan_out;
    std::string eval_dump;
    std::int64_t eval_sample = 0;
    std::int64_t gen_count = 0, grad_coords = 6;
    std::int64_t bench_p = 512, bench_h = 256, bench_w = 256, bench_repeats = 3;
    std::string gen_difficulty;

    auto* c_gen = app.add_subcommand("gen-data", "generate a synthetic scene dataset");
    add_common(c_gen, gen_o);
    c_gen->add_option("--out", gen_out, "output dataset directory")->required();
    c_gen->add_option("--count", gen_count, "number of scenes (default dataset.count)");
    c_gen->add_option("--difficulty", gen_difficulty, "empty | easy | normal");

    auto* c_train = app.add_subcommand("train", "train the pipeline on a dataset");
    add_common(c_train, train_o);
    c_train->add_option("--data", train_data, "dataset directory")->required();
    c_train->add_option("--out", train_out, "output directory (checkpoint, log)")->required();

    auto* c_eval = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
    add_common(c_eval, eval_o);
    c_eval->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    c_eval->add_option("--data", eval_data, "dataset directory")->required();
    c_eval->add_option("--out", eval_out, "metrics JSON output file");
    c_eval->add_option("--dump-gaussians", eval_dump, "write one refined Gaussian set container");
    c_eval->add_option("--sample", eval_sample, "sample index for --dump-gaussians");

    auto* c_render = app.add_subcommand("render", "render a serialized Gaussian set to a map");
    add_common(c_render, render_o);
    c_render->add_option("--gaussians", render_gs, "gaussian set container")->required();
    c_render->add_option("--out", render_out, "output prefix (.ppm, .bsc)")->required();

    auto* c_plan = app.add_subcommand("plan", "refine anchor trajectories over a Gaussian set");
    add_common(c_plan, plan_o);
    c_plan->add_option("--gaussians", plan_gs, "gaussian set container")->required();
    c_plan->add_option("--checkpoint", plan_ckpt, "checkpoint with planner weights");
    c_plan->add_option("--vocab", plan_vocab, "anchor vocabulary container");
    c_plan->add_option("--out", plan_out, "output prefix (.json, .svg)")->required();

    auto* c_grad = app.add_subcommand("gradcheck", "run the finite-difference suites");
    add_common(c_grad, grad_o);
    bool micro = true;
    c_grad->add_flag("--micro", micro, "micro configuration (default)");
    c_grad->add_option("--coords", grad_coords, "sampled coordinates per parameter tensor");

    auto* c_bench = app.add_subcommand("bench", "renderer and encoder benchmarks");
    add_common(c_bench, bench_o);
    c_bench->add_option("--p", bench_p, "number of Gaussians");
    c_bench->add_option("--raster-h", bench_h, "raster rows");
    c_bench->add_option("--raster-w", bench_w, "raster cols");
    c_bench->add_option("--repeats", bench_repeats, "timing repeats (best of)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*c_gen) {
            Config cfg = build_config(gen_o);
            if (!gen_difficulty.empty()) cfg.set("dataset.difficulty", gen_difficulty);
            cfg.validate();
            return cmd_gen_data(cfg, gen_out, gen_count);
        }
        if (*c_train) {
            Config cfg = build_config(train_o);
            return cfg.gets("precision") == "f32"
                       ? cmd_train<float>(cfg, train_data, train_out)
                       : cmd_train<double>(cfg, train_data, train_out);
        }
        if (*c_eval) {
            Config cfg = build_config(eval_o);
            return cfg.gets("precision") == "f32"
                       ? cmd_eval<float>(cfg, eval_ckpt, eval_data, eval_out, eval_dump, eval_sample)
                       : cmd_eval<double>(cfg, eval_ckpt, eval_data, eval_out, eval_dump, eval_sample);
        }
        if (*c_render) {
            Config cfg = build_config(render_o);
            return cfg.gets("precision") == "f32" ? cmd_render<float>(cfg, render_gs, render_out)
                                                  : cmd_render<double>(cfg, render_gs, render_out);
        }
        if (*c_plan) {
            Config cfg = build_config(plan_o);
            return cfg.gets("precision") == "f32"
                       ? cmd_plan<float>(cfg, plan_gs, plan_ckpt, plan_vocab, plan_out)
                       : cmd_plan<double>(cfg, plan_gs, plan_ckpt, plan_vocab, plan_out);
        }
        if (*c_grad) {
            Config cfg = build_config(grad_o);
            (void)cfg;
            return cmd_gradcheck(grad_coords);
        }
        if (*c_bench) {
            Config cfg = build_config(bench_o);
            return cmd_bench(cfg, bench_p, bench_h, bench_w, bench_repeats);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
