// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// Synthetic traffic scenes: a lane corridor (straight or constant-curvature
// arc), vehicles placed off the ego path, an ego trajectory along the lane,
// the rasterized ground-truth class map, toy camera images rendered by ray
// casting the same analytic class field, and a height-binned BEV point
// histogram standing in for LiDAR.
//
// Classes: 0 background, 1 drivable area, 2 lane line, 3 vehicle, 4 ego path.

#pragma once

#include "bevsplat/encoder/encoder.hpp"
#include "bevsplat/io/image.hpp"

#include <Eigen/Dense>
#include <numeric>

namespace bevsplat::sim {

using enc::CameraModel;
using scene::SceneBounds;

enum class Difficulty { Empty, Easy, Normal };

inline Difficulty difficulty_from_string(const std::string& s) {
    if (s == "empty") return Difficulty::Empty;
    if (s == "easy") return Difficulty::Easy;
    if (s == "normal") return Difficulty::Normal;
    throw std::invalid_argument("unknown difficulty: " + s);
}

struct SceneGenParams {
    std::int64_t raster_h = 64, raster_w = 64;
    double resolution = 0.75;
    std::int64_t horizon = 8;         // trajectory waypoints
    std::int64_t n_views = 3;
    std::int64_t image_h = 32, image_w = 48;
    double fov_deg = 70.0;
    std::int64_t lidar_bins = 8;
    Difficulty difficulty = Difficulty::Normal;
    double road_half_width = 5.0;
    double lane_line_half = 0.45;
    double ego_path_half = 1.0;
    double ego_step_min = 2.2, ego_step_max = 3.2;  // per-waypoint progress (m)
};

struct VehicleBox {
    double cx, cy, heading;
    double half_len = 2.25, half_wid = 1.0, height = 1.6;
};

// One synthetic training example, all buffers in double precision.
struct SceneSample {
    std::vector<std::int32_t> gt_map;          // [H*W]
    std::vector<double> gt_traj;               // [T*2]
    std::vector<std::vector<double>> images;   // N x [3*Hi*Wi]
    std::vector<double> bev_raster;            // [bins*H*W]
    std::vector<CameraModel> cams;
    std::vector<VehicleBox> vehicles;
    double curvature = 0;
    double ego_lateral = 0;
};

namespace detail_sim {

// Constant-curvature centerline from the origin heading +x, parameterized by
// arc length; kappa = 0 degenerates to a straight line.
inline Eigen::Vector2d centerline(double s, double kappa) {
    if (std::abs(kappa) < 1e-9) return {s, 0.0};
    return {std::sin(kappa * s) / kappa, (1.0 - std::cos(kappa * s)) / kappa};
}
inline double heading_at(double s, double kappa) { return kappa * s; }

// lateral offset applied left of the heading
inline Eigen::Vector2d offset_point(double s, double kappa, double lateral) {
    double h = heading_at(s, kappa);
    return centerline(s, kappa) + lateral * Eigen::Vector2d(-std::sin(h), std::cos(h));
}

struct Polyline {
    std::vector<Eigen::Vector2d> pts;

    double distance(const Eigen::Vector2d& p) const {
        double best = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i + 1 < pts.size(); ++i) {
            Eigen::Vector2d a = pts[i], b = pts[i + 1];
            Eigen::Vector2d ab = b - a;
            double t = ab.squaredNorm() > 0 ? (p - a).dot(ab) / ab.squaredNorm() : 0.0;
            t = std::clamp(t, 0.0, 1.0);
            best = std::min(best, (p - (a + t * ab)).norm());
        }
        return best;
    }
};

inline bool in_box(const Eigen::Vector2d& p, const VehicleBox& v, double margin = 0.0) {
    double c = std::cos(v.heading), s = std::sin(v.heading);
    double dx = p(0) - v.cx, dy = p(1) - v.cy;
    double lx = c * dx + s * dy, ly = -s * dx + c * dy;
    return std::abs(lx) <= v.half_len + margin && std::abs(ly) <= v.half_wid + margin;
}

}  // namespace detail_sim

// Analytic scene description; class_at is the single source of truth used by
// both the BEV rasterizer and the camera ray caster.
struct SceneGeometry {
    double curvature = 0;
    double s_begin = -12, s_end = 64;
    double road_half = 5.0, lane_half = 0.45, ego_half = 1.0;
    double ego_lateral = 0;
    detail_sim::Polyline center, left_edge, right_edge, ego_path;
    std::vector<VehicleBox> vehicles;
    bool paint_ego_path = true;

    void build_polylines() {
        center.pts.clear();
        left_edge.pts.clear();
        right_edge.pts.clear();
        for (double s = s_begin; s <= s_end; s += 0.5) {
            center.pts.push_back(detail_sim::centerline(s, curvature));
            left_edge.pts.push_back(detail_sim::offset_point(s, curvature, road_half));
            right_edge.pts.push_back(detail_sim::offset_point(s, curvature, -road_half));
        }
    }

    std::int32_t class_at(double x, double y) const {
        Eigen::Vector2d p(x, y);
        for (auto& v : vehicles)
            if (detail_sim::in_box(p, v)) return 3;
        double dc = center.distance(p);
        if (dc <= lane_half) return 2;  // center lane line
        if (dc <= road_half) {
            if (left_edge.distance(p) <= lane_half || right_edge.distance(p) <= lane_half)
                return 2;
            if (paint_ego_path && ego_path.distance(p) <= ego_half) return 4;
            return 1;
        }
        return 0;
    }
};

inline SceneSample generate_scene(Rng& rng, const SceneBounds& bounds, const SceneGenParams& p) {
    bounds.validate();
    SceneGeometry geo;
    geo.road_half = p.road_half_width;
    geo.lane_half = p.lane_line_half;
    geo.ego_half = p.ego_path_half;
    // corridor: straight, gentle arc or tighter turn
    int kind = static_cast<int>(rng.uniform_int(0, 2));
    if (kind == 0)
        geo.curvature = 0.0;
    else if (kind == 1)
        geo.curvature = rng.uniform(0.004, 0.012) * (rng.uniform_int(0, 1) ? 1.0 : -1.0);
    else
        geo.curvature = rng.uniform(0.012, 0.028) * (rng.uniform_int(0, 1) ? 1.0 : -1.0);
    geo.ego_lateral = -0.5 * p.road_half_width * rng.uniform(0.55, 0.75);  // right lane
    geo.paint_ego_path = p.difficulty != Difficulty::Empty;
    geo.build_polylines();

    // ego trajectory: constant progress along the lane
    double step = rng.uniform(p.ego_step_min, p.ego_step_max);
    std::vector<double> traj;
    geo.ego_path.pts.clear();
    geo.ego_path.pts.push_back(detail_sim::offset_point(0.0, geo.curvature, geo.ego_lateral));
    for (std::int64_t t = 1; t <= p.horizon; ++t) {
        Eigen::Vector2d w = detail_sim::offset_point(step * double(t), geo.curvature, geo.ego_lateral);
        traj.push_back(w(0));
        traj.push_back(w(1));
        geo.ego_path.pts.push_back(w);
    }

    // vehicles on the opposite lane / shoulder, clear of the ego path
    std::int64_t n_veh = 0;
    if (p.difficulty == Difficulty::Easy) n_veh = rng.uniform_int(0, 2);
    if (p.difficulty == Difficulty::Normal) n_veh = rng.uniform_int(1, 6);
    for (std::int64_t i = 0; i < n_veh; ++i) {
        for (int attempt = 0; attempt < 20; ++attempt) {
            double s = rng.uniform(6.0, 0.8 * geo.s_end);
            double lat = rng.uniform(0.30, 0.72) * p.road_half_width;  // left side
            VehicleBox v;
            Eigen::Vector2d c = detail_sim::offset_point(s, geo.curvature, lat);
            v.cx = c(0);
            v.cy = c(1);
            v.heading = detail_sim::heading_at(s, geo.curvature) + rng.uniform(-0.08, 0.08);
            bool clear = true;
            for (auto& w : geo.ego_path.pts)
                if (detail_sim::in_box(w, v, 1.4)) clear = false;
            for (auto& o : geo.vehicles)
                if (std::hypot(o.cx - v.cx, o.cy - v.cy) < 5.5) clear = false;
            if (clear) {
                geo.vehicles.push_back(v);
                break;
            }
        }
    }

    SceneSample smp;
    smp.curvature = geo.curvature;
    smp.ego_lateral = geo.ego_lateral;
    smp.vehicles = geo.vehicles;
    smp.gt_traj = traj;

    // ground-truth class raster at pixel centers
    smp.gt_map.resize(static_cast<size_t>(p.raster_h * p.raster_w));
    for (std::int64_t i = 0; i < p.raster_h; ++i)
        for (std::int64_t j = 0; j < p.raster_w; ++j) {
            double x = bounds.x_min + (double(j) + 0.5) * p.resolution;
            double y = bounds.y_min + (double(i) + 0.5) * p.resolution;
            smp.gt_map[static_cast<size_t>(i * p.raster_w + j)] = geo.class_at(x, y);
        }

    // cameras: front, front-left, front-right ... alternating outward
    for (std::int64_t v = 0; v < p.n_views; ++v) {
        double yaw = 0.0;
        if (v == 1) yaw = 0.55;
        if (v == 2) yaw = -0.55;
        if (v > 2) yaw = (v % 2 ? 1.0 : -1.0) * (0.55 + 0.35 * double(v / 2));
        smp.cams.push_back(
            enc::make_pinhole_camera(p.fov_deg, p.image_w, p.image_h, {0.0, 0.0, 1.6}, yaw));
    }

    // toy images: ground classes by ray casting, vehicles as painted boxes
    const auto& pal = io::class_palette();
    auto color_of = [&](std::int32_t c, double shade) -> Eigen::Vector3d {
        Eigen::Vector3d col(pal[size_t(c)][0], pal[size_t(c)][1], pal[size_t(c)][2]);
        return col / 255.0 * shade;
    };
    for (std::int64_t v = 0; v < p.n_views; ++v) {
        const CameraModel& cam = smp.cams[static_cast<size_t>(v)];
        // invert the projection for ground rays: proj = K [R | -R c]
        Eigen::Matrix3d KR = cam.proj.block<3, 3>(0, 0);
        Eigen::Vector3d Kt = cam.proj.col(3);
        Eigen::Matrix3d KRinv = KR.inverse();
        Eigen::Vector3d cam_center = -KRinv * Kt;
        std::vector<double> img(static_cast<size_t>(3 * p.image_h * p.image_w), 0.0);
        std::vector<double> depth(static_cast<size_t>(p.image_h * p.image_w),
                                  std::numeric_limits<double>::infinity());
        for (std::int64_t iy = 0; iy < p.image_h; ++iy)
            for (std::int64_t ix = 0; ix < p.image_w; ++ix) {
                Eigen::Vector3d ray = KRinv * Eigen::Vector3d(double(ix), double(iy), 1.0);
                Eigen::Vector3d col(0.35, 0.55, 0.8);  // sky
                double dist = std::numeric_limits<double>::infinity();
                if (ray(2) < -1e-6) {  // hits the ground plane z=0
                    double t = -cam_center(2) / ray(2);
                    Eigen::Vector3d hit = cam_center + t * ray;
                    dist = t * ray.norm();
                    if (dist < 90.0) {
                        std::int32_t c = geo.class_at(hit(0), hit(1));
                        // vehicles handled separately with height
                        if (c == 3) c = 1;
                        double shade = 1.0 / (1.0 + 0.012 * dist);
                        col = color_of(c, shade);
                    }
                }
                std::int64_t px = iy * p.image_w + ix;
                depth[size_t(px)] = dist;
                for (int ch = 0; ch < 3; ++ch)
                    img[static_cast<size_t>(ch * p.image_h * p.image_w + px)] = col(ch);
            }
        // vehicles: projected box faces, farthest first
        std::vector<size_t> order(geo.vehicles.size());
        std::iota(order.begin(), order.end(), size_t(0));
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            const auto &va = geo.vehicles[a], &vb = geo.vehicles[b];
            return std::hypot(va.cx, va.cy) > std::hypot(vb.cx, vb.cy);
        });
        for (size_t oi : order) {
            const VehicleBox& veh = geo.vehicles[oi];
            double c = std::cos(veh.heading), s = std::sin(veh.heading);
            Eigen::Vector2d corners2d[4] = {
                {veh.cx + c * veh.half_len - s * veh.half_wid, veh.cy + s * veh.half_len + c * veh.half_wid},
                {veh.cx + c * veh.half_len + s * veh.half_wid, veh.cy + s * veh.half_len - c * veh.half_wid},
                {veh.cx - c * veh.half_len + s * veh.half_wid, veh.cy - s * veh.half_len - c * veh.half_wid},
                {veh.cx - c * veh.half_len - s * veh.half_wid, veh.cy - s * veh.half_len + c * veh.half_wid}};
            double vdist = std::hypot(veh.cx, veh.cy);
            // project all 8 corners; skip the box if any corner is behind
            std::vector<Eigen::Vector2d> proj;
            bool ok = true;
            double umin = 1e9, umax = -1e9, vmin = 1e9, vmax = -1e9;
            for (int k = 0; k < 8; ++k) {
                Eigen::Vector4d X(corners2d[k % 4](0), corners2d[k % 4](1),
                                  k < 4 ? 0.0 : veh.height, 1.0);
                Eigen::Vector3d uvw = cam.proj * X;
                if (uvw(2) <= 0.1) {
                    ok = false;
                    break;
                }
                Eigen::Vector2d uv(uvw(0) / uvw(2), uvw(1) / uvw(2));
                proj.push_back(uv);
                umin = std::min(umin, uv(0));
                umax = std::max(umax, uv(0));
                vmin = std::min(vmin, uv(1));
                vmax = std::max(vmax, uv(1));
            }
            if (!ok) continue;
            std::int64_t x0 = std::max<std::int64_t>(0, std::int64_t(std::floor(umin)));
            std::int64_t x1 = std::min<std::int64_t>(p.image_w - 1, std::int64_t(std::ceil(umax)));
            std::int64_t y0 = std::max<std::int64_t>(0, std::int64_t(std::floor(vmin)));
            std::int64_t y1 = std::min<std::int64_t>(p.image_h - 1, std::int64_t(std::ceil(vmax)));
            // box silhouette = convex hull (monotone chain) of the projected corners
            std::vector<Eigen::Vector2d> pts = proj;
            std::sort(pts.begin(), pts.end(), [](auto& a, auto& b) {
                return a(0) < b(0) || (a(0) == b(0) && a(1) < b(1));
            });
            auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a,
                            const Eigen::Vector2d& b) {
                return (a(0) - o(0)) * (b(1) - o(1)) - (a(1) - o(1)) * (b(0) - o(0));
            };
            std::vector<Eigen::Vector2d> hull;
            for (auto& q : pts) {
                while (hull.size() >= 2 && cross(hull[hull.size() - 2], hull.back(), q) <= 0)
                    hull.pop_back();
                hull.push_back(q);
            }
            size_t lower = hull.size() + 1;
            for (auto it = pts.rbegin(); it != pts.rend(); ++it) {
                while (hull.size() >= lower && cross(hull[hull.size() - 2], hull.back(), *it) <= 0)
                    hull.pop_back();
                hull.push_back(*it);
            }
            hull.pop_back();
            auto in_poly = [&](double u, double vv) {
                bool all = true;
                for (size_t i2 = 0; i2 < hull.size(); ++i2) {
                    const auto& a = hull[i2];
                    const auto& b = hull[(i2 + 1) % hull.size()];
                    if (cross(a, b, Eigen::Vector2d(u, vv)) < 0) {
                        all = false;
                        break;
                    }
                }
                return all;
            };
            double shade = 1.0 / (1.0 + 0.012 * vdist);
            Eigen::Vector3d col = color_of(3, shade);
            for (std::int64_t iy = y0; iy <= y1; ++iy)
                for (std::int64_t ix = x0; ix <= x1; ++ix) {
                    if (!in_poly(double(ix), double(iy))) continue;
                    std::int64_t px = iy * p.image_w + ix;
                    if (vdist >= depth[size_t(px)]) continue;  // ground nearer than the box
                    depth[size_t(px)] = vdist;
                    for (int ch = 0; ch < 3; ++ch)
                        img[static_cast<size_t>(ch * p.image_h * p.image_w + px)] = col(ch);
                }
        }
        smp.images.push_back(std::move(img));
    }

    // BEV point histogram: surface samples binned over [z_min, z_max]
    std::int64_t bins = p.lidar_bins;
    smp.bev_raster.assign(static_cast<size_t>(bins * p.raster_h * p.raster_w), 0.0);
    auto deposit = [&](double x, double y, double z) {
        std::int64_t j = std::int64_t(std::floor((x - bounds.x_min) / p.resolution));
        std::int64_t i = std::int64_t(std::floor((y - bounds.y_min) / p.resolution));
        if (i < 0 || j < 0 || i >= p.raster_h || j >= p.raster_w) return;
        double zf = (z - bounds.z_min) / (bounds.z_max - bounds.z_min);
        std::int64_t b = std::clamp<std::int64_t>(std::int64_t(zf * double(bins)), 0, bins - 1);
        smp.bev_raster[static_cast<size_t>((b * p.raster_h + i) * p.raster_w + j)] += 1.0;
    };
    // ground returns on drivable surface
    for (double s = geo.s_begin; s <= geo.s_end; s += 0.9)
        for (double lat = -geo.road_half; lat <= geo.road_half; lat += 0.9) {
            Eigen::Vector2d q =
                detail_sim::offset_point(s + rng.uniform(-0.3, 0.3), geo.curvature,
                                         lat + rng.uniform(-0.3, 0.3));
            deposit(q(0), q(1), 0.0);
        }
    // dense returns on vehicle surfaces
    for (auto& veh : geo.vehicles)
        for (int k = 0; k < 160; ++k) {
            double lx = rng.uniform(-veh.half_len, veh.half_len);
            double ly = rng.uniform(-veh.half_wid, veh.half_wid);
            int face = static_cast<int>(rng.uniform_int(0, 2));
            double z = face == 0 ? veh.height : rng.uniform(0.0, veh.height);
            if (face == 1) ly = ly > 0 ? veh.half_wid : -veh.half_wid;
            if (face == 2) lx = lx > 0 ? veh.half_len : -veh.half_len;
            double c = std::cos(veh.heading), s = std::sin(veh.heading);
            deposit(veh.cx + c * lx - s * ly, veh.cy + s * lx + c * ly, z);
        }
    for (auto& v2 : smp.bev_raster) v2 = std::log1p(v2);

    return smp;
}

}  // namespace bevsplat::sim
