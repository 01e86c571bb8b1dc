// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace bevsplat::io {

using Rgb = std::array<std::uint8_t, 3>;

// Fixed palette for class maps: index 0 is background, then one color per
// foreground class (drivable, lane line, vehicle, ego path, extras).
const std::vector<Rgb>& class_palette();

// Binary P6 PPM. pixels is row-major RGB, size h*w*3.
void write_ppm(const std::string& path, int h, int w, const std::vector<std::uint8_t>& pixels);

// Class-index map (row-major, h*w) rendered through the palette.
void write_class_map_ppm(const std::string& path, int h, int w,
                         const std::vector<std::int32_t>& classes);

// Trajectory overlay: class map as SVG pixel rects plus polylines in map
// pixel coordinates. Each polyline is (points, color, width, dashed).
struct SvgPolyline {
    std::vector<std::array<double, 2>> pts;  // (col, row) in pixel units
    std::string color = "#ff0000";
    double width = 0.6;
    bool dashed = false;
};
void write_overlay_svg(const std::string& path, int h, int w,
                       const std::vector<std::int32_t>& classes,
                       const std::vector<SvgPolyline>& lines, int scale = 8);

}  // namespace bevsplat::io
