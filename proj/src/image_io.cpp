// Copyright Contributors to the bevsplat Project
// SPDX-License-Identifier: Apache-2.0

#include "bevsplat/io/image.hpp"

#include "bevsplat/core/common.hpp"

#include <fstream>
#include <sstream>

namespace bevsplat::io {

const std::vector<Rgb>& class_palette() {
    static const std::vector<Rgb> p = {
        Rgb{20, 20, 20},     // background
        Rgb{90, 90, 100},    // drivable area
        Rgb{240, 210, 60},   // lane line
        Rgb{220, 60, 50},    // vehicle
        Rgb{70, 180, 90},    // ego path
        Rgb{70, 110, 220},   // spare
        Rgb{180, 80, 200},   // spare
        Rgb{120, 200, 210},  // spare
    };
    return p;
}

void write_ppm(const std::string& path, int h, int w, const std::vector<std::uint8_t>& pixels) {
    if (pixels.size() != static_cast<size_t>(h) * static_cast<size_t>(w) * 3)
        throw IoError("write_ppm: pixel buffer size mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << "P6\n" << w << " " << h << "\n255\n";
    f.write(reinterpret_cast<const char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
    if (!f) throw IoError("write failed: " + path);
}

void write_class_map_ppm(const std::string& path, int h, int w,
                         const std::vector<std::int32_t>& classes) {
    const auto& pal = class_palette();
    std::vector<std::uint8_t> px(static_cast<size_t>(h) * static_cast<size_t>(w) * 3);
    for (size_t i = 0; i < classes.size(); ++i) {
        Rgb c = pal[static_cast<size_t>(classes[i]) % pal.size()];
        px[3 * i] = c[0];
        px[3 * i + 1] = c[1];
        px[3 * i + 2] = c[2];
    }
    write_ppm(path, h, w, px);
}

namespace {
std::string rgb_hex(Rgb c) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), "#%02x%02x%02x", c[0], c[1], c[2]);
    return buf;
}
}  // namespace

void write_overlay_svg(const std::string& path, int h, int w,
                       const std::vector<std::int32_t>& classes,
                       const std::vector<SvgPolyline>& lines, int scale) {
    const auto& pal = class_palette();
    std::ostringstream os;
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w * scale << "\" height=\""
       << h * scale << "\" viewBox=\"0 0 " << w << " " << h << "\">\n";
    // background pixels, merged into horizontal runs to keep the file small
    for (int y = 0; y < h; ++y) {
        int x = 0;
        while (x < w) {
            std::int32_t c = classes[static_cast<size_t>(y * w + x)];
            int x2 = x + 1;
            while (x2 < w && classes[static_cast<size_t>(y * w + x2)] == c) ++x2;
            os << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << (x2 - x)
               << "\" height=\"1\" fill=\"" << rgb_hex(pal[static_cast<size_t>(c) % pal.size()])
               << "\"/>\n";
            x = x2;
        }
    }
    for (auto& l : lines) {
        os << "<polyline fill=\"none\" stroke=\"" << l.color << "\" stroke-width=\"" << l.width
           << "\"";
        if (l.dashed) os << " stroke-dasharray=\"1,1\"";
        os << " points=\"";
        for (auto& p : l.pts) os << p[0] << "," << p[1] << " ";
        os << "\"/>\n";
    }
    os << "</svg>\n";
    std::ofstream f(path);
    if (!f) throw IoError("cannot open for writing: " + path);
    f << os.str();
    if (!f) throw IoError("write failed: " + path);
}

}  // namespace bevsplat::io
