#pragma once

// 8-bit RGB raster plus the tiny bit of PPM/PGM I/O needed for debug dumps.

#include <cstdint>
#include <string>
#include <vector>

namespace opose {

struct Image {
    int w = 0, h = 0;
    std::vector<uint8_t> rgb;  // row-major, 3 bytes per pixel

    Image() = default;
    Image(int w_, int h_) : w(w_), h(h_), rgb(static_cast<size_t>(w_) * h_ * 3, 0) {}

    uint8_t* px(int x, int y) { return rgb.data() + (static_cast<size_t>(y) * w + x) * 3; }
    const uint8_t* px(int x, int y) const { return rgb.data() + (static_cast<size_t>(y) * w + x) * 3; }
};

void save_ppm(const std::string& path, const Image& img);
Image load_ppm(const std::string& path);

// Grayscale dump of one float plane, linearly mapped from [lo, hi] to [0, 255].
void save_pgm(const std::string& path, const float* plane, int w, int h, float lo, float hi);

}  // namespace opose
