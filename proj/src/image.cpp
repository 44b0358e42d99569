#include "opose/image.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace opose {

void save_ppm(const std::string& path, const Image& img) {
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw std::runtime_error("save_ppm: cannot open " + path);
    f << "P6\n" << img.w << ' ' << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!f.good()) throw std::runtime_error("save_ppm: write failed for " + path);
}

Image load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw std::runtime_error("load_ppm: cannot open " + path);
    std::string magic;
    int w = 0, h = 0, maxval = 0;
    f >> magic >> w >> h >> maxval;
    if (magic != "P6" || w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("load_ppm: unsupported header in " + path);
    f.get();  // single whitespace before pixel data
    Image img(w, h);
    f.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.rgb.size()))
        throw std::runtime_error("load_ppm: truncated pixel data in " + path);
    return img;
}

void save_pgm(const std::string& path, const float* plane, int w, int h, float lo, float hi) {
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw std::runtime_error("save_pgm: cannot open " + path);
    f << "P5\n" << w << ' ' << h << "\n255\n";
    float range = hi - lo;
    if (range <= 0.0f) range = 1.0f;
    for (int i = 0; i < w * h; ++i) {
        float t = (plane[i] - lo) / range;
        t = t < 0.0f ? 0.0f : (t > 1.0f ? 1.0f : t);
        f.put(static_cast<char>(std::lround(t * 255.0f)));
    }
    if (!f.good()) throw std::runtime_error("save_pgm: write failed for " + path);
}

}  // namespace opose
