#include "opose/maps.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "opose/image.hpp"

namespace opose {

namespace {

constexpr uint32_t kMapMagic = 0x314D504FU;  // "OPM1"
constexpr double k2dEps = 1e-6;

void put_u32(std::ofstream& f, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    f.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& f, const std::string& path) {
    unsigned char b[4];
    f.read(reinterpret_cast<char*>(b), 4);
    if (f.gcount() != 4) throw std::runtime_error("load_mapset: truncated header in " + path);
    return static_cast<uint32_t>(b[0]) | static_cast<uint32_t>(b[1]) << 8 |
           static_cast<uint32_t>(b[2]) << 16 | static_cast<uint32_t>(b[3]) << 24;
}

}  // namespace

RegionSpec region_spec_for(Vec2 p0, Vec2 p1, double d) {
    RegionSpec spec;
    spec.d = d;
    if ((p1 - p0).norm() >= d) {
        spec.kind = RegionSpec::Kind::rect;
        spec.p0 = p0;
        spec.p1 = p1;
    } else {
        spec.kind = RegionSpec::Kind::square;
        spec.p0 = (p0 + p1) * 0.5;
        spec.p1 = spec.p0;
    }
    return spec;
}

std::vector<uint8_t> limb_region(Vec2 p0, Vec2 p1, double d, MapDims dims) {
    std::vector<uint8_t> mask(static_cast<size_t>(dims.w) * dims.h, 0);
    if (d <= 0.0) return mask;
    RegionSpec spec = region_spec_for(p0, p1, d);

    // Only scan rows/columns the region can touch.
    double lox, hix, loy, hiy;
    if (spec.kind == RegionSpec::Kind::rect) {
        lox = std::min(spec.p0.x, spec.p1.x) - d;
        hix = std::max(spec.p0.x, spec.p1.x) + d;
        loy = std::min(spec.p0.y, spec.p1.y) - d;
        hiy = std::max(spec.p0.y, spec.p1.y) + d;
    } else {
        lox = spec.p0.x - d;
        hix = spec.p0.x + d;
        loy = spec.p0.y - d;
        hiy = spec.p0.y + d;
    }
    int x0 = std::max(0, static_cast<int>(std::floor(lox)));
    int x1 = std::min(dims.w - 1, static_cast<int>(std::ceil(hix)));
    int y0 = std::max(0, static_cast<int>(std::floor(loy)));
    int y1 = std::min(dims.h - 1, static_cast<int>(std::ceil(hiy)));

    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            Vec2 c{static_cast<double>(x), static_cast<double>(y)};
            bool inside = spec.kind == RegionSpec::Kind::rect
                              ? in_oriented_rect(c, spec.p0, spec.p1, d)
                              : in_centered_square(c, spec.p0, d);
            if (inside) mask[static_cast<size_t>(y) * dims.w + x] = 1;
        }
    return mask;
}

MapSet encode_maps(const Pose2D& pose2d, const OrientationSet& orients3d,
                   const LimbTopology& topo, double d, MapDims dims) {
    if (dims.w <= 0 || dims.h <= 0) throw std::invalid_argument("encode_maps: empty map dims");
    if (d <= 0.0) throw std::invalid_argument("encode_maps: nonpositive region width");
    MapSet maps(dims.w, dims.h);
    for (int i = 0; i < kLimbCount; ++i) {
        auto [pj, cj] = topo.limbs[i];
        Vec2 p0 = pose2d.joints[pj];
        Vec2 p1 = pose2d.joints[cj];
        std::vector<uint8_t> mask = limb_region(p0, p1, d, dims);

        Vec2 dir2 = p1 - p0;
        double len2 = dir2.norm();
        float o2x = 0.0f, o2y = 0.0f;
        if (len2 >= k2dEps) {
            o2x = static_cast<float>(dir2.x / len2);
            o2y = static_cast<float>(dir2.y / len2);
        }
        Vec3 v3 = orients3d.v[i];
        float o3x = static_cast<float>(v3.x);
        float o3y = static_cast<float>(v3.y);
        float o3z = static_cast<float>(v3.z);

        float* conf = maps.plane(i, 0);
        float* c2x = maps.plane(i, 1);
        float* c2y = maps.plane(i, 2);
        float* c3x = maps.plane(i, 3);
        float* c3y = maps.plane(i, 4);
        float* c3z = maps.plane(i, 5);
        for (int64_t p = 0; p < maps.plane_size(); ++p) {
            if (!mask[p]) continue;
            conf[p] = 1.0f;
            c2x[p] = o2x;
            c2y[p] = o2y;
            c3x[p] = o3x;
            c3y[p] = o3y;
            c3z[p] = o3z;
        }
    }
    return maps;
}

uint16_t visible_limbs(const Pose2D& pose2d, double d, MapDims dims) {
    const LimbTopology& topo = canonical_topology();
    uint16_t bits = 0;
    for (int i = 0; i < kLimbCount; ++i) {
        auto [pj, cj] = topo.limbs[i];
        std::vector<uint8_t> mask = limb_region(pose2d.joints[pj], pose2d.joints[cj], d, dims);
        for (uint8_t m : mask)
            if (m) {
                bits |= static_cast<uint16_t>(1u << i);
                break;
            }
    }
    return bits;
}

void save_mapset(const std::string& path, const MapSet& maps) {
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw std::runtime_error("save_mapset: cannot open " + path);
    put_u32(f, kMapMagic);
    put_u32(f, static_cast<uint32_t>(maps.w));
    put_u32(f, static_cast<uint32_t>(maps.h));
    put_u32(f, kLimbCount);
    static_assert(sizeof(float) == 4);
    f.write(reinterpret_cast<const char*>(maps.data.data()),
            static_cast<std::streamsize>(maps.data.size() * sizeof(float)));
    if (!f.good()) throw std::runtime_error("save_mapset: write failed for " + path);
}

MapSet load_mapset(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw std::runtime_error("load_mapset: cannot open " + path);
    if (get_u32(f, path) != kMapMagic) throw std::runtime_error("load_mapset: bad magic in " + path);
    uint32_t w = get_u32(f, path), h = get_u32(f, path), limbs = get_u32(f, path);
    if (limbs != kLimbCount)
        throw std::runtime_error("load_mapset: expected " + std::to_string(kLimbCount) +
                                 " limbs, got " + std::to_string(limbs));
    if (w == 0 || h == 0 || w > 1u << 15 || h > 1u << 15)
        throw std::runtime_error("load_mapset: implausible dims in " + path);
    MapSet maps(static_cast<int>(w), static_cast<int>(h));
    f.read(reinterpret_cast<char*>(maps.data.data()),
           static_cast<std::streamsize>(maps.data.size() * sizeof(float)));
    if (f.gcount() != static_cast<std::streamsize>(maps.data.size() * sizeof(float)))
        throw std::runtime_error("load_mapset: truncated at byte " +
                                 std::to_string(16 + f.gcount()) + " in " + path);
    return maps;
}

void dump_mapset_images(const std::string& prefix, const MapSet& maps) {
    static const char* kChanNames[MapSet::kChannelsPerLimb] = {"conf", "o2x", "o2y",
                                                               "o3x", "o3y", "o3z"};
    for (int i = 0; i < kLimbCount; ++i)
        for (int c = 0; c < MapSet::kChannelsPerLimb; ++c) {
            char name[32];
            std::snprintf(name, sizeof(name), "limb%02d_%s.pgm", i, kChanNames[c]);
            float lo = c == 0 ? 0.0f : -1.0f;
            save_pgm(prefix + name, maps.plane(i, c), maps.w, maps.h, lo, 1.0f);
        }
}

}  // namespace opose
