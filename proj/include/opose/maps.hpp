#pragma once

// Per-limb confidence and orientation maps.
//
// Each limb owns six planes over the map grid: confidence, the 2D unit
// direction of the limb on the image plane (2 channels), and the 3D unit
// orientation (3 channels). Orientation values are constant across the
// limb's support region and zero elsewhere; confidence is the region's
// indicator. 16 limbs x 6 = 96 planes.
//
// The support region of a limb whose projected length is at least d is the
// oriented rectangle of width d from parent to child; shorter limbs get the
// axis-aligned d x d square around their midpoint. Pixel centers sit at
// integer coordinates; membership is closed along the limb axis and open
// across it.

#include <cstdint>
#include <string>
#include <vector>

#include "opose/geometry.hpp"
#include "opose/skeleton.hpp"

namespace opose {

struct MapDims {
    int w = 0, h = 0;
};

struct MapSet {
    static constexpr int kChannelsPerLimb = 6;  // conf, o2x, o2y, o3x, o3y, o3z

    int w = 0, h = 0;
    // [limb][channel][row][col], row-major within a plane.
    std::vector<float> data;

    MapSet() = default;
    MapSet(int w_, int h_)
        : w(w_), h(h_),
          data(static_cast<size_t>(kLimbCount) * kChannelsPerLimb * w_ * h_, 0.0f) {}

    int64_t plane_size() const { return static_cast<int64_t>(w) * h; }
    float* plane(int limb, int channel) {
        return data.data() + (static_cast<int64_t>(limb) * kChannelsPerLimb + channel) * plane_size();
    }
    const float* plane(int limb, int channel) const {
        return data.data() + (static_cast<int64_t>(limb) * kChannelsPerLimb + channel) * plane_size();
    }
    float& at(int limb, int channel, int y, int x) {
        return plane(limb, channel)[static_cast<int64_t>(y) * w + x];
    }
    float at(int limb, int channel, int y, int x) const {
        return plane(limb, channel)[static_cast<int64_t>(y) * w + x];
    }
};

// Region geometry chosen for a limb's 2D endpoints.
struct RegionSpec {
    enum class Kind { rect, square } kind = Kind::rect;
    Vec2 p0, p1;      // rect: endpoints; square: p0 = center
    double d = 0.0;   // width / side
};

RegionSpec region_spec_for(Vec2 p0, Vec2 p1, double d);

// 0/1 mask over the map grid, row-major.
std::vector<uint8_t> limb_region(Vec2 p0, Vec2 p1, double d, MapDims dims);

// Ground-truth encoding of a projected pose. orients3d entries may be the
// zero sentinel, in which case the 3D channels stay zero over the region.
MapSet encode_maps(const Pose2D& pose2d, const OrientationSet& orients3d,
                   const LimbTopology& topo, double d, MapDims dims);

// Bit i set when limb i has a nonempty support region.
uint16_t visible_limbs(const Pose2D& pose2d, double d, MapDims dims);

// Binary blob: 16-byte header (magic 'OPM1', width, height, limb count as
// little-endian uint32) followed by the planes as little-endian float32 in
// (limb, channel, row, col) order.
void save_mapset(const std::string& path, const MapSet& maps);
MapSet load_mapset(const std::string& path);

// One grayscale PGM per channel, named <prefix>limb<NN>_<chan>.pgm.
void dump_mapset_images(const std::string& prefix, const MapSet& maps);

}  // namespace opose
