#pragma once

// Synthetic people: cone-constrained random skeletons rendered as colored
// limb bands over noise, with ground-truth maps, 2D joints (map pixels) and
// root-relative 3D joints (millimetres). Rendering bakes a depth cue into
// each limb: brightness ramps from the parent toward the child as a function
// of the limb's z component, so 3D orientation is recoverable from shading.
//
// Samples are generated per-index from a derived seed, so any slice of a
// dataset can be rebuilt without generating the rest.

#include <cstdint>
#include <string>
#include <vector>

#include "ag/array.hpp"
#include "opose/image.hpp"
#include "opose/maps.hpp"
#include "opose/perturb.hpp"
#include "opose/rng.hpp"
#include "opose/skeleton.hpp"

namespace opose {

struct OrthoCamera {
    double scale = 0.0075;  // map pixels per millimetre
    Vec2 pp{8.0, 7.4};      // principal point, map pixels

    Vec2 project(Vec3 p) const { return {pp.x + scale * p.x, pp.y + scale * p.y}; }
};

struct SynthConfig {
    int image_size = 64;
    int map_size = 16;
    OrthoCamera cam;
    double d = 2.5;        // limb band width, map pixels
    double frac_3d = 1.0;  // leading fraction of samples that carry 3D GT

    int stride() const { return image_size / map_size; }
    void validate() const {
        ag::check(map_size > 0 && image_size % map_size == 0,
                  "SynthConfig: image_size must be a multiple of map_size");
        ag::check(cam.scale > 0, "SynthConfig: camera scale must be positive");
        ag::check(d > 0, "SynthConfig: band width must be positive");
        ag::check(frac_3d >= 0.0 && frac_3d <= 1.0, "SynthConfig: frac_3d out of [0,1]");
    }
};

// Map-pixel to image-pixel mapping for a given stride: the image pixel block
// covering one map cell is centered on the map coordinate.
inline Vec2 map_to_image(Vec2 p, int stride) {
    double s = static_cast<double>(stride);
    return {s * p.x + (s - 1.0) / 2.0, s * p.y + (s - 1.0) / 2.0};
}

struct SynthSample {
    Image image;
    MapSet maps;        // GT encoding at map resolution
    Pose3D pose3d;      // root-relative, mm, float32-rounded
    Pose2D pose2d;      // map pixels, float32-rounded
    bool has_3d = true;
    uint16_t visibility = 0;
};

// Quantize joint coordinates to float32, the precision samples are stored
// and re-derived at.
void round_pose(Pose3D& p);
void round_pose(Pose2D& p);

// Random orientations per limb, each inside a fixed cone around an
// anatomical rest direction (hips narrow, torso moderate, limbs wide).
OrientationSet sample_pose(Rng& rng);

// Unit vector uniform over the spherical cap of half-angle `alpha` (radians)
// around `rest`.
Vec3 sample_cone(Vec3 rest, double alpha, Rng& rng);

// Painter-ordered limb rendering over uniform background noise.
Image render_sample(const Pose2D& pose2d, const Pose3D& pose3d, const OrientationSet& orients,
                    const SynthConfig& cfg, Rng& rng);

SynthSample make_sample(const SynthConfig& cfg, uint64_t master_seed, int64_t index);

// Samples index 0..count-1; the first round(frac_3d * count) carry 3D GT.
std::vector<SynthSample> generate_dataset(const SynthConfig& cfg, uint64_t master_seed,
                                          int64_t count);

// Square box around the projected joints in image pixels.
BBox person_bbox(const Pose2D& pose2d, const SynthConfig& cfg, double margin = 1.3);

// Binary dataset: fixed header (magic 'OPK1', version, count, sizes, camera)
// then per sample the raw image, float32 3D/2D joints, flags and visibility.
// Maps are not stored; the loader re-encodes them from the saved joints.
void save_dataset(const std::string& path, const std::vector<SynthSample>& samples,
                  const SynthConfig& cfg);
std::vector<SynthSample> load_dataset(const std::string& path, SynthConfig* cfg_out = nullptr);

// [N,3,S,S] planes in [0,1].
template <typename T>
ag::Arr<T> images_to_planes(const std::vector<const Image*>& batch) {
    ag::check(!batch.empty(), "images_to_planes: empty batch");
    int64_t w = batch[0]->w, h = batch[0]->h;
    ag::Arr<T> out({static_cast<int64_t>(batch.size()), 3, h, w});
    T* dst = out.ptr();
    for (const Image* img : batch) {
        ag::check(img->w == w && img->h == h, "images_to_planes: mixed sizes");
        for (int c = 0; c < 3; ++c)
            for (int64_t y = 0; y < h; ++y)
                for (int64_t x = 0; x < w; ++x)
                    *dst++ = static_cast<T>(img->px(static_cast<int>(x), static_cast<int>(y))[c]) /
                             static_cast<T>(255);
    }
    return out;
}

}  // namespace opose
