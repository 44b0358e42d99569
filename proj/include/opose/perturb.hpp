#pragma once

// Input corruptions for the robustness protocols: shifting the subject,
// painting textured occluders over it, erasing regions outside or at the
// frame edge, and jittering the detection box. Sampling and application are
// split so tests can pin the draw distributions and the pixel effects
// independently.

#include <cstdint>
#include <string>
#include <vector>

#include "opose/geometry.hpp"
#include "opose/image.hpp"
#include "opose/rng.hpp"

namespace opose {

enum class PerturbKind : int {
    none = 0,
    translation,   // shift the content by up to tau * bbox side per axis
    occlusion,     // textured rectangles / ellipses over the subject
    erase_rect,    // blank an axis-aligned square near the subject
    erase_circle,  // blank a disc
    erase_edge,    // blank a band at one frame edge
    bbox_noise,    // re-crop with a jittered detection box
};

const char* perturb_kind_name(PerturbKind kind);
PerturbKind perturb_kind_from_name(const std::string& name);

enum class FillMode : int { zero = 0, mean_color };

// Square detection box, pixel units.
struct BBox {
    double cx = 0.0, cy = 0.0, side = 0.0;
};

struct PerturbSpec {
    PerturbKind kind = PerturbKind::none;
    FillMode fill = FillMode::mean_color;
    double tau = 0.25;          // translation: max offset fraction of bbox side
    int occ_min_shapes = 1;     // occlusion
    int occ_max_shapes = 8;
    double occ_min_frac = 0.10;  // shape extent as fraction of bbox side
    double occ_max_frac = 0.35;
    double occ_noise = 18.0;    // per-pixel texture amplitude
    double rect_frac = 0.30;    // erase_rect side as fraction of bbox side
    double sigma_center = 0.20; // bbox noise, fractions of the side
    double sigma_scale = 0.20;

    void validate() const;
};

// ---- sampled draws ----

struct Translation {
    int dx = 0, dy = 0;
};

struct OccShape {
    bool ellipse = false;
    double cx = 0.0, cy = 0.0;  // center, pixels
    double hw = 0.0, hh = 0.0;  // half extents
    uint8_t r = 0, g = 0, b = 0;
};

struct EraseRect {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open pixel bounds
};

struct EraseCircle {
    double cx = 0.0, cy = 0.0, r = 0.0;
};

struct EraseEdge {
    int edge = 0;   // 0 left, 1 right, 2 top, 3 bottom
    int width = 0;  // band width, pixels
};

// Integer offsets truncated toward zero, so |dx|, |dy| <= tau * side exactly.
Translation sample_translation(const BBox& box, double tau, Rng& rng);
std::vector<OccShape> sample_occlusion(const BBox& box, const PerturbSpec& spec, Rng& rng);
EraseRect sample_erase_rect(const BBox& box, double frac, int img_w, int img_h, Rng& rng);
EraseCircle sample_erase_circle(const BBox& box, Rng& rng);
EraseEdge sample_erase_edge(int img_w, int img_h, Rng& rng);
// Center gets side * N(0, sigma_center^2) per axis; side gets
// side * N(0, sigma_scale^2), floored at one pixel.
BBox sample_bbox_noise(const BBox& box, const PerturbSpec& spec, Rng& rng);

// ---- pixel application ----

// Fill color per FillMode; mean_color averages the image as it is now.
void apply_translation(Image& img, const Translation& t, FillMode fill);
void apply_occlusion(Image& img, const std::vector<OccShape>& shapes, double noise_amp, Rng& rng);
void apply_erase_rect(Image& img, const EraseRect& r, FillMode fill);
void apply_erase_circle(Image& img, const EraseCircle& c, FillMode fill);
void apply_erase_edge(Image& img, const EraseEdge& e, FillMode fill);
// Bilinear re-crop of `box` scaled back to the original resolution.
void apply_bbox_crop(Image& img, const BBox& box, FillMode fill);

// Draws per `spec` and applies in place. Returns a short description of the
// draw for logs ("translation dx=-3 dy=7", "none", ...).
std::string apply_perturbation(Image& img, const PerturbSpec& spec, const BBox& box, Rng& rng);

}  // namespace opose
