#include "opose/perturb.hpp"

#include <algorithm>
#include <cmath>

#include "ag/array.hpp"

namespace opose {

const char* perturb_kind_name(PerturbKind kind) {
    switch (kind) {
        case PerturbKind::none: return "none";
        case PerturbKind::translation: return "translation";
        case PerturbKind::occlusion: return "occlusion";
        case PerturbKind::erase_rect: return "erase_rect";
        case PerturbKind::erase_circle: return "erase_circle";
        case PerturbKind::erase_edge: return "erase_edge";
        case PerturbKind::bbox_noise: return "bbox_noise";
    }
    return "none";
}

PerturbKind perturb_kind_from_name(const std::string& name) {
    for (int k = 0; k <= static_cast<int>(PerturbKind::bbox_noise); ++k) {
        auto kind = static_cast<PerturbKind>(k);
        if (name == perturb_kind_name(kind)) return kind;
    }
    throw std::invalid_argument("unknown perturbation kind: " + name);
}

void PerturbSpec::validate() const {
    ag::check(tau >= 0.0, "PerturbSpec: tau must be >= 0");
    ag::check(occ_min_shapes >= 1 && occ_max_shapes >= occ_min_shapes,
              "PerturbSpec: bad occluder count range");
    ag::check(occ_min_frac > 0.0 && occ_max_frac >= occ_min_frac,
              "PerturbSpec: bad occluder size range");
    ag::check(occ_noise >= 0.0, "PerturbSpec: negative texture amplitude");
    ag::check(rect_frac > 0.0, "PerturbSpec: rect_frac must be > 0");
    ag::check(sigma_center >= 0.0 && sigma_scale >= 0.0, "PerturbSpec: negative sigma");
}

// ---- draws ----

Translation sample_translation(const BBox& box, double tau, Rng& rng) {
    ag::check(box.side > 0.0, "sample_translation: empty box");
    double lim = tau * box.side;
    // trunc toward zero keeps the bound exact for integer offsets
    return {static_cast<int>(rng.uniform(-lim, lim)), static_cast<int>(rng.uniform(-lim, lim))};
}

std::vector<OccShape> sample_occlusion(const BBox& box, const PerturbSpec& spec, Rng& rng) {
    ag::check(box.side > 0.0, "sample_occlusion: empty box");
    int n = rng.uniform_int(spec.occ_min_shapes, spec.occ_max_shapes);
    std::vector<OccShape> shapes(n);
    for (OccShape& s : shapes) {
        s.ellipse = rng.uniform() < 0.5;
        s.cx = box.cx + rng.uniform(-0.5, 0.5) * box.side;
        s.cy = box.cy + rng.uniform(-0.5, 0.5) * box.side;
        s.hw = 0.5 * box.side * rng.uniform(spec.occ_min_frac, spec.occ_max_frac);
        s.hh = 0.5 * box.side * rng.uniform(spec.occ_min_frac, spec.occ_max_frac);
        s.r = static_cast<uint8_t>(rng.uniform_int(0, 255));
        s.g = static_cast<uint8_t>(rng.uniform_int(0, 255));
        s.b = static_cast<uint8_t>(rng.uniform_int(0, 255));
    }
    return shapes;
}

EraseRect sample_erase_rect(const BBox& box, double frac, int img_w, int img_h, Rng& rng) {
    ag::check(box.side > 0.0, "sample_erase_rect: empty box");
    int side = std::max(1, static_cast<int>(std::lround(frac * box.side)));
    double cx = box.cx + rng.uniform(-0.5, 0.5) * box.side;
    double cy = box.cy + rng.uniform(-0.5, 0.5) * box.side;
    int ux0 = static_cast<int>(std::lround(cx)) - side / 2;
    int uy0 = static_cast<int>(std::lround(cy)) - side / 2;
    EraseRect r;  // clip, never shift
    r.x0 = std::clamp(ux0, 0, img_w);
    r.y0 = std::clamp(uy0, 0, img_h);
    r.x1 = std::clamp(ux0 + side, 0, img_w);
    r.y1 = std::clamp(uy0 + side, 0, img_h);
    return r;
}

EraseCircle sample_erase_circle(const BBox& box, Rng& rng) {
    ag::check(box.side > 0.0, "sample_erase_circle: empty box");
    EraseCircle c;
    c.cx = box.cx + rng.uniform(-0.5, 0.5) * box.side;
    c.cy = box.cy + rng.uniform(-0.5, 0.5) * box.side;
    c.r = rng.uniform(box.side / 5.0, 2.0 * box.side / 5.0);
    return c;
}

EraseEdge sample_erase_edge(int img_w, int img_h, Rng& rng) {
    EraseEdge e;
    e.edge = rng.uniform_int(0, 3);
    int extent = e.edge < 2 ? img_w : img_h;
    e.width = static_cast<int>(rng.uniform(0.0, extent / 2.0));
    return e;
}

BBox sample_bbox_noise(const BBox& box, const PerturbSpec& spec, Rng& rng) {
    ag::check(box.side > 0.0, "sample_bbox_noise: empty box");
    BBox out = box;
    out.cx += box.side * spec.sigma_center * rng.gaussian();
    out.cy += box.side * spec.sigma_center * rng.gaussian();
    out.side = std::max(1.0, box.side + box.side * spec.sigma_scale * rng.gaussian());
    return out;
}

// ---- application ----

namespace {

void fill_color(const Image& img, FillMode fill, uint8_t out[3]) {
    out[0] = out[1] = out[2] = 0;
    if (fill != FillMode::mean_color || img.rgb.empty()) return;
    uint64_t acc[3] = {0, 0, 0};
    size_t n = img.rgb.size() / 3;
    for (size_t i = 0; i < n; ++i)
        for (int c = 0; c < 3; ++c) acc[c] += img.rgb[i * 3 + c];
    for (int c = 0; c < 3; ++c) out[c] = static_cast<uint8_t>(acc[c] / n);
}

}  // namespace

void apply_translation(Image& img, const Translation& t, FillMode fill) {
    uint8_t bg[3];
    fill_color(img, fill, bg);
    Image out(img.w, img.h);
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            int sx = x - t.dx, sy = y - t.dy;
            uint8_t* dst = out.px(x, y);
            if (sx >= 0 && sx < img.w && sy >= 0 && sy < img.h) {
                const uint8_t* src = img.px(sx, sy);
                dst[0] = src[0];
                dst[1] = src[1];
                dst[2] = src[2];
            } else {
                dst[0] = bg[0];
                dst[1] = bg[1];
                dst[2] = bg[2];
            }
        }
    img = std::move(out);
}

void apply_occlusion(Image& img, const std::vector<OccShape>& shapes, double noise_amp, Rng& rng) {
    for (const OccShape& s : shapes) {
        int x0 = std::max(0, static_cast<int>(std::floor(s.cx - s.hw)));
        int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(s.cx + s.hw)));
        int y0 = std::max(0, static_cast<int>(std::floor(s.cy - s.hh)));
        int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(s.cy + s.hh)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                double nx = (x - s.cx) / s.hw, ny = (y - s.cy) / s.hh;
                bool inside = s.ellipse ? nx * nx + ny * ny <= 1.0
                                        : std::abs(x - s.cx) <= s.hw && std::abs(y - s.cy) <= s.hh;
                if (!inside) continue;
                uint8_t* p = img.px(x, y);
                uint8_t base[3] = {s.r, s.g, s.b};
                for (int c = 0; c < 3; ++c) {
                    double v = base[c] + rng.uniform(-noise_amp, noise_amp);
                    p[c] = static_cast<uint8_t>(std::clamp(v, 0.0, 255.0));
                }
            }
    }
}

void apply_erase_rect(Image& img, const EraseRect& r, FillMode fill) {
    uint8_t bg[3];
    fill_color(img, fill, bg);
    for (int y = r.y0; y < r.y1; ++y)
        for (int x = r.x0; x < r.x1; ++x) {
            uint8_t* p = img.px(x, y);
            p[0] = bg[0];
            p[1] = bg[1];
            p[2] = bg[2];
        }
}

void apply_erase_circle(Image& img, const EraseCircle& c, FillMode fill) {
    uint8_t bg[3];
    fill_color(img, fill, bg);
    int x0 = std::max(0, static_cast<int>(std::floor(c.cx - c.r)));
    int x1 = std::min(img.w - 1, static_cast<int>(std::ceil(c.cx + c.r)));
    int y0 = std::max(0, static_cast<int>(std::floor(c.cy - c.r)));
    int y1 = std::min(img.h - 1, static_cast<int>(std::ceil(c.cy + c.r)));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (!in_circle({static_cast<double>(x), static_cast<double>(y)}, {c.cx, c.cy}, c.r))
                continue;
            uint8_t* p = img.px(x, y);
            p[0] = bg[0];
            p[1] = bg[1];
            p[2] = bg[2];
        }
}

void apply_erase_edge(Image& img, const EraseEdge& e, FillMode fill) {
    EraseRect r;
    switch (e.edge) {
        case 0: r = {0, 0, std::min(e.width, img.w), img.h}; break;
        case 1: r = {std::max(0, img.w - e.width), 0, img.w, img.h}; break;
        case 2: r = {0, 0, img.w, std::min(e.width, img.h)}; break;
        default: r = {0, std::max(0, img.h - e.width), img.w, img.h}; break;
    }
    apply_erase_rect(img, r, fill);
}

void apply_bbox_crop(Image& img, const BBox& box, FillMode fill) {
    ag::check(box.side > 0.0, "apply_bbox_crop: empty box");
    uint8_t bg[3];
    fill_color(img, fill, bg);
    Image out(img.w, img.h);
    // Output pixel (x,y) samples the box bilinearly.
    double x0 = box.cx - box.side / 2.0, y0 = box.cy - box.side / 2.0;
    double sx = box.side / img.w, sy = box.side / img.h;
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x) {
            double u = x0 + (x + 0.5) * sx - 0.5;
            double v = y0 + (y + 0.5) * sy - 0.5;
            int iu = static_cast<int>(std::floor(u)), iv = static_cast<int>(std::floor(v));
            double fu = u - iu, fv = v - iv;
            double acc[3] = {0, 0, 0};
            for (int dy = 0; dy < 2; ++dy)
                for (int dx = 0; dx < 2; ++dx) {
                    double wgt = (dx ? fu : 1.0 - fu) * (dy ? fv : 1.0 - fv);
                    int px = iu + dx, py = iv + dy;
                    const uint8_t* s = (px >= 0 && px < img.w && py >= 0 && py < img.h)
                                           ? img.px(px, py)
                                           : bg;
                    for (int c = 0; c < 3; ++c) acc[c] += wgt * s[c];
                }
            uint8_t* d = out.px(x, y);
            for (int c = 0; c < 3; ++c)
                d[c] = static_cast<uint8_t>(std::clamp(acc[c] + 0.5, 0.0, 255.0));
        }
    img = std::move(out);
}

std::string apply_perturbation(Image& img, const PerturbSpec& spec, const BBox& box, Rng& rng) {
    spec.validate();
    switch (spec.kind) {
        case PerturbKind::none:
            return "none";
        case PerturbKind::translation: {
            Translation t = sample_translation(box, spec.tau, rng);
            apply_translation(img, t, spec.fill);
            return "translation dx=" + std::to_string(t.dx) + " dy=" + std::to_string(t.dy);
        }
        case PerturbKind::occlusion: {
            auto shapes = sample_occlusion(box, spec, rng);
            apply_occlusion(img, shapes, spec.occ_noise, rng);
            return "occlusion shapes=" + std::to_string(shapes.size());
        }
        case PerturbKind::erase_rect: {
            EraseRect r = sample_erase_rect(box, spec.rect_frac, img.w, img.h, rng);
            apply_erase_rect(img, r, spec.fill);
            return "erase_rect x0=" + std::to_string(r.x0) + " y0=" + std::to_string(r.y0) +
                   " x1=" + std::to_string(r.x1) + " y1=" + std::to_string(r.y1);
        }
        case PerturbKind::erase_circle: {
            EraseCircle c = sample_erase_circle(box, rng);
            apply_erase_circle(img, c, spec.fill);
            return "erase_circle r=" + std::to_string(c.r);
        }
        case PerturbKind::erase_edge: {
            EraseEdge e = sample_erase_edge(img.w, img.h, rng);
            apply_erase_edge(img, e, spec.fill);
            return "erase_edge edge=" + std::to_string(e.edge) +
                   " width=" + std::to_string(e.width);
        }
        case PerturbKind::bbox_noise: {
            BBox noisy = sample_bbox_noise(box, spec, rng);
            apply_bbox_crop(img, noisy, spec.fill);
            return "bbox_noise cx=" + std::to_string(noisy.cx) +
                   " cy=" + std::to_string(noisy.cy) + " side=" + std::to_string(noisy.side);
        }
    }
    return "none";
}

}  // namespace opose
