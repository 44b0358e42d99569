#include "opose/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

#include "opose/extract.hpp"

namespace opose {

namespace {

constexpr uint32_t kDatasetMagic = 0x314B504Fu;  // "OPK1"
constexpr uint32_t kDatasetVersion = 1;

struct ConeSpec {
    Vec3 rest;
    double alpha;  // radians
};

// Rest directions in the camera frame: x right, y down, z away. Legs and
// arms hang toward +y, the spine chain points up, hips and clavicles sit
// sideways with little play.
const std::array<ConeSpec, kLimbCount>& cone_table() {
    static const double wide = 55.0 * M_PI / 180.0;
    static const double torso = 25.0 * M_PI / 180.0;
    static const double narrow = 15.0 * M_PI / 180.0;
    static const std::array<ConeSpec, kLimbCount> table = {{
        {{-1, 0, 0}, narrow},  // pelvis -> r_hip
        {{0, 1, 0}, wide},     // r_hip -> r_knee
        {{0, 1, 0}, wide},     // r_knee -> r_ankle
        {{1, 0, 0}, narrow},   // pelvis -> l_hip
        {{0, 1, 0}, wide},     // l_hip -> l_knee
        {{0, 1, 0}, wide},     // l_knee -> l_ankle
        {{0, -1, 0}, torso},   // pelvis -> spine
        {{0, -1, 0}, torso},   // spine -> thorax
        {{0, -1, 0}, torso},   // thorax -> neck
        {{0, -1, 0}, torso},   // neck -> head
        {{1, 0, 0}, narrow},   // thorax -> l_shoulder
        {{0, 1, 0}, wide},     // l_shoulder -> l_elbow
        {{0, 1, 0}, wide},     // l_elbow -> l_wrist
        {{-1, 0, 0}, narrow},  // thorax -> r_shoulder
        {{0, 1, 0}, wide},     // r_shoulder -> r_elbow
        {{0, 1, 0}, wide},     // r_elbow -> r_wrist
    }};
    return table;
}

void limb_color(int limb, uint8_t out[3]) {
    // Distinct hues, stepped so neighbouring limbs differ strongly.
    double h = 6.0 * ((limb * 7) % kLimbCount) / kLimbCount;  // [0,6)
    double s = 0.75, v = 1.0;
    double c = v * s, m = v - c;
    double xpart = c * (1.0 - std::abs(std::fmod(h, 2.0) - 1.0));
    double r = 0, g = 0, b = 0;
    switch (static_cast<int>(h)) {
        case 0: r = c; g = xpart; break;
        case 1: r = xpart; g = c; break;
        case 2: g = c; b = xpart; break;
        case 3: g = xpart; b = c; break;
        case 4: r = xpart; b = c; break;
        default: r = c; b = xpart; break;
    }
    out[0] = static_cast<uint8_t>(std::lround((r + m) * 255.0));
    out[1] = static_cast<uint8_t>(std::lround((g + m) * 255.0));
    out[2] = static_cast<uint8_t>(std::lround((b + m) * 255.0));
}

float f32(double v) { return static_cast<float>(v); }

// little-endian scalar I/O
template <typename T>
void put(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, size_t& off, const char* what) {
    ag::check(off + sizeof(T) <= in.size(), std::string("dataset truncated at byte ") +
                                                std::to_string(off) + " reading " + what);
    T v;
    std::memcpy(&v, in.data() + off, sizeof(T));
    off += sizeof(T);
    return v;
}

}  // namespace

// gcc 11 with avx-512 miscompiles the vectorized epilogue of this
// convert-and-widen loop, leaving the last joint's x unrounded, so
// vectorization is disabled here.
#if defined(__GNUC__) && !defined(__clang__)
__attribute__((optimize("no-tree-vectorize")))
#endif
void round_pose(Pose3D& p) {
    for (auto& j : p.joints) j = {f32(j.x), f32(j.y), f32(j.z)};
}

#if defined(__GNUC__) && !defined(__clang__)
__attribute__((optimize("no-tree-vectorize")))
#endif
void round_pose(Pose2D& p) {
    for (auto& j : p.joints) j = {f32(j.x), f32(j.y)};
}

Vec3 sample_cone(Vec3 rest, double alpha, Rng& rng) {
    Vec3 u = rest.normalized();
    ag::check(u.norm() > 0.5, "sample_cone: rest direction must be nonzero");
    double cos_t = 1.0 - rng.uniform() * (1.0 - std::cos(alpha));
    double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
    double phi = rng.uniform(0.0, 2.0 * M_PI);
    Vec3 e1 = (std::abs(u.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0}).cross(u).normalized();
    Vec3 e2 = u.cross(e1);
    return e1 * (sin_t * std::cos(phi)) + e2 * (sin_t * std::sin(phi)) + u * cos_t;
}

OrientationSet sample_pose(Rng& rng) {
    OrientationSet o;
    const auto& cones = cone_table();
    for (int i = 0; i < kLimbCount; ++i) o.v[i] = sample_cone(cones[i].rest, cones[i].alpha, rng);
    return o;
}

Image render_sample(const Pose2D& pose2d, const Pose3D& pose3d, const OrientationSet& orients,
                    const SynthConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto& topo = canonical_topology();
    int s = cfg.stride();
    Image img(cfg.image_size, cfg.image_size);
    for (auto& v : img.rgb) v = static_cast<uint8_t>(rng.uniform_int(20, 80));

    // Far limbs first so nearer ones overdraw.
    std::array<int, kLimbCount> order;
    for (int i = 0; i < kLimbCount; ++i) order[i] = i;
    std::array<double, kLimbCount> depth;
    for (int i = 0; i < kLimbCount; ++i) {
        auto [pj, cj] = topo.limbs[i];
        depth[i] = 0.5 * (pose3d.joints[pj].z + pose3d.joints[cj].z);
    }
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return depth[a] > depth[b]; });

    for (int i : order) {
        auto [pj, cj] = topo.limbs[i];
        Vec2 p0 = map_to_image(pose2d.joints[pj], s);
        Vec2 p1 = map_to_image(pose2d.joints[cj], s);
        double d_img = cfg.d * s;
        RegionSpec spec = region_spec_for(p0, p1, d_img);
        uint8_t base[3];
        limb_color(i, base);
        double vz = orients.v[i].z;                  // [-1,1]
        double far_end = 0.55 + 0.45 * (vz + 1.0) / 2.0;  // child-end brightness
        Vec2 axis = p1 - p0;
        double len2 = axis.dot(axis);

        int x0 = 0, x1 = 0, y0 = 0, y1 = 0;
        if (spec.kind == RegionSpec::Kind::rect) {
            x0 = std::max(0, static_cast<int>(std::floor(std::min(p0.x, p1.x) - d_img)));
            x1 = std::min(cfg.image_size - 1,
                          static_cast<int>(std::ceil(std::max(p0.x, p1.x) + d_img)));
            y0 = std::max(0, static_cast<int>(std::floor(std::min(p0.y, p1.y) - d_img)));
            y1 = std::min(cfg.image_size - 1,
                          static_cast<int>(std::ceil(std::max(p0.y, p1.y) + d_img)));
        } else {
            x0 = std::max(0, static_cast<int>(std::floor(spec.p0.x - d_img)));
            x1 = std::min(cfg.image_size - 1, static_cast<int>(std::ceil(spec.p0.x + d_img)));
            y0 = std::max(0, static_cast<int>(std::floor(spec.p0.y - d_img)));
            y1 = std::min(cfg.image_size - 1, static_cast<int>(std::ceil(spec.p0.y + d_img)));
        }
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) {
                Vec2 c{static_cast<double>(x), static_cast<double>(y)};
                bool inside = spec.kind == RegionSpec::Kind::rect
                                  ? in_oriented_rect(c, spec.p0, spec.p1, spec.d)
                                  : in_centered_square(c, spec.p0, spec.d);
                if (!inside) continue;
                double t = len2 > 0.0 ? std::clamp((c - p0).dot(axis) / len2, 0.0, 1.0) : 0.5;
                double f = 0.55 + (far_end - 0.55) * t;
                uint8_t* px = img.px(x, y);
                for (int ch = 0; ch < 3; ++ch)
                    px[ch] = static_cast<uint8_t>(std::lround(base[ch] * f));
            }
    }
    return img;
}

SynthSample make_sample(const SynthConfig& cfg, uint64_t master_seed, int64_t index) {
    cfg.validate();
    Rng rng(Rng::derive(master_seed, static_cast<uint64_t>(index)));
    const auto& topo = canonical_topology();
    LimbLengths lengths = default_limb_lengths();

    SynthSample s;
    OrientationSet sampled = sample_pose(rng);
    s.pose3d = fk_integrate(sampled, lengths, topo);
    round_pose(s.pose3d);
    for (int j = 0; j < kJointCount; ++j)
        s.pose2d.joints[j] = cfg.cam.project(s.pose3d.joints[j]);
    round_pose(s.pose2d);

    // Derive encode/render orientations from the rounded pose, exactly as a
    // loader rebuilding from the file would.
    OrientationSet orients = orientations_from_pose(s.pose3d, topo).orients;
    s.maps = encode_maps(s.pose2d, orients, topo, cfg.d, {cfg.map_size, cfg.map_size});
    s.visibility = visible_limbs(s.pose2d, cfg.d, {cfg.map_size, cfg.map_size});
    s.image = render_sample(s.pose2d, s.pose3d, orients, cfg, rng);
    return s;
}

std::vector<SynthSample> generate_dataset(const SynthConfig& cfg, uint64_t master_seed,
                                          int64_t count) {
    ag::check(count >= 0, "generate_dataset: negative count");
    int64_t n3d = static_cast<int64_t>(std::llround(cfg.frac_3d * static_cast<double>(count)));
    std::vector<SynthSample> out;
    out.reserve(count);
    for (int64_t i = 0; i < count; ++i) {
        out.push_back(make_sample(cfg, master_seed, i));
        out.back().has_3d = i < n3d;
    }
    return out;
}

BBox person_bbox(const Pose2D& pose2d, const SynthConfig& cfg, double margin) {
    double lo_x = 1e30, hi_x = -1e30, lo_y = 1e30, hi_y = -1e30;
    for (const Vec2& j : pose2d.joints) {
        Vec2 p = map_to_image(j, cfg.stride());
        lo_x = std::min(lo_x, p.x);
        hi_x = std::max(hi_x, p.x);
        lo_y = std::min(lo_y, p.y);
        hi_y = std::max(hi_y, p.y);
    }
    BBox box;
    box.cx = (lo_x + hi_x) / 2.0;
    box.cy = (lo_y + hi_y) / 2.0;
    box.side = std::max({8.0, (hi_x - lo_x) * margin, (hi_y - lo_y) * margin});
    return box;
}

void save_dataset(const std::string& path, const std::vector<SynthSample>& samples,
                  const SynthConfig& cfg) {
    cfg.validate();
    std::string out;
    put<uint32_t>(out, kDatasetMagic);
    put<uint32_t>(out, kDatasetVersion);
    put<uint32_t>(out, static_cast<uint32_t>(samples.size()));
    put<uint16_t>(out, static_cast<uint16_t>(cfg.image_size));
    put<uint16_t>(out, static_cast<uint16_t>(cfg.map_size));
    put<double>(out, cfg.cam.scale);
    put<double>(out, cfg.cam.pp.x);
    put<double>(out, cfg.cam.pp.y);
    put<double>(out, cfg.d);
    for (const SynthSample& s : samples) {
        ag::check(s.image.w == cfg.image_size && s.image.h == cfg.image_size,
                  "save_dataset: sample image size differs from config");
        out.append(reinterpret_cast<const char*>(s.image.rgb.data()), s.image.rgb.size());
        for (const Vec3& j : s.pose3d.joints) {
            put<float>(out, f32(j.x));
            put<float>(out, f32(j.y));
            put<float>(out, f32(j.z));
        }
        for (const Vec2& j : s.pose2d.joints) {
            put<float>(out, f32(j.x));
            put<float>(out, f32(j.y));
        }
        put<uint8_t>(out, s.has_3d ? 1 : 0);
        put<uint16_t>(out, s.visibility);
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    ag::check(f.good(), "save_dataset: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    ag::check(f.good(), "save_dataset: write failed for " + path);
}

std::vector<SynthSample> load_dataset(const std::string& path, SynthConfig* cfg_out) {
    std::ifstream f(path, std::ios::binary);
    ag::check(f.good(), "load_dataset: cannot open " + path);
    std::string in((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    size_t off = 0;
    ag::check(take<uint32_t>(in, off, "magic") == kDatasetMagic,
              "load_dataset: bad magic in " + path);
    uint32_t version = take<uint32_t>(in, off, "version");
    ag::check(version == kDatasetVersion,
              "load_dataset: unsupported version " + std::to_string(version));
    uint32_t count = take<uint32_t>(in, off, "count");
    SynthConfig cfg;
    cfg.image_size = take<uint16_t>(in, off, "image_size");
    cfg.map_size = take<uint16_t>(in, off, "map_size");
    cfg.cam.scale = take<double>(in, off, "camera scale");
    cfg.cam.pp.x = take<double>(in, off, "principal point x");
    cfg.cam.pp.y = take<double>(in, off, "principal point y");
    cfg.d = take<double>(in, off, "band width");
    cfg.validate();

    const auto& topo = canonical_topology();
    std::vector<SynthSample> out;
    out.reserve(count);
    size_t img_bytes = static_cast<size_t>(cfg.image_size) * cfg.image_size * 3;
    for (uint32_t k = 0; k < count; ++k) {
        SynthSample s;
        ag::check(off + img_bytes <= in.size(),
                  "dataset truncated at byte " + std::to_string(off) + " reading image " +
                      std::to_string(k));
        s.image = Image(cfg.image_size, cfg.image_size);
        std::memcpy(s.image.rgb.data(), in.data() + off, img_bytes);
        off += img_bytes;
        for (auto& j : s.pose3d.joints) {
            j.x = take<float>(in, off, "pose3d");
            j.y = take<float>(in, off, "pose3d");
            j.z = take<float>(in, off, "pose3d");
        }
        for (auto& j : s.pose2d.joints) {
            j.x = take<float>(in, off, "pose2d");
            j.y = take<float>(in, off, "pose2d");
        }
        s.has_3d = take<uint8_t>(in, off, "flags") != 0;
        s.visibility = take<uint16_t>(in, off, "visibility");
        OrientationSet orients = orientations_from_pose(s.pose3d, topo).orients;
        s.maps = encode_maps(s.pose2d, orients, topo, cfg.d, {cfg.map_size, cfg.map_size});
        out.push_back(std::move(s));
    }
    ag::check(off == in.size(), "load_dataset: " + std::to_string(in.size() - off) +
                                    " trailing bytes in " + path);
    if (cfg_out != nullptr) *cfg_out = cfg;
    return out;
}

}  // namespace opose
