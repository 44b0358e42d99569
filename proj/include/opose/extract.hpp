#pragma once

// From maps to a 3D pose, differentiably.
//
// Each limb's 3D orientation is read out by soft voting: the average over
// all map pixels of confidence times the 3D orientation channels,
//   v_i = (1 / w'h') * sum_p conf_i(p) * orient3d_i(p),
// then normalized to the unit sphere, then integrated through the skeleton
// with fixed limb lengths. A per-limb confidence score
//   s_i = sum_p conf^2 / (sum_p conf + eps)
// summarizes how much support the vote had (1 for a clean full region, 0
// for an empty one).
//
// The *_t functions build the computation with engine ops, so the same code
// path serves evaluation (untracked) and training (tracked); the plain
// functions below wrap them for single MapSets at double precision.

#include <array>
#include <vector>

#include "ag/tensor.hpp"
#include "opose/maps.hpp"
#include "opose/skeleton.hpp"

namespace opose {

constexpr double kOrientEps = 1e-6;

// conf [N,16,H,W], orient3d [N,48,H,W] limb-major -> raw votes [N,16,3].
template <typename T>
ag::Tensor<T> vote_t(const ag::Tensor<T>& conf, const ag::Tensor<T>& orient3d) {
    const ag::Shape& cs = conf.shape();
    ag::check(cs.size() == 4 && cs[1] == kLimbCount,
              "vote_t: conf must be [N,16,H,W], got " + ag::shape_str(cs));
    int64_t n = cs[0], h = cs[2], w = cs[3];
    ag::check(orient3d.shape() == ag::Shape{n, 3 * kLimbCount, h, w},
              "vote_t: orient3d must be [N,48,H,W], got " + ag::shape_str(orient3d.shape()));
    auto c5 = ag::reshape(conf, {n, kLimbCount, 1, h, w});
    auto cb = ag::broadcast_to(c5, {n, kLimbCount, 3, h, w});
    auto o5 = ag::reshape(orient3d, {n, kLimbCount, 3, h, w});
    return ag::mean(ag::mul(cb, o5), {3, 4});
}

// Rows of a [..., 3] tensor to unit length; rows with squared norm <= eps^2
// collapse to zero with exactly zero gradient.
template <typename T>
ag::Tensor<T> normalize_rows_t(const ag::Tensor<T>& raw, T eps) {
    const ag::Shape& s = raw.shape();
    ag::check(!s.empty() && s.back() == 3, "normalize_rows_t: last axis must be 3");
    int last = static_cast<int>(s.size()) - 1;
    auto ss = ag::sum(ag::square(raw), {last}, true);
    auto safe = ag::clamp_min(ss, eps * eps);
    auto norm = ag::sqrt_(safe);
    // Constant 0/1 gate evaluated on the forward values.
    ag::Arr<T> gate(ss.shape());
    for (int64_t i = 0; i < gate.numel(); ++i) gate.data[i] = ss.data()[i] > eps * eps ? T(1) : T(0);
    auto inv = ag::div(ag::constant(std::move(gate)), norm);
    return ag::mul(raw, ag::broadcast_to(inv, s));
}

// conf [N,16,H,W] -> scores [N,16] in [0,1] for maps with values in [0,1].
template <typename T>
ag::Tensor<T> confidence_scores_t(const ag::Tensor<T>& conf, T eps) {
    const ag::Shape& cs = conf.shape();
    ag::check(cs.size() == 4 && cs[1] == kLimbCount,
              "confidence_scores_t: conf must be [N,16,H,W], got " + ag::shape_str(cs));
    auto num = ag::sum(ag::square(conf), {2, 3});
    auto den = ag::add_scalar(ag::sum(conf, {2, 3}), eps);
    return ag::div(num, den);
}

// orients [N,16,3] -> joints [N,17,3], root at the origin, millimetres.
template <typename T>
ag::Tensor<T> fk_integrate_t(const ag::Tensor<T>& orients, const LimbLengths& lengths,
                             const LimbTopology& topo) {
    const ag::Shape& s = orients.shape();
    ag::check(s.size() == 3 && s[1] == kLimbCount && s[2] == 3,
              "fk_integrate_t: orients must be [N,16,3], got " + ag::shape_str(s));
    lengths.validate();
    int64_t n = s[0];
    std::vector<ag::Tensor<T>> joints(kJointCount);
    joints[topo.root] = ag::zeros<T>({n, 1, 3});
    for (int i = 0; i < kLimbCount; ++i) {
        auto [pj, cj] = topo.limbs[i];
        auto step = ag::scale(ag::slice(orients, 1, i, 1), static_cast<T>(lengths.mm[i]));
        joints[cj] = ag::add(joints[pj], step);
    }
    return ag::concat(joints, 1);
}

template <typename T>
struct DecodedBatch {
    ag::Tensor<T> raw;      // [N,16,3] pre-normalization votes
    ag::Tensor<T> orients;  // [N,16,3] unit or zero rows
    ag::Tensor<T> scores;   // [N,16]
    ag::Tensor<T> pose;     // [N,17,3]
};

template <typename T>
DecodedBatch<T> decode_pose_t(const ag::Tensor<T>& conf, const ag::Tensor<T>& orient3d,
                              const LimbLengths& lengths, const LimbTopology& topo,
                              T eps = static_cast<T>(kOrientEps)) {
    DecodedBatch<T> d;
    d.raw = vote_t(conf, orient3d);
    d.orients = normalize_rows_t(d.raw, eps);
    d.scores = confidence_scores_t(conf, eps);
    d.pose = fk_integrate_t(d.orients, lengths, topo);
    return d;
}

// ---- batching helpers: MapSets to engine buffers ----

template <typename T>
ag::Arr<T> conf_planes(const std::vector<const MapSet*>& batch) {
    ag::check(!batch.empty(), "conf_planes: empty batch");
    int64_t h = batch[0]->h, w = batch[0]->w;
    ag::Arr<T> out({static_cast<int64_t>(batch.size()), kLimbCount, h, w});
    T* dst = out.ptr();
    for (const MapSet* m : batch) {
        ag::check(m->h == h && m->w == w, "conf_planes: mixed map sizes in batch");
        for (int i = 0; i < kLimbCount; ++i) {
            const float* src = m->plane(i, 0);
            for (int64_t p = 0; p < h * w; ++p) *dst++ = static_cast<T>(src[p]);
        }
    }
    return out;
}

template <typename T>
ag::Arr<T> orient2d_planes(const std::vector<const MapSet*>& batch) {
    ag::check(!batch.empty(), "orient2d_planes: empty batch");
    int64_t h = batch[0]->h, w = batch[0]->w;
    ag::Arr<T> out({static_cast<int64_t>(batch.size()), 2 * kLimbCount, h, w});
    T* dst = out.ptr();
    for (const MapSet* m : batch)
        for (int i = 0; i < kLimbCount; ++i)
            for (int c = 1; c <= 2; ++c) {
                const float* src = m->plane(i, c);
                for (int64_t p = 0; p < h * w; ++p) *dst++ = static_cast<T>(src[p]);
            }
    return out;
}

template <typename T>
ag::Arr<T> orient3d_planes(const std::vector<const MapSet*>& batch) {
    ag::check(!batch.empty(), "orient3d_planes: empty batch");
    int64_t h = batch[0]->h, w = batch[0]->w;
    ag::Arr<T> out({static_cast<int64_t>(batch.size()), 3 * kLimbCount, h, w});
    T* dst = out.ptr();
    for (const MapSet* m : batch)
        for (int i = 0; i < kLimbCount; ++i)
            for (int c = 3; c <= 5; ++c) {
                const float* src = m->plane(i, c);
                for (int64_t p = 0; p < h * w; ++p) *dst++ = static_cast<T>(src[p]);
            }
    return out;
}

// ---- plain single-map interface (double precision, untracked) ----

struct InitialEstimate {
    std::array<Vec3, kLimbCount> raw_votes{};
    OrientationSet orients;
    std::array<double, kLimbCount> scores{};
    Pose3D pose;
};

Vec3 vote(const MapSet& maps, int limb);
Vec3 normalize_orientation(Vec3 raw, double eps = kOrientEps);
double confidence_score(const MapSet& maps, int limb);
InitialEstimate decode_pose(const MapSet& maps, const LimbLengths& lengths,
                            const LimbTopology& topo);

}  // namespace opose
