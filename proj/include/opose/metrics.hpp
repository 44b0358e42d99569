#pragma once

// Pose error metrics, millimetres throughout. Poses are compared exactly as
// given; when a protocol wants root-relative errors the caller centers both
// poses first (root_centered in skeleton.hpp).

#include <array>
#include <cstdint>
#include <vector>

#include "opose/geometry.hpp"
#include "opose/skeleton.hpp"

namespace opose {

// Mean Euclidean joint distance.
double mpjpe(const Pose3D& pred, const Pose3D& gt);

struct Similarity {
    double scale = 1.0;
    Mat3 rot;  // proper rotation, det +1
    Vec3 t;

    Vec3 apply(Vec3 p) const { return rot.apply(p) * scale + t; }
};

// Least-squares similarity transform mapping `from` onto `to` (closed-form,
// reflection-free). Degenerate clouds fall back to plain translation.
Similarity similarity_align(const std::vector<Vec3>& from, const std::vector<Vec3>& to);

// mpjpe after aligning the prediction onto the ground truth.
double pa_mpjpe(const Pose3D& pred, const Pose3D& gt);

// Fraction of joints with error strictly below the threshold.
double pck(const Pose3D& pred, const Pose3D& gt, double thresh_mm = 150.0);

// Mean PCK over `steps` evenly spaced thresholds from 0 to max_mm inclusive.
double auc_pck(const Pose3D& pred, const Pose3D& gt, double max_mm = 150.0, int steps = 31);

struct PoseMetrics {
    double mpjpe = 0.0;
    double pa_mpjpe = 0.0;
    double pck150 = 0.0;
    double auc = 0.0;
};

// PoseMetrics plus the mean error of each joint.
struct EvalReport {
    PoseMetrics means;
    std::array<double, kJointCount> per_joint{};  // mm
};

// Running per-pose averages of all four metrics.
class MetricAccumulator {
public:
    void add(const Pose3D& pred, const Pose3D& gt);
    int64_t count() const { return n_; }
    PoseMetrics summary() const;  // throws when empty
    EvalReport report() const;    // throws when empty

private:
    double mpjpe_ = 0.0, pa_ = 0.0, pck_ = 0.0, auc_ = 0.0;
    std::array<double, kJointCount> pj_{};
    int64_t n_ = 0;
};

}  // namespace opose
