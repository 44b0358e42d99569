#pragma once

// 17-joint human skeleton as a rooted tree of 16 limbs, plus the two maps
// between joint positions and per-limb unit orientations:
//   decompose: v_i = (child - parent) / |child - parent|
//   integrate: child = parent + L_i * v_i, root pinned to the origin.

#include <array>
#include <cstdint>
#include <string>
#include <utility>

#include "opose/geometry.hpp"

namespace opose {

constexpr int kJointCount = 17;
constexpr int kLimbCount = 16;

struct LimbTopology {
    std::array<std::string, kJointCount> joints;
    // (parent joint, child joint); every limb's parent is reached by an
    // earlier limb or is the root, so one forward pass integrates the tree.
    std::array<std::pair<int, int>, kLimbCount> limbs;
    int root = 0;

    // Throws std::invalid_argument unless this is a tree covering all joints
    // in parent-before-child order.
    void validate() const;
};

// Pelvis-rooted tree: legs, spine/head, then arms off the thorax.
const LimbTopology& canonical_topology();

struct LimbLengths {
    std::array<double, kLimbCount> mm{};

    void validate() const;  // strictly positive, finite
};

// Adult-proportioned defaults, millimetres.
LimbLengths default_limb_lengths();

struct Pose3D {
    std::array<Vec3, kJointCount> joints{};
};

struct Pose2D {
    std::array<Vec2, kJointCount> joints{};
};

struct OrientationSet {
    // Unit vectors parent->child per limb; the all-zero vector is the
    // "unknown" sentinel.
    std::array<Vec3, kLimbCount> v{};
};

// Forward kinematics from the root (held at the origin). A zero orientation
// collapses the child onto its parent.
Pose3D fk_integrate(const OrientationSet& orients, const LimbLengths& lengths,
                    const LimbTopology& topo);

struct PoseDecomposition {
    OrientationSet orients;
    LimbLengths lengths;          // observed segment lengths, 0 where degenerate
    uint16_t degenerate_mask = 0; // bit i set when limb i was shorter than eps
};

// Inverse of fk_integrate up to limb lengths. Limbs shorter than eps get the
// zero sentinel instead of an unstable direction.
PoseDecomposition orientations_from_pose(const Pose3D& pose, const LimbTopology& topo,
                                         double eps = 1e-6);

Pose3D root_centered(const Pose3D& pose, const LimbTopology& topo);

// Left/right mirror tables for augmentation: joint i maps to
// flipped_joint_index()[i], limb i to flipped_limb_index()[i].
const std::array<int, kJointCount>& flipped_joint_index();
const std::array<int, kLimbCount>& flipped_limb_index();

// Mirror a pose about the x axis through the root (joints swapped in place).
Pose3D flip_pose(const Pose3D& pose, const LimbTopology& topo);

// JSON round-trip so lengths and topology stay overridable per experiment.
void save_skeleton_config(const std::string& path, const LimbTopology& topo,
                          const LimbLengths& lengths);
std::pair<LimbTopology, LimbLengths> load_skeleton_config(const std::string& path);

}  // namespace opose
