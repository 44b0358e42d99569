#include "opose/skeleton.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "json.hpp"

namespace opose {

void LimbTopology::validate() const {
    if (root < 0 || root >= kJointCount) throw std::invalid_argument("topology: root out of range");
    std::array<bool, kJointCount> reached{};
    reached[root] = true;
    std::array<int, kJointCount> child_count{};
    for (int i = 0; i < kLimbCount; ++i) {
        auto [p, c] = limbs[i];
        if (p < 0 || p >= kJointCount || c < 0 || c >= kJointCount)
            throw std::invalid_argument("topology: limb " + std::to_string(i) + " joint out of range");
        if (c == root) throw std::invalid_argument("topology: root appears as a child");
        if (!reached[p])
            throw std::invalid_argument("topology: limb " + std::to_string(i) +
                                        " parent visited after child (not in tree order)");
        if (++child_count[c] > 1)
            throw std::invalid_argument("topology: joint " + std::to_string(c) + " has two parents");
        reached[c] = true;
    }
    for (int j = 0; j < kJointCount; ++j)
        if (!reached[j]) throw std::invalid_argument("topology: joint " + std::to_string(j) + " unreachable");
}

const LimbTopology& canonical_topology() {
    static const LimbTopology topo = [] {
        LimbTopology t;
        t.joints = {"pelvis",     "r_hip",   "r_knee",    "r_ankle", "l_hip",     "l_knee",
                    "l_ankle",    "spine",   "thorax",    "neck",    "head",      "l_shoulder",
                    "l_elbow",    "l_wrist", "r_shoulder", "r_elbow", "r_wrist"};
        t.limbs = {{{0, 1},
                    {1, 2},
                    {2, 3},
                    {0, 4},
                    {4, 5},
                    {5, 6},
                    {0, 7},
                    {7, 8},
                    {8, 9},
                    {9, 10},
                    {8, 11},
                    {11, 12},
                    {12, 13},
                    {8, 14},
                    {14, 15},
                    {15, 16}}};
        t.root = 0;
        t.validate();
        return t;
    }();
    return topo;
}

void LimbLengths::validate() const {
    for (int i = 0; i < kLimbCount; ++i)
        if (!(mm[i] > 0.0) || !std::isfinite(mm[i]))
            throw std::invalid_argument("limb lengths: entry " + std::to_string(i) +
                                        " must be positive and finite");
}

LimbLengths default_limb_lengths() {
    LimbLengths l;
    l.mm = {120.0,  // pelvis -> r_hip
            450.0,  // r_hip -> r_knee
            440.0,  // r_knee -> r_ankle
            120.0,  // pelvis -> l_hip
            450.0,  // l_hip -> l_knee
            440.0,  // l_knee -> l_ankle
            230.0,  // pelvis -> spine
            250.0,  // spine -> thorax
            110.0,  // thorax -> neck
            120.0,  // neck -> head
            170.0,  // thorax -> l_shoulder
            280.0,  // l_shoulder -> l_elbow
            250.0,  // l_elbow -> l_wrist
            170.0,  // thorax -> r_shoulder
            280.0,  // r_shoulder -> r_elbow
            250.0}; // r_elbow -> r_wrist
    return l;
}

Pose3D fk_integrate(const OrientationSet& orients, const LimbLengths& lengths,
                    const LimbTopology& topo) {
    lengths.validate();
    Pose3D pose;
    pose.joints[topo.root] = Vec3{};
    for (int i = 0; i < kLimbCount; ++i) {
        auto [p, c] = topo.limbs[i];
        pose.joints[c] = pose.joints[p] + orients.v[i] * lengths.mm[i];
    }
    return pose;
}

PoseDecomposition orientations_from_pose(const Pose3D& pose, const LimbTopology& topo, double eps) {
    PoseDecomposition d;
    for (int i = 0; i < kLimbCount; ++i) {
        auto [p, c] = topo.limbs[i];
        Vec3 seg = pose.joints[c] - pose.joints[p];
        double len = seg.norm();
        if (len < eps) {
            d.orients.v[i] = Vec3{};
            d.lengths.mm[i] = 0.0;
            d.degenerate_mask |= static_cast<uint16_t>(1u << i);
        } else {
            d.orients.v[i] = seg * (1.0 / len);
            d.lengths.mm[i] = len;
        }
    }
    return d;
}

Pose3D root_centered(const Pose3D& pose, const LimbTopology& topo) {
    Pose3D out = pose;
    Vec3 r = pose.joints[topo.root];
    for (auto& j : out.joints) j = j - r;
    return out;
}

const std::array<int, kJointCount>& flipped_joint_index() {
    static const std::array<int, kJointCount> map = {0, 4,  5,  6,  1,  2,  3,  7, 8,
                                                     9, 10, 14, 15, 16, 11, 12, 13};
    return map;
}

const std::array<int, kLimbCount>& flipped_limb_index() {
    static const std::array<int, kLimbCount> map = {3, 4, 5, 0,  1,  2,  6,  7,
                                                    8, 9, 13, 14, 15, 10, 11, 12};
    return map;
}

Pose3D flip_pose(const Pose3D& pose, const LimbTopology& topo) {
    Vec3 r = pose.joints[topo.root];
    Pose3D out;
    const auto& jmap = flipped_joint_index();
    for (int j = 0; j < kJointCount; ++j) {
        Vec3 src = pose.joints[jmap[j]];
        out.joints[j] = Vec3{r.x - (src.x - r.x), src.y, src.z};
    }
    return out;
}

void save_skeleton_config(const std::string& path, const LimbTopology& topo,
                          const LimbLengths& lengths) {
    nlohmann::json j;
    j["joints"] = topo.joints;
    auto& jl = j["limbs"];
    for (int i = 0; i < kLimbCount; ++i)
        jl.push_back({{"parent", topo.limbs[i].first},
                      {"child", topo.limbs[i].second},
                      {"length_mm", lengths.mm[i]}});
    j["root"] = topo.root;
    std::ofstream f(path);
    if (!f.good()) throw std::runtime_error("save_skeleton_config: cannot open " + path);
    f << j.dump(2) << '\n';
}

std::pair<LimbTopology, LimbLengths> load_skeleton_config(const std::string& path) {
    std::ifstream f(path);
    if (!f.good()) throw std::runtime_error("load_skeleton_config: cannot open " + path);
    nlohmann::json j = nlohmann::json::parse(f);
    LimbTopology topo;
    LimbLengths lengths;
    auto joints = j.at("joints");
    if (joints.size() != kJointCount)
        throw std::runtime_error("load_skeleton_config: expected " + std::to_string(kJointCount) +
                                 " joints, got " + std::to_string(joints.size()));
    for (int i = 0; i < kJointCount; ++i) topo.joints[i] = joints[i].get<std::string>();
    auto limbs = j.at("limbs");
    if (limbs.size() != kLimbCount)
        throw std::runtime_error("load_skeleton_config: expected " + std::to_string(kLimbCount) +
                                 " limbs, got " + std::to_string(limbs.size()));
    for (int i = 0; i < kLimbCount; ++i) {
        topo.limbs[i] = {limbs[i].at("parent").get<int>(), limbs[i].at("child").get<int>()};
        lengths.mm[i] = limbs[i].at("length_mm").get<double>();
    }
    topo.root = j.at("root").get<int>();
    topo.validate();
    lengths.validate();
    return {topo, lengths};
}

}  // namespace opose
