#include <cmath>
#include <cstdio>
#include <filesystem>

#include "doctest.h"
#include "opose/rng.hpp"
#include "opose/skeleton.hpp"

using namespace opose;

namespace {

Vec3 random_unit(Rng& rng) {
    // Uniform on the sphere by normalizing a Gaussian triple.
    Vec3 v{rng.gaussian(), rng.gaussian(), rng.gaussian()};
    return v.normalized();
}

OrientationSet random_orients(Rng& rng) {
    OrientationSet o;
    for (auto& v : o.v) v = random_unit(rng);
    return o;
}

// Independent check: each joint is the sum of length-scaled orientations
// along the root-to-joint path, found by walking the tree edges directly.
Vec3 path_sum(int joint, const OrientationSet& o, const LimbLengths& l, const LimbTopology& topo) {
    if (joint == topo.root) return Vec3{};
    for (int i = 0; i < kLimbCount; ++i)
        if (topo.limbs[i].second == joint)
            return path_sum(topo.limbs[i].first, o, l, topo) + o.v[i] * l.mm[i];
    return Vec3{};  // unreachable for a valid topology
}

}  // namespace

TEST_SUITE("skeleton") {

TEST_CASE("canonical topology is a 17-joint, 16-limb tree in integration order") {
    const LimbTopology& t = canonical_topology();
    CHECK_NOTHROW(t.validate());
    CHECK(t.root == 0);
    CHECK(t.joints[t.root] == "pelvis");
    // Every parent must appear as a child of an earlier limb, or be the root.
    for (int i = 0; i < kLimbCount; ++i) {
        int p = t.limbs[i].first;
        bool ok = p == t.root;
        for (int j = 0; j < i && !ok; ++j) ok = t.limbs[j].second == p;
        CHECK(ok);
    }
}

TEST_CASE("topology validation rejects broken trees") {
    LimbTopology t = canonical_topology();
    t.limbs[2] = {3, 3};  // self-loop via duplicate child
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = canonical_topology();
    t.limbs[0] = {1, 0};  // root as child
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
    t = canonical_topology();
    std::swap(t.limbs[1], t.limbs[2]);  // knee integrated before hip
    CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("default lengths validate and stay positive") {
    LimbLengths l = default_limb_lengths();
    CHECK_NOTHROW(l.validate());
    l.mm[5] = 0.0;
    CHECK_THROWS_AS(l.validate(), std::invalid_argument);
    l.mm[5] = -3.0;
    CHECK_THROWS_AS(l.validate(), std::invalid_argument);
}

TEST_CASE("fk pins the root and follows a straight chain to the head") {
    // All orientations along +z: the head ends up at depth
    // (pelvis->spine) + (spine->thorax) + (thorax->neck) + (neck->head).
    OrientationSet o;
    for (auto& v : o.v) v = Vec3{0, 0, 1};
    LimbLengths l;
    l.mm.fill(100.0);
    Pose3D pose = fk_integrate(o, l, canonical_topology());
    CHECK(pose.joints[0].x == 0.0);
    CHECK(pose.joints[0].y == 0.0);
    CHECK(pose.joints[0].z == 0.0);
    CHECK(pose.joints[10].z == doctest::Approx(400.0));
    CHECK(pose.joints[10].x == 0.0);
    // Ankles hang three limbs deep.
    CHECK(pose.joints[3].z == doctest::Approx(300.0));
    CHECK(pose.joints[6].z == doctest::Approx(300.0));
}

TEST_CASE("a zero orientation collapses the child onto its parent") {
    Rng rng(5);
    OrientationSet o = random_orients(rng);
    o.v[1] = Vec3{};  // r_hip -> r_knee unknown
    LimbLengths l = default_limb_lengths();
    Pose3D pose = fk_integrate(o, l, canonical_topology());
    CHECK(pose.joints[2].x == pose.joints[1].x);
    CHECK(pose.joints[2].y == pose.joints[1].y);
    CHECK(pose.joints[2].z == pose.joints[1].z);
}

TEST_CASE("fk matches the independent path-sum oracle") {
    Rng rng(99);
    const LimbTopology& topo = canonical_topology();
    LimbLengths l = default_limb_lengths();
    for (int trial = 0; trial < 200; ++trial) {
        OrientationSet o = random_orients(rng);
        Pose3D pose = fk_integrate(o, l, topo);
        for (int j = 0; j < kJointCount; ++j) {
            Vec3 expect = path_sum(j, o, l, topo);
            CHECK((pose.joints[j] - expect).norm() < 1e-9);
        }
    }
}

TEST_CASE("decompose then integrate reproduces a root-centered pose") {
    Rng rng(123);
    const LimbTopology& topo = canonical_topology();
    LimbLengths l = default_limb_lengths();
    for (int trial = 0; trial < 50; ++trial) {
        Pose3D pose = fk_integrate(random_orients(rng), l, topo);
        PoseDecomposition d = orientations_from_pose(pose, topo);
        CHECK(d.degenerate_mask == 0);
        for (int i = 0; i < kLimbCount; ++i) {
            CHECK(d.lengths.mm[i] == doctest::Approx(l.mm[i]).epsilon(1e-9));
            CHECK(std::abs(d.orients.v[i].norm() - 1.0) < 1e-12);
        }
        Pose3D back = fk_integrate(d.orients, d.lengths, topo);
        for (int j = 0; j < kJointCount; ++j) CHECK((back.joints[j] - pose.joints[j]).norm() < 1e-9);
    }
}

TEST_CASE("degenerate limbs get the zero sentinel and a mask bit") {
    Pose3D pose;
    Rng rng(17);
    pose = fk_integrate(random_orients(rng), default_limb_lengths(), canonical_topology());
    pose.joints[2] = pose.joints[1];  // collapse r_knee onto r_hip: limb 1 degenerate
    PoseDecomposition d = orientations_from_pose(pose, canonical_topology());
    CHECK((d.degenerate_mask & (1u << 1)) != 0);
    CHECK(d.orients.v[1].norm() == 0.0);
    CHECK(d.lengths.mm[1] == 0.0);
    CHECK((d.degenerate_mask & ~(1u << 2 | 1u << 1)) == 0);  // limb 2 direction survives
}

TEST_CASE("rotating all orientations rotates every joint rigidly") {
    Rng rng(31);
    const LimbTopology& topo = canonical_topology();
    LimbLengths l = default_limb_lengths();
    for (int trial = 0; trial < 20; ++trial) {
        OrientationSet o = random_orients(rng);
        Mat3 R = Mat3::rotation(random_unit(rng), rng.uniform(-3.0, 3.0));
        OrientationSet ro;
        for (int i = 0; i < kLimbCount; ++i) ro.v[i] = R.apply(o.v[i]);
        Pose3D p1 = fk_integrate(o, l, topo);
        Pose3D p2 = fk_integrate(ro, l, topo);
        for (int j = 0; j < kJointCount; ++j)
            CHECK((p2.joints[j] - R.apply(p1.joints[j])).norm() < 1e-9);
    }
}

TEST_CASE("perturbing one limb moves descendants by at most its length times the change") {
    Rng rng(77);
    const LimbTopology& topo = canonical_topology();
    LimbLengths l = default_limb_lengths();
    for (int trial = 0; trial < 20; ++trial) {
        OrientationSet o = random_orients(rng);
        int limb = rng.uniform_int(0, kLimbCount - 1);
        OrientationSet o2 = o;
        Vec3 delta = random_unit(rng) * rng.uniform(0.0, 0.3);
        o2.v[limb] = o.v[limb] + delta;
        Pose3D p1 = fk_integrate(o, l, topo);
        Pose3D p2 = fk_integrate(o2, l, topo);
        double bound = l.mm[limb] * delta.norm() + 1e-9;
        for (int j = 0; j < kJointCount; ++j) CHECK((p2.joints[j] - p1.joints[j]).norm() <= bound);
    }
}

TEST_CASE("flip tables are involutions pairing left and right") {
    const auto& jmap = flipped_joint_index();
    const auto& lmap = flipped_limb_index();
    for (int j = 0; j < kJointCount; ++j) CHECK(jmap[jmap[j]] == j);
    for (int i = 0; i < kLimbCount; ++i) CHECK(lmap[lmap[i]] == i);
    const LimbTopology& topo = canonical_topology();
    // Mirrored joints carry mirrored names.
    for (int j = 0; j < kJointCount; ++j) {
        std::string a = topo.joints[j], b = topo.joints[jmap[j]];
        if (a.rfind("l_", 0) == 0) CHECK(b == "r_" + a.substr(2));
        else if (a.rfind("r_", 0) == 0) CHECK(b == "l_" + a.substr(2));
        else CHECK(a == b);
    }
}

TEST_CASE("flip_pose mirrors x, keeps limb lengths, and double flip is identity") {
    Rng rng(41);
    const LimbTopology& topo = canonical_topology();
    Pose3D pose = fk_integrate(random_orients(rng), default_limb_lengths(), topo);
    Pose3D flipped = flip_pose(pose, topo);
    PoseDecomposition d0 = orientations_from_pose(pose, topo);
    PoseDecomposition d1 = orientations_from_pose(flipped, topo);
    for (int i = 0; i < kLimbCount; ++i)
        CHECK(d1.lengths.mm[i] == doctest::Approx(d0.lengths.mm[flipped_limb_index()[i]]).epsilon(1e-9));
    Pose3D twice = flip_pose(flipped, topo);
    for (int j = 0; j < kJointCount; ++j) CHECK((twice.joints[j] - pose.joints[j]).norm() < 1e-9);
}

TEST_CASE("skeleton config files round-trip") {
    std::string path = (std::filesystem::temp_directory_path() / "skeleton_cfg.json").string();
    save_skeleton_config(path, canonical_topology(), default_limb_lengths());
    auto [topo, lengths] = load_skeleton_config(path);
    CHECK(topo.joints == canonical_topology().joints);
    CHECK(topo.limbs == canonical_topology().limbs);
    for (int i = 0; i < kLimbCount; ++i) CHECK(lengths.mm[i] == default_limb_lengths().mm[i]);
    std::remove(path.c_str());
    CHECK_THROWS_AS((void)load_skeleton_config(path), std::runtime_error);
}

}  // TEST_SUITE
