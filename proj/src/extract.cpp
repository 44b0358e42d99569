#include "opose/extract.hpp"

namespace opose {

namespace {

DecodedBatch<double> decode_untracked(const MapSet& maps, const LimbLengths& lengths,
                                      const LimbTopology& topo) {
    std::vector<const MapSet*> batch{&maps};
    auto conf = ag::constant(conf_planes<double>(batch));
    auto o3d = ag::constant(orient3d_planes<double>(batch));
    return decode_pose_t(conf, o3d, lengths, topo);
}

}  // namespace

Vec3 vote(const MapSet& maps, int limb) {
    ag::check(limb >= 0 && limb < kLimbCount, "vote: limb index out of range");
    std::vector<const MapSet*> batch{&maps};
    auto conf = ag::constant(conf_planes<double>(batch));
    auto o3d = ag::constant(orient3d_planes<double>(batch));
    auto v = vote_t(conf, o3d);
    const double* p = v.data() + limb * 3;
    return {p[0], p[1], p[2]};
}

Vec3 normalize_orientation(Vec3 raw, double eps) {
    auto out = normalize_rows_t(ag::constant<double>({1, 1, 3}, {raw.x, raw.y, raw.z}), eps);
    return {out.data()[0], out.data()[1], out.data()[2]};
}

double confidence_score(const MapSet& maps, int limb) {
    ag::check(limb >= 0 && limb < kLimbCount, "confidence_score: limb index out of range");
    std::vector<const MapSet*> batch{&maps};
    auto conf = ag::constant(conf_planes<double>(batch));
    auto s = confidence_scores_t(conf, kOrientEps);
    return s.data()[limb];
}

InitialEstimate decode_pose(const MapSet& maps, const LimbLengths& lengths,
                            const LimbTopology& topo) {
    DecodedBatch<double> d = decode_untracked(maps, lengths, topo);
    InitialEstimate est;
    for (int i = 0; i < kLimbCount; ++i) {
        const double* r = d.raw.data() + i * 3;
        est.raw_votes[i] = {r[0], r[1], r[2]};
        const double* o = d.orients.data() + i * 3;
        est.orients.v[i] = {o[0], o[1], o[2]};
        est.scores[i] = d.scores.data()[i];
    }
    for (int j = 0; j < kJointCount; ++j) {
        const double* p = d.pose.data() + j * 3;
        est.pose.joints[j] = {p[0], p[1], p[2]};
    }
    return est;
}

}  // namespace opose
