#include "opose/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "ag/array.hpp"

namespace opose {

double mpjpe(const Pose3D& pred, const Pose3D& gt) {
    double s = 0.0;
    for (int j = 0; j < kJointCount; ++j) s += (pred.joints[j] - gt.joints[j]).norm();
    return s / kJointCount;
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric 3x3. Fills eigenvalues in
// descending order and the matching unit eigenvectors as columns of v.
void jacobi_eig3(Mat3 a, double eval[3], Mat3& v) {
    v = Mat3{};
    for (int sweep = 0; sweep < 50; ++sweep) {
        double off = std::abs(a.m[0][1]) + std::abs(a.m[0][2]) + std::abs(a.m[1][2]);
        if (off < 1e-15 * (1.0 + std::abs(a.m[0][0]) + std::abs(a.m[1][1]) + std::abs(a.m[2][2])))
            break;
        for (int p = 0; p < 2; ++p)
            for (int q = p + 1; q < 3; ++q) {
                if (a.m[p][q] == 0.0) continue;
                double theta = (a.m[q][q] - a.m[p][p]) / (2.0 * a.m[p][q]);
                double t = (theta >= 0 ? 1.0 : -1.0) /
                           (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
                Mat3 r;  // Givens rotation in the (p,q) plane
                r.m[p][p] = c;
                r.m[q][q] = c;
                r.m[p][q] = s;
                r.m[q][p] = -s;
                a = r.transposed().mul(a).mul(r);
                a.m[p][q] = a.m[q][p] = 0.0;  // kill rounding residue
                v = v.mul(r);
            }
    }
    int order[3] = {0, 1, 2};
    std::sort(order, order + 3, [&](int i, int j) { return a.m[i][i] > a.m[j][j]; });
    Mat3 vs;
    for (int k = 0; k < 3; ++k) {
        eval[k] = a.m[order[k]][order[k]];
        for (int r = 0; r < 3; ++r) vs.m[r][k] = v.m[r][order[k]];
    }
    v = vs;
}

Vec3 col(const Mat3& m, int j) { return {m.m[0][j], m.m[1][j], m.m[2][j]}; }

void set_col(Mat3& m, int j, Vec3 c) {
    m.m[0][j] = c.x;
    m.m[1][j] = c.y;
    m.m[2][j] = c.z;
}

// Any unit vector orthogonal to u.
Vec3 any_orthogonal(Vec3 u) {
    Vec3 probe = std::abs(u.x) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    return u.cross(probe).normalized();
}

}  // namespace

Similarity similarity_align(const std::vector<Vec3>& from, const std::vector<Vec3>& to) {
    ag::check(from.size() == to.size() && !from.empty(),
              "similarity_align: point sets must be equal-sized and nonempty");
    double n = static_cast<double>(from.size());
    Vec3 mf, mt;
    for (const Vec3& p : from) mf = mf + p * (1.0 / n);
    for (const Vec3& p : to) mt = mt + p * (1.0 / n);

    Mat3 cov;  // (1/n) sum (to - mt)(from - mf)^T
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) cov.m[i][j] = 0.0;
    double var_from = 0.0;
    for (size_t k = 0; k < from.size(); ++k) {
        Vec3 f = from[k] - mf, t = to[k] - mt;
        double fv[3] = {f.x, f.y, f.z}, tv[3] = {t.x, t.y, t.z};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) cov.m[i][j] += tv[i] * fv[j] / n;
        var_from += f.dot(f) / n;
    }

    // SVD cov = U diag(d) V^T through the eigensystem of cov^T cov.
    double ev[3];
    Mat3 V;
    jacobi_eig3(cov.transposed().mul(cov), ev, V);
    double d[3];
    for (int k = 0; k < 3; ++k) d[k] = std::sqrt(std::max(ev[k], 0.0));

    Similarity out;
    if (d[0] < 1e-12 || var_from < 1e-18) {
        // One cloud is (numerically) a single point: translation only.
        out.t = mt - mf;
        return out;
    }

    Mat3 U;
    for (int k = 0; k < 3; ++k) {
        if (d[k] > 1e-9 * d[0]) {
            set_col(U, k, cov.apply(col(V, k)) * (1.0 / d[k]));
        } else if (k == 1) {
            set_col(U, 1, any_orthogonal(col(U, 0)));
        } else {
            set_col(U, 2, col(U, 0).cross(col(U, 1)));
        }
    }

    double sign = U.det() * V.det() < 0.0 ? -1.0 : 1.0;
    Mat3 S;
    S.m[2][2] = sign;
    out.rot = U.mul(S).mul(V.transposed());
    out.scale = (d[0] + d[1] + sign * d[2]) / var_from;
    out.t = mt - out.rot.apply(mf) * out.scale;
    return out;
}

double pa_mpjpe(const Pose3D& pred, const Pose3D& gt) {
    std::vector<Vec3> from(pred.joints.begin(), pred.joints.end());
    std::vector<Vec3> to(gt.joints.begin(), gt.joints.end());
    Similarity sim = similarity_align(from, to);
    double s = 0.0;
    for (int j = 0; j < kJointCount; ++j) s += (sim.apply(pred.joints[j]) - gt.joints[j]).norm();
    return s / kJointCount;
}

double pck(const Pose3D& pred, const Pose3D& gt, double thresh_mm) {
    int hit = 0;
    for (int j = 0; j < kJointCount; ++j)
        if ((pred.joints[j] - gt.joints[j]).norm() < thresh_mm) ++hit;
    return static_cast<double>(hit) / kJointCount;
}

double auc_pck(const Pose3D& pred, const Pose3D& gt, double max_mm, int steps) {
    ag::check(steps >= 2 && max_mm > 0, "auc_pck: need steps >= 2 and max_mm > 0");
    double acc = 0.0;
    for (int k = 0; k < steps; ++k) acc += pck(pred, gt, max_mm * k / (steps - 1));
    return acc / steps;
}

void MetricAccumulator::add(const Pose3D& pred, const Pose3D& gt) {
    for (int j = 0; j < kJointCount; ++j) pj_[j] += (pred.joints[j] - gt.joints[j]).norm();
    mpjpe_ += mpjpe(pred, gt);
    pa_ += pa_mpjpe(pred, gt);
    pck_ += pck(pred, gt);
    auc_ += auc_pck(pred, gt);
    ++n_;
}

PoseMetrics MetricAccumulator::summary() const {
    ag::check(n_ > 0, "MetricAccumulator: no poses added");
    double n = static_cast<double>(n_);
    return {mpjpe_ / n, pa_ / n, pck_ / n, auc_ / n};
}

EvalReport MetricAccumulator::report() const {
    EvalReport r;
    r.means = summary();
    for (int j = 0; j < kJointCount; ++j) r.per_joint[j] = pj_[j] / static_cast<double>(n_);
    return r;
}

}  // namespace opose
