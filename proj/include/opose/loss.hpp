#pragma once

// Training objective.
//
// Per stage t and image: lambda1 * confidence BCE + lambda2 * 2D-orientation
// MSE + [has 3D GT] * lambda3 * 3D-orientation MSE, summed over stages; plus,
// for images with 3D GT, the L1 pose losses of the voted pose and of the
// corrected pose. Map losses average over every map element; pose losses
// average over the 17x3 joint coordinates in millimetres. Batches order
// their 3D-supervised samples first, so the gated terms act on a prefix
// slice scaled by the subset fraction; with no 3D samples those terms are
// never built and their parameters see exactly zero gradient.

#include <optional>
#include <vector>

#include "ag/tensor.hpp"
#include "opose/maps.hpp"
#include "opose/net.hpp"
#include "opose/skeleton.hpp"

namespace opose {

struct LossConfig {
    double lambda1 = 0.1;  // confidence maps
    double lambda2 = 1.0;  // 2D orientation maps
    double lambda3 = 1.0;  // 3D orientation maps (only with 3D GT)
    bool use_pose_loss = true;  // L1 terms on the voted / corrected poses
    double clamp_eps = 1e-7;    // BCE probability clamp

    void validate() const {
        ag::check(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0, "LossConfig: negative weight");
        ag::check(clamp_eps > 0 && clamp_eps < 0.5, "LossConfig: clamp_eps out of (0, 0.5)");
    }
};

// Ground truth for one sample.
struct Supervision {
    MapSet maps;
    bool has_3d = false;
    Pose3D pose3d;  // root-centered, valid when has_3d
};

// Binary cross-entropy, predictions clamped to [eps, 1-eps], mean reduction.
template <typename T>
ag::Tensor<T> bce_map_loss(const ag::Tensor<T>& pred, const ag::Tensor<T>& gt,
                           T eps = static_cast<T>(1e-7)) {
    ag::check(pred.shape() == gt.shape(), "bce_map_loss: shape mismatch " +
                                              ag::shape_str(pred.shape()) + " vs " +
                                              ag::shape_str(gt.shape()));
    auto p = ag::clamp(pred, eps, T(1) - eps);
    auto pos = ag::mul(gt, ag::log_(p));
    auto one = ag::full<T>(gt.shape(), T(1));
    auto neg = ag::mul(ag::sub(one, gt), ag::log_(ag::sub(one, p)));
    return ag::scale(ag::mean(ag::add(pos, neg)), T(-1));
}

template <typename T>
ag::Tensor<T> mse_map_loss(const ag::Tensor<T>& pred, const ag::Tensor<T>& gt) {
    ag::check(pred.shape() == gt.shape(), "mse_map_loss: shape mismatch " +
                                              ag::shape_str(pred.shape()) + " vs " +
                                              ag::shape_str(gt.shape()));
    return ag::mean(ag::square(ag::sub(pred, gt)));
}

// Mean absolute joint-coordinate error in millimetres over [N,17,3].
template <typename T>
ag::Tensor<T> l1_pose_loss(const ag::Tensor<T>& pred, const ag::Tensor<T>& gt) {
    ag::check(pred.shape() == gt.shape() && pred.shape().size() == 3 &&
                  pred.shape()[1] == kJointCount && pred.shape()[2] == 3,
              "l1_pose_loss: poses must share shape [N,17,3]");
    return ag::mean(ag::abs_(ag::sub(pred, gt)));
}

// Constant targets for a batch whose first n3d samples carry 3D GT.
template <typename T>
struct BatchTargets {
    ag::Tensor<T> conf;  // [N,16,h,w]
    ag::Tensor<T> o2d;   // [N,32,h,w]
    ag::Tensor<T> o3d;   // [N,48,h,w]
    int64_t n3d = 0;
    ag::Tensor<T> pose3d;  // [n3d,17,3], unset when n3d == 0

    static BatchTargets<T> from_supervision(const std::vector<const Supervision*>& batch);
};

struct LossBreakdown {
    std::vector<double> cm, om2d, om3d;  // per stage; om3d 0 when ungated
    double p3d = 0.0, cp3d = 0.0;
    double total = 0.0;
};

// init_pose / comp_pose: decoded and corrected poses for the 3D prefix,
// [n3d,17,3]; pass std::nullopt when unavailable (e.g. pose losses off).
template <typename T>
std::pair<ag::Tensor<T>, LossBreakdown> total_loss(const std::vector<FcnnStageOut<T>>& stages,
                                                   const std::optional<ag::Tensor<T>>& init_pose,
                                                   const std::optional<ag::Tensor<T>>& comp_pose,
                                                   const BatchTargets<T>& tgt,
                                                   const LossConfig& cfg);

extern template struct BatchTargets<float>;
extern template struct BatchTargets<double>;
extern template std::pair<ag::Tensor<float>, LossBreakdown> total_loss(
    const std::vector<FcnnStageOut<float>>&, const std::optional<ag::Tensor<float>>&,
    const std::optional<ag::Tensor<float>>&, const BatchTargets<float>&, const LossConfig&);
extern template std::pair<ag::Tensor<double>, LossBreakdown> total_loss(
    const std::vector<FcnnStageOut<double>>&, const std::optional<ag::Tensor<double>>&,
    const std::optional<ag::Tensor<double>>&, const BatchTargets<double>&, const LossConfig&);

}  // namespace opose
