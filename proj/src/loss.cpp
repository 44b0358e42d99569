#include "opose/loss.hpp"

#include "opose/extract.hpp"

namespace opose {

template <typename T>
BatchTargets<T> BatchTargets<T>::from_supervision(const std::vector<const Supervision*>& batch) {
    ag::check(!batch.empty(), "BatchTargets: empty batch");
    // 3D-supervised samples must form a prefix.
    for (size_t i = 1; i < batch.size(); ++i)
        ag::check(!(batch[i]->has_3d && !batch[i - 1]->has_3d),
                  "BatchTargets: 3D-supervised samples must come first");
    std::vector<const MapSet*> maps;
    maps.reserve(batch.size());
    int64_t n3d = 0;
    for (const Supervision* s : batch) {
        maps.push_back(&s->maps);
        n3d += s->has_3d ? 1 : 0;
    }
    BatchTargets<T> tgt;
    tgt.conf = ag::constant(conf_planes<T>(maps));
    tgt.o2d = ag::constant(orient2d_planes<T>(maps));
    tgt.o3d = ag::constant(orient3d_planes<T>(maps));
    tgt.n3d = n3d;
    if (n3d > 0) {
        ag::Arr<T> poses({n3d, kJointCount, 3});
        T* dst = poses.ptr();
        for (int64_t k = 0; k < n3d; ++k)
            for (const Vec3& j : batch[k]->pose3d.joints) {
                *dst++ = static_cast<T>(j.x);
                *dst++ = static_cast<T>(j.y);
                *dst++ = static_cast<T>(j.z);
            }
        tgt.pose3d = ag::constant(std::move(poses));
    }
    return tgt;
}

template <typename T>
std::pair<ag::Tensor<T>, LossBreakdown> total_loss(const std::vector<FcnnStageOut<T>>& stages,
                                                   const std::optional<ag::Tensor<T>>& init_pose,
                                                   const std::optional<ag::Tensor<T>>& comp_pose,
                                                   const BatchTargets<T>& tgt,
                                                   const LossConfig& cfg) {
    cfg.validate();
    ag::check(!stages.empty(), "total_loss: no stage outputs");
    int64_t n = tgt.conf.shape()[0];
    ag::check(tgt.n3d >= 0 && tgt.n3d <= n, "total_loss: bad 3D prefix length");
    T gate_scale = static_cast<T>(tgt.n3d) / static_cast<T>(n);

    LossBreakdown bd;
    ag::Tensor<T> total = ag::scalar<T>(0);
    for (const FcnnStageOut<T>& st : stages) {
        auto cm = bce_map_loss(st.conf, tgt.conf, static_cast<T>(cfg.clamp_eps));
        auto om2d = mse_map_loss(st.o2d, tgt.o2d);
        bd.cm.push_back(cm.item());
        bd.om2d.push_back(om2d.item());
        total = ag::add(total, ag::scale(cm, static_cast<T>(cfg.lambda1)));
        total = ag::add(total, ag::scale(om2d, static_cast<T>(cfg.lambda2)));
        if (tgt.n3d > 0) {
            // Gated per-image term: mean over the 3D prefix, weighted by its
            // share of the batch.
            auto om3d = mse_map_loss(ag::slice(st.o3d, 0, 0, tgt.n3d),
                                     ag::slice(tgt.o3d, 0, 0, tgt.n3d));
            bd.om3d.push_back(om3d.item());
            total = ag::add(total, ag::scale(om3d, static_cast<T>(cfg.lambda3) * gate_scale));
        } else {
            bd.om3d.push_back(0.0);
        }
    }
    if (cfg.use_pose_loss && tgt.n3d > 0) {
        if (init_pose.has_value()) {
            auto p3d = l1_pose_loss(*init_pose, tgt.pose3d);
            bd.p3d = p3d.item();
            total = ag::add(total, ag::scale(p3d, gate_scale));
        }
        if (comp_pose.has_value()) {
            auto cp3d = l1_pose_loss(*comp_pose, tgt.pose3d);
            bd.cp3d = cp3d.item();
            total = ag::add(total, ag::scale(cp3d, gate_scale));
        }
    }
    bd.total = total.item();
    return {total, bd};
}

template struct BatchTargets<float>;
template struct BatchTargets<double>;
template std::pair<ag::Tensor<float>, LossBreakdown> total_loss(
    const std::vector<FcnnStageOut<float>>&, const std::optional<ag::Tensor<float>>&,
    const std::optional<ag::Tensor<float>>&, const BatchTargets<float>&, const LossConfig&);
template std::pair<ag::Tensor<double>, LossBreakdown> total_loss(
    const std::vector<FcnnStageOut<double>>&, const std::optional<ag::Tensor<double>>&,
    const std::optional<ag::Tensor<double>>&, const BatchTargets<double>&, const LossConfig&);

}  // namespace opose
