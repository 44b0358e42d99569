#pragma once

// Networks.
//
// Fcnn: a small fully convolutional trunk followed by T prediction stages.
// Every stage emits the full 96-channel map stack (16 confidence, 32 2D
// orientation, 48 3D orientation); later stages see the trunk features
// concatenated with the previous stage's maps. The previous maps enter
// detached, so each stage's losses reach exactly that stage's head and the
// shared trunk, and gradient gating by supervision stays exact.
//
// Pc: a residual MLP that reads the decoded skeleton summary (scores,
// orientations, and the Gram table of score-weighted orientations) and emits
// per-limb orientation corrections. Its input is detached from the decoder,
// so its loss trains only the MLP.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "ag/tensor.hpp"
#include "opose/extract.hpp"
#include "opose/rng.hpp"
#include "opose/skeleton.hpp"

namespace opose {

struct FcnnConfig {
    int stages = 2;
    int image_size = 64;
    int map_size = 16;
    std::vector<int> trunk_channels = {12, 16, 16, 16};
    int head_channels = 12;

    int downsample() const { return image_size / map_size; }
    void validate() const {
        ag::check(stages >= 1, "FcnnConfig: stages must be >= 1");
        ag::check(image_size > 0 && map_size > 0 && image_size % map_size == 0,
                  "FcnnConfig: image_size must be a multiple of map_size");
        int f = downsample();
        ag::check(f == 1 || f == 2 || f == 4 || f == 8,
                  "FcnnConfig: image/map ratio must be 1, 2, 4 or 8");
        int strided = f == 1 ? 0 : (f == 2 ? 1 : (f == 4 ? 2 : 3));
        ag::check(static_cast<int>(trunk_channels.size()) >= std::max(1, strided),
                  "FcnnConfig: not enough trunk layers for the downsample factor");
        for (int c : trunk_channels) ag::check(c > 0, "FcnnConfig: trunk channel count must be positive");
        ag::check(head_channels > 0, "FcnnConfig: head_channels must be positive");
    }
};

template <typename T>
struct ConvParam {
    std::shared_ptr<ag::Arr<T>> w, b;
};

// Binds shared parameter buffers onto a tape (or as constants when tape is
// null), caching by buffer so each parameter becomes exactly one leaf.
template <typename T>
class ParamBinder {
public:
    explicit ParamBinder(ag::Tape<T>* tape) : tape_(tape) {}

    ag::Tensor<T> operator()(const std::shared_ptr<ag::Arr<T>>& p) {
        auto it = bound_.find(p.get());
        if (it != bound_.end()) return it->second;
        ag::Tensor<T> t = tape_ != nullptr ? tape_->leaf(p) : ag::constant(p);
        bound_.emplace(p.get(), t);
        return t;
    }

    // Gradient after backward; zero for parameters the loss never used.
    ag::Arr<T> grad_of(const std::shared_ptr<ag::Arr<T>>& p) const {
        auto it = bound_.find(p.get());
        if (it == bound_.end() || tape_ == nullptr) return ag::Arr<T>(p->shape);
        return tape_->grad(it->second);
    }

private:
    ag::Tape<T>* tape_;
    std::unordered_map<const ag::Arr<T>*, ag::Tensor<T>> bound_;
};

template <typename T>
using ParamVisitor = std::function<void(const std::string&, const std::shared_ptr<ag::Arr<T>>&)>;

template <typename T>
struct FcnnParams {
    std::vector<ConvParam<T>> trunk;
    struct StageHead {
        ConvParam<T> reduce;  // stages > 0: 1x1 over [features, prev maps]
        ConvParam<T> conf1, conf2;
        ConvParam<T> o2d1, o2d2;
        ConvParam<T> o3d1, o3d2;
    };
    std::vector<StageHead> heads;

    void init(const FcnnConfig& cfg, Rng& rng);
    void visit(const ParamVisitor<T>& fn) const;
};

template <typename T>
struct FcnnStageOut {
    ag::Tensor<T> conf;  // [N,16,h,w] after sigmoid
    ag::Tensor<T> o2d;   // [N,32,h,w] linear
    ag::Tensor<T> o3d;   // [N,48,h,w] linear
};

// image [N,3,S,S] in [0,1] -> per-stage map stacks at S/downsample.
template <typename T>
std::vector<FcnnStageOut<T>> fcnn_forward(const ag::Tensor<T>& image, const FcnnConfig& cfg,
                                          const FcnnParams<T>& params, ParamBinder<T>& bind);

// ---- pose complementation ----

// scores (16) + flattened orientations (48) + upper triangle with diagonal
// of the 16x16 Gram table (136).
constexpr int kPcInputDim = kLimbCount + 3 * kLimbCount + kLimbCount * (kLimbCount + 1) / 2;
constexpr int kPcHidden = 512;

template <typename T>
struct PcParams {
    std::shared_ptr<ag::Arr<T>> w_in, b_in;    // 200 -> 512
    std::shared_ptr<ag::Arr<T>> w1, b1;        // 512 -> 512
    std::shared_ptr<ag::Arr<T>> w2, b2;        // 512 -> 512, residual around it
    std::shared_ptr<ag::Arr<T>> w_out, b_out;  // 512 -> 48, zero-initialized

    // Hidden layers get He init; the output layer starts at exactly zero so
    // an untrained corrector is the identity on orientations.
    void init(Rng& rng);
    void visit(const ParamVisitor<T>& fn) const;
};

// orients [N,16,3], scores [N,16] -> features [N,200].
template <typename T>
ag::Tensor<T> pc_features_t(const ag::Tensor<T>& orients, const ag::Tensor<T>& scores);

// features [N,200] -> corrections [N,16,3].
template <typename T>
ag::Tensor<T> pc_forward_t(const ag::Tensor<T>& feats, const PcParams<T>& params,
                           ParamBinder<T>& bind);

// normalize(v + dv) rows, zero rows stay zero.
template <typename T>
ag::Tensor<T> pc_apply_t(const ag::Tensor<T>& orients, const ag::Tensor<T>& dv,
                         T eps = static_cast<T>(kOrientEps));

// Full corrector: detaches its inputs, so gradients stop at the decoder.
template <typename T>
ag::Tensor<T> pc_complement_t(const ag::Tensor<T>& orients, const ag::Tensor<T>& scores,
                              const PcParams<T>& params, ParamBinder<T>& bind,
                              T eps = static_cast<T>(kOrientEps)) {
    auto feats = pc_features_t(ag::detach(orients), ag::detach(scores));
    auto dv = pc_forward_t(feats, params, bind);
    return pc_apply_t(ag::detach(orients), dv, eps);
}

// ---- plain single-sample interface (double precision, untracked) ----

struct PcInput {
    std::array<double, kPcInputDim> x{};
};

PcInput pc_features(const OrientationSet& orients, const std::array<double, kLimbCount>& scores);
std::array<Vec3, kLimbCount> pc_forward(const PcInput& input, const PcParams<double>& params);
OrientationSet pc_apply(const OrientationSet& orients, const std::array<Vec3, kLimbCount>& dv);

// Corrected orientations and the re-integrated pose for one decoded sample.
Pose3D pc_complement(const InitialEstimate& est, const PcParams<double>& params,
                     const LimbLengths& lengths, const LimbTopology& topo,
                     OrientationSet* corrected = nullptr);

// ---- shared init helpers ----

template <typename T>
std::shared_ptr<ag::Arr<T>> he_uniform(ag::Shape shape, int64_t fan_in, Rng& rng) {
    auto a = std::make_shared<ag::Arr<T>>(std::move(shape));
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : a->data) v = static_cast<T>(rng.uniform(-bound, bound));
    return a;
}

template <typename T>
std::shared_ptr<ag::Arr<T>> zero_param(ag::Shape shape) {
    return std::make_shared<ag::Arr<T>>(std::move(shape));
}

// Explicit instantiations for the two scalar types live in net.cpp.
extern template struct FcnnParams<float>;
extern template struct FcnnParams<double>;
extern template struct PcParams<float>;
extern template struct PcParams<double>;
extern template std::vector<FcnnStageOut<float>> fcnn_forward(const ag::Tensor<float>&,
                                                              const FcnnConfig&,
                                                              const FcnnParams<float>&,
                                                              ParamBinder<float>&);
extern template std::vector<FcnnStageOut<double>> fcnn_forward(const ag::Tensor<double>&,
                                                               const FcnnConfig&,
                                                               const FcnnParams<double>&,
                                                               ParamBinder<double>&);
extern template ag::Tensor<float> pc_features_t(const ag::Tensor<float>&, const ag::Tensor<float>&);
extern template ag::Tensor<double> pc_features_t(const ag::Tensor<double>&,
                                                 const ag::Tensor<double>&);
extern template ag::Tensor<float> pc_forward_t(const ag::Tensor<float>&, const PcParams<float>&,
                                               ParamBinder<float>&);
extern template ag::Tensor<double> pc_forward_t(const ag::Tensor<double>&, const PcParams<double>&,
                                                ParamBinder<double>&);
extern template ag::Tensor<float> pc_apply_t(const ag::Tensor<float>&, const ag::Tensor<float>&,
                                             float);
extern template ag::Tensor<double> pc_apply_t(const ag::Tensor<double>&, const ag::Tensor<double>&,
                                              double);

}  // namespace opose
