#include "opose/net.hpp"

namespace opose {

namespace {

template <typename T>
ConvParam<T> make_conv(int oc, int ic, int k, Rng& rng) {
    return {he_uniform<T>({oc, ic, k, k}, static_cast<int64_t>(ic) * k * k, rng),
            zero_param<T>({oc})};
}

// Upper triangle (with diagonal) of a 16x16 table, row-major flat indices.
const std::vector<int64_t>& triu_indices() {
    static const std::vector<int64_t> idx = [] {
        std::vector<int64_t> v;
        for (int i = 0; i < kLimbCount; ++i)
            for (int j = i; j < kLimbCount; ++j) v.push_back(i * kLimbCount + j);
        return v;
    }();
    return idx;
}

template <typename T>
ag::Tensor<T> linear(const ag::Tensor<T>& x, const ag::Tensor<T>& w, const ag::Tensor<T>& b) {
    auto y = ag::matmul(x, w);
    return ag::add(y, ag::broadcast_to(ag::reshape(b, {1, b.numel()}), y.shape()));
}

}  // namespace

template <typename T>
void FcnnParams<T>::init(const FcnnConfig& cfg, Rng& rng) {
    cfg.validate();
    trunk.clear();
    heads.clear();
    int ic = 3;
    for (int oc : cfg.trunk_channels) {
        trunk.push_back(make_conv<T>(oc, ic, 3, rng));
        ic = oc;
    }
    int feat = ic;
    for (int s = 0; s < cfg.stages; ++s) {
        typename FcnnParams<T>::StageHead head;
        if (s > 0) head.reduce = make_conv<T>(feat, feat + 96, 1, rng);
        head.conf1 = make_conv<T>(cfg.head_channels, feat, 3, rng);
        head.conf2 = make_conv<T>(kLimbCount, cfg.head_channels, 1, rng);
        head.o2d1 = make_conv<T>(cfg.head_channels, feat, 3, rng);
        head.o2d2 = make_conv<T>(2 * kLimbCount, cfg.head_channels, 1, rng);
        head.o3d1 = make_conv<T>(cfg.head_channels, feat, 3, rng);
        head.o3d2 = make_conv<T>(3 * kLimbCount, cfg.head_channels, 1, rng);
        heads.push_back(std::move(head));
    }
}

template <typename T>
void FcnnParams<T>::visit(const ParamVisitor<T>& fn) const {
    for (size_t l = 0; l < trunk.size(); ++l) {
        std::string base = "trunk." + std::to_string(l);
        fn(base + ".w", trunk[l].w);
        fn(base + ".b", trunk[l].b);
    }
    for (size_t s = 0; s < heads.size(); ++s) {
        std::string base = "stage" + std::to_string(s);
        auto conv = [&](const char* name, const ConvParam<T>& p) {
            if (!p.w) return;
            fn(base + "." + name + ".w", p.w);
            fn(base + "." + name + ".b", p.b);
        };
        conv("reduce", heads[s].reduce);
        conv("conf1", heads[s].conf1);
        conv("conf2", heads[s].conf2);
        conv("o2d1", heads[s].o2d1);
        conv("o2d2", heads[s].o2d2);
        conv("o3d1", heads[s].o3d1);
        conv("o3d2", heads[s].o3d2);
    }
}

template <typename T>
std::vector<FcnnStageOut<T>> fcnn_forward(const ag::Tensor<T>& image, const FcnnConfig& cfg,
                                          const FcnnParams<T>& params, ParamBinder<T>& bind) {
    cfg.validate();
    const ag::Shape& is = image.shape();
    ag::check(is.size() == 4 && is[1] == 3 && is[2] == cfg.image_size && is[3] == cfg.image_size,
              "fcnn_forward: image must be [N,3," + std::to_string(cfg.image_size) + "," +
                  std::to_string(cfg.image_size) + "], got " + ag::shape_str(is));
    ag::check(params.trunk.size() == cfg.trunk_channels.size() &&
                  params.heads.size() == static_cast<size_t>(cfg.stages),
              "fcnn_forward: parameters do not match the config");

    int f = cfg.downsample();
    int strided = f == 1 ? 0 : (f == 2 ? 1 : (f == 4 ? 2 : 3));
    ag::Tensor<T> feat = image;
    for (size_t l = 0; l < params.trunk.size(); ++l) {
        int stride = static_cast<int>(l) < strided ? 2 : 1;
        feat = ag::relu(ag::conv2d(feat, bind(params.trunk[l].w), bind(params.trunk[l].b), stride, 1));
    }

    std::vector<FcnnStageOut<T>> outs;
    ag::Tensor<T> prev_maps;
    for (int s = 0; s < cfg.stages; ++s) {
        const auto& head = params.heads[s];
        ag::Tensor<T> x = feat;
        if (s > 0) {
            // Previous predictions come in detached: refinement context only.
            auto cat = ag::concat<T>({feat, ag::detach(prev_maps)}, 1);
            x = ag::relu(ag::conv2d(cat, bind(head.reduce.w), bind(head.reduce.b), 1, 0));
        }
        auto branch = [&](const ConvParam<T>& c1, const ConvParam<T>& c2) {
            auto h = ag::relu(ag::conv2d(x, bind(c1.w), bind(c1.b), 1, 1));
            return ag::conv2d(h, bind(c2.w), bind(c2.b), 1, 0);
        };
        FcnnStageOut<T> out;
        out.conf = ag::sigmoid(branch(head.conf1, head.conf2));
        out.o2d = branch(head.o2d1, head.o2d2);
        out.o3d = branch(head.o3d1, head.o3d2);
        prev_maps = ag::concat<T>({out.conf, out.o2d, out.o3d}, 1);
        outs.push_back(std::move(out));
    }
    return outs;
}

template <typename T>
void PcParams<T>::init(Rng& rng) {
    w_in = he_uniform<T>({kPcInputDim, kPcHidden}, kPcInputDim, rng);
    b_in = zero_param<T>({kPcHidden});
    w1 = he_uniform<T>({kPcHidden, kPcHidden}, kPcHidden, rng);
    b1 = zero_param<T>({kPcHidden});
    w2 = he_uniform<T>({kPcHidden, kPcHidden}, kPcHidden, rng);
    b2 = zero_param<T>({kPcHidden});
    w_out = zero_param<T>({kPcHidden, 3 * kLimbCount});
    b_out = zero_param<T>({3 * kLimbCount});
}

template <typename T>
void PcParams<T>::visit(const ParamVisitor<T>& fn) const {
    fn("pc.in.w", w_in);
    fn("pc.in.b", b_in);
    fn("pc.h1.w", w1);
    fn("pc.h1.b", b1);
    fn("pc.h2.w", w2);
    fn("pc.h2.b", b2);
    fn("pc.out.w", w_out);
    fn("pc.out.b", b_out);
}

template <typename T>
ag::Tensor<T> pc_features_t(const ag::Tensor<T>& orients, const ag::Tensor<T>& scores) {
    const ag::Shape& os = orients.shape();
    ag::check(os.size() == 3 && os[1] == kLimbCount && os[2] == 3,
              "pc_features_t: orients must be [N,16,3], got " + ag::shape_str(os));
    int64_t n = os[0];
    ag::check(scores.shape() == ag::Shape{n, kLimbCount},
              "pc_features_t: scores must be [N,16], got " + ag::shape_str(scores.shape()));

    std::vector<ag::Tensor<T>> rows;
    rows.reserve(n);
    for (int64_t k = 0; k < n; ++k) {
        auto s_row = ag::reshape(ag::slice(scores, 0, k, 1), {kLimbCount});          // [16]
        auto o_mat = ag::reshape(ag::slice(orients, 0, k, 1), {kLimbCount, 3});      // [16,3]
        // Score-weighted orientations: one zero row silences its whole
        // Gram row and column.
        auto w = ag::mul(o_mat, ag::broadcast_to(ag::reshape(s_row, {kLimbCount, 1}),
                                                 {kLimbCount, 3}));
        auto gram = ag::matmul(w, ag::transpose(w));  // [16,16]
        auto triu = ag::gather(gram, triu_indices());
        auto feats = ag::concat<T>({s_row, ag::reshape(o_mat, {3 * kLimbCount}), triu}, 0);
        rows.push_back(ag::reshape(feats, {1, kPcInputDim}));
    }
    return n == 1 ? rows[0] : ag::concat(rows, 0);
}

template <typename T>
ag::Tensor<T> pc_forward_t(const ag::Tensor<T>& feats, const PcParams<T>& params,
                           ParamBinder<T>& bind) {
    const ag::Shape& fs = feats.shape();
    ag::check(fs.size() == 2 && fs[1] == kPcInputDim,
              "pc_forward_t: features must be [N,200], got " + ag::shape_str(fs));
    auto h0 = linear(feats, bind(params.w_in), bind(params.b_in));
    auto h1 = ag::relu(linear(h0, bind(params.w1), bind(params.b1)));
    auto h2 = ag::add(ag::relu(linear(h1, bind(params.w2), bind(params.b2))), h1);
    auto dv = linear(h2, bind(params.w_out), bind(params.b_out));
    return ag::reshape(dv, {fs[0], kLimbCount, 3});
}

template <typename T>
ag::Tensor<T> pc_apply_t(const ag::Tensor<T>& orients, const ag::Tensor<T>& dv, T eps) {
    ag::check(orients.shape() == dv.shape(), "pc_apply_t: shape mismatch");
    return normalize_rows_t(ag::add(orients, dv), eps);
}

// ---- plain wrappers ----

PcInput pc_features(const OrientationSet& orients, const std::array<double, kLimbCount>& scores) {
    ag::Arr<double> o({1, kLimbCount, 3});
    ag::Arr<double> s({1, kLimbCount});
    for (int i = 0; i < kLimbCount; ++i) {
        o.data[i * 3 + 0] = orients.v[i].x;
        o.data[i * 3 + 1] = orients.v[i].y;
        o.data[i * 3 + 2] = orients.v[i].z;
        s.data[i] = scores[i];
    }
    auto feats = pc_features_t(ag::constant(std::move(o)), ag::constant(std::move(s)));
    PcInput in;
    for (int k = 0; k < kPcInputDim; ++k) in.x[k] = feats.data()[k];
    return in;
}

std::array<Vec3, kLimbCount> pc_forward(const PcInput& input, const PcParams<double>& params) {
    ag::Arr<double> x({1, kPcInputDim});
    std::copy(input.x.begin(), input.x.end(), x.data.begin());
    ParamBinder<double> bind(nullptr);
    auto dv = pc_forward_t(ag::constant(std::move(x)), params, bind);
    std::array<Vec3, kLimbCount> out;
    for (int i = 0; i < kLimbCount; ++i)
        out[i] = {dv.data()[i * 3 + 0], dv.data()[i * 3 + 1], dv.data()[i * 3 + 2]};
    return out;
}

OrientationSet pc_apply(const OrientationSet& orients, const std::array<Vec3, kLimbCount>& dv) {
    ag::Arr<double> v({1, kLimbCount, 3});
    ag::Arr<double> d({1, kLimbCount, 3});
    for (int i = 0; i < kLimbCount; ++i) {
        v.data[i * 3 + 0] = orients.v[i].x;
        v.data[i * 3 + 1] = orients.v[i].y;
        v.data[i * 3 + 2] = orients.v[i].z;
        d.data[i * 3 + 0] = dv[i].x;
        d.data[i * 3 + 1] = dv[i].y;
        d.data[i * 3 + 2] = dv[i].z;
    }
    auto out = pc_apply_t(ag::constant(std::move(v)), ag::constant(std::move(d)), kOrientEps);
    OrientationSet res;
    for (int i = 0; i < kLimbCount; ++i)
        res.v[i] = {out.data()[i * 3 + 0], out.data()[i * 3 + 1], out.data()[i * 3 + 2]};
    return res;
}

Pose3D pc_complement(const InitialEstimate& est, const PcParams<double>& params,
                     const LimbLengths& lengths, const LimbTopology& topo,
                     OrientationSet* corrected) {
    PcInput in = pc_features(est.orients, est.scores);
    OrientationSet fixed = pc_apply(est.orients, pc_forward(in, params));
    if (corrected != nullptr) *corrected = fixed;
    return fk_integrate(fixed, lengths, topo);
}

// ---- instantiations ----

template struct FcnnParams<float>;
template struct FcnnParams<double>;
template struct PcParams<float>;
template struct PcParams<double>;
template std::vector<FcnnStageOut<float>> fcnn_forward(const ag::Tensor<float>&, const FcnnConfig&,
                                                       const FcnnParams<float>&, ParamBinder<float>&);
template std::vector<FcnnStageOut<double>> fcnn_forward(const ag::Tensor<double>&, const FcnnConfig&,
                                                        const FcnnParams<double>&,
                                                        ParamBinder<double>&);
template ag::Tensor<float> pc_features_t(const ag::Tensor<float>&, const ag::Tensor<float>&);
template ag::Tensor<double> pc_features_t(const ag::Tensor<double>&, const ag::Tensor<double>&);
template ag::Tensor<float> pc_forward_t(const ag::Tensor<float>&, const PcParams<float>&,
                                        ParamBinder<float>&);
template ag::Tensor<double> pc_forward_t(const ag::Tensor<double>&, const PcParams<double>&,
                                         ParamBinder<double>&);
template ag::Tensor<float> pc_apply_t(const ag::Tensor<float>&, const ag::Tensor<float>&, float);
template ag::Tensor<double> pc_apply_t(const ag::Tensor<double>&, const ag::Tensor<double>&, double);

}  // namespace opose
