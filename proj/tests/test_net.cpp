#include <cmath>

#include "ag/gradcheck.hpp"
#include "doctest.h"
#include "opose/net.hpp"

using namespace opose;

namespace {

FcnnConfig tiny_config() {
    FcnnConfig cfg;
    cfg.stages = 2;
    cfg.image_size = 8;
    cfg.map_size = 8;
    cfg.trunk_channels = {4};
    cfg.head_channels = 3;
    return cfg;
}

ag::Arr<double> random_image(Rng& rng, int64_t n, int64_t s) {
    ag::Arr<double> img({n, 3, s, s});
    for (auto& v : img.data) v = rng.uniform();
    return img;
}

template <typename T>
void zero_all(FcnnParams<T>& params) {
    params.visit([](const std::string&, const std::shared_ptr<ag::Arr<T>>& p) {
        std::fill(p->data.begin(), p->data.end(), T(0));
    });
}

int triu_offset(int i, int j) {
    // Flat index of (i,j), i<=j, inside the packed upper triangle.
    return i * kLimbCount - i * (i - 1) / 2 + (j - i);
}

}  // namespace

TEST_SUITE("net") {

TEST_CASE("fcnn emits 96 channels per stage at map resolution") {
    FcnnConfig cfg;  // defaults: 64 -> 16, two stages
    cfg.validate();
    FcnnParams<float> params;
    Rng rng(1);
    params.init(cfg, rng);
    ParamBinder<float> bind(nullptr);
    ag::Arr<float> img({2, 3, 64, 64});
    Rng pix(2);
    for (auto& v : img.data) v = static_cast<float>(pix.uniform());
    auto outs = fcnn_forward(ag::constant(std::move(img)), cfg, params, bind);
    REQUIRE(outs.size() == 2);
    for (const auto& st : outs) {
        CHECK(st.conf.shape() == ag::Shape{2, 16, 16, 16});
        CHECK(st.o2d.shape() == ag::Shape{2, 32, 16, 16});
        CHECK(st.o3d.shape() == ag::Shape{2, 48, 16, 16});
        for (int64_t i = 0; i < st.conf.numel(); ++i) {
            CHECK(st.conf.data()[i] >= 0.0f);
            CHECK(st.conf.data()[i] <= 1.0f);
        }
    }
}

TEST_CASE("all-zero parameters give confidence 0.5 and zero orientations") {
    FcnnConfig cfg = tiny_config();
    FcnnParams<double> params;
    Rng rng(3);
    params.init(cfg, rng);
    zero_all(params);
    ParamBinder<double> bind(nullptr);
    auto outs = fcnn_forward(ag::constant(random_image(rng, 1, 8)), cfg, params, bind);
    for (const auto& st : outs) {
        for (int64_t i = 0; i < st.conf.numel(); ++i) CHECK(st.conf.data()[i] == 0.5);
        for (int64_t i = 0; i < st.o2d.numel(); ++i) CHECK(st.o2d.data()[i] == 0.0);
        for (int64_t i = 0; i < st.o3d.numel(); ++i) CHECK(st.o3d.data()[i] == 0.0);
    }
}

TEST_CASE("identical seeds build identical networks") {
    FcnnConfig cfg = tiny_config();
    FcnnParams<float> a, b;
    Rng ra(77), rb(77);
    a.init(cfg, ra);
    b.init(cfg, rb);
    std::vector<std::shared_ptr<ag::Arr<float>>> pa, pb;
    a.visit([&](const std::string&, const std::shared_ptr<ag::Arr<float>>& p) { pa.push_back(p); });
    b.visit([&](const std::string&, const std::shared_ptr<ag::Arr<float>>& p) { pb.push_back(p); });
    REQUIRE(pa.size() == pb.size());
    for (size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i]->shape == pb[i]->shape);
        for (int64_t k = 0; k < pa[i]->numel(); ++k) CHECK(pa[i]->data[k] == pb[i]->data[k]);
    }
}

TEST_CASE("config validation rejects impossible layouts") {
    FcnnConfig cfg;
    cfg.stages = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = FcnnConfig{};
    cfg.map_size = 60;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = FcnnConfig{};
    cfg.image_size = 64;
    cfg.map_size = 4;  // ratio 16 unsupported
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = FcnnConfig{};
    cfg.trunk_channels = {8};  // ratio 4 needs two strided layers
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("pc features pack scores, orientations and the Gram triangle") {
    ag::Arr<double> orients({1, kLimbCount, 3});
    ag::Arr<double> scores({1, kLimbCount});
    // Limb 0 along x at score 0.5, limb 1 tilted to give dot -0.4 at score 1.
    double u2y = std::sqrt(1.0 - 0.16);
    for (int i = 0; i < kLimbCount; ++i) {
        orients.data[i * 3 + 0] = i == 1 ? -0.4 : 1.0;
        orients.data[i * 3 + 1] = i == 1 ? u2y : 0.0;
        scores.data[i] = i == 0 ? 0.5 : 1.0;
    }
    auto feats = pc_features_t(ag::constant(orients), ag::constant(scores));
    REQUIRE(feats.shape() == ag::Shape{1, kPcInputDim});
    const double* x = feats.data();
    CHECK(x[0] == 0.5);                         // scores block
    CHECK(x[1] == 1.0);
    CHECK(x[kLimbCount + 0] == 1.0);            // orientation block, limb 0 x
    CHECK(x[kLimbCount + 3] == -0.4);           // limb 1 x
    const double* triu = x + kLimbCount + 3 * kLimbCount;
    CHECK(triu[triu_offset(0, 0)] == doctest::Approx(0.25).epsilon(1e-12));   // s0^2
    CHECK(triu[triu_offset(1, 1)] == doctest::Approx(1.0).epsilon(1e-12));    // s1^2
    CHECK(triu[triu_offset(0, 1)] == doctest::Approx(-0.2).epsilon(1e-12));   // s0*s1*dot
    CHECK(triu[triu_offset(2, 3)] == doctest::Approx(1.0).epsilon(1e-12));    // parallel units
}

TEST_CASE("a zero-score limb silences its Gram row and column") {
    Rng rng(5);
    ag::Arr<double> orients({1, kLimbCount, 3});
    ag::Arr<double> scores({1, kLimbCount});
    for (int i = 0; i < kLimbCount; ++i) {
        Vec3 u = Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()}.normalized();
        orients.data[i * 3 + 0] = u.x;
        orients.data[i * 3 + 1] = u.y;
        orients.data[i * 3 + 2] = u.z;
        scores.data[i] = rng.uniform();
    }
    const int dead = 6;
    scores.data[dead] = 0.0;
    auto feats = pc_features_t(ag::constant(orients), ag::constant(scores));
    const double* triu = feats.data() + kLimbCount + 3 * kLimbCount;
    for (int i = 0; i < kLimbCount; ++i)
        for (int j = i; j < kLimbCount; ++j) {
            double v = triu[triu_offset(i, j)];
            if (i == dead || j == dead) CHECK(v == 0.0);
            CHECK(std::abs(v) <= 1.0 + 1e-12);  // unit rows, scores in [0,1]
        }
}

TEST_CASE("fresh pc parameters are the identity corrector") {
    Rng rng(9);
    PcParams<double> params;
    params.init(rng);
    OrientationSet orients;
    std::array<double, kLimbCount> scores{};
    for (int i = 0; i < kLimbCount; ++i) {
        orients.v[i] = Vec3{rng.gaussian(), rng.gaussian(), rng.gaussian()}.normalized();
        scores[i] = rng.uniform();
    }
    orients.v[11] = Vec3{};  // one missing limb passes through as-is
    auto dv = pc_forward(pc_features(orients, scores), params);
    for (const Vec3& d : dv) CHECK(d.norm() == 0.0);
    OrientationSet fixed = pc_apply(orients, dv);
    for (int i = 0; i < kLimbCount; ++i) CHECK((fixed.v[i] - orients.v[i]).norm() < 1e-12);

    InitialEstimate est;
    est.orients = orients;
    est.scores = scores;
    est.pose = fk_integrate(orients, default_limb_lengths(), canonical_topology());
    OrientationSet corrected;
    Pose3D pose = pc_complement(est, params, default_limb_lengths(), canonical_topology(), &corrected);
    for (int j = 0; j < kJointCount; ++j) CHECK((pose.joints[j] - est.pose.joints[j]).norm() < 1e-9);
    CHECK(corrected.v[11].norm() == 0.0);
}

TEST_CASE("pc_apply returns unit rows, or zero when the sum nearly cancels") {
    OrientationSet orients;
    orients.v[0] = {1.0, 0.0, 0.0};
    orients.v[1] = {0.0, 1.0, 0.0};
    std::array<Vec3, kLimbCount> dv{};
    dv[0] = {-1.0 + 1e-9, 1e-9, 0.0};  // cancels limb 0 almost exactly
    dv[1] = {0.0, 1.0, 0.0};           // doubles limb 1's length
    OrientationSet out = pc_apply(orients, dv);
    CHECK(out.v[0].norm() == 0.0);
    CHECK(out.v[1].norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(out.v[1].y == doctest::Approx(1.0).epsilon(1e-12));
    for (int i = 2; i < kLimbCount; ++i) CHECK(out.v[i].norm() == 0.0);  // zero + zero
}

TEST_CASE("the corrector's loss cannot reach the decoder (detached input)") {
    Rng rng(13);
    PcParams<double> params;
    params.init(rng);
    // Give w_out some mass so PC hidden layers receive gradient too.
    for (auto& v : params.w_out->data) v = rng.uniform(-0.01, 0.01);

    ag::Tape<double> tape;
    ag::Arr<double> orients0({2, kLimbCount, 3});
    ag::Arr<double> scores0({2, kLimbCount});
    for (auto& v : orients0.data) v = rng.uniform(-1.0, 1.0);
    for (auto& v : scores0.data) v = rng.uniform();
    auto orients = tape.leaf(orients0);
    auto scores = tape.leaf(scores0);
    ParamBinder<double> bind(&tape);
    auto fixed = pc_complement_t(orients, scores, params, bind);
    tape.backward(ag::mean(ag::square(fixed)));

    ag::Arr<double> go = tape.grad(orients);
    ag::Arr<double> gs = tape.grad(scores);
    for (int64_t i = 0; i < go.numel(); ++i) CHECK(go.data[i] == 0.0);
    for (int64_t i = 0; i < gs.numel(); ++i) CHECK(gs.data[i] == 0.0);
    // The corrector itself does learn.
    double wsum = 0.0;
    ag::Arr<double> gw = bind.grad_of(params.w_out);
    for (int64_t i = 0; i < gw.numel(); ++i) wsum += std::abs(gw.data[i]);
    CHECK(wsum > 0.0);
}

TEST_CASE("finite differences confirm pc gradients through features and mlp") {
    Rng rng(21);
    PcParams<double> params;
    params.init(rng);
    for (auto& v : params.w_out->data) v = rng.uniform(-0.05, 0.05);

    ag::Arr<double> orients0({1, kLimbCount, 3});
    for (auto& v : orients0.data) v = rng.uniform(-1.0, 1.0);
    ag::Arr<double> scores0({1, kLimbCount});
    for (auto& v : scores0.data) v = rng.uniform(0.1, 1.0);
    auto scores_c = ag::constant(scores0);

    // Through features w.r.t. orientations (no detach here; pc_features_t
    // itself must be differentiable).
    ParamBinder<double> bind(nullptr);
    auto rep = ag::finite_diff_check<double>(
        [&](const ag::Tensor<double>& o) {
            auto feats = pc_features_t(o, scores_c);
            auto dv = pc_forward_t(feats, params, bind);
            return ag::mean(ag::square(dv));
        },
        orients0, 1e-5);
    CAPTURE(rep.worst_coord);
    CHECK(rep.max_err < 1e-6);

    // W.r.t. one weight matrix.
    ag::Arr<double> w1_0 = *params.w1;
    std::vector<int64_t> coords;
    for (int64_t k = 0; k < w1_0.numel(); k += 9973) coords.push_back(k);
    auto repw = ag::finite_diff_check<double>(
        [&](const ag::Tensor<double>& w1) {
            auto feats = pc_features_t(ag::constant(orients0), scores_c);
            auto h0 = ag::add(ag::matmul(feats, ag::constant(params.w_in)),
                              ag::broadcast_to(ag::reshape(ag::constant(params.b_in), {1, kPcHidden}),
                                               {1, kPcHidden}));
            auto h1 = ag::relu(ag::add(ag::matmul(h0, w1),
                                       ag::broadcast_to(ag::reshape(ag::constant(params.b1),
                                                                    {1, kPcHidden}),
                                                        {1, kPcHidden})));
            auto h2 = ag::add(ag::relu(ag::add(ag::matmul(h1, ag::constant(params.w2)),
                                               ag::broadcast_to(ag::reshape(ag::constant(params.b2),
                                                                            {1, kPcHidden}),
                                                                {1, kPcHidden}))),
                              h1);
            auto dv = ag::add(ag::matmul(h2, ag::constant(params.w_out)),
                              ag::broadcast_to(ag::reshape(ag::constant(params.b_out),
                                                           {1, 3 * kLimbCount}),
                                               {1, 3 * kLimbCount}));
            return ag::mean(ag::square(dv));
        },
        w1_0, 1e-5, coords);
    CHECK(repw.max_err < 1e-6);
}

TEST_CASE("finite differences confirm gradients through the fcnn") {
    // One stage: with two, finite differences would see the inter-stage path
    // that runs through the detached previous maps, which backprop blocks on
    // purpose. The detachment itself is checked in the next test case.
    FcnnConfig cfg = tiny_config();
    cfg.stages = 1;
    FcnnParams<double> params;
    Rng rng(33);
    params.init(cfg, rng);
    ag::Arr<double> img = random_image(rng, 1, 8);

    auto objective = [&](const ag::Tensor<double>& x, ParamBinder<double>& bind) {
        auto outs = fcnn_forward(x, cfg, params, bind);
        auto acc = ag::scalar<double>(0);
        for (auto& st : outs) {
            acc = ag::add(acc, ag::mean(ag::square(st.conf)));
            acc = ag::add(acc, ag::mean(ag::square(st.o2d)));
            acc = ag::add(acc, ag::mean(ag::square(st.o3d)));
        }
        return acc;
    };

    SUBCASE("with respect to the image") {
        std::vector<int64_t> coords;
        for (int64_t k = 0; k < img.numel(); k += 17) coords.push_back(k);
        auto rep = ag::finite_diff_check<double>(
            [&](const ag::Tensor<double>& x) {
                ParamBinder<double> bind(x.tape);
                return objective(x, bind);
            },
            img, 1e-5, coords);
        CAPTURE(rep.worst_coord);
        CHECK(rep.max_err < 1e-6);
    }

    SUBCASE("with respect to a trunk weight") {
        ag::Tape<double> tape;
        ParamBinder<double> bind(&tape);
        tape.backward(objective(ag::constant(img), bind));
        ag::Arr<double> gw = bind.grad_of(params.trunk[0].w);

        auto eval = [&]() {
            ParamBinder<double> none(nullptr);
            return objective(ag::constant(img), none).item();
        };
        double h = 1e-5;
        for (int64_t k = 0; k < gw.numel(); k += 11) {
            double& wk = params.trunk[0].w->data[k];  // nudge the live buffer
            double keep = wk;
            wk = keep + h;
            double fp = eval();
            wk = keep - h;
            double fm = eval();
            wk = keep;
            double fd = (fp - fm) / (2 * h);
            CHECK(std::abs(gw.data[k] - fd) / std::max(1.0, std::abs(fd)) < 1e-6);
        }
    }
}

TEST_CASE("later stages read earlier maps through a gradient barrier") {
    FcnnConfig cfg = tiny_config();  // two stages
    FcnnParams<double> params;
    Rng rng(53);
    params.init(cfg, rng);
    ag::Arr<double> img = random_image(rng, 1, 8);

    ag::Tape<double> tape;
    ParamBinder<double> bind(&tape);
    auto outs = fcnn_forward(ag::constant(img), cfg, params, bind);
    REQUIRE(outs.size() == 2);
    // Loss on stage 2 only.
    auto loss = ag::add(ag::add(ag::mean(ag::square(outs[1].conf)),
                                ag::mean(ag::square(outs[1].o2d))),
                        ag::mean(ag::square(outs[1].o3d)));
    tape.backward(loss);

    // Stage 1's head fed stage 2 only through the detached maps, so it must
    // see exactly zero; the shared trunk and stage 2's own head stay live.
    const auto& h0 = params.heads[0];
    for (const auto* p : {&h0.conf1, &h0.conf2, &h0.o2d1, &h0.o2d2, &h0.o3d1, &h0.o3d2}) {
        ag::Arr<double> gw = bind.grad_of(p->w), gb = bind.grad_of(p->b);
        for (auto v : gw.data) CHECK(v == 0.0);
        for (auto v : gb.data) CHECK(v == 0.0);
    }
    double trunk = 0.0, head2 = 0.0;
    ag::Arr<double> gt = bind.grad_of(params.trunk[0].w);
    for (auto v : gt.data) trunk += std::abs(v);
    ag::Arr<double> g2 = bind.grad_of(params.heads[1].conf2.w);
    for (auto v : g2.data) head2 += std::abs(v);
    CHECK(trunk > 0.0);
    CHECK(head2 > 0.0);
}

}  // TEST_SUITE
