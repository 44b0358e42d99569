#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "opose/extract.hpp"
#include "opose/train.hpp"

using namespace opose;

namespace {

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    REQUIRE(f.good());
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

FcnnConfig tiny_net() {
    FcnnConfig c;
    c.stages = 1;
    c.image_size = 32;
    c.map_size = 8;
    c.trunk_channels = {4, 6};
    c.head_channels = 4;
    return c;
}

SynthConfig tiny_data() {
    SynthConfig c;
    c.image_size = 32;
    c.map_size = 8;
    return c;
}

ExperimentConfig tiny_experiment() {
    ExperimentConfig cfg;
    cfg.net = tiny_net();
    cfg.batch_size = 4;
    cfg.step1.epochs = 3;
    cfg.step2.epochs = 1;
    cfg.lr_drop_at = 0.5;
    cfg.eval.count = 6;
    cfg.eval.repeats = 2;
    return cfg;
}

AugmentConfig identity_aug() {
    AugmentConfig a;
    a.scale_lo = 1.0;
    a.scale_hi = 1.0;
    a.translate_frac = 0.0;
    a.rot_deg = 0.0;
    a.flip_prob = 0.0;
    a.jitter_lo = 1.0;
    a.jitter_hi = 1.0;
    a.occlude = false;
    return a;
}

bool same_pose(const Pose3D& a, const Pose3D& b) {
    for (int j = 0; j < kJointCount; ++j)
        if (a.joints[j].x != b.joints[j].x || a.joints[j].y != b.joints[j].y ||
            a.joints[j].z != b.joints[j].z)
            return false;
    return true;
}

double pose_mpjpe(const Pose3D& a, const Pose3D& b) {
    double s = 0.0;
    for (int j = 0; j < kJointCount; ++j) s += (a.joints[j] - b.joints[j]).norm();
    return s / kJointCount;
}

std::vector<float> snapshot(const std::shared_ptr<ag::Arr<TrainScalar>>& p) { return p->data; }

}  // namespace

TEST_SUITE("train") {

TEST_CASE("config survives a json round trip") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.dataset = "some/path.bin";
    cfg.seed = 42;
    cfg.loss.lambda3 = 0.25;
    cfg.step2.aug.translate_frac = 0.45;
    cfg.occluder.occ_max_shapes = 5;
    cfg.eval.conditions.resize(3);

    ExperimentConfig back = config_from_json(config_to_json(cfg));
    CHECK(back.dataset == cfg.dataset);
    CHECK(back.seed == cfg.seed);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.net.stages == cfg.net.stages);
    CHECK(back.net.trunk_channels == cfg.net.trunk_channels);
    CHECK(back.loss.lambda3 == cfg.loss.lambda3);
    CHECK(back.lr_drop_at == cfg.lr_drop_at);
    CHECK(back.step1.epochs == cfg.step1.epochs);
    CHECK(back.step2.aug.translate_frac == cfg.step2.aug.translate_frac);
    CHECK(back.step2.aug.occlude == cfg.step2.aug.occlude);
    CHECK(back.occluder.occ_max_shapes == cfg.occluder.occ_max_shapes);
    CHECK(back.eval.count == cfg.eval.count);
    CHECK(back.eval.conditions.size() == cfg.eval.conditions.size());
    CHECK(config_to_json(back) == config_to_json(cfg));
}

TEST_CASE("empty json object yields the default config") {
    ExperimentConfig def;
    ExperimentConfig cfg = config_from_json("{}\n");
    CHECK(config_to_json(cfg) == config_to_json(def));
    CHECK(cfg.eval.conditions.size() == default_eval_conditions().size());
}

TEST_CASE("config parsing rejects unknown keys and bad values") {
    CHECK_THROWS_AS(config_from_json("{\"sede\": 3}"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json("{\"net\": {\"stage\": 2}}"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json("{\"step1\": {\"aug\": {\"rotdeg\": 10}}}"),
                    std::invalid_argument);
    CHECK_THROWS_AS(config_from_json("not json"), std::invalid_argument);
    CHECK_THROWS_AS(config_from_json("{\"batch_size\": 0}"), std::invalid_argument);
    // step 2 must cover at least the step-1 translation range
    CHECK_THROWS_AS(config_from_json("{\"step2\": {\"aug\": {\"translate_frac\": 0.1}}}"),
                    std::invalid_argument);
    ExperimentConfig bad = tiny_experiment();
    bad.step2.aug.translate_frac = 0.05;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("config file round trip") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.seed = 7;
    std::string path = temp_path("train_test_config.json");
    save_config(path, cfg);
    ExperimentConfig back = load_config(path);
    CHECK(config_to_json(back) == config_to_json(cfg));
    std::remove(path.c_str());
}

TEST_CASE("identity augmentation reproduces the stored sample") {
    SynthConfig dcfg = tiny_data();
    auto data = generate_dataset(dcfg, 11, 3);
    PerturbSpec occ;
    occ.kind = PerturbKind::occlusion;
    for (const SynthSample& base : data) {
        Rng rng(99);
        AugmentedSample a = augment_sample(base, dcfg, identity_aug(), occ, rng);
        CHECK(same_pose(a.sup.pose3d, base.pose3d));
        CHECK(a.sup.has_3d == base.has_3d);
        REQUIRE(a.sup.maps.data.size() == base.maps.data.size());
        int mismatch = 0;
        for (size_t i = 0; i < base.maps.data.size(); ++i)
            if (a.sup.maps.data[i] != base.maps.data[i]) ++mismatch;
        CHECK(mismatch == 0);
        CHECK(a.image.w == base.image.w);
        CHECK(a.image.h == base.image.h);
    }
}

TEST_CASE("forced flip mirrors the pose exactly and stays decodable") {
    SynthConfig dcfg;  // full-size maps so flipped limbs keep unclipped support
    auto data = generate_dataset(dcfg, 17, 8);
    AugmentConfig aug = identity_aug();
    aug.flip_prob = 1.0;
    PerturbSpec occ;
    const auto& topo = canonical_topology();
    const LimbLengths lengths = default_limb_lengths();

    bool decoded_one = false;
    for (const SynthSample& base : data) {
        Rng rng(5);
        AugmentedSample a = augment_sample(base, dcfg, aug, occ, rng);
        CHECK(same_pose(a.sup.pose3d, flip_pose(base.pose3d, topo)));

        // when every limb keeps support in frame, the maps decode back
        Pose2D p2;
        for (int j = 0; j < kJointCount; ++j)
            p2.joints[j] = dcfg.cam.project(a.sup.pose3d.joints[j]);
        round_pose(p2);
        bool inside = true;
        for (const Vec2& j : p2.joints)
            inside = inside && j.x >= 1.0 && j.x <= dcfg.map_size - 2.0 && j.y >= 1.0 &&
                     j.y <= dcfg.map_size - 2.0;
        uint16_t full = static_cast<uint16_t>((1u << kLimbCount) - 1u);
        if (!inside || visible_limbs(p2, dcfg.d, {dcfg.map_size, dcfg.map_size}) != full) continue;
        InitialEstimate est = decode_pose(a.sup.maps, lengths, topo);
        CHECK(pose_mpjpe(est.pose, a.sup.pose3d) < 0.1);
        decoded_one = true;
    }
    CHECK(decoded_one);
}

TEST_CASE("step-1 training is deterministic end to end") {
    SynthConfig dcfg = tiny_data();
    auto data = generate_dataset(dcfg, 23, 12);
    ExperimentConfig cfg = tiny_experiment();

    std::string csv_a = temp_path("train_test_loss_a.csv");
    std::string csv_b = temp_path("train_test_loss_b.csv");
    std::string ck_a = temp_path("train_test_model_a.ckpt");
    std::string ck_b = temp_path("train_test_model_b.ckpt");

    Model ma;
    ma.cfg = cfg.net;
    ma.init(cfg.seed);
    EpochLog la = train_step1(ma, data, dcfg, cfg);
    write_loss_csv(csv_a, la);
    save_model(ck_a, ma);

    Model mb;
    mb.cfg = cfg.net;
    mb.init(cfg.seed);
    EpochLog lb = train_step1(mb, data, dcfg, cfg);
    write_loss_csv(csv_b, lb);
    save_model(ck_b, mb);

    CHECK(slurp(csv_a) == slurp(csv_b));
    CHECK(slurp(ck_a) == slurp(ck_b));

    // 3 epochs, 1 stage: 3 map terms plus p3d/cp3d/total/lr per epoch
    std::string csv = slurp(csv_a);
    size_t lines = 0;
    for (char c : csv)
        if (c == '\n') ++lines;
    CHECK(lines == 1 + 3 * (3 + 4));
    CHECK(csv.find("epoch,stage,term,value\n") == 0);
    // lr drops by the configured factor at floor(0.5 * 3) = epoch 1
    CHECK(csv.find("0,-1,lr,0.0002\n") != std::string::npos);
    CHECK(csv.find("1,-1,lr,2e-05\n") != std::string::npos);
    CHECK(csv.find("2,-1,lr,2e-05\n") != std::string::npos);

    // losses actually moved
    REQUIRE(la.mean.size() == 3);
    CHECK(la.mean[0].total > 0.0);
    CHECK(std::isfinite(la.mean[2].total));

    std::remove(csv_a.c_str());
    std::remove(csv_b.c_str());
    std::remove(ck_a.c_str());
    std::remove(ck_b.c_str());
}

TEST_CASE("unused heads keep their exact parameters") {
    SynthConfig dcfg = tiny_data();
    dcfg.frac_3d = 0.0;  // nothing carries 3D supervision
    auto data = generate_dataset(dcfg, 29, 8);
    ExperimentConfig cfg = tiny_experiment();
    cfg.loss.lambda3 = 0.0;
    cfg.step1.epochs = 1;

    Model m;
    m.cfg = cfg.net;
    m.init(3);
    auto o3d1_w = snapshot(m.fcnn.heads[0].o3d1.w);
    auto o3d2_w = snapshot(m.fcnn.heads[0].o3d2.w);
    auto conf1_w = snapshot(m.fcnn.heads[0].conf1.w);
    auto o2d1_w = snapshot(m.fcnn.heads[0].o2d1.w);
    auto pc_in = snapshot(m.pc.w_in);
    auto pc_out = snapshot(m.pc.w_out);

    train_step1(m, data, dcfg, cfg);

    // no 3D term anywhere: the 3D head sees an exactly zero gradient
    CHECK(snapshot(m.fcnn.heads[0].o3d1.w) == o3d1_w);
    CHECK(snapshot(m.fcnn.heads[0].o3d2.w) == o3d2_w);
    // the corrector is excluded from step 1 entirely
    CHECK(snapshot(m.pc.w_in) == pc_in);
    CHECK(snapshot(m.pc.w_out) == pc_out);
    // supervised heads moved
    CHECK(snapshot(m.fcnn.heads[0].conf1.w) != conf1_w);
    CHECK(snapshot(m.fcnn.heads[0].o2d1.w) != o2d1_w);
}

TEST_CASE("the corrector loss never reaches the map network") {
    SynthConfig dcfg = tiny_data();
    auto data = generate_dataset(dcfg, 31, 8);
    ExperimentConfig cfg = tiny_experiment();

    Model m;
    m.cfg = cfg.net;
    m.init(5);
    CHECK(corrector_is_isolated(m, data.front(), dcfg));

    // step 2 trains the corrector away from its zero initialization
    auto pc_out_before = snapshot(m.pc.w_out);
    train_step2(m, data, dcfg, cfg);
    CHECK(snapshot(m.pc.w_out) != pc_out_before);
}

TEST_CASE("model checkpoints round trip bitwise") {
    ExperimentConfig cfg = tiny_experiment();
    Model m;
    m.cfg = cfg.net;
    m.init(7);
    std::string path = temp_path("train_test_model.ckpt");
    save_model(path, m);

    Model other;
    other.cfg = cfg.net;
    other.init(1234);  // different weights, same shapes
    load_model(path, other);
    // every tensor must come back bitwise
    CHECK(snapshot(other.fcnn.trunk[0].w) == snapshot(m.fcnn.trunk[0].w));
    CHECK(snapshot(other.fcnn.heads[0].conf2.b) == snapshot(m.fcnn.heads[0].conf2.b));
    CHECK(snapshot(other.pc.w_in) == snapshot(m.pc.w_in));
    CHECK(snapshot(other.pc.w_out) == snapshot(m.pc.w_out));

    Model wrong;
    wrong.cfg = cfg.net;
    wrong.cfg.head_channels = 5;  // same names, different shapes
    wrong.init(7);
    CHECK_THROWS_AS(load_model(path, wrong), std::invalid_argument);
    std::remove(path.c_str());
}

TEST_CASE("evaluation sweep is ordered, finite and repeatable") {
    SynthConfig dcfg = tiny_data();
    ExperimentConfig cfg = tiny_experiment();
    Model m;
    m.cfg = cfg.net;
    m.init(9);

    EvalConfig ec;
    ec.count = 6;
    ec.repeats = 2;
    PerturbSpec none;
    PerturbSpec shift;
    shift.kind = PerturbKind::translation;
    shift.tau = 0.4;
    ec.conditions = {none, shift};

    auto reports = eval_sweep(m, dcfg, ec, cfg.batch_size);
    REQUIRE(reports.size() == 2);
    CHECK(reports[0].name == "none");
    CHECK(reports[1].name == "translation_0.4");
    for (const ConditionReport& r : reports) {
        CHECK(std::isfinite(r.before.means.mpjpe));
        CHECK(std::isfinite(r.before.means.pa_mpjpe));
        CHECK(r.before.means.pck150 >= 0.0);
        CHECK(r.before.means.pck150 <= 1.0);
        CHECK(r.before.means.auc >= 0.0);
        CHECK(r.before.means.auc <= 1.0);
        // zero-initialized corrector output layer: complement acts as identity
        CHECK(r.after.means.mpjpe == doctest::Approx(r.before.means.mpjpe).epsilon(1e-6));
        double pj = 0.0;
        for (double v : r.before.per_joint) pj += v;
        CHECK(pj / kJointCount == doctest::Approx(r.before.means.mpjpe).epsilon(1e-9));
    }

    auto again = eval_sweep(m, dcfg, ec, cfg.batch_size);
    CHECK(again[0].before.means.mpjpe == reports[0].before.means.mpjpe);
    CHECK(again[1].before.means.mpjpe == reports[1].before.means.mpjpe);
    CHECK(again[1].after.means.auc == reports[1].after.means.auc);

    std::string csv = temp_path("train_test_eval.csv");
    std::string txt = temp_path("train_test_eval.txt");
    write_eval_csv(csv, reports);
    write_eval_text(txt, reports);
    std::string bytes = slurp(csv);
    CHECK(bytes.rfind("condition,phase,mpjpe,pa_mpjpe,pck150,auc,pelvis", 0) == 0);
    size_t lines = 0;
    for (char c : bytes)
        if (c == '\n') ++lines;
    CHECK(lines == 1 + 2 * reports.size());
    CHECK(bytes.find("\nnone,before,") != std::string::npos);
    CHECK(bytes.find("\ntranslation_0.4,after,") != std::string::npos);
    std::string text = slurp(txt);
    CHECK(text.find("condition") != std::string::npos);
    CHECK(text.find("translation_0.4") != std::string::npos);
    std::remove(csv.c_str());
    std::remove(txt.c_str());
}

TEST_CASE("default sweep conditions start clean and cover every family") {
    auto conds = default_eval_conditions();
    REQUIRE(!conds.empty());
    CHECK(conds[0].kind == PerturbKind::none);
    int trans = 0, bbox = 0, occ = 0, erase = 0;
    for (const PerturbSpec& c : conds) {
        c.validate();
        switch (c.kind) {
            case PerturbKind::translation: ++trans; break;
            case PerturbKind::bbox_noise: ++bbox; break;
            case PerturbKind::occlusion: ++occ; break;
            case PerturbKind::erase_rect:
            case PerturbKind::erase_circle:
            case PerturbKind::erase_edge: ++erase; break;
            default: break;
        }
    }
    CHECK(trans >= 2);
    CHECK(bbox >= 3);
    CHECK(occ >= 1);
    CHECK(erase == 3);
}

TEST_CASE("pose overlay and confidence sheet stay within bounds") {
    SynthConfig dcfg = tiny_data();
    auto data = generate_dataset(dcfg, 37, 1);
    const SynthSample& s = data.front();

    Image over = draw_pose_overlay(s.image, s.pose2d, dcfg.stride());
    CHECK(over.w == s.image.w);
    CHECK(over.h == s.image.h);
    // joints are marked white where they land inside the frame
    bool saw_white = false;
    for (const Vec2& j : s.pose2d.joints) {
        Vec2 p = map_to_image(j, dcfg.stride());
        int x = static_cast<int>(std::lround(p.x)), y = static_cast<int>(std::lround(p.y));
        if (x < 0 || y < 0 || x >= over.w || y >= over.h) continue;
        const uint8_t* px = over.px(x, y);
        if (px[0] == 255 && px[1] == 255 && px[2] == 255) saw_white = true;
    }
    CHECK(saw_white);

    Image sheet = confidence_sheet(s.maps, dcfg.stride());
    CHECK(sheet.w == 4 * dcfg.map_size * dcfg.stride());
    CHECK(sheet.h == 4 * dcfg.map_size * dcfg.stride());
    bool gray = true, nonzero = false;
    for (int y = 0; y < sheet.h; ++y)
        for (int x = 0; x < sheet.w; ++x) {
            const uint8_t* p = sheet.px(x, y);
            if (p[0] != p[1] || p[1] != p[2]) gray = false;
            if (p[0] != 0) nonzero = true;
        }
    CHECK(gray);
    CHECK(nonzero);
}

}  // TEST_SUITE
