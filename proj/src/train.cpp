#include "opose/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <optional>
#include <utility>

#include "ag/checkpoint.hpp"
#include "ag/optim.hpp"
#include "json.hpp"
#include "opose/extract.hpp"

namespace opose {

using json = nlohmann::json;

// ---- config ----

void AugmentConfig::validate() const {
    ag::check(scale_lo > 0.0 && scale_hi >= scale_lo, "AugmentConfig: bad zoom range");
    ag::check(translate_frac >= 0.0 && translate_frac <= 1.0,
              "AugmentConfig: translate_frac out of [0,1]");
    ag::check(rot_deg >= 0.0 && rot_deg <= 180.0, "AugmentConfig: rot_deg out of [0,180]");
    ag::check(flip_prob >= 0.0 && flip_prob <= 1.0, "AugmentConfig: flip_prob out of [0,1]");
    ag::check(jitter_lo > 0.0 && jitter_hi >= jitter_lo, "AugmentConfig: bad jitter range");
    ag::check(occlude_prob >= 0.0 && occlude_prob <= 1.0,
              "AugmentConfig: occlude_prob out of [0,1]");
}

void StepConfig::validate() const {
    ag::check(epochs >= 0, "StepConfig: negative epochs");
    ag::check(lr > 0.0, "StepConfig: lr must be positive");
    aug.validate();
}

void EvalConfig::validate() const {
    ag::check(count > 0, "EvalConfig: count must be positive");
    ag::check(repeats >= 1, "EvalConfig: repeats must be >= 1");
    for (const PerturbSpec& c : conditions) c.validate();
}

std::vector<PerturbSpec> default_eval_conditions() {
    std::vector<PerturbSpec> out;
    PerturbSpec p;
    out.push_back(p);  // kind none: the clean condition leads the table
    p = PerturbSpec{};
    p.kind = PerturbKind::occlusion;
    out.push_back(p);
    for (double tau : {0.25, 0.40}) {
        p = PerturbSpec{};
        p.kind = PerturbKind::translation;
        p.tau = tau;
        out.push_back(p);
    }
    for (PerturbKind k :
         {PerturbKind::erase_rect, PerturbKind::erase_circle, PerturbKind::erase_edge}) {
        p = PerturbSpec{};
        p.kind = k;
        out.push_back(p);
    }
    const double grid[][2] = {{0, 0}, {0.1, 0}, {0.2, 0}, {0, 0.1}, {0, 0.2}, {0.1, 0.1}, {0.2, 0.2}};
    for (const double* g : grid) {
        p = PerturbSpec{};
        p.kind = PerturbKind::bbox_noise;
        p.sigma_center = g[0];
        p.sigma_scale = g[1];
        out.push_back(p);
    }
    return out;
}

ExperimentConfig::ExperimentConfig() {
    step2.aug.translate_frac = 0.5;
    step2.aug.occlude = true;
    occluder.kind = PerturbKind::occlusion;
    eval.conditions = default_eval_conditions();
}

void ExperimentConfig::validate() const {
    ag::check(train_count >= 0, "ExperimentConfig: negative train_count");
    ag::check(batch_size >= 1, "ExperimentConfig: batch_size must be >= 1");
    ag::check(rms_decay > 0.0 && rms_decay < 1.0, "ExperimentConfig: rms_decay out of (0,1)");
    ag::check(rms_eps > 0.0, "ExperimentConfig: rms_eps must be positive");
    ag::check(lr_drop_at >= 0.0 && lr_drop_at <= 1.0, "ExperimentConfig: lr_drop_at out of [0,1]");
    ag::check(lr_drop_factor > 0.0 && lr_drop_factor <= 1.0,
              "ExperimentConfig: lr_drop_factor out of (0,1]");
    net.validate();
    loss.validate();
    step1.validate();
    step2.validate();
    occluder.validate();
    eval.validate();
    ag::check(step2.aug.translate_frac >= step1.aug.translate_frac,
              "ExperimentConfig: step-2 translation range must contain step 1's");
}

namespace {

void check_keys(const json& j, std::initializer_list<const char*> allowed, const char* where) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool known = false;
        for (const char* k : allowed)
            if (it.key() == k) {
                known = true;
                break;
            }
        if (!known)
            throw std::invalid_argument(std::string("config: unknown key '") + it.key() + "' in " +
                                        where);
    }
}

json aug_to_json(const AugmentConfig& a) {
    return {{"scale_lo", a.scale_lo},   {"scale_hi", a.scale_hi},
            {"translate_frac", a.translate_frac}, {"rot_deg", a.rot_deg},
            {"flip_prob", a.flip_prob}, {"jitter_lo", a.jitter_lo},
            {"jitter_hi", a.jitter_hi}, {"occlude", a.occlude},
            {"occlude_prob", a.occlude_prob}};
}

AugmentConfig aug_from_json(const json& j, AugmentConfig a, const char* where) {
    check_keys(j, {"scale_lo", "scale_hi", "translate_frac", "rot_deg", "flip_prob", "jitter_lo",
                   "jitter_hi", "occlude", "occlude_prob"},
               where);
    a.scale_lo = j.value("scale_lo", a.scale_lo);
    a.scale_hi = j.value("scale_hi", a.scale_hi);
    a.translate_frac = j.value("translate_frac", a.translate_frac);
    a.rot_deg = j.value("rot_deg", a.rot_deg);
    a.flip_prob = j.value("flip_prob", a.flip_prob);
    a.jitter_lo = j.value("jitter_lo", a.jitter_lo);
    a.jitter_hi = j.value("jitter_hi", a.jitter_hi);
    a.occlude = j.value("occlude", a.occlude);
    a.occlude_prob = j.value("occlude_prob", a.occlude_prob);
    return a;
}

json step_to_json(const StepConfig& s) {
    return {{"epochs", s.epochs}, {"lr", s.lr}, {"aug", aug_to_json(s.aug)}};
}

StepConfig step_from_json(const json& j, StepConfig s, const char* where) {
    check_keys(j, {"epochs", "lr", "aug"}, where);
    s.epochs = j.value("epochs", s.epochs);
    s.lr = j.value("lr", s.lr);
    if (j.contains("aug")) s.aug = aug_from_json(j.at("aug"), s.aug, where);
    return s;
}

json spec_to_json(const PerturbSpec& s) {
    return {{"kind", perturb_kind_name(s.kind)},
            {"fill", s.fill == FillMode::zero ? "zero" : "mean_color"},
            {"tau", s.tau},
            {"occ_min_shapes", s.occ_min_shapes},
            {"occ_max_shapes", s.occ_max_shapes},
            {"occ_min_frac", s.occ_min_frac},
            {"occ_max_frac", s.occ_max_frac},
            {"occ_noise", s.occ_noise},
            {"rect_frac", s.rect_frac},
            {"sigma_center", s.sigma_center},
            {"sigma_scale", s.sigma_scale}};
}

PerturbSpec spec_from_json(const json& j, const char* where) {
    check_keys(j, {"kind", "fill", "tau", "occ_min_shapes", "occ_max_shapes", "occ_min_frac",
                   "occ_max_frac", "occ_noise", "rect_frac", "sigma_center", "sigma_scale"},
               where);
    PerturbSpec s;
    s.kind = perturb_kind_from_name(j.value("kind", "none"));
    std::string fill = j.value("fill", "mean_color");
    if (fill == "zero")
        s.fill = FillMode::zero;
    else if (fill == "mean_color")
        s.fill = FillMode::mean_color;
    else
        throw std::invalid_argument("config: unknown fill mode '" + fill + "' in " + where);
    s.tau = j.value("tau", s.tau);
    s.occ_min_shapes = j.value("occ_min_shapes", s.occ_min_shapes);
    s.occ_max_shapes = j.value("occ_max_shapes", s.occ_max_shapes);
    s.occ_min_frac = j.value("occ_min_frac", s.occ_min_frac);
    s.occ_max_frac = j.value("occ_max_frac", s.occ_max_frac);
    s.occ_noise = j.value("occ_noise", s.occ_noise);
    s.rect_frac = j.value("rect_frac", s.rect_frac);
    s.sigma_center = j.value("sigma_center", s.sigma_center);
    s.sigma_scale = j.value("sigma_scale", s.sigma_scale);
    return s;
}

}  // namespace

std::string config_to_json(const ExperimentConfig& cfg) {
    json j;
    j["dataset"] = cfg.dataset;
    j["train_count"] = cfg.train_count;
    j["seed"] = cfg.seed;
    j["batch_size"] = cfg.batch_size;
    j["net"] = {{"stages", cfg.net.stages},
                {"image_size", cfg.net.image_size},
                {"map_size", cfg.net.map_size},
                {"trunk_channels", cfg.net.trunk_channels},
                {"head_channels", cfg.net.head_channels}};
    j["loss"] = {{"lambda1", cfg.loss.lambda1},
                 {"lambda2", cfg.loss.lambda2},
                 {"lambda3", cfg.loss.lambda3},
                 {"use_pose_loss", cfg.loss.use_pose_loss},
                 {"clamp_eps", cfg.loss.clamp_eps}};
    j["optim"] = {{"rms_decay", cfg.rms_decay},
                  {"rms_eps", cfg.rms_eps},
                  {"lr_drop_at", cfg.lr_drop_at},
                  {"lr_drop_factor", cfg.lr_drop_factor}};
    j["step1"] = step_to_json(cfg.step1);
    j["step2"] = step_to_json(cfg.step2);
    j["occluder"] = spec_to_json(cfg.occluder);
    json conds = json::array();
    for (const PerturbSpec& c : cfg.eval.conditions) conds.push_back(spec_to_json(c));
    j["eval"] = {{"count", cfg.eval.count},
                 {"data_seed", cfg.eval.data_seed},
                 {"repeats", cfg.eval.repeats},
                 {"perturb_seed", cfg.eval.perturb_seed},
                 {"conditions", std::move(conds)}};
    return j.dump(2) + "\n";
}

ExperimentConfig config_from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw std::invalid_argument(std::string("config: parse error: ") + e.what());
    }
    ExperimentConfig cfg;
    check_keys(j, {"dataset", "train_count", "seed", "batch_size", "net", "loss", "optim", "step1",
                   "step2", "occluder", "eval"},
               "the top level");
    cfg.dataset = j.value("dataset", cfg.dataset);
    cfg.train_count = j.value("train_count", cfg.train_count);
    cfg.seed = j.value("seed", cfg.seed);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    if (j.contains("net")) {
        const json& n = j.at("net");
        check_keys(n, {"stages", "image_size", "map_size", "trunk_channels", "head_channels"},
                   "net");
        cfg.net.stages = n.value("stages", cfg.net.stages);
        cfg.net.image_size = n.value("image_size", cfg.net.image_size);
        cfg.net.map_size = n.value("map_size", cfg.net.map_size);
        cfg.net.trunk_channels = n.value("trunk_channels", cfg.net.trunk_channels);
        cfg.net.head_channels = n.value("head_channels", cfg.net.head_channels);
    }
    if (j.contains("loss")) {
        const json& l = j.at("loss");
        check_keys(l, {"lambda1", "lambda2", "lambda3", "use_pose_loss", "clamp_eps"}, "loss");
        cfg.loss.lambda1 = l.value("lambda1", cfg.loss.lambda1);
        cfg.loss.lambda2 = l.value("lambda2", cfg.loss.lambda2);
        cfg.loss.lambda3 = l.value("lambda3", cfg.loss.lambda3);
        cfg.loss.use_pose_loss = l.value("use_pose_loss", cfg.loss.use_pose_loss);
        cfg.loss.clamp_eps = l.value("clamp_eps", cfg.loss.clamp_eps);
    }
    if (j.contains("optim")) {
        const json& o = j.at("optim");
        check_keys(o, {"rms_decay", "rms_eps", "lr_drop_at", "lr_drop_factor"}, "optim");
        cfg.rms_decay = o.value("rms_decay", cfg.rms_decay);
        cfg.rms_eps = o.value("rms_eps", cfg.rms_eps);
        cfg.lr_drop_at = o.value("lr_drop_at", cfg.lr_drop_at);
        cfg.lr_drop_factor = o.value("lr_drop_factor", cfg.lr_drop_factor);
    }
    if (j.contains("step1")) cfg.step1 = step_from_json(j.at("step1"), cfg.step1, "step1");
    if (j.contains("step2")) cfg.step2 = step_from_json(j.at("step2"), cfg.step2, "step2");
    if (j.contains("occluder")) cfg.occluder = spec_from_json(j.at("occluder"), "occluder");
    if (j.contains("eval")) {
        const json& e = j.at("eval");
        check_keys(e, {"count", "data_seed", "repeats", "perturb_seed", "conditions"}, "eval");
        cfg.eval.count = e.value("count", cfg.eval.count);
        cfg.eval.data_seed = e.value("data_seed", cfg.eval.data_seed);
        cfg.eval.repeats = e.value("repeats", cfg.eval.repeats);
        cfg.eval.perturb_seed = e.value("perturb_seed", cfg.eval.perturb_seed);
        if (e.contains("conditions")) {
            cfg.eval.conditions.clear();
            for (const json& c : e.at("conditions"))
                cfg.eval.conditions.push_back(spec_from_json(c, "eval.conditions"));
        }
    }
    cfg.validate();
    return cfg;
}

ExperimentConfig load_config(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f.good()) throw std::runtime_error("load_config: cannot open " + path);
    std::string text((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return config_from_json(text);
}

void save_config(const std::string& path, const ExperimentConfig& cfg) {
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw std::runtime_error("save_config: cannot open " + path);
    f << config_to_json(cfg);
    if (!f.good()) throw std::runtime_error("save_config: write failed for " + path);
}

// ---- model ----

void Model::init(uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    fcnn = FcnnParams<TrainScalar>{};
    fcnn.init(cfg, rng);
    pc = PcParams<TrainScalar>{};
    pc.init(rng);
}

namespace {

using Param = std::shared_ptr<ag::Arr<TrainScalar>>;

std::vector<std::pair<std::string, Param>> named_params(const Model& m, bool include_pc) {
    std::vector<std::pair<std::string, Param>> out;
    m.fcnn.visit([&](const std::string& n, const Param& p) { out.emplace_back("fcnn." + n, p); });
    if (include_pc) m.pc.visit([&](const std::string& n, const Param& p) { out.emplace_back(n, p); });
    return out;
}

}  // namespace

void save_model(const std::string& path, const Model& m) {
    auto named = named_params(m, true);
    std::vector<std::pair<std::string, const ag::Arr<TrainScalar>*>> tensors;
    tensors.reserve(named.size());
    for (const auto& [name, p] : named) tensors.emplace_back(name, p.get());
    ag::save_checkpoint(path, tensors);
}

void load_model(const std::string& path, Model& m) {
    auto stored = ag::load_checkpoint<TrainScalar>(path);
    auto named = named_params(m, true);
    ag::check(stored.size() == named.size(),
              "load_model: checkpoint has " + std::to_string(stored.size()) + " tensors, model has " +
                  std::to_string(named.size()));
    for (auto& [name, p] : named) {
        bool found = false;
        for (auto& [sname, arr] : stored) {
            if (sname != name) continue;
            ag::check(arr.shape == p->shape, "load_model: shape mismatch for '" + name + "'");
            p->data = arr.data;
            found = true;
            break;
        }
        ag::check(found, "load_model: checkpoint is missing tensor '" + name + "'");
    }
}

// ---- augmentation ----

AugmentedSample augment_sample(const SynthSample& base, const SynthConfig& data_cfg,
                               const AugmentConfig& aug, const PerturbSpec& occluder, Rng& rng) {
    const LimbTopology& topo = canonical_topology();

    // Draw every knob up front so the stream layout never depends on values.
    bool flip = rng.uniform() < aug.flip_prob;
    double theta = rng.uniform(-aug.rot_deg, aug.rot_deg) * M_PI / 180.0;
    double zoom = rng.uniform(aug.scale_lo, aug.scale_hi);
    double tx = rng.uniform(-aug.translate_frac, aug.translate_frac) * data_cfg.image_size;
    double ty = rng.uniform(-aug.translate_frac, aug.translate_frac) * data_cfg.image_size;
    double gain[3];
    for (double& g : gain) g = rng.uniform(aug.jitter_lo, aug.jitter_hi);
    bool occ = rng.uniform() < aug.occlude_prob;

    Pose3D pose = base.pose3d;  // root at the origin
    if (flip) pose = flip_pose(pose, topo);
    double c = std::cos(theta), s = std::sin(theta);
    for (Vec3& j : pose.joints) {
        double x = j.x, y = j.y;
        j.x = c * x - s * y;
        j.y = s * x + c * y;
    }
    round_pose(pose);

    SynthConfig cfg = data_cfg;
    cfg.cam.scale *= zoom;
    cfg.cam.pp.x += tx / cfg.stride();
    cfg.cam.pp.y += ty / cfg.stride();

    Pose2D pose2d;
    for (int j = 0; j < kJointCount; ++j) pose2d.joints[j] = cfg.cam.project(pose.joints[j]);
    round_pose(pose2d);
    PoseDecomposition dec = orientations_from_pose(pose, topo);

    AugmentedSample out;
    out.image = render_sample(pose2d, pose, dec.orients, cfg, rng);
    for (int64_t i = 0; i < static_cast<int64_t>(out.image.rgb.size()); i += 3)
        for (int ch = 0; ch < 3; ++ch) {
            long v = std::lround(out.image.rgb[i + ch] * gain[ch]);
            out.image.rgb[i + ch] = static_cast<uint8_t>(std::clamp(v, 0L, 255L));
        }
    if (aug.occlude && base.has_3d && occ) {
        BBox box = person_bbox(pose2d, cfg);
        std::vector<OccShape> shapes = sample_occlusion(box, occluder, rng);
        apply_occlusion(out.image, shapes, occluder.occ_noise, rng);
    }

    out.sup.maps = encode_maps(pose2d, dec.orients, topo, cfg.d, {cfg.map_size, cfg.map_size});
    out.sup.has_3d = base.has_3d;
    out.sup.pose3d = pose;
    return out;
}

// ---- training ----

namespace {

void fisher_yates(std::vector<int64_t>& order, Rng& rng) {
    for (int64_t i = static_cast<int64_t>(order.size()) - 1; i > 0; --i) {
        int64_t j = rng.uniform_int(0, static_cast<int>(i));
        std::swap(order[i], order[static_cast<size_t>(j)]);
    }
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
    if (acc.cm.empty()) {
        acc.cm.resize(b.cm.size(), 0.0);
        acc.om2d.resize(b.om2d.size(), 0.0);
        acc.om3d.resize(b.om3d.size(), 0.0);
    }
    for (size_t s = 0; s < b.cm.size(); ++s) {
        acc.cm[s] += b.cm[s];
        acc.om2d[s] += b.om2d[s];
        acc.om3d[s] += b.om3d[s];
    }
    acc.p3d += b.p3d;
    acc.cp3d += b.cp3d;
    acc.total += b.total;
}

void divide(LossBreakdown& acc, double n) {
    for (double& v : acc.cm) v /= n;
    for (double& v : acc.om2d) v /= n;
    for (double& v : acc.om3d) v /= n;
    acc.p3d /= n;
    acc.cp3d /= n;
    acc.total /= n;
}

EpochLog run_training(Model& m, const std::vector<SynthSample>& data, const SynthConfig& data_cfg,
                      const ExperimentConfig& cfg, const StepConfig& sc, int step_no,
                      bool train_pc) {
    cfg.validate();
    data_cfg.validate();
    ag::check(!data.empty(), "train: empty dataset");
    ag::check(data_cfg.image_size == m.cfg.image_size && data_cfg.map_size == m.cfg.map_size,
              "train: dataset sizes (" + std::to_string(data_cfg.image_size) + "/" +
                  std::to_string(data_cfg.map_size) + ") do not match the net config");
    int64_t n = cfg.train_count == 0
                    ? static_cast<int64_t>(data.size())
                    : std::min<int64_t>(cfg.train_count, static_cast<int64_t>(data.size()));

    const LimbTopology& topo = canonical_topology();
    const LimbLengths lengths = default_limb_lengths();
    const TrainScalar eps = static_cast<TrainScalar>(kOrientEps);

    auto named = named_params(m, train_pc);
    std::vector<ag::Arr<TrainScalar>*> params;
    params.reserve(named.size());
    for (auto& [name, p] : named) params.push_back(p.get());

    ag::RmsPropState<TrainScalar> opt;
    EpochLog log;
    const int drop_epoch = static_cast<int>(std::floor(cfg.lr_drop_at * sc.epochs));
    const uint64_t step_seed = Rng::derive(cfg.seed, static_cast<uint64_t>(step_no));
    std::vector<int64_t> order(static_cast<size_t>(n));
    for (int64_t i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;

    for (int e = 0; e < sc.epochs; ++e) {
        double lr = sc.lr * (e >= drop_epoch ? cfg.lr_drop_factor : 1.0);
        Rng shuffle_rng(Rng::derive(step_seed, 1, static_cast<uint64_t>(e)));
        fisher_yates(order, shuffle_rng);

        LossBreakdown epoch_mean;
        int64_t batches = 0;
        for (int64_t start = 0; start < n; start += cfg.batch_size) {
            int64_t stop = std::min<int64_t>(n, start + cfg.batch_size);
            std::vector<AugmentedSample> views;
            views.reserve(static_cast<size_t>(stop - start));
            for (int64_t k = start; k < stop; ++k) {
                int64_t idx = order[static_cast<size_t>(k)];
                Rng arng(Rng::derive(Rng::derive(step_seed, 2, static_cast<uint64_t>(e)),
                                     static_cast<uint64_t>(idx)));
                views.push_back(augment_sample(data[static_cast<size_t>(idx)], data_cfg, sc.aug,
                                               cfg.occluder, arng));
            }
            // 3D-supervised samples lead the batch so gated losses act on a prefix
            std::vector<const AugmentedSample*> ordered;
            ordered.reserve(views.size());
            for (const AugmentedSample& v : views)
                if (v.sup.has_3d) ordered.push_back(&v);
            for (const AugmentedSample& v : views)
                if (!v.sup.has_3d) ordered.push_back(&v);

            std::vector<const Image*> imgs;
            std::vector<const Supervision*> sups;
            for (const AugmentedSample* v : ordered) {
                imgs.push_back(&v->image);
                sups.push_back(&v->sup);
            }

            ag::Tape<TrainScalar> tape;
            ParamBinder<TrainScalar> bind(&tape);
            auto input = ag::constant(images_to_planes<TrainScalar>(imgs));
            auto stages = fcnn_forward(input, m.cfg, m.fcnn, bind);
            auto tgt = BatchTargets<TrainScalar>::from_supervision(sups);
            std::optional<ag::Tensor<TrainScalar>> init_pose, comp_pose;
            if (cfg.loss.use_pose_loss && tgt.n3d > 0) {
                auto conf3 = ag::slice(stages.back().conf, 0, 0, tgt.n3d);
                auto o3 = ag::slice(stages.back().o3d, 0, 0, tgt.n3d);
                auto dec = decode_pose_t(conf3, o3, lengths, topo, eps);
                init_pose = dec.pose;
                auto corr = pc_complement_t(dec.orients, dec.scores, m.pc, bind, eps);
                comp_pose = fk_integrate_t(corr, lengths, topo);
            }
            auto [loss_t, bd] = total_loss<TrainScalar>(stages, init_pose, comp_pose, tgt, cfg.loss);
            tape.backward(loss_t);

            std::vector<ag::Arr<TrainScalar>> gstore;
            gstore.reserve(named.size());
            for (auto& [name, p] : named) gstore.push_back(bind.grad_of(p));
            std::vector<const ag::Arr<TrainScalar>*> grads;
            grads.reserve(gstore.size());
            for (const ag::Arr<TrainScalar>& g : gstore) grads.push_back(&g);

            ag::RmsPropConfig<TrainScalar> rc{static_cast<TrainScalar>(lr),
                                              static_cast<TrainScalar>(cfg.rms_decay),
                                              static_cast<TrainScalar>(cfg.rms_eps)};
            ag::rmsprop_step(params, grads, opt, rc);
            accumulate(epoch_mean, bd);
            ++batches;
        }
        divide(epoch_mean, static_cast<double>(batches));
        log.mean.push_back(std::move(epoch_mean));
        log.lr.push_back(lr);
    }
    return log;
}

}  // namespace

EpochLog train_step1(Model& m, const std::vector<SynthSample>& data, const SynthConfig& data_cfg,
                     const ExperimentConfig& cfg) {
    return run_training(m, data, data_cfg, cfg, cfg.step1, 1, false);
}

EpochLog train_step2(Model& m, const std::vector<SynthSample>& data, const SynthConfig& data_cfg,
                     const ExperimentConfig& cfg) {
    ag::check(!data.empty(), "train: empty dataset");
    if (!corrector_is_isolated(m, data.front(), data_cfg))
        throw std::runtime_error("train_step2: the corrector loss reached a map-network parameter");
    return run_training(m, data, data_cfg, cfg, cfg.step2, 2, true);
}

bool corrector_is_isolated(const Model& m, const SynthSample& sample, const SynthConfig& data_cfg) {
    const LimbTopology& topo = canonical_topology();
    const LimbLengths lengths = default_limb_lengths();
    const TrainScalar eps = static_cast<TrainScalar>(kOrientEps);
    ag::check(data_cfg.image_size == m.cfg.image_size && data_cfg.map_size == m.cfg.map_size,
              "corrector_is_isolated: dataset sizes do not match the net config");

    ag::Tape<TrainScalar> tape;
    ParamBinder<TrainScalar> bind(&tape);
    std::vector<const Image*> imgs{&sample.image};
    auto input = ag::constant(images_to_planes<TrainScalar>(imgs));
    auto stages = fcnn_forward(input, m.cfg, m.fcnn, bind);
    auto dec = decode_pose_t(stages.back().conf, stages.back().o3d, lengths, topo, eps);
    auto corr = pc_complement_t(dec.orients, dec.scores, m.pc, bind, eps);
    auto comp = fk_integrate_t(corr, lengths, topo);

    ag::Arr<TrainScalar> gt({1, kJointCount, 3});
    for (int j = 0; j < kJointCount; ++j) {
        gt.data[j * 3 + 0] = static_cast<TrainScalar>(sample.pose3d.joints[j].x);
        gt.data[j * 3 + 1] = static_cast<TrainScalar>(sample.pose3d.joints[j].y);
        gt.data[j * 3 + 2] = static_cast<TrainScalar>(sample.pose3d.joints[j].z);
    }
    auto loss = l1_pose_loss(comp, ag::constant(std::move(gt)));
    tape.backward(loss);

    bool clean = true;
    m.fcnn.visit([&](const std::string&, const Param& p) {
        ag::Arr<TrainScalar> g = bind.grad_of(p);
        for (TrainScalar v : g.data)
            if (v != TrainScalar(0)) clean = false;
    });
    double pc_signal = 0.0;
    m.pc.visit([&](const std::string&, const Param& p) {
        ag::Arr<TrainScalar> g = bind.grad_of(p);
        for (TrainScalar v : g.data) pc_signal += std::abs(static_cast<double>(v));
    });
    return clean && pc_signal > 0.0;
}

// ---- prediction and evaluation ----

namespace {

std::vector<Pose3D> poses_from_tensor(const ag::Tensor<TrainScalar>& t) {
    const ag::Shape& s = t.shape();
    ag::check(s.size() == 3 && s[1] == kJointCount && s[2] == 3,
              "poses_from_tensor: want [N,17,3], got " + ag::shape_str(s));
    std::vector<Pose3D> out(static_cast<size_t>(s[0]));
    const TrainScalar* d = t.data();
    for (size_t i = 0; i < out.size(); ++i)
        for (int j = 0; j < kJointCount; ++j) {
            const TrainScalar* v = d + (i * kJointCount + j) * 3;
            out[i].joints[j] = {static_cast<double>(v[0]), static_cast<double>(v[1]),
                                static_cast<double>(v[2])};
        }
    return out;
}

}  // namespace

BatchPrediction predict(const Model& m, const std::vector<const Image*>& images) {
    ag::check(!images.empty(), "predict: empty batch");
    const LimbTopology& topo = canonical_topology();
    const LimbLengths lengths = default_limb_lengths();
    const TrainScalar eps = static_cast<TrainScalar>(kOrientEps);

    ParamBinder<TrainScalar> bind(nullptr);  // untracked: ops evaluate eagerly
    auto input = ag::constant(images_to_planes<TrainScalar>(images));
    auto stages = fcnn_forward(input, m.cfg, m.fcnn, bind);
    auto dec = decode_pose_t(stages.back().conf, stages.back().o3d, lengths, topo, eps);
    auto corr = pc_complement_t(dec.orients, dec.scores, m.pc, bind, eps);
    auto comp = fk_integrate_t(corr, lengths, topo);

    BatchPrediction out;
    out.before = poses_from_tensor(dec.pose);
    out.after = poses_from_tensor(comp);
    return out;
}

std::string condition_name(const PerturbSpec& spec) {
    char buf[64];
    switch (spec.kind) {
        case PerturbKind::translation:
            std::snprintf(buf, sizeof buf, "translation_%g", spec.tau);
            return buf;
        case PerturbKind::bbox_noise:
            std::snprintf(buf, sizeof buf, "bbox_%g_%g", spec.sigma_center, spec.sigma_scale);
            return buf;
        default:
            return perturb_kind_name(spec.kind);
    }
}

std::vector<ConditionReport> eval_sweep(const Model& m, const SynthConfig& data_cfg,
                                        const EvalConfig& eval, int batch_size) {
    eval.validate();
    ag::check(batch_size >= 1, "eval_sweep: batch_size must be >= 1");
    const LimbTopology& topo = canonical_topology();
    std::vector<PerturbSpec> conditions =
        eval.conditions.empty() ? default_eval_conditions() : eval.conditions;

    SynthConfig ec = data_cfg;
    ec.frac_3d = 1.0;  // every eval sample scores against 3D GT
    std::vector<SynthSample> samples = generate_dataset(ec, eval.data_seed, eval.count);

    std::vector<ConditionReport> out;
    out.reserve(conditions.size());
    for (size_t ci = 0; ci < conditions.size(); ++ci) {
        const PerturbSpec& spec = conditions[ci];
        EvalReport sum_before{}, sum_after{};
        for (int rep = 0; rep < eval.repeats; ++rep) {
            MetricAccumulator acc_before, acc_after;
            std::vector<Image> imgs(samples.size());
            for (size_t i = 0; i < samples.size(); ++i) {
                imgs[i] = samples[i].image;
                Rng prng(Rng::derive(Rng::derive(eval.perturb_seed, ci, static_cast<uint64_t>(rep)),
                                     static_cast<uint64_t>(i)));
                BBox box = person_bbox(samples[i].pose2d, ec);
                apply_perturbation(imgs[i], spec, box, prng);
            }
            for (size_t start = 0; start < imgs.size(); start += static_cast<size_t>(batch_size)) {
                size_t stop = std::min(imgs.size(), start + static_cast<size_t>(batch_size));
                std::vector<const Image*> ptrs;
                for (size_t i = start; i < stop; ++i) ptrs.push_back(&imgs[i]);
                BatchPrediction pred = predict(m, ptrs);
                for (size_t i = start; i < stop; ++i) {
                    Pose3D gt = root_centered(samples[i].pose3d, topo);
                    acc_before.add(root_centered(pred.before[i - start], topo), gt);
                    acc_after.add(root_centered(pred.after[i - start], topo), gt);
                }
            }
            EvalReport rb = acc_before.report(), ra = acc_after.report();
            sum_before.means.mpjpe += rb.means.mpjpe;
            sum_before.means.pa_mpjpe += rb.means.pa_mpjpe;
            sum_before.means.pck150 += rb.means.pck150;
            sum_before.means.auc += rb.means.auc;
            sum_after.means.mpjpe += ra.means.mpjpe;
            sum_after.means.pa_mpjpe += ra.means.pa_mpjpe;
            sum_after.means.pck150 += ra.means.pck150;
            sum_after.means.auc += ra.means.auc;
            for (int j = 0; j < kJointCount; ++j) {
                sum_before.per_joint[j] += rb.per_joint[j];
                sum_after.per_joint[j] += ra.per_joint[j];
            }
        }
        double r = static_cast<double>(eval.repeats);
        ConditionReport cr;
        cr.name = condition_name(spec);
        cr.spec = spec;
        cr.before.means = {sum_before.means.mpjpe / r, sum_before.means.pa_mpjpe / r,
                           sum_before.means.pck150 / r, sum_before.means.auc / r};
        cr.after.means = {sum_after.means.mpjpe / r, sum_after.means.pa_mpjpe / r,
                          sum_after.means.pck150 / r, sum_after.means.auc / r};
        for (int j = 0; j < kJointCount; ++j) {
            cr.before.per_joint[j] = sum_before.per_joint[j] / r;
            cr.after.per_joint[j] = sum_after.per_joint[j] / r;
        }
        out.push_back(std::move(cr));
    }
    return out;
}

// ---- artifact writers ----

void write_loss_csv(const std::string& path, const EpochLog& log) {
    ag::check(log.mean.size() == log.lr.size(), "write_loss_csv: epoch/lr length mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw std::runtime_error("write_loss_csv: cannot open " + path);
    f << "epoch,stage,term,value\n";
    char buf[96];
    auto row = [&](size_t e, int stage, const char* term, double v) {
        std::snprintf(buf, sizeof buf, "%zu,%d,%s,%.9g\n", e, stage, term, v);
        f << buf;
    };
    for (size_t e = 0; e < log.mean.size(); ++e) {
        const LossBreakdown& b = log.mean[e];
        for (size_t s = 0; s < b.cm.size(); ++s) {
            row(e, static_cast<int>(s), "conf", b.cm[s]);
            row(e, static_cast<int>(s), "o2d", b.om2d[s]);
            row(e, static_cast<int>(s), "o3d", b.om3d[s]);
        }
        row(e, -1, "p3d", b.p3d);
        row(e, -1, "cp3d", b.cp3d);
        row(e, -1, "total", b.total);
        row(e, -1, "lr", log.lr[e]);
    }
    if (!f.good()) throw std::runtime_error("write_loss_csv: write failed for " + path);
}

void write_eval_csv(const std::string& path, const std::vector<ConditionReport>& reports) {
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw std::runtime_error("write_eval_csv: cannot open " + path);
    const LimbTopology& topo = canonical_topology();
    f << "condition,phase,mpjpe,pa_mpjpe,pck150,auc";
    for (const std::string& name : topo.joints) f << ',' << name;
    f << '\n';
    char buf[128];
    auto row = [&](const ConditionReport& r, const char* phase, const EvalReport& e) {
        f << r.name << ',' << phase;
        std::snprintf(buf, sizeof buf, ",%.9g,%.9g,%.9g,%.9g", e.means.mpjpe, e.means.pa_mpjpe,
                      e.means.pck150, e.means.auc);
        f << buf;
        for (double v : e.per_joint) {
            std::snprintf(buf, sizeof buf, ",%.9g", v);
            f << buf;
        }
        f << '\n';
    };
    for (const ConditionReport& r : reports) {
        row(r, "before", r.before);
        row(r, "after", r.after);
    }
    if (!f.good()) throw std::runtime_error("write_eval_csv: write failed for " + path);
}

void write_eval_text(const std::string& path, const std::vector<ConditionReport>& reports) {
    std::ofstream f(path, std::ios::binary);
    if (!f.good()) throw std::runtime_error("write_eval_text: cannot open " + path);
    char buf[160];
    std::snprintf(buf, sizeof buf, "%-20s %-7s %9s %9s %8s %8s\n", "condition", "phase", "mpjpe",
                  "pa_mpjpe", "pck150", "auc");
    f << buf;
    for (const ConditionReport& r : reports) {
        std::snprintf(buf, sizeof buf, "%-20s %-7s %9.2f %9.2f %8.4f %8.4f\n", r.name.c_str(),
                      "before", r.before.means.mpjpe, r.before.means.pa_mpjpe,
                      r.before.means.pck150, r.before.means.auc);
        f << buf;
        std::snprintf(buf, sizeof buf, "%-20s %-7s %9.2f %9.2f %8.4f %8.4f\n", r.name.c_str(),
                      "after", r.after.means.mpjpe, r.after.means.pa_mpjpe, r.after.means.pck150,
                      r.after.means.auc);
        f << buf;
    }
    if (!f.good()) throw std::runtime_error("write_eval_text: write failed for " + path);
}

// ---- overlays ----

Image draw_pose_overlay(const Image& img, const Pose2D& pose2d_map, int stride) {
    ag::check(stride >= 1, "draw_pose_overlay: stride must be >= 1");
    Image out = img;
    const LimbTopology& topo = canonical_topology();
    auto put = [&](int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || y < 0 || x >= out.w || y >= out.h) return;
        uint8_t* p = out.px(x, y);
        p[0] = r;
        p[1] = g;
        p[2] = b;
    };
    for (int i = 0; i < kLimbCount; ++i) {
        auto [pj, cj] = topo.limbs[i];
        Vec2 a = map_to_image(pose2d_map.joints[pj], stride);
        Vec2 b = map_to_image(pose2d_map.joints[cj], stride);
        // a simple distinct-hue cycle
        uint8_t r = static_cast<uint8_t>(40 + (i * 53) % 216);
        uint8_t g = static_cast<uint8_t>(40 + (i * 101) % 216);
        uint8_t bl = static_cast<uint8_t>(40 + (i * 197) % 216);
        int steps = static_cast<int>(std::ceil(std::max(std::abs(b.x - a.x), std::abs(b.y - a.y)))) + 1;
        for (int k = 0; k <= steps; ++k) {
            double t = static_cast<double>(k) / steps;
            put(static_cast<int>(std::lround(a.x + (b.x - a.x) * t)),
                static_cast<int>(std::lround(a.y + (b.y - a.y) * t)), r, g, bl);
        }
    }
    for (const Vec2& j : pose2d_map.joints) {
        Vec2 p = map_to_image(j, stride);
        int x = static_cast<int>(std::lround(p.x)), y = static_cast<int>(std::lround(p.y));
        put(x, y, 255, 255, 255);
        put(x + 1, y, 255, 255, 255);
        put(x - 1, y, 255, 255, 255);
        put(x, y + 1, 255, 255, 255);
        put(x, y - 1, 255, 255, 255);
    }
    return out;
}

Image confidence_sheet(const MapSet& maps, int stride) {
    ag::check(stride >= 1, "confidence_sheet: stride must be >= 1");
    const int cols = 4, rows = 4;
    Image out(cols * maps.w * stride, rows * maps.h * stride);
    for (int limb = 0; limb < kLimbCount; ++limb) {
        int cx0 = (limb % cols) * maps.w * stride;
        int cy0 = (limb / cols) * maps.h * stride;
        const float* plane = maps.plane(limb, 0);
        for (int y = 0; y < maps.h * stride; ++y)
            for (int x = 0; x < maps.w * stride; ++x) {
                float v = plane[(y / stride) * maps.w + x / stride];
                auto g = static_cast<uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
                uint8_t* p = out.px(cx0 + x, cy0 + y);
                p[0] = p[1] = p[2] = g;
            }
    }
    return out;
}

}  // namespace opose
