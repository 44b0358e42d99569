#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "opose/extract.hpp"
#include "opose/train.hpp"

using namespace opose;

namespace {

namespace fs = std::filesystem;

// Root-relative poses project straight through the dataset camera.
Pose2D project_pose(const Pose3D& pose, const OrthoCamera& cam) {
    Pose2D out;
    for (int j = 0; j < kJointCount; ++j) out.joints[j] = cam.project(pose.joints[j]);
    return out;
}

MapSet conf_only_maps(const ag::Tensor<TrainScalar>& conf, int w, int h) {
    MapSet maps(w, h);
    const TrainScalar* d = conf.data();
    for (int limb = 0; limb < kLimbCount; ++limb) {
        float* plane = maps.plane(limb, 0);
        for (int64_t i = 0; i < static_cast<int64_t>(w) * h; ++i)
            plane[i] = static_cast<float>(d[limb * static_cast<int64_t>(w) * h + i]);
    }
    return maps;
}

void write_manifest(const fs::path& dir, const std::vector<std::string>& lines) {
    std::ofstream f(dir / "manifest.txt", std::ios::binary);
    if (!f.good()) throw std::runtime_error("cannot open " + (dir / "manifest.txt").string());
    for (const std::string& l : lines) f << l << '\n';
}

void save_prediction_overlays(const Model& m, const std::vector<SynthSample>& data,
                              const SynthConfig& dcfg, const fs::path& dir, int count,
                              std::vector<std::string>& manifest) {
    count = std::min<int>(count, static_cast<int>(data.size()));
    for (int i = 0; i < count; ++i) {
        std::vector<const Image*> one{&data[i].image};
        BatchPrediction pred = predict(m, one);
        Pose2D p2 = project_pose(pred.after[0], dcfg.cam);
        Image over = draw_pose_overlay(data[i].image, p2, dcfg.stride());
        char name[48];
        std::snprintf(name, sizeof name, "pred_%02d.ppm", i);
        save_ppm((dir / name).string(), over);
        manifest.push_back(std::string(name) + ": predicted pose over input sample " +
                           std::to_string(i));
    }
}

int run(int argc, char** argv) {
    CLI::App app{"orientation-keypoint pose toolkit"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
    std::string gen_out = "dataset.bin";
    int64_t gen_count = 512;
    uint64_t gen_seed = 1;
    double gen_frac3d = 1.0;
    int gen_image = 64, gen_map = 16;
    gen->add_option("--out", gen_out, "output path");
    gen->add_option("--count", gen_count, "number of samples");
    gen->add_option("--seed", gen_seed, "master seed");
    gen->add_option("--frac-3d", gen_frac3d, "leading fraction with 3D labels");
    gen->add_option("--image", gen_image, "image side, pixels");
    gen->add_option("--map", gen_map, "map side, pixels");

    // train
    auto* tr = app.add_subcommand("train", "run one training step");
    std::string tr_config, tr_data, tr_out = "run", tr_init;
    int tr_step = 1;
    tr->add_option("--config", tr_config, "experiment json")->required();
    tr->add_option("--data", tr_data, "dataset file")->required();
    tr->add_option("--out", tr_out, "output directory");
    tr->add_option("--step", tr_step, "training step, 1 or 2")->check(CLI::Range(1, 2));
    tr->add_option("--init", tr_init, "checkpoint to start from");

    // eval
    auto* ev = app.add_subcommand("eval", "score one perturbation condition");
    std::string ev_config, ev_ckpt, ev_kind = "none", ev_fill = "mean_color", ev_csv;
    double ev_tau = 0.25, ev_sc = 0.0, ev_ss = 0.0;
    int ev_count = 0, ev_repeats = 0, ev_batch = 8;
    ev->add_option("--config", ev_config, "experiment json")->required();
    ev->add_option("--ckpt", ev_ckpt, "model checkpoint")->required();
    ev->add_option("--kind", ev_kind, "perturbation kind name");
    ev->add_option("--tau", ev_tau, "translation fraction");
    ev->add_option("--sigma-center", ev_sc, "bbox center noise");
    ev->add_option("--sigma-scale", ev_ss, "bbox scale noise");
    ev->add_option("--fill", ev_fill, "zero or mean_color");
    ev->add_option("--count", ev_count, "eval samples (0: config value)");
    ev->add_option("--repeats", ev_repeats, "perturbation redraws (0: config value)");
    ev->add_option("--batch", ev_batch, "inference batch size");
    ev->add_option("--csv", ev_csv, "also write a csv here");

    // sweep
    auto* sw = app.add_subcommand("sweep", "score every configured condition");
    std::string sw_config, sw_ckpt, sw_out = "eval";
    int sw_batch = 8;
    sw->add_option("--config", sw_config, "experiment json")->required();
    sw->add_option("--ckpt", sw_ckpt, "model checkpoint")->required();
    sw->add_option("--out", sw_out, "output directory");
    sw->add_option("--batch", sw_batch, "inference batch size");

    // render-maps
    auto* rm = app.add_subcommand("render-maps", "dump images for one dataset sample");
    std::string rm_data, rm_out = "maps", rm_ckpt, rm_config;
    int64_t rm_index = 0;
    rm->add_option("--data", rm_data, "dataset file")->required();
    rm->add_option("--index", rm_index, "sample index");
    rm->add_option("--out", rm_out, "output directory");
    rm->add_option("--ckpt", rm_ckpt, "model checkpoint for predictions");
    rm->add_option("--config", rm_config, "experiment json (with --ckpt)");

    // dump-config
    auto* dc = app.add_subcommand("dump-config", "print the default experiment json");
    std::string dc_out;
    dc->add_option("--out", dc_out, "write here instead of stdout");

    CLI11_PARSE(app, argc, argv);

    if (*gen) {
        SynthConfig cfg;
        cfg.image_size = gen_image;
        cfg.map_size = gen_map;
        cfg.frac_3d = gen_frac3d;
        cfg.validate();
        auto data = generate_dataset(cfg, gen_seed, gen_count);
        save_dataset(gen_out, data, cfg);
        std::printf("wrote %zu samples (%dx%d image, %dx%d maps) to %s\n", data.size(),
                    cfg.image_size, cfg.image_size, cfg.map_size, cfg.map_size, gen_out.c_str());
        return 0;
    }

    if (*tr) {
        ExperimentConfig cfg = load_config(tr_config);
        SynthConfig dcfg;
        auto data = load_dataset(tr_data, &dcfg);
        Model m;
        m.cfg = cfg.net;
        m.init(cfg.seed);
        if (!tr_init.empty()) load_model(tr_init, m);

        EpochLog log = tr_step == 1 ? train_step1(m, data, dcfg, cfg)
                                    : train_step2(m, data, dcfg, cfg);

        fs::create_directories(tr_out);
        fs::path out(tr_out);
        std::string step = std::to_string(tr_step);
        save_config((out / "config.json").string(), cfg);
        write_loss_csv((out / ("losses_step" + step + ".csv")).string(), log);
        save_model((out / ("step" + step + ".ckpt")).string(), m);

        std::vector<std::string> manifest;
        manifest.push_back("training step " + step + " on " + tr_data + " (" +
                           std::to_string(data.size()) + " samples)");
        manifest.push_back("config.json: experiment configuration");
        manifest.push_back("losses_step" + step + ".csv: per-epoch mean loss terms");
        manifest.push_back("step" + step + ".ckpt: model parameters after the step");
        if (!log.mean.empty()) {
            char line[96];
            std::snprintf(line, sizeof line, "final mean total loss: %.6g",
                          log.mean.back().total);
            manifest.push_back(line);
        }
        save_prediction_overlays(m, data, dcfg, out, 4, manifest);
        write_manifest(out, manifest);
        if (!log.mean.empty())
            std::printf("step %s done, %zu epochs, final total loss %.6g\n", step.c_str(),
                        log.mean.size(), log.mean.back().total);
        std::printf("artifacts in %s\n", tr_out.c_str());
        return 0;
    }

    if (*ev) {
        ExperimentConfig cfg = load_config(ev_config);
        Model m;
        m.cfg = cfg.net;
        m.init(cfg.seed);
        load_model(ev_ckpt, m);

        PerturbSpec spec;
        spec.kind = perturb_kind_from_name(ev_kind);
        spec.fill = ev_fill == "zero" ? FillMode::zero : FillMode::mean_color;
        spec.tau = ev_tau;
        spec.sigma_center = ev_sc;
        spec.sigma_scale = ev_ss;
        spec.validate();

        EvalConfig ec = cfg.eval;
        if (ev_count > 0) ec.count = ev_count;
        if (ev_repeats > 0) ec.repeats = ev_repeats;
        ec.conditions = {spec};

        SynthConfig dcfg;
        dcfg.image_size = cfg.net.image_size;
        dcfg.map_size = cfg.net.map_size;
        auto reports = eval_sweep(m, dcfg, ec, ev_batch);
        const ConditionReport& r = reports.front();
        std::printf("%s: before mpjpe %.2f pa %.2f pck150 %.4f auc %.4f\n", r.name.c_str(),
                    r.before.means.mpjpe, r.before.means.pa_mpjpe, r.before.means.pck150,
                    r.before.means.auc);
        std::printf("%s: after  mpjpe %.2f pa %.2f pck150 %.4f auc %.4f\n", r.name.c_str(),
                    r.after.means.mpjpe, r.after.means.pa_mpjpe, r.after.means.pck150,
                    r.after.means.auc);
        if (!ev_csv.empty()) write_eval_csv(ev_csv, reports);
        return 0;
    }

    if (*sw) {
        ExperimentConfig cfg = load_config(sw_config);
        Model m;
        m.cfg = cfg.net;
        m.init(cfg.seed);
        load_model(sw_ckpt, m);

        SynthConfig dcfg;
        dcfg.image_size = cfg.net.image_size;
        dcfg.map_size = cfg.net.map_size;
        auto reports = eval_sweep(m, dcfg, cfg.eval, sw_batch);

        fs::create_directories(sw_out);
        fs::path out(sw_out);
        write_eval_csv((out / "eval.csv").string(), reports);
        write_eval_text((out / "eval.txt").string(), reports);
        std::vector<std::string> manifest;
        manifest.push_back("evaluation of " + sw_ckpt + " over " +
                           std::to_string(reports.size()) + " conditions");
        manifest.push_back("eval.csv: per-condition metrics, before and after complementation");
        manifest.push_back("eval.txt: the same table formatted for reading");
        write_manifest(out, manifest);

        std::ifstream table(out / "eval.txt", std::ios::binary);
        std::printf("%s", std::string((std::istreambuf_iterator<char>(table)),
                                      std::istreambuf_iterator<char>())
                              .c_str());
        return 0;
    }

    if (*rm) {
        SynthConfig dcfg;
        auto data = load_dataset(rm_data, &dcfg);
        ag::check(rm_index >= 0 && rm_index < static_cast<int64_t>(data.size()),
                  "render-maps: index out of range");
        const SynthSample& s = data[static_cast<size_t>(rm_index)];

        fs::create_directories(rm_out);
        fs::path out(rm_out);
        save_ppm((out / "sample.ppm").string(), s.image);
        save_ppm((out / "gt_conf.ppm").string(), confidence_sheet(s.maps, dcfg.stride()));
        save_ppm((out / "gt_overlay.ppm").string(),
                 draw_pose_overlay(s.image, s.pose2d, dcfg.stride()));

        if (!rm_ckpt.empty()) {
            ag::check(!rm_config.empty(), "render-maps: --ckpt needs --config");
            ExperimentConfig cfg = load_config(rm_config);
            Model m;
            m.cfg = cfg.net;
            m.init(cfg.seed);
            load_model(rm_ckpt, m);

            ParamBinder<TrainScalar> bind(nullptr);
            std::vector<const Image*> one{&s.image};
            auto input = ag::constant(images_to_planes<TrainScalar>(one));
            auto stages = fcnn_forward(input, m.cfg, m.fcnn, bind);
            save_ppm((out / "pred_conf.ppm").string(),
                     confidence_sheet(conf_only_maps(stages.back().conf, dcfg.map_size,
                                                     dcfg.map_size),
                                      dcfg.stride()));
            BatchPrediction pred = predict(m, one);
            Pose2D p2 = project_pose(pred.after[0], dcfg.cam);
            save_ppm((out / "pred_overlay.ppm").string(),
                     draw_pose_overlay(s.image, p2, dcfg.stride()));
        }
        std::printf("wrote sample %lld renderings to %s\n",
                    static_cast<long long>(rm_index), rm_out.c_str());
        return 0;
    }

    if (*dc) {
        ExperimentConfig cfg;
        if (dc_out.empty())
            std::printf("%s", config_to_json(cfg).c_str());
        else
            save_config(dc_out, cfg);
        return 0;
    }

    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return run(argc, argv);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
}
