#pragma once

// Experiment orchestration.
//
// Training runs in two steps. Step 1 trains the map network under the usual
// geometric and color augmentations while the corrector stays frozen at
// zero (the identity on orientations). Step 2 fine-tunes on deliberately
// incomplete inputs: the view is shifted far enough to push limbs out of
// frame and textured occluders are painted over the subject, and the
// corrector now learns from its own pose loss, which by construction cannot
// reach the map network.
//
// Geometric augmentation transforms the skeleton and the camera and then
// re-renders, so the ground-truth maps stay exact instead of being warped.
// Everything is single threaded and derives per-item seeds, so a run is a
// pure function of (config, dataset, seed): loss CSVs, checkpoints and
// evaluation reports reproduce byte for byte on one platform.

#include <cstdint>
#include <string>
#include <vector>

#include "opose/loss.hpp"
#include "opose/metrics.hpp"
#include "opose/net.hpp"
#include "opose/perturb.hpp"
#include "opose/synthdata.hpp"

namespace opose {

using TrainScalar = float;

struct AugmentConfig {
    double scale_lo = 0.75, scale_hi = 1.25;  // camera zoom factor
    double translate_frac = 0.2;              // view shift, fraction of image size per axis
    double rot_deg = 30.0;                    // in-plane rotation about the view axis
    double flip_prob = 0.5;
    double jitter_lo = 0.8, jitter_hi = 1.2;  // per-channel color gain
    bool occlude = false;                     // paint occluders over 3D-supervised samples
    double occlude_prob = 1.0;                // chance a given sample actually gets one

    void validate() const;
};

struct StepConfig {
    int epochs = 0;
    double lr = 0.0;
    AugmentConfig aug;

    void validate() const;
};

struct EvalConfig {
    int64_t count = 128;     // evaluation set size, generated on the fly
    uint64_t data_seed = 99;
    int repeats = 5;         // independent corruption draws, averaged
    uint64_t perturb_seed = 7;
    std::vector<PerturbSpec> conditions;  // empty: the default sweep

    void validate() const;
};

std::vector<PerturbSpec> default_eval_conditions();

struct ExperimentConfig {
    std::string dataset;     // sample file produced by save_dataset
    int64_t train_count = 0; // 0: the whole file
    uint64_t seed = 1;
    int batch_size = 8;
    FcnnConfig net;
    LossConfig loss;
    double rms_decay = 0.99;
    double rms_eps = 1e-8;
    double lr_drop_at = 0.6;  // fraction of a step's epochs
    double lr_drop_factor = 0.1;
    StepConfig step1{12, 2e-4, {}};
    StepConfig step2{6, 1e-4, {}};
    PerturbSpec occluder;  // step-2 occluder draws
    EvalConfig eval;

    ExperimentConfig();
    void validate() const;
};

ExperimentConfig config_from_json(const std::string& text);
std::string config_to_json(const ExperimentConfig& cfg);
ExperimentConfig load_config(const std::string& path);
void save_config(const std::string& path, const ExperimentConfig& cfg);

// The trainable parameter set: map network plus corrector.
struct Model {
    FcnnConfig cfg;
    FcnnParams<TrainScalar> fcnn;
    PcParams<TrainScalar> pc;

    void init(uint64_t seed);
};

// Named-tensor checkpoint; loading requires a model whose shapes already match.
void save_model(const std::string& path, const Model& m);
void load_model(const std::string& path, Model& m);

// One augmented training view of a stored sample: transformed image plus the
// matching exact supervision.
struct AugmentedSample {
    Image image;
    Supervision sup;
};

AugmentedSample augment_sample(const SynthSample& base, const SynthConfig& data_cfg,
                               const AugmentConfig& aug, const PerturbSpec& occluder, Rng& rng);

struct EpochLog {
    std::vector<LossBreakdown> mean;  // one per epoch, batch-averaged raw terms
    std::vector<double> lr;           // learning rate used in each epoch
};

// Step 1: trains the map network, corrector frozen at zero.
EpochLog train_step1(Model& m, const std::vector<SynthSample>& data, const SynthConfig& data_cfg,
                     const ExperimentConfig& cfg);
// Step 2: fine-tunes on incomplete inputs; the corrector trains from its own
// loss. Verifies on the first batch that that loss moves no map-network
// parameter.
EpochLog train_step2(Model& m, const std::vector<SynthSample>& data, const SynthConfig& data_cfg,
                     const ExperimentConfig& cfg);

// Long-format CSV: epoch,stage,term,value. Map terms carry their stage
// index; pose terms, the total and the learning rate use stage -1.
void write_loss_csv(const std::string& path, const EpochLog& log);

// Exact-zero check that the corrector's pose loss cannot reach the map
// network: builds that loss alone on one sample and inspects every map
// parameter's gradient.
bool corrector_is_isolated(const Model& m, const SynthSample& sample, const SynthConfig& data_cfg);

// Decoded poses for a batch of images, before and after the corrector.
struct BatchPrediction {
    std::vector<Pose3D> before, after;
};

BatchPrediction predict(const Model& m, const std::vector<const Image*>& images);

struct ConditionReport {
    std::string name;
    PerturbSpec spec;
    EvalReport before, after;
};

std::string condition_name(const PerturbSpec& spec);

// Runs every eval condition over a generated evaluation set, `repeats`
// corruption draws each, and averages. Poses are root-centered before
// scoring. The clean condition comes first in the default list.
std::vector<ConditionReport> eval_sweep(const Model& m, const SynthConfig& data_cfg,
                                        const EvalConfig& eval, int batch_size);

void write_eval_csv(const std::string& path, const std::vector<ConditionReport>& reports);
void write_eval_text(const std::string& path, const std::vector<ConditionReport>& reports);

// Input image with the projected skeleton drawn over it.
Image draw_pose_overlay(const Image& img, const Pose2D& pose2d_map, int stride);

// Tiled grid of the 16 confidence planes, upscaled to image resolution.
Image confidence_sheet(const MapSet& maps, int stride);

}  // namespace opose
