#pragma once

// The full pipeline: K stages, each updating the deformation coefficients,
// warping the prior, upscaling 2x and adding the bi-network residual.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "cbn/binet.hpp"
#include "cbn/geometry.hpp"
#include "cbn/prior.hpp"
#include "cbn/regressor.hpp"

namespace cbn::cascade {

struct BackProjectionConfig {
    bool enabled = true;
    int iterations = 3;
    double step = 1.0;
};

struct AblationConfig {
    binet::GateMode gate = binet::GateMode::Learned;
    // Every stage regresses p from the aligned input I_0 instead of I_{k-1}.
    bool frozen_correspondence = false;
    // One stage jumping straight from level 0 to level K.
    bool single_cascade = false;
};

struct TrainingDegradation {
    double sigma = 0.0;
    double eta = 0.0;
};

struct CascadeConfig {
    int stages = 4;
    // Level-0 canonical frame; its inter-ocular distance is the input pxIOD.
    geometry::TemplateFrame frame;
    int num_bases = 20;
    double template_dilation = 0.10;
    prior::PriorBuildConfig prior;
    int first_depth = 24;
    int later_depth = 12;
    int gate_depth = 6;
    double width_scale = 1.0;
    double gate_lr_multiplier = 10.0;
    binet::Schedule schedule;
    regressor::RegressorConfig regressor;
    BackProjectionConfig back_projection;
    AblationConfig ablation;
    TrainingDegradation degradation;
    std::uint64_t seed = 0;

    double input_pxiod() const { return frame.iod(); }
    double output_pxiod() const;
    void validate() const;
};

struct CascadeStage {
    int level = 1;        // resolution of this stage's output
    int input_level = 0;  // resolution of the image it upsamples
    int regressor_level = 0;
    geometry::MeanTemplate tmpl;
    bool has_regressor = false;
    regressor::StageRegressor regressor;
    binet::GatedBiNet net;

    int factor() const { return 1 << (level - input_level); }
};

struct CascadeModel {
    CascadeConfig config;
    geometry::ShapeModel shape;
    std::vector<CascadeStage> stages;

    int output_level() const { return stages.empty() ? 0 : stages.back().level; }
    int total_factor() const { return 1 << output_level(); }
};

struct StageTrace {
    int level = 0;
    geometry::DeformationCoeffs p_before;
    geometry::DeformationCoeffs p;
    geometry::Landmarks landmarks;  // x(p) at this stage's level
    Image upscaled;
    Image G_A, G_B, G_lambda, G;
    Image output;  // I_k after back-projection
};

struct TraceRecord {
    Similarity to_canonical;
    Image aligned;
    std::vector<StageTrace> stages;
};

struct HallucinationOutput {
    Image image;
    TraceRecord trace;
};

/// hi <- hi + step * up(lo - down(hi)), `iterations` times. The extent of
/// `hi` must be an integer multiple (>= 2) of `lo`.
Image back_project(const Image& hi, const Image& lo, int iterations, double step = 1.0);

/// Runs every stage on an image already in the canonical level-0 frame.
/// Returns I_K (unclamped); fills `trace` when given.
Image run_aligned(const CascadeModel& model, const Image& aligned, TraceRecord* trace = nullptr);

/// Aligns the face by its eyes, runs the stages, maps I_K back to the input
/// raster scaled by 2^K and clamps to [0, 1]. Pixels whose canonical position
/// falls outside the crop take the bicubic upscale of the input.
HallucinationOutput hallucinate(const CascadeModel& model, const Image& low, Point2 eye_left,
                                Point2 eye_right);

struct FaceRecord {
    std::string id;
    Image image;  // high resolution
    Point2 eye_left, eye_right;
    geometry::Landmarks landmarks;  // empty for unannotated faces
};

struct TrainingSets {
    std::vector<FaceRecord> landmark_set;       // annotated; regressors and priors
    std::vector<FaceRecord> hallucination_set;  // bi-network training
};

using ProgressFn = std::function<void(const std::string&)>;

CascadeModel train_cascade(const TrainingSets& sets, const CascadeConfig& config,
                           const ProgressFn& progress = {});

/// Stage levels of a configuration: (input_level, level) per stage.
std::vector<std::pair<int, int>> stage_levels(const CascadeConfig& config);

}  // namespace cbn::cascade
