#pragma once

// Shape-indexed appearance features and the per-cascade linear regressor that
// updates the deformation coefficients p.

#include <Eigen/Dense>
#include <random>
#include <vector>

#include "cbn/geometry.hpp"
#include "cbn/image.hpp"

namespace cbn::regressor {

struct DescriptorConfig {
    // Patch side relative to the inter-ocular distance at the sampled level.
    double patch_iod = 0.5;
    int cells = 4;
    int bins = 8;
    int samples_per_cell = 4;
    // Per-entry clip before the second normalization.
    double clip = 0.2;

    int length() const { return cells * cells * bins; }
};

struct ShapeIndexedFeature {
    Eigen::VectorXd phi;
    int descriptor_length = 0;
};

/// Orientation histograms of image gradients around every landmark, each
/// block L2-normalized (all-zero blocks stay zero). `iod_px` is the
/// inter-ocular distance in pixels of `image`.
ShapeIndexedFeature extract_features(const Image& image, const geometry::Landmarks& landmarks,
                                     double iod_px, const DescriptorConfig& cfg = {});

struct StageRegressor {
    Eigen::MatrixXd R;        // N x (L D)
    Eigen::VectorXd phi_bar;  // L D
    Eigen::MatrixXd J;        // (L D) x N
};

/// Pure solver: fits phi - phi_bar ~= J (p_hat - p) by ridge least squares
/// (lambda = ridge * trace(P^T P) / N) and sets R = (J^T J)^-1 J^T over the
/// non-zero columns of J. Zero columns get zero rows in R.
StageRegressor fit_stage(const std::vector<Eigen::VectorXd>& features,
                         const std::vector<Eigen::VectorXd>& deltas, double ridge = 1e-10);

// R recomputed from the stored J (same column handling as fit_stage).
Eigen::MatrixXd project_out(const Eigen::MatrixXd& J);

struct RegressorConfig {
    DescriptorConfig descriptor;
    double ridge = 1e-10;
    int perturbations = 10;
    // Include every sample's own current estimate besides the perturbations.
    bool include_current = true;
};

struct StageSample {
    const Image* image = nullptr;
    geometry::DeformationCoeffs truth;
    geometry::DeformationCoeffs current;
};

/// Extracts features at x(current) on each image (given at `level`) and fits
/// the stage. Needs at least N + 1 samples.
StageRegressor train_stage(const std::vector<StageSample>& samples,
                           const geometry::ShapeModel& model, int level,
                           const RegressorConfig& cfg = {});

/// p + R (phi(image; x(p)) - phi_bar) with the landmarks of p at `level`.
geometry::DeformationCoeffs predict_update(const StageRegressor& stage, const Image& image,
                                           const geometry::DeformationCoeffs& p,
                                           const geometry::ShapeModel& model, int level,
                                           const DescriptorConfig& cfg = {});

/// Training samples for one stage: for every image, `cfg.perturbations` draws
/// of truth + N(0, sigma_j) per coefficient, where sigma_j is the spread of
/// (truth - current) over the set, plus (optionally) the current estimate.
std::vector<StageSample> perturbation_samples(const std::vector<const Image*>& images,
                                              const std::vector<geometry::DeformationCoeffs>& truths,
                                              const std::vector<geometry::DeformationCoeffs>& currents,
                                              const RegressorConfig& cfg, std::mt19937_64& rng);

// Mean Euclidean landmark error (in pixels at `level`) of estimates vs truths.
double mean_landmark_error(const geometry::ShapeModel& model,
                           const std::vector<geometry::DeformationCoeffs>& estimates,
                           const std::vector<geometry::DeformationCoeffs>& truths, int level = 0);

}  // namespace cbn::regressor
