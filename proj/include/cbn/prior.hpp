#pragma once

// C-channel high-frequency prior over the mean template.

#include <vector>

#include "cbn/geometry.hpp"
#include "cbn/image.hpp"
#include "cbn/tensor.hpp"

namespace cbn::prior {

struct PriorBuildConfig {
    int channels = 10;
    // Pixels at or below this quantile of the (smoothed) preliminary map, taken
    // over the template domain, are dropped.
    double magnitude_percentile_floor = 0.6;
    // Gaussian sigma, in template pixels, applied before thresholding.
    double smoothing_radius = 1.0;
    int kmeans_iterations = 50;
};

struct PriorTrainingPair {
    Image high;  // ground truth at the template's resolution
    Image low;   // input resolution; bicubic-upscaled to `high` by an integer factor
    geometry::WarpField field;  // ground-truth dense field at the template's level
};

struct PriorBuild {
    Tensor4 channels;   // (1, C, H, W) over the template raster
    Image preliminary;  // smoothed mean |residual| in template space, 0 outside the domain
    double threshold = 0.0;
};

/// Averages |high - bicubic(low)| in template space, smooths it, keeps the
/// pixels above the percentile floor and partitions them into exactly C
/// spatial clusters. Channel c carries the preliminary map on cluster c.
PriorBuild build_prior(const std::vector<PriorTrainingPair>& pairs,
                       const geometry::MeanTemplate& tmpl, const PriorBuildConfig& cfg);

/// Partition step on its own: threshold `preliminary` over `mask` and split the
/// surviving pixels into `channels` clusters.
PriorBuild partition_prior(const Image& preliminary, const std::vector<std::uint8_t>& mask,
                           const PriorBuildConfig& cfg);

}  // namespace cbn::prior
