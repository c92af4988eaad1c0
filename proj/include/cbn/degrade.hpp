#pragma once

// Low-resolution input synthesis: blur, bicubic downsample, additive noise.

#include <cstdint>

#include "cbn/geometry.hpp"
#include "cbn/image.hpp"

namespace cbn {

/// Exactly one of `target_pxiod` (inter-ocular distance of the result, in
/// pixels) and `factor` (downsampling factor >= 1) must be positive.
struct DegradationSpec {
    double target_pxiod = 0.0;
    double factor = 0.0;
    double sigma = 0.0;  // Gaussian blur before downsampling, source pixels
    double eta = 0.0;    // noise standard deviation on the 8-bit scale
    std::uint64_t seed = 0;

    void validate() const;
};

struct Degraded {
    Image image;
    geometry::Landmarks landmarks;
    Point2 eye_left, eye_right;
    double factor = 1.0;  // source pixels per output pixel
};

/// Output extent is the source extent divided by the factor (rounded, at
/// least 1 px); landmarks and eyes are divided by the factor.
Degraded degrade(const Image& image, Point2 eye_left, Point2 eye_right,
                 const geometry::Landmarks& landmarks, const DegradationSpec& spec);

}  // namespace cbn
