#pragma once

// Parametric 68-landmark faces rendered into grayscale crops. Used to build
// training and evaluation sets when no photographs are at hand.

#include <random>

#include "cbn/geometry.hpp"
#include "cbn/image.hpp"

namespace cbn::synth {

/// Mean shape in inter-ocular units: eye centers at (-0.5, 0) and (0.5, 0),
/// y pointing down.
geometry::Landmarks mean_shape();

// Mean shape plus random expression / identity modes and per-point jitter.
geometry::Landmarks sample_shape(std::mt19937_64& rng);

struct FaceSpec {
    int width = 48;
    int height = 48;
    // Eye centers of the rendered face before jitter.
    Point2 eye_left{14.0, 18.0};
    Point2 eye_right{34.0, 18.0};
    double max_rotation_deg = 0.0;
    double scale_jitter = 0.0;  // relative, uniform in [-j, j]
    double shift_jitter = 0.0;  // pixels, uniform in [-j, j] per axis
    int supersample = 4;
    double pixel_noise = 0.004;
};

struct SynthFace {
    Image image;
    geometry::Landmarks landmarks;  // pixel coordinates
    Point2 eye_left, eye_right;     // eye centers (means of the eye landmarks)
};

SynthFace render_face(const FaceSpec& spec, std::mt19937_64& rng);

/// Renders a face with the given landmarks (pixel coordinates) and random
/// appearance. `landmarks` must follow the 68-point layout.
Image render_shape(const geometry::Landmarks& landmarks, int width, int height,
                   std::mt19937_64& rng, int supersample = 4, double pixel_noise = 0.004);

}  // namespace cbn::synth
