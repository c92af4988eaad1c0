#include "cbn/degrade.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace cbn {

void DegradationSpec::validate() const {
    const bool by_target = target_pxiod > 0.0;
    const bool by_factor = factor > 0.0;
    if (by_target == by_factor)
        throw ArgumentError("degradation needs exactly one of a target pxIOD or a factor");
    if (by_factor && factor < 1.0) throw ArgumentError("degradation factor must be at least 1");
    if (sigma < 0.0 || eta < 0.0) throw ArgumentError("blur sigma and noise eta must be non-negative");
}

Degraded degrade(const Image& image, Point2 eye_left, Point2 eye_right,
                 const geometry::Landmarks& landmarks, const DegradationSpec& spec) {
    spec.validate();
    double f = spec.factor;
    if (spec.target_pxiod > 0.0) {
        const double iod = distance(eye_left, eye_right);
        if (!(iod > 0.0)) throw DegenerateInputError("degrade: eye positions coincide");
        if (spec.target_pxiod > iod)
            throw ArgumentError("degrade: target pxIOD " + std::to_string(spec.target_pxiod) +
                                " exceeds the source's " + std::to_string(iod));
        f = iod / spec.target_pxiod;
    }
    Degraded out;
    out.factor = f;
    const Image blurred = spec.sigma > 0.0 ? gaussian_blur(image, spec.sigma) : image;
    if (f == 1.0) {
        out.image = blurred;
    } else {
        const int w = std::max(1, static_cast<int>(std::lround(image.width() / f)));
        const int h = std::max(1, static_cast<int>(std::lround(image.height() / f)));
        out.image = resize_cubic(blurred, w, h, f, f);
    }
    if (spec.eta > 0.0) {
        std::mt19937_64 rng(spec.seed);
        std::normal_distribution<double> noise(0.0, spec.eta / 255.0);
        for (double& v : out.image.pixels()) v += noise(rng);
    }
    out.eye_left = eye_left * (1.0 / f);
    out.eye_right = eye_right * (1.0 / f);
    out.landmarks = landmarks;
    for (Point2& p : out.landmarks) p = p * (1.0 / f);
    return out;
}

}  // namespace cbn
