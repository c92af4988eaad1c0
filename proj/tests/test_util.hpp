#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "cbn/cascade.hpp"
#include "cbn/geometry.hpp"
#include "cbn/image.hpp"
#include "cbn/nn.hpp"
#include "cbn/synth.hpp"

namespace cbn::test {

inline Tensor4 random_tensor(Shape4 shape, std::mt19937_64& rng, double scale = 1.0) {
    Tensor4 t(shape);
    std::normal_distribution<double> dist(0.0, scale);
    for (double& v : t.data()) v = dist(rng);
    return t;
}

inline Image random_image(int w, int h, std::mt19937_64& rng) {
    Image img(w, h);
    std::uniform_real_distribution<double> dist(0.0, 1.0);
    for (double& v : img.pixels()) v = dist(rng);
    return img;
}

inline double max_abs_diff(const Tensor4& a, const Tensor4& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

inline double max_abs_diff(const Image& a, const Image& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i)
        m = std::max(m, std::abs(a.pixels()[i] - b.pixels()[i]));
    return m;
}

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

/// Central differences on up to `samples` entries of every parameter, compared
/// with the gradients already accumulated in Parameter::grad. Returns the
/// worst relative error.
inline double finite_difference_check(std::span<nn::Parameter* const> params,
                                      const std::function<double()>& loss, double h,
                                      std::size_t samples, std::mt19937_64& rng) {
    double worst = 0.0;
    for (nn::Parameter* p : params) {
        std::vector<std::size_t> idx(p->value.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        if (idx.size() > samples) {
            std::shuffle(idx.begin(), idx.end(), rng);
            idx.resize(samples);
        }
        for (std::size_t i : idx) {
            const double orig = p->value[i];
            p->value[i] = orig + h;
            const double up = loss();
            p->value[i] = orig - h;
            const double down = loss();
            p->value[i] = orig;
            worst = std::max(worst, relative_error(p->grad[i], (up - down) / (2.0 * h)));
        }
    }
    return worst;
}

// Random synthetic shapes placed in the level-0 frame, with a small random
// similarity on top so every basis column sees variation.
inline std::vector<geometry::Landmarks> frame_shapes(int n, std::mt19937_64& rng,
                                                     const geometry::TemplateFrame& frame = {},
                                                     double pose_jitter = 0.05) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const Point2 mid = (frame.eye_left + frame.eye_right) * 0.5;
    std::vector<geometry::Landmarks> out;
    for (int i = 0; i < n; ++i) {
        const double s = frame.iod() * (1.0 + pose_jitter * u(rng));
        const double a = pose_jitter * u(rng);
        const Point2 t{pose_jitter * frame.iod() * u(rng), pose_jitter * frame.iod() * u(rng)};
        geometry::Landmarks pts = synth::sample_shape(rng);
        for (Point2& q : pts)
            q = mid + t + Point2{s * (std::cos(a) * q.x - std::sin(a) * q.y), s * (std::sin(a) * q.x + std::cos(a) * q.y)};
        out.push_back(std::move(pts));
    }
    return out;
}

// Rendered 48x48 faces with eyes 20 px apart, annotated.
inline std::vector<cascade::FaceRecord> synth_faces(int n, std::mt19937_64& rng,
                                                    const synth::FaceSpec& spec = {}) {
    std::vector<cascade::FaceRecord> out;
    for (int i = 0; i < n; ++i) {
        synth::SynthFace f = synth::render_face(spec, rng);
        out.push_back({"face" + std::to_string(i), std::move(f.image), f.eye_left, f.eye_right,
                       std::move(f.landmarks)});
    }
    return out;
}

// A configuration small enough to train in well under a second per stage.
inline cascade::CascadeConfig toy_config(int stages = 1) {
    cascade::CascadeConfig c;
    c.stages = stages;
    c.num_bases = 8;
    c.prior.channels = 2;
    c.first_depth = 3;
    c.later_depth = 3;
    c.gate_depth = 2;
    c.width_scale = 0.0625;
    c.schedule.epochs_common = 1;
    c.schedule.epochs_hf = 1;
    c.schedule.epochs_joint = 1;
    c.schedule.batch_size = 4;
    c.regressor.perturbations = 2;
    c.seed = 7;
    return c;
}

inline cascade::CascadeModel toy_model(int stages = 1, std::uint64_t seed = 1, int faces = 16) {
    std::mt19937_64 rng(seed);
    cascade::TrainingSets sets;
    sets.landmark_set = synth_faces(faces, rng);
    sets.hallucination_set = synth_faces(faces, rng);
    return cascade::train_cascade(sets, toy_config(stages));
}

}  // namespace cbn::test
