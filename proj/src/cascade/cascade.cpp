#include "cbn/cascade.hpp"

#include <algorithm>
#include <cmath>

#include "cbn/degrade.hpp"

namespace cbn::cascade {
namespace {

using geometry::DeformationCoeffs;

std::uint64_t mix(std::uint64_t seed, std::uint64_t salt) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

void report(const ProgressFn& progress, const std::string& msg) {
    if (progress) progress(msg);
}

binet::BiNetConfig net_config(const CascadeConfig& cfg, int stage_index) {
    binet::BiNetConfig n;
    n.prior_channels = cfg.prior.channels;
    n.branch_depth = stage_index == 0 ? cfg.first_depth : cfg.later_depth;
    n.gate_depth = cfg.gate_depth;
    n.width_scale = cfg.width_scale;
    n.mode = cfg.ablation.gate;
    n.rates = stage_index == 0 ? binet::LearningRates::first_cascade()
                               : binet::LearningRates::later_cascade();
    n.gate_lr_multiplier = cfg.gate_lr_multiplier;
    return n;
}

bool uses_correspondence(const CascadeConfig& cfg) {
    return cfg.ablation.gate != binet::GateMode::CommonOnly;
}

// Warped prior for one image; empty when the net ignores it.
Tensor4 warped_prior(const CascadeStage& st, const DeformationCoeffs& p, int w, int h) {
    if (st.tmpl.prior.empty()) return {};
    return geometry::warp_template_to_image(st.tmpl.prior, geometry::eval_warp(st.tmpl, p), w, h);
}

struct StageStep {
    Image up;
    binet::HallucinationResult result;
    Image out;
};

StageStep apply_stage(const CascadeStage& st, const CascadeConfig& cfg, const Image& in,
                      const DeformationCoeffs& p) {
    StageStep s;
    s.up = upscale(in, st.factor());
    s.result = st.net.forward(s.up, warped_prior(st, p, s.up.width(), s.up.height()));
    s.out = s.up + s.result.G;
    const BackProjectionConfig& bp = cfg.back_projection;
    if (bp.enabled && bp.iterations > 0) s.out = back_project(s.out, in, bp.iterations, bp.step);
    return s;
}

// Per-face working state during training.
struct Working {
    Image current;                  // I at the current level
    std::vector<Image> levels;      // I at every level reached so far (index = level)
    std::vector<Image> truth;       // ground truth per level (index = level, 0 unused)
    DeformationCoeffs p;
    DeformationCoeffs p_hat;        // valid for annotated faces
    bool annotated = false;
};

Working prepare(const FaceRecord& face, const CascadeConfig& cfg, int max_level,
                const geometry::ShapeModel* shape, std::uint64_t noise_seed) {
    DegradationSpec spec;
    spec.target_pxiod = cfg.input_pxiod();
    spec.sigma = cfg.degradation.sigma;
    spec.eta = cfg.degradation.eta;
    spec.seed = noise_seed;
    const Degraded low = degrade(face.image, face.eye_left, face.eye_right, {}, spec);
    const geometry::AlignedFace aligned =
        geometry::similarity_init(low.eye_left, low.eye_right, low.image, cfg.frame);

    Working w;
    w.current = aligned.aligned;
    w.levels.push_back(aligned.aligned);
    w.truth.resize(static_cast<std::size_t>(max_level) + 1);
    const Similarity to_low = aligned.to_canonical.inverse();
    for (int k = 1; k <= max_level; ++k) {
        const geometry::TemplateFrame fk = cfg.frame.at_level(k);
        const Similarity down{std::ldexp(1.0, -k), 0.0, 0.0, 0.0};
        const Similarity up{low.factor, 0.0, 0.0, 0.0};
        w.truth[k] = resample(face.image, up.compose(to_low.compose(down)), fk.width, fk.height);
    }
    if (shape && !face.landmarks.empty()) {
        geometry::Landmarks canon;
        for (const Point2& l : face.landmarks)
            canon.push_back(aligned.to_canonical.apply(l * (1.0 / low.factor)));
        w.p_hat = shape->fit(canon, 0);
        w.annotated = true;
    }
    return w;
}

geometry::Landmarks canonical_landmarks(const FaceRecord& face, const CascadeConfig& cfg) {
    const double f = distance(face.eye_left, face.eye_right) / cfg.input_pxiod();
    const Similarity t = similarity_from_pairs(face.eye_left * (1.0 / f), face.eye_right * (1.0 / f),
                                               cfg.frame.eye_left, cfg.frame.eye_right);
    geometry::Landmarks out;
    for (const Point2& l : face.landmarks) out.push_back(t.apply(l * (1.0 / f)));
    return out;
}

void train_regressor(CascadeStage& st, const CascadeConfig& cfg, const geometry::ShapeModel& shape,
                     std::vector<Working>& lm, std::vector<Working>& hs, std::uint64_t seed) {
    std::vector<const Image*> imgs;
    std::vector<DeformationCoeffs> truths, currents;
    for (const Working& w : lm) {
        imgs.push_back(&w.levels.at(st.regressor_level));
        truths.push_back(w.p_hat);
        currents.push_back(w.p);
    }
    std::mt19937_64 rng(seed);
    const auto samples = regressor::perturbation_samples(imgs, truths, currents, cfg.regressor, rng);
    st.regressor = regressor::train_stage(samples, shape, st.regressor_level, cfg.regressor);
    st.has_regressor = true;
    for (auto* set : {&lm, &hs})
        for (Working& w : *set)
            w.p = regressor::predict_update(st.regressor, w.levels.at(st.regressor_level), w.p,
                                            shape, st.regressor_level, cfg.regressor.descriptor);
}

double landmark_error(const geometry::ShapeModel& shape, const std::vector<Working>& set) {
    std::vector<DeformationCoeffs> est, truth;
    for (const Working& w : set) {
        est.push_back(w.p);
        truth.push_back(w.p_hat);
    }
    return regressor::mean_landmark_error(shape, est, truth);
}

}  // namespace

double CascadeConfig::output_pxiod() const { return input_pxiod() * std::ldexp(1.0, stages); }

void CascadeConfig::validate() const {
    if (stages < 1) throw ArgumentError("cascade needs at least one stage");
    if (stages > 8) throw ArgumentError("cascade stage count above 8 is not supported");
    if (num_bases < geometry::kSimilarityColumns)
        throw ArgumentError("num_bases must be at least 4 (the similarity columns)");
    if (first_depth < 1 || later_depth < 1 || gate_depth < 1)
        throw ArgumentError("network depths must be positive");
    if (back_projection.iterations < 0) throw ArgumentError("back-projection iterations must be >= 0");
    if (prior.channels < 1) throw ArgumentError("prior channel count must be at least 1");
}

std::vector<std::pair<int, int>> stage_levels(const CascadeConfig& config) {
    if (config.ablation.single_cascade) return {{0, config.stages}};
    std::vector<std::pair<int, int>> out;
    for (int k = 1; k <= config.stages; ++k) out.emplace_back(k - 1, k);
    return out;
}

Image back_project(const Image& hi, const Image& lo, int iterations, double step) {
    if (iterations < 0) throw ArgumentError("back_project: iterations must be >= 0");
    if (lo.empty() || hi.empty()) throw ShapeError("back_project: empty image");
    const int f = hi.width() / lo.width();
    if (f < 2 || hi.width() != f * lo.width() || hi.height() != f * lo.height())
        throw ShapeError("back_project: high-res extent must be an integer multiple of the low-res one");
    Image out = hi;
    for (int i = 0; i < iterations; ++i) {
        const Image correction = upscale(lo - downscale(out, f), f);
        for (std::size_t j = 0; j < out.size(); ++j) out.pixels()[j] += step * correction.pixels()[j];
    }
    return out;
}

Image run_aligned(const CascadeModel& model, const Image& aligned, TraceRecord* trace) {
    const CascadeConfig& cfg = model.config;
    if (aligned.width() != cfg.frame.width || aligned.height() != cfg.frame.height)
        throw ShapeError("run_aligned: input is not in the canonical frame");
    DeformationCoeffs p(model.shape.num_bases());
    std::vector<Image> levels{aligned};
    Image current = aligned;
    if (trace) trace->aligned = aligned;
    for (const CascadeStage& st : model.stages) {
        StageTrace t;
        t.level = st.level;
        t.p_before = p;
        if (st.has_regressor) {
            p = regressor::predict_update(st.regressor, levels.at(st.regressor_level), p, model.shape,
                                          st.regressor_level, cfg.regressor.descriptor);
        }
        StageStep s = apply_stage(st, cfg, current, p);
        levels.resize(static_cast<std::size_t>(st.level) + 1);
        levels[st.level] = s.out;
        current = s.out;
        if (trace) {
            t.p = p;
            t.landmarks = model.shape.landmarks(p, st.level);
            t.upscaled = std::move(s.up);
            t.G_A = std::move(s.result.G_A);
            t.G_B = std::move(s.result.G_B);
            t.G_lambda = std::move(s.result.G_lambda);
            t.G = std::move(s.result.G);
            t.output = s.out;
            trace->stages.push_back(std::move(t));
        }
    }
    return current;
}

HallucinationOutput hallucinate(const CascadeModel& model, const Image& low, Point2 eye_left,
                                Point2 eye_right) {
    const CascadeConfig& cfg = model.config;
    if (model.stages.empty()) throw StateError("hallucinate: model has no stages");
    const double iod = distance(eye_left, eye_right);
    if (iod == 0.0) throw DegenerateInputError("hallucinate: eye positions coincide");
    if (iod < 0.8 * cfg.input_pxiod())
        throw ArgumentError("hallucinate: face is " + std::to_string(iod) +
                            " pxIOD, below the model's minimum of " +
                            std::to_string(0.8 * cfg.input_pxiod()));
    HallucinationOutput out;
    const geometry::AlignedFace aligned = geometry::similarity_init(eye_left, eye_right, low, cfg.frame);
    out.trace.to_canonical = aligned.to_canonical;
    const Image result = run_aligned(model, aligned.aligned, &out.trace);

    const int F = model.total_factor();
    if (aligned.to_canonical.is_identity() && low.width() == cfg.frame.width &&
        low.height() == cfg.frame.height) {
        out.image = result;
    } else {
        const Image fallback = upscale(low, F);
        out.image = Image(low.width() * F, low.height() * F);
        const double inv = 1.0 / F;
        for (int y = 0; y < out.image.height(); ++y) {
            for (int x = 0; x < out.image.width(); ++x) {
                const Point2 src{(x + 0.5) * inv, (y + 0.5) * inv};
                const Point2 u = aligned.to_canonical.apply(src) * static_cast<double>(F);
                const bool inside = u.x >= 0.0 && u.y >= 0.0 && u.x <= result.width() &&
                                    u.y <= result.height();
                out.image.at(x, y) = inside ? sample_bicubic(result, u) : fallback.at(x, y);
            }
        }
    }
    clamp_unit(out.image);
    return out;
}

CascadeModel train_cascade(const TrainingSets& sets, const CascadeConfig& config,
                           const ProgressFn& progress) {
    config.validate();
    if (sets.hallucination_set.empty()) throw DataError("train_cascade: hallucination set is empty");
    const bool correspondence = uses_correspondence(config);
    if (correspondence && sets.landmark_set.empty())
        throw DataError("train_cascade: landmark set is empty");

    CascadeModel model;
    model.config = config;
    const auto levels = stage_levels(config);
    const int max_level = levels.back().second;

    // Shape model from the annotated set in canonical coordinates.
    std::vector<geometry::Landmarks> shapes;
    for (const FaceRecord& f : sets.landmark_set) {
        if (f.landmarks.empty()) throw DataError("landmark set face '" + f.id + "' has no landmarks");
        shapes.push_back(canonical_landmarks(f, config));
    }
    if (!shapes.empty()) {
        model.shape = geometry::build_bases(shapes, config.num_bases, config.frame);
    } else {
        model.shape.frame = config.frame;
        model.shape.landmark_bases = Eigen::MatrixXd::Zero(0, 0);
    }
    report(progress, "shape model: " + std::to_string(model.shape.num_bases()) + " bases from " +
                         std::to_string(shapes.size()) + " shapes");

    std::vector<Working> lm, hs;
    for (std::size_t i = 0; i < sets.landmark_set.size() && correspondence; ++i)
        lm.push_back(prepare(sets.landmark_set[i], config, max_level, &model.shape, mix(config.seed, 2 * i)));
    for (std::size_t i = 0; i < sets.hallucination_set.size(); ++i)
        hs.push_back(prepare(sets.hallucination_set[i], config, max_level, nullptr, mix(config.seed, 2 * i + 1)));
    for (auto* set : {&lm, &hs})
        for (Working& w : *set) w.p = DeformationCoeffs(model.shape.num_bases());
    report(progress, "prepared " + std::to_string(lm.size()) + " annotated and " +
                         std::to_string(hs.size()) + " hallucination faces");

    for (std::size_t s = 0; s < levels.size(); ++s) {
        CascadeStage st;
        st.input_level = levels[s].first;
        st.level = levels[s].second;
        st.regressor_level = config.ablation.frozen_correspondence ? 0 : st.input_level;
        if (correspondence) {
            st.tmpl = geometry::make_template(model.shape, st.level, config.template_dilation);
        } else {
            const geometry::TemplateFrame fk = config.frame.at_level(st.level);
            st.tmpl.level = st.level;
            st.tmpl.width = fk.width;
            st.tmpl.height = fk.height;
        }

        if (correspondence) {
            const double before = landmark_error(model.shape, lm);
            train_regressor(st, config, model.shape, lm, hs, mix(config.seed, 1000 + s));
            report(progress, "stage " + std::to_string(s + 1) + ": regressor trained, landmark error " +
                                 std::to_string(before) + " -> " + std::to_string(landmark_error(model.shape, lm)) +
                                 " px (level 0)");

            std::vector<prior::PriorTrainingPair> pairs;
            for (const Working& w : lm)
                pairs.push_back({w.truth.at(st.level), w.levels.front(), geometry::eval_warp(st.tmpl, w.p_hat)});
            st.tmpl.prior = prior::build_prior(pairs, st.tmpl, config.prior).channels;
        }

        std::mt19937_64 init_rng(mix(config.seed, 2000 + s));
        st.net = binet::GatedBiNet(net_config(config, static_cast<int>(s)), static_cast<int>(s) + 1, init_rng);

        binet::BiNetDataset data;
        const int W = st.tmpl.width, H = st.tmpl.height;
        const int n = static_cast<int>(hs.size());
        data.up = Tensor4(n, 1, H, W);
        data.residual = Tensor4(n, 1, H, W);
        if (!st.tmpl.prior.empty()) data.prior = Tensor4(n, config.prior.channels, H, W);
        for (int i = 0; i < n; ++i) {
            const Working& w = hs[i];
            const Image up = upscale(w.current, st.factor());
            const Image& truth = w.truth.at(st.level);
            for (std::size_t j = 0; j < up.size(); ++j) {
                data.up.plane(i, 0)[j] = up.pixels()[j];
                data.residual.plane(i, 0)[j] = truth.pixels()[j] - up.pixels()[j];
            }
            if (!data.prior.empty()) {
                const Tensor4 pw = warped_prior(st, w.p, W, H);
                for (int c = 0; c < config.prior.channels; ++c) {
                    auto src = pw.plane(0, c);
                    std::copy(src.begin(), src.end(), data.prior.plane(i, c).begin());
                }
            }
        }
        binet::Schedule sched = config.schedule;
        sched.seed = mix(config.seed, 3000 + s);
        const binet::TrainReport rep = binet::train_three_step(st.net, data, sched);
        auto last = [](const std::vector<double>& v) { return v.empty() ? 0.0 : v.back(); };
        double bicubic = 0.0;
        for (double r : data.residual.data()) bicubic += r * r;
        report(progress, "stage " + std::to_string(s + 1) + ": bi-network trained, losses common " +
                             std::to_string(last(rep.common)) + " hf " + std::to_string(last(rep.hf)) +
                             " joint " + std::to_string(last(rep.joint)) + " (bicubic " +
                             std::to_string(bicubic / n) + ")");

        // Roll every face forward with the stage's own predictions.
        for (auto* set : {&lm, &hs}) {
            for (Working& w : *set) {
                StageStep step = apply_stage(st, config, w.current, w.p);
                w.levels.resize(static_cast<std::size_t>(st.level) + 1);
                w.levels[st.level] = step.out;
                w.current = std::move(step.out);
            }
        }
        model.stages.push_back(std::move(st));
    }
    return model;
}

}  // namespace cbn::cascade
