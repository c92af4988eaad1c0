#include <gtest/gtest.h>

#include <random>

#include "cbn/error.hpp"
#include "cbn/regressor.hpp"
#include "test_util.hpp"

using namespace cbn;
using namespace cbn::regressor;

namespace {

Image smooth_random(int w, int h, std::mt19937_64& rng) { return gaussian_blur(test::random_image(w, h, rng), 1.5); }

struct LinearWorld {
    Eigen::MatrixXd J;
    Eigen::VectorXd phi_bar;
    std::vector<Eigen::VectorXd> features, deltas;
};

LinearWorld linear_world(int F, int N, int M, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, 1.0);
    LinearWorld w;
    w.J = Eigen::MatrixXd::NullaryExpr(F, N, [&] { return d(rng); });
    w.phi_bar = Eigen::VectorXd::NullaryExpr(F, [&] { return d(rng); });
    for (int i = 0; i < M; ++i) {
        const Eigen::VectorXd delta = Eigen::VectorXd::NullaryExpr(N, [&] { return 0.1 * d(rng); });
        w.deltas.push_back(delta);
        w.features.push_back(w.phi_bar + w.J * delta);
    }
    return w;
}

}  // namespace

TEST(Regressor, ConstantImageGivesZeroFeatures) {
    const Image img(40, 40, 0.37);
    const geometry::Landmarks lm{{10, 10}, {20, 25}, {0, 0}, {39.5, 12}};
    const ShapeIndexedFeature f = extract_features(img, lm, 20.0);
    EXPECT_EQ(f.descriptor_length, 128);
    ASSERT_EQ(f.phi.size(), 4 * 128);
    EXPECT_EQ(f.phi.cwiseAbs().maxCoeff(), 0.0);
}

TEST(Regressor, StepEdgeOrientationBins) {
    Image vertical(40, 40), horizontal(40, 40);
    for (int y = 0; y < 40; ++y)
        for (int x = 0; x < 40; ++x) {
            vertical.at(x, y) = x >= 20 ? 1.0 : 0.0;
            horizontal.at(x, y) = y >= 20 ? 1.0 : 0.0;
        }
    DescriptorConfig cfg;
    const geometry::Landmarks lm{{20, 20}};
    const Eigen::VectorXd fv = extract_features(vertical, lm, 20.0, cfg).phi;
    const Eigen::VectorXd fh = extract_features(horizontal, lm, 20.0, cfg).phi;
    double mass_v = 0.0, mass_h = 0.0;
    for (int i = 0; i < cfg.length(); ++i) {
        // Gradient along +x lands in bin 0, along +y in bin bins / 4.
        if (i % cfg.bins != 0) {
            EXPECT_EQ(fv(i), 0.0);
        }
        if (i % cfg.bins != cfg.bins / 4) {
            EXPECT_EQ(fh(i), 0.0);
        }
        mass_v += fv(i);
        mass_h += fh(i);
    }
    EXPECT_GT(mass_v, 0.0);
    EXPECT_NEAR(fv.norm(), 1.0, 1e-12);
    EXPECT_NEAR(fh.norm(), 1.0, 1e-12);
}

TEST(Regressor, BlocksAreNormalizedAndClipped) {
    std::mt19937_64 rng(1);
    const Image img = smooth_random(48, 48, rng);
    const geometry::Landmarks lm{{12, 14}, {30, 30}, {24, 9}};
    DescriptorConfig cfg;
    const Eigen::VectorXd f = extract_features(img, lm, 20.0, cfg).phi;
    for (int l = 0; l < 3; ++l) {
        const auto block = f.segment(l * cfg.length(), cfg.length());
        EXPECT_NEAR(block.norm(), 1.0, 1e-12);
        EXPECT_GE(block.minCoeff(), 0.0);
    }
}

TEST(Regressor, IntegerShiftInvariance) {
    std::mt19937_64 rng(2);
    const Image img = smooth_random(64, 64, rng);
    const int sx = 5, sy = -3;
    Image shifted(64, 64);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 64; ++x) shifted.at(x, y) = img.clamped(x - sx, y - sy);
    const geometry::Landmarks a{{28.3, 30.1}, {33.7, 35.2}};
    geometry::Landmarks b;
    for (Point2 q : a) b.push_back({q.x + sx, q.y + sy});
    const Eigen::VectorXd fa = extract_features(img, a, 16.0).phi;
    const Eigen::VectorXd fb = extract_features(shifted, b, 16.0).phi;
    EXPECT_LT((fa - fb).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Regressor, ExactLinearWorldRecovered) {
    std::mt19937_64 rng(3);
    const LinearWorld w = linear_world(60, 8, 80, rng);
    const StageRegressor st = fit_stage(w.features, w.deltas);
    EXPECT_LT((st.J - w.J).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((st.phi_bar - w.phi_bar).cwiseAbs().maxCoeff(), 1e-6);
    for (std::size_t i = 0; i < w.features.size(); ++i) {
        const Eigen::VectorXd pred = st.R * (w.features[i] - st.phi_bar);
        EXPECT_LT((pred - w.deltas[i]).cwiseAbs().maxCoeff(), 1e-6);
    }
}

TEST(Regressor, ProjectOutIsLeftInverse) {
    std::mt19937_64 rng(4);
    const LinearWorld w = linear_world(40, 6, 30, rng);
    const StageRegressor st = fit_stage(w.features, w.deltas);
    EXPECT_LT((st.R * st.J - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_LT((project_out(st.J) - st.R).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Regressor, ZeroResidualGivesZeroRegressor) {
    std::mt19937_64 rng(5);
    std::vector<Eigen::VectorXd> f, d;
    for (int i = 0; i < 10; ++i) {
        f.push_back(Eigen::VectorXd::Random(12));
        d.push_back(Eigen::VectorXd::Zero(4));
    }
    const StageRegressor st = fit_stage(f, d);
    EXPECT_EQ(st.J.cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(st.R.cwiseAbs().maxCoeff(), 0.0);
    Eigen::VectorXd mean = Eigen::VectorXd::Zero(12);
    for (const auto& v : f) mean += v / 10.0;
    EXPECT_LT((st.phi_bar - mean).cwiseAbs().maxCoeff(), 1e-14);
}

TEST(Regressor, InactiveColumnsGetZeroRows) {
    std::mt19937_64 rng(6);
    LinearWorld w = linear_world(30, 5, 40, rng);
    for (std::size_t i = 0; i < w.deltas.size(); ++i) {
        w.deltas[i](2) = 0.0;
        w.features[i] = w.phi_bar + w.J * w.deltas[i];
    }
    const StageRegressor st = fit_stage(w.features, w.deltas);
    EXPECT_EQ(st.J.col(2).cwiseAbs().maxCoeff(), 0.0);
    EXPECT_EQ(st.R.row(2).cwiseAbs().maxCoeff(), 0.0);
}

TEST(Regressor, DuplicatedDataGivesSameFit) {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> n(0.0, 1.0);
    std::vector<Eigen::VectorXd> f, d;
    for (int i = 0; i < 25; ++i) {
        f.push_back(Eigen::VectorXd::NullaryExpr(20, [&] { return n(rng); }));
        d.push_back(Eigen::VectorXd::NullaryExpr(4, [&] { return n(rng); }));
    }
    auto f2 = f, d2 = d;
    f2.insert(f2.end(), f.begin(), f.end());
    d2.insert(d2.end(), d.begin(), d.end());
    const StageRegressor a = fit_stage(f, d, 1e-3);
    const StageRegressor b = fit_stage(f2, d2, 1e-3);
    EXPECT_LT((a.J - b.J).cwiseAbs().maxCoeff(), 1e-10);
    EXPECT_LT((a.R - b.R).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Regressor, RankDeficientJacobianRejected) {
    Eigen::MatrixXd J = Eigen::MatrixXd::Zero(10, 3);
    J.col(0).setOnes();
    J.col(1).setOnes();
    J(0, 2) = 1.0;
    EXPECT_THROW(project_out(J), NumericError);
}

TEST(Regressor, PredictAtMeanFeatureKeepsEstimate) {
    std::mt19937_64 rng(8);
    const auto model = geometry::build_bases(test::frame_shapes(40, rng), 8, {});
    const Image img = smooth_random(48, 48, rng);
    geometry::DeformationCoeffs p(8);
    p.p(2) = 0.3;
    StageRegressor st;
    st.phi_bar = extract_features(img, model.landmarks(p, 2), model.frame.iod() * 4).phi;
    st.R = Eigen::MatrixXd::Random(8, st.phi_bar.size());
    st.J = Eigen::MatrixXd::Zero(st.phi_bar.size(), 8);
    const geometry::DeformationCoeffs q = predict_update(st, img, p, model, 2);
    EXPECT_EQ(q.p, p.p);
}

TEST(Regressor, PerturbationsAreMirroredAroundTruth) {
    std::mt19937_64 rng(9);
    const Image img(8, 8);
    std::vector<const Image*> imgs{&img, &img};
    std::vector<geometry::DeformationCoeffs> truths(2, geometry::DeformationCoeffs(3)), cur = truths;
    truths[0].p << 1, 2, 3;
    truths[1].p << -1, 0, 1;
    cur[0].p << 1.5, 2, 2;
    cur[1].p << -1, 0.5, 1;
    RegressorConfig cfg;
    cfg.perturbations = 4;
    const auto s = perturbation_samples(imgs, truths, cur, cfg, rng);
    ASSERT_EQ(s.size(), 12u);
    for (std::size_t i = 0; i < s.size(); i += 2) {
        EXPECT_LT((s[i].current.p + s[i + 1].current.p - 2 * s[i].truth.p).norm(), 1e-12);
    }
    // The current estimate itself is among the samples.
    bool found = false;
    for (const auto& x : s) found = found || (x.current.p - cur[0].p).norm() < 1e-15;
    EXPECT_TRUE(found);
}

TEST(Regressor, TrainStageLearnsSyntheticShifts) {
    // Faces shifted by a known translation: one stage should undo most of it.
    std::mt19937_64 rng(10);
    const auto model = geometry::build_bases(test::frame_shapes(60, rng), 6, {});
    synth::FaceSpec spec;
    std::vector<Image> images;
    std::vector<geometry::DeformationCoeffs> truths, currents;
    for (int i = 0; i < 60; ++i) {
        const synth::SynthFace f = synth::render_face(spec, rng);
        images.push_back(f.image);
        truths.push_back(model.fit(f.landmarks, 2));
        geometry::DeformationCoeffs c(6);
        currents.push_back(c);
    }
    std::vector<const Image*> ptrs;
    for (const Image& im : images) ptrs.push_back(&im);
    RegressorConfig cfg;
    cfg.perturbations = 6;
    const auto samples = perturbation_samples(ptrs, truths, currents, cfg, rng);
    const StageRegressor st = train_stage(samples, model, 2, cfg);
    std::vector<geometry::DeformationCoeffs> next;
    for (std::size_t i = 0; i < images.size(); ++i)
        next.push_back(predict_update(st, images[i], currents[i], model, 2, cfg.descriptor));
    const double before = mean_landmark_error(model, currents, truths, 2);
    const double after = mean_landmark_error(model, next, truths, 2);
    EXPECT_LT(after, before);
}

TEST(Regressor, Errors) {
    std::mt19937_64 rng(11);
    const auto model = geometry::build_bases(test::frame_shapes(40, rng), 8, {});
    EXPECT_THROW(train_stage({}, model, 0), DataError);
    EXPECT_THROW(fit_stage({}, {}), DataError);
    EXPECT_THROW(fit_stage({Eigen::VectorXd::Zero(3), Eigen::VectorXd::Zero(4)},
                           {Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2)}),
                 DimensionError);
    EXPECT_THROW(fit_stage({Eigen::VectorXd::Zero(3)}, {Eigen::VectorXd::Zero(2)}, -1.0), ArgumentError);
    DescriptorConfig bad;
    bad.bins = 0;
    EXPECT_THROW(extract_features(Image(4, 4), {{1, 1}}, 4.0, bad), ArgumentError);
    EXPECT_THROW(mean_landmark_error(model, {}, {}), DimensionError);
}
