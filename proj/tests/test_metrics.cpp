#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>

#include "cbn/error.hpp"
#include "cbn/io.hpp"
#include "cbn/metrics.hpp"
#include "test_util.hpp"

using namespace cbn;
using namespace cbn::metrics;

TEST(Metrics, HalfScaleOffsetIsSixDecibels) {
    const Image a(16, 12, 0.0), b(16, 12, 0.5);
    // MSE 0.25 on a unit peak: 10 log10(4).
    EXPECT_NEAR(psnr(a, b, full_region(16, 12)), 6.0206, 1e-4);
    EXPECT_NEAR(psnr(a, b, full_region(16, 12)), 20.0 * std::log10(2.0), 1e-12);
}

TEST(Metrics, PsnrIdenticalIsInfiniteAndSymmetric) {
    std::mt19937_64 rng(1);
    const Image a = test::random_image(20, 20, rng);
    const Image b = test::random_image(20, 20, rng);
    EXPECT_TRUE(std::isinf(psnr(a, a, full_region(20, 20))));
    EXPECT_EQ(psnr(a, b, full_region(20, 20)), psnr(b, a, full_region(20, 20)));
}

TEST(Metrics, PsnrScalingLaw) {
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> u(-0.05, 0.05);
    for (int trial = 0; trial < 20; ++trial) {
        const Image a = test::random_image(24, 18, rng);
        Image d(24, 18);
        for (double& v : d.pixels()) v = u(rng);
        const double c = 0.1 + 3.0 * std::uniform_real_distribution<double>(0, 1)(rng);
        Image b1 = a, bc = a;
        for (std::size_t i = 0; i < a.size(); ++i) {
            b1.pixels()[i] += d.pixels()[i];
            bc.pixels()[i] += c * d.pixels()[i];
        }
        const auto r = full_region(24, 18);
        EXPECT_NEAR(psnr(a, bc, r), psnr(a, b1, r) - 20.0 * std::log10(c), 1e-9);
    }
}

TEST(Metrics, PsnrOnlyCountsRegion) {
    Image a(10, 10, 0.2), b(10, 10, 0.2);
    FacialRegion r = full_region(10, 10);
    for (int x = 0; x < 10; ++x) {
        b.at(x, 0) = 0.9;
        r.mask[x] = 0;
    }
    b.at(5, 5) = 0.3;
    // A single pixel off by 0.1 among 90 counted pixels.
    EXPECT_NEAR(psnr(a, b, r), 10.0 * std::log10(90.0 / 0.01), 1e-9);
}

TEST(Metrics, SsimOfIdenticalIsOne) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        const Image a = test::random_image(17 + trial, 13, rng);
        EXPECT_NEAR(ssim(a, a, full_region(a.width(), a.height())), 1.0, 1e-12);
    }
}

TEST(Metrics, SsimOfConstantsIsLuminanceTerm) {
    const double u = 0.3, v = 0.7, c1 = 1e-4;
    const double expect = (2 * u * v + c1) / (u * u + v * v + c1);
    EXPECT_NEAR(ssim(Image(12, 12, u), Image(12, 12, v), full_region(12, 12)), expect, 1e-12);
}

TEST(Metrics, SsimSymmetricAndBounded) {
    std::mt19937_64 rng(4);
    const Image a = test::random_image(20, 20, rng);
    Image b = a;
    for (double& v : b.pixels()) v = 1.0 - v;
    const auto r = full_region(20, 20);
    const double s = ssim(a, b, r);
    EXPECT_NEAR(s, ssim(b, a, r), 1e-15);
    EXPECT_LT(s, 0.0);
    EXPECT_GE(s, -1.0);
    const Image c = test::random_image(20, 20, rng);
    EXPECT_LT(ssim(a, c, r), 1.0);
}

TEST(Metrics, RegionFromLandmarksIsConvexHull) {
    const geometry::Landmarks lm{{2, 2}, {8, 2}, {8, 6}, {2, 6}, {5, 4}};
    const FacialRegion r = region_from_landmarks(lm, 10, 10);
    // Pixel centers strictly inside [2,8] x [2,6].
    EXPECT_EQ(r.count(), 6u * 4u);
    EXPECT_TRUE(r.contains(2, 2));
    EXPECT_FALSE(r.contains(8, 2));
    EXPECT_FALSE(r.contains(1, 3));
    EXPECT_EQ(region_from_landmarks({}, 7, 5).count(), 35u);
    EXPECT_THROW(region_from_landmarks({{20, 20}, {21, 20}, {20, 21}}, 10, 10), DegenerateInputError);
}

TEST(Metrics, Errors) {
    EXPECT_THROW(psnr(Image(4, 4), Image(4, 5), full_region(4, 4)), ShapeError);
    EXPECT_THROW(ssim(Image(4, 4), Image(4, 4), full_region(5, 4)), ShapeError);
    FacialRegion empty = full_region(4, 4);
    std::fill(empty.mask.begin(), empty.mask.end(), 0);
    EXPECT_THROW(psnr(Image(4, 4), Image(4, 4), empty), ArgumentError);
}

TEST(Metrics, SummaryCapsInfiniteAndSkipsFailures) {
    std::vector<ScoreRow> rows(3);
    rows[0] = {"a", 30.0, false, 0.8, ""};
    rows[1] = {"b", std::numeric_limits<double>::infinity(), true, 1.0, ""};
    rows[2] = {"c", 0.0, false, 0.0, "missing"};
    const ScoreReport r = summarize(rows);
    EXPECT_EQ(r.scored, 2);
    EXPECT_EQ(r.failed, 1);
    EXPECT_DOUBLE_EQ(r.mean_psnr, (30.0 + kPsnrCap) / 2);
    EXPECT_DOUBLE_EQ(r.mean_ssim, 0.9);
    const std::string csv = r.csv();
    EXPECT_EQ(csv.rfind("id,psnr_db,psnr_capped,ssim,error\n", 0), 0u);
    EXPECT_NE(csv.find("b,100.000000,1,1.000000,"), std::string::npos);
    EXPECT_NE(csv.find("c,,,,\"missing\""), std::string::npos);
    EXPECT_NE(csv.find("mean,65.000000,,0.900000,"), std::string::npos);
}

TEST(Metrics, ScoreRunItemizesMissingPredictions) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / "cbn_metrics_score";
    fs::remove_all(dir);
    fs::create_directories(dir / "pred");
    std::mt19937_64 rng(5);
    io::Manifest truth;
    truth.base_dir = dir;
    for (int i = 0; i < 3; ++i) {
        const Image gt = test::random_image(16, 16, rng);
        const std::string id = "f" + std::to_string(i);
        io::write_pgm(dir / (id + ".pgm"), gt);
        truth.records.push_back({id, id + ".pgm", {4, 6}, {12, 6}, {}, "test"});
        if (i == 1) continue;
        // Reading back quantizes identically, so the first prediction is exact.
        io::write_pgm(dir / "pred" / (id + ".pgm"), i == 0 ? io::read_image(dir / (id + ".pgm")).y : Image(16, 16, 0.5));
    }
    const ScoreReport r = io::score_run(dir / "pred", truth, 2);
    ASSERT_EQ(r.rows.size(), 3u);
    EXPECT_TRUE(r.rows[0].psnr_capped);
    EXPECT_FALSE(r.rows[1].error.empty());
    EXPECT_TRUE(r.rows[2].error.empty());
    EXPECT_EQ(r.scored, 2);
    EXPECT_EQ(r.failed, 1);
    fs::remove_all(dir);
}
