#include <gtest/gtest.h>

#include <random>

#include "cbn/error.hpp"
#include "cbn/prior.hpp"
#include "test_util.hpp"

using namespace cbn;
using namespace cbn::prior;

namespace {

std::vector<std::uint8_t> full_mask(int w, int h) { return std::vector<std::uint8_t>(static_cast<std::size_t>(w) * h, 1); }

Image blobs(int w, int h, const std::vector<Point2>& centers, double sigma) {
    Image img(w, h);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            for (Point2 c : centers) {
                const double dx = x + 0.5 - c.x, dy = y + 0.5 - c.y;
                img.at(x, y) += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
            }
    return img;
}

// Checks the partition invariants and returns the number of non-empty channels.
int check_partition(const PriorBuild& b, const std::vector<std::uint8_t>& mask) {
    const int C = b.channels.channels();
    const int w = b.preliminary.width();
    int nonempty = 0;
    std::vector<int> owner(b.preliminary.size(), -1);
    for (int c = 0; c < C; ++c) {
        const auto plane = b.channels.plane(0, c);
        bool any = false;
        for (std::size_t i = 0; i < plane.size(); ++i) {
            EXPECT_GE(plane[i], 0.0);
            if (plane[i] != 0.0) {
                EXPECT_EQ(owner[i], -1) << "pixel " << i << " in two channels";
                owner[i] = c;
                any = true;
            }
        }
        nonempty += any;
    }
    for (std::size_t i = 0; i < b.preliminary.size(); ++i) {
        const double v = b.preliminary.pixels()[i];
        const bool kept = mask[i] && v > b.threshold;
        double sum = 0.0;
        for (int c = 0; c < C; ++c) sum += b.channels.plane(0, c)[i];
        EXPECT_EQ(sum, kept ? v : 0.0) << "pixel (" << i % w << "," << i / w << ")";
    }
    return nonempty;
}

}  // namespace

TEST(Prior, ZeroResidualsGiveZeroPrior) {
    std::mt19937_64 rng(1);
    const auto model = geometry::build_bases(test::frame_shapes(40, rng), 8, {});
    const auto tmpl = geometry::make_template(model, 1);
    const auto field = geometry::eval_warp(tmpl, geometry::DeformationCoeffs(8));
    std::vector<PriorTrainingPair> pairs;
    for (int i = 0; i < 3; ++i) {
        const Image low = test::random_image(12, 12, rng);
        pairs.push_back({upscale(low, 2), low, field});
    }
    const PriorBuild b = build_prior(pairs, tmpl, {});
    for (double v : b.channels.data()) EXPECT_EQ(v, 0.0);
    for (double v : b.preliminary.pixels()) EXPECT_EQ(v, 0.0);
}

TEST(Prior, TwoBlobsTwoChannels) {
    const Image map = blobs(24, 24, {{6, 6}, {18, 16}}, 2.0);
    PriorBuildConfig cfg;
    cfg.channels = 2;
    const auto mask = full_mask(24, 24);
    const PriorBuild b = partition_prior(map, mask, cfg);
    EXPECT_EQ(check_partition(b, mask), 2);
    // Channel order is top to bottom: channel 0 holds the upper blob.
    EXPECT_GT(b.channels(0, 0, 6, 6), 0.0);
    EXPECT_EQ(b.channels(0, 1, 6, 6), 0.0);
    EXPECT_GT(b.channels(0, 1, 16, 18), 0.0);
    EXPECT_EQ(b.channels(0, 0, 16, 18), 0.0);
}

TEST(Prior, ThresholdAtPercentileOverDomain) {
    Image map(10, 10);
    for (int i = 0; i < 100; ++i) map.pixels()[i] = i;
    PriorBuildConfig cfg;
    cfg.channels = 1;
    cfg.magnitude_percentile_floor = 0.6;
    const PriorBuild b = partition_prior(map, full_mask(10, 10), cfg);
    // floor(0.6 * 99) = 59th smallest value.
    EXPECT_EQ(b.threshold, 59.0);
    int kept = 0;
    for (double v : b.channels.data()) kept += v != 0.0;
    EXPECT_EQ(kept, 40);
}

TEST(Prior, PartitionInvariantsOnRandomMaps) {
    std::mt19937_64 rng(2);
    std::uniform_int_distribution<int> chans(1, 12);
    std::uniform_real_distribution<double> floor(0.0, 0.9);
    for (int trial = 0; trial < 40; ++trial) {
        const int w = 10 + trial % 7, h = 9 + trial % 5;
        Image map = test::random_image(w, h, rng);
        std::vector<std::uint8_t> mask(map.size());
        std::bernoulli_distribution keep(0.8);
        for (auto& m : mask) m = keep(rng);
        PriorBuildConfig cfg;
        cfg.channels = chans(rng);
        cfg.magnitude_percentile_floor = floor(rng);
        const PriorBuild b = partition_prior(map, mask, cfg);
        int active = 0;
        for (std::size_t i = 0; i < mask.size(); ++i) active += mask[i] && map.pixels()[i] > b.threshold;
        const int nonempty = check_partition(b, mask);
        EXPECT_EQ(nonempty, std::min(cfg.channels, active));
    }
}

TEST(Prior, ManyComponentsMergeIntoC) {
    std::vector<Point2> centers;
    for (int i = 0; i < 6; ++i)
        for (int j = 0; j < 6; ++j) centers.push_back({4.0 + 8 * i, 4.0 + 8 * j});
    const Image map = blobs(48, 48, centers, 1.0);
    PriorBuildConfig cfg;
    cfg.channels = 5;
    const auto mask = full_mask(48, 48);
    EXPECT_EQ(check_partition(partition_prior(map, mask, cfg), mask), 5);
}

TEST(Prior, Deterministic) {
    std::mt19937_64 rng(3);
    const Image map = test::random_image(20, 20, rng);
    const auto mask = full_mask(20, 20);
    const PriorBuild a = partition_prior(map, mask, {});
    const PriorBuild b = partition_prior(map, mask, {});
    EXPECT_EQ(a.channels, b.channels);
    EXPECT_EQ(a.threshold, b.threshold);
}

TEST(Prior, BuildPriorAveragesWarpedResidualMagnitude) {
    std::mt19937_64 rng(4);
    const auto model = geometry::build_bases(test::frame_shapes(40, rng), 8, {});
    const auto tmpl = geometry::make_template(model, 1);
    const auto field = geometry::eval_warp(tmpl, geometry::DeformationCoeffs(8));
    std::vector<PriorTrainingPair> pairs;
    Image expect(tmpl.width, tmpl.height);
    for (int i = 0; i < 4; ++i) {
        const Image low = test::random_image(12, 12, rng);
        const Image high = test::random_image(24, 24, rng);
        const Image up = upscale(low, 2);
        for (std::size_t k = 0; k < expect.size(); ++k)
            expect.pixels()[k] += std::abs(high.pixels()[k] - up.pixels()[k]) / 4.0;
        pairs.push_back({high, low, field});
    }
    for (std::size_t k = 0; k < expect.size(); ++k)
        if (!tmpl.domain_mask[k]) expect.pixels()[k] = 0.0;
    PriorBuildConfig cfg;
    cfg.smoothing_radius = 0.0;
    const PriorBuild b = build_prior(pairs, tmpl, cfg);
    EXPECT_LT(test::max_abs_diff(b.preliminary, expect), 1e-12);
    check_partition(b, tmpl.domain_mask);
}

TEST(Prior, Errors) {
    std::mt19937_64 rng(5);
    const auto model = geometry::build_bases(test::frame_shapes(40, rng), 8, {});
    const auto tmpl = geometry::make_template(model, 1);
    const auto field = geometry::eval_warp(tmpl, geometry::DeformationCoeffs(8));
    EXPECT_THROW(build_prior({}, tmpl, {}), DataError);
    EXPECT_THROW(build_prior({{Image(24, 24), Image(10, 10), field}}, tmpl, {}), ShapeError);
    PriorBuildConfig cfg;
    cfg.channels = 0;
    EXPECT_THROW(partition_prior(Image(4, 4), full_mask(4, 4), cfg), ArgumentError);
    cfg.channels = 2;
    cfg.magnitude_percentile_floor = 1.0;
    EXPECT_THROW(partition_prior(Image(4, 4), full_mask(4, 4), cfg), ArgumentError);
    EXPECT_THROW(partition_prior(Image(4, 4), full_mask(3, 4), {}), ShapeError);
}
