#include <gtest/gtest.h>

#include <cmath>

#include <random>

#include "cbn/binet.hpp"
#include "cbn/error.hpp"
#include "test_util.hpp"

using namespace cbn;
using namespace cbn::binet;

namespace {

BiNetConfig small_config(GateMode mode = GateMode::Learned) {
    BiNetConfig c;
    c.prior_channels = 2;
    c.branch_depth = 4;
    c.gate_depth = 3;
    c.width_scale = 0.0625;  // 4 / 8 / 2 channels
    c.mode = mode;
    return c;
}

Tensor4 random_prior(int c, int h, int w, std::mt19937_64& rng) {
    Tensor4 p(1, c, h, w);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (double& v : p.data()) v = u(rng);
    return p;
}

// Smooth images with a learnable residual: hi is a sharpened version of up.
BiNetDataset make_dataset(int n, int size, int channels, std::mt19937_64& rng) {
    std::vector<Image> ups, res;
    Tensor4 prior(n, channels, size, size);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        const Image base = gaussian_blur(test::random_image(size, size, rng), 1.0);
        const Image up = gaussian_blur(base, 1.0);
        ups.push_back(up);
        res.push_back(base - up);
    }
    for (double& v : prior.data()) v = u(rng);
    return {to_tensor(ups), prior, to_tensor(res)};
}

}  // namespace

TEST(BiNet, BranchPlans) {
    const std::vector<int> full = branch_plan(24, 1.0);
    ASSERT_EQ(full.size(), 24u);
    EXPECT_EQ(std::count(full.begin(), full.end(), 64), 4);
    EXPECT_EQ(std::count(full.begin(), full.end(), 128), 16);
    EXPECT_EQ(std::count(full.begin(), full.end(), 32), 3);
    EXPECT_EQ(full.back(), 1);
    EXPECT_EQ(branch_plan(12, 1.0), (std::vector<int>{64, 64, 64, 64, 128, 128, 128, 128, 32, 32, 32, 1}));
    EXPECT_EQ(branch_plan(8, 0.25), (std::vector<int>{16, 16, 32, 32, 32, 8, 8, 1}));
    EXPECT_EQ(branch_plan(1, 1.0), (std::vector<int>{1}));
    EXPECT_EQ(gate_plan(6, 1.0), (std::vector<int>{64, 64, 64, 64, 64, 1}));
    EXPECT_THROW(branch_plan(0, 1.0), ArgumentError);
    EXPECT_THROW(gate_plan(3, 0.0), ArgumentError);
}

TEST(BiNet, FuseIsConvexCombination) {
    EXPECT_EQ(fuse(0.0, 0.3, -7.0), 0.3);
    EXPECT_EQ(fuse(1.0, 0.3, -7.0), -7.0);
    EXPECT_DOUBLE_EQ(fuse(0.25, 1.0, 5.0), 2.0);
}

TEST(BiNet, GateAlgebraOnRandomNets) {
    for (int trial = 0; trial < 20; ++trial) {
        std::mt19937_64 rng(100 + trial);
        const GatedBiNet net(small_config(), 1, rng);
        const Image up = test::random_image(7, 6, rng);
        const Tensor4 prior = random_prior(2, 6, 7, rng);
        const HallucinationResult r = net.forward(up, prior);
        for (std::size_t i = 0; i < r.G.size(); ++i) {
            const double l = r.G_lambda.pixels()[i];
            EXPECT_GE(l, 0.0);
            EXPECT_LE(l, 1.0);
            EXPECT_EQ(r.G.pixels()[i], (1.0 - l) * r.G_A.pixels()[i] + l * r.G_B.pixels()[i]);
        }
    }
}

TEST(BiNet, FixedGateModesReproduceBranch) {
    std::mt19937_64 rng(1);
    const Image up = test::random_image(8, 8, rng);
    const Tensor4 prior = random_prior(2, 8, 8, rng);
    const GatedBiNet common(small_config(GateMode::CommonOnly), 1, rng);
    EXPECT_FALSE(common.has_hf());
    EXPECT_FALSE(common.has_gate());
    const HallucinationResult a = common.forward(up, Tensor4());
    EXPECT_EQ(a.G, a.G_A);
    for (double v : a.G_lambda.pixels()) EXPECT_EQ(v, 0.0);

    const GatedBiNet hf(small_config(GateMode::HighFrequencyOnly), 1, rng);
    EXPECT_FALSE(hf.has_common());
    const HallucinationResult b = hf.forward(up, prior);
    EXPECT_EQ(b.G, b.G_B);
    for (double v : b.G_lambda.pixels()) EXPECT_EQ(v, 1.0);
}

TEST(BiNet, TapeMatchesInferencePath) {
    std::mt19937_64 rng(2);
    GatedBiNet net(small_config(), 1, rng);
    const Image up = test::random_image(9, 5, rng);
    const Tensor4 prior = random_prior(2, 5, 9, rng);
    const HallucinationResult r = net.forward(up, prior);
    nn::Tape tape;
    const auto out = net.record(tape, to_tensor(up), prior, true, true, true);
    EXPECT_EQ(from_tensor(tape.value(out.g)), r.G);
    EXPECT_EQ(from_tensor(tape.value(out.ga)), r.G_A);
    EXPECT_EQ(from_tensor(tape.value(out.gb)), r.G_B);
    EXPECT_EQ(from_tensor(tape.value(out.lambda)), r.G_lambda);
}

TEST(BiNet, ForwardValidatesPrior) {
    std::mt19937_64 rng(3);
    const GatedBiNet net(small_config(), 1, rng);
    const Image up(6, 6);
    EXPECT_THROW(net.forward(up, Tensor4(1, 3, 6, 6)), ShapeError);
    EXPECT_THROW(net.forward(up, Tensor4(1, 2, 5, 6)), ShapeError);
}

TEST(BiNet, WithLayersChecksChain) {
    std::mt19937_64 rng(4);
    const BiNetConfig cfg = small_config(GateMode::CommonOnly);
    std::vector<nn::ConvLayer> ok{nn::make_conv_layer(1, 3, rng, "a"), nn::make_conv_layer(3, 1, rng, "b")};
    EXPECT_NO_THROW(GatedBiNet::with_layers(cfg, 1, ok, {}, {}));
    std::vector<nn::ConvLayer> broken{nn::make_conv_layer(1, 3, rng, "a"), nn::make_conv_layer(2, 1, rng, "b")};
    EXPECT_THROW(GatedBiNet::with_layers(cfg, 1, broken, {}, {}), ShapeError);
    std::vector<nn::ConvLayer> wide{nn::make_conv_layer(1, 2, rng, "a")};
    EXPECT_THROW(GatedBiNet::with_layers(cfg, 1, wide, {}, {}), ShapeError);
}

TEST(BiNet, LossExamples) {
    std::mt19937_64 rng(5);
    const Image hi = test::random_image(5, 4, rng);
    const Image up = test::random_image(5, 4, rng);
    EXPECT_EQ(loss_common(hi - up, hi, up), 0.0);
    // Zero prediction: the loss is the residual energy.
    double energy = 0.0;
    for (std::size_t i = 0; i < hi.size(); ++i) energy += std::pow(hi.pixels()[i] - up.pixels()[i], 2);
    EXPECT_NEAR(loss_common(Image(5, 4), hi, up), energy, 1e-12);
    // Two all-ones prior channels count the residual twice; a zero prior ignores it.
    EXPECT_NEAR(loss_hf(Image(5, 4), hi, up, Tensor4(1, 2, 4, 5, 1.0)), 2.0 * energy, 1e-12);
    EXPECT_EQ(loss_hf(Image(5, 4), hi, up, Tensor4(1, 2, 4, 5, 0.0)), 0.0);
    // Half-weight prior scales the squared error by a quarter.
    EXPECT_NEAR(loss_hf(Image(5, 4), hi, up, Tensor4(1, 1, 4, 5, 0.5)), 0.25 * energy, 1e-12);
    EXPECT_THROW(loss_common(Image(3, 3), hi, up), ShapeError);
}

TEST(BiNet, FusedGradientMatchesFiniteDifferences) {
    for (int seed = 0; seed < 3; ++seed) {
        std::mt19937_64 rng(10 + seed);
        GatedBiNet net(small_config(), 1, rng);
        // Trained-scale output layers: the gate sees non-trivial branch outputs
        // and its own gradients stay well above finite-difference roundoff.
        for (auto* stack : {&net.common(), &net.hf(), &net.gate()})
            for (double& w : stack->back().weights.value.data()) w *= 50.0;
        const Image up = test::random_image(6, 5, rng);
        const Tensor4 prior = random_prior(2, 5, 6, rng);
        const Image target = test::random_image(6, 5, rng);
        nn::Tape tape;
        const auto out = net.record(tape, to_tensor(up), prior, false, false, true);
        const nn::Var loss = tape.sum_squares(tape.sub(out.g, tape.constant(to_tensor(target))));
        for (nn::Parameter* p : net.all_parameters()) p->zero_grad();
        tape.backward(loss);
        auto eval = [&] {
            const HallucinationResult r = net.forward(up, prior);
            double acc = 0.0;
            for (std::size_t i = 0; i < r.G.size(); ++i) acc += std::pow(r.G.pixels()[i] - target.pixels()[i], 2);
            return acc;
        };
        const auto params = net.all_parameters();
        EXPECT_LT(test::finite_difference_check(params, eval, 1e-5, 12, rng), 1e-4) << "seed " << seed;
    }
}

TEST(BiNet, ZeroGateRateLeavesGateBitIdentical) {
    std::mt19937_64 rng(6);
    BiNetConfig cfg = small_config();
    cfg.gate_lr_multiplier = 0.0;
    GatedBiNet net(cfg, 1, rng);
    const BiNetDataset data = make_dataset(6, 8, 2, rng);
    std::vector<Tensor4> before;
    for (const nn::ConvLayer& l : net.gate()) before.push_back(l.weights.value);
    const Tensor4 common_before = net.common().front().weights.value;
    Schedule s;
    s.base_lr = 100.0;
    s.batch_size = 3;
    train_step(net, data, Step::Joint, 3, s);
    for (std::size_t i = 0; i < before.size(); ++i) EXPECT_EQ(net.gate()[i].weights.value, before[i]);
    EXPECT_NE(net.common().front().weights.value, common_before);
}

TEST(BiNet, CommonStepDecreasesLossMonotonically) {
    std::mt19937_64 rng(7);
    GatedBiNet net(small_config(), 1, rng);
    const BiNetDataset data = make_dataset(8, 10, 2, rng);
    Schedule s;
    s.base_lr = 20.0;
    s.momentum = 0.0;
    s.batch_size = data.size();  // full-batch gradient descent
    s.evaluate_each_epoch = true;
    const double start = dataset_loss(net, data, Step::Common);
    const std::vector<double> hist = train_step(net, data, Step::Common, 15, s);
    double prev = start;
    for (double v : hist) {
        EXPECT_LE(v, prev);
        prev = v;
    }
    EXPECT_LT(hist.back(), start);
}

TEST(BiNet, JointStepDoesNotDegradeFusedLoss) {
    std::mt19937_64 rng(8);
    GatedBiNet net(small_config(), 1, rng);
    const BiNetDataset data = make_dataset(12, 10, 2, rng);
    Schedule s;
    s.base_lr = 20.0;
    s.batch_size = 4;
    train_step(net, data, Step::Common, 5, s);
    train_step(net, data, Step::HighFrequency, 5, s);
    const double before = dataset_loss(net, data, Step::Joint);
    train_step(net, data, Step::Joint, 5, s);
    const double after = dataset_loss(net, data, Step::Joint);
    EXPECT_LE(after, 1.01 * before);
}

TEST(BiNet, FreshGateStartsNearCommonBranch) {
    std::mt19937_64 rng(11);
    const GatedBiNet net(small_config(), 1, rng);
    const Image up = test::random_image(8, 7, rng);
    const HallucinationResult r = net.forward(up, random_prior(2, 7, 8, rng));
    const double expect = 1.0 / (1.0 + std::exp(3.0));
    for (double v : r.G_lambda.pixels()) EXPECT_NEAR(v, expect, 0.01);
}

TEST(BiNet, HighFrequencyStepTrainsWithSmallPriorMagnitudes) {
    auto relative_loss = [](double prior_scale) {
        std::mt19937_64 rng(12);
        GatedBiNet net(small_config(), 1, rng);
        BiNetDataset data = make_dataset(8, 10, 2, rng);
        for (double& v : data.prior.data()) v *= prior_scale;
        Schedule s;
        s.base_lr = 100.0;
        s.batch_size = data.size();
        const double before = dataset_loss(net, data, Step::HighFrequency);
        train_step(net, data, Step::HighFrequency, 30, s);
        return dataset_loss(net, data, Step::HighFrequency) / before;
    };
    // The masked loss scales with the squared prior; left unnormalized, a
    // 0.02 prior would slow the step by a factor of 2500.
    EXPECT_LT(relative_loss(1.0), 0.95);
    EXPECT_LT(relative_loss(0.02), 0.98);
}

TEST(BiNet, ThreeStepSkipsMissingBranches) {
    std::mt19937_64 rng(9);
    GatedBiNet net(small_config(GateMode::CommonOnly), 1, rng);
    BiNetDataset data = make_dataset(4, 6, 2, rng);
    data.prior = Tensor4();
    Schedule s;
    s.epochs_common = 2;
    s.epochs_hf = 2;
    s.epochs_joint = 1;
    const TrainReport r = train_three_step(net, data, s);
    EXPECT_EQ(r.common.size(), 2u);
    EXPECT_TRUE(r.hf.empty());
    EXPECT_EQ(r.joint.size(), 1u);
    EXPECT_THROW(train_step(net, data, Step::HighFrequency, 1, s), StateError);
}

TEST(BiNet, TrainingIsDeterministic) {
    auto run = [] {
        std::mt19937_64 rng(10);
        GatedBiNet net(small_config(), 1, rng);
        const BiNetDataset data = make_dataset(6, 8, 2, rng);
        Schedule s;
        s.epochs_common = s.epochs_hf = s.epochs_joint = 2;
        s.batch_size = 4;
        s.base_lr = 10.0;
        s.seed = 3;
        train_three_step(net, data, s);
        std::vector<Tensor4> w;
        for (nn::Parameter* p : net.all_parameters()) w.push_back(p->value);
        return w;
    };
    EXPECT_EQ(run(), run());
}

TEST(BiNet, RejectsEmptyDataAndBadBatch) {
    std::mt19937_64 rng(11);
    GatedBiNet net(small_config(), 1, rng);
    Schedule s;
    EXPECT_THROW(train_three_step(net, BiNetDataset{}, s), DataError);
    s.batch_size = 0;
    EXPECT_THROW(train_step(net, make_dataset(2, 4, 2, rng), Step::Common, 1, s), ArgumentError);
}
