#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "cbn/kernels.hpp"
#include "cbn/nn.hpp"
#include "test_util.hpp"

using namespace cbn;
using namespace cbn::nn;

namespace {

// Six nested loops, no shortcuts.
Tensor4 conv_oracle(const Tensor4& in, const Tensor4& w, const Tensor4& bias) {
    const int co_n = w.batch();
    Tensor4 out(in.batch(), co_n, in.height(), in.width());
    for (int b = 0; b < in.batch(); ++b)
        for (int co = 0; co < co_n; ++co)
            for (int y = 0; y < in.height(); ++y)
                for (int x = 0; x < in.width(); ++x) {
                    double acc = bias[co];
                    for (int ci = 0; ci < in.channels(); ++ci)
                        for (int ky = 0; ky < 3; ++ky)
                            for (int kx = 0; kx < 3; ++kx) {
                                const int yy = y + ky - 1;
                                const int xx = x + kx - 1;
                                if (yy < 0 || xx < 0 || yy >= in.height() || xx >= in.width()) continue;
                                acc += w(co, ci, ky, kx) * in(b, ci, yy, xx);
                            }
                    out(b, co, y, x) = acc;
                }
    return out;
}

}  // namespace

TEST(ConvForward, ZeroInputGivesBias) {
    std::mt19937_64 rng(1);
    ConvLayer layer = make_conv_layer(1, 2, rng);
    layer.bias.value[0] = 0.25;
    layer.bias.value[1] = -1.5;
    const Tensor4 out = conv_forward(Tensor4(1, 1, 3, 3), layer);
    for (int y = 0; y < 3; ++y)
        for (int x = 0; x < 3; ++x) {
            EXPECT_EQ(out(0, 0, y, x), 0.25);
            EXPECT_EQ(out(0, 1, y, x), -1.5);
        }
}

TEST(ConvForward, IdentityKernel) {
    std::mt19937_64 rng(2);
    ConvLayer layer = make_conv_layer(1, 1, rng);
    layer.weights.value.fill(0.0);
    layer.weights.value(0, 0, 1, 1) = 1.0;
    const Tensor4 in = test::random_tensor({2, 1, 5, 7}, rng);
    EXPECT_EQ(conv_forward(in, layer), in);
}

TEST(ConvForward, MatchesNestedLoopOracle) {
    std::mt19937_64 rng(3);
    ConvLayer layer = make_conv_layer(2, 3, rng);
    for (double& b : layer.bias.value.data()) b = std::normal_distribution<double>()(rng);
    const Tensor4 in = test::random_tensor({1, 2, 5, 5}, rng);
    const Tensor4 got = conv_forward(in, layer);
    const Tensor4 want = conv_oracle(in, layer.weights.value, layer.bias.value);
    EXPECT_LE(test::max_abs_diff(got, want), 1e-12);
}

TEST(ConvForward, ChannelMismatchIsShapeError) {
    std::mt19937_64 rng(4);
    ConvLayer layer = make_conv_layer(3, 1, rng);
    EXPECT_THROW(conv_forward(Tensor4(1, 2, 4, 4), layer), ShapeError);
}

TEST(ConvForward, LinearWithoutBias) {
    std::mt19937_64 rng(5);
    ConvLayer layer = make_conv_layer(3, 4, rng);
    const Tensor4 x = test::random_tensor({1, 3, 6, 6}, rng);
    const Tensor4 y = test::random_tensor({1, 3, 6, 6}, rng);
    const double a = 0.7, b = -1.9;
    Tensor4 mix(x.shape());
    for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x[i] + b * y[i];
    const Tensor4 fx = conv_forward(x, layer);
    const Tensor4 fy = conv_forward(y, layer);
    const Tensor4 fm = conv_forward(mix, layer);
    for (std::size_t i = 0; i < fm.size(); ++i) EXPECT_NEAR(fm[i], a * fx[i] + b * fy[i], 1e-10);
}

TEST(ConvForward, PreservesSpatialExtent) {
    std::mt19937_64 rng(6);
    ConvLayer layer = make_conv_layer(1, 8, rng);
    const Tensor4 out = conv_forward(Tensor4(3, 1, 9, 4), layer);
    EXPECT_EQ(out.shape(), (Shape4{3, 8, 9, 4}));
}

TEST(Relu, Definition) {
    Tensor4 t(1, 1, 1, 3);
    t[0] = -1.0;
    t[1] = 0.0;
    t[2] = 2.0;
    const Tensor4 r = relu_forward(t);
    EXPECT_EQ(r[0], 0.0);
    EXPECT_EQ(r[1], 0.0);
    EXPECT_EQ(r[2], 2.0);
}

TEST(Relu, AllNegativeIsZero) {
    Tensor4 t(1, 2, 3, 3, -0.5);
    const Tensor4 r = relu_forward(t);
    for (double v : r.data()) EXPECT_EQ(v, 0.0);
}

TEST(Relu, MatchesElementwiseOracle) {
    std::mt19937_64 rng(7);
    const Tensor4 t = test::random_tensor({2, 3, 5, 9}, rng);
    const Tensor4 r = relu_forward(t);
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(r[i], std::max(0.0, t[i]));
}

TEST(MaskedLoss, EqualPredictionIsZero) {
    std::mt19937_64 rng(8);
    const Tensor4 p = test::random_tensor({1, 1, 4, 4}, rng);
    const Tensor4 m = test::random_tensor({1, 3, 4, 4}, rng);
    EXPECT_EQ(masked_sq_loss(p, p, m), 0.0);
}

TEST(MaskedLoss, ZeroMaskIsZero) {
    std::mt19937_64 rng(9);
    const Tensor4 p = test::random_tensor({1, 1, 4, 4}, rng);
    const Tensor4 t = test::random_tensor({1, 1, 4, 4}, rng);
    EXPECT_EQ(masked_sq_loss(p, t, Tensor4(1, 2, 4, 4)), 0.0);
}

TEST(MaskedLoss, HandComputed) {
    Tensor4 pred(1, 1, 2, 2);
    Tensor4 target(1, 1, 2, 2);
    target(0, 0, 0, 0) = 1.0;
    target(0, 0, 1, 1) = 2.0;
    Tensor4 mask(1, 1, 2, 2);
    mask(0, 0, 0, 0) = 1.0;
    mask(0, 0, 0, 1) = 1.0;
    EXPECT_DOUBLE_EQ(masked_sq_loss(pred, target, mask), 1.0);
}

TEST(MaskedLoss, ShapeMismatch) {
    EXPECT_THROW(masked_sq_loss(Tensor4(1, 1, 2, 2), Tensor4(1, 1, 2, 3), Tensor4(1, 1, 2, 2)),
                 ShapeError);
    EXPECT_THROW(masked_sq_loss(Tensor4(1, 1, 2, 2), Tensor4(1, 1, 2, 2), Tensor4(1, 1, 3, 2)),
                 ShapeError);
}

TEST(Backward, SumOfSquaresGradient) {
    std::mt19937_64 rng(10);
    Parameter x("x", test::random_tensor({1, 2, 3, 3}, rng));
    Tape tape;
    tape.backward(tape.sum_squares(tape.param(x)));
    for (std::size_t i = 0; i < x.value.size(); ++i) EXPECT_DOUBLE_EQ(x.grad[i], 2.0 * x.value[i]);
}

TEST(Backward, BeforeForwardIsStateError) {
    Tape tape;
    EXPECT_THROW(tape.backward(Var{}), StateError);
    Tape used;
    const Var v = used.watch(Tensor4(1, 1, 1, 1, 2.0));
    const Var s = used.sum_squares(v);
    used.backward(s);
    EXPECT_THROW(used.backward(s), StateError);
}

TEST(Backward, ReluNegativeInputsHaveZeroGradient) {
    Tape tape;
    Tensor4 t(1, 1, 2, 2, -1.0);
    t[3] = 3.0;
    const Var x = tape.watch(t);
    tape.backward(tape.sum_squares(tape.relu(x)));
    const Tensor4& g = tape.grad(x);
    EXPECT_EQ(g[0], 0.0);
    EXPECT_EQ(g[1], 0.0);
    EXPECT_EQ(g[2], 0.0);
    EXPECT_DOUBLE_EQ(g[3], 6.0);
}

TEST(Backward, TwelveLayerNetMatchesFiniteDifferences) {
    std::mt19937_64 rng(11);
    const std::vector<int> plan{4, 4, 6, 6, 6, 6, 6, 6, 3, 3, 3, 1};
    std::vector<ConvLayer> layers;
    int in = 2;
    for (std::size_t i = 0; i < plan.size(); ++i) {
        layers.push_back(make_conv_layer(in, plan[i], rng, "l" + std::to_string(i)));
        for (double& b : layers.back().bias.value.data()) b = 0.1 * std::normal_distribution<double>()(rng);
        in = plan[i];
    }
    const Tensor4 input = test::random_tensor({1, 2, 5, 5}, rng);
    const Tensor4 target = test::random_tensor({1, 1, 5, 5}, rng);
    const Tensor4 mask(1, 1, 5, 5, 1.0);
    auto loss_fn = [&](bool record, Tape* tape) {
        Tape local;
        Tape& t = record ? *tape : local;
        Var v = t.constant(input);
        for (std::size_t i = 0; i < layers.size(); ++i) {
            v = t.conv3x3(v, layers[i].weights, layers[i].bias);
            if (i + 1 < layers.size()) v = t.relu(v);
        }
        const Var l = t.masked_sq_loss(v, target, mask);
        return std::pair{t.scalar(l), l};
    };
    Tape tape;
    const auto [loss, var] = loss_fn(true, &tape);
    tape.backward(var);
    std::vector<Parameter*> params;
    for (ConvLayer& l : layers) {
        params.push_back(&l.weights);
        params.push_back(&l.bias);
    }
    const double worst = test::finite_difference_check(params, [&] { return loss_fn(false, nullptr).first; },
                                                       1e-5, 40, rng);
    EXPECT_LT(worst, 1e-4) << "loss " << loss;
}

TEST(Sgd, ZeroGradientLeavesParams) {
    std::mt19937_64 rng(12);
    Parameter p("p", test::random_tensor({1, 1, 3, 3}, rng));
    const Tensor4 before = p.value;
    Sgd opt(0.1);
    Parameter* ps[] = {&p};
    opt.step(ps);
    EXPECT_EQ(p.value, before);
    EXPECT_EQ(opt.steps(), 1);
}

TEST(Sgd, PlainStep) {
    Parameter p("p", Tensor4(1, 1, 1, 1, 1.0));
    p.grad[0] = 1.0;
    Sgd opt(0.1, 0.0);
    Parameter* ps[] = {&p};
    opt.step(ps);
    EXPECT_DOUBLE_EQ(p.value[0], 0.9);
}

TEST(Sgd, MomentumMatchesHandUnroll) {
    Parameter p("p", Tensor4(1, 1, 1, 1, 1.0), 0.5);
    Sgd opt(0.2, 0.9);
    Parameter* ps[] = {&p};
    p.grad[0] = 1.0;
    opt.step(ps);
    p.grad[0] = -2.0;
    opt.step(ps);
    // v1 = 1, p1 = 1 - 0.1 * 1; v2 = 0.9 - 2 = -1.1, p2 = p1 + 0.11
    const double lr = 0.5 * 0.2;
    const double v1 = 1.0;
    const double p1 = 1.0 - lr * v1;
    const double v2 = 0.9 * v1 - 2.0;
    EXPECT_DOUBLE_EQ(p.value[0], p1 - lr * v2);
}

TEST(Determinism, ForwardBackwardBitIdentical) {
    auto run = [] {
        std::mt19937_64 rng(99);
        ConvLayer a = make_conv_layer(1, 5, rng);
        ConvLayer b = make_conv_layer(5, 1, rng);
        const Tensor4 x = test::random_tensor({2, 1, 6, 6}, rng);
        Tape t;
        Var v = t.relu(t.conv3x3(t.constant(x), a.weights, a.bias));
        v = t.conv3x3(v, b.weights, b.bias);
        t.backward(t.sum_squares(v));
        return std::pair{a.weights.grad, t.value(v)};
    };
    const auto r1 = run();
    const auto r2 = run();
    EXPECT_EQ(r1.first, r2.first);
    EXPECT_EQ(r1.second, r2.second);
}

// Scalar reference vs the runtime-selected SIMD variant.
class KernelEquivalence : public ::testing::Test {
protected:
    void SetUp() override {
        simd_ = kernels::avx2_kernels();
        if (simd_ == nullptr) GTEST_SKIP() << "no SIMD variant on this CPU";
    }
    const kernels::KernelTable* simd_ = nullptr;
};

TEST_F(KernelEquivalence, ConvForwardAndInputGradBitExact) {
    const auto& ref = kernels::scalar_kernels();
    std::mt19937_64 rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        std::uniform_int_distribution<int> ext(1, 19), ch(1, 6);
        const kernels::ConvGeometry g{ch(rng), ch(rng), ext(rng), ext(rng)};
        const Tensor4 in = test::random_tensor({1, g.in_channels, g.height, g.width}, rng);
        const Tensor4 w = test::random_tensor({g.out_channels, g.in_channels, 3, 3}, rng);
        const Tensor4 bias = test::random_tensor({1, g.out_channels, 1, 1}, rng);
        Tensor4 o1(1, g.out_channels, g.height, g.width), o2 = o1;
        ref.conv3x3_forward(in.data(), w.data(), bias.data(), o1.data(), g);
        simd_->conv3x3_forward(in.data(), w.data(), bias.data(), o2.data(), g);
        EXPECT_EQ(o1, o2);

        const Tensor4 dout = test::random_tensor({1, g.out_channels, g.height, g.width}, rng);
        Tensor4 d1(in.shape()), d2(in.shape());
        ref.conv3x3_backward_input(dout.data(), w.data(), d1.data(), g);
        simd_->conv3x3_backward_input(dout.data(), w.data(), d2.data(), g);
        EXPECT_EQ(d1, d2);

        Tensor4 dw1(w.shape()), dw2(w.shape()), db1(bias.shape()), db2(bias.shape());
        ref.conv3x3_backward_weights(in.data(), dout.data(), dw1.data(), db1.data(), g);
        simd_->conv3x3_backward_weights(in.data(), dout.data(), dw2.data(), db2.data(), g);
        EXPECT_EQ(db1, db2);
        for (std::size_t i = 0; i < dw1.size(); ++i)
            EXPECT_NEAR(dw1[i], dw2[i], 1e-12 * std::max(1.0, std::abs(dw1[i])));
    }
}

TEST_F(KernelEquivalence, ElementwiseBitExact) {
    const auto& ref = kernels::scalar_kernels();
    std::mt19937_64 rng(22);
    for (int n : {1, 3, 4, 7, 64, 129}) {
        const Tensor4 x = test::random_tensor({1, 1, 1, n}, rng);
        const Tensor4 d = test::random_tensor({1, 1, 1, n}, rng);
        Tensor4 r1(x.shape()), r2(x.shape());
        ref.relu_forward(x.data(), r1.data());
        simd_->relu_forward(x.data(), r2.data());
        EXPECT_EQ(r1, r2);
        Tensor4 g1(x.shape()), g2(x.shape());
        ref.relu_backward(x.data(), d.data(), g1.data());
        simd_->relu_backward(x.data(), d.data(), g2.data());
        EXPECT_EQ(g1, g2);
        Tensor4 p1 = x, p2 = x, v1 = d, v2 = d;
        ref.momentum_step(p1.data(), d.data(), v1.data(), 0.01, 0.9);
        simd_->momentum_step(p2.data(), d.data(), v2.data(), 0.01, 0.9);
        EXPECT_EQ(p1, p2);
        EXPECT_EQ(v1, v2);
    }
}
