#pragma once

// Reverse-mode differentiation over an explicit tape, plus the convolution
// layer and momentum SGD used to train the bi-networks.

#include <cstddef>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cbn/tensor.hpp"

namespace cbn::nn {

struct Parameter {
    std::string name;
    Tensor4 value;
    Tensor4 grad;
    Tensor4 velocity;
    double lr_scale = 1.0;

    Parameter() = default;
    Parameter(std::string n, Tensor4 v, double lr = 1.0);
    void zero_grad();
};

/// Handle to a value recorded on a Tape.
struct Var {
    std::size_t id = std::numeric_limits<std::size_t>::max();
    bool valid() const noexcept { return id != std::numeric_limits<std::size_t>::max(); }
};

/// Records a forward computation and replays it backwards. The graph is
/// rebuilt for every training step. A tape holds pointers to the parameters it
/// was given, so those must outlive it.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    // Leaf that never receives a gradient.
    Var constant(Tensor4 value);
    // Leaf whose gradient is kept and readable through grad().
    Var watch(Tensor4 value);
    // Leaf bound to a parameter; backward() accumulates into p.grad.
    Var param(Parameter& p);

    Var conv3x3(Var x, Parameter& weights, Parameter& bias);
    Var relu(Var x);
    Var sigmoid(Var x);
    Var concat_channels(std::span<const Var> parts);
    // (1 - gate) * a + gate * b, pointwise; all three single-channel.
    Var gate_fuse(Var gate, Var a, Var b);
    Var add(Var a, Var b);
    Var sub(Var a, Var b);
    Var mul(Var a, Var b);
    Var scale(Var x, double s);
    // Scalar: sum of squares of every element.
    Var sum_squares(Var x);
    // Scalar: sum_c || mask_c * (target - pred) ||^2, mask broadcast over pred's channel.
    Var masked_sq_loss(Var pred, const Tensor4& target, const Tensor4& mask);

    const Tensor4& value(Var v) const;
    const Tensor4& grad(Var v) const;
    double scalar(Var v) const;

    // Gradients of the scalar `loss` w.r.t. every recorded node. Callable once.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor4 value;
        const Tensor4* external = nullptr;
        Parameter* param = nullptr;
        bool requires_grad = false;
        Tensor4 grad;
        std::function<void()> backward;
    };

    Var push(Node n);
    Node& node(Var v);
    const Node& node(Var v) const;
    const Tensor4& val(std::size_t id) const;
    Tensor4& grad_buffer(std::size_t id);

    std::vector<Node> nodes_;
    bool consumed_ = false;
};

// 3x3 kernels, stride 1, zero padding 1.
struct ConvLayer {
    Parameter weights;  // (out, in, 3, 3)
    Parameter bias;     // (1, out, 1, 1)

    int in_channels() const { return weights.value.channels(); }
    int out_channels() const { return weights.value.batch(); }
};

// Zero-mean Gaussian weights with std sqrt(2 / (9 * in)), zero biases.
ConvLayer make_conv_layer(int in_channels, int out_channels, std::mt19937_64& rng,
                          const std::string& name = {}, double lr_scale = 1.0);

Tensor4 conv_forward(const Tensor4& input, const ConvLayer& layer);
Tensor4 relu_forward(const Tensor4& input);
double masked_sq_loss(const Tensor4& pred, const Tensor4& target, const Tensor4& mask);

/// Momentum SGD: v <- momentum * v + g;  p <- p - lr_scale * base_lr * v.
class Sgd {
public:
    explicit Sgd(double base_lr, double momentum = 0.9) : base_lr_(base_lr), momentum_(momentum) {}

    void step(std::span<Parameter* const> params);
    long steps() const noexcept { return step_; }
    double base_lr() const noexcept { return base_lr_; }
    void set_base_lr(double lr) noexcept { base_lr_ = lr; }

private:
    double base_lr_;
    double momentum_;
    long step_ = 0;
};

}  // namespace cbn::nn
