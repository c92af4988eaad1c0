#pragma once

// Gated bi-network: a common branch on the upscaled image, a high-frequency
// branch that also sees the warped prior, and a gate network blending the two
// residual predictions pixel by pixel.

#include <cstdint>
#include <random>
#include <vector>

#include "cbn/image.hpp"
#include "cbn/nn.hpp"
#include "cbn/tensor.hpp"

namespace cbn::binet {

enum class GateMode {
    Learned,
    CommonOnly,         // gate fixed at 0; the hf branch and gate are not built
    HighFrequencyOnly,  // gate fixed at 1; the common branch and gate are not built
};

/// Per-layer learning rates of the branches. The last layer of each branch
/// uses the `_last` rate, every other layer the `_hidden` one.
struct LearningRates {
    double pretrain_hidden = 1e-4;
    double pretrain_last = 1e-5;
    double joint_hidden = 1e-5;
    double joint_last = 1e-6;

    static LearningRates first_cascade() { return {1e-4, 1e-5, 1e-5, 1e-6}; }
    static LearningRates later_cascade() { return {1e-5, 1e-6, 1e-6, 1e-7}; }
};

struct BiNetConfig {
    int prior_channels = 10;
    int branch_depth = 24;
    int gate_depth = 6;
    // Multiplies every hidden width (64 / 128 / 32); 1.0 is the full network.
    double width_scale = 1.0;
    GateMode mode = GateMode::Learned;
    LearningRates rates = LearningRates::first_cascade();
    // Gate rate = multiplier x the branch joint rate of the same layer position.
    double gate_lr_multiplier = 10.0;
};

/// Output channels of every conv layer of a branch (the last entry is 1).
std::vector<int> branch_plan(int depth, double width_scale);
std::vector<int> gate_plan(int depth, double width_scale);

struct HallucinationResult {
    Image G_A;
    Image G_B;
    Image G_lambda;
    Image G;
};

// (1 - lambda) * a + lambda * b, the exact arithmetic used everywhere.
inline double fuse(double lambda, double a, double b) { return (1.0 - lambda) * a + lambda * b; }

class GatedBiNet {
public:
    GatedBiNet() = default;
    GatedBiNet(const BiNetConfig& cfg, int cascade_index, std::mt19937_64& rng);

    const BiNetConfig& config() const noexcept { return cfg_; }
    int cascade_index() const noexcept { return cascade_index_; }
    GateMode mode() const noexcept { return cfg_.mode; }
    bool has_common() const noexcept { return !common_.empty(); }
    bool has_hf() const noexcept { return !hf_.empty(); }
    bool has_gate() const noexcept { return !gate_.empty(); }

    std::vector<nn::ConvLayer>& common() noexcept { return common_; }
    std::vector<nn::ConvLayer>& hf() noexcept { return hf_; }
    std::vector<nn::ConvLayer>& gate() noexcept { return gate_; }
    const std::vector<nn::ConvLayer>& common() const noexcept { return common_; }
    const std::vector<nn::ConvLayer>& hf() const noexcept { return hf_; }
    const std::vector<nn::ConvLayer>& gate() const noexcept { return gate_; }

    // `warped_prior` is (1, C, H, W) with the extent of `up`.
    HallucinationResult forward(const Image& up, const Tensor4& warped_prior) const;

    struct Outputs {
        nn::Var ga, gb, lambda, g;
    };
    /// Records the forward pass of a batch on `tape`. `up` is (B, 1, H, W),
    /// `prior` is (B, C, H, W). Only the requested heads are built.
    Outputs record(nn::Tape& tape, const Tensor4& up, const Tensor4& prior, bool want_common,
                   bool want_hf, bool want_fused);

    std::vector<nn::Parameter*> parameters(std::vector<nn::ConvLayer>& stack);
    std::vector<nn::Parameter*> all_parameters();
    std::size_t parameter_count() const;

    // Rebuilds an empty net with the given configuration (used when loading).
    static GatedBiNet with_layers(const BiNetConfig& cfg, int cascade_index,
                                  std::vector<nn::ConvLayer> common,
                                  std::vector<nn::ConvLayer> hf, std::vector<nn::ConvLayer> gate);

private:
    BiNetConfig cfg_;
    int cascade_index_ = 1;
    std::vector<nn::ConvLayer> common_;
    std::vector<nn::ConvLayer> hf_;
    std::vector<nn::ConvLayer> gate_;
};

double loss_common(const Image& G_A, const Image& hi, const Image& up);
double loss_hf(const Image& G_B, const Image& hi, const Image& up, const Tensor4& warped_prior);

/// Training triples stacked along the batch axis.
struct BiNetDataset {
    Tensor4 up;        // (N, 1, H, W)
    Tensor4 prior;     // (N, C, H, W); may have C == 0 extent only for CommonOnly nets
    Tensor4 residual;  // (N, 1, H, W), ground truth minus `up`

    int size() const noexcept { return up.empty() ? 0 : up.batch(); }
};

struct Schedule {
    int epochs_common = 10;
    int epochs_hf = 10;
    int epochs_joint = 10;
    int batch_size = 16;
    // Multiplies every per-layer rate.
    double base_lr = 1.0;
    double momentum = 0.9;
    // Global gradient-norm clip per step; <= 0 disables it.
    double grad_clip = 0.0;
    // Record the full-dataset loss after every epoch (costs one extra pass).
    bool evaluate_each_epoch = false;
    std::uint64_t seed = 0;
};

struct TrainReport {
    // Mean per-sample training loss of each epoch (running, or full-dataset
    // when Schedule::evaluate_each_epoch is set).
    std::vector<double> common, hf, joint;
};

enum class Step { Common, HighFrequency, Joint };

// Runs one step of the schedule for `epochs` epochs.
std::vector<double> train_step(GatedBiNet& net, const BiNetDataset& data, Step step, int epochs,
                               const Schedule& schedule);

/// Step i (common branch, L_A), step ii (hf branch, L_B), step iii (all
/// parameters, fused loss). Nets with a fixed gate skip the missing branch.
TrainReport train_three_step(GatedBiNet& net, const BiNetDataset& data, const Schedule& schedule);

// Mean per-sample loss of a step's objective over the whole dataset.
double dataset_loss(GatedBiNet& net, const BiNetDataset& data, Step step, int batch_size = 16);

}  // namespace cbn::binet
