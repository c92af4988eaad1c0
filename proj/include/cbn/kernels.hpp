#pragma once

// Inner-loop kernels for the convolution engine.
//
// Every kernel exists as a portable scalar reference and, on x86-64, an AVX2
// variant (AVX2 + FMA). The variant is picked once at startup from CPUID;
// setting the environment variable CBN_SIMD=scalar forces the reference path.
//
// The forward, input-gradient, relu and optimizer kernels vectorize across
// independent output elements and keep the per-element accumulation order of
// the scalar code (convolutions accumulate with fused multiply-add in both),
// so both paths agree bit for bit. The weight-gradient kernel is a reduction and uses four partial sums in
// the SIMD path; it agrees with the reference to rounding (~1e-15 relative).

#include <span>
#include <string_view>

namespace cbn::kernels {

struct ConvGeometry {
    int in_channels = 1;
    int out_channels = 1;
    int height = 1;
    int width = 1;
};

struct KernelTable {
    std::string_view name;

    // out[co] = bias[co] + sum_ci corr3x3(in[ci], w[co][ci]), zero padding.
    // in: in_channels planes, w: out*in*9, out: out_channels planes.
    void (*conv3x3_forward)(std::span<const double> in, std::span<const double> weights,
                            std::span<const double> bias, std::span<double> out,
                            const ConvGeometry& g);

    // din[ci] += sum_co conv3x3^T(dout[co], w[co][ci]).
    void (*conv3x3_backward_input)(std::span<const double> dout, std::span<const double> weights,
                                   std::span<double> din, const ConvGeometry& g);

    // dw[co][ci][k] += sum_xy dout[co](xy) * in[ci](xy + k - 1); dbias[co] += sum dout[co].
    void (*conv3x3_backward_weights)(std::span<const double> in, std::span<const double> dout,
                                     std::span<double> dweights, std::span<double> dbias,
                                     const ConvGeometry& g);

    void (*relu_forward)(std::span<const double> in, std::span<double> out);
    // din += (in > 0) ? dout : 0
    void (*relu_backward)(std::span<const double> in, std::span<const double> dout,
                          std::span<double> din);

    // v = momentum * v + g;  p -= rate * v
    void (*momentum_step)(std::span<double> param, std::span<const double> grad,
                          std::span<double> velocity, double rate, double momentum);
};

const KernelTable& scalar_kernels();

// nullptr when the build or the CPU lacks AVX2.
const KernelTable* avx2_kernels();

// The table used by the engine. Resolved on first call.
const KernelTable& active();

}  // namespace cbn::kernels
