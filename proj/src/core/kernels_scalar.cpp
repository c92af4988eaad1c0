#include <algorithm>
#include <cmath>
#include <cstddef>

#include "cbn/kernels.hpp"

namespace cbn::kernels {
namespace {

void conv_forward(std::span<const double> in, std::span<const double> weights,
                  std::span<const double> bias, std::span<double> out, const ConvGeometry& g) {
    const int h = g.height;
    const int w = g.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int co = 0; co < g.out_channels; ++co) {
        double* o = out.data() + co * plane;
        std::fill(o, o + plane, bias[co]);
        for (int ci = 0; ci < g.in_channels; ++ci) {
            const double* src = in.data() + ci * plane;
            const double* k = weights.data() + (static_cast<std::size_t>(co) * g.in_channels + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int y0 = std::max(0, 1 - ky);
                const int y1 = std::min(h, h + 1 - ky);
                for (int kx = 0; kx < 3; ++kx) {
                    const double wk = k[ky * 3 + kx];
                    const int x0 = std::max(0, 1 - kx);
                    const int x1 = std::min(w, w + 1 - kx);
                    for (int y = y0; y < y1; ++y) {
                        double* orow = o + static_cast<std::size_t>(y) * w;
                        const double* irow = src + static_cast<std::size_t>(y + ky - 1) * w + (kx - 1);
                        for (int x = x0; x < x1; ++x) orow[x] = std::fma(wk, irow[x], orow[x]);
                    }
                }
            }
        }
    }
}

void conv_backward_input(std::span<const double> dout, std::span<const double> weights,
                         std::span<double> din, const ConvGeometry& g) {
    const int h = g.height;
    const int w = g.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int co = 0; co < g.out_channels; ++co) {
        const double* d = dout.data() + co * plane;
        for (int ci = 0; ci < g.in_channels; ++ci) {
            double* dst = din.data() + ci * plane;
            const double* k = weights.data() + (static_cast<std::size_t>(co) * g.in_channels + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int y0 = std::max(0, 1 - ky);
                const int y1 = std::min(h, h + 1 - ky);
                for (int kx = 0; kx < 3; ++kx) {
                    const double wk = k[ky * 3 + kx];
                    const int x0 = std::max(0, 1 - kx);
                    const int x1 = std::min(w, w + 1 - kx);
                    for (int y = y0; y < y1; ++y) {
                        const double* drow = d + static_cast<std::size_t>(y) * w;
                        double* irow = dst + static_cast<std::size_t>(y + ky - 1) * w + (kx - 1);
                        for (int x = x0; x < x1; ++x) irow[x] = std::fma(wk, drow[x], irow[x]);
                    }
                }
            }
        }
    }
}

void conv_backward_weights(std::span<const double> in, std::span<const double> dout,
                           std::span<double> dweights, std::span<double> dbias,
                           const ConvGeometry& g) {
    const int h = g.height;
    const int w = g.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int co = 0; co < g.out_channels; ++co) {
        const double* d = dout.data() + co * plane;
        double bsum = 0.0;
        for (std::size_t i = 0; i < plane; ++i) bsum += d[i];
        dbias[co] += bsum;
        for (int ci = 0; ci < g.in_channels; ++ci) {
            const double* src = in.data() + ci * plane;
            double* k = dweights.data() + (static_cast<std::size_t>(co) * g.in_channels + ci) * 9;
            for (int ky = 0; ky < 3; ++ky) {
                const int y0 = std::max(0, 1 - ky);
                const int y1 = std::min(h, h + 1 - ky);
                for (int kx = 0; kx < 3; ++kx) {
                    const int x0 = std::max(0, 1 - kx);
                    const int x1 = std::min(w, w + 1 - kx);
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* drow = d + static_cast<std::size_t>(y) * w;
                        const double* irow = src + static_cast<std::size_t>(y + ky - 1) * w + (kx - 1);
                        for (int x = x0; x < x1; ++x) acc += drow[x] * irow[x];
                    }
                    k[ky * 3 + kx] += acc;
                }
            }
        }
    }
}

void relu_forward(std::span<const double> in, std::span<double> out) {
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(std::span<const double> in, std::span<const double> dout,
                   std::span<double> din) {
    for (std::size_t i = 0; i < in.size(); ++i) din[i] += in[i] > 0.0 ? dout[i] : 0.0;
}

void momentum_step(std::span<double> param, std::span<const double> grad,
                   std::span<double> velocity, double rate, double momentum) {
    for (std::size_t i = 0; i < param.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        param[i] -= rate * velocity[i];
    }
}

constexpr KernelTable kScalar{
    "scalar",      conv_forward,  conv_backward_input, conv_backward_weights,
    relu_forward,  relu_backward, momentum_step,
};

}  // namespace

const KernelTable& scalar_kernels() { return kScalar; }

}  // namespace cbn::kernels
