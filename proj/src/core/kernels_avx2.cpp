// Compiled with -mavx2 -mfma; never called unless the CPU reports both.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

#include "cbn/kernels.hpp"

namespace cbn::kernels {
namespace {

// Zero-padded copy of `channels` planes: (h + 2) x (w + 2) each.
std::vector<double> pad_planes(const double* src, int channels, int h, int w) {
    const int pw = w + 2;
    const std::size_t pplane = static_cast<std::size_t>(h + 2) * pw;
    std::vector<double> out(pplane * channels, 0.0);
    for (int c = 0; c < channels; ++c)
        for (int y = 0; y < h; ++y)
            std::copy_n(src + (static_cast<std::size_t>(c) * h + y) * w, w,
                        out.data() + c * pplane + static_cast<std::size_t>(y + 1) * pw + 1);
    return out;
}

inline double hsum(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
}

// Accumulates NC output planes from a padded source. For output element
// (j, y, x) the taps are visited in (src channel, ky, kx) order:
//   acc = fma(w(j, c, ky, kx), P[c][y + oy(ky)][x + ox(kx)], acc)
// with oy = ky, ox = kx (correlation) or oy = 2 - ky, ox = 2 - kx (transpose).
// `wstride_j` / `wstride_c` step the weight pointer between output / source
// channels. `acc` starts from `out` when `init` is null, else from init[j].
template <int NC, bool Flip>
void accumulate_block(const double* padded, int src_channels, int h, int w, const double* wbase,
                      std::size_t wstride_j, std::size_t wstride_c, const double* init,
                      double* out, std::size_t out_plane) {
    const int pw = w + 2;
    const std::size_t pplane = static_cast<std::size_t>(h + 2) * pw;
    auto tap = [](int k) { return Flip ? 2 - k : k; };
    for (int y = 0; y < h; ++y) {
        int x = 0;
        for (; x + 8 <= w; x += 8) {
            __m256d acc[NC][2];
            for (int j = 0; j < NC; ++j) {
                double* o = out + j * out_plane + static_cast<std::size_t>(y) * w + x;
                acc[j][0] = init ? _mm256_set1_pd(init[j]) : _mm256_loadu_pd(o);
                acc[j][1] = init ? _mm256_set1_pd(init[j]) : _mm256_loadu_pd(o + 4);
            }
            for (int c = 0; c < src_channels; ++c) {
                const double* base = padded + c * pplane + static_cast<std::size_t>(y) * pw + x;
                const double* wc = wbase + c * wstride_c;
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const double* p = base + tap(ky) * pw + tap(kx);
                        const __m256d v0 = _mm256_loadu_pd(p);
                        const __m256d v1 = _mm256_loadu_pd(p + 4);
                        for (int j = 0; j < NC; ++j) {
                            const __m256d wk = _mm256_broadcast_sd(wc + j * wstride_j + ky * 3 + kx);
                            acc[j][0] = _mm256_fmadd_pd(wk, v0, acc[j][0]);
                            acc[j][1] = _mm256_fmadd_pd(wk, v1, acc[j][1]);
                        }
                    }
                }
            }
            for (int j = 0; j < NC; ++j) {
                double* o = out + j * out_plane + static_cast<std::size_t>(y) * w + x;
                _mm256_storeu_pd(o, acc[j][0]);
                _mm256_storeu_pd(o + 4, acc[j][1]);
            }
        }
        for (; x + 4 <= w; x += 4) {
            __m256d acc[NC];
            for (int j = 0; j < NC; ++j) {
                double* o = out + j * out_plane + static_cast<std::size_t>(y) * w + x;
                acc[j] = init ? _mm256_set1_pd(init[j]) : _mm256_loadu_pd(o);
            }
            for (int c = 0; c < src_channels; ++c) {
                const double* base = padded + c * pplane + static_cast<std::size_t>(y) * pw + x;
                const double* wc = wbase + c * wstride_c;
                for (int ky = 0; ky < 3; ++ky) {
                    for (int kx = 0; kx < 3; ++kx) {
                        const __m256d v = _mm256_loadu_pd(base + tap(ky) * pw + tap(kx));
                        for (int j = 0; j < NC; ++j)
                            acc[j] = _mm256_fmadd_pd(_mm256_broadcast_sd(wc + j * wstride_j + ky * 3 + kx), v, acc[j]);
                    }
                }
            }
            for (int j = 0; j < NC; ++j)
                _mm256_storeu_pd(out + j * out_plane + static_cast<std::size_t>(y) * w + x, acc[j]);
        }
        for (; x < w; ++x) {
            for (int j = 0; j < NC; ++j) {
                double* o = out + j * out_plane + static_cast<std::size_t>(y) * w + x;
                double acc = init ? init[j] : *o;
                for (int c = 0; c < src_channels; ++c) {
                    const double* base = padded + c * pplane + static_cast<std::size_t>(y) * pw + x;
                    const double* wc = wbase + c * wstride_c + j * wstride_j;
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx)
                            acc = std::fma(wc[ky * 3 + kx], base[tap(ky) * pw + tap(kx)], acc);
                }
                *o = acc;
            }
        }
    }
}

template <bool Flip>
void accumulate_all(const double* padded, int src_channels, int dst_channels, int h, int w,
                    const double* weights, std::size_t wstride_j, std::size_t wstride_c,
                    const double* init, double* out) {
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    int j = 0;
    for (; j + 4 <= dst_channels; j += 4)
        accumulate_block<4, Flip>(padded, src_channels, h, w, weights + j * wstride_j, wstride_j, wstride_c,
                                  init ? init + j : nullptr, out + j * plane, plane);
    for (; j < dst_channels; ++j)
        accumulate_block<1, Flip>(padded, src_channels, h, w, weights + j * wstride_j, wstride_j, wstride_c,
                                  init ? init + j : nullptr, out + j * plane, plane);
}

void conv_forward(std::span<const double> in, std::span<const double> weights,
                  std::span<const double> bias, std::span<double> out, const ConvGeometry& g) {
    const std::vector<double> padded = pad_planes(in.data(), g.in_channels, g.height, g.width);
    accumulate_all<false>(padded.data(), g.in_channels, g.out_channels, g.height, g.width, weights.data(),
                          static_cast<std::size_t>(g.in_channels) * 9, 9, bias.data(), out.data());
}

void conv_backward_input(std::span<const double> dout, std::span<const double> weights,
                         std::span<double> din, const ConvGeometry& g) {
    const std::vector<double> padded = pad_planes(dout.data(), g.out_channels, g.height, g.width);
    accumulate_all<true>(padded.data(), g.out_channels, g.in_channels, g.height, g.width, weights.data(), 9,
                         static_cast<std::size_t>(g.in_channels) * 9, nullptr, din.data());
}

// dw[j][c][ky][*] for NC output channels and one kernel row, reading three
// shifted input vectors per step and sharing them across the NC channels.
template <int NC>
void weight_rows(const double* padded_plane, const double* const* dplanes, int h, int w, int ky,
                 double* const* kout) {
    const int pw = w + 2;
    __m256d acc[NC][3];
    double tail[NC][3] = {};
    for (int j = 0; j < NC; ++j)
        for (int kx = 0; kx < 3; ++kx) acc[j][kx] = _mm256_setzero_pd();
    for (int y = 0; y < h; ++y) {
        const double* prow = padded_plane + static_cast<std::size_t>(y + ky) * pw;
        const std::size_t drow = static_cast<std::size_t>(y) * w;
        int x = 0;
        for (; x + 4 <= w; x += 4) {
            const __m256d v0 = _mm256_loadu_pd(prow + x);
            const __m256d v1 = _mm256_loadu_pd(prow + x + 1);
            const __m256d v2 = _mm256_loadu_pd(prow + x + 2);
            for (int j = 0; j < NC; ++j) {
                const __m256d d = _mm256_loadu_pd(dplanes[j] + drow + x);
                acc[j][0] = _mm256_fmadd_pd(d, v0, acc[j][0]);
                acc[j][1] = _mm256_fmadd_pd(d, v1, acc[j][1]);
                acc[j][2] = _mm256_fmadd_pd(d, v2, acc[j][2]);
            }
        }
        for (; x < w; ++x)
            for (int j = 0; j < NC; ++j)
                for (int kx = 0; kx < 3; ++kx) tail[j][kx] += dplanes[j][drow + x] * prow[x + kx];
    }
    for (int j = 0; j < NC; ++j)
        for (int kx = 0; kx < 3; ++kx) kout[j][ky * 3 + kx] += hsum(acc[j][kx]) + tail[j][kx];
}

void conv_backward_weights(std::span<const double> in, std::span<const double> dout,
                           std::span<double> dweights, std::span<double> dbias,
                           const ConvGeometry& g) {
    const int h = g.height;
    const int w = g.width;
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    const std::size_t pplane = static_cast<std::size_t>(h + 2) * (w + 2);
    const std::vector<double> padded = pad_planes(in.data(), g.in_channels, h, w);
    for (int co = 0; co < g.out_channels; ++co) {
        const double* d = dout.data() + co * plane;
        double bsum = 0.0;
        for (std::size_t i = 0; i < plane; ++i) bsum += d[i];
        dbias[co] += bsum;
    }
    auto kernel_of = [&](int co, int ci) {
        return dweights.data() + (static_cast<std::size_t>(co) * g.in_channels + ci) * 9;
    };
    int co = 0;
    for (; co + 4 <= g.out_channels; co += 4) {
        const double* dp[4];
        for (int j = 0; j < 4; ++j) dp[j] = dout.data() + (co + j) * plane;
        for (int ci = 0; ci < g.in_channels; ++ci) {
            double* ko[4];
            for (int j = 0; j < 4; ++j) ko[j] = kernel_of(co + j, ci);
            for (int ky = 0; ky < 3; ++ky) weight_rows<4>(padded.data() + ci * pplane, dp, h, w, ky, ko);
        }
    }
    for (; co < g.out_channels; ++co) {
        const double* dp[1] = {dout.data() + co * plane};
        for (int ci = 0; ci < g.in_channels; ++ci) {
            double* ko[1] = {kernel_of(co, ci)};
            for (int ky = 0; ky < 3; ++ky) weight_rows<1>(padded.data() + ci * pplane, dp, h, w, ky, ko);
        }
    }
}

void relu_forward(std::span<const double> in, std::span<double> out) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    const std::size_t n = in.size();
    for (; i + 4 <= n; i += 4) {
        const __m256d v = _mm256_loadu_pd(in.data() + i);
        const __m256d mask = _mm256_cmp_pd(v, zero, _CMP_GT_OQ);
        _mm256_storeu_pd(out.data() + i, _mm256_and_pd(mask, v));
    }
    for (; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
}

void relu_backward(std::span<const double> in, std::span<const double> dout,
                   std::span<double> din) {
    const __m256d zero = _mm256_setzero_pd();
    std::size_t i = 0;
    const std::size_t n = in.size();
    for (; i + 4 <= n; i += 4) {
        const __m256d mask = _mm256_cmp_pd(_mm256_loadu_pd(in.data() + i), zero, _CMP_GT_OQ);
        const __m256d g = _mm256_and_pd(mask, _mm256_loadu_pd(dout.data() + i));
        _mm256_storeu_pd(din.data() + i, _mm256_add_pd(_mm256_loadu_pd(din.data() + i), g));
    }
    for (; i < n; ++i) din[i] += in[i] > 0.0 ? dout[i] : 0.0;
}

void momentum_step(std::span<double> param, std::span<const double> grad,
                   std::span<double> velocity, double rate, double momentum) {
    const __m256d vm = _mm256_set1_pd(momentum);
    const __m256d vr = _mm256_set1_pd(rate);
    std::size_t i = 0;
    const std::size_t n = param.size();
    for (; i + 4 <= n; i += 4) {
        __m256d v = _mm256_loadu_pd(velocity.data() + i);
        v = _mm256_add_pd(_mm256_mul_pd(vm, v), _mm256_loadu_pd(grad.data() + i));
        _mm256_storeu_pd(velocity.data() + i, v);
        __m256d p = _mm256_loadu_pd(param.data() + i);
        _mm256_storeu_pd(param.data() + i, _mm256_sub_pd(p, _mm256_mul_pd(vr, v)));
    }
    for (; i < n; ++i) {
        velocity[i] = momentum * velocity[i] + grad[i];
        param[i] -= rate * velocity[i];
    }
}

constexpr KernelTable kAvx2{
    "avx2",       conv_forward,  conv_backward_input, conv_backward_weights,
    relu_forward, relu_backward, momentum_step,
};

}  // namespace

const KernelTable* avx2_kernels_unchecked() { return &kAvx2; }

}  // namespace cbn::kernels
