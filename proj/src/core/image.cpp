#include "cbn/image.hpp"

#include <algorithm>
#include <cmath>

namespace cbn {

Point2 Similarity::apply(Point2 p) const {
    const double c = std::cos(angle);
    const double s = std::sin(angle);
    return {scale * (c * p.x - s * p.y) + tx, scale * (s * p.x + c * p.y) + ty};
}

Similarity Similarity::inverse() const {
    Similarity inv;
    inv.scale = 1.0 / scale;
    inv.angle = -angle;
    const double c = std::cos(inv.angle);
    const double s = std::sin(inv.angle);
    inv.tx = -inv.scale * (c * tx - s * ty);
    inv.ty = -inv.scale * (s * tx + c * ty);
    return inv;
}

Similarity Similarity::compose(const Similarity& other) const {
    Similarity out;
    out.scale = scale * other.scale;
    out.angle = angle + other.angle;
    const Point2 t = apply({other.tx, other.ty});
    out.tx = t.x;
    out.ty = t.y;
    return out;
}

Similarity similarity_from_pairs(Point2 a0, Point2 a1, Point2 b0, Point2 b1) {
    const Point2 da = a1 - a0;
    const Point2 db = b1 - b0;
    const double norm2 = da.x * da.x + da.y * da.y;
    if (norm2 == 0.0 || !std::isfinite(norm2))
        throw DegenerateInputError("similarity: reference points coincide");
    // z = db / da as complex numbers.
    const double re = (db.x * da.x + db.y * da.y) / norm2;
    const double im = (db.y * da.x - db.x * da.y) / norm2;
    Similarity s;
    s.scale = std::hypot(re, im);
    if (s.scale == 0.0) throw DegenerateInputError("similarity: target points coincide");
    s.angle = std::atan2(im, re);
    s.tx = b0.x - (re * a0.x - im * a0.y);
    s.ty = b0.y - (im * a0.x + re * a0.y);
    return s;
}

Image::Image(int width, int height, double fill) : width_(width), height_(height) {
    if (width < 1 || height < 1)
        throw ArgumentError("image extent must be positive, got " + std::to_string(width) + "x" +
                            std::to_string(height));
    pixels_.assign(static_cast<std::size_t>(width) * height, fill);
}

double Image::clamped(int x, int y) const noexcept {
    x = std::clamp(x, 0, width_ - 1);
    y = std::clamp(y, 0, height_ - 1);
    return at(x, y);
}

double cubic_kernel(double t) {
    constexpr double a = -0.5;
    t = std::abs(t);
    if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
    if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
    return 0.0;
}

double sample_bilinear_zero(const Image& img, Point2 p) {
    const double fx = p.x - 0.5;
    const double fy = p.y - 0.5;
    const double x0f = std::floor(fx);
    const double y0f = std::floor(fy);
    const int x0 = static_cast<int>(x0f);
    const int y0 = static_cast<int>(y0f);
    const double ax = fx - x0f;
    const double ay = fy - y0f;
    auto tap = [&](int x, int y) {
        return (x >= 0 && y >= 0 && x < img.width() && y < img.height()) ? img.at(x, y) : 0.0;
    };
    if (ax == 0.0 && ay == 0.0) return tap(x0, y0);
    return (1.0 - ay) * ((1.0 - ax) * tap(x0, y0) + ax * tap(x0 + 1, y0)) +
           ay * ((1.0 - ax) * tap(x0, y0 + 1) + ax * tap(x0 + 1, y0 + 1));
}

namespace {

struct Taps {
    int first = 0;
    std::vector<double> weights;
};

// Cubic taps around index-space center c with the kernel widened by `scale`.
Taps cubic_taps(double c, double scale) {
    const double support = 2.0 * scale;
    Taps t;
    t.first = static_cast<int>(std::floor(c - support)) + 1;
    const int last = static_cast<int>(std::floor(c + support));
    double sum = 0.0;
    for (int j = t.first; j <= last; ++j) {
        const double w = cubic_kernel((c - j) / scale);
        t.weights.push_back(w);
        sum += w;
    }
    if (sum != 0.0 && sum != 1.0)
        for (double& w : t.weights) w /= sum;
    return t;
}

}  // namespace

double sample_bicubic(const Image& img, Point2 p) {
    const Taps tx = cubic_taps(p.x - 0.5, 1.0);
    const Taps ty = cubic_taps(p.y - 0.5, 1.0);
    double acc = 0.0;
    for (std::size_t j = 0; j < ty.weights.size(); ++j) {
        if (ty.weights[j] == 0.0) continue;
        double row = 0.0;
        for (std::size_t i = 0; i < tx.weights.size(); ++i) {
            if (tx.weights[i] == 0.0) continue;
            row += tx.weights[i] *
                   img.clamped(tx.first + static_cast<int>(i), ty.first + static_cast<int>(j));
        }
        acc += ty.weights[j] * row;
    }
    return acc;
}

Image resize_cubic(const Image& img, int out_width, int out_height, double factor_x,
                   double factor_y) {
    if (out_width < 1 || out_height < 1) throw ArgumentError("resize: output extent must be positive");
    if (!(factor_x > 0.0) || !(factor_y > 0.0)) throw ArgumentError("resize: factor must be positive");
    const double sx = std::max(1.0, factor_x);
    const double sy = std::max(1.0, factor_y);

    // Horizontal pass.
    Image tmp(out_width, img.height());
    for (int i = 0; i < out_width; ++i) {
        const Taps t = cubic_taps((i + 0.5) * factor_x - 0.5, sx);
        for (int y = 0; y < img.height(); ++y) {
            double acc = 0.0;
            for (std::size_t k = 0; k < t.weights.size(); ++k) {
                if (t.weights[k] == 0.0) continue;
                acc += t.weights[k] * img.clamped(t.first + static_cast<int>(k), y);
            }
            tmp.at(i, y) = acc;
        }
    }
    Image out(out_width, out_height);
    for (int j = 0; j < out_height; ++j) {
        const Taps t = cubic_taps((j + 0.5) * factor_y - 0.5, sy);
        for (int x = 0; x < out_width; ++x) {
            double acc = 0.0;
            for (std::size_t k = 0; k < t.weights.size(); ++k) {
                if (t.weights[k] == 0.0) continue;
                acc += t.weights[k] * tmp.clamped(x, t.first + static_cast<int>(k));
            }
            out.at(x, j) = acc;
        }
    }
    return out;
}

Image upscale2(const Image& img) { return upscale(img, 2); }

Image upscale(const Image& img, int factor) {
    if (factor < 1) throw ArgumentError("upscale: factor must be >= 1");
    return resize_cubic(img, img.width() * factor, img.height() * factor, 1.0 / factor,
                        1.0 / factor);
}

Image downscale(const Image& img, int factor) {
    if (factor < 1) throw ArgumentError("downscale: factor must be >= 1");
    if (img.width() % factor != 0 || img.height() % factor != 0)
        throw ShapeError("downscale: extent " + std::to_string(img.width()) + "x" +
                         std::to_string(img.height()) + " not divisible by " +
                         std::to_string(factor));
    return resize_cubic(img, img.width() / factor, img.height() / factor, factor, factor);
}

Image gaussian_blur(const Image& img, double sigma) {
    if (sigma < 0.0) throw ArgumentError("gaussian_blur: sigma must be >= 0");
    if (sigma == 0.0) return img;
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
        sum += k[i + radius];
    }
    for (double& v : k) v /= sum;
    Image tmp(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * img.clamped(x + i, y);
            tmp.at(x, y) = acc;
        }
    Image out(img.width(), img.height());
    for (int y = 0; y < img.height(); ++y)
        for (int x = 0; x < img.width(); ++x) {
            double acc = 0.0;
            for (int i = -radius; i <= radius; ++i) acc += k[i + radius] * tmp.clamped(x, y + i);
            out.at(x, y) = acc;
        }
    return out;
}

Image resample(const Image& src, const Similarity& to_src, int out_width, int out_height) {
    Image out(out_width, out_height);
    const double f = std::max(1.0, to_src.scale);
    if (f == 1.0) {
        for (int y = 0; y < out_height; ++y)
            for (int x = 0; x < out_width; ++x)
                out.at(x, y) = sample_bicubic(src, to_src.apply({x + 0.5, y + 0.5}));
        return out;
    }
    for (int y = 0; y < out_height; ++y)
        for (int x = 0; x < out_width; ++x) {
            const Point2 p = to_src.apply({x + 0.5, y + 0.5});
            const Taps tx = cubic_taps(p.x - 0.5, f);
            const Taps ty = cubic_taps(p.y - 0.5, f);
            double acc = 0.0;
            for (std::size_t j = 0; j < ty.weights.size(); ++j) {
                double row = 0.0;
                for (std::size_t i = 0; i < tx.weights.size(); ++i)
                    row += tx.weights[i] * src.clamped(tx.first + static_cast<int>(i),
                                                       ty.first + static_cast<int>(j));
                acc += ty.weights[j] * row;
            }
            out.at(x, y) = acc;
        }
    return out;
}

Tensor4 to_tensor(const Image& img) {
    Tensor4 t(1, 1, img.height(), img.width());
    std::copy(img.pixels().begin(), img.pixels().end(), t.data().begin());
    return t;
}

Tensor4 to_tensor(std::span<const Image> batch) {
    if (batch.empty()) throw ShapeError("to_tensor: empty batch");
    Tensor4 t(static_cast<int>(batch.size()), 1, batch[0].height(), batch[0].width());
    for (std::size_t b = 0; b < batch.size(); ++b) {
        if (!batch[b].same_extent(batch[0])) throw ShapeError("to_tensor: batch extents differ");
        std::copy(batch[b].pixels().begin(), batch[b].pixels().end(),
                  t.plane(static_cast<int>(b), 0).begin());
    }
    return t;
}

Image from_tensor(const Tensor4& t, int b, int c) {
    Image img(t.width(), t.height());
    auto p = t.plane(b, c);
    std::copy(p.begin(), p.end(), img.pixels().begin());
    return img;
}

Image operator+(const Image& a, const Image& b) {
    if (!a.same_extent(b)) throw ShapeError("image add: extent mismatch");
    Image out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.pixels()[i] += b.pixels()[i];
    return out;
}

Image operator-(const Image& a, const Image& b) {
    if (!a.same_extent(b)) throw ShapeError("image sub: extent mismatch");
    Image out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.pixels()[i] -= b.pixels()[i];
    return out;
}

void clamp_unit(Image& img) {
    for (double& v : img.pixels()) v = std::clamp(v, 0.0, 1.0);
}

}  // namespace cbn
