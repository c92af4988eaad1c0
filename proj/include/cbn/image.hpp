#pragma once

// Luminance rasters and the resampling primitives shared by every stage.
//
// Coordinates are "area" coordinates: pixel (i, j) covers [i, i+1) x [j, j+1)
// and its center sits at (i + 0.5, j + 0.5). Scaling an image by a factor s
// therefore scales every coordinate by exactly s.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "cbn/error.hpp"
#include "cbn/tensor.hpp"

namespace cbn {

struct Point2 {
    double x = 0.0;
    double y = 0.0;

    Point2 operator+(Point2 o) const { return {x + o.x, y + o.y}; }
    Point2 operator-(Point2 o) const { return {x - o.x, y - o.y}; }
    Point2 operator*(double s) const { return {x * s, y * s}; }
    bool operator==(const Point2&) const = default;
};

inline double distance(Point2 a, Point2 b) { return std::hypot(a.x - b.x, a.y - b.y); }

/// u = scale * R(angle) * x + (tx, ty).
struct Similarity {
    double scale = 1.0;
    double angle = 0.0;
    double tx = 0.0;
    double ty = 0.0;

    Point2 apply(Point2 p) const;
    Similarity inverse() const;
    // (this o other)(x) = this(other(x))
    Similarity compose(const Similarity& other) const;
    bool is_identity() const { return scale == 1.0 && angle == 0.0 && tx == 0.0 && ty == 0.0; }
};

// The similarity mapping a0 -> b0 and a1 -> b1. Throws DegenerateInputError
// when a0 == a1.
Similarity similarity_from_pairs(Point2 a0, Point2 a1, Point2 b0, Point2 b1);

class Image {
public:
    Image() = default;
    Image(int width, int height, double fill = 0.0);

    int width() const noexcept { return width_; }
    int height() const noexcept { return height_; }
    std::size_t size() const noexcept { return pixels_.size(); }
    bool empty() const noexcept { return pixels_.empty(); }

    double& at(int x, int y) noexcept { return pixels_[static_cast<std::size_t>(y) * width_ + x]; }
    double at(int x, int y) const noexcept {
        return pixels_[static_cast<std::size_t>(y) * width_ + x];
    }
    double clamped(int x, int y) const noexcept;

    std::span<double> pixels() noexcept { return pixels_; }
    std::span<const double> pixels() const noexcept { return pixels_; }

    bool same_extent(const Image& o) const noexcept {
        return width_ == o.width_ && height_ == o.height_;
    }
    bool operator==(const Image&) const = default;

private:
    int width_ = 0;
    int height_ = 0;
    std::vector<double> pixels_;
};

// Keys cubic convolution kernel, a = -0.5.
double cubic_kernel(double t);

// Bilinear sample at area coordinate p; taps outside the raster count as 0.
double sample_bilinear_zero(const Image& img, Point2 p);
// Bicubic sample at area coordinate p with edge replication.
double sample_bicubic(const Image& img, Point2 p);

/// Separable cubic resize. Output pixel center u maps to input coordinate
/// u * factor (per axis). When factor > 1 the kernel is widened by the factor
/// (antialiased minification).
Image resize_cubic(const Image& img, int out_width, int out_height, double factor_x,
                   double factor_y);

// 2x bicubic upscale.
Image upscale2(const Image& img);
// Integer-factor antialiased cubic downscale; extents must be divisible.
Image downscale(const Image& img, int factor);
// Integer-factor bicubic upscale.
Image upscale(const Image& img, int factor);

// Separable Gaussian blur, radius ceil(3 sigma), edge replication. sigma == 0 is a copy.
Image gaussian_blur(const Image& img, double sigma);

/// Resamples `src` into a raster of the given extent where output coordinate
/// u samples src at `to_src.apply(u)`. Uses the cubic kernel widened by the
/// local minification factor. Samples whose footprint misses the raster use
/// edge replication.
Image resample(const Image& src, const Similarity& to_src, int out_width, int out_height);

Tensor4 to_tensor(const Image& img);
Tensor4 to_tensor(std::span<const Image> batch);
Image from_tensor(const Tensor4& t, int b = 0, int c = 0);

Image operator+(const Image& a, const Image& b);
Image operator-(const Image& a, const Image& b);

void clamp_unit(Image& img);

}  // namespace cbn
