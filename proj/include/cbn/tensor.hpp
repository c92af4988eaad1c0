#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cbn/error.hpp"

namespace cbn {

struct Shape4 {
    int batch = 1;
    int channels = 1;
    int height = 1;
    int width = 1;

    std::size_t size() const noexcept {
        return static_cast<std::size_t>(batch) * channels * height * width;
    }
    std::size_t plane() const noexcept { return static_cast<std::size_t>(height) * width; }
    bool operator==(const Shape4&) const = default;
    std::string str() const;
};

/// Dense (batch, channel, row, col) array of doubles, row-major with the
/// column index fastest.
class Tensor4 {
public:
    Tensor4() = default;
    explicit Tensor4(Shape4 shape, double fill = 0.0);
    Tensor4(int batch, int channels, int height, int width, double fill = 0.0)
        : Tensor4(Shape4{batch, channels, height, width}, fill) {}

    const Shape4& shape() const noexcept { return shape_; }
    int batch() const noexcept { return shape_.batch; }
    int channels() const noexcept { return shape_.channels; }
    int height() const noexcept { return shape_.height; }
    int width() const noexcept { return shape_.width; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    std::size_t index(int b, int c, int y, int x) const noexcept {
        return ((static_cast<std::size_t>(b) * shape_.channels + c) * shape_.height + y) *
                   shape_.width +
               x;
    }
    double& operator()(int b, int c, int y, int x) noexcept { return data_[index(b, c, y, x)]; }
    double operator()(int b, int c, int y, int x) const noexcept {
        return data_[index(b, c, y, x)];
    }
    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Contiguous H*W plane of one (batch, channel) pair.
    std::span<double> plane(int b, int c) noexcept {
        return std::span<double>(data_).subspan(index(b, c, 0, 0), shape_.plane());
    }
    std::span<const double> plane(int b, int c) const noexcept {
        return std::span<const double>(data_).subspan(index(b, c, 0, 0), shape_.plane());
    }

    void fill(double v) noexcept;
    bool all_finite() const noexcept;

    bool operator==(const Tensor4&) const = default;

private:
    Shape4 shape_{0, 0, 0, 0};
    std::vector<double> data_;
};

// Process-wide allocator tuning for executables: keeps freed tensor buffers in
// the heap instead of returning them to the OS after every training step.
// No-op outside glibc.
void retain_freed_memory();

// Throws ShapeError with `what` as context when shapes differ.
void require_same_shape(const Shape4& a, const Shape4& b, const char* what);

}  // namespace cbn
