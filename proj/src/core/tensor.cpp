#include "cbn/tensor.hpp"

#include <algorithm>
#include <cmath>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cbn {

std::string Shape4::str() const {
    return "(" + std::to_string(batch) + "," + std::to_string(channels) + "," +
           std::to_string(height) + "," + std::to_string(width) + ")";
}

Tensor4::Tensor4(Shape4 shape, double fill) : shape_(shape) {
    if (shape.batch < 1 || shape.channels < 1 || shape.height < 1 || shape.width < 1)
        throw ShapeError("tensor extents must be >= 1, got " + shape.str());
    data_.assign(shape.size(), fill);
}

void Tensor4::fill(double v) noexcept { std::fill(data_.begin(), data_.end(), v); }

bool Tensor4::all_finite() const noexcept {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

void retain_freed_memory() {
#if defined(__GLIBC__)
    mallopt(M_MMAP_THRESHOLD, 1 << 30);
    mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
    if (!(a == b)) throw ShapeError(std::string(what) + ": shape " + a.str() + " vs " + b.str());
}

}  // namespace cbn
