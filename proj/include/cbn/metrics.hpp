#pragma once

// PSNR and SSIM over a facial region of the luminance channel.

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "cbn/geometry.hpp"
#include "cbn/image.hpp"

namespace cbn::metrics {

struct FacialRegion {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> mask;

    std::size_t count() const;
    bool contains(int x, int y) const { return mask[static_cast<std::size_t>(y) * width + x] != 0; }
};

FacialRegion full_region(int width, int height);
// Pixels whose centers lie in the convex hull of `landmarks`; the whole raster
// when `landmarks` is empty.
FacialRegion region_from_landmarks(const geometry::Landmarks& landmarks, int width, int height);

// Identical images give +infinity; reports print it as kPsnrCap with a flag.
inline constexpr double kPsnrCap = 100.0;

double psnr(const Image& a, const Image& b, const FacialRegion& region, double peak = 1.0);
double ssim(const Image& a, const Image& b, const FacialRegion& region, double peak = 1.0);

struct ScoreRow {
    std::string id;
    double psnr_db = 0.0;
    bool psnr_capped = false;
    double ssim = 0.0;
    std::string error;  // non-empty when the pair could not be scored
};

struct ScoreReport {
    std::vector<ScoreRow> rows;
    double mean_psnr = 0.0;
    double mean_ssim = 0.0;
    int scored = 0;
    int failed = 0;

    // Header "id,psnr_db,psnr_capped,ssim,error", one row per image, then a
    // "mean" row.
    std::string csv() const;
    std::string summary() const;
};

// Aggregates rows (capped values enter the mean at kPsnrCap).
ScoreReport summarize(std::vector<ScoreRow> rows);

}  // namespace cbn::metrics
