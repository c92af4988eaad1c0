#include "cbn/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

namespace cbn::metrics {
namespace {

void check_pair(const Image& a, const Image& b, const FacialRegion& region) {
    if (!a.same_extent(b)) throw ShapeError("metric: image extents differ");
    if (region.width != a.width() || region.height != a.height())
        throw ShapeError("metric: region does not match the images");
}

constexpr int kRadius = 5;
constexpr double kSigma = 1.5;

std::vector<double> gaussian_taps() {
    std::vector<double> g(2 * kRadius + 1);
    for (int i = -kRadius; i <= kRadius; ++i)
        g[i + kRadius] = std::exp(-(i * i) / (2.0 * kSigma * kSigma));
    return g;
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

std::size_t FacialRegion::count() const {
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

FacialRegion full_region(int width, int height) {
    return {width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 1)};
}

FacialRegion region_from_landmarks(const geometry::Landmarks& landmarks, int width, int height) {
    if (landmarks.empty()) return full_region(width, height);
    const auto hull = geometry::convex_hull(landmarks);
    FacialRegion r{width, height, std::vector<std::uint8_t>(static_cast<std::size_t>(width) * height, 0)};
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            r.mask[static_cast<std::size_t>(y) * width + x] =
                geometry::inside_convex(hull, {x + 0.5, y + 0.5}) ? 1 : 0;
    if (r.count() == 0) throw DegenerateInputError("facial region is empty");
    return r;
}

double psnr(const Image& a, const Image& b, const FacialRegion& region, double peak) {
    check_pair(a, b, region);
    double sse = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (!region.mask[i]) continue;
        const double d = a.pixels()[i] - b.pixels()[i];
        sse += d * d;
        ++n;
    }
    if (n == 0) throw ArgumentError("psnr: empty region");
    if (sse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(peak * peak / (sse / static_cast<double>(n)));
}

double ssim(const Image& a, const Image& b, const FacialRegion& region, double peak) {
    check_pair(a, b, region);
    const double c1 = (0.01 * peak) * (0.01 * peak);
    const double c2 = (0.03 * peak) * (0.03 * peak);
    const std::vector<double> g = gaussian_taps();
    const int w = a.width(), h = a.height();
    double total = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            if (!region.contains(x, y)) continue;
            // Window truncated at the raster border and renormalized.
            double sw = 0.0, ma = 0.0, mb = 0.0, aa = 0.0, bb = 0.0, ab = 0.0;
            for (int dy = -kRadius; dy <= kRadius; ++dy) {
                const int yy = y + dy;
                if (yy < 0 || yy >= h) continue;
                for (int dx = -kRadius; dx <= kRadius; ++dx) {
                    const int xx = x + dx;
                    if (xx < 0 || xx >= w) continue;
                    const double wt = g[dy + kRadius] * g[dx + kRadius];
                    const double va = a.at(xx, yy), vb = b.at(xx, yy);
                    sw += wt;
                    ma += wt * va;
                    mb += wt * vb;
                    aa += wt * va * va;
                    bb += wt * vb * vb;
                    ab += wt * va * vb;
                }
            }
            ma /= sw;
            mb /= sw;
            const double va = aa / sw - ma * ma;
            const double vb = bb / sw - mb * mb;
            const double cov = ab / sw - ma * mb;
            total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                     ((ma * ma + mb * mb + c1) * (va + vb + c2));
            ++n;
        }
    }
    if (n == 0) throw ArgumentError("ssim: empty region");
    return total / static_cast<double>(n);
}

ScoreReport summarize(std::vector<ScoreRow> rows) {
    ScoreReport r;
    r.rows = std::move(rows);
    double sp = 0.0, ss = 0.0;
    for (const ScoreRow& row : r.rows) {
        if (!row.error.empty()) {
            ++r.failed;
            continue;
        }
        sp += row.psnr_capped ? kPsnrCap : row.psnr_db;
        ss += row.ssim;
        ++r.scored;
    }
    if (r.scored > 0) {
        r.mean_psnr = sp / r.scored;
        r.mean_ssim = ss / r.scored;
    }
    return r;
}

std::string ScoreReport::csv() const {
    std::ostringstream out;
    out << "id,psnr_db,psnr_capped,ssim,error\n";
    for (const ScoreRow& row : rows) {
        if (!row.error.empty()) {
            out << row.id << ",,,," << '"' << row.error << '"' << '\n';
            continue;
        }
        out << row.id << ',' << format_double(row.psnr_capped ? kPsnrCap : row.psnr_db) << ','
            << (row.psnr_capped ? 1 : 0) << ',' << format_double(row.ssim) << ",\n";
    }
    out << "mean," << format_double(mean_psnr) << ",," << format_double(mean_ssim) << ",\n";
    return out.str();
}

std::string ScoreReport::summary() const {
    std::ostringstream out;
    out << "images scored: " << scored << ", failed: " << failed << '\n'
        << "mean PSNR: " << format_double(mean_psnr) << " dB\n"
        << "mean SSIM: " << format_double(mean_ssim) << '\n';
    return out.str();
}

}  // namespace cbn::metrics
