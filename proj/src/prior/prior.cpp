#include "cbn/prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace cbn::prior {
namespace {

struct Cluster {
    std::vector<std::size_t> pixels;
    double mass = 0.0;
    Point2 centroid;
};

Point2 weighted_centroid(const std::vector<std::size_t>& pixels, const Image& map, double* mass) {
    double m = 0.0, sx = 0.0, sy = 0.0;
    for (std::size_t i : pixels) {
        const int x = static_cast<int>(i % map.width());
        const int y = static_cast<int>(i / map.width());
        const double w = map.pixels()[i];
        m += w;
        sx += w * (x + 0.5);
        sy += w * (y + 0.5);
    }
    if (mass) *mass = m;
    if (m <= 0.0) return {};
    return {sx / m, sy / m};
}

void refresh(Cluster& c, const Image& map) { c.centroid = weighted_centroid(c.pixels, map, &c.mass); }

double dist2(Point2 a, Point2 b) {
    const double dx = a.x - b.x, dy = a.y - b.y;
    return dx * dx + dy * dy;
}

Point2 pixel_center(std::size_t i, int width) {
    return {static_cast<double>(i % width) + 0.5, static_cast<double>(i / width) + 0.5};
}

// 8-connected components of `active`, in raster order of their first pixel.
std::vector<Cluster> components(const std::vector<std::uint8_t>& active, const Image& map) {
    const int w = map.width(), h = map.height();
    std::vector<int> label(active.size(), -1);
    std::vector<Cluster> out;
    std::vector<std::size_t> stack;
    for (std::size_t seed = 0; seed < active.size(); ++seed) {
        if (!active[seed] || label[seed] >= 0) continue;
        const int id = static_cast<int>(out.size());
        out.emplace_back();
        label[seed] = id;
        stack.assign(1, seed);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            out.back().pixels.push_back(i);
            const int x = static_cast<int>(i % w), y = static_cast<int>(i / w);
            for (int dy = -1; dy <= 1; ++dy) {
                for (int dx = -1; dx <= 1; ++dx) {
                    const int nx = x + dx, ny = y + dy;
                    if (nx < 0 || ny < 0 || nx >= w || ny >= h) continue;
                    const std::size_t j = static_cast<std::size_t>(ny) * w + nx;
                    if (active[j] && label[j] < 0) {
                        label[j] = id;
                        stack.push_back(j);
                    }
                }
            }
        }
        std::sort(out.back().pixels.begin(), out.back().pixels.end());
        refresh(out.back(), map);
    }
    return out;
}

// Too many components: k-means over whole components, so every contour stays
// in one piece. Seeds are the C heaviest components.
std::vector<Cluster> merge_components(std::vector<Cluster> comps, int k, const Image& map,
                                      int iterations) {
    std::vector<std::size_t> order(comps.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return comps[a].mass > comps[b].mass; });
    std::vector<Point2> centers;
    for (int c = 0; c < k; ++c) centers.push_back(comps[order[c]].centroid);

    std::vector<int> assign(comps.size(), -1);
    for (int it = 0; it < std::max(1, iterations); ++it) {
        bool changed = false;
        for (std::size_t a = 0; a < comps.size(); ++a) {
            int best = 0;
            double bd = std::numeric_limits<double>::infinity();
            for (int c = 0; c < k; ++c) {
                const double d = dist2(comps[a].centroid, centers[c]);
                if (d < bd) {
                    bd = d;
                    best = c;
                }
            }
            if (assign[a] != best) {
                assign[a] = best;
                changed = true;
            }
        }
        if (!changed && it > 0) break;
        for (int c = 0; c < k; ++c) {
            double m = 0.0, sx = 0.0, sy = 0.0;
            for (std::size_t a = 0; a < comps.size(); ++a) {
                if (assign[a] != c) continue;
                m += comps[a].mass;
                sx += comps[a].mass * comps[a].centroid.x;
                sy += comps[a].mass * comps[a].centroid.y;
            }
            if (m > 0.0) centers[c] = {sx / m, sy / m};
        }
    }
    std::vector<Cluster> out(k);
    for (std::size_t a = 0; a < comps.size(); ++a) {
        auto& dst = out[assign[a]].pixels;
        dst.insert(dst.end(), comps[a].pixels.begin(), comps[a].pixels.end());
    }
    for (auto& c : out) {
        std::sort(c.pixels.begin(), c.pixels.end());
        refresh(c, map);
    }
    return out;
}

// Two-means split of one cluster over its pixel coordinates, seeded with the
// pixel farthest from the centroid and the pixel farthest from that one.
std::pair<Cluster, Cluster> split(const Cluster& c, const Image& map, int iterations) {
    const int w = map.width();
    auto farthest = [&](Point2 from) {
        std::size_t best = c.pixels.front();
        double bd = -1.0;
        for (std::size_t i : c.pixels) {
            const double d = dist2(pixel_center(i, w), from);
            if (d > bd) {
                bd = d;
                best = i;
            }
        }
        return best;
    };
    const std::size_t s0 = farthest(c.centroid);
    const std::size_t s1 = farthest(pixel_center(s0, w));
    Point2 centers[2] = {pixel_center(s0, w), pixel_center(s1, w)};
    std::vector<int> assign(c.pixels.size(), -1);
    for (int it = 0; it < std::max(1, iterations); ++it) {
        bool changed = false;
        for (std::size_t n = 0; n < c.pixels.size(); ++n) {
            const Point2 q = pixel_center(c.pixels[n], w);
            const int a = dist2(q, centers[1]) < dist2(q, centers[0]) ? 1 : 0;
            if (assign[n] != a) {
                assign[n] = a;
                changed = true;
            }
        }
        if (!changed && it > 0) break;
        for (int k = 0; k < 2; ++k) {
            double m = 0.0, sx = 0.0, sy = 0.0;
            for (std::size_t n = 0; n < c.pixels.size(); ++n) {
                if (assign[n] != k) continue;
                const double v = map.pixels()[c.pixels[n]];
                const Point2 q = pixel_center(c.pixels[n], w);
                m += v;
                sx += v * q.x;
                sy += v * q.y;
            }
            if (m > 0.0) centers[k] = {sx / m, sy / m};
        }
    }
    Cluster a, b;
    for (std::size_t n = 0; n < c.pixels.size(); ++n)
        (assign[n] == 0 ? a : b).pixels.push_back(c.pixels[n]);
    refresh(a, map);
    refresh(b, map);
    return {std::move(a), std::move(b)};
}

}  // namespace

PriorBuild partition_prior(const Image& preliminary, const std::vector<std::uint8_t>& mask,
                           const PriorBuildConfig& cfg) {
    if (cfg.channels < 1) throw ArgumentError("prior channel count must be at least 1");
    if (cfg.magnitude_percentile_floor < 0.0 || cfg.magnitude_percentile_floor >= 1.0)
        throw ArgumentError("magnitude_percentile_floor must lie in [0, 1)");
    if (mask.size() != preliminary.size()) throw ShapeError("prior mask does not match the map");

    const int w = preliminary.width(), h = preliminary.height();
    PriorBuild out;
    out.preliminary = preliminary;
    out.channels = Tensor4(1, cfg.channels, h, w);

    std::vector<double> values;
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) values.push_back(preliminary.pixels()[i]);
    if (values.empty()) return out;
    const auto rank = static_cast<std::size_t>(
        std::floor(cfg.magnitude_percentile_floor * static_cast<double>(values.size() - 1)));
    std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(rank),
                     values.end());
    out.threshold = values[rank];

    std::vector<std::uint8_t> active(mask.size(), 0);
    for (std::size_t i = 0; i < mask.size(); ++i)
        active[i] = mask[i] && preliminary.pixels()[i] > out.threshold;

    std::vector<Cluster> clusters = components(active, preliminary);
    if (clusters.empty()) return out;
    if (static_cast<int>(clusters.size()) > cfg.channels) {
        clusters = merge_components(std::move(clusters), cfg.channels, preliminary,
                                    cfg.kmeans_iterations);
    }
    while (static_cast<int>(clusters.size()) < cfg.channels) {
        // Split the heaviest cluster that still has two pixels.
        int pick = -1;
        for (std::size_t c = 0; c < clusters.size(); ++c) {
            if (clusters[c].pixels.size() < 2) continue;
            if (pick < 0 || clusters[c].mass > clusters[pick].mass) pick = static_cast<int>(c);
        }
        if (pick < 0) break;
        auto [a, b] = split(clusters[pick], preliminary, cfg.kmeans_iterations);
        clusters[pick] = std::move(a);
        clusters.push_back(std::move(b));
    }

    // Stable channel order: top-to-bottom, then left-to-right.
    std::stable_sort(clusters.begin(), clusters.end(), [](const Cluster& a, const Cluster& b) {
        if (a.centroid.y != b.centroid.y) return a.centroid.y < b.centroid.y;
        return a.centroid.x < b.centroid.x;
    });
    for (std::size_t c = 0; c < clusters.size(); ++c) {
        auto plane = out.channels.plane(0, static_cast<int>(c));
        for (std::size_t i : clusters[c].pixels) plane[i] = preliminary.pixels()[i];
    }
    return out;
}

PriorBuild build_prior(const std::vector<PriorTrainingPair>& pairs,
                       const geometry::MeanTemplate& tmpl, const PriorBuildConfig& cfg) {
    if (pairs.empty()) throw DataError("prior needs at least one training pair");
    Image sum(tmpl.width, tmpl.height);
    for (const PriorTrainingPair& pr : pairs) {
        if (pr.field.width != tmpl.width || pr.field.height != tmpl.height)
            throw ShapeError("dense field does not match the template raster");
        const int factor = pr.high.width() / pr.low.width();
        if (factor < 1 || pr.high.width() != factor * pr.low.width() ||
            pr.high.height() != factor * pr.low.height())
            throw ShapeError("high-res image is not an integer multiple of the low-res one");
        const Image up = factor == 1 ? pr.low : upscale(pr.low, factor);
        Image mag = pr.high - up;
        for (double& v : mag.pixels()) v = std::abs(v);
        const Image warped = geometry::warp_image_to_template(mag, pr.field);
        for (std::size_t i = 0; i < sum.size(); ++i) sum.pixels()[i] += warped.pixels()[i];
    }
    for (double& v : sum.pixels()) v /= static_cast<double>(pairs.size());
    Image smooth = gaussian_blur(sum, cfg.smoothing_radius);
    for (std::size_t i = 0; i < smooth.size(); ++i)
        if (!tmpl.domain_mask[i]) smooth.pixels()[i] = 0.0;
    return partition_prior(smooth, tmpl.domain_mask, cfg);
}

}  // namespace cbn::prior
