#include "cbn/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace cbn::geometry {
namespace {

double level_scale(int level) { return std::ldexp(1.0, level); }

double tps_kernel(double r2) { return r2 > 0.0 ? r2 * std::log(r2) : 0.0; }

Point2 centroid_of(const Landmarks& pts) {
    Point2 c;
    for (const Point2& p : pts) c = c + p;
    return c * (1.0 / static_cast<double>(pts.size()));
}

// Centered, unit Frobenius norm copy.
Landmarks normalize_shape(const Landmarks& s) {
    const Point2 c = centroid_of(s);
    Landmarks out(s.size());
    double norm2 = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        out[i] = s[i] - c;
        norm2 += out[i].x * out[i].x + out[i].y * out[i].y;
    }
    if (!(norm2 > 0.0)) throw DataError("build_bases: training shape collapses to a point");
    const double inv = 1.0 / std::sqrt(norm2);
    for (Point2& p : out) p = p * inv;
    return out;
}

// Rotates centered shape `a` onto centered shape `b`.
Landmarks rotate_onto(const Landmarks& a, const Landmarks& b) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        num += a[i].x * b[i].y - a[i].y * b[i].x;
        den += a[i].x * b[i].x + a[i].y * b[i].y;
    }
    const double th = std::atan2(num, den);
    const double c = std::cos(th);
    const double s = std::sin(th);
    Landmarks out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i)
        out[i] = {c * a[i].x - s * a[i].y, s * a[i].x + c * a[i].y};
    return out;
}

double cross(Point2 o, Point2 a, Point2 b) {
    return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

}  // namespace

Point2 LandmarkLayout::left_eye_center(const Landmarks& pts) const {
    Point2 c;
    for (int i : left_eye) c = c + pts.at(static_cast<std::size_t>(i));
    return c * (1.0 / static_cast<double>(left_eye.size()));
}

Point2 LandmarkLayout::right_eye_center(const Landmarks& pts) const {
    Point2 c;
    for (int i : right_eye) c = c + pts.at(static_cast<std::size_t>(i));
    return c * (1.0 / static_cast<double>(right_eye.size()));
}

TemplateFrame TemplateFrame::at_level(int level) const {
    const int f = 1 << level;
    const double s = level_scale(level);
    return {width * f, height * f, eye_left * s, eye_right * s};
}

Eigen::VectorXd flatten(const Landmarks& pts) {
    Eigen::VectorXd v(2 * pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        v(2 * i) = pts[i].x;
        v(2 * i + 1) = pts[i].y;
    }
    return v;
}

Landmarks unflatten(const Eigen::VectorXd& v) {
    Landmarks pts(static_cast<std::size_t>(v.size() / 2));
    for (std::size_t i = 0; i < pts.size(); ++i) pts[i] = {v(2 * i), v(2 * i + 1)};
    return pts;
}

Point2 ShapeModel::dense_basis(int n, Point2 z) const {
    switch (n) {
        case kScaleColumn:
            return z - centroid;
        case kRotationColumn:
            return {-(z.y - centroid.y), z.x - centroid.x};
        case kShiftX:
            return {1.0, 0.0};
        case kShiftY:
            return {0.0, 1.0};
        default:
            break;
    }
    const Eigen::MatrixXd& c = tps.at(static_cast<std::size_t>(n - kSimilarityColumns));
    const std::size_t L = mean.size();
    double dx = c(L, 0) + c(L + 1, 0) * z.x + c(L + 2, 0) * z.y;
    double dy = c(L, 1) + c(L + 1, 1) * z.x + c(L + 2, 1) * z.y;
    for (std::size_t i = 0; i < L; ++i) {
        const double ex = z.x - mean[i].x;
        const double ey = z.y - mean[i].y;
        const double u = tps_kernel(ex * ex + ey * ey);
        dx += c(i, 0) * u;
        dy += c(i, 1) * u;
    }
    return {dx, dy};
}

Landmarks ShapeModel::landmarks(const DeformationCoeffs& p, int level) const {
    if (p.size() != num_bases())
        throw DimensionError("landmarks: expected " + std::to_string(num_bases()) +
                             " coefficients, got " + std::to_string(p.size()));
    const Eigen::VectorXd x = flatten(mean) + landmark_bases * p.p;
    Landmarks pts = unflatten(x);
    const double s = level_scale(level);
    if (s != 1.0)
        for (Point2& q : pts) q = q * s;
    return pts;
}

DeformationCoeffs ShapeModel::fit(const Landmarks& pts, int level) const {
    if (pts.size() != mean.size()) throw DimensionError("fit: landmark count mismatch");
    const double s = level_scale(level);
    Eigen::VectorXd r = flatten(pts) / s - flatten(mean);
    return DeformationCoeffs(landmark_bases.completeOrthogonalDecomposition().solve(r));
}

Similarity procrustes(const Landmarks& from, const Landmarks& to) {
    if (from.size() != to.size() || from.empty())
        throw DimensionError("procrustes: landmark sets differ in size");
    const Point2 cf = centroid_of(from);
    const Point2 ct = centroid_of(to);
    double re = 0.0;
    double im = 0.0;
    double norm2 = 0.0;
    for (std::size_t i = 0; i < from.size(); ++i) {
        const Point2 a = from[i] - cf;
        const Point2 b = to[i] - ct;
        re += a.x * b.x + a.y * b.y;
        im += a.x * b.y - a.y * b.x;
        norm2 += a.x * a.x + a.y * a.y;
    }
    if (!(norm2 > 0.0)) throw DegenerateInputError("procrustes: source shape is a point");
    re /= norm2;
    im /= norm2;
    Similarity s;
    s.scale = std::hypot(re, im);
    s.angle = std::atan2(im, re);
    s.tx = ct.x - (re * cf.x - im * cf.y);
    s.ty = ct.y - (im * cf.x + re * cf.y);
    return s;
}

ShapeModel build_bases(const std::vector<Landmarks>& train_shapes, int num_bases,
                       const TemplateFrame& frame, const LandmarkLayout& layout) {
    if (num_bases < kSimilarityColumns + 1)
        throw ArgumentError("build_bases: need N >= 5, got " + std::to_string(num_bases));
    const int nonrigid = num_bases - kSimilarityColumns;
    if (static_cast<int>(train_shapes.size()) < nonrigid || train_shapes.empty())
        throw DataError("build_bases: " + std::to_string(train_shapes.size()) +
                        " shapes cannot support " + std::to_string(nonrigid) +
                        " non-rigid components");
    const std::size_t L = static_cast<std::size_t>(layout.count);
    for (const Landmarks& s : train_shapes)
        if (s.size() != L) throw DimensionError("build_bases: shape with wrong landmark count");
    if (2 * static_cast<int>(L) - kSimilarityColumns < nonrigid)
        throw ArgumentError("build_bases: more bases than landmark degrees of freedom");

    // Generalized Procrustes alignment (rotation only on unit-norm shapes).
    std::vector<Landmarks> normed;
    normed.reserve(train_shapes.size());
    for (const Landmarks& s : train_shapes) normed.push_back(normalize_shape(s));
    const Landmarks& reference = normed.front();
    Landmarks mean = reference;
    for (int iter = 0; iter < 200; ++iter) {
        Landmarks acc(L);
        for (const Landmarks& s : normed) {
            const Landmarks r = rotate_onto(s, mean);
            for (std::size_t i = 0; i < L; ++i) acc[i] = acc[i] + r[i];
        }
        Landmarks next = rotate_onto(normalize_shape(acc), reference);
        double delta = 0.0;
        for (std::size_t i = 0; i < L; ++i) delta += std::abs(next[i].x - mean[i].x) + std::abs(next[i].y - mean[i].y);
        mean = std::move(next);
        if (delta < 1e-14) break;
    }

    ShapeModel model;
    model.frame = frame;
    model.layout = layout;
    const Similarity place = similarity_from_pairs(layout.left_eye_center(mean),
                                                   layout.right_eye_center(mean), frame.eye_left,
                                                   frame.eye_right);
    model.mean.resize(L);
    for (std::size_t i = 0; i < L; ++i) model.mean[i] = place.apply(mean[i]);
    model.centroid = centroid_of(model.mean);

    const Eigen::Index D = static_cast<Eigen::Index>(2 * L);
    Eigen::MatrixXd sim(D, kSimilarityColumns);
    for (std::size_t i = 0; i < L; ++i) {
        const Point2 d = model.mean[i] - model.centroid;
        const Eigen::Index r = static_cast<Eigen::Index>(2 * i);
        sim(r, kScaleColumn) = d.x;
        sim(r + 1, kScaleColumn) = d.y;
        sim(r, kRotationColumn) = -d.y;
        sim(r + 1, kRotationColumn) = d.x;
        sim(r, kShiftX) = 1.0;
        sim(r + 1, kShiftX) = 0.0;
        sim(r, kShiftY) = 0.0;
        sim(r + 1, kShiftY) = 1.0;
    }
    const Eigen::MatrixXd q = sim.householderQr().householderQ() *
                              Eigen::MatrixXd::Identity(D, kSimilarityColumns);

    const Eigen::VectorXd mean_vec = flatten(model.mean);
    Eigen::MatrixXd resid(static_cast<Eigen::Index>(train_shapes.size()), D);
    for (std::size_t s = 0; s < train_shapes.size(); ++s) {
        const Similarity t = procrustes(train_shapes[s], model.mean);
        Landmarks aligned(L);
        for (std::size_t i = 0; i < L; ++i) aligned[i] = t.apply(train_shapes[s][i]);
        Eigen::VectorXd r = flatten(aligned) - mean_vec;
        r -= q * (q.transpose() * r);
        resid.row(static_cast<Eigen::Index>(s)) = r.transpose();
    }
    const Eigen::MatrixXd cov =
        (resid.transpose() * resid) / static_cast<double>(train_shapes.size());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) throw NumericError("build_bases: eigen decomposition failed");

    const double tol = 1e-20 * std::max(1.0, mean_vec.squaredNorm());
    model.landmark_bases = Eigen::MatrixXd::Zero(D, num_bases);
    model.landmark_bases.leftCols(kSimilarityColumns) = sim;
    model.variances = Eigen::VectorXd::Zero(nonrigid);
    for (int j = 0; j < nonrigid; ++j) {
        const Eigen::Index src = D - 1 - j;
        const double lambda = eig.eigenvalues()(src);
        if (!(lambda > tol)) continue;
        Eigen::VectorXd v = eig.eigenvectors().col(src);
        // Components live in the non-similarity complement; remove any drift.
        v -= q * (q.transpose() * v);
        v.normalize();
        Eigen::Index imax = 0;
        v.cwiseAbs().maxCoeff(&imax);
        if (v(imax) < 0.0) v = -v;
        model.landmark_bases.col(kSimilarityColumns + j) = v;
        model.variances(j) = lambda;
    }

    // Thin-plate spline interpolant of every non-rigid column.
    const Eigen::Index n = static_cast<Eigen::Index>(L);
    Eigen::MatrixXd system = Eigen::MatrixXd::Zero(n + 3, n + 3);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            const double ex = model.mean[i].x - model.mean[j].x;
            const double ey = model.mean[i].y - model.mean[j].y;
            system(i, j) = tps_kernel(ex * ex + ey * ey);
        }
        system(i, n) = 1.0;
        system(i, n + 1) = model.mean[i].x;
        system(i, n + 2) = model.mean[i].y;
        system(n, i) = 1.0;
        system(n + 1, i) = model.mean[i].x;
        system(n + 2, i) = model.mean[i].y;
    }
    const Eigen::FullPivLU<Eigen::MatrixXd> lu(system);
    if (!lu.isInvertible())
        throw NumericError("build_bases: thin-plate system is singular (duplicate mean landmarks?)");
    for (int j = 0; j < nonrigid; ++j) {
        Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(n + 3, 2);
        for (Eigen::Index i = 0; i < n; ++i) {
            rhs(i, 0) = model.landmark_bases(2 * i, kSimilarityColumns + j);
            rhs(i, 1) = model.landmark_bases(2 * i + 1, kSimilarityColumns + j);
        }
        model.tps.push_back(lu.solve(rhs));
    }
    return model;
}

std::vector<Point2> convex_hull(std::vector<Point2> pts) {
    std::sort(pts.begin(), pts.end(),
              [](Point2 a, Point2 b) { return a.x < b.x || (a.x == b.x && a.y < b.y); });
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) return pts;
    std::vector<Point2> hull(2 * pts.size());
    std::size_t k = 0;
    for (const Point2& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

bool inside_convex(const std::vector<Point2>& hull, Point2 p) {
    if (hull.size() < 3) return false;
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Point2& a = hull[i];
        const Point2& b = hull[(i + 1) % hull.size()];
        if (cross(a, b, p) < 0.0) return false;
    }
    return true;
}

std::size_t MeanTemplate::domain_size() const {
    return static_cast<std::size_t>(std::count(domain_mask.begin(), domain_mask.end(), 1));
}

MeanTemplate make_template(const ShapeModel& model, int level, double dilation) {
    const TemplateFrame f = model.frame.at_level(level);
    const double s = level_scale(level);
    MeanTemplate t;
    t.level = level;
    t.width = f.width;
    t.height = f.height;
    t.landmark_bases = model.landmark_bases * s;
    t.mean_landmarks = model.mean;
    for (Point2& p : t.mean_landmarks) p = p * s;

    std::vector<Point2> hull = convex_hull(t.mean_landmarks);
    const Point2 c = centroid_of(t.mean_landmarks);
    for (Point2& p : hull) p = c + (p - c) * (1.0 + dilation);

    const int N = model.num_bases();
    const std::size_t L = model.mean.size();
    t.domain_mask.assign(static_cast<std::size_t>(t.width) * t.height, 0);
    t.dense_bases.assign(static_cast<std::size_t>(N) * t.width * t.height * 2, 0.0);
    std::vector<double> kernel(L);
    for (int y = 0; y < t.height; ++y)
        for (int x = 0; x < t.width; ++x) {
            const Point2 zk{x + 0.5, y + 0.5};
            if (!inside_convex(hull, zk)) continue;
            t.domain_mask[static_cast<std::size_t>(y) * t.width + x] = 1;
            const Point2 z0 = zk * (1.0 / s);
            for (std::size_t i = 0; i < L; ++i) {
                const double ex = z0.x - model.mean[i].x;
                const double ey = z0.y - model.mean[i].y;
                kernel[i] = tps_kernel(ex * ex + ey * ey);
            }
            for (int n = 0; n < N; ++n) {
                Point2 d;
                if (n < kSimilarityColumns) {
                    d = model.dense_basis(n, z0);
                } else {
                    const Eigen::MatrixXd& cf = model.tps[static_cast<std::size_t>(n - kSimilarityColumns)];
                    d = {cf(L, 0) + cf(L + 1, 0) * z0.x + cf(L + 2, 0) * z0.y,
                         cf(L, 1) + cf(L + 1, 1) * z0.x + cf(L + 2, 1) * z0.y};
                    for (std::size_t i = 0; i < L; ++i) {
                        d.x += cf(i, 0) * kernel[i];
                        d.y += cf(i, 1) * kernel[i];
                    }
                }
                const std::size_t idx = ((static_cast<std::size_t>(n) * t.height + y) * t.width + x) * 2;
                t.dense_bases[idx] = d.x * s;
                t.dense_bases[idx + 1] = d.y * s;
            }
        }
    return t;
}

WarpField eval_warp(const MeanTemplate& tmpl, const DeformationCoeffs& p) {
    const int N = tmpl.num_bases();
    if (p.size() != N)
        throw DimensionError("eval_warp: template has " + std::to_string(N) +
                             " bases, coefficients have " + std::to_string(p.size()));
    WarpField f;
    f.width = tmpl.width;
    f.height = tmpl.height;
    f.mask = tmpl.domain_mask;
    f.coords.resize(static_cast<std::size_t>(f.width) * f.height);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            double dx = 0.0;
            double dy = 0.0;
            if (tmpl.in_domain(x, y)) {
                for (int n = 0; n < N; ++n) {
                    const Point2 b = tmpl.basis(n, x, y);
                    dx += b.x * p.p(n);
                    dy += b.y * p.p(n);
                }
            }
            f.coords[static_cast<std::size_t>(y) * f.width + x] = {x + 0.5 + dx, y + 0.5 + dy};
        }
    return f;
}

Landmarks eval_landmarks(const MeanTemplate& tmpl, const DeformationCoeffs& p) {
    if (p.size() != tmpl.num_bases()) throw DimensionError("eval_landmarks: coefficient count mismatch");
    return unflatten(flatten(tmpl.mean_landmarks) + tmpl.landmark_bases * p.p);
}

Tensor4 warp_template_to_image(const Tensor4& channels, const WarpField& field, int out_width,
                               int out_height) {
    if (out_width < 1 || out_height < 1)
        throw ArgumentError("warp_template_to_image: output extent must be positive");
    if (channels.height() != field.height || channels.width() != field.width)
        throw ShapeError("warp_template_to_image: channels do not cover the template");
    const int C = channels.channels();
    Tensor4 out(1, C, out_height, out_width);
    std::vector<double> wsum(static_cast<std::size_t>(out_width) * out_height, 0.0);
    for (int y = 0; y < field.height; ++y)
        for (int x = 0; x < field.width; ++x) {
            if (field.mask[static_cast<std::size_t>(y) * field.width + x] == 0) continue;
            const Point2 u = field.at(x, y);
            const double fx = u.x - 0.5;
            const double fy = u.y - 0.5;
            const double x0f = std::floor(fx);
            const double y0f = std::floor(fy);
            const double ax = fx - x0f;
            const double ay = fy - y0f;
            const int x0 = static_cast<int>(x0f);
            const int y0 = static_cast<int>(y0f);
            const double w[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
            const int tx[4] = {x0, x0 + 1, x0, x0 + 1};
            const int ty[4] = {y0, y0, y0 + 1, y0 + 1};
            for (int k = 0; k < 4; ++k) {
                if (w[k] == 0.0 || tx[k] < 0 || ty[k] < 0 || tx[k] >= out_width || ty[k] >= out_height)
                    continue;
                const std::size_t o = static_cast<std::size_t>(ty[k]) * out_width + tx[k];
                wsum[o] += w[k];
                for (int c = 0; c < C; ++c) out(0, c, ty[k], tx[k]) += w[k] * channels(0, c, y, x);
            }
        }
    for (int y = 0; y < out_height; ++y)
        for (int x = 0; x < out_width; ++x) {
            const double s = wsum[static_cast<std::size_t>(y) * out_width + x];
            if (s > 0.0 && s != 1.0)
                for (int c = 0; c < C; ++c) out(0, c, y, x) /= s;
        }
    return out;
}

Tensor4 warp_image_to_template(const Tensor4& image, const WarpField& field) {
    const int C = image.channels();
    Tensor4 out(1, C, field.height, field.width);
    for (int c = 0; c < C; ++c) {
        Image plane = from_tensor(image, 0, c);
        for (int y = 0; y < field.height; ++y)
            for (int x = 0; x < field.width; ++x) {
                if (field.mask[static_cast<std::size_t>(y) * field.width + x] == 0) continue;
                out(0, c, y, x) = sample_bilinear_zero(plane, field.at(x, y));
            }
    }
    return out;
}

Image warp_image_to_template(const Image& image, const WarpField& field) {
    return from_tensor(warp_image_to_template(to_tensor(image), field));
}

AlignedFace similarity_init(Point2 eye_left, Point2 eye_right, const Image& image,
                            const TemplateFrame& frame) {
    if (eye_left == eye_right) throw DegenerateInputError("similarity_init: eye positions coincide");
    AlignedFace out;
    out.to_canonical = similarity_from_pairs(eye_left, eye_right, frame.eye_left, frame.eye_right);
    out.aligned = resample(image, out.to_canonical.inverse(), frame.width, frame.height);
    return out;
}

}  // namespace cbn::geometry
