#pragma once

// Mean face template, parametric dense correspondence field and landmark
// model, plus the warps between template domain and image domain.
//
// Deformation coefficients p drive both the dense field
//     W(z) = z + B(z) p
// and the landmarks
//     x(l) = mean(l) + S(l) p.
// Coefficients are expressed in level-0 units; the bases of level k are the
// level-0 bases scaled by 2^k, so one p is valid at every cascade resolution.

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "cbn/image.hpp"
#include "cbn/tensor.hpp"

namespace cbn::geometry {

using Landmarks = std::vector<Point2>;

/// Which landmark indices form each eye. Defaults to the 68-point iBUG
/// layout (36-41 image-left eye, 42-47 image-right eye).
struct LandmarkLayout {
    int count = 68;
    std::vector<int> left_eye{36, 37, 38, 39, 40, 41};
    std::vector<int> right_eye{42, 43, 44, 45, 46, 47};

    static LandmarkLayout ibug68() { return {}; }
    Point2 left_eye_center(const Landmarks& pts) const;
    Point2 right_eye_center(const Landmarks& pts) const;
};

/// Canonical aligned frame at level 0 (the network input resolution).
struct TemplateFrame {
    int width = 12;
    int height = 12;
    Point2 eye_left{3.5, 4.5};
    Point2 eye_right{8.5, 4.5};

    double iod() const { return distance(eye_left, eye_right); }
    TemplateFrame at_level(int level) const;
};

struct DeformationCoeffs {
    Eigen::VectorXd p;

    DeformationCoeffs() = default;
    explicit DeformationCoeffs(int n) : p(Eigen::VectorXd::Zero(n)) {}
    explicit DeformationCoeffs(Eigen::VectorXd v) : p(std::move(v)) {}
    int size() const { return static_cast<int>(p.size()); }
};

// Index of the similarity columns inside every basis.
enum SimilarityColumn : int { kScaleColumn = 0, kRotationColumn = 1, kShiftX = 2, kShiftY = 3 };
inline constexpr int kSimilarityColumns = 4;

/// Landmark bases and their smooth dense extension, shared by all levels.
struct ShapeModel {
    TemplateFrame frame;
    LandmarkLayout layout;
    Landmarks mean;                  // level-0 mean landmarks
    Point2 centroid;                 // centroid of `mean`
    Eigen::MatrixXd landmark_bases;  // 2L x N, rows interleave (x, y) per landmark
    Eigen::VectorXd variances;       // N - 4 non-rigid variances, descending
    // Thin-plate spline per non-rigid column: (L + 3) x 2 coefficients
    // (L kernel weights, then constant / x / y affine terms).
    std::vector<Eigen::MatrixXd> tps;

    int num_bases() const { return static_cast<int>(landmark_bases.cols()); }
    int num_landmarks() const { return static_cast<int>(mean.size()); }

    // Displacement of basis column n at level-0 coordinate z.
    Point2 dense_basis(int n, Point2 z) const;
    Landmarks landmarks(const DeformationCoeffs& p, int level = 0) const;
    // Least-squares coefficients reproducing `pts` (given at `level`).
    DeformationCoeffs fit(const Landmarks& pts, int level = 0) const;
};

/// The mean-face domain of one cascade level, with rasterized dense bases and
/// (once built) the high-frequency prior.
struct MeanTemplate {
    int level = 0;
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> domain_mask;  // row-major, 1 inside the face domain
    std::vector<double> dense_bases;        // [n][y][x][xy]
    Eigen::MatrixXd landmark_bases;         // 2L x N at this level
    Landmarks mean_landmarks;               // at this level
    Tensor4 prior;                          // (1, C, H, W); empty until built

    int num_bases() const { return static_cast<int>(landmark_bases.cols()); }
    bool in_domain(int x, int y) const {
        return domain_mask[static_cast<std::size_t>(y) * width + x] != 0;
    }
    Point2 basis(int n, int x, int y) const {
        const std::size_t i = ((static_cast<std::size_t>(n) * height + y) * width + x) * 2;
        return {dense_bases[i], dense_bases[i + 1]};
    }
    std::size_t domain_size() const;
};

struct WarpField {
    int width = 0;
    int height = 0;
    std::vector<Point2> coords;  // W(z) per template pixel, row-major
    std::vector<std::uint8_t> mask;

    Point2 at(int x, int y) const { return coords[static_cast<std::size_t>(y) * width + x]; }
};

/// Generalized Procrustes mean, analytic similarity columns and N - 4
/// principal non-rigid columns, then a thin-plate spline per non-rigid column.
/// Components whose variance is numerically zero are stored as zero columns.
ShapeModel build_bases(const std::vector<Landmarks>& train_shapes, int num_bases,
                       const TemplateFrame& frame,
                       const LandmarkLayout& layout = LandmarkLayout::ibug68());

// Convex hull of the mean landmarks dilated by `dilation` about its centroid.
MeanTemplate make_template(const ShapeModel& model, int level, double dilation = 0.10);

WarpField eval_warp(const MeanTemplate& tmpl, const DeformationCoeffs& p);
Landmarks eval_landmarks(const MeanTemplate& tmpl, const DeformationCoeffs& p);

/// Splats each domain pixel's value at W(z) with bilinear weights and
/// normalizes by the accumulated weight. Untouched pixels are 0.
/// `channels` is (1, C, H, W) over the template.
Tensor4 warp_template_to_image(const Tensor4& channels, const WarpField& field, int out_width,
                               int out_height);

/// Value at z is the bilinear sample of the image at W(z) (0 outside the
/// raster); 0 outside the domain. `image` is (1, C, h, w).
Tensor4 warp_image_to_template(const Tensor4& image, const WarpField& field);
Image warp_image_to_template(const Image& image, const WarpField& field);

struct AlignedFace {
    Image aligned;
    Similarity to_canonical;  // image coordinates -> canonical level-0 coordinates
};

/// Resamples `image` so the given eye centers land on the frame's canonical
/// eye positions.
AlignedFace similarity_init(Point2 eye_left, Point2 eye_right, const Image& image,
                            const TemplateFrame& frame);

// Similarity taking `from` onto `to` in the least-squares sense.
Similarity procrustes(const Landmarks& from, const Landmarks& to);

std::vector<Point2> convex_hull(std::vector<Point2> pts);
bool inside_convex(const std::vector<Point2>& hull, Point2 p);

Eigen::VectorXd flatten(const Landmarks& pts);
Landmarks unflatten(const Eigen::VectorXd& v);

}  // namespace cbn::geometry
