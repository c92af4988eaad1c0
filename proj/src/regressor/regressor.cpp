#include "cbn/regressor.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace cbn::regressor {
namespace {

struct Gradients {
    Image gx, gy;
};

Gradients central_gradients(const Image& img) {
    const int w = img.width(), h = img.height();
    Gradients g{Image(w, h), Image(w, h)};
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            g.gx.at(x, y) = 0.5 * (img.clamped(x + 1, y) - img.clamped(x - 1, y));
            g.gy.at(x, y) = 0.5 * (img.clamped(x, y + 1) - img.clamped(x, y - 1));
        }
    }
    return g;
}

void normalize_block(double* block, int n, double clip) {
    auto norm = [&] {
        double s = 0.0;
        for (int i = 0; i < n; ++i) s += block[i] * block[i];
        return std::sqrt(s);
    };
    double len = norm();
    if (len < 1e-12) {
        std::fill(block, block + n, 0.0);
        return;
    }
    for (int i = 0; i < n; ++i) block[i] = std::min(block[i] / len, clip);
    len = norm();
    for (int i = 0; i < n; ++i) block[i] /= len;
}

double level_scale(int level) { return std::ldexp(1.0, level); }

}  // namespace

ShapeIndexedFeature extract_features(const Image& image, const geometry::Landmarks& landmarks,
                                     double iod_px, const DescriptorConfig& cfg) {
    if (cfg.cells < 1 || cfg.bins < 1 || cfg.samples_per_cell < 1)
        throw ArgumentError("descriptor cells, bins and samples must be positive");
    const int D = cfg.length();
    ShapeIndexedFeature f;
    f.descriptor_length = D;
    f.phi = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(landmarks.size()) * D);
    const Gradients g = central_gradients(image);

    const int n = cfg.cells * cfg.samples_per_cell;
    const double side = cfg.patch_iod * iod_px;
    const double step = side / n;
    const double sigma = 0.5 * side;
    const double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t l = 0; l < landmarks.size(); ++l) {
        const Point2 c{std::clamp(landmarks[l].x, 0.0, static_cast<double>(image.width())),
                       std::clamp(landmarks[l].y, 0.0, static_cast<double>(image.height()))};
        double* block = f.phi.data() + static_cast<std::ptrdiff_t>(l) * D;
        for (int sy = 0; sy < n; ++sy) {
            const double oy = (sy + 0.5) * step - 0.5 * side;
            for (int sx = 0; sx < n; ++sx) {
                const double ox = (sx + 0.5) * step - 0.5 * side;
                const Point2 q{c.x + ox, c.y + oy};
                const double dx = sample_bilinear_zero(g.gx, q);
                const double dy = sample_bilinear_zero(g.gy, q);
                const double mag = std::hypot(dx, dy);
                if (mag == 0.0) continue;
                const double weight = std::exp(-(ox * ox + oy * oy) / (2.0 * sigma * sigma)) * mag;
                double theta = std::atan2(dy, dx);
                if (theta < 0.0) theta += two_pi;
                const double pos = theta / two_pi * cfg.bins;
                const double base = std::floor(pos);
                const double frac = pos - base;
                const int b0 = static_cast<int>(base) % cfg.bins;
                const int b1 = (b0 + 1) % cfg.bins;
                const int cell = (sy / cfg.samples_per_cell) * cfg.cells + sx / cfg.samples_per_cell;
                block[cell * cfg.bins + b0] += weight * (1.0 - frac);
                if (frac > 0.0) block[cell * cfg.bins + b1] += weight * frac;
            }
        }
        normalize_block(block, D, cfg.clip);
    }
    return f;
}

Eigen::MatrixXd project_out(const Eigen::MatrixXd& J) {
    const Eigen::Index N = J.cols();
    Eigen::MatrixXd R = Eigen::MatrixXd::Zero(N, J.rows());
    std::vector<Eigen::Index> active;
    for (Eigen::Index c = 0; c < N; ++c)
        if (J.col(c).squaredNorm() > 0.0) active.push_back(c);
    if (active.empty()) return R;

    Eigen::MatrixXd Ja(J.rows(), static_cast<Eigen::Index>(active.size()));
    for (std::size_t i = 0; i < active.size(); ++i) Ja.col(static_cast<Eigen::Index>(i)) = J.col(active[i]);
    const Eigen::MatrixXd H = Ja.transpose() * Ja;
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(H);
    const auto& s = svd.singularValues();
    if (!(s(s.size() - 1) > 1e-12 * s(0)))
        throw NumericError("project-out Hessian is rank deficient (condition " +
                           std::to_string(s(0) / s(s.size() - 1)) + ")");
    const Eigen::MatrixXd Ra = H.ldlt().solve(Ja.transpose());
    for (std::size_t i = 0; i < active.size(); ++i) R.row(active[i]) = Ra.row(static_cast<Eigen::Index>(i));
    return R;
}

StageRegressor fit_stage(const std::vector<Eigen::VectorXd>& features,
                         const std::vector<Eigen::VectorXd>& deltas, double ridge) {
    if (features.empty() || features.size() != deltas.size())
        throw DataError("regressor needs matching, non-empty feature and residual lists");
    if (ridge < 0.0) throw ArgumentError("ridge must be non-negative");
    const Eigen::Index M = static_cast<Eigen::Index>(features.size());
    const Eigen::Index F = features.front().size();
    const Eigen::Index N = deltas.front().size();
    Eigen::MatrixXd Phi(M, F), P(M, N);
    for (Eigen::Index i = 0; i < M; ++i) {
        if (features[i].size() != F || deltas[i].size() != N)
            throw DimensionError("regressor samples differ in dimension");
        Phi.row(i) = features[i].transpose();
        P.row(i) = deltas[i].transpose();
    }
    const Eigen::RowVectorXd phi_mean = Phi.colwise().mean();
    const Eigen::RowVectorXd p_mean = P.colwise().mean();
    Phi.rowwise() -= phi_mean;
    P.rowwise() -= p_mean;

    StageRegressor st;
    Eigen::MatrixXd A = P.transpose() * P;
    const double trace = A.trace();
    if (trace > 0.0) {
        A.diagonal().array() += ridge * trace / static_cast<double>(N);
        // J^T = (A + lambda I)^-1 P^T Phi
        st.J = A.ldlt().solve(P.transpose() * Phi).transpose();
    } else {
        st.J = Eigen::MatrixXd::Zero(F, N);
    }
    // Feature expected at zero residual; equals the plain feature mean when the
    // residuals are balanced.
    st.phi_bar = (phi_mean - p_mean * st.J.transpose()).transpose();
    st.R = project_out(st.J);
    return st;
}

StageRegressor train_stage(const std::vector<StageSample>& samples,
                           const geometry::ShapeModel& model, int level,
                           const RegressorConfig& cfg) {
    const int N = model.num_bases();
    if (static_cast<int>(samples.size()) < N + 1)
        throw DataError("regressor stage needs at least " + std::to_string(N + 1) +
                        " samples, got " + std::to_string(samples.size()));
    const double iod = model.frame.iod() * level_scale(level);
    std::vector<Eigen::VectorXd> features, deltas;
    features.reserve(samples.size());
    deltas.reserve(samples.size());
    for (const StageSample& s : samples) {
        if (!s.image) throw ArgumentError("regressor sample without an image");
        features.push_back(
            extract_features(*s.image, model.landmarks(s.current, level), iod, cfg.descriptor).phi);
        deltas.push_back(s.truth.p - s.current.p);
    }
    return fit_stage(features, deltas, cfg.ridge);
}

geometry::DeformationCoeffs predict_update(const StageRegressor& stage, const Image& image,
                                           const geometry::DeformationCoeffs& p,
                                           const geometry::ShapeModel& model, int level,
                                           const DescriptorConfig& cfg) {
    const double iod = model.frame.iod() * level_scale(level);
    const Eigen::VectorXd phi = extract_features(image, model.landmarks(p, level), iod, cfg).phi;
    if (phi.size() != stage.phi_bar.size())
        throw DimensionError("feature length does not match the stage regressor");
    return geometry::DeformationCoeffs(Eigen::VectorXd(p.p + stage.R * (phi - stage.phi_bar)));
}

std::vector<StageSample> perturbation_samples(const std::vector<const Image*>& images,
                                              const std::vector<geometry::DeformationCoeffs>& truths,
                                              const std::vector<geometry::DeformationCoeffs>& currents,
                                              const RegressorConfig& cfg, std::mt19937_64& rng) {
    if (images.size() != truths.size() || images.size() != currents.size())
        throw DimensionError("perturbation_samples: list lengths differ");
    if (images.empty()) throw DataError("perturbation_samples: no images");
    const Eigen::Index N = truths.front().p.size();
    Eigen::VectorXd sigma = Eigen::VectorXd::Zero(N);
    for (std::size_t i = 0; i < truths.size(); ++i)
        sigma += (truths[i].p - currents[i].p).array().square().matrix();
    sigma = (sigma / static_cast<double>(truths.size())).cwiseSqrt();

    // Perturbations come in mirrored pairs around the truth so the residuals
    // of each image average to zero.
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<StageSample> out;
    for (std::size_t i = 0; i < images.size(); ++i) {
        auto push = [&](const Eigen::VectorXd& offset) {
            out.push_back({images[i], truths[i], geometry::DeformationCoeffs(Eigen::VectorXd(truths[i].p + offset))});
            out.push_back({images[i], truths[i], geometry::DeformationCoeffs(Eigen::VectorXd(truths[i].p - offset))});
        };
        for (int r = 0; r < cfg.perturbations / 2; ++r) {
            Eigen::VectorXd e(N);
            for (Eigen::Index j = 0; j < N; ++j) e(j) = sigma(j) * normal(rng);
            push(e);
        }
        if (cfg.include_current) push(currents[i].p - truths[i].p);
    }
    return out;
}

double mean_landmark_error(const geometry::ShapeModel& model,
                           const std::vector<geometry::DeformationCoeffs>& estimates,
                           const std::vector<geometry::DeformationCoeffs>& truths, int level) {
    if (estimates.size() != truths.size() || estimates.empty())
        throw DimensionError("mean_landmark_error: list lengths differ or are empty");
    double total = 0.0;
    for (std::size_t i = 0; i < estimates.size(); ++i) {
        const geometry::Landmarks a = model.landmarks(estimates[i], level);
        const geometry::Landmarks b = model.landmarks(truths[i], level);
        double s = 0.0;
        for (std::size_t l = 0; l < a.size(); ++l) s += distance(a[l], b[l]);
        total += s / static_cast<double>(a.size());
    }
    return total / static_cast<double>(estimates.size());
}

}  // namespace cbn::regressor
