// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/geometry.hpp"

#include "rfsplat/error.hpp"

#include <Eigen/Dense>
#include <unsupported/Eigen/AutoDiff>

#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>

namespace rfsplat::geometry {

Eigen::Matrix<double, 3, 4> CameraPose::projection() const {
    Eigen::Matrix<double, 3, 4> rt;
    rt.leftCols<3>() = rotation;
    rt.col(3) = translation;
    return intrinsics * rt;
}

void CameraPose::validate(double tol) const {
    const Mat3& k = intrinsics;
    if (!k.allFinite() || !rotation.allFinite() || !translation.allFinite())
        throw Error(ErrorCode::DegenerateCamera, "non-finite camera parameters");
    if (std::abs(k(2, 2) - 1.0) > tol || k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0)
        throw Error(ErrorCode::DegenerateCamera, "intrinsics must be upper triangular with K22 = 1");
    if (!(k(0, 0) > 0.0) || !(k(1, 1) > 0.0))
        throw Error(ErrorCode::DegenerateCamera, "intrinsics must have a positive diagonal");
    if ((rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() > tol ||
        std::abs(rotation.determinant() - 1.0) > tol)
        throw Error(ErrorCode::InvalidArgument, "rotation is not in SO(3)");
}

CameraPose CameraPose::look_at(const Mat3& intrinsics, const Vec3& eye, const Vec3& target, const Vec3& up) {
    // Camera frame: x right, y down, z forward.
    Vec3 z = (target - eye).normalized();
    Vec3 x = (-up).cross(z).normalized();
    Vec3 y = z.cross(x);
    CameraPose pose;
    pose.intrinsics = intrinsics;
    pose.rotation.row(0) = x.transpose();
    pose.rotation.row(1) = y.transpose();
    pose.rotation.row(2) = z.transpose();
    pose.translation = -pose.rotation * eye;
    return pose;
}

PixelGrid PixelGrid::over_image(int rows, int cols, double width, double height) {
    RFSPLAT_CHECK(rows > 0 && cols > 0, ErrorCode::InvalidArgument, "grid must be non-empty");
    PixelGrid grid;
    grid.rows = rows;
    grid.cols = cols;
    grid.pixels.reserve(static_cast<std::size_t>(rows) * cols);
    for (int i = 0; i < rows; ++i)
        for (int j = 0; j < cols; ++j)
            grid.pixels.emplace_back((j + 0.5) * width / cols, (i + 0.5) * height / rows, 1.0);
    return grid;
}

void Trajectory::validate() const {
    RFSPLAT_CHECK(!poses.empty(), ErrorCode::InvalidTrajectory, "empty trajectory");
    for (const auto& pose : poses)
        pose.validate();
    if (shared_intrinsics) {
        for (const auto& pose : poses)
            if ((pose.intrinsics - poses.front().intrinsics).cwiseAbs().maxCoeff() > 1e-6)
                throw Error(ErrorCode::InvalidTrajectory, "shared intrinsics differ between views");
    }
}

std::vector<Vec3> Trajectory::centers() const {
    std::vector<Vec3> out;
    out.reserve(poses.size());
    for (const auto& pose : poses)
        out.push_back(pose.center());
    return out;
}

Mat3 skew(const Vec3& v) {
    Mat3 s;
    s << 0.0, -v.z(), v.y(), v.z(), 0.0, -v.x(), -v.y(), v.x(), 0.0;
    return s;
}

Mat3 rotation_from_axis_angle(const Vec3& omega) {
    double angle = omega.norm();
    if (angle < 1e-300)
        return Mat3::Identity();
    return Eigen::AngleAxisd(angle, omega / angle).toRotationMatrix();
}

double geodesic_angle(const Mat3& a, const Mat3& b) {
    Eigen::Quaterniond q(Mat3(a.transpose() * b));
    return 2.0 * std::atan2(q.vec().norm(), std::abs(q.w()));
}

RayBundle camera_to_rays(const CameraPose& pose, const PixelGrid& grid) {
    const Mat3& k = pose.intrinsics;
    double det = k(0, 0) * k(1, 1) * k(2, 2);
    if (!k.allFinite() || !(std::abs(det) > 1e-300) || k(1, 0) != 0.0 || k(2, 0) != 0.0 || k(2, 1) != 0.0)
        throw Error(ErrorCode::DegenerateCamera, "singular or non-triangular intrinsics");

    Mat3 back_project = pose.rotation.transpose() * k.triangularView<Eigen::Upper>().solve(Mat3::Identity());
    Vec3 center = pose.center();

    RayBundle bundle;
    bundle.rows = grid.rows;
    bundle.cols = grid.cols;
    bundle.pixels = grid.pixels;
    bundle.rays.reserve(grid.pixels.size());
    for (const Vec3& w : grid.pixels) {
        Vec3 d = back_project * w;
        bundle.rays.push_back({d, center.cross(d)});
    }
    return bundle;
}

Vec3 estimate_center(const RayBundle& bundle) {
    RFSPLAT_CHECK(bundle.size() >= 2, ErrorCode::AmbiguousCenter, "need at least two rays");
    Mat3 a = Mat3::Zero();
    Vec3 b = Vec3::Zero();
    for (const auto& ray : bundle.rays) {
        double norm2 = ray.direction.squaredNorm();
        if (!(norm2 > 0.0) || !std::isfinite(norm2))
            throw Error(ErrorCode::InvalidRays, "ray with zero or non-finite direction");
        Vec3 unit = ray.direction / std::sqrt(norm2);
        Vec3 foot = ray.direction.cross(ray.moment) / norm2;
        Mat3 projector = Mat3::Identity() - unit * unit.transpose();
        a += projector;
        b += projector * foot;
    }
    Eigen::SelfAdjointEigenSolver<Mat3> eig(a);
    Vec3 ev = eig.eigenvalues();
    if (!(ev(0) > 1e-10 * ev(2)))
        throw Error(ErrorCode::AmbiguousCenter, "ray directions are (nearly) parallel");
    return a.ldlt().solve(b);
}

void rq_decompose(const Mat3& a, Mat3& upper, Mat3& orthogonal) {
    Mat3 flip;
    flip << 0, 0, 1, 0, 1, 0, 1, 0, 0;
    Mat3 flipped_t = (flip * a).transpose();
    Eigen::HouseholderQR<Mat3> qr(flipped_t);
    Mat3 q = qr.householderQ();
    Mat3 r = qr.matrixQR().triangularView<Eigen::Upper>();
    upper = flip * r.transpose() * flip;
    orthogonal = flip * q.transpose();
    for (int i = 0; i < 3; ++i) {
        if (upper(i, i) < 0.0) {
            upper.col(i) *= -1.0;
            orthogonal.row(i) *= -1.0;
        }
    }
}

CameraPose recover_projection(const RayBundle& bundle, const Vec3& center) {
    const std::size_t n = bundle.size();
    RFSPLAT_CHECK(n >= 4 && bundle.pixels.size() == n, ErrorCode::DegenerateRayField,
                  "need at least four rays with pixel coordinates");

    // Normalize pixel coordinates to zero mean and unit spread for conditioning.
    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const Vec3& w : bundle.pixels)
        mean += w.head<2>() / w.z();
    mean /= static_cast<double>(n);
    double spread = 0.0;
    for (const Vec3& w : bundle.pixels)
        spread += (w.head<2>() / w.z() - mean).norm();
    spread /= static_cast<double>(n);
    double scale = spread > 0.0 ? 1.0 / spread : 1.0;
    Mat3 normalize;
    normalize << scale, 0, -scale * mean.x(), 0, scale, -scale * mean.y(), 0, 0, 1;

    // Each ray gives d x (M w) = 0, linear in the 9 entries of M (row-major).
    Eigen::MatrixXd system(3 * n, 9);
    for (std::size_t j = 0; j < n; ++j) {
        Vec3 w = normalize * bundle.pixels[j];
        Vec3 d = bundle.rays[j].direction;
        double dn = d.norm();
        if (!(dn > 0.0) || !std::isfinite(dn))
            throw Error(ErrorCode::InvalidRays, "ray with zero or non-finite direction");
        d /= dn;
        Eigen::Matrix<double, 3, 9> lift = Eigen::Matrix<double, 3, 9>::Zero();
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                lift(r, 3 * r + c) = w(c);
        system.block<3, 9>(3 * static_cast<Eigen::Index>(j), 0) = skew(d) * lift;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(system, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    if (!(sv(7) > 1e-10 * sv(0)))
        throw Error(ErrorCode::DegenerateRayField, "direction constraints are rank deficient");
    Eigen::Matrix<double, 9, 1> v = svd.matrixV().col(8);
    Mat3 m_normalized;
    m_normalized << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
    Mat3 m = m_normalized * normalize;
    if (m.determinant() < 0.0)
        m = -m;

    // M ~ R^T K^-1, hence M^-1 ~ K R.
    Mat3 k, rot;
    rq_decompose(m.inverse(), k, rot);
    k /= k(2, 2);
    k(1, 0) = k(2, 0) = k(2, 1) = 0.0;

    CameraPose pose;
    pose.intrinsics = k;
    pose.rotation = rot;
    pose.translation = -rot * center;
    return pose;
}

CameraPose rays_to_camera(const RayBundle& bundle) {
    return recover_projection(bundle, estimate_center(bundle));
}

namespace {

// Shared intrinsics are expressed relative to a base matrix so that all
// parameters have comparable magnitude: focal lengths multiplicatively, the
// remaining entries in units of the base focal length.
struct IntrinsicsBase {
    double fx, skew, cx, fy, cy;
};

template <typename S>
S view_mismatch(const RayBundle& bundle, const S& fx, const S& sk, const S& cx, const S& fy, const S& cy,
                const Eigen::Matrix<S, 3, 3>& rot, const Eigen::Matrix<S, 3, 1>& center) {
    using std::sqrt;
    S total = S(0.0);
    for (std::size_t j = 0; j < bundle.size(); ++j) {
        const Vec3& w = bundle.pixels[j];
        // K^-1 w by back substitution.
        S z = S(w.z());
        S y = (S(w.y()) - cy * z) / fy;
        S x = (S(w.x()) - sk * y - cx * z) / fx;
        Eigen::Matrix<S, 3, 1> cam(x, y, z);
        Eigen::Matrix<S, 3, 1> d = rot.transpose() * cam;
        S dn = sqrt(d.squaredNorm());
        Eigen::Matrix<S, 3, 1> du = d / dn;
        Eigen::Matrix<S, 3, 1> m = center.cross(du);

        const Vec3& dt = bundle.rays[j].direction;
        double tn = dt.norm();
        Vec3 dtu = dt / tn;
        Vec3 mt = bundle.rays[j].moment / tn;
        S cosine = du.dot(dtu.cast<S>());
        Eigen::Matrix<S, 3, 1> dm = m - mt.cast<S>();
        total += (S(1.0) - cosine) + dm.squaredNorm();
    }
    return total;
}

using Deriv = Eigen::Matrix<double, 11, 1>;
using Dual = Eigen::AutoDiffScalar<Deriv>;

struct RefineState {
    Eigen::Matrix<double, 5, 1> intrinsics = Eigen::Matrix<double, 5, 1>::Zero();
    std::vector<Mat3> rotations;
    std::vector<Vec3> centers;
};

struct Evaluation {
    double value = 0.0;
    Eigen::VectorXd gradient;
};

Evaluation evaluate(std::span<const RayBundle> bundles, const IntrinsicsBase& base, const RefineState& state,
                    bool with_gradient) {
    const std::size_t views = bundles.size();
    std::size_t total_rays = 0;
    for (const auto& b : bundles)
        total_rays += b.size();
    const double norm = 1.0 / static_cast<double>(total_rays);

    Evaluation out;
    out.gradient = Eigen::VectorXd::Zero(5 + 6 * static_cast<Eigen::Index>(views));
    const auto& a = state.intrinsics;
    for (std::size_t v = 0; v < views; ++v) {
        if (!with_gradient) {
            double fx = base.fx * std::exp(a(0));
            double sk = base.skew + base.fx * a(1);
            double cx = base.cx + base.fx * a(2);
            double fy = base.fy * std::exp(a(3));
            double cy = base.cy + base.fy * a(4);
            out.value += norm * view_mismatch<double>(bundles[v], fx, sk, cx, fy, cy, state.rotations[v],
                                                      state.centers[v]);
            continue;
        }
        Dual p[11];
        for (int i = 0; i < 5; ++i)
            p[i] = Dual(a(i), 11, i);
        for (int i = 5; i < 11; ++i)
            p[i] = Dual(0.0, 11, i);
        using std::exp;
        Dual fx = Dual(base.fx) * exp(p[0]);
        Dual sk = Dual(base.skew) + Dual(base.fx) * p[1];
        Dual cx = Dual(base.cx) + Dual(base.fx) * p[2];
        Dual fy = Dual(base.fy) * exp(p[3]);
        Dual cy = Dual(base.cy) + Dual(base.fy) * p[4];
        // First-order rotation update around the current estimate; only the
        // gradient at omega = 0 is needed.
        Eigen::Matrix<Dual, 3, 3> omega_hat;
        omega_hat << Dual(0.0), -p[7], p[6], p[7], Dual(0.0), -p[5], -p[6], p[5], Dual(0.0);
        Eigen::Matrix<Dual, 3, 3> rot =
            (Eigen::Matrix<Dual, 3, 3>::Identity() + omega_hat) * state.rotations[v].cast<Dual>();
        Eigen::Matrix<Dual, 3, 1> center = state.centers[v].cast<Dual>();
        center(0) += p[8];
        center(1) += p[9];
        center(2) += p[10];
        Dual loss = view_mismatch<Dual>(bundles[v], fx, sk, cx, fy, cy, rot, center);
        out.value += norm * loss.value();
        Deriv g = norm * loss.derivatives();
        out.gradient.head<5>() += g.head<5>();
        out.gradient.segment<6>(5 + 6 * static_cast<Eigen::Index>(v)) = g.tail<6>();
    }
    return out;
}

IntrinsicsBase to_base(const Mat3& k) { return {k(0, 0), k(0, 1), k(0, 2), k(1, 1), k(1, 2)}; }

IntrinsicsBase mean_intrinsics(const Trajectory& trajectory) {
    Mat3 sum = Mat3::Zero();
    for (const auto& pose : trajectory.poses)
        sum += pose.intrinsics;
    return to_base(sum / static_cast<double>(trajectory.size()));
}

Trajectory to_trajectory(const IntrinsicsBase& base, const RefineState& state) {
    const auto& a = state.intrinsics;
    Mat3 k = Mat3::Identity();
    k(0, 0) = base.fx * std::exp(a(0));
    k(0, 1) = base.skew + base.fx * a(1);
    k(0, 2) = base.cx + base.fx * a(2);
    k(1, 1) = base.fy * std::exp(a(3));
    k(1, 2) = base.cy + base.fy * a(4);
    Trajectory out;
    out.shared_intrinsics = true;
    for (std::size_t v = 0; v < state.rotations.size(); ++v) {
        CameraPose pose;
        pose.intrinsics = k;
        pose.rotation = state.rotations[v];
        pose.translation = -state.rotations[v] * state.centers[v];
        out.poses.push_back(pose);
    }
    return out;
}

}  // namespace

double ray_mismatch(std::span<const RayBundle> bundles, const Trajectory& trajectory) {
    RFSPLAT_CHECK(bundles.size() == trajectory.size(), ErrorCode::ShapeMismatch,
                  "bundle count differs from trajectory length");
    double total = 0.0;
    std::size_t rays = 0;
    for (std::size_t v = 0; v < bundles.size(); ++v) {
        const Mat3& k = trajectory.poses[v].intrinsics;
        total += view_mismatch<double>(bundles[v], k(0, 0), k(0, 1), k(0, 2), k(1, 1), k(1, 2),
                                       trajectory.poses[v].rotation, trajectory.poses[v].center());
        rays += bundles[v].size();
    }
    return total / static_cast<double>(rays);
}

RefineResult refine_trajectory(std::span<const RayBundle> bundles, const Trajectory& initial,
                               const RefineOptions& options) {
    RFSPLAT_CHECK(!bundles.empty() && bundles.size() == initial.size(), ErrorCode::ShapeMismatch,
                  "bundle count differs from trajectory length");
    RefineState state;
    for (const auto& pose : initial.poses) {
        state.rotations.push_back(pose.rotation);
        state.centers.push_back(pose.center());
    }
    // The shared intrinsics start at the mean or at whichever view's
    // intrinsics fit all bundles best.
    IntrinsicsBase base = mean_intrinsics(initial);
    double base_value = evaluate(bundles, base, state, false).value;
    for (const auto& pose : initial.poses) {
        const IntrinsicsBase candidate = to_base(pose.intrinsics);
        const double value = evaluate(bundles, candidate, state, false).value;
        if (value < base_value) {
            base = candidate;
            base_value = value;
        }
    }

    const Eigen::Index dim = 5 + 6 * static_cast<Eigen::Index>(bundles.size());
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(dim);
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(dim);
    double lr = options.step;
    int t = 0;

    RefineResult result;
    Evaluation current = evaluate(bundles, base, state, true);
    if (!std::isfinite(current.value))
        throw Error(ErrorCode::RefinementDiverged, "non-finite objective", 0);
    result.objective.push_back(current.value);

    for (int it = 0; it < options.iterations; ++it) {
        if (current.value <= options.tolerance || lr < options.step * 1e-9)
            break;
        ++t;
        const Eigen::VectorXd& g = current.gradient;
        Eigen::VectorXd n1 = options.beta1 * m1 + (1.0 - options.beta1) * g;
        Eigen::VectorXd n2 = options.beta2 * m2 + (1.0 - options.beta2) * g.cwiseProduct(g);
        Eigen::VectorXd hat1 = n1 / (1.0 - std::pow(options.beta1, t));
        Eigen::VectorXd hat2 = n2 / (1.0 - std::pow(options.beta2, t));
        Eigen::VectorXd delta =
            -lr * hat1.cwiseQuotient((hat2.cwiseSqrt().array() + options.epsilon).matrix());

        RefineState candidate = state;
        candidate.intrinsics += delta.head<5>();
        for (std::size_t v = 0; v < bundles.size(); ++v) {
            Eigen::Index off = 5 + 6 * static_cast<Eigen::Index>(v);
            candidate.rotations[v] = rotation_from_axis_angle(delta.segment<3>(off)) * state.rotations[v];
            candidate.centers[v] += delta.segment<3>(off + 3);
        }
        Evaluation next = evaluate(bundles, base, candidate, true);
        if (!std::isfinite(next.value) || !next.gradient.allFinite())
            throw Error(ErrorCode::RefinementDiverged, "non-finite objective", it);
        if (next.value <= current.value) {
            state = std::move(candidate);
            current = std::move(next);
            m1 = std::move(n1);
            m2 = std::move(n2);
            ++result.accepted;
            result.objective.push_back(current.value);
            lr = std::min(options.step, 2.0 * lr);
        } else {
            // Restart the moments so the next trial follows the current gradient.
            ++result.rejected;
            lr *= 0.5;
            m1.setZero();
            m2.setZero();
            t = 0;
        }
    }
    result.trajectory = to_trajectory(base, state);
    return result;
}

Trajectory rays_to_trajectory(std::span<const RayBundle> bundles, const RefineOptions& options) {
    Trajectory initial;
    initial.shared_intrinsics = false;
    for (const auto& bundle : bundles)
        initial.poses.push_back(rays_to_camera(bundle));
    return refine_trajectory(bundles, initial, options).trajectory;
}

double path_diameter(std::span<const Vec3> points) {
    double best = 0.0;
    for (std::size_t i = 0; i < points.size(); ++i)
        for (std::size_t j = i + 1; j < points.size(); ++j)
            best = std::max(best, (points[i] - points[j]).norm());
    return best;
}

PoseError pose_error(const Trajectory& pred, const Trajectory& truth) {
    RFSPLAT_CHECK(pred.size() == truth.size() && !truth.poses.empty(), ErrorCode::ShapeMismatch,
                  "trajectories differ in length");
    const auto truth_centers = truth.centers();
    const auto pred_centers = pred.centers();
    const double diameter = path_diameter(truth_centers);
    if (!(diameter > 1e-12))
        throw Error(ErrorCode::UnnormalizableTrajectory, "truth centers coincide");

    const Eigen::Index n = static_cast<Eigen::Index>(truth.size());
    Eigen::Matrix3Xd src(3, n), dst(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        src.col(i) = pred_centers[static_cast<std::size_t>(i)];
        dst.col(i) = truth_centers[static_cast<std::size_t>(i)];
    }
    Eigen::Matrix4d sim = Eigen::umeyama(src, dst, true);
    Mat3 scaled_rot = sim.topLeftCorner<3, 3>();
    double scale = std::cbrt(scaled_rot.determinant());
    Mat3 align = scale != 0.0 ? Mat3(scaled_rot / scale) : Mat3::Identity();
    Vec3 shift = sim.topRightCorner<3, 1>();

    PoseError err;
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto k = static_cast<std::size_t>(i);
        Vec3 aligned = scaled_rot * pred_centers[k] + shift;
        err.translation += (aligned - truth_centers[k]).norm();
        Mat3 aligned_rot = pred.poses[k].rotation * align.transpose();
        err.rotation += geodesic_angle(aligned_rot, truth.poses[k].rotation);
    }
    err.translation /= static_cast<double>(n) * diameter;
    err.rotation /= static_cast<double>(n);
    return err;
}

void write_trajectory(std::ostream& out, const Trajectory& trajectory, int ray_rows, int ray_cols) {
    out << "POSES " << trajectory.size() << ' ' << ray_rows << ' ' << ray_cols << '\n';
    out << std::setprecision(std::numeric_limits<double>::max_digits10);
    for (const auto& pose : trajectory.poses) {
        const Mat3& k = pose.intrinsics;
        out << k(0, 0) << ' ' << k(0, 1) << ' ' << k(0, 2) << ' ' << k(1, 1) << ' ' << k(1, 2);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                out << ' ' << pose.rotation(r, c);
        for (int i = 0; i < 3; ++i)
            out << ' ' << pose.translation(i);
        out << '\n';
    }
}

TrajectoryFile read_trajectory(std::istream& in) {
    std::string tag;
    std::size_t count = 0;
    TrajectoryFile file;
    if (!(in >> tag >> count >> file.ray_rows >> file.ray_cols) || tag != "POSES")
        throw Error(ErrorCode::Io, "missing POSES header");
    for (std::size_t v = 0; v < count; ++v) {
        double vals[17];
        for (double& x : vals)
            if (!(in >> x))
                throw Error(ErrorCode::Io, "truncated trajectory line " + std::to_string(v));
        CameraPose pose;
        pose.intrinsics << vals[0], vals[1], vals[2], 0.0, vals[3], vals[4], 0.0, 0.0, 1.0;
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                pose.rotation(r, c) = vals[5 + 3 * r + c];
        pose.translation << vals[14], vals[15], vals[16];
        file.trajectory.poses.push_back(pose);
    }
    file.trajectory.shared_intrinsics = true;
    for (const auto& pose : file.trajectory.poses)
        if ((pose.intrinsics - file.trajectory.poses.front().intrinsics).cwiseAbs().maxCoeff() > 1e-6)
            file.trajectory.shared_intrinsics = false;
    return file;
}

}  // namespace rfsplat::geometry
