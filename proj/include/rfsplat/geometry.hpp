// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <iosfwd>
#include <span>
#include <vector>

namespace rfsplat::geometry {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

/// Pinhole camera with projection P = K [R | T]. `rotation` maps world to
/// camera coordinates.
struct CameraPose {
    Mat3 intrinsics = Mat3::Identity();
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    Vec3 center() const { return -rotation.transpose() * translation; }
    Eigen::Matrix<double, 3, 4> projection() const;

    /// Throws DegenerateCamera for malformed intrinsics and InvalidArgument
    /// for a rotation that is not in SO(3) within `tol`.
    void validate(double tol = 1e-9) const;

    static CameraPose look_at(const Mat3& intrinsics, const Vec3& eye, const Vec3& target,
                              const Vec3& up = Vec3::UnitY());
};

struct PluckerRay {
    Vec3 direction;
    Vec3 moment;
};

/// Homogeneous pixel coordinates [u, v, 1] for a rows x cols grid, row-major.
struct PixelGrid {
    int rows = 0;
    int cols = 0;
    std::vector<Vec3> pixels;

    /// Cell centers of a rows x cols grid laid over an image of the given size.
    static PixelGrid over_image(int rows, int cols, double width, double height);
};

/// Rays of one view on a rows x cols grid, row-major.
struct RayBundle {
    int rows = 0;
    int cols = 0;
    std::vector<PluckerRay> rays;
    std::vector<Vec3> pixels;

    std::size_t size() const { return rays.size(); }
};

struct Trajectory {
    std::vector<CameraPose> poses;
    bool shared_intrinsics = true;

    std::size_t size() const { return poses.size(); }
    /// Validates every pose and, when shared_intrinsics is set, that all
    /// intrinsics agree within 1e-6.
    void validate() const;
    std::vector<Vec3> centers() const;
};

Mat3 skew(const Vec3& v);
Mat3 rotation_from_axis_angle(const Vec3& omega);
/// Angle of R_a^T R_b in radians.
double geodesic_angle(const Mat3& a, const Mat3& b);

/// d = R^T K^-1 w, m = (-R^T T) x d for every grid cell.
RayBundle camera_to_rays(const CameraPose& pose, const PixelGrid& grid);

/// Least-squares point closest to all rays.
Vec3 estimate_center(const RayBundle& bundle);

/// Direct linear recovery of K and R from ray directions given the center.
CameraPose recover_projection(const RayBundle& bundle, const Vec3& center);

/// estimate_center followed by recover_projection.
CameraPose rays_to_camera(const RayBundle& bundle);

/// Decomposes A = K R with K upper triangular (positive diagonal) and R
/// orthogonal.
void rq_decompose(const Mat3& a, Mat3& upper, Mat3& orthogonal);

struct RefineOptions {
    int iterations = 500;
    double step = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    /// Stop once the objective falls below this value.
    double tolerance = 1e-20;
};

struct RefineResult {
    Trajectory trajectory;
    /// Objective after each accepted iteration; front() is the initial value.
    std::vector<double> objective;
    int accepted = 0;
    int rejected = 0;
};

/// Mean over all rays of (1 - cos(d_pred, d_target)) + |m_pred - m_target|^2,
/// where moments are taken for unit directions so the value does not depend
/// on per-ray scaling of the targets.
double ray_mismatch(std::span<const RayBundle> bundles, const Trajectory& trajectory);

/// Jointly refines one shared intrinsics matrix and per-view rotation and
/// camera center with Adam, rejecting steps that increase the objective.
RefineResult refine_trajectory(std::span<const RayBundle> bundles, const Trajectory& initial,
                               const RefineOptions& options = {});

/// Per-view recovery followed by shared-intrinsics refinement.
Trajectory rays_to_trajectory(std::span<const RayBundle> bundles, const RefineOptions& options = {});

struct PoseError {
    double translation = 0.0;
    double rotation = 0.0;
};

/// Similarity-aligned center error normalized by the truth path diameter, and
/// mean geodesic rotation error of the aligned cameras.
PoseError pose_error(const Trajectory& pred, const Trajectory& truth);

/// Largest pairwise distance between points.
double path_diameter(std::span<const Vec3> points);

struct TrajectoryFile {
    Trajectory trajectory;
    int ray_rows = 10;
    int ray_cols = 16;
};

void write_trajectory(std::ostream& out, const Trajectory& trajectory, int ray_rows, int ray_cols);
TrajectoryFile read_trajectory(std::istream& in);

}  // namespace rfsplat::geometry
