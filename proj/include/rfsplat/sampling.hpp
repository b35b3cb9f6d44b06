// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "rfsplat/flow.hpp"
#include "rfsplat/geometry.hpp"
#include "rfsplat/jointmodel.hpp"
#include "rfsplat/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

// Joint samplers over image latents and rays. Timesteps are noise levels
// (1 = noise, 0 = clean), matching the joint model.
namespace rfsplat::sampling {

struct FieldShape {
    int views = 0;
    int image_height = 0;
    int image_width = 0;
    int image_channels = 0;
    int ray_height = 0;
    int ray_width = 0;
    int null_condition = 0;
};

/// Joint vector-field predictor u(I, R, c, t_I, t_R).
class JointField {
public:
    virtual ~JointField() = default;
    virtual FieldShape shape() const = 0;
    virtual joint::FieldPrediction evaluate(const joint::JointState& state) const = 0;
};

class ModelField final : public JointField {
public:
    explicit ModelField(const joint::JointModel& model) : m_model(model) {}
    FieldShape shape() const override;
    joint::FieldPrediction evaluate(const joint::JointState& state) const override { return m_model.forward(state); }

private:
    const joint::JointModel& m_model;
};

/// Per-step noise levels. image[k] runs from 1 down to 0 over the path knots;
/// ray[k] = max(image[k] - delta, 0). With `image_first` the roles swap.
struct AsyncSchedule {
    std::vector<double> image;
    std::vector<double> ray;
    double delta = 0.0;
    bool image_first = false;

    static AsyncSchedule make(std::span<const double> path_knots, double delta, bool image_first = false);
    int steps() const { return static_cast<int>(image.size()) - 1; }
};

enum class GuidanceMode { Vanilla, AsyncCfg, CameraCond };

struct GuidanceConfig {
    double text_scale = 0.0;
    double pose_scale = 0.0;
    GuidanceMode mode = GuidanceMode::Vanilla;
    double condition_noise_t = 0.05;

    void validate() const;
};

/// Extra inputs some guidance modes read.
struct GuidanceContext {
    /// Noise draw standing in for rays at t_ray = 1; fixed for a generation.
    const ViewTensor* frozen_rays = nullptr;
    /// Lightly noised conditioning rays at condition_noise_t (camera mode).
    const ViewTensor* condition_rays = nullptr;
};

/// Guided field for one state. Evaluations whose coefficient is zero are
/// skipped, so zero scales reproduce the plain conditional evaluation.
///
/// vanilla:    (1 + s_c) u(c) - s_c u(null), both modalities.
/// async_cfg:  image field (1 + s_R) g(R_t, t_R) - s_R g(R_frozen, 1), where g
///             is the text-guided field; ray field is g(R_t, t_R).
/// camera_cond: [(1 + s_c) u(R_t, c) - s_c u(R_t, null)
///               + (1 + s_R) u(R_0.05, c, 0.05) - s_R u(R_frozen, c, 1)] / 2
///             on the image field; the ray field is the conditional one.
joint::FieldPrediction guided_field(const JointField& model, const joint::JointState& state,
                                    const GuidanceConfig& guidance, const GuidanceContext& context = {});

struct StepRecord {
    int step = 0;
    double t_image = 0.0;
    double t_ray = 0.0;
    double field_norm_image = 0.0;
    double field_norm_ray = 0.0;
    /// Mean per-view center displacement since the previous recovery; NaN
    /// when no recovery happened at this step.
    double center_delta = 0.0;
};

struct CenterRecord {
    int step = 0;
    std::vector<geometry::Vec3> centers;
};

struct StepLog {
    std::vector<StepRecord> steps;
    std::vector<CenterRecord> recoveries;
};

struct SampleOptions {
    int steps = 64;
    flow::ScheduleKind schedule = flow::ScheduleKind::Uniform;
    double warp_exponent = 1.0;
    double delta = 0.2;
    GuidanceConfig guidance;
    bool image_first = false;
    /// Camera centers are recovered from the predicted clean rays every
    /// `recover_every` steps; 0 disables recovery.
    int recover_every = 4;
    /// Pixel coordinates of the ray grid, needed for recovery.
    geometry::PixelGrid ray_grid;
};

struct SampleResult {
    ViewTensor image;
    ViewTensor rays;
    StepLog log;
};

/// Both modalities share timesteps; text guidance only.
SampleResult sample_sync(const JointField& model, int condition, const SampleOptions& options, std::uint64_t seed);

/// Rays run ahead of images by `options.delta`.
SampleResult sample_async(const JointField& model, int condition, const SampleOptions& options, std::uint64_t seed);

/// Integrates only the image stream with rays held at the noised encoding of
/// `trajectory`.
SampleResult sample_camera_conditioned(const JointField& model, int condition, const geometry::Trajectory& trajectory,
                                       const SampleOptions& options, std::uint64_t seed);

/// Integrates only the ray stream with clean images held fixed at t = 0.
SampleResult sample_poses(const JointField& model, int condition, const ViewTensor& images,
                          const SampleOptions& options, std::uint64_t seed);

/// Any component beyond this magnitude counts as divergence.
inline constexpr double kDivergenceLimit = 1e6;

ViewTensor rays_to_tensor(std::span<const geometry::RayBundle> bundles);
std::vector<geometry::RayBundle> tensor_to_rays(const ViewTensor& rays, const geometry::PixelGrid& grid);

}  // namespace rfsplat::sampling
