// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/sampling.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <string>

namespace rfsplat::sampling {

using geometry::Vec3;
using joint::FieldPrediction;
using joint::JointState;

FieldShape ModelField::shape() const {
    const auto& c = m_model.config();
    return {c.views, c.image_height, c.image_width, c.image_channels, c.ray_height, c.ray_width, c.null_condition()};
}

AsyncSchedule AsyncSchedule::make(std::span<const double> path_knots, double delta, bool image_first) {
    flow::validate_schedule(path_knots);
    RFSPLAT_CHECK(std::isfinite(delta) && delta >= 0.0, ErrorCode::InvalidSchedule, "delta must be >= 0");
    AsyncSchedule s;
    s.delta = delta;
    s.image_first = image_first;
    for (auto it = path_knots.begin(); it != path_knots.end(); ++it) {
        const double lead = 1.0 - *it;
        const double lag = std::max(lead - delta, 0.0);
        s.image.push_back(image_first ? lag : lead);
        s.ray.push_back(image_first ? lead : lag);
    }
    return s;
}

void GuidanceConfig::validate() const {
    RFSPLAT_CHECK(std::isfinite(text_scale) && std::isfinite(pose_scale), ErrorCode::InvalidArgument,
                  "guidance scales must be finite");
    RFSPLAT_CHECK(condition_noise_t >= 0.0 && condition_noise_t <= 1.0, ErrorCode::InvalidArgument,
                  "condition_noise_t must lie in [0, 1]");
}

namespace {

void combine(ViewTensor& acc, double a, const ViewTensor& x, double b, const ViewTensor& y) {
    acc = axpby(a, x, b, y);
}

// (1 + s) u(c) - s u(null) for both modalities; one evaluation when s == 0.
FieldPrediction text_guided(const JointField& model, const JointState& state, double s) {
    FieldPrediction cond = model.evaluate(state);
    if (s == 0.0)
        return cond;
    JointState null_state = state;
    null_state.condition = model.shape().null_condition;
    FieldPrediction uncond = model.evaluate(null_state);
    combine(cond.image, 1.0 + s, cond.image, -s, uncond.image);
    combine(cond.rays, 1.0 + s, cond.rays, -s, uncond.rays);
    return cond;
}

}  // namespace

FieldPrediction guided_field(const JointField& model, const JointState& state, const GuidanceConfig& g,
                             const GuidanceContext& ctx) {
    g.validate();
    switch (g.mode) {
    case GuidanceMode::Vanilla:
        return text_guided(model, state, g.text_scale);
    case GuidanceMode::AsyncCfg: {
        FieldPrediction out = text_guided(model, state, g.text_scale);
        if (g.pose_scale == 0.0)
            return out;
        RFSPLAT_CHECK(ctx.frozen_rays != nullptr, ErrorCode::InvalidArgument, "pose guidance needs frozen rays");
        JointState free_state = state;
        free_state.rays = *ctx.frozen_rays;
        free_state.t_ray = 1.0;
        FieldPrediction uncond = text_guided(model, free_state, g.text_scale);
        combine(out.image, 1.0 + g.pose_scale, out.image, -g.pose_scale, uncond.image);
        return out;
    }
    case GuidanceMode::CameraCond: {
        RFSPLAT_CHECK(ctx.condition_rays != nullptr, ErrorCode::InvalidArgument, "camera guidance needs rays");
        FieldPrediction first = model.evaluate(state);
        ViewTensor image = first.image;
        if (g.text_scale != 0.0) {
            JointState null_state = state;
            null_state.condition = model.shape().null_condition;
            combine(image, 1.0 + g.text_scale, first.image, -g.text_scale, model.evaluate(null_state).image);
        }
        JointState cam_state = state;
        cam_state.rays = *ctx.condition_rays;
        cam_state.t_ray = g.condition_noise_t;
        ViewTensor cam = model.evaluate(cam_state).image;
        if (g.pose_scale != 0.0) {
            RFSPLAT_CHECK(ctx.frozen_rays != nullptr, ErrorCode::InvalidArgument, "pose guidance needs frozen rays");
            JointState free_state = state;
            free_state.rays = *ctx.frozen_rays;
            free_state.t_ray = 1.0;
            combine(cam, 1.0 + g.pose_scale, cam, -g.pose_scale, model.evaluate(free_state).image);
        }
        combine(first.image, 0.5, image, 0.5, cam);
        return first;
    }
    }
    throw Error(ErrorCode::InvalidArgument, "unknown guidance mode");
}

ViewTensor rays_to_tensor(std::span<const geometry::RayBundle> bundles) {
    RFSPLAT_CHECK(!bundles.empty(), ErrorCode::InvalidArgument, "no ray bundles");
    const int rows = bundles.front().rows;
    const int cols = bundles.front().cols;
    ViewTensor t = ViewTensor::zeros(static_cast<int>(bundles.size()), rows, cols, 6);
    for (int v = 0; v < t.views; ++v) {
        const auto& b = bundles[static_cast<std::size_t>(v)];
        RFSPLAT_CHECK(b.rows == rows && b.cols == cols, ErrorCode::ShapeMismatch, "ray grids differ between views");
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) {
                const auto& r = b.rays[static_cast<std::size_t>(i * cols + j)];
                for (int c = 0; c < 3; ++c) {
                    t.at(v, i, j, c) = r.direction[c];
                    t.at(v, i, j, 3 + c) = r.moment[c];
                }
            }
    }
    return t;
}

std::vector<geometry::RayBundle> tensor_to_rays(const ViewTensor& rays, const geometry::PixelGrid& grid) {
    RFSPLAT_CHECK(rays.channels == 6 && rays.height == grid.rows && rays.width == grid.cols,
                  ErrorCode::ShapeMismatch, "ray tensor does not match the pixel grid");
    std::vector<geometry::RayBundle> out(static_cast<std::size_t>(rays.views));
    for (int v = 0; v < rays.views; ++v) {
        auto& b = out[static_cast<std::size_t>(v)];
        b.rows = grid.rows;
        b.cols = grid.cols;
        b.pixels = grid.pixels;
        b.rays.resize(grid.pixels.size());
        for (int i = 0; i < grid.rows; ++i)
            for (int j = 0; j < grid.cols; ++j) {
                auto& r = b.rays[static_cast<std::size_t>(i * grid.cols + j)];
                r.direction = Vec3(rays.at(v, i, j, 0), rays.at(v, i, j, 1), rays.at(v, i, j, 2));
                r.moment = Vec3(rays.at(v, i, j, 3), rays.at(v, i, j, 4), rays.at(v, i, j, 5));
            }
    }
    return out;
}

namespace {

struct RunSpec {
    std::vector<double> t_image;
    std::vector<double> t_ray;
    bool integrate_image = true;
    bool integrate_rays = true;
    GuidanceContext context;
};

std::optional<std::vector<Vec3>> recover_centers(const ViewTensor& rays, const geometry::PixelGrid& grid) {
    try {
        std::vector<Vec3> centers;
        for (const auto& bundle : tensor_to_rays(rays, grid)) {
            Vec3 c = geometry::estimate_center(bundle);
            if (!c.allFinite())
                return std::nullopt;
            centers.push_back(c);
        }
        return centers;
    } catch (const Error&) {
        return std::nullopt;
    }
}

void check_state(const ViewTensor& x, int step, const char* what) {
    for (double v : x.values)
        if (!std::isfinite(v) || std::abs(v) > kDivergenceLimit)
            throw Error(ErrorCode::SamplingDiverged, std::string(what) + " state left the finite range", step);
}

void check_condition(const JointField& model, int condition) {
    RFSPLAT_CHECK(condition >= 0 && condition <= model.shape().null_condition, ErrorCode::InvalidArgument,
                  "condition id out of range");
}

SampleResult run(const JointField& model, int condition, ViewTensor image, ViewTensor rays, const RunSpec& spec,
                 const SampleOptions& opt) {
    const int n = static_cast<int>(spec.t_image.size()) - 1;
    const bool recover = opt.recover_every > 0 && spec.integrate_rays && opt.ray_grid.rows > 0;
    const double nan = std::numeric_limits<double>::quiet_NaN();
    SampleResult result;
    std::optional<std::vector<Vec3>> previous;

    auto record_recovery = [&](int step, const ViewTensor& clean_rays) {
        auto centers = recover_centers(clean_rays, opt.ray_grid);
        if (!centers)
            return nan;
        double delta = nan;
        if (previous) {
            delta = 0.0;
            for (std::size_t v = 0; v < centers->size(); ++v)
                delta += ((*centers)[v] - (*previous)[v]).norm();
            delta /= static_cast<double>(centers->size());
        }
        previous = centers;
        result.log.recoveries.push_back({step, *centers});
        return delta;
    };

    for (int k = 0; k < n; ++k) {
        JointState state{image, rays, spec.t_image[static_cast<std::size_t>(k)],
                         spec.t_ray[static_cast<std::size_t>(k)], condition};
        FieldPrediction f = guided_field(model, state, opt.guidance, spec.context);
        if (!f.image.all_finite() || !f.rays.all_finite())
            throw Error(ErrorCode::SamplingDiverged, "non-finite field", k);

        StepRecord rec{k, state.t_image, state.t_ray, f.image.flat().norm(), f.rays.flat().norm(), nan};
        if (recover && k % opt.recover_every == 0)
            rec.center_delta = record_recovery(k, axpby(1.0, rays, -state.t_ray, f.rays));

        const double di = spec.t_image[static_cast<std::size_t>(k + 1)] - state.t_image;
        const double dr = spec.t_ray[static_cast<std::size_t>(k + 1)] - state.t_ray;
        if (spec.integrate_image && di != 0.0)
            image = axpby(1.0, image, di, f.image);
        if (spec.integrate_rays && dr != 0.0)
            rays = axpby(1.0, rays, dr, f.rays);
        check_state(image, k, "image");
        check_state(rays, k, "ray");
        result.log.steps.push_back(rec);
    }
    StepRecord last{n, spec.t_image.back(), spec.t_ray.back(), 0.0, 0.0, nan};
    if (recover)
        last.center_delta = record_recovery(n, rays);
    result.log.steps.push_back(last);
    result.image = std::move(image);
    result.rays = std::move(rays);
    return result;
}

SampleResult sample_joint(const JointField& model, int condition, const SampleOptions& opt, double delta,
                          const GuidanceConfig& guidance, std::uint64_t seed) {
    check_condition(model, condition);
    const auto shape = model.shape();
    const Rng root(seed);
    Rng image_rng = root.split(1);
    Rng ray_rng = root.split(2);
    Rng frozen_rng = root.split(3);
    ViewTensor image =
        ViewTensor::normal(shape.views, shape.image_height, shape.image_width, shape.image_channels, image_rng);
    ViewTensor rays = ViewTensor::normal(shape.views, shape.ray_height, shape.ray_width, 6, ray_rng);
    ViewTensor frozen = ViewTensor::normal(shape.views, shape.ray_height, shape.ray_width, 6, frozen_rng);

    const auto knots = flow::timestep_schedule(opt.steps, opt.schedule, opt.warp_exponent);
    const auto sched = AsyncSchedule::make(knots, delta, opt.image_first);
    RunSpec spec{sched.image, sched.ray, true, true, {&frozen, nullptr}};
    SampleOptions local = opt;
    local.guidance = guidance;
    return run(model, condition, std::move(image), std::move(rays), spec, local);
}

}  // namespace

SampleResult sample_sync(const JointField& model, int condition, const SampleOptions& options, std::uint64_t seed) {
    GuidanceConfig g;
    g.mode = GuidanceMode::Vanilla;
    g.text_scale = options.guidance.text_scale;
    SampleOptions local = options;
    local.image_first = false;
    return sample_joint(model, condition, local, 0.0, g, seed);
}

SampleResult sample_async(const JointField& model, int condition, const SampleOptions& options, std::uint64_t seed) {
    RFSPLAT_CHECK(options.guidance.mode != GuidanceMode::CameraCond, ErrorCode::InvalidArgument,
                  "camera guidance needs a conditioning trajectory");
    return sample_joint(model, condition, options, options.delta, options.guidance, seed);
}

SampleResult sample_camera_conditioned(const JointField& model, int condition, const geometry::Trajectory& trajectory,
                                       const SampleOptions& options, std::uint64_t seed) {
    check_condition(model, condition);
    trajectory.validate();
    const auto shape = model.shape();
    RFSPLAT_CHECK(static_cast<int>(trajectory.size()) == shape.views, ErrorCode::InvalidTrajectory,
                  "trajectory length does not match the view count");
    RFSPLAT_CHECK(options.ray_grid.rows == shape.ray_height && options.ray_grid.cols == shape.ray_width,
                  ErrorCode::ShapeMismatch, "ray grid does not match the model");
    std::vector<geometry::RayBundle> bundles;
    for (const auto& pose : trajectory.poses)
        bundles.push_back(geometry::camera_to_rays(pose, options.ray_grid));
    const ViewTensor clean = rays_to_tensor(bundles);

    const Rng root(seed);
    Rng image_rng = root.split(1);
    Rng ray_rng = root.split(2);
    Rng frozen_rng = root.split(3);
    ViewTensor image =
        ViewTensor::normal(shape.views, shape.image_height, shape.image_width, shape.image_channels, image_rng);
    const ViewTensor noise = ViewTensor::normal(shape.views, shape.ray_height, shape.ray_width, 6, ray_rng);
    const ViewTensor frozen = ViewTensor::normal(shape.views, shape.ray_height, shape.ray_width, 6, frozen_rng);

    GuidanceConfig g = options.guidance;
    g.mode = GuidanceMode::CameraCond;
    g.validate();
    const double tc = g.condition_noise_t;
    const ViewTensor cond_rays = axpby(tc, noise, 1.0 - tc, clean);

    const auto knots = flow::timestep_schedule(options.steps, options.schedule, options.warp_exponent);
    RunSpec spec;
    for (double s : knots) {
        spec.t_image.push_back(1.0 - s);
        spec.t_ray.push_back(tc);
    }
    spec.integrate_rays = false;
    spec.context = {&frozen, &cond_rays};
    SampleOptions local = options;
    local.guidance = g;
    return run(model, condition, std::move(image), cond_rays, spec, local);
}

SampleResult sample_poses(const JointField& model, int condition, const ViewTensor& images,
                          const SampleOptions& options, std::uint64_t seed) {
    check_condition(model, condition);
    const auto shape = model.shape();
    RFSPLAT_CHECK(images.views == shape.views && images.height == shape.image_height &&
                      images.width == shape.image_width && images.channels == shape.image_channels,
                  ErrorCode::ShapeMismatch, "images do not match the model");
    const Rng root(seed);
    Rng ray_rng = root.split(2);
    ViewTensor rays = ViewTensor::normal(shape.views, shape.ray_height, shape.ray_width, 6, ray_rng);

    const auto knots = flow::timestep_schedule(options.steps, options.schedule, options.warp_exponent);
    RunSpec spec;
    for (double s : knots) {
        spec.t_image.push_back(0.0);
        spec.t_ray.push_back(1.0 - s);
    }
    spec.integrate_image = false;
    SampleOptions local = options;
    local.guidance.mode = GuidanceMode::Vanilla;
    local.guidance.pose_scale = 0.0;
    return run(model, condition, images, std::move(rays), spec, local);
}

}  // namespace rfsplat::sampling
