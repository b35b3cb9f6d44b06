// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#include "rfsplat/splat.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

namespace rfsplat::splat {

namespace {

constexpr std::array<const char*, 4> kColorNames{"red", "green", "blue", "yellow"};
constexpr std::array<const char*, 3> kPlacementNames{"left", "center", "right"};
const std::array<Vec3, 4> kColors{Vec3(0.9, 0.15, 0.1), Vec3(0.15, 0.8, 0.2), Vec3(0.15, 0.3, 0.95),
                                  Vec3(0.95, 0.85, 0.1)};
const std::array<Vec3, 3> kLandmarkColors{Vec3(0.85, 0.85, 0.85), Vec3(0.1, 0.8, 0.8), Vec3(0.8, 0.2, 0.8)};
constexpr std::array<double, 3> kPlacementX{-0.55, 0.0, 0.55};
// Fixed landmark clusters give every view an absolute heading cue.
const std::array<Vec3, 3> kLandmarks{Vec3(-0.85, 0.25, -0.85), Vec3(0.9, -0.15, -0.7), Vec3(0.1, 0.05, 1.0)};
const std::array<Vec3, 3> kLandmarkRadii{Vec3(0.12, 0.3, 0.12), Vec3(0.25, 0.12, 0.15), Vec3(0.15, 0.15, 0.15)};

Vec4 random_quaternion(Rng& rng) {
    Vec4 q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
    return q / q.norm();
}

void add_cluster(SplatSet& s, Rng& rng, const Vec3& center, const Vec3& radii, const Vec3& color, int count) {
    for (int i = 0; i < count; ++i) {
        Vec3 p;
        do {
            p = Vec3(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
        } while (p.squaredNorm() > 1.0);
        Gaussian3D g;
        g.mean = center + p.cwiseProduct(radii);
        g.opacity = rng.uniform(0.7, 0.95);
        g.rotation = random_quaternion(rng);
        const double base = rng.uniform(0.06, 0.1);
        g.scale = Vec3(base * rng.uniform(0.7, 1.3), base * rng.uniform(0.7, 1.3), base * rng.uniform(0.7, 1.3));
        for (int c = 0; c < 3; ++c)
            g.color[c] = std::clamp(color[c] + rng.uniform(-0.05, 0.05), 0.0, 1.0);
        s.gaussians.push_back(g);
    }
}

}  // namespace

std::string descriptor(int condition) {
    RFSPLAT_CHECK(condition >= 0 && condition < kDescriptorCount, ErrorCode::InvalidArgument,
                  "descriptor id out of range");
    return std::string(kColorNames[static_cast<std::size_t>(condition / 3)]) + " sphere " +
           kPlacementNames[static_cast<std::size_t>(condition % 3)];
}

Mat3 scene_intrinsics(const SceneConfig& config) {
    Mat3 k;
    k << config.focal, 0.0, 0.5 * config.width, 0.0, config.focal, 0.5 * config.height, 0.0, 0.0, 1.0;
    return k;
}

Scene generate_scene(std::uint64_t seed, const SceneConfig& config) {
    RFSPLAT_CHECK(config.views >= 2 && config.target_views >= 0 && config.height > 0 && config.width > 0 &&
                      config.focal > 0.0,
                  ErrorCode::InvalidConfig, "invalid scene config");
    const Rng root(seed);
    Rng content = root.split(1);
    Rng camera = root.split(2);
    Scene scene;
    scene.condition = static_cast<int>(content.below(kDescriptorCount));

    const Vec3 main_center(kPlacementX[static_cast<std::size_t>(scene.condition % 3)] + content.uniform(-0.1, 0.1),
                           content.uniform(-0.1, 0.1), content.uniform(-0.1, 0.1));
    const Vec3 main_radii(content.uniform(0.25, 0.4), content.uniform(0.25, 0.4), content.uniform(0.25, 0.4));
    add_cluster(scene.splats, content, main_center, main_radii, kColors[static_cast<std::size_t>(scene.condition / 3)],
                24);
    for (std::size_t e = 0; e < kLandmarks.size(); ++e) {
        const Vec3 c = kLandmarks[e] + Vec3(content.uniform(-0.08, 0.08), content.uniform(-0.08, 0.08),
                                            content.uniform(-0.08, 0.08));
        const Vec3 r = kLandmarkRadii[e] * content.uniform(0.85, 1.15);
        add_cluster(scene.splats, content, c, r, kLandmarkColors[e], 12);
    }

    // Orbit at a fixed radius, or a dolly arc that also closes in.
    const bool dolly = camera.uniform() < 0.5;
    const double elevation = camera.uniform(10.0, 30.0) * std::numbers::pi / 180.0;
    const double rise = camera.uniform(-10.0, 10.0) * std::numbers::pi / 180.0;
    const double start = camera.uniform(0.0, 2.0 * std::numbers::pi);
    const double direction = camera.uniform() < 0.5 ? -1.0 : 1.0;
    const double span =
        direction * (dolly ? camera.uniform(60.0, 90.0) : camera.uniform(90.0, 150.0)) * std::numbers::pi / 180.0;
    const double r0 = dolly ? 3.0 : camera.uniform(2.3, 2.7);
    const double r1 = dolly ? 2.0 : r0;
    const Mat3 k = scene_intrinsics(config);
    auto pose_at = [&](double u) {
        const double az = start + u * span;
        const double r = r0 + u * (r1 - r0);
        const double el = elevation + u * rise;
        const Vec3 eye(r * std::cos(el) * std::sin(az), r * std::sin(el), r * std::cos(el) * std::cos(az));
        return CameraPose::look_at(k, eye, Vec3::Zero());
    };
    for (int v = 0; v < config.views; ++v)
        scene.trajectory.poses.push_back(pose_at(static_cast<double>(v) / (config.views - 1)));
    for (int t = 0; t < config.target_views; ++t)
        scene.targets.poses.push_back(pose_at((t + 0.5) / config.target_views));
    scene.trajectory.validate();

    RenderOptions opt;
    opt.min_alpha = 1.0 / 255.0;
    for (const auto& pose : scene.trajectory.poses)
        scene.views.push_back(render(scene.splats, pose, config.height, config.width, opt).image);
    for (const auto& pose : scene.targets.poses)
        scene.target_views.push_back(render(scene.splats, pose, config.height, config.width, opt).image);
    return scene;
}

}  // namespace rfsplat::splat
