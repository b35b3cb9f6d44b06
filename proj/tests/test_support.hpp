// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "rfsplat/error.hpp"
#include "rfsplat/geometry.hpp"
#include "rfsplat/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>

namespace rfsplat::testing {

using geometry::CameraPose;
using geometry::Mat3;
using geometry::Vec3;

inline Mat3 random_rotation(Rng& rng) {
    Vec3 axis(rng.normal(), rng.normal(), rng.normal());
    axis.normalize();
    return geometry::rotation_from_axis_angle(axis * rng.uniform(0.0, 3.1));
}

inline Mat3 random_intrinsics(Rng& rng) {
    Mat3 k = Mat3::Identity();
    k(0, 0) = rng.uniform(20.0, 80.0);
    k(1, 1) = k(0, 0) * rng.uniform(0.9, 1.1);
    k(0, 1) = rng.uniform(-0.5, 0.5);
    k(0, 2) = rng.uniform(10.0, 40.0);
    k(1, 2) = rng.uniform(8.0, 30.0);
    return k;
}

inline CameraPose random_pose(Rng& rng, const Mat3& k) {
    CameraPose pose;
    pose.intrinsics = k;
    pose.rotation = random_rotation(rng);
    const Vec3 center(rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0), rng.uniform(-3.0, 3.0));
    pose.translation = -pose.rotation * center;
    return pose;
}

inline double relative_intrinsics_error(const Mat3& a, const Mat3& b) { return (a - b).norm() / b.norm(); }

/// Expects `fn` to throw rfsplat::Error with the given code.
inline void expect_error(ErrorCode code, const std::function<void()>& fn) {
    try {
        fn();
        ADD_FAILURE() << "expected error " << to_string(code);
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), code) << e.what();
    }
}

}  // namespace rfsplat::testing
