// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "rfsplat/error.hpp"
#include "rfsplat/rng.hpp"

#include <Eigen/Core>

#include <cmath>
#include <vector>

namespace rfsplat {

/// Dense views x height x width x channels tensor, channel-fastest.
struct ViewTensor {
    int views = 0;
    int height = 0;
    int width = 0;
    int channels = 0;
    std::vector<double> values;

    static ViewTensor zeros(int views, int height, int width, int channels) {
        ViewTensor t{views, height, width, channels, {}};
        t.values.assign(static_cast<std::size_t>(views) * height * width * channels, 0.0);
        return t;
    }
    static ViewTensor normal(int views, int height, int width, int channels, Rng& rng) {
        ViewTensor t = zeros(views, height, width, channels);
        rng.fill_normal(t.values);
        return t;
    }

    std::size_t size() const { return values.size(); }
    std::size_t index(int v, int y, int x, int c) const {
        return ((static_cast<std::size_t>(v) * height + y) * width + x) * channels + c;
    }
    double& at(int v, int y, int x, int c) { return values[index(v, y, x, c)]; }
    double at(int v, int y, int x, int c) const { return values[index(v, y, x, c)]; }

    bool same_shape(const ViewTensor& o) const {
        return views == o.views && height == o.height && width == o.width && channels == o.channels;
    }
    Eigen::Map<Eigen::VectorXd> flat() { return {values.data(), static_cast<Eigen::Index>(values.size())}; }
    Eigen::Map<const Eigen::VectorXd> flat() const {
        return {values.data(), static_cast<Eigen::Index>(values.size())};
    }
    bool all_finite() const {
        for (double v : values)
            if (!std::isfinite(v))
                return false;
        return true;
    }
    double max_abs() const {
        double m = 0.0;
        for (double v : values)
            m = std::max(m, std::abs(v));
        return m;
    }
    bool operator==(const ViewTensor& o) const { return same_shape(o) && values == o.values; }
};

/// a * x + b * y, elementwise.
inline ViewTensor axpby(double a, const ViewTensor& x, double b, const ViewTensor& y) {
    RFSPLAT_CHECK(x.same_shape(y), ErrorCode::ShapeMismatch, "tensor shapes differ");
    ViewTensor out = x;
    for (std::size_t i = 0; i < out.values.size(); ++i)
        out.values[i] = a * x.values[i] + b * y.values[i];
    return out;
}

}  // namespace rfsplat
