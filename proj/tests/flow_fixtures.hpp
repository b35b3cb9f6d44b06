// Copyright 2026 The rfsplat Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "rfsplat/flow.hpp"

#include <cmath>
#include <map>
#include <vector>

namespace rfsplat::testing {

/// Scalar field u(x, t) = theta . phi(x, t) applied per coordinate, with ten
/// smooth features.
class FeatureField final : public flow::ParametricField {
public:
    explicit FeatureField(flow::Vector theta) : m_theta(std::move(theta)) {}

    static Eigen::Matrix<double, 10, 1> features(double x, double t) {
        Eigen::Matrix<double, 10, 1> f;
        f << 1.0, x, t, x * t, x * x, t * t, x * x * t, x * t * t, std::sin(x), std::cos(t);
        return f;
    }

    flow::Vector evaluate(const flow::Vector& x, double t) const override {
        flow::Vector out(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i)
            out(i) = features(x(i), t).dot(m_theta);
        return out;
    }
    Eigen::Index num_parameters() const override { return 10; }
    flow::Vector parameters() const override { return m_theta; }
    void set_parameters(const flow::Vector& p) override { m_theta = p; }
    Eigen::MatrixXd parameter_jacobian(const flow::Vector& x, double t) const override {
        Eigen::MatrixXd j(x.size(), 10);
        for (Eigen::Index i = 0; i < x.size(); ++i)
            j.row(i) = features(x(i), t).transpose();
        return j;
    }

private:
    flow::Vector m_theta;
};

/// Discrete micro instance: weighted data points, uniform noise points and a
/// few timesteps. Points whose interpolants coincide make the marginal field
/// differ from the per-pair target.
struct DiscreteInstance {
    std::vector<double> data{0.0, 2.0};
    std::vector<double> data_weight{0.4, 0.6};
    std::vector<double> noise{0.0, 2.0};
    std::vector<double> times{0.25, 0.5, 0.75};

    /// Exact gradient of the expected CFM loss over all pairings and times.
    flow::Vector cfm_gradient(const FeatureField& model) const {
        flow::Vector g = flow::Vector::Zero(10);
        const double pn = 1.0 / static_cast<double>(noise.size());
        const double pt = 1.0 / static_cast<double>(times.size());
        for (double t : times)
            for (std::size_t i = 0; i < data.size(); ++i)
                for (double y0 : noise) {
                    flow::Vector y1v(1), y0v(1);
                    y1v << data[i];
                    y0v << y0;
                    std::vector<flow::TrainingPair> batch{{y1v, y0v}};
                    std::vector<double> ts{t};
                    g += pt * data_weight[i] * pn * flow::cfm_loss_gradient(model, batch, ts).gradient;
                }
        return g;
    }

    /// Gradient of the FM loss against the brute-force marginal field: pairs
    /// are grouped by their interpolant, and each group's target is the
    /// probability-weighted mean of its conditional targets.
    flow::Vector fm_gradient(const FeatureField& model) const {
        flow::Vector g = flow::Vector::Zero(10);
        const double pn = 1.0 / static_cast<double>(noise.size());
        const double pt = 1.0 / static_cast<double>(times.size());
        for (double t : times) {
            std::map<double, std::pair<double, double>> groups;  // y_t -> (mass, mass * target)
            for (std::size_t i = 0; i < data.size(); ++i)
                for (double y0 : noise) {
                    const double yt = t * data[i] + (1.0 - t) * y0;
                    auto& [mass, moment] = groups[yt];
                    const double p = data_weight[i] * pn;
                    mass += p;
                    moment += p * (data[i] - y0);
                }
            for (const auto& [yt, acc] : groups) {
                const double target = acc.second / acc.first;
                flow::Vector x(1);
                x << yt;
                const double u = model.evaluate(x, t)(0);
                g += pt * acc.first * 2.0 * (u - target) * FeatureField::features(yt, t);
            }
        }
        return g;
    }

    /// Number of interpolants shared by more than one pair.
    int collisions() const {
        int n = 0;
        for (double t : times) {
            std::map<double, int> count;
            for (double y1 : data)
                for (double y0 : noise)
                    ++count[t * y1 + (1.0 - t) * y0];
            for (const auto& [k, c] : count)
                n += c > 1;
        }
        return n;
    }
};

}  // namespace rfsplat::testing
